"""BEV fusion, channel-to-height decoding, loss, and a plain optimizer.

The spatial embedding is added to the BEV feature map, pushed through a
small stack of 2D convolutions, and the final layer's ``nz * L`` channels
are unfolded into per-voxel class logits (channel ``c`` decodes as height
``c // L`` and class ``c % L``). Masked cross-entropy plus vanilla
gradient descent are enough to fit the toy scenes end to end.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tpv import Conv2dParams, _apply_stack, _as_stack


def fuse(f_bev: np.ndarray, e_s: np.ndarray) -> np.ndarray:
    """Add the spatial embedding to the BEV features (same (C, nx, ny))."""
    f_bev = np.asarray(f_bev)
    e_s = np.asarray(e_s)
    if f_bev.shape != e_s.shape:
        raise DataError(f"shape mismatch: {f_bev.shape} vs {e_s.shape}")
    return f_bev + e_s


def channel_to_height(head_out: np.ndarray, num_classes: int) -> np.ndarray:
    """Unfold (nz*L, nx, ny) channels into (nx, ny, nz, L) logits.

    Channel order is height-major, class-minor: channel ``c`` carries the
    logit for height ``c // L`` and class ``c % L``. Pure reshape.
    """
    head_out = np.asarray(head_out)
    c, nx, ny = head_out.shape
    if num_classes < 2:
        raise DataError(f"need at least 2 classes, got {num_classes}")
    if c % num_classes != 0:
        raise DataError(f"{c} channels not divisible by {num_classes} classes")
    nz = c // num_classes
    return head_out.reshape(nz, num_classes, nx, ny).transpose(2, 3, 0, 1)


def height_to_channel(logits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`channel_to_height`: (nx, ny, nz, L) -> (nz*L, nx, ny)."""
    logits = np.asarray(logits)
    if logits.ndim != 4:
        raise DataError(f"logits must be (nx, ny, nz, L), got {logits.shape}")
    nx, ny, nz, L = logits.shape
    return logits.transpose(2, 3, 0, 1).reshape(nz * L, nx, ny)


def predict(fused: np.ndarray, bev_convs, head_conv: Conv2dParams,
            num_classes: int) -> np.ndarray:
    """BEV conv stack + head conv + channel-to-height decode."""
    if head_conv.c_out % num_classes != 0:
        raise DataError(
            f"head C_out={head_conv.c_out} not divisible by L={num_classes}"
        )
    x = _apply_stack(np.asarray(fused), _as_stack(bev_convs))
    x = _apply_stack(x, head_conv)
    return channel_to_height(x, num_classes)


def cross_entropy(logits: np.ndarray, labels: np.ndarray,
                  visible: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean masked cross-entropy and its gradient w.r.t. the logits.

    Loss averages ``-log softmax(logits)[label]`` over mask-visible voxels;
    the gradient is ``(softmax - onehot) / n_visible`` there and exactly
    zero at invisible voxels.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    visible = np.asarray(visible, dtype=bool)
    if logits.ndim != 4:
        raise DataError(f"logits must be (nx, ny, nz, L), got {logits.shape}")
    if labels.shape != logits.shape[:3] or visible.shape != labels.shape:
        raise DataError(
            f"labels {labels.shape} / mask {visible.shape} do not match "
            f"logits {logits.shape}"
        )
    L = logits.shape[3]
    if labels.min() < 0 or labels.max() >= L:
        raise DataError(f"labels out of range [0, {L})")
    n_vis = int(visible.sum())
    if n_vis == 0:
        raise DataError("visibility mask selects no voxels")

    z = logits[visible]                      # (n_vis, L)
    y = labels[visible]
    z_shift = z - z.max(axis=1, keepdims=True)
    exp = np.exp(z_shift)
    denom = exp.sum(axis=1, keepdims=True)
    log_p = z_shift - np.log(denom)
    loss = float(-log_p[np.arange(n_vis), y].mean(dtype=np.float64))

    soft = exp / denom
    soft[np.arange(n_vis), y] -= 1.0
    grad = np.zeros_like(logits)
    grad[visible] = soft / n_vis
    return loss, grad


def sgd_step(params: dict[str, Conv2dParams], grads: dict, lr: float):
    """One gradient-descent step: new params = params - lr * grads.

    ``grads`` maps each site name to ``(grad_weights, grad_bias)``; sites
    without a gradient entry pass through unchanged.
    """
    out = {}
    for name, p in params.items():
        if name not in grads:
            out[name] = p
            continue
        gw, gb = grads[name]
        if np.shape(gw) != p.weights.shape or np.shape(gb) != p.bias.shape:
            raise DataError(f"gradient shape mismatch at site {name!r}")
        out[name] = Conv2dParams(
            weights=p.weights - lr * gw, bias=p.bias - lr * gb
        )
    return out
