"""Planar embedding extraction and tri-view interaction.

The single-channel occupancy grid ``(nx, ny, nz)`` is turned into three
planar embeddings by treating one spatial axis as the channel axis of a
2D convolution:

* top view     -- channels = Z, plane (X, Y)
* front view   -- channels = X, plane (Y, Z)
* side view    -- channels = Y, plane (X, Z)

The three embeddings then interact: multiplying any two of them along
their shared axis produces a map shaped like the third view, which is
added to it and mixed by one more convolution. A final product of the
interacted front/side views fuses everything into a BEV-shaped spatial
embedding. The shared axis consumed by each product (the vanished
dimension) can optionally be averaged over instead of summed.

Convolutions are plain cross-correlations, stride 1, zero same-padding,
with exact hand-written adjoints so the whole stack is trainable without
an autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

VIEW_AXES = ("Z", "X", "Y")  # channel axis per view: BEV, FV, SV


@dataclass(frozen=True)
class Conv2dParams:
    """Weights (C_out, C_in, k, k) and bias (C_out,) of one conv layer."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise DataError(f"weights must be (C_out, C_in, k, k), got {w.shape}")
        if w.shape[2] not in (1, 3):
            raise DataError(f"kernel size must be 1 or 3, got {w.shape[2]}")
        if b.shape != (w.shape[0],):
            raise DataError(f"bias shape {b.shape} != (C_out={w.shape[0]},)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("conv parameters must be finite")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]


def init_conv(c_in: int, c_out: int, k: int, rng: np.random.Generator,
              dtype=np.float32) -> Conv2dParams:
    """Uniform init in [-s, s] with s = (c_in * k^2)^-1/2; zero bias."""
    s = (c_in * k * k) ** -0.5
    w = rng.uniform(-s, s, size=(c_out, c_in, k, k)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return Conv2dParams(weights=w, bias=b)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Zero-padded patches of x (C, A, B) as an (A*B, C*k*k) matrix."""
    c, a, b = x.shape
    p = (k - 1) // 2
    xp = np.zeros((c, a + 2 * p, b + 2 * p), dtype=x.dtype)
    xp[:, p:p + a, p:p + b] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    # (C, A, B, k, k) -> (A, B, C, k, k) -> (A*B, C*k*k)
    return win.transpose(1, 2, 0, 3, 4).reshape(a * b, c * k * k)


def _correlate(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cross-correlation, stride 1, same zero padding, no bias."""
    c_out, c_in, k, _ = weights.shape
    _, a, b = x.shape
    cols = _im2col(x, k)
    out = cols @ weights.reshape(c_out, c_in * k * k).T
    return out.T.reshape(c_out, a, b)


def conv2d(x: np.ndarray, params: Conv2dParams) -> np.ndarray:
    """Apply one conv layer to a (C_in, A, B) plane."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != params.c_in:
        raise DataError(
            f"conv input {x.shape} incompatible with C_in={params.c_in}"
        )
    out = _correlate(x, params.weights)
    return out + params.bias[:, None, None]


def conv2d_backward(x: np.ndarray, params: Conv2dParams, upstream: np.ndarray):
    """Adjoints of :func:`conv2d`: (grad_input, grad_weights, grad_bias)."""
    x = np.asarray(x)
    up = np.asarray(upstream)
    c_out, c_in, k, _ = params.weights.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise DataError(f"input {x.shape} incompatible with C_in={c_in}")
    if up.shape != (c_out, x.shape[1], x.shape[2]):
        raise DataError(
            f"upstream {up.shape} != ({c_out}, {x.shape[1]}, {x.shape[2]})"
        )
    a, b = x.shape[1], x.shape[2]
    grad_bias = up.sum(axis=(1, 2))
    cols = _im2col(x, k)
    grad_w = (up.reshape(c_out, a * b) @ cols).reshape(c_out, c_in, k, k)
    # adjoint of same-padded correlation: correlate upstream with the
    # channel-transposed, spatially flipped kernel
    w_t = params.weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    grad_x = _correlate(up, np.ascontiguousarray(w_t))
    return grad_x, grad_w, grad_bias


def spatial_to_channel(occ: np.ndarray, axis: str) -> np.ndarray:
    """Move one spatial axis of an (nx, ny, nz) grid to the front.

    Pure index permutation; values untouched. ``Z`` yields (nz, nx, ny),
    ``X`` yields (nx, ny, nz), ``Y`` yields (ny, nx, nz).
    """
    occ = np.asarray(occ)
    if occ.ndim != 3:
        raise DataError(f"occupancy must be 3D, got {occ.shape}")
    if axis == "Z":
        return occ.transpose(2, 0, 1)
    if axis == "X":
        return occ
    if axis == "Y":
        return occ.transpose(1, 0, 2)
    raise DataError(f"axis must be one of {VIEW_AXES}, got {axis!r}")


def _as_stack(params) -> tuple[Conv2dParams, ...]:
    """A conv site is one Conv2dParams or a sequence applied in order."""
    if isinstance(params, Conv2dParams):
        return (params,)
    return tuple(params)


def _apply_stack(x: np.ndarray, stack) -> np.ndarray:
    for p in _as_stack(stack):
        x = conv2d(x, p)
    return x


def _stack_backward(x: np.ndarray, stack, upstream):
    """Backprop through a sequential conv stack; returns (dx, [(dw, db)])."""
    stack = _as_stack(stack)
    inputs = [x]
    for p in stack[:-1]:
        inputs.append(conv2d(inputs[-1], p))
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(stack)
    dx = upstream
    for i in range(len(stack) - 1, -1, -1):
        dx, dw, db = conv2d_backward(inputs[i], stack[i], dx)
        grads[i] = (dw, db)
    return dx, grads


def extract_tpv(occ: np.ndarray, params_bev, params_fv, params_sv):
    """Extract the three planar embeddings from the occupancy grid.

    Each view is one conv stack applied to the grid with the matching
    axis moved to channels; input channel counts must equal nz / nx / ny
    respectively and all stacks must share one output channel count.
    """
    occ = np.asarray(occ)
    nx, ny, nz = occ.shape
    stacks = [_as_stack(p) for p in (params_bev, params_fv, params_sv)]
    for stack, c_in, name in zip(stacks, (nz, nx, ny), ("bev", "fv", "sv")):
        if stack[0].c_in != c_in:
            raise DataError(
                f"{name} extraction expects C_in={c_in}, got {stack[0].c_in}"
            )
    c_outs = {stack[-1].c_out for stack in stacks}
    if len(c_outs) != 1:
        raise DataError(f"extraction stacks disagree on C_out: {sorted(c_outs)}")
    e_bev = _apply_stack(spatial_to_channel(occ, "Z"), stacks[0])
    e_fv = _apply_stack(spatial_to_channel(occ, "X"), stacks[1])
    e_sv = _apply_stack(spatial_to_channel(occ, "Y"), stacks[2])
    return e_bev, e_fv, e_sv


def tpv_matmul(lhs: np.ndarray, rhs: np.ndarray,
               mean_over_vanished: bool = False) -> np.ndarray:
    """Per-channel matrix product (C, A, K) x (C, K, B) -> (C, A, B).

    With ``mean_over_vanished`` the product is divided by K, balancing the
    accumulation over the consumed axis.
    """
    lhs = np.asarray(lhs)
    rhs = np.asarray(rhs)
    if lhs.ndim != 3 or rhs.ndim != 3:
        raise DataError(f"operands must be 3D, got {lhs.shape} and {rhs.shape}")
    if lhs.shape[0] != rhs.shape[0]:
        raise DataError(f"channel mismatch: {lhs.shape[0]} vs {rhs.shape[0]}")
    if lhs.shape[2] != rhs.shape[1]:
        raise DataError(
            f"inner dimension mismatch: {lhs.shape} x {rhs.shape}"
        )
    out = np.matmul(lhs, rhs)
    if mean_over_vanished:
        out = out / lhs.shape[2]
    return out


def _matmul_backward(lhs, rhs, upstream, mean_over_vanished):
    up = upstream / lhs.shape[2] if mean_over_vanished else upstream
    grad_lhs = np.matmul(up, rhs.transpose(0, 2, 1))
    grad_rhs = np.matmul(lhs.transpose(0, 2, 1), up)
    return grad_lhs, grad_rhs


def _check_tpv_shapes(e_bev, e_fv, e_sv):
    c, x, y = e_bev.shape
    if e_fv.shape[0] != c or e_sv.shape[0] != c:
        raise DataError("embeddings disagree on channel count")
    if e_fv.shape[1] != y or e_sv.shape[1] != x or e_fv.shape[2] != e_sv.shape[2]:
        raise DataError(
            f"inconsistent TPV shapes: BEV {e_bev.shape}, FV {e_fv.shape}, "
            f"SV {e_sv.shape}"
        )


def _swap(t: np.ndarray) -> np.ndarray:
    return t.transpose(0, 2, 1)


def lti_interact(e_bev, e_fv, e_sv, convs, mean_over_vanished: bool = True):
    """Fuse the three view embeddings into one BEV-shaped spatial embedding.

    ``convs`` holds the four mixing stacks in order (bev, fv, sv, fuse).
    Per view, the other two embeddings are multiplied along their shared
    axis into that view's shape, added, and convolved; the interacted
    front/side views are then multiplied again and fused with the
    interacted BEV map. Every product may average over its vanished axis.
    """
    e_bev, e_fv, e_sv = (np.asarray(e) for e in (e_bev, e_fv, e_sv))
    _check_tpv_shapes(e_bev, e_fv, e_sv)
    conv_bev, conv_fv, conv_sv, conv_fuse = convs

    m_bev = tpv_matmul(e_sv, _swap(e_fv), mean_over_vanished)  # vanished Z
    i_bev = _apply_stack(e_bev + m_bev, conv_bev)
    m_fv = tpv_matmul(_swap(e_bev), e_sv, mean_over_vanished)  # vanished X
    i_fv = _apply_stack(e_fv + m_fv, conv_fv)
    m_sv = tpv_matmul(e_bev, e_fv, mean_over_vanished)         # vanished Y
    i_sv = _apply_stack(e_sv + m_sv, conv_sv)
    m_s = tpv_matmul(i_sv, _swap(i_fv), mean_over_vanished)    # vanished Z
    return _apply_stack(i_bev + m_s, conv_fuse)


def lti_backward(e_bev, e_fv, e_sv, convs, upstream,
                 mean_over_vanished: bool = True):
    """Exact adjoint of :func:`lti_interact`.

    Returns ``(grad_bev, grad_fv, grad_sv, conv_grads)`` where
    ``conv_grads`` lists per-stack ``[(grad_w, grad_b), ...]`` in the same
    (bev, fv, sv, fuse) order as the forward.
    """
    e_bev, e_fv, e_sv = (np.asarray(e) for e in (e_bev, e_fv, e_sv))
    _check_tpv_shapes(e_bev, e_fv, e_sv)
    conv_bev, conv_fv, conv_sv, conv_fuse = convs
    up = np.asarray(upstream)

    # forward intermediates
    m_bev = tpv_matmul(e_sv, _swap(e_fv), mean_over_vanished)
    s_bev = e_bev + m_bev
    i_bev = _apply_stack(s_bev, conv_bev)
    m_fv = tpv_matmul(_swap(e_bev), e_sv, mean_over_vanished)
    s_fv = e_fv + m_fv
    i_fv = _apply_stack(s_fv, conv_fv)
    m_sv = tpv_matmul(e_bev, e_fv, mean_over_vanished)
    s_sv = e_sv + m_sv
    i_sv = _apply_stack(s_sv, conv_sv)
    s_fuse = i_bev + tpv_matmul(i_sv, _swap(i_fv), mean_over_vanished)

    d_sfuse, g_fuse = _stack_backward(s_fuse, conv_fuse, up)
    d_ibev = d_sfuse
    d_isv, d_ifv_t = _matmul_backward(i_sv, _swap(i_fv), d_sfuse,
                                      mean_over_vanished)
    d_ifv = _swap(d_ifv_t)

    d_ssv, g_sv = _stack_backward(s_sv, conv_sv, d_isv)
    d_ebev_sv, d_efv_sv = _matmul_backward(e_bev, e_fv, d_ssv,
                                           mean_over_vanished)

    d_sfv, g_fv = _stack_backward(s_fv, conv_fv, d_ifv)
    d_ebev_t, d_esv_fv = _matmul_backward(_swap(e_bev), e_sv, d_sfv,
                                          mean_over_vanished)

    d_sbev, g_bev = _stack_backward(s_bev, conv_bev, d_ibev)
    d_esv_bev, d_efv_t = _matmul_backward(e_sv, _swap(e_fv), d_sbev,
                                          mean_over_vanished)

    grad_bev = d_sbev + d_ebev_sv + _swap(d_ebev_t)
    grad_fv = d_sfv + d_efv_sv + _swap(d_efv_t)
    grad_sv = d_ssv + d_esv_fv + d_esv_bev
    return grad_bev, grad_fv, grad_sv, [g_bev, g_fv, g_sv, g_fuse]
