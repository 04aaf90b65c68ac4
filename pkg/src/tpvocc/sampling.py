"""Depth-distribution activation and global spatial sampling.

A per-camera depth distribution is a ``(D, H, W)`` tensor of weights over
(depth bin, image row, image column). Sampling folds the distributions of
all cameras into a single-channel occupancy grid: every voxel center is
projected into every image, the metric depth is mapped onto the bin axis,
the distribution is interpolated there, and the per-camera samples are
summed (camera order ascending, so camera additivity is exact).

The whole map is linear in the distribution values, which makes the
hand-written adjoint in :func:`global_spatial_sampling_backward` exact.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geometry import CameraModel, GridSpec, project_points, voxel_centers

#: Default depth-bin layout: 60 uniform bins covering [1 m, 31 m).
DEFAULT_D_MIN = 1.0
DEFAULT_BIN_SIZE = 0.5
DEFAULT_N_BINS = 60

ACTIVATIONS = ("sigmoid", "softmax", "none")

# Corner accumulation runs depth-major, then row, then column, in both the
# forward stencil and its adjoint, so reductions have one fixed order.
SAMPLING_MODES = ("trilinear", "nearest_depth")


@dataclass(frozen=True)
class DepthDistribution:
    """Per-camera depth weights plus the metric layout of the bin axis."""

    values: np.ndarray  # (D, H, W)
    d_min: float = DEFAULT_D_MIN
    bin_size: float = DEFAULT_BIN_SIZE
    activation: str = "none"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise DataError(f"depth distribution must be (D, H, W), got {v.shape}")
        object.__setattr__(self, "values", v)
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unknown activation {self.activation!r}")
        if self.activation == "sigmoid":
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise DataError("sigmoid-activated weights must lie in [0, 1]")
        elif self.activation == "softmax":
            sums = v.sum(axis=0)
            if v.size and np.max(np.abs(sums - 1.0)) > 1e-5:
                raise DataError("softmax-activated weights must sum to 1 per pixel")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


def activate_depth(logits: np.ndarray, mode: str, *, d_min: float = DEFAULT_D_MIN,
                   bin_size: float = DEFAULT_BIN_SIZE) -> DepthDistribution:
    """Turn raw depth logits into a distribution.

    ``sigmoid`` maps every weight into [0, 1] independently (each bin reads
    as an occupancy probability); ``softmax`` normalizes along the depth
    axis (mass concentrates on one depth); ``none`` passes logits through.
    """
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("depth logits must be finite")
    if mode == "sigmoid":
        v = _sigmoid(x)
    elif mode == "softmax":
        shifted = x - x.max(axis=0, keepdims=True)
        e = np.exp(shifted)
        v = e / e.sum(axis=0, keepdims=True)
    elif mode == "none":
        v = x
    else:
        raise DataError(f"unknown activation {mode!r}")
    return DepthDistribution(values=v, d_min=d_min, bin_size=bin_size, activation=mode)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sample_trilinear(dist: DepthDistribution, coord) -> float:
    """Interpolate the distribution at one continuous (d_bin, h, w) point.

    Lattice neighbors outside the tensor contribute zero (zero-padding
    border), so coordinates up to half a cell outside still receive the
    proportional edge weight.
    """
    db, h, w = (float(c) for c in coord)
    vals = np.asarray(dist.values, dtype=np.float64)
    out = _interp(vals, np.array([db]), np.array([h]), np.array([w]), "trilinear")
    return float(out[0])


def _depth_stencil(db, n_bins, mode):
    """Depth-axis stencil: [(index, weight), ...] per sample point."""
    if mode == "nearest_depth":
        di = np.clip(np.floor(db + 0.5).astype(np.int64), 0, n_bins - 1)
        wt = np.where((db >= -0.5) & (db <= n_bins - 0.5), 1.0, 0.0)
        return [(di, wt)]
    d0 = np.floor(db).astype(np.int64)
    fd = db - d0
    return [(d0, 1.0 - fd), (d0 + 1, fd)]


def _interp(vals, db, h, w, mode):
    """Vectorized zero-padded interpolation at (db, h, w) coordinates."""
    D, H, W = vals.shape
    h0 = np.floor(h).astype(np.int64)
    w0 = np.floor(w).astype(np.int64)
    fh = h - h0
    fw = w - w0

    acc = np.zeros(db.shape, dtype=np.float64)
    for di, wd in _depth_stencil(db, D, mode):
        for dh in (0, 1):
            for dw in (0, 1):
                hi = h0 + dh
                wi = w0 + dw
                wh = fh if dh else 1.0 - fh
                ww = fw if dw else 1.0 - fw
                inb = (di >= 0) & (di < D) & (hi >= 0) & (hi < H) \
                    & (wi >= 0) & (wi < W)
                safe_d = np.clip(di, 0, D - 1)
                safe_h = np.clip(hi, 0, H - 1)
                safe_w = np.clip(wi, 0, W - 1)
                corner = np.where(inb, vals[safe_d, safe_h, safe_w], 0.0)
                acc = acc + corner * (wd * wh * ww)
    return acc


def _check_pairing(dists, cams):
    if len(dists) != len(cams):
        raise DataError(
            f"{len(dists)} distributions vs {len(cams)} cameras"
        )
    if not dists:
        raise DataError("need at least one camera")
    for i, (dist, cam) in enumerate(zip(dists, cams)):
        if dist.image_shape != (cam.height, cam.width):
            raise DataError(
                f"camera {i}: distribution image {dist.image_shape} != "
                f"camera image ({cam.height}, {cam.width})"
            )


def _voxel_coords(dist: DepthDistribution, cam: CameraModel, centers: np.ndarray):
    """Project voxel centers into one camera's (d_bin, h, w) space."""
    d, h, w, ok = project_points(cam, centers)
    db = (d - dist.d_min) / dist.bin_size - 0.5
    valid = ok & (db >= -0.5) & (db <= dist.n_bins - 0.5)
    return db, h, w, valid


def _forward_one(dist, cam, centers, mode):
    db, h, w, valid = _voxel_coords(dist, cam, centers)
    vals = np.asarray(dist.values, dtype=np.float64)
    sampled = _interp(vals, db, h, w, mode)
    return np.where(valid, sampled, 0.0)


def global_spatial_sampling(
    dists: list[DepthDistribution],
    cams: list[CameraModel],
    spec: GridSpec,
    *,
    mode: str = "trilinear",
    workers: int = 1,
) -> np.ndarray:
    """Fold all cameras' depth distributions into an (nx, ny, nz) grid.

    Each voxel center is projected through each camera; out-of-frustum or
    out-of-depth-range projections contribute exactly zero. Voxels are
    independent, so the grid may be split into slabs across ``workers``
    threads without changing a single bit of the result.
    """
    if mode not in SAMPLING_MODES:
        raise DataError(f"unknown sampling mode {mode!r}")
    _check_pairing(dists, cams)
    centers = voxel_centers(spec)
    out = np.zeros(spec.shape, dtype=np.float64)

    def run_slab(lo: int, hi: int) -> None:
        sub = centers[lo:hi]
        acc = np.zeros(sub.shape[:-1], dtype=np.float64)
        for dist, cam in zip(dists, cams):
            acc = acc + _forward_one(dist, cam, sub, mode)
        out[lo:hi] = acc

    slabs = _slabs(spec.nx, workers)
    if len(slabs) == 1:
        run_slab(*slabs[0])
    else:
        with ThreadPoolExecutor(max_workers=len(slabs)) as pool:
            list(pool.map(lambda b: run_slab(*b), slabs))
    return out


def _slabs(n: int, workers: int) -> list[tuple[int, int]]:
    k = max(1, min(workers, n))
    edges = np.linspace(0, n, k + 1, dtype=int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def global_spatial_sampling_backward(
    upstream: np.ndarray,
    cams: list[CameraModel],
    spec: GridSpec,
    dists: list[DepthDistribution],
    *,
    mode: str = "trilinear",
) -> list[np.ndarray]:
    """Exact adjoint of :func:`global_spatial_sampling`.

    Scatters each voxel's upstream gradient back to the lattice corners it
    sampled, using the same stencil weights. Only the shape and bin layout
    of ``dists`` are read, never the values.
    """
    if mode not in SAMPLING_MODES:
        raise DataError(f"unknown sampling mode {mode!r}")
    _check_pairing(dists, cams)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != spec.shape:
        raise DataError(f"upstream shape {up.shape} != grid {spec.shape}")
    centers = voxel_centers(spec)
    flat_up = up.reshape(-1)

    grads = []
    for dist, cam in zip(dists, cams):
        D, H, W = dist.values.shape
        g = np.zeros((D, H, W), dtype=np.float64)
        db, h, w, valid = _voxel_coords(dist, cam, centers)
        db, h, w, valid = (a.reshape(-1) for a in (db, h, w, valid))

        h0 = np.floor(h).astype(np.int64)
        w0 = np.floor(w).astype(np.int64)
        fh = h - h0
        fw = w - w0

        for di, wd in _depth_stencil(db, D, mode):
            for dh in (0, 1):
                for dw in (0, 1):
                    hi = h0 + dh
                    wi = w0 + dw
                    wh = fh if dh else 1.0 - fh
                    ww = fw if dw else 1.0 - fw
                    m = valid & (di >= 0) & (di < D) & (hi >= 0) & (hi < H) \
                        & (wi >= 0) & (wi < W)
                    np.add.at(
                        g, (di[m], hi[m], wi[m]), flat_up[m] * (wd * wh * ww)[m]
                    )
        grads.append(g)
    return grads
