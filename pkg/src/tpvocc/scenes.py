"""Synthetic labeled scenes, depth-distribution rendering, visibility.

Scenes are a flat ground slab plus axis-aligned boxes rasterized into the
label grid by voxel-center containment. From a scene we can render the
depth distribution a depth network would ideally produce (first-hit ray
marching per feature pixel) and the per-voxel visibility mask (a voxel is
visible when some camera sees it in-frustum with no occupied cell strictly
between camera and voxel center).

Both rays and segments walk the grid with an exact uniform-cell traversal
(step to whichever axis boundary comes first), vectorized over all rays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classes
from .errors import DataError
from .geometry import CameraModel, GridSpec, project_points, voxel_centers
from .sampling import DepthDistribution


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in meters with a semantic class id."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    class_id: int

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min_corner, self.max_corner)):
            raise DataError(f"box corners out of order: {self}")


@dataclass(frozen=True)
class SyntheticScene:
    """Label grid plus the analytic geometry it was rasterized from."""

    labels: np.ndarray  # (nx, ny, nz) int
    boxes: tuple[Box, ...]
    ground_z: float
    ground_class: int = classes.GROUND_CLASS
    free_class: int = classes.FREE_CLASS
    num_classes: int = classes.NUM_CLASSES
    spec: GridSpec = field(default=None)

    def to_json_dict(self) -> dict:
        return {
            "ground_z": self.ground_z,
            "ground_class": self.ground_class,
            "free_class": self.free_class,
            "num_classes": self.num_classes,
            "boxes": [
                {
                    "min": list(b.min_corner),
                    "max": list(b.max_corner),
                    "class_id": b.class_id,
                }
                for b in self.boxes
            ],
        }


def generate_scene(spec: GridSpec, n_boxes: int, rng_seed: int, *,
                   ground_z: float | None = None,
                   ground_class: int = classes.GROUND_CLASS,
                   free_class: int = classes.FREE_CLASS,
                   num_classes: int = classes.NUM_CLASSES,
                   clear_xy: list[tuple[float, float]] | None = None
                   ) -> SyntheticScene:
    """Ground slab at ``ground_z`` (default z_min) plus ``n_boxes`` boxes.

    Boxes get random sizes of one to four voxels per axis, sit on or above
    the ground, stay inside the grid bounds, and draw their class from the
    semantic ids excluding ground and free. Later boxes overwrite earlier
    ones where they overlap. ``clear_xy`` lists ground-plane points (e.g.
    camera positions) whose pillar no box footprint may cover, so a rig
    never ends up embedded inside an object. Same seed, same scene.
    """
    if n_boxes < 0:
        raise DataError(f"n_boxes must be >= 0, got {n_boxes}")
    rng = np.random.default_rng(rng_seed)
    gz = spec.z_min if ground_z is None else float(ground_z)
    vs = spec.voxel_size
    clear_xy = clear_xy or []

    labels = np.full(spec.shape, free_class, dtype=np.int64)
    centers = voxel_centers(spec)
    ground = (centers[..., 2] >= gz) & (centers[..., 2] < gz + vs)
    labels[ground] = ground_class

    candidates = [c for c in range(num_classes)
                  if c not in (ground_class, free_class)]
    boxes = []
    for _ in range(n_boxes):
        for _attempt in range(200):
            size = rng.uniform(1.0, 4.0, size=3) * vs
            size[2] = min(size[2], spec.z_max - (gz + vs))
            lo = np.array([
                rng.uniform(spec.x_min, spec.x_max - size[0]),
                rng.uniform(spec.y_min, spec.y_max - size[1]),
                rng.uniform(gz + vs, max(gz + vs, spec.z_max - size[2])),
            ])
            hi = lo + size
            covers = any(
                lo[0] - vs <= px < hi[0] + vs and lo[1] - vs <= py < hi[1] + vs
                for px, py in clear_xy)
            if not covers:
                break
        else:
            raise DataError("could not place a box outside the clear zones")
        cls = int(candidates[rng.integers(0, len(candidates))])
        box = Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi), cls)
        inside = np.all((centers >= lo) & (centers < hi), axis=-1)
        labels[inside] = cls
        boxes.append(box)
    return SyntheticScene(
        labels=labels, boxes=tuple(boxes), ground_z=gz,
        ground_class=ground_class, free_class=free_class,
        num_classes=num_classes, spec=spec,
    )


def save_scene_json(path, scene: SyntheticScene) -> None:
    Path(path).write_text(json.dumps(scene.to_json_dict(), indent=2))


def _ray_state(spec: GridSpec, origins, dirs):
    """Initial traversal state for rays p(t) = origin + t * dir.

    Returns (cell indices (M,3), t at next boundary per axis (M,3),
    t increment per cell per axis (M,3), step sign (M,3), t of entry into
    the current cell (M,), alive mask). Rays starting outside the grid
    are advanced to their entry point; rays that miss the grid are dead.
    """
    lo = np.array([spec.x_min, spec.y_min, spec.z_min])
    hi = np.array([spec.x_max, spec.y_max, spec.z_max])
    n = np.array(spec.shape)
    vs = spec.voxel_size

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(dirs != 0.0, 1.0 / dirs, np.inf)
        t_lo = (lo - origins) * inv
        t_hi = (hi - origins) * inv
    t_near = np.minimum(t_lo, t_hi)
    t_far = np.maximum(t_lo, t_hi)
    # per-axis windows collapse to +-inf where dir == 0 inside the slab
    zero = dirs == 0.0
    inside_slab = (origins >= lo) & (origins <= hi)
    t_near = np.where(zero, np.where(inside_slab, -np.inf, np.inf), t_near)
    t_far = np.where(zero, np.where(inside_slab, np.inf, -np.inf), t_far)
    t_enter = np.maximum(t_near.max(axis=1), 0.0)
    t_exit = t_far.min(axis=1)
    alive = t_enter < t_exit

    eps = 1e-9
    start = origins + (t_enter[:, None] + eps) * dirs
    cell = np.floor((start - lo) / vs).astype(np.int64)
    np.clip(cell, 0, n - 1, out=cell)

    step = np.where(dirs > 0, 1, np.where(dirs < 0, -1, 0))
    next_bound = lo + (cell + (step > 0)) * vs
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max = np.where(step != 0, (next_bound - origins) * inv, np.inf)
        t_delta = np.where(step != 0, vs * np.abs(inv), np.inf)
    return cell, t_max, t_delta, step, t_enter, alive


def _march(labels, spec, origins, dirs, free_class, *, t_stop=None,
           target_cells=None):
    """Walk all rays through the grid until hit / target / stop.

    Returns ``(hit_t, blocked)``: ``hit_t`` is the cell-entry parameter of
    the first non-free cell per ray (NaN when none), ``blocked`` flags rays
    that met a non-free cell strictly before entering their target cell
    (only meaningful when ``target_cells`` is given; the target cell's own
    occupancy never blocks).
    """
    occupied = labels != free_class
    n = np.array(spec.shape)
    M = origins.shape[0]
    cell, t_max, t_delta, step, t_entry, alive = _ray_state(spec, origins, dirs)

    hit_t = np.full(M, np.nan)
    blocked = np.zeros(M, dtype=bool)
    if t_stop is None:
        t_stop = np.full(M, np.inf)

    max_iters = int(n.sum()) + 4
    for _ in range(max_iters):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        c = cell[idx]
        if target_cells is not None:
            at_target = np.all(c == target_cells[idx], axis=1)
            alive[idx[at_target]] = False
            idx = idx[~at_target]
            c = c[~at_target]
            if idx.size == 0:
                continue
        occ = occupied[c[:, 0], c[:, 1], c[:, 2]]
        newly = idx[occ]
        hit_t[newly] = t_entry[newly]
        blocked[newly] = True
        alive[newly] = False
        idx = idx[~occ]
        if idx.size == 0:
            continue

        axis = np.argmin(t_max[idx], axis=1)
        t_next = t_max[idx, axis]
        ended = t_next >= t_stop[idx]
        alive[idx[ended]] = False
        idx = idx[~ended]
        axis = axis[~ended]
        t_next = t_next[~ended]
        if idx.size == 0:
            continue
        cell[idx, axis] += step[idx, axis]
        t_entry[idx] = t_next
        t_max[idx, axis] += t_delta[idx, axis]
        out = (cell[idx, axis] < 0) | (cell[idx, axis] >= n[axis])
        alive[idx[out]] = False
    return hit_t, blocked


def render_depth_distribution(scene: SyntheticScene, cam: CameraModel,
                              d_min: float, bin_size: float, n_bins: int,
                              mode: str = "onehot",
                              decay: float = 1.0) -> DepthDistribution:
    """First-hit depth weights for every feature pixel of one camera.

    One ray per pixel center; the entry depth (along the optical axis) of
    the first non-free cell selects the hit bin. ``onehot`` writes weight
    1 there; ``sigmoid_like`` writes ``decay**i`` at the hit bin and every
    bin beyond it (hard occupancy at decay 1). Pixels whose rays hit
    nothing stay all-zero.
    """
    if mode not in ("onehot", "sigmoid_like"):
        raise DataError(f"unknown render mode {mode!r}")
    spec = scene.spec
    if spec is None:
        raise DataError("scene carries no grid spec")
    H, W = cam.height, cam.width
    hs, ws = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    # camera-frame pixel rays with unit optical-axis component, so the ray
    # parameter equals the metric depth d of the projection model
    dir_cam = np.stack([
        (ws.ravel() - cam.cx) / cam.fx,
        (hs.ravel() - cam.cy) / cam.fy,
        np.ones(H * W),
    ], axis=1)
    if not np.all(np.isfinite(dir_cam)):
        raise DataError("degenerate pixel ray direction")
    dirs = dir_cam @ cam.rotation  # == R^T @ dir per row
    origins = np.broadcast_to(cam.center, (H * W, 3)).copy()

    hit_t, _ = _march(scene.labels, spec, origins, dirs, scene.free_class)
    values = np.zeros((n_bins, H, W), dtype=np.float64)
    hit = np.isfinite(hit_t)
    bins = np.full(H * W, -1, dtype=np.int64)
    bins[hit] = np.floor((hit_t[hit] - d_min) / bin_size).astype(np.int64)

    rows, cols = hs.ravel(), ws.ravel()
    if mode == "onehot":
        ok = hit & (bins >= 0) & (bins < n_bins)
        values[bins[ok], rows[ok], cols[ok]] = 1.0
    else:
        ok = hit & (bins < n_bins)
        for r, c, b in zip(rows[ok], cols[ok], bins[ok]):
            start = max(int(b), 0)
            values[start:, r, c] = decay ** np.arange(start - b, n_bins - b)
    activation = "sigmoid" if 0.0 <= decay <= 1.0 else "none"
    return DepthDistribution(values=values, d_min=d_min, bin_size=bin_size,
                             activation=activation)


def compute_visibility(scene: SyntheticScene, cams: list[CameraModel],
                       spec: GridSpec | None = None) -> np.ndarray:
    """Per-voxel camera-visibility mask, OR over the rig.

    A voxel is visible through a camera when its center projects inside
    that camera's image with positive depth and the segment from the
    optical center to the voxel center crosses no occupied cell strictly
    before the voxel's own cell.
    """
    if not cams:
        raise DataError("need at least one camera")
    spec = spec or scene.spec
    if spec is None:
        raise DataError("scene carries no grid spec")
    centers = voxel_centers(spec).reshape(-1, 3)
    targets = np.stack(np.meshgrid(
        np.arange(spec.nx), np.arange(spec.ny), np.arange(spec.nz),
        indexing="ij"), axis=-1).reshape(-1, 3)

    visible = np.zeros(centers.shape[0], dtype=bool)
    for cam in cams:
        _, _, _, ok = project_points(cam, centers)
        idx = np.nonzero(ok & ~visible)[0]
        if idx.size == 0:
            continue
        origins = np.broadcast_to(cam.center, (idx.size, 3)).copy()
        dirs = centers[idx] - origins
        _, blocked = _march(
            scene.labels, spec, origins, dirs, scene.free_class,
            t_stop=np.ones(idx.size), target_cells=targets[idx],
        )
        visible[idx[~blocked]] = True
    return visible.reshape(spec.shape)
