"""Perception-volume geometry: voxel grid, pinhole cameras, projection.

Conventions (fixed for the whole package):

* The grid is axis-aligned in ego coordinates. Voxel ``(i, j, k)`` covers
  ``[x_min + i*vs, x_min + (i+1)*vs) x ... `` and its center sits at
  ``(x_min + (i+0.5)*vs, y_min + (j+0.5)*vs, z_min + (k+0.5)*vs)``.
* Cameras follow the standard pinhole model: with camera-frame point
  ``q = R @ p + t``, the image coordinates are ``d = q_z``,
  ``w = fx*q_x/q_z + cx`` (column), ``h = fy*q_y/q_z + cy`` (row).
* All geometry runs in float64 so projection error cannot leak into the
  sampling equivalence checks downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

# Depth threshold for the behind-camera test; avoids division blow-up at
# the principal plane.
EPS_DEPTH = 1e-6

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Metric bounds, voxel size and integer resolution of the volume."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    voxel_size: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError(f"voxel_size must be > 0, got {self.voxel_size}")
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigError(
                f"grid resolution must be >= 1 per axis, got "
                f"({self.nx}, {self.ny}, {self.nz})"
            )
        for lo, hi, n, name in (
            (self.x_min, self.x_max, self.nx, "x"),
            (self.y_min, self.y_max, self.ny, "y"),
            (self.z_min, self.z_max, self.nz, "z"),
        ):
            span = hi - lo
            want = n * self.voxel_size
            # one ulp of slack per term in the product/difference
            tol = 4.0 * (math.ulp(abs(span)) + n * math.ulp(self.voxel_size))
            if abs(span - want) > tol:
                raise ConfigError(
                    f"{name} extent {span} != {n} * {self.voxel_size}"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def origin(self) -> tuple[float, float, float]:
        return (self.x_min, self.y_min, self.z_min)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        try:
            return cls(
                x_min=float(d["x_min"]), x_max=float(d["x_max"]),
                y_min=float(d["y_min"]), y_max=float(d["y_max"]),
                z_min=float(d["z_min"]), z_max=float(d["z_max"]),
                voxel_size=float(d["voxel_size"]),
                nx=int(d["nx"]), ny=int(d["ny"]), nz=int(d["nz"]),
            )
        except KeyError as e:
            raise ConfigError(f"grid spec missing field {e}") from e

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min, "x_max": self.x_max,
            "y_min": self.y_min, "y_max": self.y_max,
            "z_min": self.z_min, "z_max": self.z_max,
            "voxel_size": self.voxel_size,
            "nx": self.nx, "ny": self.ny, "nz": self.nz,
        }


#: 200x200x16 grid over +-40 m in X/Y and -1..5.4 m in Z, 0.4 m voxels.
DEFAULT_GRID = GridSpec(
    x_min=-40.0, x_max=40.0, y_min=-40.0, y_max=40.0,
    z_min=-1.0, z_max=5.4, voxel_size=0.4, nx=200, ny=200, nz=16,
)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera at feature-map scale.

    ``R``/``t`` map ego points into the camera frame (``q = R p + t``);
    ``height``/``width`` bound the valid (h, w) image coordinates.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(repr=False)  # (3, 3)
    translation: np.ndarray = field(repr=False)  # (3,)
    height: int
    width: int

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise ConfigError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.abs(R.T @ R - np.eye(3)) <= _ORTHO_TOL):
            raise ConfigError("rotation is not orthonormal (R^T R != I)")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ConfigError(f"rotation determinant {np.linalg.det(R)} != 1")
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError(f"focal lengths must be > 0, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def center(self) -> np.ndarray:
        """Optical center in ego coordinates (solves R p + t = 0)."""
        return -self.rotation.T @ self.translation

    @classmethod
    def from_matrices(cls, K, R, t, height: int, width: int) -> "CameraModel":
        K = np.asarray(K, dtype=np.float64).reshape(3, 3)
        lower = (K[1, 0], K[2, 0], K[2, 1], K[0, 1])
        if any(abs(v) > 0 for v in lower) or abs(K[2, 2] - 1.0) > 1e-12:
            raise ConfigError("intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]")
        return cls(
            fx=float(K[0, 0]), fy=float(K[1, 1]),
            cx=float(K[0, 2]), cy=float(K[1, 2]),
            rotation=np.asarray(R, dtype=np.float64).reshape(3, 3),
            translation=np.asarray(t, dtype=np.float64).reshape(3),
            height=int(height), width=int(width),
        )


@dataclass(frozen=True)
class ImagePoint:
    """Projection result: metric depth, continuous row/col, frustum flag."""

    d: float
    h: float
    w: float
    in_frustum: bool


def voxel_centers(spec: GridSpec) -> np.ndarray:
    """Metric centers of every voxel, shape (nx, ny, nz, 3), float64."""
    xs = spec.x_min + (np.arange(spec.nx, dtype=np.float64) + 0.5) * spec.voxel_size
    ys = spec.y_min + (np.arange(spec.ny, dtype=np.float64) + 0.5) * spec.voxel_size
    zs = spec.z_min + (np.arange(spec.nz, dtype=np.float64) + 0.5) * spec.voxel_size
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def project(cam: CameraModel, p) -> ImagePoint:
    """Project one ego-frame point into the camera image."""
    p = np.asarray(p, dtype=np.float64).reshape(3)
    q = cam.rotation @ p + cam.translation
    d = float(q[2])
    if d <= EPS_DEPTH:
        return ImagePoint(d=d, h=math.nan, w=math.nan, in_frustum=False)
    w = cam.fx * q[0] / d + cam.cx
    h = cam.fy * q[1] / d + cam.cy
    ok = bool(0.0 <= h <= cam.height - 1 and 0.0 <= w <= cam.width - 1)
    return ImagePoint(d=d, h=float(h), w=float(w), in_frustum=ok)


def project_points(cam: CameraModel, points: np.ndarray):
    """Vectorized :func:`project` over an (..., 3) array of points.

    Returns ``(d, h, w, in_frustum)`` arrays of the leading shape. The
    camera-frame transform is written out per coordinate (no matmul) so
    the floating-point evaluation order is independent of how callers
    chunk the input, which keeps chunked/parallel sampling bit-stable.
    """
    pts = np.asarray(points, dtype=np.float64)
    px, py, pz = pts[..., 0], pts[..., 1], pts[..., 2]
    R, t = cam.rotation, cam.translation
    qx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz + t[0]
    qy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz + t[1]
    qz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz + t[2]
    front = qz > EPS_DEPTH
    safe_z = np.where(front, qz, 1.0)
    w = cam.fx * qx / safe_z + cam.cx
    h = cam.fy * qy / safe_z + cam.cy
    ok = front & (h >= 0.0) & (h <= cam.height - 1) & (w >= 0.0) & (w <= cam.width - 1)
    return qz, h, w, ok


def back_project(cam: CameraModel, d: float, h: float, w: float) -> np.ndarray:
    """Invert :func:`project` for an in-frustum result (d > 0)."""
    qx = (w - cam.cx) / cam.fx * d
    qy = (h - cam.cy) / cam.fy * d
    q = np.array([qx, qy, d], dtype=np.float64)
    return cam.rotation.T @ (q - cam.translation)


def depth_to_bin(d, d_min: float, bin_size: float, n_bins: int):
    """Map metric depth onto the continuous depth-bin axis.

    Bin ``k`` covers ``[d_min + k*bin_size, d_min + (k+1)*bin_size)``; the
    returned coordinate is expressed at bin centers, so it equals
    ``(d - d_min)/bin_size - 0.5``. Valid while within ``[-0.5, n_bins-0.5]``
    (the half-open ends still receive edge weight under zero padding).

    Scalar or array ``d``; returns ``(coordinate, valid)``.
    """
    if bin_size <= 0:
        raise ConfigError(f"bin_size must be > 0, got {bin_size}")
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    coord = (np.asarray(d, dtype=np.float64) - d_min) / bin_size - 0.5
    valid = (coord >= -0.5) & (coord <= n_bins - 0.5)
    if np.isscalar(d) or np.ndim(d) == 0:
        return float(coord), bool(valid)
    return coord, valid


def load_rig(path) -> tuple[GridSpec | None, list[CameraModel]]:
    """Load a camera rig JSON document.

    Layout: ``{"grid": {...}, "cameras": [{"K": [9 row-major floats],
    "R": [9], "t": [3], "H": int, "W": int}, ...]}``. The grid stanza is
    optional; cameras are returned in file order.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"rig file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"rig file {path} is not valid JSON: {e}") from e
    grid = GridSpec.from_dict(doc["grid"]) if "grid" in doc else None
    cams = []
    for i, c in enumerate(doc.get("cameras", [])):
        try:
            cams.append(
                CameraModel.from_matrices(
                    np.array(c["K"], dtype=np.float64).reshape(3, 3),
                    np.array(c["R"], dtype=np.float64).reshape(3, 3),
                    np.array(c["t"], dtype=np.float64),
                    height=c["H"], width=c["W"],
                )
            )
        except (KeyError, ValueError) as e:
            raise DataError(f"camera {i} in {path} is malformed: {e}") from e
    return grid, cams


def save_rig(path, grid: GridSpec | None, cameras: list[CameraModel]) -> None:
    doc = {}
    if grid is not None:
        doc["grid"] = grid.to_dict()
    doc["cameras"] = [
        {
            "K": [float(v) for v in cam.intrinsics.reshape(-1)],
            "R": [float(v) for v in cam.rotation.reshape(-1)],
            "t": [float(v) for v in cam.translation],
            "H": cam.height,
            "W": cam.width,
        }
        for cam in cameras
    ]
    Path(path).write_text(json.dumps(doc, indent=2))
