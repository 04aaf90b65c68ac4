import json
from pathlib import Path

import numpy as np
import pytest

from tpvocc.geometry import CameraModel, GridSpec


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def overhead_cam(spec: GridSpec, rng=None, height=12, width=16,
                 jitter=0.12) -> CameraModel:
    """Camera above the grid looking down, optionally jittered.

    Most of the grid lands in the frustum, which makes sampling tests
    informative.
    """
    base = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    pos = np.array([
        0.5 * (spec.x_min + spec.x_max),
        0.5 * (spec.y_min + spec.y_max),
        spec.z_max + 0.5 * (spec.x_max - spec.x_min),
    ])
    fx = 0.45 * width
    if rng is not None:
        a = rng.uniform(-jitter, jitter, size=3)
        c, s = np.cos(a), np.sin(a)
        rx = np.array([[1, 0, 0], [0, c[0], -s[0]], [0, s[0], c[0]]])
        ry = np.array([[c[1], 0, s[1]], [0, 1, 0], [-s[1], 0, c[1]]])
        rz = np.array([[c[2], -s[2], 0], [s[2], c[2], 0], [0, 0, 1]])
        base = rx @ ry @ rz @ base
        pos = pos + rng.uniform(-0.5, 0.5, size=3)
        fx = fx * rng.uniform(0.9, 1.1)
    return CameraModel(
        fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        rotation=base, translation=-base @ pos, height=height, width=width,
    )


@pytest.fixture
def small_spec() -> GridSpec:
    return GridSpec(x_min=-4.0, x_max=4.0, y_min=-4.0, y_max=4.0,
                    z_min=0.0, z_max=4.0, voxel_size=0.5,
                    nx=16, ny=16, nz=8)


@pytest.fixture
def tiny_spec() -> GridSpec:
    return GridSpec(x_min=-2.0, x_max=2.0, y_min=-2.0, y_max=2.0,
                    z_min=0.0, z_max=2.0, voxel_size=1.0, nx=4, ny=4, nz=2)


def write_config(path: Path, **overrides) -> Path:
    doc = {
        "grid": {"x_min": -4.0, "x_max": 4.0, "y_min": -4.0, "y_max": 4.0,
                 "z_min": 0.0, "z_max": 4.0, "voxel_size": 0.5,
                 "nx": 16, "ny": 16, "nz": 8},
        "channels": 8,
        "kernel_size": 3,
        "depth": {"d_min": 0.25, "bin_size": 0.25, "n_bins": 24},
        "n_boxes": 3,
        "n_cameras": 2,
        "seed": 0,
        "precision": "double",
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc, indent=2))
    return path
