"""Binary file formats: OCCG label grids, TNSR tensors, PPM slices.

Both formats are little-endian with fixed headers so any other tooling
can parse them without this package:

* OCCG: magic ``OCCG``, version u32 = 1, nx / ny / nz u32, class count
  u32, then ``nx*ny*nz`` label bytes with x slowest (C order of the
  (nx, ny, nz) array).
* TNSR: magic ``TNSR``, version u32 = 1, ndim u32, one u32 per dim, a
  dtype tag u8 (1 = float32, 2 = float64), then the row-major payload.

Visibility masks reuse the OCCG container with 2 classes (0 = invisible,
1 = visible). Write-then-read round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import classes
from .errors import DataError

_OCCG_MAGIC = b"OCCG"
_TNSR_MAGIC = b"TNSR"
_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def write_occg(path, labels: np.ndarray, num_classes: int) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise DataError(f"label grid must be 3D, got {labels.shape}")
    if num_classes < 1 or num_classes > 255:
        raise DataError(f"class count {num_classes} not storable in bytes")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels out of range [0, {num_classes})")
    nx, ny, nz = labels.shape
    header = _OCCG_MAGIC + struct.pack("<5I", 1, nx, ny, nz, num_classes)
    payload = np.ascontiguousarray(labels, dtype=np.uint8).tobytes()
    Path(path).write_bytes(header + payload)


def read_occg(path) -> tuple[np.ndarray, int]:
    """Returns (labels (nx, ny, nz) uint8, num_classes)."""
    raw = _read(path)
    if raw[:4] != _OCCG_MAGIC:
        raise DataError(f"{path}: not an OCCG file")
    version, nx, ny, nz, L = struct.unpack_from("<5I", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported OCCG version {version}")
    n = nx * ny * nz
    body = raw[24:]
    if len(body) != n:
        raise DataError(f"{path}: expected {n} label bytes, got {len(body)}")
    labels = np.frombuffer(body, dtype=np.uint8).reshape(nx, ny, nz).copy()
    if labels.size and labels.max() >= L:
        raise DataError(f"{path}: label {labels.max()} >= class count {L}")
    return labels, L


def write_tnsr(path, tensor: np.ndarray) -> None:
    tensor = np.asarray(tensor)
    dt = np.dtype(tensor.dtype)
    if dt not in _TAGS_BY_KIND:
        raise DataError(f"TNSR stores float32/float64, got {dt}")
    dims = tensor.shape
    header = _TNSR_MAGIC + struct.pack("<2I", 1, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<B", _TAGS_BY_KIND[dt])
    payload = np.ascontiguousarray(tensor).astype(dt.newbyteorder("<")).tobytes()
    Path(path).write_bytes(header + payload)


def read_tnsr(path) -> np.ndarray:
    raw = _read(path)
    if raw[:4] != _TNSR_MAGIC:
        raise DataError(f"{path}: not a TNSR file")
    version, ndim = struct.unpack_from("<2I", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported TNSR version {version}")
    dims = struct.unpack_from(f"<{ndim}I", raw, 12)
    off = 12 + 4 * ndim
    (tag,) = struct.unpack_from("<B", raw, off)
    if tag not in _DTYPE_TAGS:
        raise DataError(f"{path}: unknown dtype tag {tag}")
    dt = _DTYPE_TAGS[tag]
    body = raw[off + 1:]
    n = int(np.prod(dims)) if dims else 1
    if len(body) != n * dt.itemsize:
        raise DataError(f"{path}: payload size mismatch")
    return np.frombuffer(body, dtype=dt).reshape(dims).copy()


def write_mask(path, visible: np.ndarray) -> None:
    write_occg(path, np.asarray(visible, dtype=bool).astype(np.uint8), 2)


def read_mask(path) -> np.ndarray:
    labels, L = read_occg(path)
    if L != 2:
        raise DataError(f"{path}: visibility mask must have 2 classes, got {L}")
    return labels.astype(bool)


def _read(path) -> bytes:
    p = Path(path)
    if not p.exists():
        raise DataError(f"file not found: {p}")
    return p.read_bytes()


def bev_slice_image(labels: np.ndarray, z_index: int | None,
                    palette=classes.PALETTE) -> np.ndarray:
    """RGB image of one BEV slice or the max-over-z projection.

    Pixel (row, col) shows voxel (x = col, y = ny-1-row) so +x points
    right and +y points up. The projection takes the maximum semantic id
    in each pillar (free, the largest id, would otherwise always win;
    pillars with nothing but free stay free).
    """
    labels = np.asarray(labels).astype(np.int64)
    nx, ny, nz = labels.shape
    if z_index is None:
        masked = np.where(labels == len(palette) - 1, -1, labels)
        plane = masked.max(axis=2)
        plane = np.where(plane < 0, len(palette) - 1, plane)
    else:
        if not 0 <= z_index < nz:
            raise DataError(f"z index {z_index} out of range [0, {nz})")
        plane = labels[:, :, z_index]
    lut = np.asarray(palette, dtype=np.uint8)
    if plane.max() >= len(lut):
        raise DataError(f"label {plane.max()} has no palette entry")
    img = lut[plane]               # (nx, ny, 3)
    return img.transpose(1, 0, 2)[::-1]  # rows = y descending


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 portable pixmap from an (H, W, 3) uint8 array."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"image must be (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(image).tobytes())
