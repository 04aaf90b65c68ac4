"""Slow, independent reference implementations used only by tests.

Everything here is deliberately written as scalar Python loops against
the definitions, sharing no code with the fast paths it checks (camera
projection is re-derived inline; convolutions and matrix products are
naive nested loops). Do not import the sampling / tpv modules here.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import CameraModel, GridSpec


def oracle_gss(dists, cams, spec: GridSpec) -> np.ndarray:
    """Per-voxel re-derivation of global spatial sampling.

    ``dists`` only needs ``values`` / ``d_min`` / ``bin_size`` attributes.
    Triple loop over voxels, scalar pinhole projection, scalar 8-corner
    interpolation with a zero border, summed camera by camera.
    """
    out = np.zeros(spec.shape, dtype=np.float64)
    vs = spec.voxel_size
    cam_data = []
    for dist, cam in zip(dists, cams):
        vals = np.asarray(dist.values, dtype=np.float64).tolist()
        D, H, W = np.asarray(dist.values).shape
        R = cam.rotation.tolist()
        t = cam.translation.tolist()
        cam_data.append((vals, D, H, W, float(dist.d_min),
                         float(dist.bin_size), R, t, cam.fx, cam.fy,
                         cam.cx, cam.cy, cam.height, cam.width))

    for i in range(spec.nx):
        px = spec.x_min + (i + 0.5) * vs
        for j in range(spec.ny):
            py = spec.y_min + (j + 0.5) * vs
            for k in range(spec.nz):
                pz = spec.z_min + (k + 0.5) * vs
                total = 0.0
                for (vals, D, H, W, d_min, bin_size, R, t,
                     fx, fy, cx, cy, ih, iw) in cam_data:
                    qx = R[0][0] * px + R[0][1] * py + R[0][2] * pz + t[0]
                    qy = R[1][0] * px + R[1][1] * py + R[1][2] * pz + t[1]
                    qz = R[2][0] * px + R[2][1] * py + R[2][2] * pz + t[2]
                    if qz <= 1e-6:
                        continue
                    w = fx * qx / qz + cx
                    h = fy * qy / qz + cy
                    if not (0.0 <= h <= ih - 1 and 0.0 <= w <= iw - 1):
                        continue
                    db = (qz - d_min) / bin_size - 0.5
                    if db < -0.5 or db > D - 0.5:
                        continue
                    total += _tri(vals, D, H, W, db, h, w)
                out[i, j, k] = total
    return out


def _tri(vals, D, H, W, db, h, w):
    d0 = math.floor(db)
    h0 = math.floor(h)
    w0 = math.floor(w)
    fd = db - d0
    fh = h - h0
    fw = w - w0
    acc = 0.0
    for dd in (0, 1):
        for dh in (0, 1):
            for dw in (0, 1):
                di, hi, wi = d0 + dd, h0 + dh, w0 + dw
                if not (0 <= di < D and 0 <= hi < H and 0 <= wi < W):
                    continue
                weight = ((fd if dd else 1.0 - fd)
                          * (fh if dh else 1.0 - fh)
                          * (fw if dw else 1.0 - fw))
                acc += vals[di][hi][wi] * weight
    return acc


def oracle_matmul(lhs, rhs, mean_over_vanished: bool = False) -> np.ndarray:
    """Per-channel matrix product via scalar triple loop."""
    lhs = np.asarray(lhs, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if lhs.shape[0] != rhs.shape[0] or lhs.shape[2] != rhs.shape[1]:
        raise ValueError(f"shape mismatch: {lhs.shape} x {rhs.shape}")
    C, A, K = lhs.shape
    B = rhs.shape[2]
    ll = lhs.tolist()
    rr = rhs.tolist()
    out = np.zeros((C, A, B))
    for c in range(C):
        for a in range(A):
            row = ll[c][a]
            for b in range(B):
                s = 0.0
                for k in range(K):
                    s += row[k] * rr[c][k][b]
                out[c, a, b] = s / K if mean_over_vanished else s
    return out


def oracle_conv2d(x, weights, bias) -> np.ndarray:
    """Naive same-padded cross-correlation, nested loops only."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    c_out, c_in, k, _ = weights.shape
    _, A, B = x.shape
    p = (k - 1) // 2
    xl = x.tolist()
    wl = weights.tolist()
    out = np.zeros((c_out, A, B))
    for o in range(c_out):
        for a in range(A):
            for b in range(B):
                s = float(bias[o])
                for c in range(c_in):
                    for i in range(k):
                        ai = a + i - p
                        if not 0 <= ai < A:
                            continue
                        for j in range(k):
                            bj = b + j - p
                            if not 0 <= bj < B:
                                continue
                            s += xl[c][ai][bj] * wl[o][c][i][j]
                out[o, a, b] = s
    return out


def _oracle_stack(x, stack):
    for w, b in stack:
        x = oracle_conv2d(x, w, b)
    return x


def _normalize_stacks(convs):
    out = []
    for site in convs:
        if isinstance(site, (list, tuple)) and site and \
                isinstance(site[0], (list, tuple)):
            out.append([(np.asarray(w), np.asarray(b)) for w, b in site])
        else:
            w, b = site
            out.append([(np.asarray(w), np.asarray(b))])
    return out


def oracle_lti(e_bev, e_fv, e_sv, convs, mean_over_vanished: bool = True):
    """Step-by-step scalar evaluation of the tri-view interaction.

    ``convs`` lists the four sites (bev, fv, sv, fuse), each either one
    ``(weights, bias)`` pair or a sequence of pairs applied in order.
    """
    e_bev = np.asarray(e_bev, dtype=np.float64)
    e_fv = np.asarray(e_fv, dtype=np.float64)
    e_sv = np.asarray(e_sv, dtype=np.float64)
    conv_bev, conv_fv, conv_sv, conv_fuse = _normalize_stacks(convs)

    def swap(t):
        return np.ascontiguousarray(t.transpose(0, 2, 1))

    m_bev = oracle_matmul(e_sv, swap(e_fv), mean_over_vanished)
    i_bev = _oracle_stack(e_bev + m_bev, conv_bev)
    m_fv = oracle_matmul(swap(e_bev), e_sv, mean_over_vanished)
    i_fv = _oracle_stack(e_fv + m_fv, conv_fv)
    m_sv = oracle_matmul(e_bev, e_fv, mean_over_vanished)
    i_sv = _oracle_stack(e_sv + m_sv, conv_sv)
    m_s = oracle_matmul(i_sv, swap(i_fv), mean_over_vanished)
    return _oracle_stack(i_bev + m_s, conv_fuse)


def finite_diff(fn, point: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = grad.reshape(-1)
    x = point.copy()
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        f_plus = fn(x)
        xf[i] = orig - step
        f_minus = fn(x)
        xf[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def oracle_visibility(labels: np.ndarray, spec: GridSpec,
                      cams: list[CameraModel], free_class: int,
                      step_frac: float = 0.25) -> np.ndarray:
    """Dense ray-step visibility: sample the camera-to-voxel segment every
    ``step_frac * voxel_size`` meters and look for occupied cells strictly
    before the voxel's own cell. Frustum test re-derived inline."""
    occupied = np.asarray(labels) != free_class
    nx, ny, nz = spec.shape
    vs = spec.voxel_size
    out = np.zeros((nx, ny, nz), dtype=bool)
    ds = step_frac * vs

    for cam in cams:
        R = cam.rotation
        t = cam.translation
        origin = -(R.T @ t)
        for i in range(nx):
            px = spec.x_min + (i + 0.5) * vs
            for j in range(ny):
                py = spec.y_min + (j + 0.5) * vs
                for k in range(nz):
                    if out[i, j, k]:
                        continue
                    pz = spec.z_min + (k + 0.5) * vs
                    q = R @ np.array([px, py, pz]) + t
                    if q[2] <= 1e-6:
                        continue
                    w = cam.fx * q[0] / q[2] + cam.cx
                    h = cam.fy * q[1] / q[2] + cam.cy
                    if not (0 <= h <= cam.height - 1
                            and 0 <= w <= cam.width - 1):
                        continue
                    target = np.array([px, py, pz])
                    seg = target - origin
                    length = float(np.linalg.norm(seg))
                    n_steps = max(1, int(length / ds))
                    clear = True
                    for s in range(n_steps + 1):
                        p = origin + seg * (s / n_steps)
                        ci = int((p[0] - spec.x_min) // vs)
                        cj = int((p[1] - spec.y_min) // vs)
                        ck = int((p[2] - spec.z_min) // vs)
                        if not (0 <= ci < nx and 0 <= cj < ny
                                and 0 <= ck < nz):
                            continue
                        if (ci, cj, ck) == (i, j, k):
                            break
                        if occupied[ci, cj, ck]:
                            clear = False
                            break
                    out[i, j, k] = clear
    return out
