"""Latency microbenchmarks: planar interaction path vs dense 3D convs.

Times three things at the configured grid size and channel count, on the
same machine with the same BLAS: the planar embedding extraction plus
tri-view interaction, a 3-layer dense 3x3x3 convolution stack over the
full volume (the stand-in for a voxel-feature pipeline), and the global
spatial sampling itself. One warm-up run is discarded and the median of
the timed repeats is reported per stage, together with a checksum of the
outputs so reproducibility is observable.
"""

from __future__ import annotations

import hashlib
import statistics
import time

import numpy as np

from .errors import ConfigError, NumericError
from .sampling import activate_depth, global_spatial_sampling
from .tpv import _correlate, extract_tpv, init_conv, lti_interact


def conv3d_reference(vol: np.ndarray, layers) -> np.ndarray:
    """Dense 3x3x3 conv stack over a (C, nx, ny, nz) volume.

    Same zero padding, stride 1. Each 3D layer is evaluated as the sum of
    three same-padded 2D correlations over neighboring z slices, which
    keeps memory bounded while using the same matmul machinery as the
    planar path (an apples-to-apples arithmetic comparison).
    """
    x = vol
    for weights, bias in layers:
        c_out = weights.shape[0]
        nzdim = x.shape[3]
        out = np.zeros((c_out, x.shape[1], x.shape[2], nzdim), dtype=x.dtype)
        for z in range(nzdim):
            acc = None
            for dz in (0, 1, 2):
                zi = z + dz - 1
                if not 0 <= zi < nzdim:
                    continue
                part = _correlate(
                    np.ascontiguousarray(x[:, :, :, zi]),
                    np.ascontiguousarray(weights[:, :, :, :, dz]))
                acc = part if acc is None else acc + part
            out[:, :, :, z] = acc + bias[:, None, None]
        x = out
    return x


def _checksum(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def _time_stage(fn, repeats: int):
    fn()  # warm-up, excluded
    times = []
    checksums = set()
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append((time.perf_counter() - t0) * 1e3)
        checksums.add(_checksum(out))
    return times, checksums, out


def run_bench(cfg, mode: str, repeats: int) -> dict:
    """Median per-stage wall time (ms) for one benchmark mode."""
    from .pipeline import resolve_rig  # deferred: pipeline is heavier

    if mode not in ("lti", "conv3d_ref", "gss"):
        raise ConfigError(f"unknown bench mode {mode!r}")
    if repeats < 3:
        raise ConfigError(f"repeats must be >= 3, got {repeats}")

    grid = cfg.grid
    C, dt = cfg.channels, cfg.dtype
    rng = np.random.default_rng(cfg.seed)
    stages: dict[str, dict] = {}
    all_checksums: set[str] = set()

    if mode == "lti":
        occ = rng.uniform(0.0, 2.0, size=grid.shape).astype(dt)
        p_bev = init_conv(grid.nz, C, cfg.kernel_size, rng, dt)
        p_fv = init_conv(grid.nx, C, cfg.kernel_size, rng, dt)
        p_sv = init_conv(grid.ny, C, cfg.kernel_size, rng, dt)
        convs = tuple(init_conv(C, C, cfg.kernel_size, rng, dt)
                      for _ in range(4))
        state = {}

        def stage_extract():
            state["tpv"] = extract_tpv(occ, p_bev, p_fv, p_sv)
            return np.concatenate([e.ravel() for e in state["tpv"]])

        def stage_interact():
            return lti_interact(*state["tpv"], convs, cfg.mean_over_vanished)

        for name, fn in (("extract_tpv", stage_extract),
                         ("lti_interact", stage_interact)):
            times, sums, _ = _time_stage(fn, repeats)
            stages[name] = {"median_ms": statistics.median(times),
                            "times_ms": times}
            all_checksums |= sums

    elif mode == "conv3d_ref":
        vol = rng.standard_normal((C,) + grid.shape).astype(dt)
        layers = []
        s = (C * 27) ** -0.5
        for _ in range(3):
            w = rng.uniform(-s, s, size=(C, C, 3, 3, 3)).astype(dt)
            b = np.zeros(C, dtype=dt)
            layers.append((w, b))
        times, sums, _ = _time_stage(
            lambda: conv3d_reference(vol, layers), repeats)
        stages["conv3d_ref"] = {"median_ms": statistics.median(times),
                                "times_ms": times}
        all_checksums |= sums

    else:  # gss
        grid, cams = resolve_rig(cfg)
        dists = [activate_depth(
            rng.standard_normal((cfg.n_bins, cam.height, cam.width)),
            cfg.depth_activation if cfg.depth_activation != "none" else "sigmoid",
            d_min=cfg.d_min, bin_size=cfg.bin_size) for cam in cams]
        times, sums, _ = _time_stage(
            lambda: global_spatial_sampling(
                dists, cams, grid, mode=cfg.sampling_mode,
                workers=cfg.workers),
            repeats)
        stages["global_spatial_sampling"] = {
            "median_ms": statistics.median(times), "times_ms": times}
        all_checksums |= sums

    n_stages = len(stages)
    if cfg.deterministic and len(all_checksums) != n_stages:
        raise NumericError(
            f"outputs not checksum-stable across repeats: "
            f"{len(all_checksums)} checksums for {n_stages} stages")
    return {
        "mode": mode,
        "repeats": repeats,
        "grid": [grid.nx, grid.ny, grid.nz],
        "channels": C,
        "precision": cfg.precision,
        "stages": stages,
        "total_median_ms": sum(s["median_ms"] for s in stages.values()),
        "checksums": sorted(all_checksums),
    }
