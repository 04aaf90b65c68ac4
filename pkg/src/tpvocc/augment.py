"""Scene mixing and flipping over BEV-aligned bundles.

A scene bundle carries the BEV feature map, the per-voxel labels, and the
per-voxel visibility mask; every augmentation moves all three together so
a voxel can never end up with a visibility state that disagrees with the
donor scene it was copied from.

Mixing cuts the grid at the center of the X and/or Y axis and fills each
region verbatim from one randomly drawn donor. Because visibility radiates
outward from the grid center, center-anchored regions are self-contained:
the occluders of a voxel live in its own region, so recombining regions
across scenes cannot mark an occluded voxel visible. Cutting at random
positions instead is available behind a flag purely to demonstrate that
failure mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class SceneBundle:
    """BEV features (C, nx, ny), labels (nx, ny, nz), visibility mask."""

    features: np.ndarray
    labels: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features)
        l = np.asarray(self.labels)
        v = np.asarray(self.visible, dtype=bool)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", l)
        object.__setattr__(self, "visible", v)
        if l.ndim != 3 or v.shape != l.shape:
            raise DataError(
                f"labels {l.shape} and mask {v.shape} must be equal 3D shapes"
            )
        if f.ndim != 3 or f.shape[1:] != l.shape[:2]:
            raise DataError(
                f"features {f.shape} do not cover the ({l.shape[0]}, "
                f"{l.shape[1]}) BEV plane"
            )

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class CutMixConfig:
    cut_x: bool = True
    cut_y: bool = False
    mix_ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise DataError(f"mix_ratio must be in [0, 1], got {self.mix_ratio}")

    @classmethod
    def from_dict(cls, d: dict) -> "CutMixConfig":
        return cls(
            cut_x=bool(d.get("cut_x", True)),
            cut_y=bool(d.get("cut_y", False)),
            mix_ratio=float(d.get("mix_ratio", 1.0)),
            rng_seed=int(d.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "cut_x": self.cut_x, "cut_y": self.cut_y,
            "mix_ratio": self.mix_ratio, "seed": self.rng_seed,
        }


def _spans(n: int, cut: bool, rng, random_position: bool):
    if not cut:
        return [(0, n)]
    # center cut: the upper region starts at n // 2 (so with odd n the
    # extra index lands in the upper region)
    pos = int(rng.integers(1, n)) if random_position else n // 2
    return [(0, pos), (pos, n)]


def cutmix(samples: list[SceneBundle], cfg: CutMixConfig,
           random_position: bool = False):
    """Mix center-anchored regions of the samples into one new bundle.

    With probability ``1 - mix_ratio`` the result is sample 0 untouched.
    Otherwise each region (2 per cut axis, 4 with both) draws its donor
    uniformly and copies features, labels, and mask verbatim. Returns
    ``(bundle, provenance)`` where the provenance lists every region's
    x/y span and donor index, enough to replay the mix exactly.
    """
    if not samples:
        raise DataError("cutmix needs at least one sample")
    shapes = {s.grid_shape for s in samples}
    if len(shapes) != 1:
        raise DataError(f"samples disagree on grid shape: {sorted(shapes)}")
    nx, ny, _ = samples[0].grid_shape

    rng = np.random.default_rng(cfg.rng_seed)
    mixing = (cfg.cut_x or cfg.cut_y) and float(rng.random()) < cfg.mix_ratio
    if not mixing:
        base = samples[0]
        out = SceneBundle(
            features=base.features.copy(),
            labels=base.labels.copy(),
            visible=base.visible.copy(),
        )
        prov = {
            "mixed": False,
            "regions": [{"x": [0, nx], "y": [0, ny], "donor": 0}],
        }
        return out, prov

    if len(samples) < 2:
        raise DataError("mixing triggered but only one sample was provided")

    x_spans = _spans(nx, cfg.cut_x, rng, random_position)
    y_spans = _spans(ny, cfg.cut_y, rng, random_position)
    regions = [(xs, ys) for xs in x_spans for ys in y_spans]
    donors = rng.integers(0, len(samples), size=len(regions))

    out = SceneBundle(
        features=np.empty_like(samples[0].features),
        labels=np.empty_like(samples[0].labels),
        visible=np.empty_like(samples[0].visible),
    )
    prov_regions = []
    for ((x0, x1), (y0, y1)), donor in zip(regions, donors):
        d = samples[int(donor)]
        out.features[:, x0:x1, y0:y1] = d.features[:, x0:x1, y0:y1]
        out.labels[x0:x1, y0:y1] = d.labels[x0:x1, y0:y1]
        out.visible[x0:x1, y0:y1] = d.visible[x0:x1, y0:y1]
        prov_regions.append(
            {"x": [int(x0), int(x1)], "y": [int(y0), int(y1)],
             "donor": int(donor)}
        )
    return out, {"mixed": True, "regions": prov_regions}


def bev_flip(bundle: SceneBundle, axis: str, probability: float,
             rng_seed: int) -> SceneBundle:
    """Reverse one BEV axis of features, labels, and mask together.

    Triggered with the given probability under the seeded RNG; when not
    triggered the bundle is returned unchanged (same object).
    """
    if axis not in ("X", "Y"):
        raise DataError(f"flip axis must be X or Y, got {axis!r}")
    rng = np.random.default_rng(rng_seed)
    if float(rng.random()) >= probability:
        return bundle
    if axis == "X":
        return SceneBundle(
            features=bundle.features[:, ::-1, :].copy(),
            labels=bundle.labels[::-1].copy(),
            visible=bundle.visible[::-1].copy(),
        )
    return SceneBundle(
        features=bundle.features[:, :, ::-1].copy(),
        labels=bundle.labels[:, ::-1].copy(),
        visible=bundle.visible[:, ::-1].copy(),
    )
