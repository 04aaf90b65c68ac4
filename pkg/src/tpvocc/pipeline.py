"""Configuration, parameter sets, and the end-to-end command runners.

Everything the service endpoints and the CLI expose lives here as plain
functions over a :class:`PipelineConfig`. A scene directory is the unit
of exchange between commands:

    scene.json        geometry + depth-bin metadata of the scene
    rig.json          grid + cameras the scene was rendered with
    labels.occg       ground-truth labels
    visibility.occg   per-voxel visibility mask (OCCG container, 2 classes)
    f_bev.tnsr        synthetic BEV feature map (C, nx, ny)
    depth_XX.tnsr     per-camera depth distributions (D, H, W)

Convolution parameters serialize as one TNSR pair per layer, named
``<site>.<layer>.w.tnsr`` / ``<site>.<layer>.b.tnsr``; the sites are
extract_bev / extract_fv / extract_sv, lti_bev / lti_fv / lti_sv /
lti_fuse, bev_0.. for the BEV encoder stack, and head.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classes
from .augment import CutMixConfig, SceneBundle, bev_flip, cutmix
from .errors import ConfigError, DataError, NumericError
from .evaluation import EvalReport, accumulate, report_to_dict
from .formats import (bev_slice_image, read_mask, read_occg, read_tnsr,
                      write_mask, write_occg, write_ppm, write_tnsr)
from .geometry import DEFAULT_GRID, CameraModel, GridSpec, load_rig, save_rig
from .head import (channel_to_height, cross_entropy, fuse, height_to_channel,
                   sgd_step)
from .sampling import DepthDistribution, global_spatial_sampling
from .scenes import (compute_visibility, generate_scene,
                     render_depth_distribution, save_scene_json)
from .tpv import (Conv2dParams, conv2d, conv2d_backward, extract_tpv,
                  init_conv, lti_backward, lti_interact, spatial_to_channel)

LTI_SITES = ("lti_bev", "lti_fv", "lti_sv", "lti_fuse")
EXTRACT_SITES = ("extract_bev", "extract_fv", "extract_sv")
BENCH_MODES = ("lti", "conv3d_ref", "gss")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridSpec = DEFAULT_GRID
    rig_path: str | None = None
    channels: int = 8
    kernel_size: int = 3
    conv_layers: int = 1
    bev_conv_layers: int = 1
    depth_activation: str = "sigmoid"
    sampling_mode: str = "trilinear"
    mean_over_vanished: bool = True
    d_min: float = 1.0
    bin_size: float = 0.5
    n_bins: int = 60
    num_classes: int = classes.NUM_CLASSES
    n_boxes: int = 3
    n_cameras: int = 2
    cam_height: int = 16
    cam_width: int = 24
    render_mode: str = "onehot"
    render_decay: float = 1.0
    feature_scale: float = 0.1
    cutmix: CutMixConfig = field(default_factory=CutMixConfig)
    seed: int = 0
    precision: str = "single"
    workers: int = 1
    deterministic: bool = False

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        if self.kernel_size not in (1, 3):
            raise ConfigError(f"kernel_size must be 1 or 3, got {self.kernel_size}")
        if self.conv_layers not in (1, 2):
            raise ConfigError(f"conv_layers must be 1 or 2, got {self.conv_layers}")
        if not 1 <= self.bev_conv_layers <= 3:
            raise ConfigError(
                f"bev_conv_layers must be in [1, 3], got {self.bev_conv_layers}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be single|double, got {self.precision}")
        if self.depth_activation not in ("sigmoid", "softmax", "none"):
            raise ConfigError(f"unknown depth_activation {self.depth_activation!r}")
        if self.sampling_mode not in ("trilinear", "nearest_depth"):
            raise ConfigError(f"unknown sampling_mode {self.sampling_mode!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def free_class(self) -> int:
        return self.num_classes - 1

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "PipelineConfig":
        kw = {}
        if "grid" in d:
            kw["grid"] = GridSpec.from_dict(d["grid"])
        if "rig" in d and d["rig"] is not None:
            rig = Path(d["rig"])
            if base_dir is not None and not rig.is_absolute():
                rig = base_dir / rig
            if not rig.exists():
                raise ConfigError(f"rig file not found: {rig}")
            kw["rig_path"] = str(rig)
        if "cutmix" in d:
            kw["cutmix"] = CutMixConfig.from_dict(d["cutmix"])
        if "depth" in d:
            dep = d["depth"]
            kw["d_min"] = float(dep.get("d_min", cls.d_min))
            kw["bin_size"] = float(dep.get("bin_size", cls.bin_size))
            kw["n_bins"] = int(dep.get("n_bins", cls.n_bins))
        simple = (
            "channels", "kernel_size", "conv_layers", "bev_conv_layers",
            "depth_activation", "sampling_mode", "mean_over_vanished",
            "num_classes", "n_boxes", "n_cameras", "cam_height", "cam_width",
            "render_mode", "render_decay", "feature_scale", "seed",
            "precision", "workers", "deterministic",
        )
        for name in simple:
            if name in d:
                kw[name] = d[name]
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(f"bad pipeline config: {e}") from e

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        return cls.from_dict(doc, base_dir=path.parent)


def ring_rig(spec: GridSpec, n_cameras: int, height: int, width: int,
             pitch_deg: float = 25.0) -> list[CameraModel]:
    """Evenly-yawed outward-looking cameras at the grid center.

    Cameras pitch down by ``pitch_deg`` so the ground plane falls inside
    the vertical field of view at desk-scale grid sizes.
    """
    cx = 0.5 * (spec.x_min + spec.x_max)
    cy = 0.5 * (spec.y_min + spec.y_max)
    cz = spec.z_min + 0.6 * (spec.z_max - spec.z_min)
    pos = np.array([cx, cy, cz])
    phi = math.radians(pitch_deg)
    pitch = np.array([[1.0, 0.0, 0.0],
                      [0.0, math.cos(phi), -math.sin(phi)],
                      [0.0, math.sin(phi), math.cos(phi)]])
    cams = []
    for i in range(n_cameras):
        yaw = 2.0 * math.pi * i / n_cameras
        c, s = math.cos(yaw), math.sin(yaw)
        # rows = camera axes in ego coordinates: right, down, forward
        R = pitch @ np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])
        cams.append(CameraModel(
            fx=0.5 * width, fy=0.5 * width,
            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
            rotation=R, translation=-R @ pos,
            height=height, width=width,
        ))
    return cams


def resolve_rig(cfg: PipelineConfig) -> tuple[GridSpec, list[CameraModel]]:
    """Grid and cameras for a config: its rig file, or a default ring."""
    if cfg.rig_path is not None:
        grid, cams = load_rig(cfg.rig_path)
        grid = grid or cfg.grid
        if not cams:
            raise ConfigError(f"rig {cfg.rig_path} declares no cameras")
        return grid, cams
    return cfg.grid, ring_rig(cfg.grid, cfg.n_cameras,
                              cfg.cam_height, cfg.cam_width)


# ---------------------------------------------------------------------------
# parameter sets


def init_params(cfg: PipelineConfig, grid: GridSpec) -> dict[str, Conv2dParams]:
    """Seeded parameter set for every conv site, in a fixed site order."""
    rng = np.random.default_rng(cfg.seed)
    C, k, dt = cfg.channels, cfg.kernel_size, cfg.dtype
    params: dict[str, Conv2dParams] = {}

    def add_site(site: str, c_in: int):
        for layer in range(cfg.conv_layers):
            params[f"{site}.{layer}"] = init_conv(
                c_in if layer == 0 else C, C, k, rng, dt)

    add_site("extract_bev", grid.nz)
    add_site("extract_fv", grid.nx)
    add_site("extract_sv", grid.ny)
    for site in LTI_SITES:
        add_site(site, C)
    for i in range(cfg.bev_conv_layers):
        params[f"bev_{i}.0"] = init_conv(C, C, k, rng, dt)
    params["head.0"] = init_conv(C, grid.nz * cfg.num_classes, 1, rng, dt)
    return params


def _site_stack(params: dict, site: str) -> tuple[Conv2dParams, ...]:
    layers = sorted(
        (name for name in params if name.startswith(site + ".")),
        key=lambda n: int(n.rsplit(".", 1)[1]),
    )
    if not layers:
        raise DataError(f"parameter set has no site {site!r}")
    return tuple(params[name] for name in layers)


def save_params(params: dict[str, Conv2dParams], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, p in params.items():
        write_tnsr(out / f"{name}.w.tnsr", p.weights)
        write_tnsr(out / f"{name}.b.tnsr", p.bias)


def load_params(params_dir) -> dict[str, Conv2dParams]:
    d = Path(params_dir)
    if not d.is_dir():
        raise DataError(f"parameter directory not found: {d}")
    params = {}
    for wfile in sorted(d.glob("*.w.tnsr")):
        name = wfile.name[:-len(".w.tnsr")]
        bfile = d / f"{name}.b.tnsr"
        if not bfile.exists():
            raise DataError(f"missing bias file for site {name!r}")
        params[name] = Conv2dParams(
            weights=read_tnsr(wfile), bias=read_tnsr(bfile))
    if not params:
        raise DataError(f"no parameters found in {d}")
    return params


# ---------------------------------------------------------------------------
# scene directories


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_synth(cfg: PipelineConfig, out_dir) -> dict:
    """Generate a scene directory: labels, mask, features, depth renders."""
    grid, cams = resolve_rig(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scene = generate_scene(
        grid, cfg.n_boxes, cfg.seed, num_classes=cfg.num_classes,
        free_class=cfg.free_class,
        clear_xy=[(c.center[0], c.center[1]) for c in cams])
    visible = compute_visibility(scene, cams)
    rng = np.random.default_rng(cfg.seed + 1)
    f_bev = (cfg.feature_scale
             * rng.standard_normal((cfg.channels, grid.nx, grid.ny))
             ).astype(cfg.dtype)

    save_scene_json(out / "scene.json", scene)
    meta = json.loads((out / "scene.json").read_text())
    meta["depth"] = {"d_min": cfg.d_min, "bin_size": cfg.bin_size,
                     "n_bins": cfg.n_bins, "render_mode": cfg.render_mode}
    (out / "scene.json").write_text(json.dumps(meta, indent=2))

    save_rig(out / "rig.json", grid, cams)
    write_occg(out / "labels.occg", scene.labels, cfg.num_classes)
    write_mask(out / "visibility.occg", visible)
    write_tnsr(out / "f_bev.tnsr", f_bev)
    for i, cam in enumerate(cams):
        dist = render_depth_distribution(
            scene, cam, cfg.d_min, cfg.bin_size, cfg.n_bins,
            mode=cfg.render_mode, decay=cfg.render_decay)
        write_tnsr(out / f"depth_{i:02d}.tnsr", dist.values)
    files = sorted(p.name for p in out.iterdir())
    return {"out_dir": str(out), "files": files,
            "checksums": {f: _sha256(out / f) for f in files}}


def load_scene_dir(scene_dir, cfg: PipelineConfig):
    """Load (grid, cams, dists, labels, visible, f_bev) from a scene dir."""
    d = Path(scene_dir)
    if not d.is_dir():
        raise DataError(f"scene directory not found: {d}")
    grid, cams = load_rig(d / "rig.json")
    grid = grid or cfg.grid
    labels, L = read_occg(d / "labels.occg")
    if L != cfg.num_classes:
        raise DataError(
            f"scene has {L} classes, config expects {cfg.num_classes}")
    visible = read_mask(d / "visibility.occg")
    meta = json.loads((d / "scene.json").read_text()) \
        if (d / "scene.json").exists() else {}
    dep = meta.get("depth", {})
    d_min = float(dep.get("d_min", cfg.d_min))
    bin_size = float(dep.get("bin_size", cfg.bin_size))
    dists = []
    for i in range(len(cams)):
        path = d / f"depth_{i:02d}.tnsr"
        if not path.exists():
            raise DataError(f"missing depth distribution {path}")
        dists.append(DepthDistribution(
            values=read_tnsr(path), d_min=d_min, bin_size=bin_size,
            activation="none"))
    f_path = d / "f_bev.tnsr"
    if f_path.exists():
        f_bev = read_tnsr(f_path).astype(cfg.dtype)
    else:
        f_bev = np.zeros((cfg.channels, grid.nx, grid.ny), dtype=cfg.dtype)
    if f_bev.shape != (cfg.channels, grid.nx, grid.ny):
        raise DataError(
            f"BEV features {f_bev.shape} do not match "
            f"({cfg.channels}, {grid.nx}, {grid.ny})")
    return grid, cams, dists, labels.astype(np.int64), visible, f_bev


# ---------------------------------------------------------------------------
# forward pipeline / fit / eval


def _forward(cfg, grid, params, occ, f_bev):
    """Occupancy grid -> logits, returning intermediates for the backward."""
    occ_p = occ.astype(cfg.dtype)
    ext = [_site_stack(params, s) for s in EXTRACT_SITES]
    e_bev, e_fv, e_sv = extract_tpv(occ_p, *ext)
    convs = tuple(_site_stack(params, s) for s in LTI_SITES)
    e_s = lti_interact(e_bev, e_fv, e_sv, convs, cfg.mean_over_vanished)
    fused = fuse(f_bev, e_s)
    bev_stacks = [_site_stack(params, f"bev_{i}")
                  for i in range(cfg.bev_conv_layers)]
    xs = [fused]
    for stack in bev_stacks:
        for p in stack:
            xs.append(conv2d(xs[-1], p))
    head = _site_stack(params, "head")[0]
    head_out = conv2d(xs[-1], head)
    logits = channel_to_height(head_out, cfg.num_classes)
    cache = {
        "occ_p": occ_p, "e_bev": e_bev, "e_fv": e_fv, "e_sv": e_sv,
        "convs": convs, "xs": xs, "head": head, "ext": ext,
        "bev_stacks": bev_stacks,
    }
    return logits, cache


def _backward(cfg, params, cache, grad_logits):
    """Gradient of the loss w.r.t. every conv parameter."""
    grads: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    d_head_out = height_to_channel(grad_logits)
    xs = cache["xs"]
    d_x, gw, gb = conv2d_backward(xs[-1], cache["head"], d_head_out)
    grads["head.0"] = (gw, gb)

    flat_bev = [(f"bev_{i}.{j}", p)
                for i, stack in enumerate(cache["bev_stacks"])
                for j, p in enumerate(stack)]
    for idx in range(len(flat_bev) - 1, -1, -1):
        name, p = flat_bev[idx]
        d_x, gw, gb = conv2d_backward(xs[idx], p, d_x)
        grads[name] = (gw, gb)

    d_e_s = d_x  # fuse() is an elementwise add; BEV features are fixed
    d_bev, d_fv, d_sv, lti_grads = lti_backward(
        cache["e_bev"], cache["e_fv"], cache["e_sv"], cache["convs"],
        d_e_s, cfg.mean_over_vanished)
    for site, stack_grads in zip(LTI_SITES, lti_grads):
        for j, (gw, gb) in enumerate(stack_grads):
            grads[f"{site}.{j}"] = (gw, gb)

    from .tpv import _stack_backward  # occupancy input is fixed; weights only
    occ_p = cache["occ_p"]
    for site, axis, d_view in zip(
            EXTRACT_SITES, ("Z", "X", "Y"), (d_bev, d_fv, d_sv)):
        stack = _site_stack(params, site)
        _, stack_grads = _stack_backward(
            spatial_to_channel(occ_p, axis), stack, d_view)
        for j, (gw, gb) in enumerate(stack_grads):
            grads[f"{site}.{j}"] = (gw, gb)
    return grads


def run_pipeline(cfg: PipelineConfig, scene_dir, out_path,
                 params_dir=None) -> dict:
    """Sample, embed, interact, predict, evaluate; write OCCG + report."""
    grid, cams, dists, labels, visible, f_bev = load_scene_dir(scene_dir, cfg)
    params = load_params(params_dir) if params_dir else init_params(cfg, grid)
    occ = global_spatial_sampling(dists, cams, grid, mode=cfg.sampling_mode,
                                  workers=cfg.workers)
    if not np.all(np.isfinite(occ)):
        raise NumericError("sampling produced non-finite occupancy")
    logits, _ = _forward(cfg, grid, params, occ, f_bev)
    if not np.all(np.isfinite(logits)):
        raise NumericError("prediction produced non-finite logits")
    pred = np.argmax(logits, axis=-1)  # ties break to the lowest class id

    report = EvalReport(num_classes=cfg.num_classes, free_class=cfg.free_class)
    accumulate(report, pred, labels, visible)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_occg(out_path, pred, cfg.num_classes)
    report_dict = report_to_dict(
        report, classes.CLASS_NAMES
        if cfg.num_classes == classes.NUM_CLASSES else None)
    report_path = out_path.with_suffix(out_path.suffix + ".report.json")
    report_path.write_text(json.dumps(report_dict, indent=2))
    return {
        "prediction": str(out_path),
        "prediction_sha256": _sha256(out_path),
        "report_path": str(report_path),
        "report": report_dict,
    }


def run_fit(cfg: PipelineConfig, scene_dir, steps: int, lr: float,
            out_params) -> dict:
    """Gradient-descent fit of all conv parameters on one scene.

    The sampled occupancy is constant w.r.t. the parameters, so it is
    computed once. The loss trace has ``steps + 1`` entries (before each
    update, plus the final state).
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    grid, cams, dists, labels, visible, f_bev = load_scene_dir(scene_dir, cfg)
    params = init_params(cfg, grid)
    occ = global_spatial_sampling(dists, cams, grid, mode=cfg.sampling_mode,
                                  workers=cfg.workers)

    losses = []
    for step in range(steps):
        logits, cache = _forward(cfg, grid, params, occ, f_bev)
        loss, grad_logits = cross_entropy(logits, labels, visible)
        if not math.isfinite(loss):
            raise NumericError(f"loss became non-finite at step {step}")
        losses.append(loss)
        grads = _backward(cfg, params, cache, grad_logits)
        params = sgd_step(params, grads, lr)
    logits, _ = _forward(cfg, grid, params, occ, f_bev)
    final, _ = cross_entropy(logits, labels, visible)
    if not math.isfinite(final):
        raise NumericError(f"loss became non-finite at step {steps}")
    losses.append(final)

    if out_params:
        save_params(params, out_params)
    return {
        "losses": losses,
        "initial_loss": losses[0],
        "final_loss": losses[-1],
        "steps": steps,
        "lr": lr,
        "params_dir": str(out_params) if out_params else None,
    }


def run_eval(pred_path, truth_path, mask_path,
             free_class: int | None = None) -> dict:
    pred, lp = read_occg(pred_path)
    truth, lt = read_occg(truth_path)
    if lp != lt:
        raise DataError(f"prediction has {lp} classes, truth has {lt}")
    visible = read_mask(mask_path)
    report = EvalReport(
        num_classes=lt,
        free_class=lt - 1 if free_class is None else free_class)
    accumulate(report, pred, truth, visible)
    return report_to_dict(
        report,
        classes.CLASS_NAMES if lt == classes.NUM_CLASSES else None)


def run_augment(cfg: PipelineConfig, scene_dirs, out_dir,
                flip_axis: str | None = None,
                flip_probability: float = 0.0) -> dict:
    """Mix scene bundles per the cutmix config, optionally flip, save."""
    if not scene_dirs:
        raise DataError("augment needs at least one scene directory")
    bundles = []
    grids = []
    for sdir in scene_dirs:
        grid, _, _, labels, visible, f_bev = load_scene_dir(sdir, cfg)
        bundles.append(SceneBundle(features=f_bev, labels=labels,
                                   visible=visible))
        grids.append(grid)
    mixed, provenance = cutmix(bundles, cfg.cutmix)
    if flip_axis is not None:
        mixed = bev_flip(mixed, flip_axis, flip_probability, cfg.seed)
        provenance["flip"] = {"axis": flip_axis,
                              "probability": flip_probability,
                              "seed": cfg.seed}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_occg(out / "labels.occg", mixed.labels, cfg.num_classes)
    write_mask(out / "visibility.occg", mixed.visible)
    write_tnsr(out / "f_bev.tnsr", mixed.features)
    src_rig = Path(scene_dirs[0]) / "rig.json"
    if src_rig.exists():
        (out / "rig.json").write_bytes(src_rig.read_bytes())
    provenance["sources"] = [str(s) for s in scene_dirs]
    (out / "provenance.json").write_text(json.dumps(provenance, indent=2))
    return {"out_dir": str(out), "provenance": provenance}


def run_dump_slice(grid_path, z_index, out_image) -> dict:
    labels, _ = read_occg(grid_path)
    img = bev_slice_image(labels, z_index)
    write_ppm(out_image, img)
    return {"image": str(out_image), "width": img.shape[1],
            "height": img.shape[0],
            "view": "max" if z_index is None else f"z={z_index}"}
