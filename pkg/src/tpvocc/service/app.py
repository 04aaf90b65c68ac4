"""FastAPI application wrapping the pipeline runners.

Every endpoint loads the referenced config, applies request-level
overrides (seed, determinism, workers), runs the corresponding pipeline
function, and returns its JSON summary. Library errors surface as
HTTP 400 with a structured body whose ``kind`` field (config / data /
numeric) lets clients map failures to stable exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..bench import run_bench
from ..errors import TpvoccError
from ..pipeline import (PipelineConfig, run_augment, run_dump_slice, run_eval,
                        run_fit, run_pipeline, run_synth)
from . import schemas as S


def _load_config(path: str, req: S.ConfigOverrides) -> PipelineConfig:
    cfg = PipelineConfig.from_json(path)
    overrides = {}
    if req.seed is not None:
        overrides["seed"] = req.seed
    if req.deterministic is not None:
        overrides["deterministic"] = req.deterministic
    if req.workers is not None:
        overrides["workers"] = req.workers
    return cfg.replace(**overrides) if overrides else cfg


def create_app() -> FastAPI:
    app = FastAPI(title="tpvocc", version="0.1.0")

    @app.exception_handler(TpvoccError)
    async def handle_tpvocc_error(request: Request, exc: TpvoccError):
        return JSONResponse(
            status_code=400,
            content={"kind": exc.kind, "detail": str(exc)},
        )

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/synth", response_model=S.SynthResponse)
    def synth(req: S.SynthRequest):
        cfg = _load_config(req.config, req)
        if req.boxes is not None:
            cfg = cfg.replace(n_boxes=req.boxes)
        return run_synth(cfg, req.out_dir)

    @app.post("/pipeline", response_model=S.PipelineResponse)
    def pipeline(req: S.PipelineRequest):
        cfg = _load_config(req.config, req)
        return run_pipeline(cfg, req.scene_dir, req.out, params_dir=req.params)

    @app.post("/fit", response_model=S.FitResponse)
    def fit(req: S.FitRequest):
        cfg = _load_config(req.config, req)
        return run_fit(cfg, req.scene_dir, req.steps, req.lr, req.out_params)

    @app.post("/bench", response_model=S.BenchResponse)
    def bench(req: S.BenchRequest):
        cfg = _load_config(req.config, req)
        return run_bench(cfg, req.mode, req.repeats)

    @app.post("/augment", response_model=S.AugmentResponse)
    def augment(req: S.AugmentRequest):
        cfg = _load_config(req.config, req)
        return run_augment(cfg, req.scene_dirs, req.out_dir,
                           flip_axis=req.flip_axis,
                           flip_probability=req.flip_probability)

    @app.post("/eval", response_model=S.ReportModel)
    def eval_cmd(req: S.EvalRequest):
        return run_eval(req.pred, req.truth, req.mask)

    @app.post("/dump-slice", response_model=S.DumpSliceResponse)
    def dump_slice(req: S.DumpSliceRequest):
        return run_dump_slice(req.grid, req.z_index, req.out)

    return app


app = create_app()
