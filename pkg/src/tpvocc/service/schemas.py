"""Pydantic request/response models for the HTTP service.

Commands exchange file paths, not tensors: the service reads and writes
scene directories, parameter directories, and OCCG/TNSR files on its own
filesystem and returns small JSON summaries.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class ConfigOverrides(BaseModel):
    seed: int | None = None
    deterministic: bool | None = None
    workers: int | None = None


class SynthRequest(ConfigOverrides):
    config: str = Field(description="path to a pipeline config JSON")
    out_dir: str
    boxes: int | None = None


class SynthResponse(BaseModel):
    out_dir: str
    files: list[str]
    checksums: dict[str, str]


class PipelineRequest(ConfigOverrides):
    config: str
    scene_dir: str
    out: str = Field(description="output OCCG prediction path")
    params: str | None = Field(default=None,
                               description="parameter directory; seeded init when omitted")


class ReportModel(BaseModel):
    miou: float
    per_class: dict[str, float]
    visible_voxels: int


class PipelineResponse(BaseModel):
    prediction: str
    prediction_sha256: str
    report_path: str
    report: ReportModel


class FitRequest(ConfigOverrides):
    config: str
    scene_dir: str
    steps: int = 200
    lr: float = 0.5
    out_params: str | None = None


class FitResponse(BaseModel):
    losses: list[float]
    initial_loss: float
    final_loss: float
    steps: int
    lr: float
    params_dir: str | None


class BenchRequest(ConfigOverrides):
    config: str
    mode: str = Field(description="lti | conv3d_ref | gss")
    repeats: int = 5


class StageTiming(BaseModel):
    median_ms: float
    times_ms: list[float]


class BenchResponse(BaseModel):
    mode: str
    repeats: int
    grid: list[int]
    channels: int
    precision: str
    stages: dict[str, StageTiming]
    total_median_ms: float
    checksums: list[str]


class AugmentRequest(ConfigOverrides):
    config: str
    scene_dirs: list[str]
    out_dir: str
    flip_axis: str | None = None
    flip_probability: float = 0.0


class AugmentResponse(BaseModel):
    out_dir: str
    provenance: dict


class EvalRequest(BaseModel):
    pred: str
    truth: str
    mask: str


class DumpSliceRequest(BaseModel):
    grid: str
    z_index: int | None = None
    out: str


class DumpSliceResponse(BaseModel):
    image: str
    width: int
    height: int
    view: str
