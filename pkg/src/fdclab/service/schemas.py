"""Request/response models.  The experiment config is the core dataclass,
validated field by field by pydantic."""
from __future__ import annotations

import dataclasses
from typing import Any, Optional

from pydantic import BaseModel, Field, field_validator

from ..harness import ExperimentConfig
from ..nnet.optim import TrainConfig


def _reject_unknown(cls, d, where):
    if isinstance(d, dict):
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown {where} fields: {sorted(unknown)}")


class ConfigRequest(BaseModel):
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    dataset_dir: Optional[str] = None

    @field_validator("config", mode="before")
    @classmethod
    def _strict_fields(cls, v):
        _reject_unknown(ExperimentConfig, v, "config")
        if isinstance(v, dict):
            _reject_unknown(TrainConfig, v.get("train"), "train")
        return v


class GenDataRequest(ConfigRequest):
    seed: Optional[int] = None


class GenDataResponse(BaseModel):
    directory: str
    count: int
    histogram: list[int]
    sdi_sha256: str


class TrainRequest(ConfigRequest):
    cv: bool = False


class TrainResponse(BaseModel):
    weights: Optional[str] = None
    accuracy: Optional[float] = None
    params: Optional[int] = None
    history: list[dict[str, Any]] = []
    fold_accuracies: Optional[list[float]] = None
    mean: Optional[float] = None
    std: Optional[float] = None


class WeightsRequest(ConfigRequest):
    weights: Optional[str] = None


class EvalResponse(BaseModel):
    accuracy: float
    count: int
    confusion: list[list[int]]


class PruneResponse(BaseModel):
    weights: str
    report: dict[str, Any]


class CamResponse(BaseModel):
    summary: dict[str, Any]
    report: str


class BenchRequest(WeightsRequest):
    networks: Optional[list[str]] = None


class BenchResponse(BaseModel):
    rows: list[dict[str, Any]]
    environment: dict[str, Any]


class CompareRequest(ConfigRequest):
    methods: Optional[list[str]] = None


class CompareResponse(BaseModel):
    columns: list[str]
    rows: list[list[Any]]
    folds_sha256: str


class AggregateRequest(BaseModel):
    values: list[float] = Field(min_length=2)


class AggregateResponse(BaseModel):
    mean: float
    std: float


class PresetInfo(BaseModel):
    name: str
    params: int
    conv_layers: int
