"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class RunRequest(BaseModel):
    """Batch run configuration; mirrors the pipeline RunConfig."""

    model_config = ConfigDict(extra="forbid")

    output_dir: str | None = None
    prices_path: str | None = None
    sectors_path: str | None = None
    synth: dict | None = None
    price_format: str = "wide"
    date_column: str = "date"
    ticker_column: str = "ticker"
    price_column: str = "price"
    gain: str = "squared"
    centrality_kind: str = "eigenvector"
    ridge: float = 0.0
    seed: int = 0
    group_n: int = 10
    group_restarts: int = 10
    profile_sizes: list[int] | None = None
    profile_trials: int = 50
    icc_states: int = 6
    icc_gamma: float = 100.0
    icc_max_iterations: int = 100
    icc_restarts: int = 10
    icc_min_state_days: int | None = None
    emit_edges: bool = True
    emit_profiles: bool = True
    emit_partitions: bool = True
    emit_regressions: bool = True
    emit_group_search: bool = True
    per_state: bool = True
    sectors_required: bool = False
    stages: list[str] | None = None


class RunResponse(BaseModel):
    status: str
    output_dir: str
    config_hash: str
    seed: int
    artifacts: dict[str, str]


class BuildModelRequest(BaseModel):
    """Fit an in-memory model for interactive stress queries."""

    prices_path: str | None = None
    synth: dict | None = None
    sectors_path: str | None = None
    price_format: str = "wide"
    gain: str = "squared"
    centrality_kind: str = "eigenvector"
    ridge: float = 0.0
    seed: int = 0
    model_id: str | None = None


class ModelSummary(BaseModel):
    model_id: str
    n_assets: int
    n_days: int
    tickers: list[str]
    n_edges: int
    log_det: float
    ridge_used: float
    centrality_kind: str


class StressRequest(BaseModel):
    stressed: list[str] = Field(min_length=1)
    evaluated: list[str] | None = None


class StressResponse(BaseModel):
    value: float
    direction: str
    stressed: list[str]
    evaluated: list[str]
    model_id: str


class ConditionalMeanRequest(BaseModel):
    stressed: list[str] = Field(min_length=1)
    shock: list[float] | None = None
    evaluated: list[str] | None = None


class ConditionalMeanResponse(BaseModel):
    shifts: dict[str, float]
    model_id: str


class GroupSearchRequest(BaseModel):
    n: int = 10
    restarts: int = 10
    seed: int = 0


class GroupSearchResponse(BaseModel):
    group: list[str]
    impact: float
    iterations: int
    seed: int
    restarts: int
    restart_impacts: list[float]
    history: list[dict]
    sectors: dict[str, str] | None = None


class ErrorBody(BaseModel):
    error: str
    kind: str
    exit_code: int


class HealthResponse(BaseModel):
    status: str
    version: str
    models_loaded: int
