"""HTTP service exposing the batch pipeline and interactive stress queries.

Batch endpoints write artifacts to disk exactly like the CLI; the model
registry keeps fitted models in memory so repeated impact/response queries
skip re-estimation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..data_ingest import (
    IngestConfig,
    SectorMap,
    SynthConfig,
    compute_log_returns,
    filter_full_history,
    load_price_table,
    load_sector_map,
    standardize,
    synth_generate,
)
from ..errors import DataError, NumericalError, StressnetError, ValidationError
from ..logo import SparsePrecisionModel, estimate_precision
from ..pipeline import RunConfig, run_pipeline
from ..stress import conditional_mean, greedy_max_impact_group, impact, response, StressQuery
from ..tmfg import (
    CentralityVector,
    FilteringNetwork,
    build_tmfg,
    centrality,
    clique_forest,
    correlation_matrix,
)
from .schemas import (
    BuildModelRequest,
    ConditionalMeanRequest,
    ConditionalMeanResponse,
    ErrorBody,
    GroupSearchRequest,
    GroupSearchResponse,
    HealthResponse,
    ModelSummary,
    RunRequest,
    RunResponse,
    StressRequest,
    StressResponse,
)

OUTPUT_DIR_ENV = "STRESSNET_OUTPUT_DIR"

_ERROR_STATUS = {ValidationError: 422, DataError: 400, NumericalError: 500}
_ERROR_KIND = {ValidationError: "validation", DataError: "data", NumericalError: "numerical"}


@dataclass
class LoadedModel:
    model: SparsePrecisionModel
    network: FilteringNetwork
    cent: CentralityVector
    sectors: SectorMap | None
    n_days: int
    centrality_kind: str


def _resolve_output_dir(requested: str | None) -> str:
    out = requested or os.environ.get(OUTPUT_DIR_ENV)
    if not out:
        raise ValidationError(
            f"no output_dir given and {OUTPUT_DIR_ENV} is not set"
        )
    return out


def _run_config(req: RunRequest) -> RunConfig:
    doc = req.model_dump(exclude={"stages"}, exclude_none=False)
    doc["output_dir"] = _resolve_output_dir(doc.pop("output_dir"))
    if doc.get("profile_sizes") is None:
        doc.pop("profile_sizes")
    return RunConfig.from_dict(doc)


def create_app() -> FastAPI:
    app = FastAPI(title="stressnet", version=__version__)
    registry: dict[str, LoadedModel] = {}

    @app.exception_handler(StressnetError)
    async def domain_error(request: Request, exc: StressnetError):
        for klass, status in _ERROR_STATUS.items():
            if isinstance(exc, klass):
                body = ErrorBody(error=str(exc), kind=_ERROR_KIND[klass], exit_code=exc.exit_code)
                return JSONResponse(status_code=status, content=body.model_dump())
        body = ErrorBody(error=str(exc), kind="internal", exit_code=exc.exit_code)
        return JSONResponse(status_code=500, content=body.model_dump())

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__, models_loaded=len(registry))

    @app.post("/pipeline", response_model=RunResponse)
    def pipeline(req: RunRequest):
        cfg = _run_config(req)
        manifest = run_pipeline(cfg, req.stages)
        return RunResponse(
            status=manifest["status"],
            output_dir=cfg.output_dir,
            config_hash=manifest["meta"]["config_hash"],
            seed=cfg.seed,
            artifacts=manifest["artifacts"],
        )

    @app.post("/stages/{stage}", response_model=RunResponse)
    def single_stage(stage: str, req: RunRequest):
        cfg = _run_config(req)
        manifest = run_pipeline(cfg, [stage])
        return RunResponse(
            status=manifest["status"],
            output_dir=cfg.output_dir,
            config_hash=manifest["meta"]["config_hash"],
            seed=cfg.seed,
            artifacts=manifest["artifacts"],
        )

    def _build(req: BuildModelRequest) -> tuple[str, LoadedModel]:
        if req.synth is not None:
            doc = dict(req.synth)
            seed = doc.pop("seed", req.seed)
            table = synth_generate(SynthConfig.from_dict(doc), seed=int(seed))
        elif req.prices_path is not None:
            table = load_price_table(req.prices_path, IngestConfig(format=req.price_format))
        else:
            raise ValidationError("no input: set prices_path or synth")
        table = filter_full_history(table)
        sectors = (
            load_sector_map(req.sectors_path, table.tickers) if req.sectors_path else None
        )
        returns = standardize(compute_log_returns(table))
        sim = correlation_matrix(returns)
        network = build_tmfg(sim, req.gain)
        tree = clique_forest(network)
        model_id = req.model_id or f"model-{len(registry)}"
        model = estimate_precision(returns, tree, ridge=req.ridge, model_id=model_id)
        cent = centrality(network, req.centrality_kind)
        return model_id, LoadedModel(
            model=model,
            network=network,
            cent=cent,
            sectors=sectors,
            n_days=returns.shape[0],
            centrality_kind=req.centrality_kind,
        )

    def _summary(model_id: str, entry: LoadedModel) -> ModelSummary:
        return ModelSummary(
            model_id=model_id,
            n_assets=entry.model.p,
            n_days=entry.n_days,
            tickers=list(entry.model.labels),
            n_edges=len(entry.network.edges),
            log_det=entry.model.log_det,
            ridge_used=entry.model.ridge_used,
            centrality_kind=entry.centrality_kind,
        )

    @app.post("/models", response_model=ModelSummary)
    def build_model(req: BuildModelRequest):
        model_id, entry = _build(req)
        registry[model_id] = entry
        return _summary(model_id, entry)

    @app.get("/models", response_model=list[ModelSummary])
    def list_models():
        return [_summary(mid, entry) for mid, entry in registry.items()]

    def _entry(model_id: str) -> LoadedModel:
        if model_id not in registry:
            raise ValidationError(f"unknown model {model_id!r}")
        return registry[model_id]

    def _indices(entry: LoadedModel, tickers: list[str]) -> tuple[int, ...]:
        lookup = {t: i for i, t in enumerate(entry.model.labels)}
        missing = [t for t in tickers if t not in lookup]
        if missing:
            raise ValidationError(f"unknown tickers: {', '.join(missing)}")
        return tuple(lookup[t] for t in tickers)

    @app.post("/models/{model_id}/impact", response_model=StressResponse)
    def model_impact(model_id: str, req: StressRequest):
        entry = _entry(model_id)
        X = _indices(entry, req.stressed)
        Y = _indices(entry, req.evaluated) if req.evaluated else None
        rep = impact(entry.model, X, Y)
        return StressResponse(
            value=rep.value,
            direction=rep.direction,
            stressed=[entry.model.labels[i] for i in rep.stressed],
            evaluated=[entry.model.labels[i] for i in rep.evaluated],
            model_id=model_id,
        )

    @app.post("/models/{model_id}/response", response_model=StressResponse)
    def model_response(model_id: str, req: StressRequest):
        entry = _entry(model_id)
        X = _indices(entry, req.stressed)
        rep = response(entry.model, X)
        return StressResponse(
            value=rep.value,
            direction=rep.direction,
            stressed=[entry.model.labels[i] for i in rep.stressed],
            evaluated=[entry.model.labels[i] for i in rep.evaluated],
            model_id=model_id,
        )

    @app.post("/models/{model_id}/conditional-mean", response_model=ConditionalMeanResponse)
    def model_conditional_mean(model_id: str, req: ConditionalMeanRequest):
        entry = _entry(model_id)
        X = _indices(entry, req.stressed)
        if req.evaluated:
            Y = _indices(entry, req.evaluated)
        else:
            Y = tuple(i for i in range(entry.model.p) if i not in set(X))
        query = StressQuery(
            stressed=X,
            evaluated=Y,
            shock=None if req.shock is None else np.asarray(req.shock, dtype=float),
        )
        shifts = conditional_mean(entry.model, query)
        return ConditionalMeanResponse(
            shifts={entry.model.labels[i]: float(v) for i, v in zip(Y, shifts)},
            model_id=model_id,
        )

    @app.post("/models/{model_id}/group-search", response_model=GroupSearchResponse)
    def model_group_search(model_id: str, req: GroupSearchRequest):
        entry = _entry(model_id)
        result = greedy_max_impact_group(
            entry.model, req.n, seed=req.seed, restarts=req.restarts
        )
        members = [entry.model.labels[i] for i in result.group]
        sectors = None
        if entry.sectors is not None:
            sectors = {t: entry.sectors.labels.get(t, "?") for t in members}
        return GroupSearchResponse(
            group=members,
            impact=result.impact,
            iterations=result.iterations,
            seed=req.seed,
            restarts=req.restarts,
            restart_impacts=result.restart_impacts,
            history=[
                {
                    "removed": entry.model.labels[a],
                    "added": entry.model.labels[b],
                    "impact": v,
                }
                for a, b, v in result.swap_history
            ],
            sectors=sectors,
        )

    @app.delete("/models/{model_id}")
    def delete_model(model_id: str):
        _entry(model_id)
        del registry[model_id]
        return {"deleted": model_id}

    return app


app = create_app()
