"""Batch orchestration: configuration, stage execution and artifact emission.

Every run is a pure function of (inputs, config, master seed): artifacts are
written with stable formatting and no timestamps, and the manifest lists each
file with its content hash so reruns can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data_ingest import (
    IngestConfig,
    PriceTable,
    ReturnsMatrix,
    SectorMap,
    SynthConfig,
    compute_log_returns,
    filter_full_history,
    load_price_table,
    load_sector_map,
    standardize,
    synth_generate,
)
from .errors import StressnetError, ValidationError
from .icc import IccConfig, MarketStatePartition, RestartSummary, multi_restart_cluster
from .logo import SparsePrecisionModel, estimate_precision, model_document
from .regression import regression_document, sector_regression
from .stress import (
    greedy_max_impact_group,
    impact,
    random_group_profile,
    report_frame,
    response,
    sector_profile,
    single_node_scan,
)
from .tmfg import (
    CentralityVector,
    CliqueTree,
    FilteringNetwork,
    SimilarityMatrix,
    build_tmfg,
    centrality,
    clique_forest,
    clique_tree_document,
    correlation_matrix,
    edge_list_rows,
    sector_link_stats,
)

STAGES = ("ingest", "network", "stress", "regress", "states", "group-search")

DEFAULT_PROFILE_SIZES = list(range(5, 55, 5))


@dataclass
class RunConfig:
    """Everything a run needs; JSON-roundtrippable for reproducibility."""

    output_dir: str
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
    profile_sizes: list[int] = field(default_factory=lambda: list(DEFAULT_PROFILE_SIZES))
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

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {', '.join(sorted(unknown))}")
        if "output_dir" not in doc:
            raise ValidationError("config must declare output_dir")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir")  # where artifacts land must not change their content
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class PipelineState:
    """Intermediate objects shared across stages within one run."""

    table: PriceTable | None = None
    sectors: SectorMap | None = None
    raw_returns: ReturnsMatrix | None = None
    returns: ReturnsMatrix | None = None
    sim: SimilarityMatrix | None = None
    network: FilteringNetwork | None = None
    tree: CliqueTree | None = None
    model: SparsePrecisionModel | None = None
    cent: CentralityVector | None = None
    sector_table: pd.DataFrame | None = None
    partition: MarketStatePartition | None = None
    restart_summary: RestartSummary | None = None


class ArtifactWriter:
    """Writes deterministic artifacts and records their hashes."""

    def __init__(self, root: Path, meta: dict):
        self.root = Path(root)
        self.meta = meta
        self.hashes: dict[str, str] = {}

    def _register(self, rel: str, data: bytes):
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.hashes[rel] = hashlib.sha256(data).hexdigest()

    def write_json(self, rel: str, payload: dict):
        doc = {"meta": self.meta, **payload}
        self._register(rel, json.dumps(doc, sort_keys=True, indent=1).encode())

    def write_csv(self, rel: str, frame: pd.DataFrame):
        header = "# " + json.dumps(self.meta, sort_keys=True) + "\n"
        body = frame.to_csv(index=False)
        self._register(rel, (header + body).encode())


def _derived_seeds(master: int) -> dict[str, int]:
    state = np.random.SeedSequence(master).generate_state(4)
    return {
        "icc": int(state[0]),
        "group": int(state[1]),
        "profile": int(state[2]),
        "synth": int(state[3]),
    }


def _load_inputs(cfg: RunConfig, state: PipelineState, seeds: dict[str, int]):
    if cfg.synth is not None and cfg.prices_path is not None:
        raise ValidationError("provide either prices_path or synth, not both")
    if cfg.synth is not None:
        doc = dict(cfg.synth)
        synth_seed = doc.pop("seed", seeds["synth"])
        spec = SynthConfig.from_dict(doc)
        table = synth_generate(spec, seed=int(synth_seed))
    elif cfg.prices_path is not None:
        ingest = IngestConfig(
            format=cfg.price_format,
            date_column=cfg.date_column,
            ticker_column=cfg.ticker_column,
            price_column=cfg.price_column,
        )
        table = load_price_table(cfg.prices_path, ingest)
    else:
        raise ValidationError("no input: set prices_path or synth")
    state.table = filter_full_history(table)
    if cfg.sectors_path is not None:
        state.sectors = load_sector_map(cfg.sectors_path, state.table.tickers)
    elif cfg.sectors_required:
        raise ValidationError("sectors_path is required but missing")
    state.raw_returns = compute_log_returns(state.table)
    state.returns = standardize(state.raw_returns)


def _stage_ingest(cfg: RunConfig, state: PipelineState, out: ArtifactWriter):
    table = state.table
    payload = {
        "tickers": list(table.tickers),
        "n_dates": len(table.dates),
        "n_return_days": state.returns.shape[0],
        "first_date": table.dates[0].isoformat(),
        "last_date": table.dates[-1].isoformat(),
    }
    if state.sectors is not None:
        payload["sector_counts"] = dict(sorted(state.sectors.counts.items()))
    out.write_json("universe.json", payload)


def _ensure_network(cfg: RunConfig, state: PipelineState):
    if state.model is not None:
        return
    state.sim = correlation_matrix(state.returns)
    state.network = build_tmfg(state.sim, cfg.gain)
    state.tree = clique_forest(state.network)
    state.model = estimate_precision(
        state.returns, state.tree, ridge=cfg.ridge, model_id="full-period"
    )
    state.cent = centrality(state.network, cfg.centrality_kind)


def _stage_network(cfg: RunConfig, state: PipelineState, out: ArtifactWriter):
    _ensure_network(cfg, state)
    if cfg.emit_edges:
        out.write_csv("network/edges.csv", pd.DataFrame(edge_list_rows(state.network, state.sim)))
        out.write_json("network/clique_tree.json", clique_tree_document(state.tree))
    out.write_json("network/model.json", model_document(state.model))


def _sector_frame(cfg: RunConfig, state: PipelineState, model, network, cent):
    stats = sector_link_stats(network, state.sectors, cent)
    frame, notes = sector_profile(model, state.sectors, stats)
    return frame, notes, stats


def _stress_artifacts(
    cfg: RunConfig,
    state: PipelineState,
    out: ArtifactWriter,
    model: SparsePrecisionModel,
    network: FilteringNetwork,
    cent: CentralityVector,
    prefix: str,
    profile_seed: int,
) -> pd.DataFrame | None:
    singles = single_node_scan(model, cent)
    out.write_csv(f"{prefix}singles.csv", singles)
    if cfg.emit_profiles:
        sizes = [s for s in cfg.profile_sizes if 1 <= s < model.p]
        if sizes:
            points, binned = random_group_profile(
                model, cent, sizes, cfg.profile_trials, seed=profile_seed
            )
            out.write_csv(f"{prefix}group_profile_points.csv", points)
            out.write_csv(f"{prefix}group_profile_binned.csv", binned)
    sector_frame = None
    reports = [impact(model, (i,)) for i in range(model.p)]
    reports += [response(model, (i,)) for i in range(model.p)]
    if state.sectors is not None:
        sector_frame, notes, stats = _sector_frame(cfg, state, model, network, cent)
        if not sector_frame.empty:
            out.write_csv(f"{prefix}sector_profile.csv", sector_frame)
        if notes:
            out.write_json(f"{prefix}sector_notes.json", {"notes": notes})
        for st in stats.per_sector.values():
            if 0 < st.size < model.p:
                members = tuple(st.node_indices)
                reports.append(impact(model, members))
                reports.append(response(model, members))
    out.write_csv(f"{prefix}reports.csv", report_frame(reports, model, cfg.seed))
    return sector_frame


def _stage_stress(cfg: RunConfig, state: PipelineState, out: ArtifactWriter, seeds):
    _ensure_network(cfg, state)
    state.sector_table = _stress_artifacts(
        cfg, state, out, state.model, state.network, state.cent, "stress/", seeds["profile"]
    )


def _stage_regress(cfg: RunConfig, state: PipelineState, out: ArtifactWriter, seeds):
    _ensure_network(cfg, state)
    if state.sectors is None:
        raise ValidationError("regressions need a sector map; set sectors_path")
    if state.sector_table is None:
        state.sector_table, _, _ = _sector_frame(
            cfg, state, state.model, state.network, state.cent
        )
    imp, resp = sector_regression(state.sector_table)
    out.write_json(
        "regressions/full_period.json",
        {
            "impact": regression_document(imp),
            "response": regression_document(resp),
            "centrality_kind": cfg.centrality_kind,
        },
    )


def _group_search_payload(model, network, cent, cfg, seed, sectors: SectorMap | None):
    result = greedy_max_impact_group(model, cfg.group_n, seed=seed, restarts=cfg.group_restarts)
    members = [model.labels[i] for i in result.group]
    payload = {
        "group": members,
        "impact": result.impact,
        "restarts": cfg.group_restarts,
        "seed": seed,
        "iterations": result.iterations,
        "history": [
            {"removed": model.labels[a], "added": model.labels[b], "impact": v}
            for a, b, v in result.swap_history
        ],
        "restart_impacts": result.restart_impacts,
        "restart_impact_spread": float(np.ptp(result.restart_impacts)),
    }
    if sectors is not None:
        payload["sectors"] = {t: sectors.labels.get(t, "?") for t in members}
    return payload


def _stage_group_search(cfg: RunConfig, state: PipelineState, out: ArtifactWriter, seeds):
    _ensure_network(cfg, state)
    if not 0 < cfg.group_n < state.model.p:
        raise ValidationError(
            f"group size {cfg.group_n} invalid for a {state.model.p}-stock universe"
        )
    payload = _group_search_payload(
        state.model, state.network, state.cent, cfg, seeds["group"], state.sectors
    )
    out.write_json("group_search/full_period.json", payload)


def _fit_state_scale_model(cfg: RunConfig, state: PipelineState, days: np.ndarray, tag: str):
    """Refit a unit-shock-scale model from one state's days."""
    sub = state.raw_returns.subset_rows(days)
    sub_std = standardize(sub)
    sim = correlation_matrix(sub_std)
    network = build_tmfg(sim, cfg.gain)
    tree = clique_forest(network)
    model = estimate_precision(sub_std, tree, ridge=cfg.ridge, model_id=tag)
    cent = centrality(network, cfg.centrality_kind)
    return model, network, cent


def _stage_states(cfg: RunConfig, state: PipelineState, out: ArtifactWriter, seeds):
    _ensure_network(cfg, state)
    icc_cfg = IccConfig(
        n_states=cfg.icc_states,
        gamma=cfg.icc_gamma,
        max_iterations=cfg.icc_max_iterations,
        restarts=cfg.icc_restarts,
        min_state_days=cfg.icc_min_state_days,
        seed=seeds["icc"],
    )
    partition, summary = multi_restart_cluster(state.returns, config=icc_cfg, ridge=cfg.ridge)
    state.partition = partition
    state.restart_summary = summary
    if cfg.emit_partitions:
        frame = pd.DataFrame(
            {
                "date": [d.isoformat() for d in partition.dates],
                "state": partition.labels,
            }
        )
        out.write_csv("states/partition.csv", frame)
        # market-average price series with state colors, one row per return day
        date_index = {d: i for i, d in enumerate(state.table.dates)}
        mean_price = [
            float(state.table.prices[date_index[d]].mean()) for d in partition.dates
        ]
        out.write_csv(
            "states/price_states.csv",
            pd.DataFrame(
                {
                    "date": [d.isoformat() for d in partition.dates],
                    "mean_price": mean_price,
                    "state": partition.labels,
                }
            ),
        )
    seg = partition.segment_lengths()
    out.write_json(
        "states/summary.json",
        {
            "gamma": partition.gamma,
            "n_states": partition.n_states,
            "restarts": cfg.icc_restarts,
            "total_likelihood_per_restart": summary.totals,
            "best_restart": summary.best_restart,
            "agreement_matrix": [[float(v) for v in row] for row in summary.agreement],
            "iterations": partition.iterations,
            "iteration_totals": partition.iteration_totals,
            "switches": partition.switch_count(),
            "mean_segment_length": float(np.mean(seg)),
            "state_day_counts": {
                str(s): int(np.sum(partition.labels == s))
                for s in range(1, partition.n_states + 1)
            },
            "reseed_events": partition.reseed_events,
        },
    )
    if cfg.per_state:
        for s in range(1, partition.n_states + 1):
            days = partition.state_days(s)
            prefix = f"states/state_{s}/"
            model, network, cent = _fit_state_scale_model(cfg, state, days, f"state-{s}")
            out.write_json(prefix + "model.json", model_document(model))
            sector_frame = _stress_artifacts(
                cfg, state, out, model, network, cent, prefix, seeds["profile"] + s
            )
            if cfg.emit_regressions and sector_frame is not None:
                try:
                    imp, resp = sector_regression(sector_frame)
                    out.write_json(
                        prefix + "regressions.json",
                        {
                            "impact": regression_document(imp),
                            "response": regression_document(resp),
                        },
                    )
                except ValidationError as exc:
                    out.write_json(prefix + "regressions.json", {"skipped": str(exc)})
            if cfg.emit_group_search and cfg.group_n < model.p:
                out.write_json(
                    prefix + "group_search.json",
                    _group_search_payload(
                        model, network, cent, cfg, seeds["group"] + s, state.sectors
                    ),
                )


def run_pipeline(cfg: RunConfig, stages: list[str] | None = None) -> dict:
    """Execute the requested stages and write the hash manifest.

    Returns the manifest document. On stage failure the partial manifest is
    still written, flagged, and the error re-raised for the caller to map to
    an exit status.
    """
    explicit = stages is not None
    requested = list(stages) if stages else list(STAGES)
    for s in requested:
        if s not in STAGES:
            raise ValidationError(f"unknown stage {s!r}; valid stages: {', '.join(STAGES)}")
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": __version__,
        "centrality_kind": cfg.centrality_kind,
        "gain": cfg.gain,
    }
    out = ArtifactWriter(root, meta)
    state = PipelineState()
    seeds = _derived_seeds(cfg.seed)
    error: StressnetError | None = None
    try:
        _load_inputs(cfg, state, seeds)
        if "group-search" in requested and cfg.emit_group_search:
            p = len(state.table.tickers)
            if not 0 < cfg.group_n < p:
                raise ValidationError(
                    f"group size {cfg.group_n} invalid for a {p}-stock universe"
                )
        if "ingest" in requested:
            _stage_ingest(cfg, state, out)
        if "network" in requested:
            _stage_network(cfg, state, out)
        if "stress" in requested:
            _stage_stress(cfg, state, out, seeds)
        if "regress" in requested and cfg.emit_regressions:
            if state.sectors is None and not explicit:
                pass  # a sector-less default run simply has no regressions
            else:
                _stage_regress(cfg, state, out, seeds)
        if "states" in requested and cfg.emit_partitions:
            _stage_states(cfg, state, out, seeds)
        if "group-search" in requested and cfg.emit_group_search:
            _stage_group_search(cfg, state, out, seeds)
    except StressnetError as exc:
        error = exc
    manifest = {
        "meta": meta,
        "config": cfg.to_dict(),
        "stages": requested,
        "artifacts": dict(sorted(out.hashes.items())),
        "status": "partial" if error else "complete",
    }
    if error:
        manifest["error"] = str(error)
    (root / "manifest.json").write_bytes(
        json.dumps(manifest, sort_keys=True, indent=1).encode()
    )
    if error:
        raise error
    return manifest
