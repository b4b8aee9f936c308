"""Conditional shock propagation: mean shifts, impact/response, group search.

A unit shock on a stressed set X moves the expectation of every other
variable through the implied covariance of the fitted model:

    shift(Y) = Cov[Y,X] Cov[X,X]^{-1} (x - mu_X)

Impact is the average shift over the evaluated set when every stressed
variable moves by one (standardized) unit; response swaps the roles, i.e.
stresses everything outside the set and averages the shift inside it.
Intra-group effects never enter: the evaluated set is disjoint from the
stressed one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_ingest import SectorMap
from .errors import NumericalError, ValidationError
from .logo import SparsePrecisionModel, solve_covariance_columns
from .tmfg import CentralityVector, SectorLinkStats


@dataclass(frozen=True)
class StressQuery:
    stressed: tuple[int, ...]
    evaluated: tuple[int, ...]
    shock: np.ndarray | None = None  # defaults to all ones

    def __post_init__(self):
        if not self.stressed:
            raise ValidationError("stressed set must be nonempty")
        if not self.evaluated:
            raise ValidationError("evaluated set must be nonempty")
        if set(self.stressed) & set(self.evaluated):
            raise ValidationError("stressed and evaluated sets must be disjoint")
        if self.shock is not None and np.asarray(self.shock).shape != (len(self.stressed),):
            raise ValidationError("shock vector length must match the stressed set")


@dataclass
class ImpactReport:
    value: float
    direction: str  # "impact" (X -> rest) or "response" (rest -> X)
    stressed: tuple[int, ...]
    evaluated: tuple[int, ...]
    model_id: str


@dataclass
class GroupSearchResult:
    group: tuple[int, ...]
    impact: float
    iterations: int
    seed: int
    restarts: int
    swap_history: list[tuple[int, int, float]]  # (removed, added, new impact)
    restart_impacts: list[float]
    group_labels: list[str] = field(default_factory=list)


def _validate_nodes(model: SparsePrecisionModel, nodes) -> tuple[int, ...]:
    out = tuple(int(v) for v in nodes)
    if any(v < 0 or v >= model.p for v in out):
        raise ValidationError("node index out of range")
    if len(set(out)) != len(out):
        raise ValidationError("node set contains duplicates")
    return out


def _cross_solve(model: SparsePrecisionModel, X: tuple[int, ...], rhs: np.ndarray):
    """Cov[:,X] Cov[X,X]^{-1} rhs, raising if the stressed block is singular."""
    cols = solve_covariance_columns(model, X)
    xx = cols[list(X), :]
    try:
        z = np.linalg.solve(xx, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("stressed-block covariance is numerically singular") from exc
    return cols, z


def conditional_mean(model: SparsePrecisionModel, query: StressQuery) -> np.ndarray:
    """Expected value of the evaluated variables given the stressed values."""
    X = _validate_nodes(model, query.stressed)
    Y = _validate_nodes(model, query.evaluated)
    shock = np.ones(len(X)) if query.shock is None else np.asarray(query.shock, dtype=float)
    cols, z = _cross_solve(model, X, shock)
    return model.mu[list(Y)] + cols[list(Y), :] @ z


def _impact_value(model: SparsePrecisionModel, X: tuple[int, ...], Y: tuple[int, ...]) -> float:
    cols, z = _cross_solve(model, X, np.ones(len(X)))
    return float(cols[list(Y), :].sum(axis=0) @ z) / len(Y)


def impact(
    model: SparsePrecisionModel, stressed, evaluated=None
) -> ImpactReport:
    """Mean unit-shock loss propagated from the stressed set to the evaluated set.

    When the evaluated set is omitted it defaults to everything else.
    """
    X = _validate_nodes(model, stressed)
    if evaluated is None:
        Y = tuple(i for i in range(model.p) if i not in set(X))
        if not Y:
            raise ValidationError("stressed set covers the whole universe")
    else:
        Y = _validate_nodes(model, evaluated)
        if set(X) & set(Y):
            raise ValidationError("stressed and evaluated sets must be disjoint")
    return ImpactReport(
        value=_impact_value(model, X, Y),
        direction="impact",
        stressed=X,
        evaluated=Y,
        model_id=model.model_id,
    )


def response(model: SparsePrecisionModel, nodes) -> ImpactReport:
    """Mean loss inside the set when everything outside it takes a unit shock."""
    X = _validate_nodes(model, nodes)
    Y = tuple(i for i in range(model.p) if i not in set(X))
    if not Y:
        raise ValidationError("set covers the whole universe; no complement to stress")
    return ImpactReport(
        value=_impact_value(model, Y, X),
        direction="response",
        stressed=Y,
        evaluated=X,
        model_id=model.model_id,
    )


class _GroupObjective:
    """Collective impact of a group toward its complement, O(n^3) per query."""

    def __init__(self, model: SparsePrecisionModel):
        self.cov = model.covariance()
        self.colsums = self.cov.sum(axis=0)
        self.p = model.p

    def __call__(self, group: np.ndarray) -> float:
        sub = self.cov[np.ix_(group, group)]
        rest_sums = self.colsums[group] - sub.sum(axis=0)
        try:
            z = np.linalg.solve(sub, np.ones(group.size))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("group covariance block is singular") from exc
        return float(rest_sums @ z) / (self.p - group.size)


def greedy_max_impact_group(
    model: SparsePrecisionModel,
    n: int,
    seed: int,
    restarts: int = 10,
) -> GroupSearchResult:
    """Local search for the n-set with the highest collective impact.

    Each restart starts from a random group and repeatedly applies the best
    strictly-improving swap of one member against one outsider until no swap
    improves; the best local optimum across restarts wins. Deterministic for
    a given seed.
    """
    if not 0 < n < model.p:
        raise ValidationError(f"group size must be in [1, {model.p - 1}], got {n}")
    if restarts < 1:
        raise ValidationError("restarts must be positive")
    objective = _GroupObjective(model)

    best: GroupSearchResult | None = None
    restart_impacts: list[float] = []
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        group = np.sort(rng.choice(model.p, size=n, replace=False))
        current = objective(group)
        history: list[tuple[int, int, float]] = []
        passes = 0
        improved = True
        while improved:
            passes += 1
            improved = False
            outside = np.setdiff1d(np.arange(model.p), group)
            best_gain, best_swap = 0.0, None
            # both loops ascend, so the first maximum is the lowest
            # (member, candidate) pair among ties
            for i, member in enumerate(group):
                for candidate in outside:
                    trial = group.copy()
                    trial[i] = candidate
                    gain = objective(np.sort(trial)) - current
                    if gain > best_gain:
                        best_gain, best_swap = gain, (int(member), int(candidate))
            if best_swap is not None:
                member, candidate = best_swap
                group = np.sort(np.where(group == member, candidate, group))
                current = objective(group)
                history.append((member, candidate, current))
                improved = True
        restart_impacts.append(current)
        if best is None or current > best.impact:
            best = GroupSearchResult(
                group=tuple(int(v) for v in group),
                impact=current,
                iterations=passes,
                seed=seed,
                restarts=restarts,
                swap_history=history,
                restart_impacts=[],
                group_labels=[model.labels[int(v)] for v in group] if model.labels else [],
            )
    assert best is not None
    best.restart_impacts = restart_impacts
    return best


def report_frame(reports: list[ImpactReport], model, seed: int) -> pd.DataFrame:
    """Stress reports in the declared CSV schema (direction, X, Y, L, model_id, seed)."""
    rows = []
    for rep in reports:
        rows.append(
            {
                "direction": rep.direction,
                "X": "|".join(model.labels[i] for i in rep.stressed),
                "Y": "|".join(model.labels[i] for i in rep.evaluated),
                "L": rep.value,
                "model_id": rep.model_id,
                "seed": seed,
            }
        )
    return pd.DataFrame(rows)


def single_node_scan(model: SparsePrecisionModel, cent: CentralityVector) -> pd.DataFrame:
    """Impact and response of every individual node, with its centrality."""
    rows = []
    for i in range(model.p):
        rows.append(
            {
                "node": i,
                "ticker": model.labels[i] if model.labels else str(i),
                "centrality": float(cent.values[i]),
                "impact": impact(model, (i,)).value,
                "response": response(model, (i,)).value,
            }
        )
    return pd.DataFrame(rows)


def random_group_profile(
    model: SparsePrecisionModel,
    cent: CentralityVector,
    sizes: list[int],
    trials: int,
    seed: int,
    bins: int = 10,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Sampled random groups per size: (raw points, centrality-binned means).

    Group centrality is the mean centrality of the members. Sampling is
    deterministic per (seed, size, trial), so trials may run in any order.
    """
    if trials < 1:
        raise ValidationError("trials must be positive")
    for s in sizes:
        if not 1 <= s < model.p:
            raise ValidationError(f"group size {s} outside [1, {model.p - 1}]")
    rows = []
    for s in sizes:
        for k in range(trials):
            rng = np.random.default_rng([seed, s, k])
            group = np.sort(rng.choice(model.p, size=s, replace=False))
            members = tuple(int(v) for v in group)
            rows.append(
                {
                    "size": s,
                    "trial": k,
                    "mean_centrality": float(cent.values[group].mean()),
                    "impact": impact(model, members).value,
                    "response": response(model, members).value,
                }
            )
    points = pd.DataFrame(rows)
    binned_rows = []
    for s in sizes:
        sub = points[points["size"] == s]
        ranks = sub["mean_centrality"].rank(method="first")
        deciles = np.ceil(ranks / len(sub) * bins).clip(1, bins).astype(int)
        for b, chunk in sub.groupby(deciles):
            binned_rows.append(
                {
                    "size": s,
                    "bin": int(b),
                    "mean_centrality": float(chunk["mean_centrality"].mean()),
                    "impact": float(chunk["impact"].mean()),
                    "response": float(chunk["response"].mean()),
                    "count": len(chunk),
                }
            )
    return points, pd.DataFrame(binned_rows)


def sector_profile(
    model: SparsePrecisionModel,
    sectors: SectorMap,
    stats: SectorLinkStats,
) -> tuple[pd.DataFrame, list[str]]:
    """Per-sector impact/response plus the structural regressors.

    A sector spanning the entire universe has no complement to stress and is
    excluded with a note.
    """
    rows = []
    notes = list(stats.warnings)
    for name, st in stats.per_sector.items():
        if st.size == model.p:
            notes.append(f"sector {name!r} covers the whole universe; excluded")
            continue
        members = tuple(st.node_indices)
        rows.append(
            {
                "sector": name,
                "size": st.size,
                "internal_fraction": st.internal_fraction,
                "mean_centrality": st.mean_centrality,
                "log_centrality": st.log_mean_centrality,
                "impact": impact(model, members).value,
                "response": response(model, members).value,
            }
        )
    return pd.DataFrame(rows), notes
