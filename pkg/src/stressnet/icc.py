"""Market-state segmentation by inverse-covariance clustering.

Days are grouped so that each group is well described by one sparse Gaussian
model. The loop alternates two exact maximization steps: refit each state's
mean and clique-forest precision on its member days, then reassign the whole
day sequence with a Viterbi pass that charges ``gamma`` for every state
switch. Scores are unnormalized Gaussian log-likelihoods,

    score(day t, state c) = log|J_c| - (x_t - mu_c)' J_c (x_t - mu_c),

so the total penalized objective never decreases across iterations. The one
exception is a recorded re-seed event (a state starved below its day
minimum gets the worst-fitting days reassigned to it), which perturbs the
assignment outside the maximization steps. Final states are renumbered 1..K
by their average position in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .data_ingest import ReturnsMatrix
from .errors import NumericalError, ValidationError
from .logo import SparsePrecisionModel, log_likelihood_rows, precision_from_moments
from .tmfg import CliqueTree, FilteringNetwork, SimilarityMatrix, build_tmfg, clique_forest

MIN_STATE_DAYS_FLOOR = 5

# (day values for one state, tickers) -> (network, clique tree)
TreeBuilder = Callable[[np.ndarray, list[str]], tuple[FilteringNetwork, CliqueTree]]


@dataclass(frozen=True)
class IccConfig:
    n_states: int = 6
    gamma: float = 100.0
    max_iterations: int = 100
    restarts: int = 10
    min_state_days: int | None = None  # default max(5, ceil(p/4))
    seed: int = 0

    def __post_init__(self):
        if self.n_states < 1:
            raise ValidationError("n_states must be at least 1")
        if self.gamma < 0:
            raise ValidationError("gamma must be nonnegative")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValidationError("max_iterations and restarts must be positive")
        if self.min_state_days is not None and self.min_state_days < MIN_STATE_DAYS_FLOOR:
            raise ValidationError(f"min_state_days must be >= {MIN_STATE_DAYS_FLOOR}")

    def resolved_min_days(self, p: int) -> int:
        if self.min_state_days is not None:
            return self.min_state_days
        return max(MIN_STATE_DAYS_FLOOR, int(np.ceil(p / 4)))


@dataclass
class MarketStatePartition:
    labels: np.ndarray  # length T, values 1..K
    models: list[SparsePrecisionModel]  # index s-1 is the model of state s
    networks: list[FilteringNetwork]
    total_penalized_likelihood: float
    gamma: float
    n_states: int
    seed: int | list[int]
    iterations: int
    relabeling: list[int]  # relabeling[old_internal_index] = final 1-based label
    iteration_totals: list[float]
    reseed_events: list[str] = field(default_factory=list)
    dates: list = field(default_factory=list)

    def state_days(self, state: int) -> np.ndarray:
        return np.flatnonzero(self.labels == state)

    def switch_count(self) -> int:
        return int(np.sum(self.labels[1:] != self.labels[:-1]))

    def segment_lengths(self) -> list[int]:
        cuts = np.flatnonzero(self.labels[1:] != self.labels[:-1]) + 1
        return [len(seg) for seg in np.split(self.labels, cuts)]


@dataclass
class RestartSummary:
    totals: list[float]
    best_restart: int
    agreement: np.ndarray  # pairwise adjusted Rand index between restarts


def penalized_likelihood(
    models: list[SparsePrecisionModel],
    x_t: np.ndarray,
    prev_state: int | None,
    gamma: float,
) -> np.ndarray:
    """Per-state switching-penalized score of one day; prev_state is 0-based."""
    x_t = np.asarray(x_t, dtype=float)
    out = np.empty(len(models))
    for c, model in enumerate(models):
        if x_t.shape != (model.p,):
            raise ValidationError(f"day vector has shape {x_t.shape}, expected ({model.p},)")
        d = x_t - model.mu
        out[c] = model.log_det - float(d @ (model.sparse @ d))
    if prev_state is not None:
        penalty = np.full(len(models), gamma)
        penalty[prev_state] = 0.0
        out -= penalty
    return out


def viterbi_assign(loglik: np.ndarray, gamma: float) -> np.ndarray:
    """Path maximizing sum of per-day scores minus gamma per state switch.

    Ties resolve toward the lower state index.
    """
    scores = np.asarray(loglik, dtype=float)
    if scores.ndim != 2:
        raise ValidationError("log-likelihood matrix must be T x K")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("log-likelihood matrix contains non-finite entries")
    if gamma < 0:
        raise ValidationError("gamma must be nonnegative")
    T, K = scores.shape
    switch_cost = gamma * (1.0 - np.eye(K))  # cost[c, c'] of arriving at c from c'
    value = scores[0].copy()
    back = np.zeros((T, K), dtype=int)
    for t in range(1, T):
        options = value[None, :] - switch_cost
        back[t] = np.argmax(options, axis=1)  # first max = lowest previous index
        value = scores[t] + options[np.arange(K), back[t]]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(value))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def default_tree_builder(gain: str = "squared") -> TreeBuilder:
    """Each state builds its own TMFG from its own correlation matrix."""

    def build(day_values: np.ndarray, tickers: list[str]):
        C = np.corrcoef(day_values, rowvar=False)
        C = np.clip(0.5 * (C + C.T), -1.0, 1.0)
        np.fill_diagonal(C, 1.0)
        net = build_tmfg(SimilarityMatrix(values=C, labels=tickers), gain=gain)
        return net, clique_forest(net)

    return build


def fixed_tree_builder(net: FilteringNetwork, tree: CliqueTree) -> TreeBuilder:
    """Reuse one global network for every state."""

    def build(day_values: np.ndarray, tickers: list[str]):
        return net, tree

    return build


def _fit_state(
    values: np.ndarray,
    days: np.ndarray,
    tickers: list[str],
    tree_builder: TreeBuilder,
    ridge: float,
    state: int,
) -> tuple[SparsePrecisionModel, FilteringNetwork]:
    sample = values[days]
    net, tree = tree_builder(sample, tickers)
    S = np.cov(sample, rowvar=False, ddof=1)
    J, log_det, ridge_used = precision_from_moments(S, tree, ridge, auto_ridge=True)
    model = SparsePrecisionModel(
        mu=sample.mean(axis=0),
        precision=J,
        tree=tree,
        log_det=log_det,
        labels=list(tickers),
        ridge_used=ridge_used,
        model_id=f"state-{state}",
    )
    return model, net


def _path_total(loglik: np.ndarray, path: np.ndarray, gamma: float) -> float:
    switches = int(np.sum(path[1:] != path[:-1]))
    return float(loglik[np.arange(len(path)), path].sum()) - gamma * switches


def _initial_labels(rng: np.random.Generator, T: int, K: int, min_days: int) -> np.ndarray:
    """Uniformly random day assignment, topped up to the per-state minimum."""
    labels = rng.integers(0, K, size=T)
    for c in range(K):
        while np.sum(labels == c) < min_days:
            counts = np.bincount(labels, minlength=K)
            donor = int(np.argmax(counts))
            pool = np.flatnonzero(labels == donor)
            labels[rng.choice(pool)] = c
    return labels


def cluster(
    returns: ReturnsMatrix,
    tree_builder: TreeBuilder | None = None,
    config: IccConfig | None = None,
    seed: int | list[int] | None = None,
    ridge: float = 0.0,
) -> MarketStatePartition:
    """One clustering run: random start, alternate refit and Viterbi reassignment.

    A state that falls under the day minimum is re-seeded with the days fitting
    their current states worst, so the state count stays fixed.
    """
    config = config or IccConfig()
    tree_builder = tree_builder or default_tree_builder()
    values = returns.values
    T, p = values.shape
    K = config.n_states
    min_days = config.resolved_min_days(p)
    if T < K * min_days:
        raise ValidationError(
            f"{T} days cannot support {K} states of at least {min_days} days each"
        )
    seed_used = config.seed if seed is None else seed
    rng = np.random.default_rng(seed_used)
    labels = _initial_labels(rng, T, K, min_days)

    models: list[SparsePrecisionModel | None] = [None] * K
    networks: list[FilteringNetwork | None] = [None] * K
    iteration_totals: list[float] = []
    reseed_events: list[str] = []
    loglik = np.zeros((T, K))
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        for c in range(K):
            days = np.flatnonzero(labels == c)
            candidate, net = _fit_state(values, days, returns.tickers, tree_builder, ridge, c)
            prev = models[c]
            if prev is not None:
                # keep the previous model if the refit (with its re-chosen
                # support) scores the member days lower; this preserves the
                # monotone objective
                if log_likelihood_rows(prev, values[days]).sum() > log_likelihood_rows(
                    candidate, values[days]
                ).sum():
                    candidate, net = prev, networks[c]
            models[c], networks[c] = candidate, net
        for c in range(K):
            loglik[:, c] = log_likelihood_rows(models[c], values)
        path = viterbi_assign(loglik, config.gamma)
        iteration_totals.append(_path_total(loglik, path, config.gamma))

        counts = np.bincount(path, minlength=K)
        deficient = [c for c in range(K) if counts[c] < min_days]
        if deficient:
            fit_quality = loglik[np.arange(T), path]
            for c in deficient:
                need = min_days - counts[c]
                order = np.argsort(fit_quality, kind="stable")
                moved = 0
                for t in order:
                    donor = path[t]
                    if donor != c and counts[donor] > min_days:
                        path[t] = c
                        counts[donor] -= 1
                        counts[c] += 1
                        fit_quality[t] = np.inf
                        moved += 1
                        if moved == need:
                            break
                reseed_events.append(
                    f"iteration {iterations}: state {c} re-seeded with {moved} worst-fit days"
                )
            labels = path
            continue

        if np.array_equal(path, labels):
            break
        labels = path

    final_models = [m for m in models if m is not None]
    final_networks = [n for n in networks if n is not None]
    if len(final_models) != K:
        raise NumericalError("clustering failed to fit all states")

    # order states by their average position in time
    mean_pos = [float(np.mean(np.flatnonzero(labels == c))) for c in range(K)]
    order = sorted(range(K), key=lambda c: mean_pos[c])
    relabeling = [0] * K
    for new_label, c in enumerate(order, start=1):
        relabeling[c] = new_label
    final_labels = np.array([relabeling[c] for c in labels], dtype=int)
    total = _path_total(loglik, labels, config.gamma)

    return MarketStatePartition(
        labels=final_labels,
        models=[final_models[c] for c in order],
        networks=[final_networks[c] for c in order],
        total_penalized_likelihood=total,
        gamma=config.gamma,
        n_states=K,
        seed=seed_used,
        iterations=iterations,
        relabeling=relabeling,
        iteration_totals=iteration_totals,
        reseed_events=reseed_events,
        dates=list(returns.dates),
    )


def multi_restart_cluster(
    returns: ReturnsMatrix,
    tree_builder: TreeBuilder | None = None,
    config: IccConfig | None = None,
    ridge: float = 0.0,
) -> tuple[MarketStatePartition, RestartSummary]:
    """Best-of-N clustering plus a cross-restart stability report."""
    config = config or IccConfig()
    runs = [
        cluster(returns, tree_builder, config, seed=[config.seed, r], ridge=ridge)
        for r in range(config.restarts)
    ]
    totals = [run.total_penalized_likelihood for run in runs]
    best_idx = int(np.argmax(totals))
    R = len(runs)
    agreement = np.eye(R)
    for i in range(R):
        for j in range(i + 1, R):
            ari = adjusted_rand_score(runs[i].labels, runs[j].labels)
            agreement[i, j] = agreement[j, i] = ari
    return runs[best_idx], RestartSummary(
        totals=totals, best_restart=best_idx, agreement=agreement
    )
