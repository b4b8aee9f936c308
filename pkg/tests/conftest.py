import datetime as dt

import numpy as np
import pytest

from stressnet.data_ingest import ReturnsMatrix
from stressnet.logo import estimate_precision
from stressnet.tmfg import SimilarityMatrix, build_tmfg, clique_forest


def random_similarity(p: int, rng: np.random.Generator) -> SimilarityMatrix:
    """Correlation matrix of a random Gaussian sample (generic, distinct weights)."""
    X = rng.standard_normal((max(2 * p, 30), p))
    C = np.corrcoef(X, rowvar=False)
    C = np.clip(0.5 * (C + C.T), -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return SimilarityMatrix(values=C, labels=[f"T{i}" for i in range(p)])


def returns_from_values(values: np.ndarray, standardized: bool = True) -> ReturnsMatrix:
    T, p = values.shape
    return ReturnsMatrix(
        dates=[dt.date(2010, 1, 1) + dt.timedelta(days=i) for i in range(T)],
        tickers=[f"T{i}" for i in range(p)],
        values=np.asarray(values, dtype=float),
        standardized=standardized,
        col_means=values.mean(axis=0),
        col_stds=values.std(axis=0, ddof=1) if T > 1 else np.ones(p),
    )


def random_model(p: int, seed: int, T: int | None = None, gain: str = "squared"):
    """TMFG + sparse precision fitted to a factor-structured Gaussian sample."""
    rng = np.random.default_rng(seed)
    T = T or max(6 * p, 120)
    betas = rng.uniform(0.2, 0.9, size=p)
    X = betas * rng.standard_normal((T, 1)) + rng.standard_normal((T, p)) * rng.uniform(
        0.5, 1.2, size=p
    )
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    rets = returns_from_values(X)
    sim_vals = np.corrcoef(X, rowvar=False)
    sim_vals = np.clip(0.5 * (sim_vals + sim_vals.T), -1, 1)
    np.fill_diagonal(sim_vals, 1.0)
    sim = SimilarityMatrix(values=sim_vals, labels=list(rets.tickers))
    net = build_tmfg(sim, gain)
    tree = clique_forest(net)
    model = estimate_precision(rets, tree, model_id=f"test-{seed}")
    return model, net, tree, rets


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
