"""Sparse precision estimation on a clique forest, and Gaussian likelihoods.

The precision matrix is assembled locally: invert the moment matrix on each
tetrahedral clique, subtract the inversion on each triangular separator, and
embed the blocks into the full matrix. The result is the maximum-likelihood
precision among matrices whose support is restricted to the graph, and its
log-determinant falls out of the same decomposition:

    log|J| = sum_separators log|S_sep| - sum_cliques log|S_clique|
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .data_ingest import ReturnsMatrix
from .errors import NumericalError, ValidationError
from .tmfg import CliqueTree

# Blanket-materializing the covariance is cheap at market scale; beyond this
# size individual column solves are used instead.
_DENSE_COVARIANCE_LIMIT = 2000

_AUTO_RIDGE_REL = 1e-8


@dataclass
class SparsePrecisionModel:
    """Mean vector and clique-forest-supported precision matrix."""

    mu: np.ndarray
    precision: np.ndarray  # dense symmetric, exact zeros off the support
    tree: CliqueTree
    log_det: float
    labels: list[str]
    ridge_used: float = 0.0
    model_id: str = ""

    _sparse: scipy.sparse.csr_matrix | None = field(default=None, repr=False)
    _chol: tuple | None = field(default=None, repr=False)
    _covariance: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.precision = np.asarray(self.precision, dtype=float)
        p = self.mu.size
        if self.precision.shape != (p, p):
            raise ValidationError("precision matrix shape inconsistent with mean")

    @property
    def p(self) -> int:
        return self.mu.size

    @property
    def sparse(self) -> scipy.sparse.csr_matrix:
        if self._sparse is None:
            self._sparse = scipy.sparse.csr_matrix(self.precision)
        return self._sparse

    def _factor(self):
        if self._chol is None:
            try:
                self._chol = scipy.linalg.cho_factor(self.precision, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise NumericalError("precision matrix is not positive definite") from exc
        return self._chol

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve J v = rhs through the cached Cholesky factor."""
        return scipy.linalg.cho_solve(self._factor(), rhs)

    def covariance(self) -> np.ndarray:
        """Full implied covariance (inverse precision), cached."""
        if self._covariance is None:
            if self.p > _DENSE_COVARIANCE_LIMIT:
                raise ValidationError(
                    f"refusing to materialize a {self.p}x{self.p} covariance; "
                    "use covariance_columns instead"
                )
            cov = self.solve(np.eye(self.p))
            self._covariance = 0.5 * (cov + cov.T)
        return self._covariance


def _invert_block(S: np.ndarray, ridge: float, what: str, auto_ridge: bool):
    """(inverse, logdet, ridge applied) of S + ridge*I, auto-bumping if singular."""
    size = S.shape[0]
    applied = ridge
    B = S + ridge * np.eye(size) if ridge else S
    for attempt in (0, 1):
        try:
            c, low = scipy.linalg.cho_factor(B, lower=True)
            logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
            inv = scipy.linalg.cho_solve((c, low), np.eye(size))
            return 0.5 * (inv + inv.T), logdet, applied
        except scipy.linalg.LinAlgError:
            if attempt == 0 and auto_ridge and ridge == 0.0:
                applied = _AUTO_RIDGE_REL * float(np.trace(S)) / size
                B = S + applied * np.eye(size)
                continue
            if ridge == 0.0 and not auto_ridge:
                raise NumericalError(
                    f"singular {what} block; pass a small ridge to regularize"
                ) from None
            raise NumericalError(f"{what} block not positive definite after ridge") from None


def precision_from_moments(
    S: np.ndarray, tree: CliqueTree, ridge: float = 0.0, auto_ridge: bool = True
) -> tuple[np.ndarray, float, float]:
    """Assemble (J, log|J|, ridge applied) from a moment matrix and clique tree."""
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    if S.shape != (p, p):
        raise ValidationError("moment matrix must be square")
    if tree.p != p:
        raise ValidationError(
            f"clique tree covers {tree.p} nodes but the moment matrix has {p}"
        )
    if ridge < 0:
        raise ValidationError("ridge must be nonnegative")
    J = np.zeros((p, p))
    log_det = 0.0
    max_ridge = 0.0
    for clique in tree.cliques:
        ix = np.array(clique)
        inv, logdet, applied = _invert_block(S[np.ix_(ix, ix)], ridge, "clique", auto_ridge)
        J[np.ix_(ix, ix)] += inv
        log_det -= logdet
        max_ridge = max(max_ridge, applied)
    for sep in tree.separators:
        ix = np.array(sep)
        inv, logdet, applied = _invert_block(S[np.ix_(ix, ix)], ridge, "separator", auto_ridge)
        J[np.ix_(ix, ix)] -= inv
        log_det += logdet
        max_ridge = max(max_ridge, applied)
    return J, log_det, max_ridge


def estimate_precision(
    returns: ReturnsMatrix,
    tree: CliqueTree,
    ridge: float = 0.0,
    auto_ridge: bool = True,
    model_id: str = "",
) -> SparsePrecisionModel:
    """Fit the clique-forest precision model to a return sample.

    On standardized returns the block moment matrices are correlation blocks,
    which keeps the model on the unit-shock scale used by the stress measures.
    """
    X = returns.values
    if X.shape[0] < 2:
        raise ValidationError("need at least two observations to estimate a model")
    S = np.cov(X, rowvar=False, ddof=1)
    J, log_det, ridge_used = precision_from_moments(S, tree, ridge, auto_ridge)
    model = SparsePrecisionModel(
        mu=X.mean(axis=0),
        precision=J,
        tree=tree,
        log_det=log_det,
        labels=list(returns.tickers),
        ridge_used=ridge_used,
        model_id=model_id,
    )
    model._factor()  # surfaces a non-PD assembly immediately
    return model


def gaussian_log_likelihood(model: SparsePrecisionModel, x: np.ndarray) -> float:
    """log|J| - (x-mu)' J (x-mu); the quadratic form runs over the support only."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.p,):
        raise ValidationError(f"expected a length-{model.p} vector, got shape {x.shape}")
    d = x - model.mu
    return model.log_det - float(d @ (model.sparse @ d))


def log_likelihood_rows(model: SparsePrecisionModel, X: np.ndarray) -> np.ndarray:
    """Vectorized gaussian_log_likelihood over the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise ValidationError(f"expected a T x {model.p} matrix, got shape {X.shape}")
    D = X - model.mu
    quad = np.einsum("ij,ij->i", D @ model.sparse, D) if X.size else np.zeros(0)
    return model.log_det - quad


def solve_covariance_columns(model: SparsePrecisionModel, indices) -> np.ndarray:
    """Columns of the implied covariance for the requested variables (p x k)."""
    idx = np.asarray(list(indices), dtype=int)
    if idx.size == 0:
        raise ValidationError("no indices requested")
    if idx.min() < 0 or idx.max() >= model.p:
        raise ValidationError("covariance column index out of range")
    if model.p <= _DENSE_COVARIANCE_LIMIT:
        return model.covariance()[:, idx]
    rhs = np.zeros((model.p, idx.size))
    rhs[idx, np.arange(idx.size)] = 1.0
    return model.solve(rhs)


def model_document(model: SparsePrecisionModel) -> dict:
    """JSON-ready export: mean, support edges with values, diagonal, log-det."""
    p = model.p
    edges = []
    for i in range(p):
        for j in range(i + 1, p):
            if model.precision[i, j] != 0.0:
                edges.append([i, j, float(model.precision[i, j])])
    return {
        "mu": [float(v) for v in model.mu],
        "edges": edges,
        "diag": [float(model.precision[i, i]) for i in range(p)],
        "logdet": float(model.log_det),
        "ridge_used": float(model.ridge_used),
        "labels": list(model.labels),
        "model_id": model.model_id,
    }
