"""Ordinary least squares with classical inference.

Estimation goes through a pivoted QR factorization; standard errors come
from the homoskedastic covariance sigma^2 (X'X)^{-1} and p-values from the
two-sided t distribution. The sector regressions relate per-sector impact
and response to sector size, internal-link fraction and log mean centrality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .errors import ValidationError

SECTOR_REGRESSORS = ("size", "internal_fraction", "log_centrality")
MIN_SECTOR_ROWS = 6


@dataclass
class OlsResult:
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    r_squared: float
    df_resid: int
    condition_number: float
    variable_names: list[str]

    def as_rows(self) -> list[dict]:
        return [
            {
                "variable": name,
                "value": float(b),
                "std_error": float(se),
                "t_stat": float(t),
                "p_value": float(pv),
            }
            for name, b, se, t, pv in zip(
                self.variable_names, self.coefficients, self.std_errors,
                self.t_stats, self.p_values,
            )
        ]


@dataclass
class RegressionReport:
    target: str
    convention: str  # "standardized" or "raw"
    fit: OlsResult
    raw_fit: OlsResult


def ols_fit(
    design: np.ndarray,
    target: np.ndarray,
    intercept: bool = True,
    variable_names: list[str] | None = None,
) -> OlsResult:
    """Least squares with standard errors, t statistics and p-values."""
    X = np.atleast_2d(np.asarray(design, dtype=float))
    if X.ndim != 2:
        raise ValidationError("design must be a 2-d array")
    y = np.asarray(target, dtype=float).ravel()
    n, k = X.shape
    if y.size != n:
        raise ValidationError(f"target length {y.size} does not match {n} rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("design or target contains non-finite values")
    names = list(variable_names) if variable_names else [f"x{i}" for i in range(k)]
    if len(names) != k:
        raise ValidationError("variable_names length does not match design columns")
    if intercept:
        X = np.column_stack([np.ones(n), X])
        names = ["intercept"] + names
    m = X.shape[1]
    if n <= m:
        raise ValidationError(f"need more than {m} observations, got {n}")

    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, m) * np.finfo(float).eps if diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    if rank < m:
        dropped = sorted(names[j] for j in piv[rank:])
        raise ValidationError(f"design is rank deficient; collinear columns: {', '.join(dropped)}")

    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(m)
    beta[piv] = beta_piv

    resid = y - X @ beta
    df = n - m
    ssr = float(resid @ resid)
    sigma2 = ssr / df
    r_inv = scipy.linalg.solve_triangular(R, np.eye(m))
    xtx_inv_piv = r_inv @ r_inv.T
    xtx_inv = np.empty((m, m))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_piv
    std_errors = np.sqrt(sigma2 * np.diag(xtx_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = np.where(std_errors > 0, beta / std_errors, np.inf * np.sign(beta))
    p_values = 2.0 * stats.t.sf(np.abs(t_stats), df)

    if intercept:
        centered = y - y.mean()
        sst = float(centered @ centered)
    else:
        sst = float(y @ y)
    r_squared = 1.0 - ssr / sst if sst > 0 else 0.0

    return OlsResult(
        coefficients=beta,
        std_errors=std_errors,
        t_stats=t_stats,
        p_values=np.clip(p_values, 0.0, 1.0),
        r_squared=float(np.clip(r_squared, 0.0, 1.0)) if intercept else float(r_squared),
        df_resid=df,
        condition_number=float(np.linalg.cond(X)),
        variable_names=names,
    )


def _zscore(v: np.ndarray) -> np.ndarray:
    s = v.std(ddof=1)
    if s <= 0:
        return v - v.mean()
    return (v - v.mean()) / s


def sector_regression(
    profile: pd.DataFrame, intercept: bool = True
) -> tuple[RegressionReport, RegressionReport]:
    """Impact and response regressions over the per-sector profile table.

    Regressors and target are z-scored for the headline fit so coefficient
    magnitudes are comparable; the raw-scale fit is attached alongside.
    """
    needed = set(SECTOR_REGRESSORS) | {"impact", "response"}
    missing = needed - set(profile.columns)
    if missing:
        raise ValidationError(f"profile table missing columns: {', '.join(sorted(missing))}")
    clean = profile.replace([np.inf, -np.inf], np.nan).dropna(subset=list(needed))
    if len(clean) < MIN_SECTOR_ROWS:
        raise ValidationError(
            f"need at least {MIN_SECTOR_ROWS} complete sector rows, got {len(clean)}"
        )
    design = clean[list(SECTOR_REGRESSORS)].to_numpy(dtype=float)
    design_std = np.column_stack([_zscore(design[:, j]) for j in range(design.shape[1])])
    reports = []
    for target in ("impact", "response"):
        y = clean[target].to_numpy(dtype=float)
        fit = ols_fit(design_std, _zscore(y), intercept, list(SECTOR_REGRESSORS))
        raw = ols_fit(design, y, intercept, list(SECTOR_REGRESSORS))
        reports.append(
            RegressionReport(target=target, convention="standardized", fit=fit, raw_fit=raw)
        )
    return reports[0], reports[1]


def regression_document(report: RegressionReport) -> dict:
    """JSON layout mirroring the published regression tables."""
    rows = [r for r in report.fit.as_rows() if r["variable"] != "intercept"]
    return {
        "target": report.target,
        "convention": report.convention,
        "rows": [
            {"variable": r["variable"], "value": r["value"], "p_value": r["p_value"]}
            for r in rows
        ],
        "r_squared": report.fit.r_squared,
        "raw_rows": [
            {"variable": r["variable"], "value": r["value"], "p_value": r["p_value"]}
            for r in report.raw_fit.as_rows()
        ],
    }
