"""Price table ingestion, sector maps, log-returns and synthetic data generation.

Conventions fixed here and relied on downstream:
- daily log-return r_t = ln(P_{t+1} / P_t)
- sample standard deviation uses the T-1 denominator
- standardization rescales each column to mean 0 / stddev 1; the original
  column statistics are kept on the result so values can be mapped back
- tickers with any missing price are dropped, never imputed
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, ValidationError

MISSING_SECTOR_MARKER = "N/A"
FUNDS_LABEL = "Funds"

# TMFG construction needs at least a tetrahedron.
MIN_UNIVERSE = 4


@dataclass(frozen=True)
class IngestConfig:
    """Column layout of a price file.

    ``wide``: one date column plus one column per ticker.
    ``long``: one row per (date, ticker) observation.
    """

    format: str = "wide"
    date_column: str = "date"
    ticker_column: str = "ticker"
    price_column: str = "price"

    def __post_init__(self):
        if self.format not in ("wide", "long"):
            raise ValidationError(f"unknown price file format {self.format!r}")


@dataclass
class PriceTable:
    """Dated close prices for a universe of tickers."""

    dates: list[dt.date]
    tickers: list[str]
    prices: np.ndarray  # T x p, positive where not missing
    missing: np.ndarray  # T x p bool

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        T, p = self.prices.shape
        if len(self.dates) != T or len(self.tickers) != p:
            raise DataError("price table dimensions inconsistent with labels")
        if len(set(self.tickers)) != p:
            raise DataError("duplicate tickers in price table")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        observed = ~self.missing
        vals = self.prices[observed]
        if vals.size and (not np.all(np.isfinite(vals)) or np.any(vals <= 0)):
            raise DataError("observed prices must be finite and positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.prices.shape

    def select_tickers(self, keep: list[str]) -> "PriceTable":
        idx = [self.tickers.index(t) for t in keep]
        return PriceTable(
            dates=list(self.dates),
            tickers=list(keep),
            prices=self.prices[:, idx].copy(),
            missing=self.missing[:, idx].copy(),
        )


@dataclass
class SectorMap:
    """Ticker -> sector label, with per-label counts."""

    labels: dict[str, str]
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            counts: dict[str, int] = {}
            for lab in self.labels.values():
                counts[lab] = counts.get(lab, 0) + 1
            self.counts = counts

    def sectors(self) -> list[str]:
        return sorted(self.counts)

    def members(self, sector: str) -> list[str]:
        return [t for t, lab in self.labels.items() if lab == sector]


@dataclass
class ReturnsMatrix:
    """T x p daily log-returns.

    ``col_means``/``col_stds`` always hold the statistics of the matrix the
    standardization was (or would be) computed from, so a standardized matrix
    can be mapped back to return units.
    """

    dates: list[dt.date]
    tickers: list[str]
    values: np.ndarray
    standardized: bool
    col_means: np.ndarray
    col_stds: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.col_means = np.asarray(self.col_means, dtype=float)
        self.col_stds = np.asarray(self.col_stds, dtype=float)
        T, p = self.values.shape
        if len(self.dates) != T or len(self.tickers) != p:
            raise DataError("returns matrix dimensions inconsistent with labels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def subset_rows(self, rows: np.ndarray) -> "ReturnsMatrix":
        rows = np.asarray(rows)
        return ReturnsMatrix(
            dates=[self.dates[i] for i in rows],
            tickers=list(self.tickers),
            values=self.values[rows],
            standardized=self.standardized,
            col_means=self.col_means.copy(),
            col_stds=self.col_stds.copy(),
        )


def _parse_date(raw, where: str) -> dt.date:
    if isinstance(raw, dt.date):
        return raw
    try:
        return dt.date.fromisoformat(str(raw).strip())
    except ValueError as exc:
        raise DataError(f"unparseable date {raw!r} at {where}") from exc


def load_price_table(path: str | Path, config: IngestConfig | None = None) -> PriceTable:
    """Load a price CSV into a PriceTable.

    Blank or non-numeric cells become missing values; non-positive prices are
    rejected with their location.
    """
    config = config or IngestConfig()
    path = Path(path)
    if not path.exists():
        raise DataError(f"price file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        with open(path) as fh:
            header = next(iter(fh), "").rstrip("\n").split(",")
    except Exception as exc:
        raise DataError(f"unreadable price file {path}: {exc}") from exc
    dupes = {c for c in header if header.count(c) > 1}
    if dupes:
        # pandas mangles repeated columns, which would hide duplicate cells
        raise DataError(f"{path}: duplicate columns: {', '.join(sorted(dupes))}")
    if config.format == "wide":
        return _price_table_from_wide(df, config, str(path))
    return _price_table_from_long(df, config, str(path))


def _parse_cells(cells: pd.DataFrame, dates, tickers, origin: str):
    """Common cell parsing: blanks -> missing, junk -> missing, <=0 -> error."""
    raw = cells.to_numpy(dtype=object)
    T, p = raw.shape
    prices = np.zeros((T, p))
    missing = np.zeros((T, p), dtype=bool)
    bad: list[str] = []
    for t in range(T):
        for i in range(p):
            text = str(raw[t, i]).strip()
            if text == "" or text.upper() in ("NA", "NAN", "N/A", "NULL", "NONE"):
                missing[t, i] = True
                continue
            try:
                val = float(text)
            except ValueError:
                missing[t, i] = True
                continue
            if not np.isfinite(val) or val <= 0:
                bad.append(f"({dates[t].isoformat()}, {tickers[i]}) = {text}")
            else:
                prices[t, i] = val
    if bad:
        raise DataError(f"non-positive prices in {origin}: " + "; ".join(bad[:10]))
    return prices, missing


def _price_table_from_wide(df: pd.DataFrame, config: IngestConfig, origin: str) -> PriceTable:
    if config.date_column not in df.columns:
        raise DataError(f"{origin}: missing date column {config.date_column!r}")
    tickers = [c for c in df.columns if c != config.date_column]
    if not tickers:
        raise DataError(f"{origin}: no ticker columns")
    dates = [_parse_date(v, f"{origin} row {i}") for i, v in enumerate(df[config.date_column])]
    seen: dict[dt.date, int] = {}
    for i, d in enumerate(dates):
        if d in seen:
            raise DataError(f"{origin}: duplicate date {d.isoformat()} (rows {seen[d]} and {i})")
        seen[d] = i
    order = np.argsort(np.array([d.toordinal() for d in dates]), kind="stable")
    dates = [dates[i] for i in order]
    cells = df[tickers].iloc[order]
    prices, missing = _parse_cells(cells, dates, tickers, origin)
    return PriceTable(dates=dates, tickers=tickers, prices=prices, missing=missing)


def _price_table_from_long(df: pd.DataFrame, config: IngestConfig, origin: str) -> PriceTable:
    for col in (config.date_column, config.ticker_column, config.price_column):
        if col not in df.columns:
            raise DataError(f"{origin}: missing column {col!r}")
    dates_raw = [_parse_date(v, f"{origin} row {i}") for i, v in enumerate(df[config.date_column])]
    tickers_raw = [str(v).strip() for v in df[config.ticker_column]]
    dates = sorted(set(dates_raw))
    tickers = sorted(set(tickers_raw))
    date_idx = {d: i for i, d in enumerate(dates)}
    tick_idx = {t: i for i, t in enumerate(tickers)}
    cells = np.full((len(dates), len(tickers)), "", dtype=object)
    filled = np.zeros((len(dates), len(tickers)), dtype=bool)
    for row, (d, tk) in enumerate(zip(dates_raw, tickers_raw)):
        t, i = date_idx[d], tick_idx[tk]
        if filled[t, i]:
            raise DataError(f"{origin}: duplicate cell ({d.isoformat()}, {tk})")
        filled[t, i] = True
        cells[t, i] = str(df[config.price_column].iloc[row])
    prices, missing = _parse_cells(pd.DataFrame(cells), dates, tickers, origin)
    return PriceTable(dates=dates, tickers=tickers, prices=prices, missing=missing)


def filter_full_history(table: PriceTable) -> PriceTable:
    """Keep only tickers observed on every date, preserving column order."""
    complete = ~table.missing.any(axis=0)
    keep = [t for t, ok in zip(table.tickers, complete) if ok]
    if len(keep) < MIN_UNIVERSE:
        raise DataError(
            f"only {len(keep)} tickers have complete histories; at least {MIN_UNIVERSE} required"
        )
    if len(keep) == len(table.tickers):
        return table
    return table.select_tickers(keep)


def load_sector_map(path: str | Path, universe: list[str]) -> SectorMap:
    """Load ticker,sector CSV; the N/A marker is relabeled as Funds."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"sector file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise DataError(f"unreadable sector file {path}: {exc}") from exc
    for col in ("ticker", "sector"):
        if col not in df.columns:
            raise DataError(f"{path}: missing column {col!r}")
    raw = {}
    for _, row in df.iterrows():
        tick = str(row["ticker"]).strip()
        if tick in raw:
            raise DataError(f"{path}: duplicate ticker {tick}")
        raw[tick] = str(row["sector"]).strip()
    absent = [t for t in universe if t not in raw]
    if absent:
        raise DataError(f"{path}: tickers missing from sector file: {', '.join(absent)}")
    labels = {}
    for tick in universe:
        lab = raw[tick]
        if lab == "" or lab.upper() == MISSING_SECTOR_MARKER:
            lab = FUNDS_LABEL
        labels[tick] = lab
    return SectorMap(labels=labels)


def compute_log_returns(table: PriceTable) -> ReturnsMatrix:
    """r[t] = ln(P[t+1] / P[t]); requires complete histories."""
    if table.missing.any():
        raise DataError("price table has missing cells; run filter_full_history first")
    if table.prices.shape[0] < 2:
        raise DataError("need at least two dates to compute returns")
    values = np.log(table.prices[1:] / table.prices[:-1])
    means = values.mean(axis=0)
    T = values.shape[0]
    stds = values.std(axis=0, ddof=1) if T > 1 else np.zeros(values.shape[1])
    return ReturnsMatrix(
        dates=list(table.dates[1:]),
        tickers=list(table.tickers),
        values=values,
        standardized=False,
        col_means=means,
        col_stds=stds,
    )


def standardize(returns: ReturnsMatrix) -> ReturnsMatrix:
    """Rescale every column to mean 0 / stddev 1 (T-1 denominator)."""
    if returns.standardized:
        raise ValidationError("returns are already standardized")
    T = returns.values.shape[0]
    if T < 2:
        raise ValidationError("need at least two observations to standardize")
    means = returns.values.mean(axis=0)
    stds = returns.values.std(axis=0, ddof=1)
    zero = np.flatnonzero(stds <= 0)
    if zero.size:
        names = ", ".join(returns.tickers[i] for i in zero)
        raise DataError(f"zero-variance columns cannot be standardized: {names}")
    return ReturnsMatrix(
        dates=list(returns.dates),
        tickers=list(returns.tickers),
        values=(returns.values - means) / stds,
        standardized=True,
        col_means=means,
        col_stds=stds,
    )


@dataclass(frozen=True)
class SynthSegment:
    length: int
    mean: list[float] | float
    covariance: dict

    def mean_vector(self, p: int) -> np.ndarray:
        if isinstance(self.mean, (int, float)):
            return np.full(p, float(self.mean))
        mu = np.asarray(self.mean, dtype=float)
        if mu.shape != (p,):
            raise ValidationError(f"segment mean has length {mu.size}, expected {p}")
        return mu


@dataclass(frozen=True)
class SynthConfig:
    """Block-structured Gaussian regime generator.

    covariance specs: {"kind": "identity"} |
    {"kind": "block", "sizes": [...], "rho_within": r or [...], "rho_between": r,
     "scale": s or [...]} | {"kind": "dense", "matrix": [[...]]}
    """

    p: int
    segments: tuple[SynthSegment, ...]
    T: int | None = None
    start_date: dt.date = dt.date(2005, 1, 3)

    def __post_init__(self):
        if self.p < MIN_UNIVERSE:
            raise ValidationError(f"synthetic universe needs p >= {MIN_UNIVERSE}, got {self.p}")
        if not self.segments:
            raise ValidationError("at least one regime segment required")
        total = sum(s.length for s in self.segments)
        if any(s.length < 1 for s in self.segments):
            raise ValidationError("segment lengths must be positive")
        if total < 2:
            raise ValidationError("need at least two return days in total")
        if self.T is not None and self.T != total:
            raise ValidationError(
                f"declared T={self.T} does not match total segment length {total}"
            )

    @property
    def total_days(self) -> int:
        return sum(s.length for s in self.segments)

    def regime_labels(self) -> np.ndarray:
        """Ground-truth regime index per return day (0-based)."""
        out = np.concatenate(
            [np.full(s.length, k, dtype=int) for k, s in enumerate(self.segments)]
        )
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        try:
            segments = tuple(
                SynthSegment(
                    length=int(s["length"]),
                    mean=s.get("mean", 0.0),
                    covariance=s.get("covariance", {"kind": "identity"}),
                )
                for s in doc["segments"]
            )
            return cls(p=int(doc["p"]), segments=segments, T=doc.get("T"))
        except KeyError as exc:
            raise ValidationError(f"synth config missing field {exc}") from exc

    @classmethod
    def from_json(cls, path: str | Path) -> tuple["SynthConfig", int | None]:
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_dict(doc), doc.get("seed")


def covariance_from_spec(spec: dict, p: int) -> np.ndarray:
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return np.eye(p)
    if kind == "dense":
        mat = np.asarray(spec["matrix"], dtype=float)
        if mat.shape != (p, p):
            raise ValidationError(f"dense covariance must be {p}x{p}")
        return mat
    if kind == "block":
        sizes = [int(s) for s in spec["sizes"]]
        if sum(sizes) != p:
            raise ValidationError(f"block sizes {sizes} do not sum to p={p}")
        rho_w = spec.get("rho_within", 0.5)
        rho_b = float(spec.get("rho_between", 0.0))
        scale = spec.get("scale", 1.0)
        rho_w = [float(rho_w)] * len(sizes) if np.isscalar(rho_w) else [float(r) for r in rho_w]
        scale = [float(scale)] * len(sizes) if np.isscalar(scale) else [float(s) for s in scale]
        if len(rho_w) != len(sizes) or len(scale) != len(sizes):
            raise ValidationError("per-block rho_within/scale must match number of blocks")
        corr = np.full((p, p), rho_b)
        start = 0
        stds = np.empty(p)
        for size, rw, sc in zip(sizes, rho_w, scale):
            blk = slice(start, start + size)
            corr[blk, blk] = rw
            stds[blk] = sc
            start += size
        np.fill_diagonal(corr, 1.0)
        return corr * np.outer(stds, stds)
    raise ValidationError(f"unknown covariance spec kind {kind!r}")


def synth_generate(spec: SynthConfig, seed: int) -> PriceTable:
    """Sample regime-switching Gaussian returns and exponentiate into prices.

    Day 0 is priced at 100; each of the ``total_days`` sampled return days adds
    one further price row, so the table has total_days + 1 rows.
    """
    rng = np.random.default_rng(seed)
    p = spec.p
    chunks = []
    for segment in spec.segments:
        cov = covariance_from_spec(segment.covariance, p)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("requested covariance is not positive definite") from exc
        z = rng.standard_normal((segment.length, p))
        chunks.append(segment.mean_vector(p) + z @ chol.T)
    rets = np.vstack(chunks)
    log_prices = np.vstack([np.zeros(p), np.cumsum(rets, axis=0)])
    prices = 100.0 * np.exp(log_prices)
    dates = [spec.start_date + dt.timedelta(days=i) for i in range(prices.shape[0])]
    tickers = [f"S{i:03d}" for i in range(p)]
    return PriceTable(
        dates=dates,
        tickers=tickers,
        prices=prices,
        missing=np.zeros_like(prices, dtype=bool),
    )
