"""Panel data model, weighting/deflation, mu_t recovery and descriptive statistics.

A panel is a rectangular (year x education class) grid of binned wage
distributions.  Each cell carries the class share of the labor force, the
conditional median and fifteen relative frequencies over $10,000 bins in
constant 2003 dollars, the last bin open-ended.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, ValidationError

N_BINS = 15
BIN_WIDTH = 10_000.0
DEFAULT_EDGES = tuple([i * BIN_WIDTH for i in range(N_BINS)] + [math.inf])

CLASS_LABELS = (
    "eighth grade or less",
    "some high school",
    "high school graduate",
    "some college",
    "college graduate",
    "post graduate education",
)

FREQ_COLUMNS = tuple(f"f{i:02d}" for i in range(1, N_BINS + 1))
PANEL_HEADER = ("year", "class_id", "share", "median") + FREQ_COLUMNS


def bin_labels(edges: Sequence[float] = DEFAULT_EDGES) -> list[str]:
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        lo_s = f"${int(lo) + 1:,}"
        out.append(f"{lo_s}+" if math.isinf(hi) else f"{lo_s}-${int(hi):,}")
    return out


# ---------------------------------------------------------------------------
# Panel types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelCell:
    year: int
    class_id: int
    share: float
    median: float
    freqs: tuple
    sample_n: int | None = None

    def __post_init__(self):
        f = tuple(float(v) for v in self.freqs)
        object.__setattr__(self, "freqs", f)
        where = f"cell (year={self.year}, class={self.class_id})"
        if len(f) != N_BINS:
            raise ValidationError(f"{where}: expected {N_BINS} frequencies, got {len(f)}")
        if any(v < 0 or not math.isfinite(v) for v in f):
            raise ValidationError(f"{where}: frequencies must be finite and >= 0")
        if abs(math.fsum(f) - 1.0) > 1e-9:
            raise ValidationError(f"{where}: frequencies sum to {math.fsum(f)!r}, not 1")
        if not (self.median > 0):
            raise ValidationError(f"{where}: median must be > 0")
        if not (0.0 <= self.share <= 1.0):
            raise ValidationError(f"{where}: share must lie in [0, 1]")


@dataclass
class Panel:
    """Rectangular panel stored as arrays.

    ``shares`` and ``medians`` have shape (years, classes); ``freqs`` has
    shape (years, classes, bins).  ``sample_n`` is optional and, when
    present, has the shape of ``shares``.
    """

    years: np.ndarray
    class_ids: np.ndarray
    shares: np.ndarray
    medians: np.ndarray
    freqs: np.ndarray
    sample_n: np.ndarray | None = None
    edges: tuple = DEFAULT_EDGES
    class_labels: tuple = ()
    interpolated_years: tuple = ()

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.class_ids = np.asarray(self.class_ids, dtype=int)
        self.shares = np.asarray(self.shares, dtype=float)
        self.medians = np.asarray(self.medians, dtype=float)
        self.freqs = np.asarray(self.freqs, dtype=float)
        if self.sample_n is not None:
            self.sample_n = np.asarray(self.sample_n, dtype=np.int64)
        T, K = len(self.years), len(self.class_ids)
        if self.shares.shape != (T, K) or self.medians.shape != (T, K):
            raise ValidationError("shares/medians must have shape (years, classes)")
        if self.freqs.shape != (T, K, len(self.edges) - 1):
            raise ValidationError("freqs must have shape (years, classes, bins)")
        if np.any(np.diff(self.years) <= 0):
            raise ValidationError("panel years must be strictly increasing")
        if not self.class_labels:
            labels = CLASS_LABELS if K == len(CLASS_LABELS) else tuple(f"class {c}" for c in self.class_ids)
            self.class_labels = labels
        for t, y in enumerate(self.years):
            s = math.fsum(self.shares[t])
            if abs(s - 1.0) > 1e-9:
                raise ValidationError(f"year {y}: class shares sum to {s!r}, not 1")
            for k in range(K):
                fs = math.fsum(self.freqs[t, k])
                if abs(fs - 1.0) > 1e-9 or np.any(self.freqs[t, k] < 0):
                    raise ValidationError(
                        f"year {y}, class {self.class_ids[k]}: frequencies must be >= 0 and sum to 1 (sum={fs!r})"
                    )
        if np.any(~(self.medians > 0)):
            t, k = np.argwhere(~(self.medians > 0))[0]
            raise ValidationError(f"year {self.years[t]}, class {self.class_ids[k]}: median must be > 0")
        if np.any(self.shares < 0):
            raise ValidationError("class shares must be >= 0")

    @property
    def n_years(self) -> int:
        return len(self.years)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    def cell(self, year: int, class_id: int) -> PanelCell:
        t = self.year_index(year)
        k = int(np.flatnonzero(self.class_ids == class_id)[0])
        n = None if self.sample_n is None else int(self.sample_n[t, k])
        return PanelCell(int(year), int(class_id), float(self.shares[t, k]), float(self.medians[t, k]),
                         tuple(self.freqs[t, k]), n)

    def cells(self) -> list[PanelCell]:
        return [self.cell(y, c) for y in self.years for c in self.class_ids]

    def year_index(self, year: int) -> int:
        idx = np.flatnonzero(self.years == year)
        if not len(idx):
            raise KeyError(f"year {year} not in panel")
        return int(idx[0])

    def unconditional_freqs(self) -> np.ndarray:
        """Share-weighted mixture of the class frequencies, shape (years, bins)."""
        return np.einsum("tk,tkb->tb", self.shares, self.freqs)

    def replace(self, **changes) -> "Panel":
        kw = dict(years=self.years, class_ids=self.class_ids, shares=self.shares, medians=self.medians,
                  freqs=self.freqs, sample_n=self.sample_n, edges=self.edges, class_labels=self.class_labels,
                  interpolated_years=self.interpolated_years)
        kw.update(changes)
        return Panel(**kw)

    @classmethod
    def from_cells(cls, cells: Iterable[PanelCell], edges=DEFAULT_EDGES, interpolate_missing: bool = False,
                   class_labels: tuple = ()) -> "Panel":
        cells = list(cells)
        if not cells:
            raise ValidationError("panel has no cells")
        years = sorted({c.year for c in cells})
        classes = sorted({c.class_id for c in cells})
        grid = {}
        for c in cells:
            key = (c.year, c.class_id)
            if key in grid:
                raise ValidationError(f"duplicate cell for year {c.year}, class {c.class_id}")
            grid[key] = c
        for y in years:
            for k in classes:
                if (y, k) not in grid:
                    raise ValidationError(f"panel is not rectangular: missing year {y}, class {k}")
        T, K = len(years), len(classes)
        shares = np.array([[grid[y, k].share for k in classes] for y in years])
        medians = np.array([[grid[y, k].median for k in classes] for y in years])
        freqs = np.array([[grid[y, k].freqs for k in classes] for y in years])
        has_n = [grid[y, k].sample_n is not None for y in years for k in classes]
        if any(has_n) and not all(has_n):
            raise ValidationError("sample_n must be given for every cell or for none")
        n = np.array([[grid[y, k].sample_n for k in classes] for y in years]) if all(has_n) else None
        panel = cls(np.array(years), np.array(classes), shares, medians, freqs, n, tuple(edges),
                    tuple(class_labels))
        gaps = [y for y in range(years[0], years[-1] + 1) if y not in set(years)]
        if gaps:
            if not interpolate_missing:
                raise ValidationError(
                    f"panel is missing years {gaps}; pass interpolate_missing to fill them by linear interpolation"
                )
            panel = interpolate_missing_years(panel)
        return panel


def interpolate_missing_years(panel: Panel) -> Panel:
    """Fill gaps in the year sequence by linear interpolation between neighbours.

    Frequencies and shares are renormalized after interpolation.  The filled
    years are recorded in ``interpolated_years``.
    """
    years = panel.years
    full = np.arange(years[0], years[-1] + 1)
    missing = tuple(int(y) for y in full if y not in set(years.tolist()))
    if not missing:
        return panel

    def interp(arr):
        flat = arr.reshape(len(years), -1)
        out = np.empty((len(full), flat.shape[1]))
        for j in range(flat.shape[1]):
            out[:, j] = np.interp(full, years, flat[:, j])
        return out.reshape((len(full),) + arr.shape[1:])

    shares = interp(panel.shares)
    shares /= shares.sum(axis=1, keepdims=True)
    freqs = interp(panel.freqs)
    freqs /= freqs.sum(axis=2, keepdims=True)
    medians = interp(panel.medians)
    n = None
    if panel.sample_n is not None:
        n = np.rint(interp(panel.sample_n.astype(float))).astype(np.int64)
    return Panel(full, panel.class_ids, shares, medians, freqs, n, panel.edges, panel.class_labels,
                 tuple(sorted(set(panel.interpolated_years) | set(missing))))


# ---------------------------------------------------------------------------
# Panel CSV
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def panel_to_csv(panel: Panel) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = list(PANEL_HEADER) + (["n"] if panel.sample_n is not None else [])
    w.writerow(header)
    for t, y in enumerate(panel.years):
        for k, c in enumerate(panel.class_ids):
            row = [int(y), int(c), _fmt(panel.shares[t, k]), _fmt(panel.medians[t, k])]
            row += [_fmt(v) for v in panel.freqs[t, k]]
            if panel.sample_n is not None:
                row.append(int(panel.sample_n[t, k]))
            w.writerow(row)
    return buf.getvalue()


def write_panel_csv(panel: Panel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(panel_to_csv(panel))


def read_panel_csv(path_or_text, interpolate_missing: bool = False) -> Panel:
    """Parse a panel CSV (``year,class_id,share,median,f01..f15[,n]``).

    Raises :class:`ValidationError` naming the offending row on any problem.
    """
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError("panel CSV is empty") from None
    if tuple(header[: len(PANEL_HEADER)]) != PANEL_HEADER or header[len(PANEL_HEADER):] not in ([], ["n"]):
        raise ValidationError(f"panel CSV header must be {','.join(PANEL_HEADER)}[,n]; got {','.join(header)}")
    has_n = len(header) > len(PANEL_HEADER)
    cells = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not v.strip() for v in row):
            continue
        if len(row) != len(header):
            raise ValidationError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            year, cls_id = int(row[0]), int(row[1])
            share, median = float(row[2]), float(row[3])
            freqs = tuple(float(v) for v in row[4:4 + N_BINS])
            n = int(row[-1]) if has_n else None
        except ValueError as exc:
            raise ValidationError(f"row {lineno}: {exc}") from None
        try:
            cells.append(PanelCell(year, cls_id, share, median, freqs, n))
        except ValidationError as exc:
            raise ValidationError(f"row {lineno}: {exc}") from None
    return Panel.from_cells(cells, interpolate_missing=interpolate_missing)


# ---------------------------------------------------------------------------
# Weighting and deflation
# ---------------------------------------------------------------------------


def normalize_weights(raw: Sequence[float]) -> np.ndarray:
    """Rescale survey weights so they sum to the sample size n."""
    u = np.asarray(raw, dtype=float)
    if u.ndim != 1 or len(u) == 0 or np.any(u < 0):
        raise DomainError("weights must be a non-empty list of non-negative numbers")
    total = math.fsum(u)
    if total <= 0:
        raise DomainError("at least one weight must be positive")
    return u / total * len(u)


@dataclass(frozen=True)
class DeflatorTable:
    """Price index by year, normalized so the base year is 1."""

    index: Mapping[int, float]
    base_year: int = 2003

    def __post_init__(self):
        idx = {int(k): float(v) for k, v in self.index.items()}
        if any(not (v > 0) for v in idx.values()):
            raise ValidationError("deflator index values must be strictly positive")
        if self.base_year not in idx:
            raise ValidationError(f"deflator table lacks the base year {self.base_year}")
        base = idx[self.base_year]
        object.__setattr__(self, "index", {k: v / base for k, v in sorted(idx.items())})

    @classmethod
    def from_csv(cls, path, base_year: int = 2003) -> "DeflatorTable":
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        try:
            return cls({int(r["year"]): float(r["index"]) for r in rows}, base_year)
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"deflator CSV must have columns year,index: {exc}") from None


def deflate(amount: float, year: int, table: DeflatorTable) -> float:
    if year not in table.index:
        raise KeyError(f"deflator table has no entry for {year}")
    return amount * (table.index[table.base_year] / table.index[year])


def inflate(amount: float, year: int, table: DeflatorTable) -> float:
    if year not in table.index:
        raise KeyError(f"deflator table has no entry for {year}")
    return amount * (table.index[year] / table.index[table.base_year])


# ---------------------------------------------------------------------------
# Binning and percentiles
# ---------------------------------------------------------------------------


def _sorted_records(wages, weights):
    x = np.asarray(wages, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise DomainError("need at least one record")
    if w.shape != x.shape or np.any(w < 0) or w.sum() <= 0:
        raise DomainError("weights must match wages, be >= 0 and not all zero")
    order = np.argsort(x, kind="stable")
    return x[order], w[order]


def weighted_median(wages, weights=None) -> float:
    """Lower weighted order statistic; midpoint when cumulative mass hits 1/2 exactly."""
    x, w = _sorted_records(wages, weights)
    c = np.cumsum(w) / w.sum()
    k = int(np.searchsorted(c, 0.5 - 1e-12))
    if abs(c[k] - 0.5) <= 1e-12 and k + 1 < len(x):
        return 0.5 * (x[k] + x[k + 1])
    return float(x[k])


def build_binned(wages, weights=None, edges: Sequence[float] = DEFAULT_EDGES):
    """Weighted relative frequencies over ``edges`` plus the weighted median.

    Wages must be >= 1 (the study population earns at least $1); the last bin
    is open-ended.
    """
    x, w = _sorted_records(wages, weights)
    if np.any(x < 1):
        raise DomainError("wages must be >= $1")
    e = np.asarray(edges, dtype=float)
    idx = np.clip(np.searchsorted(e, x, side="right") - 1, 0, len(e) - 2)
    counts = np.bincount(idx, weights=w, minlength=len(e) - 1)
    return counts / counts.sum(), weighted_median(x, w)


def empirical_percentile(wages, p: float, weights=None) -> float:
    """Weighted percentile of microdata records with linear interpolation.

    Record k sits at plotting position (C_k - w_k / 2) / W, where C_k is the
    cumulative weight; values beyond the outermost positions are clamped.
    """
    if not (0.0 < p < 1.0):
        raise DomainError("percentile level must lie in (0, 1)")
    x, w = _sorted_records(wages, weights)
    pos = (np.cumsum(w) - 0.5 * w) / w.sum()
    return float(np.interp(p, pos, x))


def binned_percentile(freqs, p: float, edges: Sequence[float] = DEFAULT_EDGES) -> tuple[float, bool]:
    """Percentile of a binned distribution, uniform within each bin.

    Returns ``(value, approximate)``.  When ``p`` lands in the open top bin an
    exponential tail matched to the last two bins is used and ``approximate``
    is True.
    """
    if not (0.0 < p < 1.0):
        raise DomainError("percentile level must lie in (0, 1)")
    f = np.asarray(freqs, dtype=float)
    e = np.asarray(edges, dtype=float)
    f = f / f.sum()
    cum = np.concatenate([[0.0], np.cumsum(f)])
    closed = len(f) - 1 if math.isinf(e[-1]) else len(f)
    for b in range(closed):
        if p <= cum[b + 1] and f[b] > 0:
            return float(e[b] + (p - cum[b]) / f[b] * (e[b + 1] - e[b])), False
    # open top bin: density just below its lower edge sets the tail rate
    top_lo = e[-2]
    tail = 1.0 - cum[-2]
    width = e[-2] - e[-3]
    dens = f[-2] / width
    rate = dens / tail if dens > 0 and tail > 0 else 1.0 / width
    return float(top_lo + math.log(tail / (1.0 - p)) / rate), True


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def harmonic_mean_omega(shares: Sequence[float], omegas: Sequence[float]) -> float:
    """Share-weighted harmonic mean of the loss fractions."""
    u = np.asarray(shares, dtype=float)
    w = np.asarray(omegas, dtype=float)
    if u.shape != w.shape or u.ndim != 1:
        raise DomainError("shares and omegas must be 1-d and of equal length")
    if np.any(u < 0) or abs(math.fsum(u) - 1.0) > 1e-9:
        raise DomainError("shares must be non-negative and sum to 1")
    if np.any(~((w > 0) & (w < 1))):
        raise DomainError("omegas must lie in (0, 1)")
    return 1.0 / math.fsum(u / w)


def median_to_mean_factor(omegas) -> np.ndarray:
    """Ratio conditional mean / Doodson median, ``(1 - w) / (1 - 4w/3)``."""
    w = np.asarray(omegas, dtype=float)
    if np.any(w >= 0.75) or np.any(w <= 0):
        raise DomainError("median inversion requires 0 < omega < 3/4")
    return (1.0 - w) / (1.0 - 4.0 * w / 3.0)


def mu_from_medians(shares: Sequence[float], medians: Sequence[float], omegas: Sequence[float]) -> float:
    """Unconditional mean from conditional medians via Doodson's formula."""
    u = np.asarray(shares, dtype=float)
    m = np.asarray(medians, dtype=float)
    cond_means = m * median_to_mean_factor(omegas)
    return math.fsum(u * cond_means)


@dataclass
class SeriesFrame:
    """Named yearly series sharing one year axis."""

    years: np.ndarray
    series: dict = field(default_factory=dict)

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        for name, v in list(self.series.items()):
            self[name] = v

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def __setitem__(self, name: str, values) -> None:
        v = np.asarray(values, dtype=float)
        if v.shape != self.years.shape:
            raise ValueError(f"series {name!r} has {v.shape} values for {self.years.shape} years")
        self.series[name] = v

    def names(self) -> list[str]:
        return list(self.series)

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["year", "series", "value"])
        for name, vals in self.series.items():
            for y, v in zip(self.years, vals):
                w.writerow([int(y), name, _fmt(v)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"years": [int(y) for y in self.years],
                **{k: [float(x) for x in v] for k, v in self.series.items()}}


def product_series(panel: Panel, omegas: Sequence[float]) -> SeriesFrame:
    """Yearly mu_t, omega_tilde_t and their product from a panel."""
    w = np.asarray(omegas, dtype=float)
    if len(w) != panel.n_classes:
        raise DomainError(f"need {panel.n_classes} omegas, got {len(w)}")
    mu = np.array([mu_from_medians(panel.shares[t], panel.medians[t], w) for t in range(panel.n_years)])
    wt = np.array([harmonic_mean_omega(panel.shares[t], w) for t in range(panel.n_years)])
    return SeriesFrame(panel.years, {"mu": mu, "omega_tilde": wt, "product": wt * mu})


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------


@dataclass
class TailRatios:
    years: np.ndarray
    bins: np.ndarray
    ratios: np.ndarray
    omitted_bins: tuple


def tail_ratio_series(freqs, years, baseline_year: int, bins: Sequence[int] | None = None) -> TailRatios:
    """Ratio of each bin's relative frequency to its value in ``baseline_year``.

    Bins with zero baseline frequency are reported in ``omitted_bins`` and
    left out of ``ratios``.
    """
    f = np.asarray(freqs, dtype=float)
    yrs = np.asarray(years, dtype=int)
    hits = np.flatnonzero(yrs == baseline_year)
    if not len(hits):
        raise DomainError(f"baseline year {baseline_year} not present")
    cand = np.arange(f.shape[1]) if bins is None else np.asarray(bins, dtype=int)
    base = f[hits[0]]
    keep = np.array([b for b in cand if base[b] > 0], dtype=int)
    omitted = tuple(int(b) for b in cand if not base[b] > 0)
    return TailRatios(yrs, keep, f[:, keep] / base[keep], omitted)


def decade_mean_diff(freqs, years, period_a: Sequence[int], period_b: Sequence[int]) -> np.ndarray:
    """Per-bin mean over ``period_b`` minus mean over ``period_a``."""
    f = np.asarray(freqs, dtype=float)
    yrs = np.asarray(years, dtype=int)

    def rows(period):
        sel = np.isin(yrs, np.asarray(list(period), dtype=int))
        if not sel.any() or len(set(period)) != sel.sum():
            raise DomainError(f"period {list(period)} is empty or not a subset of the panel years")
        return f[sel]

    return rows(period_b).mean(axis=0) - rows(period_a).mean(axis=0)


@dataclass
class CorrelationMatrix:
    matrix: np.ndarray
    undefined_bins: tuple


def bin_correlation_matrix(freqs) -> CorrelationMatrix:
    """Pearson correlations between bin series (rows = years).

    Zero-variance bins get NaN rows/columns and are listed in
    ``undefined_bins``.
    """
    f = np.asarray(freqs, dtype=float)
    if f.shape[0] < 3:
        raise DomainError("need at least 3 years to correlate bins")
    centred = f - f.mean(axis=0)
    ss = np.sqrt((centred**2).sum(axis=0))
    undefined = ss <= 1e-15 * (np.abs(f).max(axis=0) + 1e-300) * math.sqrt(f.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        z = centred / ss
    z[:, undefined] = np.nan
    r = np.clip(z.T @ z, -1.0, 1.0)
    idx = np.flatnonzero(~undefined)
    r[idx, idx] = 1.0
    return CorrelationMatrix(r, tuple(int(b) for b in np.flatnonzero(undefined)))


def standardize(series) -> np.ndarray:
    """z-scores with population standard deviation."""
    x = np.asarray(series, dtype=float)
    sd = x.std()
    if len(x) < 2 or not sd > 1e-15 * (np.abs(x).max() + 1e-300):
        raise DomainError("cannot standardize a constant series")
    return (x - x.mean()) / sd


def series_correlation(a, b) -> float:
    """Pearson correlation of two equally long series."""
    x, y = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("series must be 1-d and of equal length")
    r = float(np.mean(standardize(x) * standardize(y)))
    return max(-1.0, min(1.0, r))
