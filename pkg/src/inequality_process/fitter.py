"""Simultaneous weighted least-squares estimation of the omega vector.

The objective is the share-weighted sum of squared differences between the
observed and expected bin frequencies of every (year, class) cell.  For each
candidate omega vector the harmonic mean omega_tilde_t and the unconditional
mean mu_t (recovered from the conditional medians) are recomputed, so the
fit is self-consistent.  Search is a restarted simulated annealing followed
by a coordinate-wise golden-section polish.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import optimize, special

from . import gamma_core as gc
from .errors import DomainError, ValidationError
from .estimation import Panel, SeriesFrame, median_to_mean_factor

log = logging.getLogger(__name__)

OMEGA_FLOOR = 0.01
OMEGA_CEIL = 0.74


@dataclass
class AnnealSchedule:
    initial_temperature: float = 1e-2
    cooling_factor: float = 0.95
    steps_per_epoch: int = 200
    proposal_scale: float = 0.05
    min_temperature: float = 1e-5


@dataclass
class FitConfig:
    omega_bounds: tuple = (OMEGA_FLOOR, OMEGA_CEIL)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    restarts: int = 8
    seed: int = 0
    polish_tolerance: float = 1e-7
    polish_window: float = 0.02
    max_polish_sweeps: int = 200
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.anneal, dict):
            self.anneal = AnnealSchedule(**self.anneal)
        lo, hi = (float(v) for v in self.omega_bounds)
        if not (0.0 < lo < hi < 0.75):
            raise ValidationError(f"omega bounds must satisfy 0 < lo < hi < 3/4, got {self.omega_bounds}")
        self.omega_bounds = (lo, hi)
        if not (0.0 < self.anneal.cooling_factor < 1.0):
            raise ValidationError("cooling_factor must lie in (0, 1)")
        if self.anneal.min_temperature <= 0 or self.anneal.initial_temperature <= self.anneal.min_temperature:
            raise ValidationError("need 0 < min_temperature < initial_temperature")
        if self.anneal.steps_per_epoch < 1:
            raise ValidationError("steps_per_epoch must be >= 1")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.polish_tolerance <= 0:
            raise ValidationError("polish_tolerance must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        try:
            if "anneal" in d:
                d["anneal"] = AnnealSchedule(**d["anneal"])
            if "omega_bounds" in d:
                d["omega_bounds"] = tuple(d["omega_bounds"])
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad fit config: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)


class PanelObjective:
    """Vectorized expected frequencies and weighted SSE for one panel."""

    def __init__(self, panel: Panel):
        self.panel = panel
        self.shares = panel.shares
        self.medians = panel.medians
        self.obs = panel.freqs
        self.edges = np.asarray(panel.edges, dtype=float)
        self.n_evals = 0

    def _check(self, omegas) -> np.ndarray:
        w = np.asarray(omegas, dtype=float)
        if w.shape != (self.panel.n_classes,):
            raise DomainError(f"need {self.panel.n_classes} omegas, got shape {w.shape}")
        if np.any(~((w > 0) & (w < 0.75))):
            raise DomainError("every omega must lie in (0, 3/4)")
        return w

    def context(self, omegas):
        """(omega_tilde_t, mu_t, lambda_{t,k}) for a candidate omega vector."""
        w = self._check(omegas)
        wt = 1.0 / (self.shares @ (1.0 / w))
        mu = (self.shares * self.medians * median_to_mean_factor(w)).sum(axis=1)
        lam = (1.0 - w)[None, :] / (wt * mu)[:, None]
        return wt, mu, lam

    def expected(self, omegas) -> np.ndarray:
        w = self._check(omegas)
        _, _, lam = self.context(w)
        alpha = (1.0 - w) / w
        F = special.gammainc(alpha[None, :, None], lam[:, :, None] * self.edges[None, None, :])
        return np.diff(F, axis=2)

    def __call__(self, omegas) -> float:
        self.n_evals += 1
        r = self.obs - self.expected(omegas)
        return float(np.sum(self.shares * np.sum(r * r, axis=2)))


def expected_bins(omegas, panel: Panel) -> np.ndarray:
    return PanelObjective(panel).expected(omegas)


def objective(omegas, panel: Panel) -> float:
    return PanelObjective(panel)(omegas)


def r_squared(observed, expected) -> float:
    """Squared Pearson correlation between observed and expected values."""
    o = np.ravel(np.asarray(observed, dtype=float))
    e = np.ravel(np.asarray(expected, dtype=float))
    if o.shape != e.shape or len(o) < 2:
        raise DomainError("r_squared needs two equally long vectors of length >= 2")
    if np.ptp(o) == 0 or np.ptp(e) == 0:
        raise DomainError("r_squared is undefined for a constant vector")
    r = np.corrcoef(o, e)[0, 1]
    return float(min(1.0, r * r))


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def _restart_rng(seed: int, restart: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0, restart))))


def _reflect(x, lo, hi):
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    y = np.where(y > span, 2 * span - y, y)
    return np.clip(lo + y, lo, hi)


def _anneal_chain(f, k: int, cfg: FitConfig, restart: int, start=None) -> dict:
    rng = _restart_rng(cfg.seed, restart)
    lo, hi = cfg.omega_bounds
    s = cfg.anneal
    x = rng.uniform(lo, hi, size=k) if start is None else np.asarray(start, dtype=float)
    fx = f(x)
    best_x, best_f = x.copy(), fx
    T = s.initial_temperature
    trace, accepted, proposed = [], 0, 0
    while T >= s.min_temperature:
        sigma = s.proposal_scale * (hi - lo) * math.sqrt(T / s.initial_temperature)
        for _ in range(s.steps_per_epoch):
            y = _reflect(x + rng.normal(0.0, sigma, size=k), lo, hi)
            fy = f(y)
            proposed += 1
            if fy <= fx or rng.random() < math.exp(-(fy - fx) / T):
                x, fx = y, fy
                accepted += 1
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
        trace.append(best_f)
        T *= s.cooling_factor
    return {"x": best_x, "f": best_f, "trace": trace, "acceptance_rate": accepted / max(proposed, 1)}


def _golden(g, a: float, b: float, tol: float):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    gc_, gd = g(c), g(d)
    while b - a > tol:
        if gc_ <= gd:
            b, d, gd = d, c, gc_
            c = b - invphi * (b - a)
            gc_ = g(c)
        else:
            a, c, gc_ = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    return (c, gc_) if gc_ <= gd else (d, gd)


def polish(f, x0, cfg: FitConfig) -> tuple[np.ndarray, float, int]:
    """Coordinate-wise golden-section descent; never increases the objective."""
    lo, hi = cfg.omega_bounds
    x = np.array(x0, dtype=float)
    fx = f(x)
    window = cfg.polish_window
    sweeps = 0
    for sweeps in range(1, cfg.max_polish_sweeps + 1):
        x_prev, f_prev = x.copy(), fx
        for i in range(len(x)):
            def g(v, i=i):
                y = x.copy()
                y[i] = v
                return f(y)
            a, b = max(lo, x[i] - window), min(hi, x[i] + window)
            v, fv = _golden(g, a, b, cfg.polish_tolerance)
            if fv < fx:
                x[i], fx = v, fv
        step = float(np.max(np.abs(x - x_prev)))
        # the window tracks the size of recent moves but never drops below the tolerance
        window = min(cfg.polish_window, max(4.0 * step, 10.0 * cfg.polish_tolerance))
        if step <= cfg.polish_tolerance or f_prev - fx <= 1e-15 * max(fx, 1e-300):
            break
    return x, fx, sweeps


@dataclass
class FitResult:
    omegas: np.ndarray
    alphas: np.ndarray
    objective: float
    r_squared: float
    lambdas: np.ndarray
    expected: np.ndarray
    series: SeriesFrame
    bootstrap_se: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, panel: Panel | None = None) -> dict:
        d = {
            "omegas": [float(w) for w in self.omegas],
            "alphas": [float(a) for a in self.alphas],
            "bootstrap_se": None if self.bootstrap_se is None else [float(s) for s in self.bootstrap_se],
            "r_squared": self.r_squared,
            "objective": self.objective,
            "series": {"years": [int(y) for y in self.series.years],
                       "mu": [float(v) for v in self.series["mu"]],
                       "omega_tilde": [float(v) for v in self.series["omega_tilde"]],
                       "product": [float(v) for v in self.series["product"]]},
            "diagnostics": self.diagnostics,
        }
        if panel is not None:
            d["class_ids"] = [int(c) for c in panel.class_ids]
            d["class_labels"] = list(panel.class_labels)
            d["shares"] = [[float(u) for u in row] for row in panel.shares]
        return d


def result_at(omegas, panel: Panel, diagnostics: dict | None = None) -> FitResult:
    """Assemble a FitResult for a given omega vector."""
    obj = PanelObjective(panel)
    w = np.asarray(omegas, dtype=float)
    wt, mu, lam = obj.context(w)
    exp = obj.expected(w)
    return FitResult(
        omegas=w.copy(),
        alphas=(1.0 - w) / w,
        objective=obj(w),
        r_squared=r_squared(panel.freqs, exp),
        lambdas=lam,
        expected=exp,
        series=SeriesFrame(panel.years, {"mu": mu, "omega_tilde": wt, "product": wt * mu}),
        diagnostics=diagnostics or {},
    )


def anneal(panel: Panel, config: FitConfig | None = None) -> FitResult:
    """Restarted annealing plus polish; deterministic for a fixed seed."""
    cfg = config or FitConfig()
    obj = PanelObjective(panel)
    k = panel.n_classes

    def run(r):
        return _anneal_chain(PanelObjective(panel), k, cfg, r)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            chains = list(ex.map(run, range(cfg.restarts)))
    else:
        chains = [run(r) for r in range(cfg.restarts)]
    best = min(range(len(chains)), key=lambda r: (chains[r]["f"], r))
    x, fx = chains[best]["x"], chains[best]["f"]
    xp, fp, sweeps = polish(obj, x, cfg)
    if fp > fx:
        xp, fp = x, fx
    diag = {
        "restarts": cfg.restarts,
        "best_restart": best,
        "restart_best_objective": [c["f"] for c in chains],
        "acceptance_rate": [c["acceptance_rate"] for c in chains],
        "epochs": len(chains[0]["trace"]),
        "best_trace": chains[best]["trace"],
        "objective_before_polish": fx,
        "polish_sweeps": sweeps,
        "evaluations": obj.n_evals + sum(len(c["trace"]) * cfg.anneal.steps_per_epoch for c in chains),
        "at_bound": [bool(v <= cfg.omega_bounds[0] + 1e-9 or v >= cfg.omega_bounds[1] - 1e-9) for v in xp],
    }
    if any(diag["at_bound"]):
        log.warning("fit ended at an omega bound: %s", diag["at_bound"])
    return result_at(xp, panel, diag)


def refit_from(panel: Panel, start, config: FitConfig | None = None) -> np.ndarray:
    """Local refit warm-started at ``start`` (polish only)."""
    cfg = config or FitConfig()
    x, _, _ = polish(PanelObjective(panel), start, cfg)
    return x


def bootstrap_se(panel: Panel, config: FitConfig | None = None, B: int = 100, estimate=None,
                 pseudo_n: int | None = None, return_replicates: bool = False):
    """Per-omega standard errors from multinomial resampling of each cell's bin counts.

    Each replicate redraws every cell's counts with that cell's sample size,
    rebuilds the frequencies and refits warm-started at ``estimate``.
    """
    cfg = config or FitConfig()
    if panel.sample_n is not None:
        n = panel.sample_n
    elif pseudo_n is not None:
        n = np.full(panel.shares.shape, int(pseudo_n), dtype=np.int64)
    else:
        raise ValidationError("bootstrap needs per-cell sample sizes (column n) or a pseudo_n")
    if B < 2:
        raise ValidationError("bootstrap needs B >= 2 replicates")
    if estimate is None:
        estimate = anneal(panel, cfg).omegas
    p = panel.freqs / panel.freqs.sum(axis=2, keepdims=True)
    reps = np.empty((B, panel.n_classes))
    for b in range(B):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(1, b))))
        freqs = np.empty_like(p)
        for t in range(panel.n_years):
            for k in range(panel.n_classes):
                freqs[t, k] = rng.multinomial(int(n[t, k]), p[t, k]) / n[t, k]
        reps[b] = refit_from(panel.replace(freqs=freqs, sample_n=n), estimate, cfg)
    se = reps.std(axis=0, ddof=1)
    return (se, reps) if return_replicates else se


# ---------------------------------------------------------------------------
# unconstrained baseline
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    shapes: np.ndarray
    rates: np.ndarray
    expected: np.ndarray
    r_squared: float
    flagged: list
    cell_sse: np.ndarray


def _moment_start(freqs, edges):
    e = np.asarray(edges, dtype=float)
    width = e[-2] - e[-3]
    mids = 0.5 * (e[:-1] + np.where(np.isinf(e[1:]), e[-2] + 2 * width, e[1:]))
    m = float(np.dot(freqs, mids))
    v = float(np.dot(freqs, (mids - m) ** 2)) + width**2 / 12.0
    a = max(m * m / v, 0.2)
    return a, a / m


def fit_cell_gamma(freqs, edges, start=None) -> tuple[float, float, float]:
    """Two-parameter least-squares gamma fit to one binned distribution."""
    f = np.asarray(freqs, dtype=float)
    e = np.asarray(edges, dtype=float)
    a0, l0 = start if start is not None else _moment_start(f, e)
    scale = 1.0 / np.max(e[np.isfinite(e)])

    def resid(theta):
        a, lam = math.exp(theta[0]), math.exp(theta[1]) * scale
        return np.diff(special.gammainc(a, lam * e)) - f

    sol = optimize.least_squares(resid, [math.log(a0), math.log(l0 / scale)], method="lm",
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    theta = sol.x
    if start is not None:
        r0 = resid([math.log(a0), math.log(l0 / scale)])
        if float(r0 @ r0) < float(sol.fun @ sol.fun):
            theta = [math.log(a0), math.log(l0 / scale)]
    a, lam = math.exp(theta[0]), math.exp(theta[1]) * scale
    r = resid(theta)
    return a, lam, float(r @ r)


def baseline_fit(panel: Panel, warm_start: FitResult | None = None) -> BaselineResult:
    """Independent (shape, rate) fit per cell and the pooled squared correlation.

    Cells whose observed mass sits in a single bin are flagged and left out of
    the pooled R^2.
    """
    T, K = panel.shares.shape
    shapes, rates, sse = np.empty((T, K)), np.empty((T, K)), np.empty((T, K))
    exp = np.empty_like(panel.freqs)
    flagged = []
    for t in range(T):
        for k in range(K):
            f = panel.freqs[t, k]
            if np.count_nonzero(f) <= 1:
                flagged.append((int(panel.years[t]), int(panel.class_ids[k])))
            start = None
            if warm_start is not None:
                start = (float(warm_start.alphas[k]), float(warm_start.lambdas[t, k]))
            a, lam, s = fit_cell_gamma(f, panel.edges, start)
            shapes[t, k], rates[t, k], sse[t, k] = a, lam, s
            exp[t, k] = gc.bin_masses(gc.GammaParams(a, lam), panel.edges)
    mask = np.ones((T, K), dtype=bool)
    for y, c in flagged:
        mask[panel.year_index(y), int(np.flatnonzero(panel.class_ids == c)[0])] = False
    r2 = r_squared(panel.freqs[mask], exp[mask])
    return BaselineResult(shapes, rates, exp, r2, flagged, sse)
