"""Monte Carlo simulation of the Inequality Process particle system.

Each round the population is split into random pairs.  In every pair a fair
coin picks a winner, and the loser hands a fixed fraction omega of its own
wealth to the winner.  The Saved Wealth variant replaces the coin with a
uniform [0, 1] variate, so both directions are weighted.  Pair sums are
conserved exactly as written and wealth never goes negative.

Random streams: round ``r`` draws from
``PCG64(SeedSequence(seed, spawn_key=(r,)))``; the permutation is drawn
first, then one coin/variate per pair in pair order.  Initial gamma wealth
uses ``spawn_key=(2**32,)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import gamma_core as gc
from .errors import DomainError, ValidationError

INEQUALITY_PROCESS = "inequality-process"
SAVED_WEALTH = "saved-wealth"
VARIANTS = (INEQUALITY_PROCESS, SAVED_WEALTH)

_INIT_STREAM = 2**32


@dataclass(frozen=True)
class Particle:
    wealth: float
    class_index: int


class Population:
    """Particle wealths plus the class (omega) of every particle."""

    def __init__(self, wealth, class_index, omegas):
        self.wealth = np.array(wealth, dtype=float)
        self.class_index = np.array(class_index, dtype=np.int64)
        self.omegas = np.array(omegas, dtype=float)
        if self.wealth.ndim != 1 or self.wealth.shape != self.class_index.shape:
            raise DomainError("wealth and class_index must be 1-d arrays of equal length")
        if np.any(self.wealth < 0) or not np.all(np.isfinite(self.wealth)):
            raise DomainError("wealth must be finite and non-negative")
        if np.any(~((self.omegas > 0) & (self.omegas < 1))):
            raise DomainError("omegas must lie in (0, 1)")
        if len(self.class_index) and (self.class_index.min() < 0 or self.class_index.max() >= len(self.omegas)):
            raise DomainError("class_index out of range of the omega table")
        self.total_wealth = float(np.sum(self.wealth))

    def __len__(self):
        return len(self.wealth)

    @classmethod
    def uniform_classes(cls, n: int, omegas: Sequence[float], wealth: float | Sequence[float] = 1.0):
        """``n`` particles split as evenly as possible across ``omegas``, in blocks."""
        k = len(omegas)
        idx = np.repeat(np.arange(k), [n // k + (1 if i < n % k else 0) for i in range(k)])
        w = np.full(n, float(wealth)) if np.isscalar(wealth) else np.asarray(wealth, dtype=float)
        return cls(w, idx, omegas)

    def particles(self) -> list[Particle]:
        return [Particle(float(x), int(c)) for x, c in zip(self.wealth, self.class_index)]

    def particle_omegas(self) -> np.ndarray:
        return self.omegas[self.class_index]

    def class_shares(self) -> np.ndarray:
        return np.bincount(self.class_index, minlength=len(self.omegas)) / len(self)

    def class_means(self) -> np.ndarray:
        counts = np.bincount(self.class_index, minlength=len(self.omegas))
        sums = np.bincount(self.class_index, weights=self.wealth, minlength=len(self.omegas))
        with np.errstate(invalid="ignore", divide="ignore"):
            return sums / counts

    def copy(self) -> "Population":
        return Population(self.wealth, self.class_index, self.omegas)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["particle_id", "class_id", "wealth"])
        for i, (c, x) in enumerate(zip(self.class_index, self.wealth)):
            w.writerow([i, int(c), repr(float(x))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, omegas: Sequence[float]) -> "Population":
        rows = list(csv.DictReader(io.StringIO(text)))
        try:
            rows.sort(key=lambda r: int(r["particle_id"]))
            return cls([float(r["wealth"]) for r in rows], [int(r["class_id"]) for r in rows], omegas)
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"population CSV needs particle_id,class_id,wealth: {exc}") from None


@dataclass(frozen=True)
class Equal:
    value: float = 1.0


@dataclass(frozen=True)
class GammaStart:
    params: gc.GammaParams


@dataclass(frozen=True)
class Explicit:
    values: tuple


@dataclass
class SimConfig:
    seed: int = 0
    rounds: int = 1000
    variant: str = INEQUALITY_PROCESS
    initial_wealth: Equal | GammaStart | Explicit = field(default_factory=Equal)
    summary_every: int = 10
    histogram_edges: tuple | None = None

    def __post_init__(self):
        if self.rounds < 0:
            raise ValidationError("rounds must be >= 0")
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.summary_every < 1:
            raise ValidationError("summary_every must be >= 1")


def initial_population(config: SimConfig, class_index, omegas) -> Population:
    """Build the starting population for ``config.initial_wealth``."""
    idx = np.asarray(class_index, dtype=np.int64)
    init = config.initial_wealth
    if isinstance(init, Equal):
        w = np.full(len(idx), float(init.value))
    elif isinstance(init, GammaStart):
        rng = round_rng(config.seed, _INIT_STREAM)
        w = rng.gamma(init.params.shape, 1.0 / init.params.rate, size=len(idx))
    elif isinstance(init, Explicit):
        w = np.asarray(init.values, dtype=float)
        if w.shape != idx.shape:
            raise ValidationError("explicit initial wealth must give one value per particle")
    else:
        raise ValidationError(f"unknown initial wealth spec {init!r}")
    return Population(w, idx, omegas)


def round_rng(seed: int, round_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(round_index,))))


def encounter(x_i, x_j, omega_i, omega_j, d):
    """Apply the pairwise transition; ``d`` is 1 when i wins (or the uniform variate).

    Returns the new wealths; their sum equals the old sum because the same
    transfer is added to one side and subtracted from the other.
    """
    transfer = omega_j * d * x_j - omega_i * (1.0 - d) * x_i
    return x_i + transfer, x_j - transfer


def _uniform_closed(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 2**53, size=size, endpoint=True) / float(2**53)


def _step_arrays(x, omega_p, rng, variant):
    n = len(x)
    perm = rng.permutation(n)
    m = n // 2
    i, j = perm[0:2 * m:2], perm[1:2 * m:2]
    if variant == INEQUALITY_PROCESS:
        d = rng.integers(0, 2, size=m).astype(float)
    else:
        d = _uniform_closed(rng, m)
    xi, xj = encounter(x[i], x[j], omega_p[i], omega_p[j], d)
    out = x.copy()
    out[i], out[j] = xi, xj
    if np.any(out < 0):
        raise RuntimeError("negative wealth after an encounter")
    gain_i = xi - x[i]
    wins = np.zeros(n, dtype=bool)
    if variant == INEQUALITY_PROCESS:
        wins[i] = d == 1.0
        wins[j] = d == 0.0
    else:
        wins[i] = gain_i > 0
        wins[j] = gain_i < 0
    played = np.zeros(n, dtype=bool)
    played[i] = True
    played[j] = True
    return out, wins, played


def step(pop: Population, rng: np.random.Generator, variant: str = INEQUALITY_PROCESS) -> Population:
    """One round: random perfect matching, one encounter per pair.

    With an odd number of particles the one left unmatched by the shuffle
    sits the round out.
    """
    if len(pop) < 2:
        raise DomainError("a round needs at least two particles")
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant {variant!r}")
    out, _, _ = _step_arrays(pop.wealth, pop.particle_omegas(), rng, variant)
    return Population(out, pop.class_index, pop.omegas)


@dataclass
class RunResult:
    population: Population
    summaries: list
    wins: np.ndarray
    encounters: np.ndarray
    histograms: list = field(default_factory=list)

    def win_fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.wins / self.encounters

    def summaries_csv(self) -> str:
        if not self.summaries:
            return ""
        buf = io.StringIO()
        cols = list(self.summaries[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.summaries:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def _summary(r: int, x: np.ndarray, pop: Population) -> dict:
    row = {"round": r, "mean": float(np.mean(x)), "variance": float(np.var(x)),
           "total_wealth": math.fsum(x)}
    k = len(pop.omegas)
    counts = np.bincount(pop.class_index, minlength=k)
    sums = np.bincount(pop.class_index, weights=x, minlength=k)
    sq = np.bincount(pop.class_index, weights=x * x, minlength=k)
    for c in range(k):
        if counts[c]:
            m = sums[c] / counts[c]
            row[f"class{c}_mean"] = float(m)
            row[f"class{c}_variance"] = float(max(sq[c] / counts[c] - m * m, 0.0))
    return row


def run(config: SimConfig, pop0: Population) -> RunResult:
    """Apply ``config.rounds`` rounds; deterministic for a fixed seed."""
    if config.rounds > 0 and len(pop0) < 2:
        raise DomainError("a round needs at least two particles")
    x = pop0.wealth.copy()
    omega_p = pop0.particle_omegas()
    wins = np.zeros(len(x), dtype=np.int64)
    played = np.zeros(len(x), dtype=np.int64)
    summaries = [_summary(0, x, pop0)]
    hists = []
    if config.histogram_edges is not None:
        hists.append((0, stationary_histogram(pop0, config.histogram_edges)))
    for r in range(1, config.rounds + 1):
        x, w, p = _step_arrays(x, omega_p, round_rng(config.seed, r), config.variant)
        wins += w
        played += p
        if r % config.summary_every == 0 or r == config.rounds:
            summaries.append(_summary(r, x, pop0))
            if config.histogram_edges is not None:
                hists.append((r, stationary_histogram(Population(x, pop0.class_index, pop0.omegas),
                                                      config.histogram_edges)))
    return RunResult(Population(x, pop0.class_index, pop0.omegas), summaries, wins, played, hists)


def forward_diff_scatter(before: Population, after: Population) -> np.ndarray:
    """Rows of (wealth before, change in wealth) for every particle."""
    if len(before) != len(after) or not np.array_equal(before.class_index, after.class_index):
        raise DomainError("populations must have the same particles in the same order")
    return np.column_stack([before.wealth, after.wealth - before.wealth])


def stationary_histogram(pop: Population, edges: Sequence[float]) -> dict:
    """Relative wealth frequencies per class over ``edges``."""
    e = np.asarray(edges, dtype=float)
    if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
        raise DomainError("bin edges must be strictly increasing")
    out = {}
    for c in range(len(pop.omegas)):
        x = pop.wealth[pop.class_index == c]
        if not len(x):
            raise DomainError(f"class {c} has no particles")
        counts, _ = np.histogram(x, bins=e)
        total = counts.sum()
        if total == 0:
            raise DomainError(f"class {c}: no particle falls inside the bin edges")
        out[c] = counts / total
    return out


def moment_gamma(sample) -> gc.GammaParams:
    """Method-of-moments gamma fit (shape = mean^2 / var)."""
    x = np.asarray(sample, dtype=float)
    m, v = float(np.mean(x)), float(np.var(x))
    if not (m > 0 and v > 0):
        raise DomainError("sample needs positive mean and variance")
    return gc.GammaParams(m * m / v, m / v)


def ks_distance_to_gamma(sample, params: gc.GammaParams) -> float:
    """Two-sample KS distance between ``sample`` and a same-size gamma reference.

    The reference points are gamma quantiles at the midpoints (i + 1/2) / n.
    """
    x = np.asarray(sample, dtype=float)
    n = len(x)
    ref = gc.quantile(params, (np.arange(n) + 0.5) / n)
    return float(stats.ks_2samp(x, ref).statistic)
