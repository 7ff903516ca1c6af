"""Gamma distribution machinery for the Inequality Process macro model.

The conditional wage distribution of an omega equivalence class is a gamma
density with shape ``(1 - omega) / omega`` and rate
``(1 - omega) / (omega_tilde * mu)``.  Everything here is a pure function of
its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = [
    "GammaParams",
    "MacroContext",
    "MixtureModel",
    "alpha_from_omega",
    "lambda_from_context",
    "pdf",
    "cdf",
    "quantile",
    "bin_mass",
    "bin_masses",
    "doodson_median",
    "conditional_median_from_context",
    "mixture_pdf",
    "mixture_cdf",
    "mixture_quantile",
    "mixture_mean",
]

_PROB_TOL = 1e-12
_MAX_ITER = 200


def _check_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be a finite positive number, got {value!r}")


@dataclass(frozen=True)
class GammaParams:
    """Shape/rate pair of a gamma density (rate multiplies x in the exponent)."""

    shape: float
    rate: float

    def __post_init__(self):
        _check_positive("shape", self.shape)
        _check_positive("rate", self.rate)

    def mean(self) -> float:
        return self.shape / self.rate

    def variance(self) -> float:
        return self.shape / self.rate**2


@dataclass(frozen=True)
class MacroContext:
    """One equivalence class at one time: its omega plus the shared drivers.

    ``omega_tilde`` is the share-weighted harmonic mean of all omegas and
    ``mu`` the unconditional mean, both at the same time point.
    """

    omega: float
    omega_tilde: float
    mu: float

    def __post_init__(self):
        for name in ("omega", "omega_tilde"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")
        _check_positive("mu", self.mu)

    def product(self) -> float:
        return self.omega_tilde * self.mu

    def conditional_mean(self) -> float:
        return self.omega_tilde * self.mu / self.omega

    def gamma_params(self) -> GammaParams:
        return GammaParams(alpha_from_omega(self.omega), lambda_from_context(self))


def alpha_from_omega(omega: float) -> float:
    """Gamma shape implied by a loss fraction: ``(1 - omega) / omega``."""
    if not (0.0 < omega < 1.0):
        raise DomainError(f"omega must lie in (0, 1), got {omega!r}")
    return (1.0 - omega) / omega


def lambda_from_context(ctx: MacroContext) -> float:
    """Gamma rate ``(1 - omega) / (omega_tilde * mu)``."""
    return (1.0 - ctx.omega) / (ctx.omega_tilde * ctx.mu)


def pdf(p: GammaParams, x):
    """Gamma density at ``x``.

    At ``x == 0`` the limiting value is returned (0 for shape > 1, the rate
    for shape == 1); for shape < 1 the density diverges there and a
    :class:`DomainError` is raised.  Negative ``x`` is always rejected.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise DomainError("gamma density is defined for x >= 0 only")
    a, lam = p.shape, p.rate
    zero = xa == 0
    if np.any(zero) and a < 1:
        raise DomainError("density diverges at x = 0 when shape < 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        logf = a * math.log(lam) + (a - 1.0) * np.log(xa) - lam * xa - special.gammaln(a)
        out = np.exp(logf)
    if np.any(zero):
        out = np.where(zero, lam if a == 1 else 0.0, out)
    return out if out.ndim else float(out)


def cdf(p: GammaParams, x):
    """P(X <= x) via the regularized lower incomplete gamma function."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise DomainError("gamma cdf requires x >= 0")
    out = special.gammainc(p.shape, p.rate * xa)
    return out if out.ndim else float(out)


def _sf(p: GammaParams, x):
    return special.gammaincc(p.shape, p.rate * np.asarray(x, dtype=float))


def quantile(p: GammaParams, q):
    """Inverse cdf, refined by bracketed Newton/bisection to ~1e-12 in probability."""
    qa = np.asarray(q, dtype=float)
    if np.any(~((qa > 0) & (qa < 1))):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    a, lam = p.shape, p.rate
    # standardized problem: solve gammainc(a, z) = q, then x = z / lam
    z = np.atleast_1d(special.gammaincinv(a, qa)).astype(float)
    qv = np.atleast_1d(qa)
    z = np.where(np.isfinite(z) & (z > 0), z, a)
    lo = np.zeros_like(z)
    hi = np.full_like(z, np.inf)
    unit = GammaParams(a, 1.0)
    for _ in range(_MAX_ITER):
        f = special.gammainc(a, z)
        err = f - qv
        done = err == 0
        lo = np.where(err < 0, np.maximum(lo, z), lo)
        hi = np.where(err > 0, np.minimum(hi, z), hi)
        dens = np.asarray(pdf(unit, z), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = err / dens
        znew = z - step
        bad = ~np.isfinite(znew) | (znew <= lo) | (znew >= hi)
        mid = np.where(np.isfinite(hi), 0.5 * (lo + hi), 2.0 * np.maximum(z, 1.0))
        znew = np.where(bad, mid, znew)
        tiny = np.abs(znew - z) <= 4 * np.finfo(float).eps * np.maximum(z, 1e-300)
        z = np.where(done, z, znew)
        if np.all(done | tiny):
            break
    out = z / lam
    return out.reshape(qa.shape) if qa.ndim else float(out[0])


def bin_mass(p: GammaParams, lo: float, hi: float) -> float:
    """Probability mass on ``[lo, hi)``; ``hi`` may be ``inf``."""
    if not lo < hi:
        raise DomainError(f"bin bounds must satisfy lo < hi, got ({lo}, {hi})")
    if lo < 0:
        raise DomainError("bin lower bound must be >= 0")
    # upper-tail complement keeps precision for bins far in the right tail
    if p.rate * lo > p.shape:
        return float(_sf(p, lo) - _sf(p, hi))
    return float(cdf(p, hi) - cdf(p, lo))


def bin_masses(p: GammaParams, edges: Sequence[float]) -> np.ndarray:
    """Masses of consecutive bins delimited by ``edges`` (last edge may be inf)."""
    e = np.asarray(edges, dtype=float)
    if np.any(np.diff(e) <= 0):
        raise DomainError("bin edges must be strictly increasing")
    return np.diff(np.asarray(cdf(p, e), dtype=float))


def doodson_median(p: GammaParams) -> float:
    """Doodson's median approximation ``(3 shape - 1) / (3 rate)``."""
    if p.shape <= 1.0 / 3.0:
        raise DomainError(
            "Doodson median approximation requires shape > 1/3 "
            f"(mean - mode ~ 3 (mean - median) gives a non-positive value), got shape={p.shape}"
        )
    return (3.0 * p.shape - 1.0) / (3.0 * p.rate)


def conditional_median_from_context(ctx: MacroContext) -> float:
    """Doodson median written in omega terms; needs omega < 3/4."""
    w = ctx.omega
    if w >= 0.75:
        raise DomainError(f"conditional median needs omega < 3/4, got {w!r}")
    return (1.0 - 4.0 * w / 3.0) / (1.0 - w) * (ctx.omega_tilde * ctx.mu / w)


@dataclass(frozen=True)
class MixtureModel:
    """Finite gamma mixture; weights are class shares."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        comps = tuple(self.components)
        if len(w) != len(comps) or not w:
            raise DomainError("mixture needs one weight per component and at least one component")
        if any(v < 0 for v in w):
            raise DomainError("mixture weights must be non-negative")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise DomainError(f"mixture weights must sum to 1, got {math.fsum(w)!r}")
        if not all(isinstance(c, GammaParams) for c in comps):
            raise DomainError("mixture components must be GammaParams")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    def __len__(self):
        return len(self.components)


def mixture_pdf(m: MixtureModel, x):
    return sum(w * np.asarray(pdf(c, x)) for w, c in zip(m.weights, m.components) if w > 0)


def mixture_cdf(m: MixtureModel, x):
    return sum(w * np.asarray(cdf(c, x)) for w, c in zip(m.weights, m.components) if w > 0)


def mixture_mean(m: MixtureModel) -> float:
    return math.fsum(w * c.mean() for w, c in zip(m.weights, m.components))


def mixture_quantile(m: MixtureModel, q: float) -> float:
    """Invert the mixture cdf by bisection inside the component-quantile bracket."""
    if not (0.0 < q < 1.0):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    active = [c for w, c in zip(m.weights, m.components) if w > 0]
    if len(active) == 1:
        return quantile(active[0], q)
    qs = [quantile(c, q) for c in active]
    lo, hi = min(qs), max(qs)
    if hi == lo:
        return lo
    for _ in range(_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f = float(mixture_cdf(m, mid))
        if abs(f - q) <= _PROB_TOL or hi - lo <= 4 * np.finfo(float).eps * hi:
            return mid
        if f < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
