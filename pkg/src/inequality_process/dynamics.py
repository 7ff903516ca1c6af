"""How the macro model's densities respond to the product omega_tilde * mu.

All change in the macro model is a scale transformation driven by the
product ``P = omega_tilde * mu``.  This module evaluates the exact
derivative of the class densities and of the mixture with respect to P,
the first-order (Newton) approximations to forward differences, ratios and
proportional changes, and the percentile/bin-mass comparisons used to tell
a rightward stretch from a hollowing out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gamma_core as gc
from .errors import DomainError
from .estimation import harmonic_mean_omega
from .gamma_core import MacroContext, MixtureModel

__all__ = [
    "MacroFamily",
    "TransitionPair",
    "sensitivity",
    "forward_difference_approx",
    "ratio_approx",
    "proportional_change_approx",
    "forward_difference_exact",
    "ratio_exact",
    "mixture_sensitivity",
    "percentile_growth",
    "Verdict",
    "hollowing_verdict",
]


@dataclass(frozen=True)
class MacroFamily:
    """All omega classes of one population at one time point."""

    omegas: tuple
    shares: tuple
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "omegas", tuple(float(w) for w in self.omegas))
        object.__setattr__(self, "shares", tuple(float(u) for u in self.shares))
        if len(self.omegas) != len(self.shares):
            raise DomainError("one share per omega is required")
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        harmonic_mean_omega(self.shares, self.omegas)

    @classmethod
    def from_product(cls, omegas, shares, product: float) -> "MacroFamily":
        wt = harmonic_mean_omega(shares, omegas)
        return cls(tuple(omegas), tuple(shares), product / wt)

    @property
    def omega_tilde(self) -> float:
        return harmonic_mean_omega(self.shares, self.omegas)

    @property
    def product(self) -> float:
        return self.omega_tilde * self.mu

    def contexts(self) -> list[MacroContext]:
        wt = self.omega_tilde
        return [MacroContext(w, wt, self.mu) for w in self.omegas]

    def conditional_means(self) -> np.ndarray:
        return np.array([c.conditional_mean() for c in self.contexts()])

    def mixture(self) -> MixtureModel:
        return MixtureModel(self.shares, tuple(c.gamma_params() for c in self.contexts()))

    def scaled(self, factor: float) -> "MacroFamily":
        """Same omegas and shares with the product multiplied by ``factor``."""
        return MacroFamily(self.omegas, self.shares, self.mu * factor)


@dataclass(frozen=True)
class TransitionPair:
    """One class observed at t-1 (``before``) and t (``after``)."""

    before: MacroContext
    after: MacroContext

    def __post_init__(self):
        if self.before.omega != self.after.omega:
            raise DomainError("a transition pair must keep omega fixed")

    @classmethod
    def from_products(cls, omega: float, product_before: float, product_after: float,
                      omega_tilde: float | None = None) -> "TransitionPair":
        wt = omega if omega_tilde is None else omega_tilde
        return cls(MacroContext(omega, wt, product_before / wt), MacroContext(omega, wt, product_after / wt))

    @property
    def product_ratio(self) -> float:
        return self.after.product() / self.before.product()


def _check_x0(x0):
    x = np.asarray(x0, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("x0 must be positive")
    return x


def _out(v):
    v = np.asarray(v)
    return v if v.ndim else float(v)


def sensitivity(ctx: MacroContext, x0):
    """Derivative of the class density at ``x0`` with respect to the product."""
    x = _check_x0(x0)
    P = ctx.product()
    f = gc.pdf(ctx.gamma_params(), x)
    return _out(f * (1.0 - ctx.omega) / P**2 * (x - ctx.conditional_mean()))


def forward_difference_approx(pair: TransitionPair, x0):
    x = _check_x0(x0)
    b = pair.before
    p = b.gamma_params()
    return _out(gc.pdf(p, x) * p.rate * (x - b.conditional_mean()) * (pair.product_ratio - 1.0))


def ratio_approx(pair: TransitionPair, x0):
    x = _check_x0(x0)
    b = pair.before
    if np.any(np.asarray(gc.pdf(b.gamma_params(), x)) <= 0):
        raise DomainError("density at x0 is zero; the ratio is undefined")
    lam = gc.lambda_from_context(b)
    return _out(1.0 + (x - b.conditional_mean()) * lam * (pair.product_ratio - 1.0))


def proportional_change_approx(pair: TransitionPair, x0):
    """Ratio approximation minus one: affine in x0."""
    return _out(np.asarray(ratio_approx(pair, x0)) - 1.0)


def forward_difference_exact(pair: TransitionPair, x0):
    x = _check_x0(x0)
    return _out(gc.pdf(pair.after.gamma_params(), x) - gc.pdf(pair.before.gamma_params(), x))


def ratio_exact(pair: TransitionPair, x0):
    x = _check_x0(x0)
    return _out(gc.pdf(pair.after.gamma_params(), x) / gc.pdf(pair.before.gamma_params(), x))


def _family_terms(family):
    if isinstance(family, MacroFamily):
        return list(zip(family.shares, family.contexts()))
    terms = [(float(u), c) for u, c in family]
    if not terms:
        raise DomainError("empty family")
    wt, mu = terms[0][1].omega_tilde, terms[0][1].mu
    if any(c.omega_tilde != wt or c.mu != mu for _, c in terms):
        raise DomainError("mixture components must share omega_tilde and mu")
    if abs(math.fsum(u for u, _ in terms) - 1.0) > 1e-12:
        raise DomainError("mixture weights must sum to 1")
    return terms


def mixture_sensitivity(family, x0):
    """Derivative of the share-weighted mixture density with respect to the product.

    ``family`` is a :class:`MacroFamily` or a sequence of ``(share,
    MacroContext)`` pairs sharing omega_tilde and mu.
    """
    x = _check_x0(x0)
    return _out(sum(u * np.asarray(sensitivity(c, x)) for u, c in _family_terms(family)))


def percentile_growth(before: MixtureModel, after: MixtureModel, plist: Sequence[float]) -> np.ndarray:
    """Absolute change of each mixture percentile between two time points."""
    return np.array([gc.mixture_quantile(after, p) - gc.mixture_quantile(before, p) for p in plist])


def _component_means(m: MixtureModel) -> np.ndarray:
    return np.array([c.mean() for w, c in zip(m.weights, m.components) if w > 0])


@dataclass
class Verdict:
    verdict: str
    mass_change: np.ndarray
    left_bins: tuple
    right_bins: tuple
    min_conditional_mean: float
    max_conditional_mean: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "mass_change": [float(v) for v in self.mass_change],
            "left_tail_bins": list(self.left_bins),
            "right_tail_bins": list(self.right_bins),
            "min_conditional_mean": self.min_conditional_mean,
            "max_conditional_mean": self.max_conditional_mean,
        }


def hollowing_verdict(before: MixtureModel, after: MixtureModel, edges: Sequence[float],
                      atol: float = 1e-15) -> Verdict:
    """Classify a change in the mixture as STRETCH, HOLLOW, MIXED or NO-CHANGE.

    Left-tail bins lie entirely below the smallest conditional mean and
    right-tail bins entirely above the largest, both taken over the two
    mixtures.  STRETCH: every left-tail bin loses mass and every right-tail
    bin gains.  HOLLOW: both tails gain mass in total.
    """
    e = np.asarray(edges, dtype=float)
    cdf_b = np.asarray(gc.mixture_cdf(before, e), dtype=float)
    cdf_a = np.asarray(gc.mixture_cdf(after, e), dtype=float)
    delta = np.diff(cdf_a) - np.diff(cdf_b)
    means = np.concatenate([_component_means(before), _component_means(after)])
    lo_mean, hi_mean = float(means.min()), float(means.max())
    left = tuple(int(b) for b in range(len(delta)) if e[b + 1] <= lo_mean)
    right = tuple(int(b) for b in range(len(delta)) if e[b] >= hi_mean)
    if np.all(np.abs(delta) <= atol):
        label = "NO-CHANGE"
    elif left and right and all(delta[b] < 0 for b in left) and all(delta[b] > 0 for b in right):
        label = "STRETCH"
    elif left and right and delta[list(left)].sum() > 0 and delta[list(right)].sum() > 0:
        label = "HOLLOW"
    else:
        label = "MIXED"
    return Verdict(label, delta, left, right, lo_mean, hi_mean)
