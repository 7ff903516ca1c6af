"""Synthetic CPS-shaped panels generated from known macro-model parameters."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import gamma_core as gc
from .errors import ValidationError
from .estimation import DEFAULT_EDGES, CLASS_LABELS, Panel, SeriesFrame, harmonic_mean_omega

# Fitted loss fractions by education level, least to most educated.
REFERENCE_OMEGAS = (0.4524, 0.4030, 0.3573, 0.3256, 0.2542, 0.2084)
REFERENCE_ALPHAS = (1.1776, 1.4544, 1.7924, 2.0619, 2.7951, 3.6318)
REFERENCE_SE = (0.0009582, 0.0006159, 0.0004075, 0.0005033, 0.0007031, 0.0005216)

DEFAULT_YEARS = tuple(range(1961, 2004))
# Education mix drifts from mostly below high school to mostly post-secondary.
DEFAULT_SHARE_START = (0.30, 0.20, 0.30, 0.09, 0.07, 0.04)
DEFAULT_SHARE_END = (0.04, 0.07, 0.31, 0.27, 0.20, 0.11)
# Unconditional mean in 2003 dollars: rise, long plateau, rise.
DEFAULT_MU_ANCHORS = {1961: 27_000.0, 1973: 36_500.0, 1983: 35_500.0, 1995: 37_500.0, 2003: 45_000.0}


def default_shares(years) -> np.ndarray:
    yrs = np.asarray(years, dtype=float)
    s = (yrs - yrs[0]) / max(yrs[-1] - yrs[0], 1.0)
    a, b = np.array(DEFAULT_SHARE_START), np.array(DEFAULT_SHARE_END)
    u = (1.0 - s)[:, None] * a + s[:, None] * b
    return u / u.sum(axis=1, keepdims=True)


def default_mu(years, anchors=None) -> np.ndarray:
    anchors = DEFAULT_MU_ANCHORS if anchors is None else anchors
    ks = sorted(anchors)
    return np.interp(np.asarray(years, dtype=float), ks, [anchors[k] for k in ks])


@dataclass
class SynthSpec:
    omegas: tuple = REFERENCE_OMEGAS
    years: tuple = DEFAULT_YEARS
    shares: np.ndarray | None = None
    mu: np.ndarray | None = None
    noise: str = "exact"
    sample_n: int = 5000
    seed: int = 0
    doodson_medians: bool = False
    edges: tuple = DEFAULT_EDGES
    class_labels: tuple = field(default=())

    def __post_init__(self):
        self.omegas = tuple(float(w) for w in self.omegas)
        self.years = tuple(int(y) for y in self.years)
        if not self.years or any(b <= a for a, b in zip(self.years, self.years[1:])):
            raise ValidationError("years must be a non-empty increasing sequence")
        if any(not (0.0 < w < 0.75) for w in self.omegas):
            raise ValidationError("omegas must lie in (0, 3/4)")
        T, K = len(self.years), len(self.omegas)
        if self.shares is None:
            if K != len(DEFAULT_SHARE_START):
                raise ValidationError(f"default share paths cover 6 classes; give shares for {K} classes")
            self.shares = default_shares(self.years)
        self.shares = np.asarray(self.shares, dtype=float)
        if self.shares.shape != (T, K):
            raise ValidationError(f"shares must have shape ({T}, {K}), got {self.shares.shape}")
        for t, row in enumerate(self.shares):
            if np.any(row < 0) or abs(math.fsum(row) - 1.0) > 1e-9:
                raise ValidationError(
                    f"shares row {t} (year {self.years[t]}) must be non-negative and sum to 1, "
                    f"got sum {math.fsum(row)!r}"
                )
        self.mu = default_mu(self.years) if self.mu is None else np.asarray(self.mu, dtype=float)
        if self.mu.shape != (T,) or np.any(~(self.mu > 0)):
            raise ValidationError(f"mu must be {T} positive values")
        if self.noise not in ("exact", "multinomial"):
            raise ValidationError("noise must be 'exact' or 'multinomial'")
        if self.noise == "multinomial" and self.sample_n < 1:
            raise ValidationError("sample_n must be >= 1")
        if not self.class_labels:
            self.class_labels = CLASS_LABELS if K == len(CLASS_LABELS) else tuple(f"class {k + 1}" for k in range(K))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {"omegas", "years", "shares", "share_start", "share_end", "mu", "mu_anchors", "noise",
                 "sample_n", "seed", "doodson_medians", "class_labels"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth spec keys: {sorted(unknown)}")
        kw: dict = {}
        if "omegas" in d:
            kw["omegas"] = tuple(d["omegas"])
        years = d.get("years", DEFAULT_YEARS)
        if isinstance(years, dict):
            years = range(int(years["start"]), int(years["end"]) + 1)
        kw["years"] = tuple(years)
        if "shares" in d:
            kw["shares"] = np.asarray(d["shares"], dtype=float)
        elif "share_start" in d or "share_end" in d:
            a = np.asarray(d.get("share_start", DEFAULT_SHARE_START), dtype=float)
            b = np.asarray(d.get("share_end", DEFAULT_SHARE_END), dtype=float)
            for name, v in (("share_start", a), ("share_end", b)):
                if abs(math.fsum(v) - 1.0) > 1e-9:
                    raise ValidationError(f"{name} must sum to 1, got {math.fsum(v)!r}")
            y = np.asarray(kw["years"], dtype=float)
            s = (y - y[0]) / max(y[-1] - y[0], 1.0)
            kw["shares"] = (1.0 - s)[:, None] * a + s[:, None] * b
        if "mu" in d:
            kw["mu"] = np.asarray(d["mu"], dtype=float)
        elif "mu_anchors" in d:
            kw["mu"] = default_mu(kw["years"], {int(k): float(v) for k, v in d["mu_anchors"].items()})
        noise = d.get("noise", "exact")
        if isinstance(noise, dict):
            if set(noise) != {"multinomial"}:
                raise ValidationError("noise object must be {\"multinomial\": n}")
            kw["noise"], kw["sample_n"] = "multinomial", int(noise["multinomial"])
        else:
            kw["noise"] = str(noise)
        if "sample_n" in d:
            kw["sample_n"] = int(d["sample_n"])
        for key in ("seed", "doodson_medians", "class_labels"):
            if key in d:
                kw[key] = d[key]
        if "class_labels" in kw:
            kw["class_labels"] = tuple(kw["class_labels"])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"synth spec is not valid JSON: {exc}") from None


def _year_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(t,))))


def make_panel(spec: SynthSpec) -> tuple[Panel, SeriesFrame]:
    """Generate a panel and the ground-truth mu / omega_tilde / product series."""
    T, K = len(spec.years), len(spec.omegas)
    B = len(spec.edges) - 1
    freqs = np.empty((T, K, B))
    medians = np.empty((T, K))
    wt = np.empty(T)
    for t in range(T):
        wt[t] = harmonic_mean_omega(spec.shares[t], spec.omegas)
        rng = _year_rng(spec.seed, t) if spec.noise == "multinomial" else None
        for k, w in enumerate(spec.omegas):
            ctx = gc.MacroContext(w, wt[t], float(spec.mu[t]))
            params = ctx.gamma_params()
            mass = gc.bin_masses(params, spec.edges)
            if rng is not None:
                counts = rng.multinomial(spec.sample_n, mass / mass.sum())
                freqs[t, k] = counts / spec.sample_n
            else:
                freqs[t, k] = mass
            medians[t, k] = (gc.conditional_median_from_context(ctx) if spec.doodson_medians
                             else gc.quantile(params, 0.5))
    n = np.full((T, K), spec.sample_n, dtype=np.int64) if spec.noise == "multinomial" else None
    panel = Panel(np.array(spec.years), np.arange(1, K + 1), spec.shares.copy(), medians, freqs, n,
                  tuple(spec.edges), tuple(spec.class_labels))
    truth = SeriesFrame(panel.years, {"mu": spec.mu.copy(), "omega_tilde": wt, "product": wt * spec.mu})
    return panel, truth


def truth_to_dict(spec: SynthSpec, truth: SeriesFrame) -> dict:
    return {
        "omegas": list(spec.omegas),
        "alphas": [gc.alpha_from_omega(w) for w in spec.omegas],
        "class_labels": list(spec.class_labels),
        "noise": spec.noise,
        "sample_n": spec.sample_n if spec.noise == "multinomial" else None,
        "seed": spec.seed,
        "doodson_medians": spec.doodson_medians,
        "series": truth.to_dict(),
    }
