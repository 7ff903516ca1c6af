import numpy as np
import pytest

from inequality_process import fitter
from inequality_process import synth
from inequality_process.errors import DomainError, ValidationError

SMALL = fitter.FitConfig(
    anneal=fitter.AnnealSchedule(initial_temperature=1e-2, min_temperature=1e-3, steps_per_epoch=100),
    restarts=2,
)
YEARS = tuple(range(1961, 2004, 6))


@pytest.fixture(scope="module")
def panel():
    return synth.make_panel(synth.SynthSpec(years=YEARS, doodson_medians=True))[0]


@pytest.fixture(scope="module")
def small_fit(panel):
    return fitter.anneal(panel, SMALL)


def test_objective_zero_at_truth_and_positive_elsewhere(panel):
    w = np.array(synth.REFERENCE_OMEGAS)
    assert fitter.objective(w, panel) < 1e-20
    assert fitter.objective(w + 0.01, panel) > 1e-6


def test_objective_is_share_weighted_sse(panel):
    w = np.array(synth.REFERENCE_OMEGAS) * 1.05
    exp = fitter.expected_bins(w, panel)
    ref = sum(panel.shares[t, k] * np.sum((panel.freqs[t, k] - exp[t, k]) ** 2)
              for t in range(panel.n_years) for k in range(panel.n_classes))
    assert fitter.objective(w, panel) == pytest.approx(ref, rel=1e-12)


def test_objective_rejects_out_of_range(panel):
    with pytest.raises(DomainError):
        fitter.objective([0.3] * 5, panel)
    with pytest.raises(DomainError):
        fitter.objective([0.8] + [0.3] * 5, panel)


def test_r_squared():
    assert fitter.r_squared([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        fitter.r_squared([1, 1, 1], [1, 2, 3])


def test_golden_section_on_parabola():
    x, fx = fitter._golden(lambda v: (v - 0.3) ** 2, 0.0, 1.0, 1e-9)
    assert x == pytest.approx(0.3, abs=1e-8)


def test_polish_recovers_from_nearby_start(panel):
    truth = np.array(synth.REFERENCE_OMEGAS)
    x = fitter.refit_from(panel, truth + 0.004, SMALL)
    np.testing.assert_allclose(x, truth, atol=1e-5)


def test_small_anneal_recovers_omegas(small_fit):
    np.testing.assert_allclose(small_fit.omegas, synth.REFERENCE_OMEGAS, atol=1e-4)
    assert small_fit.r_squared > 0.9999
    assert np.all(np.diff(small_fit.alphas) > 0)
    d = small_fit.diagnostics
    assert len(d["restart_best_objective"]) == 2
    assert all(0 <= a <= 1 for a in d["acceptance_rate"])
    assert d["best_trace"] == sorted(d["best_trace"], reverse=True)


def test_anneal_deterministic_and_thread_independent(panel, small_fit):
    cfg = fitter.FitConfig(**{**SMALL.__dict__, "threads": 2})
    again = fitter.anneal(panel, cfg)
    np.testing.assert_array_equal(again.omegas, small_fit.omegas)


def test_result_to_dict(panel, small_fit):
    d = small_fit.to_dict(panel)
    assert len(d["omegas"]) == 6 and len(d["alphas"]) == 6
    assert d["shares"][0] == pytest.approx(list(panel.shares[0]))
    assert "diagnostics" in d and "series" in d


def test_config_validation_and_roundtrip():
    with pytest.raises(ValidationError):
        fitter.FitConfig(restarts=0)
    with pytest.raises(ValidationError):
        fitter.FitConfig(omega_bounds=(0.5, 0.9))
    with pytest.raises(ValidationError):
        fitter.FitConfig.from_dict({"nonsense": 1})
    cfg = fitter.FitConfig.from_dict(SMALL.to_dict())
    assert cfg.to_dict() == SMALL.to_dict()


def test_bootstrap_requires_sample_size(panel):
    with pytest.raises(ValidationError):
        fitter.bootstrap_se(panel, SMALL, B=3, estimate=synth.REFERENCE_OMEGAS)


def test_bootstrap_small(small_fit):
    noisy = synth.make_panel(synth.SynthSpec(years=YEARS, noise="multinomial", sample_n=5000, seed=2,
                                             doodson_medians=True))[0]
    se, reps = fitter.bootstrap_se(noisy, SMALL, B=5, estimate=small_fit.omegas, return_replicates=True)
    assert reps.shape == (5, 6)
    assert np.all(se > 0) and np.all(se < 0.01)
    se2 = fitter.bootstrap_se(noisy, SMALL, B=5, estimate=small_fit.omegas)
    np.testing.assert_array_equal(se, se2)


def test_fit_cell_gamma_recovers_parameters():
    from inequality_process import gamma_core as gc

    p = gc.GammaParams(2.3, 2.3 / 35_000)
    f = gc.bin_masses(p, synth.DEFAULT_EDGES)
    a, lam, sse = fitter.fit_cell_gamma(f, synth.DEFAULT_EDGES)
    assert a == pytest.approx(2.3, rel=1e-5) and lam == pytest.approx(p.rate, rel=1e-5)
    assert sse < 1e-16


def test_baseline_dominates_constrained(small_fit, panel):
    base = fitter.baseline_fit(panel, warm_start=small_fit)
    assert base.r_squared >= small_fit.r_squared
    assert np.all(base.cell_sse <= ((panel.freqs - small_fit.expected) ** 2).sum(axis=2) + 1e-18)
    assert base.flagged == []


def test_baseline_flags_single_bin_cells(panel):
    freqs = panel.freqs.copy()
    freqs[0, 0] = 0.0
    freqs[0, 0, 2] = 1.0
    base = fitter.baseline_fit(panel.replace(freqs=freqs))
    assert base.flagged == [(int(panel.years[0]), int(panel.class_ids[0]))]
