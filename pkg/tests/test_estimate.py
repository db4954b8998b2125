import warnings
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize, rosen
from scipy.stats import ks_2samp

from vsidyn.dynamics import StrainParams
from vsidyn.estimate import (
    ABCConfig,
    FitProblem,
    FitResult,
    abc_errors,
    chi2_reduced,
    deshelling_law_fit,
    forward_strain_observables,
    latin_hypercube,
    nelder_mead,
    poisson_resample,
    rate_fit,
    strain_fit,
    worker_count,
)
from vsidyn.presets import DARK_COUNTS_HZ, RATES_NO_STRAIN, STRAIN_TABLE1, VISIBILITY_EFFICIENCY, no_strain_model
from vsidyn.sequences import LifetimeExp, MetastableDecayExp, RepolarizationExp, Trace


def trace(pl, sigma=None, exposure=1.0):
    pl = np.asarray(pl, dtype=float)
    return Trace(np.arange(pl.size, dtype=float), pl, {}, sigma, exposure)


# -- chi-square ----------------------------------------------------------------


def test_chi2_identical_is_zero():
    d = trace([5.0, 8.0, 3.0])
    assert chi2_reduced([d], [d], 0) == 0.0


def test_chi2_one_sigma_everywhere():
    sigma = np.array([0.5, 2.0, 1.0, 3.0])
    d = trace([5.0, 8.0, 3.0, 4.0], sigma)
    m = trace(d.pl + sigma)
    assert chi2_reduced([m], [d], 0) == pytest.approx(1.0)


def test_chi2_poisson_rule():
    d = trace([0.0, 4.0, 100.0], exposure=1.0)
    m = trace([1.0, 6.0, 110.0])
    assert chi2_reduced([m], [d], 0) == pytest.approx((1 + 4 / 4 + 100 / 100) / 3)


def test_chi2_interpolates_model():
    d = Trace(np.array([0.5, 1.5]), np.array([1.0, 1.0]), {}, np.ones(2))
    m = Trace(np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.0, 1.0]), {})
    assert chi2_reduced([m], [d], 0) == 0.0


def test_chi2_needs_enough_points():
    d = trace([1.0, 2.0])
    with pytest.raises(ValueError):
        chi2_reduced([d], [d], 2)
    with pytest.raises(ValueError):
        chi2_reduced([d, d], [d], 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_chi2_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    sigma = rng.uniform(0.5, 2, 20)
    d = trace(rng.uniform(1, 10, 20), sigma)
    m = trace(np.abs(d.pl + rng.normal(0, 1, 20)))
    scaled = chi2_reduced([trace(c * m.pl)], [trace(c * d.pl, c * sigma)], 1)
    assert scaled == pytest.approx(chi2_reduced([m], [d], 1), rel=1e-9)


def test_chi2_poisson_noise_near_one():
    exp = RepolarizationExp(durations=tuple(np.round(np.linspace(0.1, 30, 240), 6)))
    truth = exp.simulate(no_strain_model())
    model = Trace(truth.times, truth.pl, {}, None, 500 / truth.pl.max())
    assert len(model) >= 200
    values = []
    for seed in range(100):
        noisy = poisson_resample(model, np.random.default_rng(seed))
        values.append(chi2_reduced([model], [noisy], 0))
    values = np.array(values)
    assert np.all((values > 0.7) & (values < 1.3))


# -- Nelder-Mead ---------------------------------------------------------------


def test_nm_quadratic():
    res = nelder_mead(lambda x: (x[0] - 1) ** 2 + (x[1] + 2) ** 2, [0, 0], xtol=1e-10, ftol=1e-14)
    assert res.converged
    assert np.allclose(res.x, [1, -2], atol=1e-6)


def test_nm_rosenbrock():
    res = nelder_mead(rosen, [-1.2, 1.0], xtol=1e-10, ftol=1e-14, max_evals=20000)
    assert np.allclose(res.x, [1, 1], atol=1e-3)
    ref = minimize(rosen, [-1.2, 1.0], method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14, maxfev=20000))
    assert np.allclose(res.x, ref.x, atol=1e-3)


def test_nm_bounds_clip():
    res = nelder_mead(lambda x: (x[0] - 5) ** 2, [0.0], bounds=[(-1, 2)])
    assert res.x[0] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        nelder_mead(lambda x: 0.0, [0.0], bounds=[(1, -1)])


def test_nm_max_evals_flagged():
    res = nelder_mead(rosen, [-1.2, 1.0], max_evals=20)
    assert not res.converged
    assert res.n_evals <= 25
    assert res.fun <= rosen(np.array([-1.2, 1.0]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=4), st.integers(5, 200))
def test_nm_never_worse_than_start(x0, budget):
    f = lambda x: float(np.sum((x - 0.7) ** 4) + np.prod(np.cos(3 * x)))
    assert nelder_mead(f, x0, max_evals=budget).fun <= f(np.array(x0))


def test_nm_non_finite_is_rejected():
    f = lambda x: np.nan if x[0] > 1 else (x[0] - 2) ** 2
    res = nelder_mead(f, [0.0])
    assert np.isfinite(res.fun) and res.x[0] <= 1


def test_latin_hypercube_is_stratified():
    pts = latin_hypercube([(0, 1), (10, 20)], 8, seed=1)
    assert pts.shape == (8, 2)
    assert sorted(np.floor(pts[:, 0] * 8).astype(int)) == list(range(8))
    assert sorted(np.floor((pts[:, 1] - 10) / 10 * 8).astype(int)) == list(range(8))


def test_worker_count(monkeypatch):
    monkeypatch.delenv("VSIDYN_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("VSIDYN_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2


# -- fit problems ----------------------------------------------------------------


@pytest.fixture(scope="module")
def lifetime_data():
    cfg = no_strain_model()
    exps = [LifetimeExp("A1"), LifetimeExp("A2")]
    data = []
    for exp in exps:
        tr = exp.simulate(cfg)
        data.append((Trace(tr.times, tr.pl, {}, None, 1000 / tr.pl.max()), exp))
    return cfg, data


def test_fit_problem_validation(lifetime_data):
    cfg, data = lifetime_data
    with pytest.raises(ValueError):
        FitProblem([], {"gamma_r": (1, 2)}, cfg)
    with pytest.raises(ValueError):
        FitProblem(data, {}, cfg)
    with pytest.raises(ValueError):
        FitProblem(data, {"gamma_r": (2, 1)}, cfg)
    with pytest.raises(ValueError):
        FitProblem(data, {"gamma_r": (1, np.inf)}, cfg)
    with pytest.raises(ValueError):
        FitProblem(data, {"gamma_9": (1, 2)}, cfg)
    with pytest.raises(ValueError):
        FitProblem(data, {"ds5.rabi": (1, 2)}, cfg)
    p = FitProblem(data, {"gamma_r": (1, 100), "ds0.rabi": (1, 40), "ds1.offset": (-1, 1), "efficiency": (0.1, 1)}, cfg)
    assert p.dof == p.n_points - 4
    assert np.allclose(p.baseline_vector(), [56.39, 20.0, 0.0, 1.0])


def test_one_parameter_lifetime_round_trip(lifetime_data):
    cfg, data = lifetime_data
    problem = FitProblem(data[:1], {"gamma_r": (20.0, 100.0)}, cfg.with_rates(gamma_r=40.0))
    scaled = lambda x: problem.chi2_r(x)
    res = nelder_mead(scaled, [40.0], bounds=problem.bounds, xtol=1e-8, ftol=1e-12)
    assert res.x[0] == pytest.approx(RATES_NO_STRAIN.gamma_r, rel=0.01)


def test_rate_fit_requires_two_datasets(lifetime_data):
    cfg, data = lifetime_data
    with pytest.raises(ValueError):
        rate_fit(FitProblem(data[:1], {"gamma_r": (20, 100)}, cfg))


def test_lifetime_only_fit_flags_branching(lifetime_data):
    cfg, data = lifetime_data
    free = {"gamma_r": (30, 90), "gamma_1": (40, 120), "gamma_3": (1, 8)}
    problem = FitProblem(data, free, cfg)
    with pytest.warns(UserWarning) as rec:
        fit = rate_fit(problem, [56.39, 83.11, 3.81], n_starts=1, max_evals=300)
    messages = " ".join(str(w.message) for w in rec)
    assert "unidentifiable" in messages
    assert "gamma_3" in fit.flagged
    total = fit.best_params["gamma_r"] + fit.best_params["gamma_1"] + RATES_NO_STRAIN.gamma_1p
    assert total == pytest.approx(RATES_NO_STRAIN.big_gamma_1, rel=1e-3)


def test_rate_fit_two_experiments_round_trip():
    cfg = no_strain_model(efficiency=0.005)
    delays = tuple(np.round(np.geomspace(0.05, 100, 40), 6))
    exps = [LifetimeExp("A1"), MetastableDecayExp("A1", delays=delays)]
    data = []
    for exp in exps:
        tr = exp.simulate(cfg)
        data.append((Trace(tr.times, tr.pl, {}, None, 500 / tr.pl.max()), exp))
    free = {"gamma_r": (30.0, 90.0), "gamma_1": (40.0, 120.0)}
    problem = FitProblem(data, free, cfg)
    fit = rate_fit(problem, [50.0, 90.0], n_starts=2, seed=3)
    assert fit.chi2_r < 1e-8
    assert fit.best_params["gamma_r"] == pytest.approx(56.39, rel=0.02)
    assert fit.best_params["gamma_1"] == pytest.approx(83.11, rel=0.02)


# -- ABC -------------------------------------------------------------------------


@dataclass
class ToyProblem:
    """Linear model y = a + b t with unit errors, sampled at 50 points."""

    truth: tuple = (2.0, 0.5)

    def __post_init__(self):
        self.t = np.linspace(0, 10, 50)
        self.y = self.truth[0] + self.truth[1] * self.t

    names = property(lambda self: ["a", "b"])
    bounds = property(lambda self: [(0.0, 10.0), (0.0, 5.0)])
    dof = property(lambda self: 48)

    def chi2_r(self, x):
        r = x[0] + x[1] * self.t - self.y
        return float(r @ r / (0.15**2) / self.dof)


def toy_best():
    return FitResult({"a": 2.0, "b": 0.5}, 0.0, 0, True)


def test_abc_accepts_best_and_brackets_truth():
    res = abc_errors(ToyProblem(), toy_best(), ABCConfig(iterations=3000), seed=1)
    assert res.threshold >= 0.0
    assert ToyProblem().chi2_r([2.0, 0.5]) <= res.threshold
    for name, v in (("a", 2.0), ("b", 0.5)):
        lo, hi = res.ci[name]
        assert lo < v < hi
        blo, bhi = res.box[name]
        assert blo < lo and hi < bhi
    assert res.non_identifiable == []
    assert res.samples.shape == (3000, 2)
    assert res.accepted_samples.shape[0] == res.accepted.sum()


def test_abc_is_reproducible_and_worker_independent():
    a = abc_errors(ToyProblem(), toy_best(), ABCConfig(iterations=600, chunk=100), seed=5, workers=1)
    b = abc_errors(ToyProblem(), toy_best(), ABCConfig(iterations=600, chunk=100), seed=5, workers=2)
    assert np.array_equal(a.samples, b.samples)


def test_abc_reseeding_ks():
    cfg = ABCConfig(iterations=9000)
    a = abc_errors(ToyProblem(), toy_best(), cfg, seed=11)
    b = abc_errors(ToyProblem(), toy_best(), cfg, seed=12)
    for k in range(2):
        assert ks_2samp(a.accepted_samples[:, k], b.accepted_samples[:, k]).statistic < 0.05


def test_abc_low_acceptance_warns():
    with pytest.warns(UserWarning, match="acceptance"):
        abc_errors(ToyProblem(), toy_best(), ABCConfig(iterations=500, threshold=1e-12, variation=0.9), seed=0)


def test_abc_flags_insensitive_parameter():
    class Flat(ToyProblem):
        def chi2_r(self, x):
            return super().chi2_r([x[0], 0.5])

    with pytest.warns(UserWarning, match="prior box"):
        res = abc_errors(Flat(), toy_best(), ABCConfig(iterations=2000), seed=0)
    assert res.non_identifiable == ["b"]


def test_abc_config_validation():
    for bad in (dict(variation=0), dict(variation=1), dict(iterations=0), dict(ci_level=1.0)):
        with pytest.raises(ValueError):
            ABCConfig(**bad)
    assert ABCConfig().gate(100, 5.0) == 5.0
    assert ABCConfig(threshold=2.0).gate(100, 1.0) == 2.0


# -- strain fit ------------------------------------------------------------------

CFG_VIS = no_strain_model(efficiency=VISIBILITY_EFFICIENCY, dark_rate=DARK_COUNTS_HZ)


def test_strain_fit_input_validation():
    with pytest.raises(ValueError):
        strain_fit(0.0, (0.9, 0.9), CFG_VIS)
    with pytest.raises(ValueError):
        strain_fit(70.0, (1.0, 0.9), CFG_VIS)


def test_unstrained_fidelities_near_measured():
    _, a, b = forward_strain_observables(StrainParams(), CFG_VIS)
    assert a == pytest.approx(0.976, abs=0.013)
    assert b == pytest.approx(0.951, abs=0.045)


@pytest.mark.slow
def test_strain_fit_reproduces_observables():
    f, a, b = forward_strain_observables(STRAIN_TABLE1, CFG_VIS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = strain_fit(f, (a, b), CFG_VIS, n_starts=4, max_evals=300)
    assert res.odmr == pytest.approx(f, abs=1e-3)
    assert res.fidelities == pytest.approx((a, b), abs=1e-3)
    assert res.strain.pi_z == pytest.approx(1.51, abs=0.05)
    # ODMR and two fidelities do not pin the transverse pair
    assert res.underdetermined


@pytest.mark.parametrize("strain", [StrainParams(), StrainParams(1.51, 0, 0, 0)], ids=["zero", "axial"])
def test_strain_fit_without_transverse(strain):
    f, a, b = forward_strain_observables(strain, CFG_VIS)
    assert f == pytest.approx(70.0 + 2 * strain.pi_z)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = strain_fit(f, (a, b), CFG_VIS, n_starts=2, max_evals=200)
    assert res.strain.pi_z == pytest.approx(strain.pi_z, abs=1e-3)
    assert res.strain.pi_1 == pytest.approx(0, abs=1e-3)
    assert res.strain.pi_2 == pytest.approx(0, abs=1e-3)


# -- deshelling law ------------------------------------------------------------


@pytest.mark.slow
def test_deshelling_law_recovers_inputs():
    law = deshelling_law_fit(no_strain_model(), "A1", rabis=(1.0, 3.0, 5.0, 7.0))
    assert law.beta == pytest.approx(RATES_NO_STRAIN.beta, rel=0.05)
    assert law.intercept_4 == pytest.approx(RATES_NO_STRAIN.gamma_4p0, abs=0.01)
    assert np.all(np.diff(law.gamma_3p) > 0)
