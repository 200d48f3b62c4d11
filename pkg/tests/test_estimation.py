import warnings

import numpy as np
import pytest
from scipy import stats

from osaom.data import PanelDataset
from osaom.effects import EffectSpec
from osaom.estimation import (DegenerateDataWarning, EstimationError, EstimationOptions,
                              EstimationResult, MomentProblem, UntestableError, _check_derivative,
                              auxiliary_statistic, chi2_p_value, estimate, gof, score_test,
                              significance_stars, wald_test)
from osaom.synthetic import Generator

FAST = dict(n3=300, n3_derivative=60, n2_multiplier=1.0, max_retries=0)


@pytest.fixture(scope="module")
def small():
    gen = Generator(n=15, n_waves=2, initial_density=0.25)
    panel = gen.generate(3)
    return gen, panel


@pytest.fixture(scope="module")
def fitted(small):
    gen, panel = small
    res = estimate(panel, gen.specs, EstimationOptions(seed=2, **FAST), constants=gen.constants)
    return res


def _fake_result(est, cov):
    k = len(est)
    names = [f"rate:{d}:period1" for d in ("weak", "strong", "behavior")] + \
        [f"weak:e{j}" for j in range(k - 3)]
    return EstimationResult(names, np.asarray(est, float), np.sqrt(np.diag(cov)), np.zeros(k), 0.0,
                            np.eye(k), np.eye(k), np.asarray(cov, float), np.zeros(k), True, 1, 0)


def test_chi2_fixture():
    assert chi2_p_value(3.96, 3) == pytest.approx(0.266, abs=5e-4)
    assert chi2_p_value(3.96, 3) > 0.10


def test_one_df_wald_is_squared_z():
    cov = np.diag([1, 1, 1, 0.09, 0.25])
    res = _fake_result([4, 4, 4, 0.6, -1.1], cov)
    w = wald_test(res, ["weak:e1"])
    assert w.statistic == pytest.approx((-1.1 / 0.5) ** 2, abs=1e-12)
    assert w.p_value == pytest.approx(2 * stats.norm.sf(2.2), abs=1e-12)
    assert wald_test(res, [3, 4]).df == 2


def test_wald_singular_subblock():
    cov = np.ones((5, 5))
    with pytest.raises(EstimationError, match="singular"):
        wald_test(_fake_result([1, 1, 1, 1, 1], cov), ["weak:e0", "weak:e1"])


def test_significance_stars():
    assert significance_stars(0.0005) == "***"
    assert significance_stars(0.005) == "**"
    assert significance_stars(0.03) == "*"
    assert significance_stars(0.07) == "+"
    assert significance_stars(0.5) == ""


def test_singular_derivative_names_parameters():
    D = np.eye(4)
    D[2, 3] = D[3, 2] = 1.0  # rows for b and c coincide
    with pytest.raises(EstimationError, match="b, c|c, b"):
        _check_derivative(D, ["a", "x", "b", "c"])
    D = np.eye(3)
    D[1, 1] = 0
    with pytest.raises(EstimationError, match="inert.*: y"):
        _check_derivative(D, ["x", "y", "z"])


def test_targets_hand_counted():
    n = 3
    w = np.zeros((2, n, n))
    w[0, 0, 1] = 1
    w[1, 0, 1] = 1
    w[1, 1, 2] = 1
    w[1, 2, 0] = 1
    s = np.zeros((2, n, n))
    s[0, 0, 1] = 1
    z = np.array([[3, 5, 7], [4, 5, 5]], float)
    panel = PanelDataset(("a", "b", "c"), w, s, z)
    specs = [EffectSpec("weak", "density"), EffectSpec("strong", "density"),
             EffectSpec("behavior", "linear")]
    prob = MomentProblem(panel, specs)
    mean_z = z.mean()
    np.testing.assert_allclose(prob.targets, [2, 1, 3, 3, 0, np.sum(z[1] - mean_z)])


def test_targets_skip_unobserved():
    n = 3
    w = np.zeros((2, n, n))
    w[1, 0, 1] = np.nan
    w[1, 1, 2] = 1
    z = np.array([[3, 5, 7], [np.nan, 5, 5]], float)
    panel = PanelDataset(("a", "b", "c"), w, np.zeros((2, n, n)) * w, z)
    prob = MomentProblem(panel, [EffectSpec("weak", "density"), EffectSpec("behavior", "quad")])
    c = panel.behavior_constants()
    # dyad (0,1) missing at wave 2: no change counted, no tie counted
    assert prob.targets[0] == 1 and prob.targets[3] == 1
    assert prob.targets[2] == 2
    assert prob.targets[4] == pytest.approx((5 - c.mean) ** 2 + (5 - c.mean) ** 2)


def test_fd_and_score_derivatives_agree(small):
    """Two independent derivative estimators of the same Jacobian."""
    gen = Generator(n=10, n_waves=2, initial_density=0.3)
    panel = gen.generate(8)
    prob = MomentProblem(panel, gen.specs, gen.constants)
    params = np.concatenate([[4.0, 4.0, 4.0], list(gen.effects.values())])
    seeds = np.arange(1500).reshape(-1, 1)
    D_fd, _ = prob.derivative_fd(params, seeds[:300])
    D_sc, _, _ = prob.derivative_score(params, seeds)
    diag_fd, diag_sc = np.diag(D_fd), np.diag(D_sc)
    np.testing.assert_allclose(diag_sc, diag_fd, rtol=0.25)
    assert np.corrcoef(D_fd.ravel(), D_sc.ravel())[0, 1] > 0.95


def test_estimate_returns_consistent_result(fitted, small):
    gen, panel = small
    names = fitted.param_names
    assert names[:3] == ["rate:weak:period1", "rate:strong:period1", "rate:behavior:period1"]
    assert fitted.effect_names == [s.name for s in gen.specs]
    assert np.all(fitted.rates > 0)
    assert np.all(np.isfinite(fitted.se))
    assert fitted.cov.shape == (len(names), len(names))
    row = fitted.table()[names.index("weak:density")]
    assert row["estimate"] < 0


def test_estimate_deterministic_and_thread_independent(small):
    gen, panel = small
    opts = dict(seed=2, **FAST)
    a = estimate(panel, gen.specs, EstimationOptions(threads=1, **opts), constants=gen.constants)
    b = estimate(panel, gen.specs, EstimationOptions(threads=3, **opts), constants=gen.constants)
    assert np.array_equal(a.estimates, b.estimates)
    assert np.array_equal(a.t_conv, b.t_conv)


def test_phase3_only_at_truth_has_small_deviations(small):
    gen, panel = small
    start = np.concatenate([[4.0, 4.0, 4.0], list(gen.effects.values())])
    res = estimate(panel, gen.specs, EstimationOptions(seed=1, n3=400, n3_derivative=40),
                   constants=gen.constants, start=start, phases=(3,))
    assert np.array_equal(res.estimates, start)
    assert np.all(np.abs(res.t_conv) < 4)


def test_degenerate_data_warns():
    n = 4
    w = np.zeros((2, n, n))
    w[:, 0, 1] = 1
    w[1, 2, 3] = 1
    z = np.array([[3, 4, 5, 6], [3, 4, 6, 6]], float)
    panel = PanelDataset(tuple("abcd"), w, np.zeros_like(w), z)
    specs = [EffectSpec("weak", "density"), EffectSpec("strong", "density"),
             EffectSpec("behavior", "linear")]
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        try:
            estimate(panel, specs, EstimationOptions(n3=50, n3_derivative=10, max_retries=0,
                                                     n2_multiplier=0.2))
        except EstimationError:
            pass
    assert any(issubclass(r.category, DegenerateDataWarning) for r in rec)


def test_score_test_rejects_fitted_effect(fitted, small):
    gen, panel = small
    with pytest.raises(ValueError):
        score_test(panel, fitted, gen.specs, EffectSpec("weak", "recip"), n_sims=50)


def test_score_test_untestable_constant_statistic(fitted, small):
    gen, panel = small
    # no couples at all: the statistic is identically zero
    zero = np.zeros((panel.n, panel.n))
    p2 = PanelDataset(panel.actors, panel.weak, panel.strong, panel.behavior,
                      dyadic_covariates={"partner": zero})
    with pytest.raises(UntestableError):
        score_test(p2, fitted, gen.specs, EffectSpec("weak", "partnerFriend", "partner"),
                   n_sims=50, constants=gen.constants)


def test_score_test_runs(fitted, small):
    gen, panel = small
    r = score_test(panel, fitted, gen.specs, EffectSpec("weak", "transTrip"), n_sims=200,
                   constants=gen.constants)
    assert 0 <= r.p_value <= 1
    assert np.isfinite(r.statistic)


def test_gof_p_value_range(fitted, small):
    gen, panel = small
    r = gof(panel, fitted, gen.specs, "indegree", n_sims=60, constants=gen.constants)
    assert 1 / 61 <= r.p_value <= 1
    assert r.distance >= 0
    assert len(r.observed) == 9


def test_auxiliary_behavior_cumulative(small):
    gen, panel = small
    prob = MomentProblem(panel, gen.specs, gen.constants)
    ctx, obs = prob._masked(prob.starts[0], 0)
    a = auxiliary_statistic("behavior", ctx, obs, "weak", 13)
    assert np.all(np.diff(a) >= 0) and a[-1] <= panel.n
