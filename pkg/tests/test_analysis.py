import math

import numpy as np
import pytest

from xyglass.analysis import (
    CORRELATION_MODELS,
    MODELS,
    SPIN_CONVENTION_FACTOR,
    FitWindowError,
    InsufficientModesError,
    TimeSeries,
    chi_quality,
    diffusion_summary,
    extract_qea,
    fit_correlation,
    fit_diffusion,
    fit_eta,
    fit_eta_scaling,
    fit_powerlaw,
    fit_proportional,
    fit_relaxation,
    lnR_typical,
    mode_projection,
    savgol,
    squared_autocorrelation,
)
from xyglass.lattice import build_lattice, laplacian_eigenmodes

T_LOG = np.logspace(-1, 2, 61)


def test_timeseries_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        TimeSeries([0, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError, match="3 times but 2 values"):
        TimeSeries([0, 1, 2], [1, 2])


def test_timeseries_window_and_average():
    s = TimeSeries(np.arange(5.0), np.arange(10.0).reshape(5, 2), meta={"n": 2})
    np.testing.assert_array_equal(s.site_average().values, [0.5, 2.5, 4.5, 6.5, 8.5])
    w = s.window(1, 3)
    assert len(w) == 3
    assert w.meta == {"n": 2}


def test_chi_quality():
    assert chi_quality([1.1, 2.2], [1, 2]) == pytest.approx(0.01)
    assert chi_quality([1, 1], [1, 1]) == 0
    assert chi_quality([1.0, 5.0], [1.0, 0.0]) == 0


@pytest.mark.parametrize(
    "model, params",
    [
        ("power", {"a": 0.8, "alpha": 0.3}),
        ("exp_offset", {"a": 0.6, "gamma": 0.2, "q": 0.4}),
        ("powexp_offset", {"a": 0.5, "alpha": 0.2, "gamma": 0.05, "q": 0.3}),
    ],
)
def test_fit_recovers_clean(model, params):
    y = MODELS[model].func(T_LOG, *params.values())
    fit = fit_correlation(TimeSeries(T_LOG, y), model)
    assert fit.converged
    assert fit.chi < 1e-10
    for k, v in params.items():
        assert fit.params[k] == pytest.approx(v, rel=1e-4, abs=1e-6)
    np.testing.assert_allclose(fit(T_LOG), y, rtol=1e-5)


def test_fit_noise_coverage():
    # fitted errors should be realistic: most 2-sigma intervals cover the truth
    g = np.random.default_rng(42)
    t = np.linspace(0, 20, 81)
    truth = {"a": 0.5, "gamma": 0.3, "q": 0.5}
    y0 = truth["a"] * np.exp(-truth["gamma"] * t) + truth["q"]
    hits = 0
    for _ in range(100):
        y = y0 + g.normal(scale=0.01, size=len(t))
        fit = fit_correlation(TimeSeries(t, y), "exp_offset", relative=False)
        hits += abs(fit.params["gamma"] - truth["gamma"]) <= 2 * fit.errors["gamma"]
    assert hits >= 85


@pytest.mark.parametrize(
    "model, params, t",
    [
        ("power", {"a": 0.8, "alpha": 0.3}, T_LOG),
        ("exp_offset", {"a": 0.6, "gamma": 0.2, "q": 0.4}, np.linspace(0, 30, 81)),
        ("powexp_offset", {"a": 0.5, "alpha": 0.3, "gamma": 0.1, "q": 0.2}, T_LOG),
    ],
)
def test_fit_noise_coverage_all_models(model, params, t):
    # 5% multiplicative noise; every parameter within 2 standard errors in most trials
    g = np.random.default_rng(7)
    y0 = MODELS[model].func(t, *params.values())
    hits = dict.fromkeys(params, 0)
    for _ in range(100):
        y = y0 * (1 + 0.05 * g.normal(size=len(t)))
        fit = fit_correlation(TimeSeries(t, y), model)
        for k, v in params.items():
            hits[k] += abs(fit.params[k] - v) <= 2 * fit.errors[k]
    assert min(hits.values()) >= 85, hits


def test_fit_powerlaw_noise_coverage():
    g = np.random.default_rng(8)
    x = np.logspace(0, 2, 30)
    hits = {"c": 0, "p": 0}
    for _ in range(100):
        y = 2.5 * x**-0.4 * (1 + 0.05 * g.normal(size=len(x)))
        fit = fit_powerlaw(x, y)
        hits["c"] += abs(fit.params["c"] - 2.5) <= 2 * fit.errors["c"]
        hits["p"] += abs(fit.params["p"] + 0.4) <= 2 * fit.errors["p"]
    assert min(hits.values()) >= 85, hits


def test_fit_invalid():
    s = TimeSeries(T_LOG, np.exp(-T_LOG))
    with pytest.raises(ValueError, match="invalid model"):
        fit_correlation(s, "cubic")
    with pytest.raises(ValueError, match="at least 8 points"):
        fit_correlation(TimeSeries(T_LOG[:5], np.ones(5)), "exp_offset")
    with pytest.raises(ValueError, match="positive values"):
        fit_correlation(TimeSeries(T_LOG, -np.ones_like(T_LOG)), "power")


@pytest.mark.parametrize(
    "window, degree, match",
    [
        (10, 2, "odd"),
        (3, 3, "exceed"),
        (11, 6, "2..5"),
        (101, 2, "longer"),
    ],
)
def test_savgol_invalid(window, degree, match):
    with pytest.raises(ValueError, match=match):
        savgol(TimeSeries(T_LOG, np.ones_like(T_LOG)), window, degree)


def test_savgol_keeps_quadratic():
    y = 1 + 0.1 * np.arange(len(T_LOG)) - 0.001 * np.arange(len(T_LOG)) ** 2
    s = savgol(TimeSeries(T_LOG, y), 11, 2)
    np.testing.assert_allclose(s.values, y, atol=1e-10)


def test_qea_frozen_constant():
    res = extract_qea(TimeSeries(T_LOG, np.ones_like(T_LOG)), w=50.0)
    assert res.qea == pytest.approx(1, abs=1e-6)
    assert res.w == 50.0
    assert set(res.chi) == set(CORRELATION_MODELS)


def test_qea_offset_decay():
    C = 0.3 + 0.7 * np.exp(-0.5 * T_LOG)
    res = extract_qea(TimeSeries(T_LOG, C))
    assert res.model in {"exp_offset", "powexp_offset"}
    assert res.qea == pytest.approx(0.3, abs=0.01)


def test_qea_power_decay():
    C = 0.9 * T_LOG**-0.4
    res = extract_qea(TimeSeries(T_LOG, C))
    assert res.qea == pytest.approx(0, abs=0.02)


def test_qea_clipped():
    C = 1.2 + 0.1 * np.exp(-T_LOG)
    res = extract_qea(TimeSeries(T_LOG, C))
    assert res.qea == 1


def test_squared_autocorrelation():
    t = np.arange(4.0)
    a = TimeSeries(t, np.array([[1, 1], [0.5, -0.5], [0, 0], [1, 0]]))
    b = TimeSeries(t, np.array([[1, 1], [0.5, 0.5], [1, 1], [0, 0]]))
    C = squared_autocorrelation([a, b])
    np.testing.assert_allclose(C.values, [1, 0.25, 0.5, 0.25])
    assert C.meta["count"] == 2


def test_squared_autocorrelation_grids():
    with pytest.raises(ValueError, match="one time grid"):
        squared_autocorrelation([TimeSeries([0, 1], [1, 1]), TimeSeries([0, 2], [1, 1])])


def test_spin_convention():
    assert SPIN_CONVENTION_FACTOR * 16 == 1


def test_lnR_lognormal():
    g = np.random.default_rng(7)
    x = g.normal(-3.0, 0.8, size=10_000)
    st = lnR_typical(np.exp(x))
    assert st.count == 10_000
    assert st.center == pytest.approx(-3.0, abs=0.05)
    assert st.width == pytest.approx(0.8, abs=0.05)
    assert st.mean == pytest.approx(-3.0, abs=0.05)
    assert st.R_typ == pytest.approx(math.exp(st.center))


def test_lnR_invalid():
    with pytest.raises(ValueError, match="at least 30"):
        lnR_typical(np.full(10, 0.5))
    with pytest.raises(ValueError, match="R <= 0"):
        lnR_typical(np.r_[np.full(40, 0.5), 0.0])


def test_lnR_constant():
    st = lnR_typical(np.full(50, 0.25))
    assert st.width == 0
    assert st.center == pytest.approx(math.log(0.25))


def test_fit_powerlaw_result():
    x = np.logspace(0, 2, 20)
    fit = fit_powerlaw(x, 2.5 * x**-0.4)
    assert fit.model == "powerlaw_loglog"
    assert fit.params == pytest.approx({"c": 2.5, "p": -0.4})
    assert fit.chi == pytest.approx(0, abs=1e-20)
    np.testing.assert_allclose(fit(x), 2.5 * x**-0.4)
    assert fit.to_row(n=12)["p_err"] == pytest.approx(0, abs=1e-9)


def test_fit_powerlaw_errors():
    g = np.random.default_rng(5)
    x = np.logspace(0, 2, 40)
    y = 2.5 * x**-0.4 * np.exp(g.normal(scale=0.05, size=len(x)))
    fit = fit_powerlaw(x, y)
    assert 0 < fit.errors["p"] < 0.05
    assert 0 < fit.errors["c"] < 0.5
    assert abs(fit.params["p"] + 0.4) < 4 * fit.errors["p"]
    assert 0 < fit.chi < 0.01

    wfit = fit_powerlaw(x, y, weights=np.ones_like(x))
    assert wfit.params["p"] == pytest.approx(fit.params["p"])
    assert wfit.model == "powerlaw_loglog"


def test_fit_powerlaw_invalid():
    with pytest.raises(ValueError, match="positive"):
        fit_powerlaw([1, 2, 3], [1, -2, 3])
    with pytest.raises(ValueError, match="at least 3 points"):
        fit_powerlaw([1, 2], [1, 2])
    with pytest.raises(ValueError, match="at least 4 points"):
        fit_powerlaw([1, 2, 3], [1, 2, 3], weights=[1, 1, 1])


def test_fit_proportional_result():
    x = np.array([0.1, 0.2, 0.3, 0.4])
    y = np.array([0.11, 0.19, 0.31, 0.39])
    fit = fit_proportional(x, y)
    assert fit.model == "linear_loglog"
    assert fit.params["c"] == pytest.approx(np.dot(x, y) / np.dot(x, x))
    assert fit.errors["c"] > 0
    np.testing.assert_allclose(fit(x), fit.params["c"] * x)
    assert fit.chi == pytest.approx(chi_quality(fit(x), y))


def test_eta_exact_power():
    R = 0.5 * T_LOG**-0.37
    ef = fit_eta(TimeSeries(T_LOG, R), (3, 100))
    assert ef.eta == pytest.approx(0.37, rel=1e-9)
    assert ef.window == (3, 100)
    assert ef.chi == pytest.approx(0, abs=1e-20)


def test_eta_subwindows_stable():
    g = np.random.default_rng(3)
    R = np.exp(-0.2 * np.log(T_LOG) + g.normal(scale=0.01, size=len(T_LOG)))
    s = TimeSeries(T_LOG, R)
    etas = [fit_eta(s, w).eta for w in [(3, 30), (10, 100), (3, 100)]]
    assert max(etas) / min(etas) < 1.2


@pytest.mark.parametrize(
    "window, match",
    [
        ((10, 20), "half a decade"),
        ((0.01, 1), "outside"),
        ((50, 10), "invalid"),
    ],
)
def test_eta_window_invalid(window, match):
    with pytest.raises(FitWindowError, match=match):
        fit_eta(TimeSeries(T_LOG, T_LOG**-0.1), window)


def test_eta_too_few_points():
    t = np.array([1.0, 10.0, 100.0])
    with pytest.raises(FitWindowError, match="need 4"):
        fit_eta(TimeSeries(t, t**-0.1), (1, 100))


def test_eta_scaling():
    n = np.array([12, 16, 20])
    eta = 0.004 * n**2.4
    sf = fit_eta_scaling(zip(n, eta))
    assert sf.p == pytest.approx(2.4)
    assert sf.kappa == pytest.approx(0.004)
    assert sf.kappa_err == pytest.approx(0, abs=1e-9)
    assert sf.chi == pytest.approx(0, abs=1e-20)


def test_eta_scaling_needs_three_sizes():
    with pytest.raises(ValueError, match="3 distinct sizes"):
        fit_eta_scaling([(12, 0.1), (16, 0.2), (16, 0.21)])


def test_mode_projection_zero_mode():
    lat = build_lattice(3, 3)
    em = laplacian_eigenmodes(lat)
    t = np.linspace(0, 5, 6)
    g = np.random.default_rng(0)
    mags = []
    for _ in range(3):
        m = g.uniform(-1, 1, size=(6, lat.n))
        m -= m.mean(axis=1, keepdims=True) - 1 / 9  # fixed total magnetization
        mags.append(TimeSeries(t, m))
    mp = mode_projection(mags, em)
    assert mp.correlation.values.shape == (6, lat.n)
    np.testing.assert_allclose(mp.correlation.values[0, 1:], 1)
    # zero-mode projection is conserved
    np.testing.assert_allclose(mp.correlation.values[:, 0], 1)


def test_mode_projection_shape_mismatch():
    em = laplacian_eigenmodes(build_lattice(2, 2))
    with pytest.raises(ValueError, match="modes have length 4"):
        mode_projection([TimeSeries([0.0, 1.0], np.ones((2, 5)))], em)


def test_relaxation_exact():
    t = np.linspace(0, 20, 101)
    fit = fit_relaxation(TimeSeries(t, 0.8 * np.exp(-0.25 * t) + 0.2))
    assert fit.converged
    assert fit.gamma == pytest.approx(0.25, rel=1e-5)
    assert fit.m_inf == pytest.approx(0.2, abs=1e-6)

    fit = fit_relaxation(TimeSeries(t, np.exp(-0.25 * t)))
    assert fit.gamma_short == pytest.approx(0.25, rel=1e-6)


def test_relaxation_frozen():
    t = np.linspace(0, 20, 101)
    fit = fit_relaxation(TimeSeries(t, np.ones_like(t)))
    assert fit.gamma == 0
    assert fit.m_inf == 1


def test_diffusion_linear():
    lam = np.linspace(0.05, 0.5, 8)
    fit = fit_diffusion(zip(lam, 0.7 * lam))
    assert fit.D == pytest.approx(0.7)
    assert fit.beta == pytest.approx(1)
    assert fit.D_linear == pytest.approx(0.7)
    assert fit.count == 8
    assert fit.D_linear_err == pytest.approx(0, abs=1e-12)
    assert fit.chi_linear == pytest.approx(0, abs=1e-20)


def test_diffusion_anomalous_warns():
    lam = np.linspace(0.05, 0.5, 8)
    g = np.random.default_rng(0)
    gam = 0.7 * lam**1.6 * np.exp(g.normal(scale=0.01, size=8))
    with pytest.warns(UserWarning, match="departs from 1"):
        fit = fit_diffusion(zip(lam, gam))
    assert fit.beta == pytest.approx(1.6, abs=0.05)


def test_diffusion_cutoff():
    pts = [(0.1, 0.1), (0.3, 0.3), (0.9, 0.9), (1.5, 1.5)]
    with pytest.raises(InsufficientModesError, match="need 3"):
        fit_diffusion(pts, cutoff=0.5)


def test_diffusion_summary():
    lat = build_lattice(4, 4)
    em = laplacian_eigenmodes(lat)
    t = np.linspace(0, 30, 121)
    D = 0.4
    corr = np.exp(-D * np.multiply.outer(t, em.eigenvalues))
    ds = diffusion_summary(TimeSeries(t, corr), em, cutoff=2.5)
    assert list(ds.modes.columns) == ["k", "lambda", "gamma", "m_inf", "gamma_short", "converged"]
    assert len(ds.modes) == lat.n - 1
    np.testing.assert_allclose(ds.modes["gamma"], D * em.eigenvalues[1:], rtol=1e-3)
    assert ds.fit is not None
    assert ds.fit.D == pytest.approx(D, rel=1e-3)
    assert ds.fit.beta == pytest.approx(1, abs=1e-3)
