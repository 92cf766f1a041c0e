"""
Post-processing of time series.

For example:

- smooth a correlation trace (Savitzky–Golay) and fit the decay models
- extract the Edwards–Anderson order parameter ``Q_EA`` from ``C(t)``
- fit typical return probabilities, ``eta`` and its size scaling
- project magnetizations on Laplacian eigenmodes and fit diffusion

Correlations use the Pauli normalization ``sigma = 2 S``, so ``C(0) = 1``.
Multiply ``Q_EA`` by :data:`SPIN_CONVENTION_FACTOR` to compare with quantities
written in terms of ``S^z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd

SPIN_CONVENTION_FACTOR = 1 / 16
"""``<S^z S^z>^2`` in units of ``<sigma^z sigma^z>^2``."""


class FitWindowError(ValueError):
    """Fit window too narrow or outside the data."""


class InsufficientModesError(ValueError):
    """Too few eigenmodes below the diffusion cutoff."""


@dataclass(frozen=True)
class TimeSeries:
    """Values on a strictly increasing time grid (units ``1/J``).

    `values` may be 1-D or have time as the first axis (e.g. per-site traces).
    """

    times: npt.NDArray[np.float64]
    values: npt.NDArray[np.float64]
    variance: npt.NDArray[np.float64] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.ndim != 1:
            raise ValueError("`times` must be 1-D")
        if len(v) != len(t):
            raise ValueError(f"{len(t)} times but {len(v)} values")
        if np.any(np.diff(t) <= 0):
            raise ValueError("`times` must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if self.variance is not None:
            var = np.asarray(self.variance, dtype=np.float64)
            if var.shape != v.shape:
                raise ValueError("`variance` must match the shape of `values`")
            object.__setattr__(self, "variance", var)

    def __len__(self) -> int:
        return len(self.times)

    def site_average(self) -> TimeSeries:
        """Average over the second axis, if any."""
        if self.values.ndim == 1:
            return self
        return TimeSeries(self.times, self.values.mean(axis=1), meta=dict(self.meta))

    def window(self, t_lo: float, t_hi: float) -> TimeSeries:
        """Points with ``t_lo <= t <= t_hi``."""
        sel = (self.times >= t_lo) & (self.times <= t_hi)
        var = None if self.variance is None else self.variance[sel]
        return TimeSeries(self.times[sel], self.values[sel], var, dict(self.meta))


def _power(t, a, alpha):
    return a * t ** (-alpha)


def _exp_offset(t, a, gamma, q):
    return a * np.exp(-gamma * t) + q


def _powexp_offset(t, a, alpha, gamma, q):
    return a * t ** (-alpha) * np.exp(-gamma * t) + q


def _gaussian(x, amp, mu, sigma):
    return amp * np.exp(-((x - mu) ** 2) / (2 * sigma**2))


def _powerlaw(x, c, p):
    return c * x**p


def _linear(x, c):
    return c * x


class Model(NamedTuple):
    func: Callable[..., Any]
    params: tuple[str, ...]
    positive_t: bool
    """Only ``t > 0`` points are usable."""


MODELS: dict[str, Model] = {
    "power": Model(_power, ("a", "alpha"), True),
    "exp_offset": Model(_exp_offset, ("a", "gamma", "q"), False),
    "powexp_offset": Model(_powexp_offset, ("a", "alpha", "gamma", "q"), True),
    "gaussian": Model(_gaussian, ("amp", "mu", "sigma"), False),
    "powerlaw_loglog": Model(_powerlaw, ("c", "p"), True),
    "linear_loglog": Model(_linear, ("c",), True),
}
"""Fit models by id.

The ``*_loglog`` models are fit by linear least squares
(:func:`fit_powerlaw` on ``ln y`` against ``ln x``, :func:`fit_proportional` through the origin).
"""

CORRELATION_MODELS = ("power", "exp_offset", "powexp_offset")
"""Decay models compared by :func:`extract_qea`, in tie-break order."""


class FitResult(NamedTuple):
    model: str
    """Model id, a key of :data:`MODELS`."""
    params: dict[str, float]
    errors: dict[str, float]
    """Standard errors (``inf`` when the covariance could not be estimated)."""
    chi: float
    """Mean squared relative deviation of the fit from the data."""
    converged: bool

    def __call__(self, t):
        return MODELS[self.model].func(np.asarray(t, dtype=np.float64), *self.params.values())

    def to_row(self, **keys) -> dict[str, Any]:
        """Flat record: `keys`, then model, parameters, errors, chi."""
        row: dict[str, Any] = dict(keys)
        row["model"] = self.model
        for k, v in self.params.items():
            row[k] = v
            row[f"{k}_err"] = self.errors[k]
        row["chi"] = self.chi
        row["converged"] = self.converged
        return row


def chi_quality(fit: npt.ArrayLike, data: npt.ArrayLike) -> float:
    """``(1/n_t) sum_t ((C_fit - C_t) / C_t)^2`` over points with ``C_t != 0``."""
    fit = np.asarray(fit, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    nz = data != 0
    if not nz.any():
        return math.nan
    return float(np.mean(((fit[nz] - data[nz]) / data[nz]) ** 2))


def _curve_fit(f, x, y, p0, sigma):
    from scipy.optimize import OptimizeWarning, curve_fit

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        with np.errstate(all="ignore"):
            return curve_fit(f, x, y, p0=p0, sigma=sigma, maxfev=20_000)


def _multistart(
    model: str, x: np.ndarray, y: np.ndarray, starts: Sequence[Sequence[float]], *, relative: bool
) -> FitResult:
    m = MODELS[model]
    sigma = np.maximum(np.abs(y), 1e-12) if relative else None

    best: FitResult | None = None
    for p0 in starts:
        try:
            popt, pcov = _curve_fit(m.func, x, y, p0, sigma)
        except (RuntimeError, ValueError):
            continue
        if not np.all(np.isfinite(popt)):
            continue
        with np.errstate(all="ignore"):
            chi = chi_quality(m.func(x, *popt), y)
            err = np.sqrt(np.diag(pcov))
        err = np.where(np.isfinite(err), err, np.inf)
        res = FitResult(
            model=model,
            params={k: float(v) for k, v in zip(m.params, popt)},
            errors={k: float(v) for k, v in zip(m.params, err)},
            chi=chi,
            converged=True,
        )
        if best is None or res.chi < best.chi:
            best = res

    if best is None:
        p0 = starts[0]
        warnings.warn(
            f"{model} fit did not converge from any of {len(starts)} starts; "
            "returning the first start",
            stacklevel=3,
        )
        with np.errstate(all="ignore"):
            chi = chi_quality(m.func(x, *p0), y)
        best = FitResult(
            model=model,
            params={k: float(v) for k, v in zip(m.params, p0)},
            errors={k: math.inf for k in m.params},
            chi=chi,
            converged=False,
        )

    return best


def savgol(series: TimeSeries, window: int = 11, degree: int = 2) -> TimeSeries:
    """Savitzky–Golay smoothing along the time axis.

    The filter works on sample index, so on a log grid it smooths in ``log t``.
    The ends are fit with a polynomial over the last full window.

    Parameters
    ----------
    window
        Odd number of points, greater than `degree`.
    degree
        Polynomial degree, 2 to 5.
    """
    from scipy.signal import savgol_filter

    if not 2 <= degree <= 5:
        raise ValueError(f"`degree` must be in 2..5, got {degree}")
    if window % 2 != 1:
        raise ValueError(f"`window` must be odd, got {window}")
    if window <= degree:
        raise ValueError(f"`window` ({window}) must exceed `degree` ({degree})")
    if window > len(series):
        raise ValueError(f"`window` ({window}) longer than the series ({len(series)})")

    smoothed = savgol_filter(series.values, window, degree, axis=0, mode="interp")

    return TimeSeries(series.times, smoothed, series.variance, dict(series.meta))


def _half_life_rate(t, y, q):
    a = y[0] - q
    if a == 0:
        return 1 / max(t[-1], 1e-12)
    below = np.flatnonzero((y - q) / a <= 0.5)
    if len(below) == 0 or t[below[0]] <= 0:
        return 1 / max(t[-1], 1e-12)
    return math.log(2) / t[below[0]]


def _loglog_start(t, y):
    """``(a, alpha)`` of ``a t^-alpha`` through the end points."""
    yy = np.abs(y)
    if yy[0] == 0 or yy[-1] == 0 or t[-1] == t[0]:
        return float(yy.max() or 1), 0.0
    alpha = -math.log(yy[-1] / yy[0]) / math.log(t[-1] / t[0])
    return float(yy[0] * t[0] ** alpha), float(alpha)


def _starts(model: str, t: np.ndarray, y: np.ndarray) -> list[list[float]]:
    if model == "power":
        a, alpha = _loglog_start(t, y)
        (p, lnc) = np.polyfit(np.log(t), np.log(np.abs(y) + 1e-300), 1)
        return [[a, alpha], [math.exp(lnc), -p]]
    elif model == "exp_offset":
        starts = []
        for q in [float(y[-1]), 0.0]:
            g = _half_life_rate(t, y, q)
            for fac in [1, 0.3, 3]:
                starts.append([float(y[0] - q), g * fac, q])
        return starts
    elif model == "powexp_offset":
        a, alpha = _loglog_start(t, y)
        g0 = 1 / t[-1]
        starts = []
        for q in [0.0, float(y[-1])]:
            for g in [g0, 10 * g0]:
                starts.append([a, alpha, g, q])
            starts.append([float(y[0] - q) * t[0] ** 0.1, 0.1, _half_life_rate(t, y, q), q])
        return starts
    else:
        raise ValueError(f"{model!r} is not a correlation model; choose from {CORRELATION_MODELS}")


def fit_correlation(series: TimeSeries, model: str, *, relative: bool = True) -> FitResult:
    """Least-squares fit of a decay model to a (site-averaged) correlation series.

    Parameters
    ----------
    model
        ``'power'`` (``a t^-alpha``), ``'exp_offset'`` (``a exp(-gamma t) + q``)
        or ``'powexp_offset'`` (``a t^-alpha exp(-gamma t) + q``).
        Power-law models only use points with ``t > 0``.
    relative
        Weight residuals by ``1/|C_t|``, matching the :func:`chi_quality` measure.

    Notes
    -----
    Several starting points are tried
    (power law through the end points, rates from the half-life, with and without offset)
    and the fit with the smallest ``chi`` is kept.
    If none converges, the first start is returned with ``converged=False`` and a warning.
    """
    if model not in MODELS:
        raise ValueError(f"invalid model {model!r}; choose from {sorted(MODELS)}")
    if series.values.ndim != 1:
        raise ValueError("fit a 1-D series (take `site_average()` first)")

    t, y = series.times, series.values
    if MODELS[model].positive_t:
        sel = t > 0
        t, y = t[sel], y[sel]
        if np.any(y <= 0):
            raise ValueError(f"{model} model needs positive values")
    if len(t) < 8:
        raise ValueError(f"need at least 8 points to fit, got {len(t)}")

    return _multistart(model, t, y, _starts(model, t, y), relative=relative)


def fit_powerlaw(
    x: npt.ArrayLike, y: npt.ArrayLike, *, weights: npt.ArrayLike | None = None
) -> FitResult:
    """``y = c x^p`` by a straight-line fit of ``ln y`` on ``ln x`` (model ``'powerlaw_loglog'``).

    With `weights` (multiplying the log residuals) the fit needs at least 4 points, else 3.
    The error of ``c`` is propagated from that of ``ln c``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("`x` and `y` must be 1-D and of equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive `x` and `y`")

    lx, ly = np.log(x), np.log(y)
    if weights is None:
        from scipy.stats import linregress

        if len(x) < 3:
            raise ValueError(f"need at least 3 points, got {len(x)}")
        res = linregress(lx, ly)
        p, lnc, p_err, lnc_err = res.slope, res.intercept, res.stderr, res.intercept_stderr
    else:
        if len(x) < 4:
            raise ValueError(f"need at least 4 points for a weighted fit, got {len(x)}")
        (p, lnc), cov = np.polyfit(lx, ly, 1, w=np.asarray(weights, dtype=np.float64), cov=True)
        p_err, lnc_err = math.sqrt(abs(cov[0, 0])), math.sqrt(abs(cov[1, 1]))

    c = math.exp(lnc)
    return FitResult(
        model="powerlaw_loglog",
        params={"c": c, "p": float(p)},
        errors={"c": float(c * lnc_err), "p": float(p_err)},
        chi=chi_quality(_powerlaw(x, c, p), y),
        converged=True,
    )


def fit_proportional(x: npt.ArrayLike, y: npt.ArrayLike) -> FitResult:
    """``y = c x`` by least squares through the origin (model ``'linear_loglog'``,
    a power law with its exponent fixed to 1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or not np.any(x != 0):
        raise ValueError("need at least 2 points with nonzero `x`")

    sxx = float(np.sum(x**2))
    c = float(np.sum(x * y)) / sxx
    resid = y - c * x
    err = math.sqrt(float(np.sum(resid**2)) / (len(x) - 1) / sxx)
    return FitResult(
        model="linear_loglog",
        params={"c": c},
        errors={"c": err},
        chi=chi_quality(_linear(x, c), y),
        converged=True,
    )


class QEAResult(NamedTuple):
    qea: float
    """Edwards–Anderson order parameter, in [0, 1]."""
    model: str
    """Winning model id."""
    chi: dict[str, float]
    """Per-model fit quality."""
    fits: dict[str, FitResult]
    w: float | None = None


def squared_autocorrelation(traces: Iterable[TimeSeries]) -> TimeSeries:
    """``C(t)``: average over traces and sites of ``<sigma_i^z(0) sigma_i^z(t)>^2``.

    The returned ``meta`` records the number of traces averaged.
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    t = traces[0].times
    sq = []
    for tr in traces:
        if len(tr.times) != len(t) or not np.allclose(tr.times, t):
            raise ValueError("all traces must share one time grid")
        v = tr.values**2
        sq.append(v if v.ndim == 1 else v.mean(axis=1))
    sq = np.asarray(sq)

    return TimeSeries(
        t,
        sq.mean(axis=0),
        variance=sq.var(axis=0) / len(sq),
        meta={"count": len(sq), **{k: traces[0].meta[k] for k in ("n",) if k in traces[0].meta}},
    )


def _limit(fit: FitResult) -> float:
    p = fit.params
    if fit.model == "power":
        return p["a"] if abs(p["alpha"]) <= 1e-6 else 0.0
    return p["q"]


def extract_qea(
    C: TimeSeries, w: float | None = None, *, window: int = 11, degree: int = 2
) -> QEAResult:
    """Fit the decay models to the smoothed ``C(t)`` and take the long-time limit of the best.

    Model choice is by smallest ``chi`` against the Savitzky–Golay-filtered series,
    ties going to the earlier entry of :data:`CORRELATION_MODELS`.
    ``Q_EA`` is the offset of the offset models; for the pure power law it is 0,
    unless ``alpha = 0`` (frozen), where it is ``a``. The result is clipped to [0, 1].
    """
    Cs = savgol(C.site_average(), window=min(window, len(C) - (1 - len(C) % 2)), degree=degree)

    fits = {m: fit_correlation(Cs, m) for m in CORRELATION_MODELS}
    chi = {m: f.chi for m, f in fits.items()}
    best = CORRELATION_MODELS[0]
    for m in CORRELATION_MODELS[1:]:
        # a later model has to beat the incumbent beyond rounding
        if np.isfinite(chi[m]) and (
            not np.isfinite(chi[best]) or chi[m] < chi[best] * (1 - 1e-9) - 1e-20
        ):
            best = m
    qea = float(np.clip(_limit(fits[best]), 0, 1))

    return QEAResult(qea=qea, model=best, chi=chi, fits=fits, w=w)


class LnRStats(NamedTuple):
    mean: float
    """Direct average of ``ln R``."""
    std: float
    center: float
    """Center of the Gaussian fit to the ``ln R`` histogram."""
    width: float
    """Gaussian-fit standard deviation."""
    count: int

    @property
    def R_typ(self) -> float:
        return math.exp(self.center)


def lnR_typical(samples: npt.ArrayLike, *, min_samples: int = 30) -> LnRStats:
    """Distribution of ``ln R`` at one time.

    The histogram uses Freedman–Diaconis bins.
    With fewer than 5 occupied bins the Gaussian center and width fall back to the
    direct mean and standard deviation (with a warning).
    """
    R = np.asarray(samples, dtype=np.float64).ravel()
    if len(R) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(R)}")
    if np.any(R <= 0):
        raise ValueError(
            f"{int(np.sum(R <= 0))} samples have R <= 0; "
            "use exact R or more shots so that every estimate is positive"
        )

    x = np.log(R)
    mean, std = float(x.mean()), float(x.std(ddof=1))
    if std == 0:
        return LnRStats(mean, 0.0, mean, 0.0, len(x))

    edges = np.histogram_bin_edges(x, bins="fd")
    counts, edges = np.histogram(x, bins=edges)
    centers = (edges[:-1] + edges[1:]) / 2
    if np.count_nonzero(counts) < 5:
        warnings.warn(
            f"ln R histogram has only {np.count_nonzero(counts)} occupied bins; "
            "using the direct mean and standard deviation",
            stacklevel=2,
        )
        return LnRStats(mean, std, mean, std, len(x))

    fit = _multistart(
        "gaussian", centers, counts.astype(float), [[float(counts.max()), mean, std]], relative=False
    )
    if not fit.converged:
        return LnRStats(mean, std, mean, std, len(x))

    return LnRStats(mean, std, fit.params["mu"], abs(fit.params["sigma"]), len(x))


class EtaFit(NamedTuple):
    eta: float
    error: float
    window: tuple[float, float]
    chi: float = math.nan
    """Fit quality of ``R_typ ~ t^-eta`` over the window."""


def fit_eta(R_typ: TimeSeries, window: tuple[float, float]) -> EtaFit:
    """Slope of ``-ln R_typ`` against ``ln(Jt)`` over `window`.

    Points are weighted by ``1/sqrt(variance)`` when the series carries a variance (of ``ln R``).
    """
    t_lo, t_hi = window
    if not 0 < t_lo < t_hi:
        raise FitWindowError(f"invalid window {window}")
    if t_hi / t_lo < math.sqrt(10):
        raise FitWindowError(f"window {window} spans less than half a decade")
    if t_lo < R_typ.times[0] or t_hi > R_typ.times[-1]:
        raise FitWindowError(
            f"window {window} outside the data range [{R_typ.times[0]}, {R_typ.times[-1]}]"
        )

    s = R_typ.site_average().window(t_lo, t_hi)
    if len(s) < 4:
        raise FitWindowError(f"window {window} holds only {len(s)} points, need 4")
    if np.any(s.values <= 0):
        raise ValueError("`R_typ` must be positive")

    wts = None
    if s.variance is not None and np.all(s.variance > 0):
        wts = 1 / np.sqrt(s.variance)

    fit = fit_powerlaw(s.times, s.values, weights=wts)

    return EtaFit(eta=-fit.params["p"], error=fit.errors["p"], window=(t_lo, t_hi), chi=fit.chi)


class ScalingFit(NamedTuple):
    p: float
    """Exponent of ``eta ~ kappa n^p``."""
    kappa: float
    p_err: float
    kappa_err: float
    chi: float = math.nan


def fit_eta_scaling(pairs: Iterable[tuple[int, float]]) -> ScalingFit:
    """Regression of ``ln eta`` on ``ln n`` (see :func:`fit_powerlaw`)."""
    arr = np.asarray(list(pairs), dtype=np.float64).reshape(-1, 2)
    n, eta = arr[:, 0], arr[:, 1]
    if len(np.unique(n)) < 3:
        raise ValueError(f"need at least 3 distinct sizes, got {np.unique(n).tolist()}")
    if np.any(eta <= 0) or np.any(n <= 0):
        raise ValueError("sizes and eta values must be positive")

    fit = fit_powerlaw(n, eta)

    return ScalingFit(
        p=fit.params["p"],
        kappa=fit.params["c"],
        p_err=fit.errors["p"],
        kappa_err=fit.errors["c"],
        chi=fit.chi,
    )


class ModeProjection(NamedTuple):
    projections: list[TimeSeries]
    """Per trajectory, ``m_k(t)`` with shape ``(len(times), n_modes)``."""
    correlation: TimeSeries
    """``<m_k(t) m_k(0)> / <m_k(0)^2>`` averaged over trajectories; NaN where ``<m_k(0)^2> = 0``."""


def mode_projection(mags: Iterable[TimeSeries], modes) -> ModeProjection:
    """Project per-site magnetization snapshots onto Laplacian eigenmodes.

    Parameters
    ----------
    mags
        Trajectories with values ``<sigma_i^z(t)>`` of shape ``(len(times), n)``.
    modes
        :class:`~xyglass.lattice.EigenmodeSet` of the same lattice.
    """
    V = np.asarray(modes.modes, dtype=np.float64)
    projections = []
    for s in mags:
        if s.values.ndim != 2 or s.values.shape[1] != V.shape[1]:
            raise ValueError(
                f"magnetization snapshots have shape {s.values.shape}, modes have length {V.shape[1]}"
            )
        projections.append(TimeSeries(s.times, s.values @ V.T, meta=dict(s.meta)))
    if not projections:
        raise ValueError("need at least one trajectory")

    t = projections[0].times
    m = np.asarray([p.values for p in projections])  # (traj, t, k)
    num = np.mean(m * m[:, :1, :], axis=0)
    den = np.mean(m[:, 0, :] ** 2, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(den > 1e-24, num / np.where(den > 1e-24, den, 1), np.nan)

    return ModeProjection(projections, TimeSeries(t, corr, meta={"count": len(m)}))


class RelaxationFit(NamedTuple):
    gamma: float
    m_inf: float
    gamma_err: float
    m_inf_err: float
    gamma_short: float
    """Rate from the log-slope over the first e-fold (NaN when it never decays that far)."""
    converged: bool


def fit_relaxation(corr: TimeSeries) -> RelaxationFit:
    """Fit ``a exp(-gamma t) + M_inf`` to a normalized mode correlation."""
    s = corr.site_average()
    t, y = s.times, s.values

    efold = y >= math.exp(-1)
    n_short = np.argmin(efold) if not efold.all() else len(y)
    gamma_short = math.nan
    if n_short >= 2 and np.all(y[:n_short] > 0) and n_short < len(y):
        gamma_short = float(-np.polyfit(t[:n_short], np.log(y[:n_short]), 1)[0])

    if np.ptp(y) <= 1e-12:
        return RelaxationFit(0.0, float(y.mean()), 0.0, 0.0, 0.0, True)

    fit = fit_correlation(s, "exp_offset", relative=False)
    p, e = fit.params, fit.errors
    if not fit.converged:
        warnings.warn("relaxation fit did not converge", stacklevel=2)

    return RelaxationFit(
        gamma=p["gamma"],
        m_inf=p["q"],
        gamma_err=e["gamma"],
        m_inf_err=e["q"],
        gamma_short=gamma_short,
        converged=fit.converged,
    )


class DiffusionFit(NamedTuple):
    D: float
    """Prefactor of ``Gamma = D lambda^beta``."""
    beta: float
    D_err: float
    beta_err: float
    D_linear: float
    """Least-squares ``D`` with ``beta`` fixed to 1."""
    count: int
    D_linear_err: float = math.nan
    chi: float = math.nan
    """Fit quality of ``D lambda^beta``."""
    chi_linear: float = math.nan


def fit_diffusion(points: Iterable[tuple[float, float]], *, cutoff: float = 0.5) -> DiffusionFit:
    """Power-law fit of rate against Laplacian eigenvalue, ``Gamma = D lambda^beta``.

    Only modes with ``0 < lambda <= cutoff`` and ``Gamma > 0`` enter.
    Warns when ``beta`` departs from 1 by more than twice its error.
    """
    arr = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    lam, gam = arr[:, 0], arr[:, 1]
    sel = (lam > 0) & (lam <= cutoff) & (gam > 0) & np.isfinite(gam)
    if sel.sum() < 3:
        raise InsufficientModesError(
            f"{int(sel.sum())} modes with 0 < lambda <= {cutoff} and positive rate, need 3"
        )
    lam, gam = lam[sel], gam[sel]

    fit = fit_powerlaw(lam, gam)
    lin = fit_proportional(lam, gam)
    beta, beta_err = fit.params["p"], fit.errors["p"]
    if abs(beta - 1) > max(2 * beta_err, 1e-8):
        warnings.warn(
            f"diffusion exponent beta = {beta:.3g} +/- {beta_err:.2g} departs from 1", stacklevel=2
        )

    return DiffusionFit(
        D=fit.params["c"],
        beta=beta,
        D_err=fit.errors["c"],
        beta_err=beta_err,
        D_linear=lin.params["c"],
        count=int(sel.sum()),
        D_linear_err=lin.errors["c"],
        chi=fit.chi,
        chi_linear=lin.chi,
    )


class DiffusionSummary(NamedTuple):
    modes: pd.DataFrame
    """Per mode: ``k``, ``lambda``, ``gamma``, ``m_inf``, ``gamma_short``, ``converged``."""
    fit: DiffusionFit | None
    """``None`` when too few modes lie below the cutoff."""


def diffusion_summary(correlation: TimeSeries, modes, *, cutoff: float = 0.5) -> DiffusionSummary:
    """Per-mode relaxation fits followed by the diffusion fit.

    Parameters
    ----------
    correlation
        ``ModeProjection.correlation``.
    modes
        The :class:`~xyglass.lattice.EigenmodeSet` the correlation was projected on.
    """
    lams = np.asarray(modes.eigenvalues)
    rows = []
    for k in range(1, len(lams)):
        c = correlation.values[:, k]
        if not np.all(np.isfinite(c)):
            continue
        r = fit_relaxation(TimeSeries(correlation.times, c))
        rows.append(
            {
                "k": k,
                "lambda": float(lams[k]),
                "gamma": max(r.gamma, 0.0),
                "m_inf": float(np.clip(r.m_inf, -1, 1)),
                "gamma_short": r.gamma_short,
                "converged": r.converged,
            }
        )

    df = pd.DataFrame(rows, columns=["k", "lambda", "gamma", "m_inf", "gamma_short", "converged"])
    df.attrs.update(
        col_desc={
            "k": "Mode index (ascending eigenvalue)",
            "lambda": "Graph-Laplacian eigenvalue",
            "gamma": "Relaxation rate of the mode correlation [J]",
            "m_inf": "Frozen amplitude of the mode correlation",
            "gamma_short": "Rate from the log-slope over the first e-fold [J]",
            "converged": "Relaxation fit converged",
        }
    )

    try:
        fit = fit_diffusion(zip(df["lambda"], df["gamma"]), cutoff=cutoff)
    except InsufficientModesError as e:
        warnings.warn(f"no diffusion fit: {e}", stacklevel=2)
        fit = None

    return DiffusionSummary(df, fit)
