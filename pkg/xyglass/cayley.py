"""
Relaxation and dephasing thresholds on the Cayley tree.

Fields are box-distributed on ``[-1/2, 1/2]`` (units ``W = 1``, so ``j = J/W``).
Recursions for the local rates of a site ``j`` with ``K`` descendants:

- relaxation: ``G_j = j^2 sum_k G_k / ((h_j - h_k)^2 + G_k^2)``
- dephasing (linearized): ``G_j = j^4 sum_{k<m} [(h_j - h_k)^-2 + (h_j - h_m)^-2] (G_k + G_m) / (h_k - h_m)^2``

The freezing analysis of the dephasing recursion replaces it (at ``h_j = 0``) by ``K^2`` independent terms
``j^4 f(h_1, h_2) G`` with ``f = (h_1 - h_2)^-2 (1/h_1 + 1/h_2)^2``;
pools can iterate either form (``recursion='tree'`` or ``'upper_limit'``).

Thresholds come from four routes:

- population (pool) dynamics of the recursions
- the freezing criterion ``F(x*) = F'(x*) = 0`` of the linearized recursions (upper limit)
- closed forms of the upper-limit thresholds (dephasing also by direct integration of ``F_2``)
- self-energy corrected integral conditions
"""

from __future__ import annotations

import logging
import math
import warnings
from functools import lru_cache, partial
from itertools import combinations
from typing import Callable, Literal, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt

from .util import derive_seed, rng

LOGGER = logging.getLogger(__name__)

Channel = Literal["relaxation", "dephasing"]
Scheme = Literal["upper_limit", "self_energy", "pool"]
Recursion = Literal["tree", "upper_limit"]

CHANNELS: tuple[Channel, ...] = ("relaxation", "dephasing")
SCHEMES: tuple[Scheme, ...] = ("upper_limit", "self_energy", "pool")
RECURSIONS: tuple[Recursion, ...] = ("tree", "upper_limit")

_DEGENERATE = 1e-12


class NoRootError(RuntimeError):
    """No sign change of the threshold condition in the search interval."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature missed its tolerance."""


class NonMonotoneVerdictError(RuntimeError):
    """Pool verdicts at the bracket ends do not differ; the pool is too small or too short."""


class RecursionPool(NamedTuple):
    gamma: npt.NDArray[np.float64]
    """Rate samples (units W), divided by ``exp(log_shift)`` in linearized mode."""
    K: int
    """Branching number."""
    j: float
    """Coupling ``J/W``."""
    mode: Channel
    sweeps: int = 0
    linearized: bool = False
    """Drop ``G_k^2`` from the relaxation denominator and renormalize each sweep by the median."""
    h0_zero: bool = False
    """Set the field of the updated site to 0."""
    log_shift: float = 0.0
    """Accumulated log of the renormalization factors."""
    recursion: Recursion = "tree"
    """Dephasing update: the sum over child pairs, or the ``K^2``-term form of the freezing analysis."""

    @property
    def size(self) -> int:
        return len(self.gamma)

    def typical(self) -> float:
        """Median ``ln G``, including the renormalization shift."""
        with np.errstate(divide="ignore"):
            return float(np.median(np.log(self.gamma))) + self.log_shift


class ThresholdResult(NamedTuple):
    K: int
    scheme: Scheme
    channel: Channel
    j_critical: float
    tolerance: float
    """Absolute numerical tolerance on `j_critical`."""


def init_pool(
    size: int,
    K: int,
    j: float,
    mode: Channel,
    *,
    linearized: bool = False,
    h0_zero: bool = False,
    gamma0: float = 1.0,
    recursion: Recursion = "tree",
) -> RecursionPool:
    """Pool with every sample equal to `gamma0`."""
    if size < 1:
        raise ValueError(f"pool `size` must be positive, got {size}")
    if K < 2:
        raise ValueError(f"branching number `K` must be at least 2, got {K}")
    if mode not in CHANNELS:
        raise ValueError(f"invalid mode {mode!r}; choose from {CHANNELS}")
    if gamma0 < 0:
        raise ValueError("`gamma0` must be nonnegative")
    if recursion not in RECURSIONS:
        raise ValueError(f"invalid recursion {recursion!r}; choose from {RECURSIONS}")

    return RecursionPool(
        gamma=np.full(size, float(gamma0)),
        K=K,
        j=float(j),
        mode=mode,
        linearized=linearized,
        h0_zero=h0_zero,
        recursion=recursion,
    )


def _fields(g: np.random.Generator, shape) -> np.ndarray:
    return g.uniform(-0.5, 0.5, size=shape)


def _resample_degenerate(g, hj, hk, pairs_too: bool):
    """Redraw rows where a denominator would vanish."""
    while True:
        bad = np.any(np.abs(hj[:, None] - hk) < _DEGENERATE, axis=1)
        if pairs_too:
            for a, b in combinations(range(hk.shape[1]), 2):
                bad |= np.abs(hk[:, a] - hk[:, b]) < _DEGENERATE
        if not bad.any():
            return hj, hk
        hk[bad] = _fields(g, (int(bad.sum()), hk.shape[1]))
        if not np.all(hj == 0):
            hj[bad] = _fields(g, int(bad.sum()))


def _resample_kernel(g, h1, h2):
    """Redraw terms where ``h_1``, ``h_2`` or ``h_1 - h_2`` would vanish."""
    while True:
        bad = (np.abs(h1) < _DEGENERATE) | (np.abs(h2) < _DEGENERATE) | (np.abs(h1 - h2) < _DEGENERATE)
        if not bad.any():
            return h1, h2
        h1[bad] = _fields(g, int(bad.sum()))
        h2[bad] = _fields(g, int(bad.sum()))


def pool_sweep(pool: RecursionPool, seed: int) -> RecursionPool:
    """Replace every sample by one recursion step from random parents and fresh fields.

    The generator for sweep ``s`` is keyed by ``derive_seed(seed, s)``,
    so a run is reproducible from ``(seed, pool size)``.
    The ``'upper_limit'`` dephasing form has ``h_j = 0`` built in.
    """
    g = rng(derive_seed(seed, pool.sweeps))
    N, K = pool.size, pool.K
    # the K^2-term form draws one parent and one field pair per term
    fan = K * K if pool.mode == "dephasing" and pool.recursion == "upper_limit" else K

    parents = pool.gamma[g.integers(0, N, size=(N, fan))]
    hk = _fields(g, (N, fan))
    hj = np.zeros(N) if pool.h0_zero else _fields(g, N)

    if pool.mode == "relaxation":
        if pool.linearized:
            hj, hk = _resample_degenerate(g, hj, hk, pairs_too=False)
            den = (hj[:, None] - hk) ** 2
        else:
            den = (hj[:, None] - hk) ** 2 + parents**2
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(parents > 0, parents / np.where(den > 0, den, 1), 0.0)
        new = pool.j**2 * terms.sum(axis=1)
    elif pool.recursion == "upper_limit":
        h1, h2 = _resample_kernel(g, hk, _fields(g, (N, fan)))
        new = pool.j**4 * np.sum((1 / h1 + 1 / h2) ** 2 / (h1 - h2) ** 2 * parents, axis=1)
    else:
        hj, hk = _resample_degenerate(g, hj, hk, pairs_too=True)
        new = np.zeros(N)
        dj = (hj[:, None] - hk) ** -2
        for a, b in combinations(range(K), 2):
            new += (dj[:, a] + dj[:, b]) * (parents[:, a] + parents[:, b]) / (hk[:, a] - hk[:, b]) ** 2
        new *= pool.j**4

    log_shift = pool.log_shift
    if pool.linearized:
        med = float(np.median(new))
        if med > 0:
            new = new / med
            log_shift += math.log(med)

    return pool._replace(gamma=new, sweeps=pool.sweeps + 1, log_shift=log_shift)


def _verdict(
    K: int,
    j: float,
    channel: Channel,
    size: int,
    sweeps: int,
    seed: int,
    h0_zero: bool,
    recursion: Recursion = "tree",
) -> float:
    """Slope of the typical ``ln G`` over the last half of the sweeps."""
    pool = init_pool(size, K, j, channel, linearized=True, h0_zero=h0_zero, recursion=recursion)
    history = []
    for _ in range(sweeps):
        pool = pool_sweep(pool, seed)
        history.append(pool.typical())
    tail = np.asarray(history[sweeps // 2 :])
    return float(np.polyfit(np.arange(len(tail)), tail, 1)[0])


def pool_threshold(
    K: int,
    channel: Channel,
    *,
    size: int = 100_000,
    sweeps: int = 60,
    tol: float = 0.02,
    j_bracket: tuple[float, float] = (1e-3, 0.2),
    seed: int = 0,
    h0_zero: bool = True,
    recursion: Recursion = "tree",
) -> ThresholdResult:
    """Bisect ``j`` on the drift verdict of linearized pools.

    The verdict is the slope of the median ``ln G`` against sweep index over the last half
    of the sweeps: positive means growing rates (above threshold).

    A finite pool truncates the upper tail of the rate distribution,
    which slows the drift, so the estimate sits above the infinite-pool value
    by a factor that shrinks like ``exp(c / ln(size)^2)``
    (see :func:`pool_threshold_extrapolated`).

    Parameters
    ----------
    tol
        Relative bracket width at which bisection stops.
    recursion
        Dephasing update, see :class:`RecursionPool`.
    """
    if size < 10_000:
        raise ValueError(f"pool `size` must be at least 10^4, got {size}")
    if sweeps < 4:
        raise ValueError(f"need at least 4 sweeps, got {sweeps}")

    verdict = partial(
        _verdict,
        K,
        channel=channel,
        size=size,
        sweeps=sweeps,
        seed=seed,
        h0_zero=h0_zero,
        recursion=recursion,
    )
    lo, hi = j_bracket
    v_lo, v_hi = verdict(lo), verdict(hi)
    if not (v_lo < 0 < v_hi):
        raise NonMonotoneVerdictError(
            f"drift at j={lo} is {v_lo:.3g} and at j={hi} is {v_hi:.3g}; "
            "need decay below and growth above"
        )

    while (hi - lo) > tol * (hi + lo):
        mid = math.sqrt(lo * hi)
        if verdict(mid) > 0:
            hi = mid
        else:
            lo = mid

    return ThresholdResult(
        K=K, scheme="pool", channel=channel, j_critical=(lo + hi) / 2, tolerance=(hi - lo) / 2
    )


class PoolExtrapolation(NamedTuple):
    result: ThresholdResult
    """Infinite-pool estimate; `tolerance` is the standard error of the intercept."""
    sizes: tuple[int, ...]
    estimates: tuple[float, ...]
    """Replica-averaged threshold at each size (geometric mean)."""
    slope: float
    """Coefficient ``c`` of ``ln j(size) = ln j_inf + c / ln(size)^2``."""


def pool_threshold_extrapolated(
    K: int,
    channel: Channel,
    *,
    sizes: Sequence[int] = (10_000, 30_000, 100_000, 300_000),
    replicas: int = 3,
    sweeps: int = 200,
    seed: int = 0,
    **kws,
) -> PoolExtrapolation:
    """Pool thresholds at several sizes, extrapolated to an infinite pool.

    The finite-pool threshold approaches its limit like ``ln j(size) = ln j_inf + c / ln(size)^2``.
    At each size the threshold is the geometric mean over `replicas` seeds
    (``derive_seed(seed, size, r)``), and ``ln j_inf`` is the intercept of a straight-line fit
    against ``1 / ln(size)^2``.

    Other keywords go to :func:`pool_threshold`.
    """
    from scipy.stats import linregress

    sizes = tuple(sorted({int(s) for s in sizes}))
    if len(sizes) < 3:
        raise ValueError(f"need at least 3 distinct pool sizes, got {list(sizes)}")
    if replicas < 1:
        raise ValueError(f"`replicas` must be at least 1, got {replicas}")
    if "size" in kws:
        raise TypeError("pass `sizes`, not `size`, for an extrapolated threshold")

    estimates = []
    for size in sizes:
        lnj = [
            math.log(
                pool_threshold(
                    K, channel, size=size, sweeps=sweeps, seed=derive_seed(seed, size, r), **kws
                ).j_critical
            )
            for r in range(replicas)
        ]
        estimates.append(math.exp(sum(lnj) / replicas))
        LOGGER.info("pool threshold K=%d %s size=%d: %.5g", K, channel, size, estimates[-1])

    x = 1 / np.log(sizes) ** 2
    res = linregress(x, np.log(estimates))
    j_inf = math.exp(res.intercept)

    return PoolExtrapolation(
        result=ThresholdResult(
            K=K,
            scheme="pool",
            channel=channel,
            j_critical=j_inf,
            tolerance=j_inf * float(res.intercept_stderr),
        ),
        sizes=sizes,
        estimates=tuple(estimates),
        slope=float(res.slope),
    )


class CriticalPoint(NamedTuple):
    x: float
    """Location of the minimum of ``F``."""
    j: float
    """Coupling at which that minimum touches zero."""


def freezing_critical_point(
    F: Callable[[float, float], float],
    x_interval: tuple[float, float],
    j_bracket: tuple[float, float],
) -> CriticalPoint:
    """Solve ``F(x*) = 0, dF/dx(x*) = 0``.

    For each ``j`` the inner problem minimizes ``F(x, j)`` over `x_interval`;
    the outer problem finds the ``j`` at which the minimum is zero.

    Parameters
    ----------
    F
        ``F(x, j)``, convex in ``x`` on the interval and increasing in ``j``
        (see :func:`f1` and :func:`f2`).
    """
    from scipy.optimize import brentq, minimize_scalar

    def inner(j):
        res = minimize_scalar(
            lambda x: F(x, j), bounds=x_interval, method="bounded", options={"xatol": 1e-10}
        )
        return res

    def outer(log_j):
        return inner(math.exp(log_j)).fun

    a, b = math.log(j_bracket[0]), math.log(j_bracket[1])
    fa, fb = outer(a), outer(b)
    if fa * fb > 0:
        raise NoRootError(
            f"min F has one sign on j in {j_bracket}: {fa:.3g} at the low end, {fb:.3g} at the high end"
        )
    log_jc = brentq(outer, a, b, xtol=1e-12, rtol=1e-10)
    jc = math.exp(log_jc)

    return CriticalPoint(x=float(inner(jc).x), j=jc)


def f1(K: int) -> Callable[[float, float], float]:
    """``F_1(x; j) = (1/x) ln(K <(j^2 / h^2)^x>)`` over the box distribution.

    Finite for ``0 < x < 1/2``.
    """
    from scipy.integrate import quad

    @lru_cache(maxsize=None)
    def moment(x):
        # <|h|^-2x> = 2 int_0^{1/2} h^-2x dh, algebraic end point singularity
        val, _ = quad(lambda h: 1.0, 0, 0.5, weight="alg", wvar=(-2 * x, 0))
        return 2 * val

    def F(x, j):
        return (math.log(K) + 2 * x * math.log(j) + math.log(moment(x))) / x

    return F


def _f2_angular(theta, x):
    c, s = np.cos(theta), np.sin(theta)
    R = 1 / np.maximum(np.abs(c), np.abs(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        fx = np.abs(s + c) ** (2 * x) / np.abs(c * s * (c - s)) ** (2 * x)
    return fx * R ** (2 - 4 * x)


@lru_cache(maxsize=None)
def _f2_moment(x: float) -> float:
    """``int int_{[-1/2, 1/2]^2} f(h1, h2)^x``, ``f = (h1 - h2)^-2 (1/h1 + 1/h2)^2``.

    ``f`` is homogeneous of degree -4, so the radial integral is done analytically
    and what remains is an angular integral with algebraic singularities at the split points.
    """
    from scipy.integrate import quad

    total = 0.0
    edges = [0, math.pi / 4, math.pi / 2, 3 * math.pi / 4, math.pi]
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = quad(_f2_angular, a, b, args=(x,), epsabs=0, epsrel=1e-9, limit=400)
        total += val
    # both halves of the circle, radial factor over [-1, 1]^2, then rescale to [-1/2, 1/2]^2
    square = 2 * total / (2 - 4 * x)
    return square * 16**x / 4


def f2(K: int) -> Callable[[float, float], float]:
    """``F_2(x; j) = (1/x) ln(K^2 int int [j^4 f(h1, h2)]^x)``.

    Finite for ``0 < x < 1/2``.
    """

    def F(x, j):
        return (2 * math.log(K) + 4 * x * math.log(j) + math.log(_f2_moment(x))) / x

    return F


_X_INTERVAL = (1e-3, 0.5 - 1e-6)
_J_BRACKET = (1e-4, 0.2)


def upper_limit_relaxation(K: int) -> float:
    """Root of ``1/(2j) = e K ln(1/(2j))`` in ``(0, 0.1)``.

    Examples
    --------
    >>> round(upper_limit_relaxation(3), 4)
    0.0186
    """
    from scipy.optimize import brentq

    if K < 2:
        raise ValueError(f"`K` must be at least 2, got {K}")

    def cond(j):
        return 1 / (2 * j) - math.e * K * math.log(1 / (2 * j))

    return float(brentq(cond, 1e-8, 0.1, xtol=1e-14, rtol=1e-12))


# log-amplitude constant of the approximate dephasing condition
DEPHASING_ALPHA = 0.41


def upper_limit_dephasing(
    K: int, *, method: str = "closed_form", alpha: float = DEPHASING_ALPHA
) -> float:
    """Dephasing threshold without self-energy.

    ``method="integral"`` applies the freezing criterion to :func:`f2`.
    ``method="closed_form"`` solves the approximate integration of ``F_2``,
    ``1 / (j sqrt(2 sqrt(2) + 2)) = e K ln(sqrt(alpha) / j)``.

    Examples
    --------
    >>> round(upper_limit_dephasing(3), 4)
    0.0148
    """
    from scipy.optimize import brentq

    if K < 2:
        raise ValueError(f"`K` must be at least 2, got {K}")
    if method == "integral":
        return freezing_critical_point(f2(K), _X_INTERVAL, _J_BRACKET).j
    if method != "closed_form":
        raise ValueError(f"invalid method {method!r}; choose 'closed_form' or 'integral'")
    if not alpha > 0:
        raise ValueError(f"`alpha` must be positive, got {alpha}")

    c = math.sqrt(2 * math.sqrt(2) + 2)
    root = math.sqrt(alpha)

    def cond(j):
        return 1 / (c * j) - math.e * K * math.log(root / j)

    return float(brentq(cond, 1e-8, root / math.e, xtol=1e-14, rtol=1e-12))


def selfenergy_relaxation(K: int) -> float:
    """Root of ``1/(2j) - 2j = 2K ln(1/(2j))``.

    This is ``K j int P_1(h) dh / h = 1`` for the distribution with the gap ``|h| < 2j^2`` removed.
    """
    from scipy.optimize import brentq

    if K < 2:
        raise ValueError(f"`K` must be at least 2, got {K}")

    def cond(j):
        return 1 / (2 * j) - 2 * j - 2 * K * math.log(1 / (2 * j))

    return float(brentq(cond, 1e-8, 0.1, xtol=1e-14, rtol=1e-12))


# singular directions of the dephasing integrand in [0, pi]: y = 0, x = y, x = 0, y = 0
_CORNERS = (0.0, math.pi / 4, math.pi / 2, math.pi)
_HALF_WIDTH = math.pi / 8
_V_MAX = 200.0


def _dephasing_terms(corner: int, delta: float, j: float) -> tuple[float, float]:
    """Angular weight and masked radial log-span at ``theta = _CORNERS[corner] + delta``.

    ``cos``, ``sin`` and ``cos - sin`` are expanded about the corner
    so that they keep full precision for ``|delta|`` far below machine epsilon.
    """
    cd, sd = math.cos(delta), math.sin(delta)
    if corner == 0:
        c, s = cd, sd
        d = c - s
    elif corner == 1:
        r = math.sqrt(0.5)
        c, s = r * (cd - sd), r * (cd + sd)
        d = -math.sqrt(2) * sd
    elif corner == 2:
        c, s = -sd, cd
        d = c - s
    else:
        c, s = -cd, -sd
        d = c - s

    if c == 0 or s == 0 or d == 0:
        return 0.0, -math.inf
    u = 1 / c + 1 / s
    if u == 0:
        return 0.0, -math.inf
    g = abs(u) / abs(d)
    sig = j**4 * u**2 / abs(d)
    R = 1 / (2 * max(abs(c), abs(s)))
    # radial range allowed by |Re Sigma| < 1/2 is r >= (2 sig)^(1/3)
    return g, math.log(R) - math.log(2 * sig) / 3


def _check_quad(val, err, where, j, rtol):
    if err > rtol * max(abs(val), 1e-300):
        raise QuadratureError(
            f"angular quadrature {where} at j={j:.4g}: value {val:.6g}, error estimate {err:.2g}"
        )


def _corner_integral(corner: int, side: int, j: float, rtol: float) -> float:
    """Angular integral over ``[corner, corner + side * pi/8]`` in ``v = -ln(|delta| / (pi/8))``.

    Near a corner the weight grows like ``1/|delta|``, so in ``v`` the integrand is smooth
    and the mask cuts it off at the ``v`` where the log-span reaches zero.
    """
    from scipy.integrate import quad
    from scipy.optimize import brentq

    def delta(v):
        return side * _HALF_WIDTH * math.exp(-v)

    def span(v):
        return _dephasing_terms(corner, delta(v), j)[1]

    if span(0) <= 0:
        return 0.0
    v_cut = _V_MAX if span(_V_MAX) > 0 else brentq(span, 0, _V_MAX, xtol=1e-12)

    def integrand(v):
        g, sp = _dephasing_terms(corner, delta(v), j)
        return g * sp * abs(delta(v)) if sp > 0 else 0.0

    val, err = quad(integrand, 0, v_cut, epsabs=0, epsrel=rtol / 10, limit=200)
    _check_quad(val, err, f"near theta={_CORNERS[corner]:.4f} ({'+' if side > 0 else '-'})", j, rtol)
    return val


def _dephasing_angular(theta, j):
    c, s = math.cos(theta), math.sin(theta)
    u = 1 / c + 1 / s
    if u == 0:
        return 0.0
    g = abs(u) / abs(c - s)
    sig = j**4 * u**2 / abs(c - s)
    R = 1 / (2 * max(abs(c), abs(s)))
    span = math.log(R) - math.log(2 * sig) / 3
    return g * span if span > 0 else 0.0


def selfenergy_integral(j: float, *, rtol: float = 1e-4) -> float:
    """``int int |1/x + 1/y| theta(1/2 - |s|) / |x - y|`` over ``[-1/2, 1/2]^2``,
    with ``s = j^4 (1/x + 1/y)^2 / |x - y|``.

    The integrand and ``s`` are homogeneous (degrees -2 and -3),
    so the masked radial integral is a logarithm and one angular integral remains.
    The angular weight is singular along ``x = 0``, ``y = 0`` and ``x = y``;
    within ``pi/8`` of those directions it is integrated in a log-transformed variable.
    """
    from scipy.integrate import quad

    if j <= 0:
        raise ValueError(f"`j` must be positive, got {j}")

    total = (
        _corner_integral(0, +1, j, rtol)
        + _corner_integral(1, -1, j, rtol)
        + _corner_integral(1, +1, j, rtol)
        + _corner_integral(2, -1, j, rtol)
        + _corner_integral(2, +1, j, rtol)
        + _corner_integral(3, -1, j, rtol)
    )
    # the weight vanishes on x = -y (theta = 3 pi/4), no singularity in between
    a, b = 5 * math.pi / 8, 7 * math.pi / 8
    val, err = quad(
        _dephasing_angular, a, b, args=(j,), points=[3 * math.pi / 4], epsabs=0, epsrel=rtol / 10, limit=200
    )
    _check_quad(val, err, f"on [{a:.4f}, {b:.4f}]", j, rtol)

    # (x, y) -> (-x, -y) covers the other half of the circle
    return 2 * (total + val)


def selfenergy_dephasing(K: int, *, rtol: float = 1e-4) -> float:
    """Root in ``j`` of ``selfenergy_integral(j) = 1 / (j K)^2``."""
    from scipy.optimize import brentq

    if K < 2:
        raise ValueError(f"`K` must be at least 2, got {K}")

    def cond(log_j):
        j = math.exp(log_j)
        return math.log(selfenergy_integral(j, rtol=rtol)) + 2 * math.log(j * K)

    a, b = math.log(1e-4), math.log(0.2)
    fa, fb = cond(a), cond(b)
    if fa * fb > 0:
        raise NoRootError(f"self-energy dephasing condition has no sign change for K={K}")

    return math.exp(brentq(cond, a, b, xtol=1e-10, rtol=1e-10))


def threshold(K: int, scheme: Scheme, channel: Channel, **pool_kws) -> ThresholdResult:
    """Dispatch to the solver for ``(scheme, channel)``."""
    if scheme == "pool":
        if "sizes" in pool_kws:
            pool_kws.pop("size", None)
            return pool_threshold_extrapolated(K, channel, **pool_kws).result
        return pool_threshold(K, channel, **pool_kws)
    if pool_kws:
        warnings.warn(f"pool options {sorted(pool_kws)} ignored for scheme {scheme!r}", stacklevel=2)

    solvers = {
        ("upper_limit", "relaxation"): (upper_limit_relaxation, 1e-12),
        ("upper_limit", "dephasing"): (upper_limit_dephasing, 1e-12),
        ("self_energy", "relaxation"): (selfenergy_relaxation, 1e-12),
        ("self_energy", "dephasing"): (selfenergy_dephasing, 1e-8),
    }
    try:
        fn, tol = solvers[(scheme, channel)]
    except KeyError:
        raise ValueError(
            f"invalid scheme/channel {scheme!r}/{channel!r}; choose from {SCHEMES} x {CHANNELS}"
        ) from None

    return ThresholdResult(K=K, scheme=scheme, channel=channel, j_critical=fn(K), tolerance=tol)
