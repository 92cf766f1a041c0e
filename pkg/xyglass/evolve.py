"""
Time evolution and measurements.

For example:

- propagate a bitstring state with ``exp(-iHt)`` (short-iterative Lanczos)
- measure return probability, local magnetizations, shot-sampled bitstrings
- build spin autocorrelation traces and their noise spectrum

Observables use the Pauli convention ``sigma = 2 S`` so that ``<sigma^z> = +-1`` on bitstrings.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Sequence, TypeVar

import numpy as np
import numpy.typing as npt

from .analysis import TimeSeries
from .hilbert import Basis, SparseHamiltonian, rank
from .lattice import DisorderRealization
from .util import rng

T = TypeVar("T")


class ConvergenceError(RuntimeError):
    """Krylov propagation could not reach the requested accuracy."""

    def __init__(self, msg: str, residual: float):
        self.residual = residual
        super().__init__(f"{msg} (achieved residual {residual:.3e})")


class BasisMismatchError(ValueError):
    """States live in different sectors."""


class NonProductStateError(ValueError):
    """An operation that needs a bitstring state got a superposition."""


class SpanTooShortError(ValueError):
    """Time series too short for a spectrum over two decades."""


class StateVector(NamedTuple):
    amplitudes: npt.NDArray[np.complex128]
    basis: Basis

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @classmethod
    def from_word(cls, basis: Basis, word: int | str) -> StateVector:
        """Bitstring (product) state."""
        psi = np.zeros(basis.dim, dtype=np.complex128)
        psi[rank(basis, word)] = 1
        return cls(psi, basis)


@dataclass(frozen=True)
class EvolutionConfig:
    accuracy: float = 1e-9
    """Target error per unit time."""
    max_krylov: int = 40
    """Largest Lanczos subspace per step."""
    max_step: float | None = None
    """Cap on a single step (units 1/J); ``None`` lets steps grow freely."""
    min_step: float = 1e-10
    """Give up (:class:`ConvergenceError`) below this step."""

    def __post_init__(self):
        if not self.accuracy > 0:
            raise ValueError(f"`accuracy` must be positive, got {self.accuracy}")
        if self.max_krylov < 2:
            raise ValueError(f"`max_krylov` must be at least 2, got {self.max_krylov}")


def _lanczos_step(A, v: np.ndarray, dt: float, m_max: int, tol: float):
    """Try ``exp(-i A dt) v`` in a Krylov space of at most `m_max` vectors.

    Returns ``(w, err, m)``; ``w`` is None when `tol` was not reached.
    """
    beta0 = np.linalg.norm(v)
    V = np.empty((m_max + 1, len(v)), dtype=np.complex128)
    alpha = np.zeros(m_max)
    beta = np.zeros(m_max)
    V[0] = v / beta0

    err = np.inf
    for j in range(m_max):
        w = A @ V[j]
        alpha[j] = np.vdot(V[j], w).real
        w = w - alpha[j] * V[j]
        if j > 0:
            w -= beta[j - 1] * V[j - 1]
        # full reorthogonalization
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        m = j + 1

        Tm = np.diag(alpha[:m]) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
        evals, evecs = np.linalg.eigh(Tm)
        c = evecs @ (np.exp(-1j * evals * dt) * evecs[0])

        invariant = b <= 1e-13 * max(1.0, abs(alpha[j]))
        err = 0.0 if invariant else beta0 * b * abs(c[-1])
        if err <= tol:
            return beta0 * (V[:m].T @ c), err, m

        V[j + 1] = w / b

    return None, err, m_max


def evolve(
    H: SparseHamiltonian,
    psi0: StateVector,
    t: float,
    cfg: EvolutionConfig | None = None,
) -> StateVector:
    """``exp(-iHt) psi0`` by adaptive short-iterative Lanczos.

    Step sizes grow while the Krylov space stays small and halve when a step
    misses ``cfg.accuracy * dt``.
    Negative `t` evolves backwards.
    Repeated calls with the same inputs are bit-identical.
    """
    if cfg is None:
        cfg = EvolutionConfig()
    if H.dim != psi0.basis.dim:
        raise BasisMismatchError(f"Hamiltonian dim {H.dim} != state dim {psi0.basis.dim}")

    v = np.asarray(psi0.amplitudes, dtype=np.complex128)
    if t == 0:
        return StateVector(v.copy(), psi0.basis)

    sign = 1.0 if t > 0 else -1.0
    remaining = abs(float(t))
    dt = remaining if cfg.max_step is None else min(remaining, cfg.max_step)
    A = H.matrix

    while remaining > 0:
        dt = min(dt, remaining)
        w, err, m = _lanczos_step(A, v, sign * dt, cfg.max_krylov, cfg.accuracy * dt)
        if w is None:
            dt /= 2
            if dt < cfg.min_step:
                raise ConvergenceError(
                    f"step fell below min_step={cfg.min_step} with {remaining:.6g} left", err
                )
            continue
        v = w
        remaining -= dt
        if remaining <= 1e-14 * abs(t):
            break
        if m <= cfg.max_krylov // 2:
            dt *= 1.5
            if cfg.max_step is not None:
                dt = min(dt, cfg.max_step)

    return StateVector(v, psi0.basis)


def evolve_series(
    H: SparseHamiltonian,
    psi0: StateVector,
    times: Sequence[float],
    cfg: EvolutionConfig | None = None,
    *,
    observe: Callable[[StateVector], T] | None = None,
) -> list:
    """Evolve through ascending `times` (one trajectory), returning ``observe(psi(t))`` for each.

    Without `observe`, the states themselves are returned.
    """
    ts = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("`times` must be ascending")
    if observe is None:
        observe = lambda s: s  # noqa: E731

    out = []
    psi = psi0
    t_prev = 0.0
    for t in ts:
        psi = evolve(H, psi, t - t_prev, cfg)
        t_prev = t
        out.append(observe(psi))

    return out


def _check_same_basis(a: StateVector, b: StateVector) -> None:
    ba, bb = a.basis, b.basis
    if (ba.n, ba.n_up, ba.dim) != (bb.n, bb.n_up, bb.dim):
        raise BasisMismatchError(
            f"states are in different sectors: (n={ba.n}, n_up={ba.n_up}) vs (n={bb.n}, n_up={bb.n_up})"
        )


def return_probability(psi0: StateVector, psit: StateVector) -> float:
    """``|<psi0|psit>|^2``."""
    _check_same_basis(psi0, psit)
    ov = np.vdot(psi0.amplitudes, psit.amplitudes)
    return float(min(1.0, abs(ov) ** 2))


def energy(H: SparseHamiltonian, psi: StateVector) -> float:
    """``<psi|H|psi>``."""
    return float(np.vdot(psi.amplitudes, H.matrix @ psi.amplitudes).real)


def sample_bitstrings(psit: StateVector, shots: int, seed: int) -> npt.NDArray[np.int64]:
    """Draw `shots` words i.i.d. from ``|amplitude|^2``."""
    if shots < 1:
        raise ValueError(f"`shots` must be at least 1, got {shots}")
    p = np.abs(psit.amplitudes) ** 2
    p = p / p.sum()
    idx = rng(seed).choice(len(p), size=shots, p=p)
    return psit.basis.states[idx]


def shot_return_probability(samples: npt.NDArray[np.int64], word: int) -> float:
    """Fraction of `samples` equal to `word` (the shot estimator of R)."""
    return float(np.count_nonzero(samples == word) / len(samples))


def local_magnetization(psit: StateVector) -> npt.NDArray[np.float64]:
    """Per-site ``<sigma_i^z>``; the entries sum to ``2 n_up - n``."""
    p = np.abs(psit.amplitudes) ** 2
    p = p / p.sum()
    states = psit.basis.states
    m = np.empty(psit.basis.n)
    for i in range(psit.basis.n):
        m[i] = 2 * p[((states >> i) & 1) == 1].sum() - 1
    return m


def squared_magnetization(m: npt.ArrayLike) -> float:
    """``(1/n) sum_i <sigma_i^z>^2``."""
    m = np.asarray(m, dtype=np.float64)
    return float(np.mean(m**2))


def _product_word(psi: StateVector) -> int:
    a = np.abs(psi.amplitudes)
    nz = np.flatnonzero(a > 1e-12)
    if len(nz) != 1 or not math.isclose(a[nz[0]], 1, abs_tol=1e-10):
        raise NonProductStateError(
            f"initial state must be a single bitstring, has {len(nz)} nonzero amplitudes"
        )
    return int(psi.basis.states[nz[0]])


def word_spins(word: int, n: int) -> npt.NDArray[np.float64]:
    """Pauli ``sigma^z`` eigenvalues (``+-1``) of a bitstring."""
    return np.array([1.0 if (word >> i) & 1 else -1.0 for i in range(n)])


def autocorrelation_trace(
    H: SparseHamiltonian,
    psi0: StateVector,
    times: Sequence[float],
    cfg: EvolutionConfig | None = None,
) -> TimeSeries:
    """Per-site ``<sigma_i^z(0) sigma_i^z(t)> = s_i(0) <sigma_i^z(t)>`` for a bitstring `psi0`.

    Values have shape ``(len(times), n)``; the site average is ``series.values.mean(axis=1)``.
    """
    word = _product_word(psi0)
    s0 = word_spins(word, psi0.basis.n)
    mags = evolve_series(H, psi0, times, cfg, observe=local_magnetization)
    values = np.asarray(mags) * s0

    return TimeSeries(
        times=np.asarray(times, dtype=np.float64),
        values=values,
        meta={"n": psi0.basis.n, "word": word, "seed": H.seed, "lattice": H.lattice},
    )


def midband_words(
    disorder: DisorderRealization,
    n_up: int,
    count: int,
    seed: int,
    *,
    threshold: float = 0.05,
    max_tries: int = 100_000,
) -> list[int]:
    """Distinct random words near the middle of the spectrum.

    A word is accepted iff ``|sum_i h_i s_i| <= threshold * w * sqrt(n) / sqrt(12)``.
    """
    h = np.asarray(disorder.h)
    n = len(h)
    cut = threshold * disorder.w * math.sqrt(n) / math.sqrt(12)
    g = rng(seed)

    found: list[int] = []
    seen: set[int] = set()
    for _ in range(max_tries):
        up = g.permutation(n)[:n_up]
        word = int(sum(1 << int(i) for i in up))
        if word in seen:
            continue
        seen.add(word)
        s = np.where([(word >> i) & 1 for i in range(n)], 0.5, -0.5)
        if abs(float(h @ s)) <= cut:
            found.append(word)
            if len(found) == count:
                break
    else:
        warnings.warn(
            f"found only {len(found)} of {count} midband words in {max_tries} tries "
            f"(threshold={threshold})",
            stacklevel=2,
        )

    return found


class Spectrum(NamedTuple):
    freq: npt.NDArray[np.float64]
    """Log-grid bin centers (cycles per unit time)."""
    power: npt.NDArray[np.float64]
    """Mean spectrum in each bin."""
    freq_raw: npt.NDArray[np.float64]
    """Full positive-frequency grid."""
    power_raw: npt.NDArray[np.float64]


def noise_spectrum(
    traces: Iterable[TimeSeries],
    *,
    window: str = "hann",
    kind: str = "correlation",
    bins_per_decade: int = 10,
) -> Spectrum:
    """Spectrum of the site- and realization-averaged trace.

    Parameters
    ----------
    traces
        Series on one common uniform grid; 2-D values are averaged over their second axis.
    window
        Any :func:`scipy.signal.get_window` name.
    kind
        - ``'correlation'``: magnitude of the windowed Fourier transform of the averaged
          correlation trace (the noise spectrum of the underlying signal).
        - ``'periodogram'``: :func:`scipy.signal.periodogram` of the averaged trace.
    bins_per_decade
        Log-grid resolution.
    """
    from scipy import signal

    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    t = traces[0].times
    for tr in traces[1:]:
        if len(tr.times) != len(t) or not np.allclose(tr.times, t):
            raise ValueError("all traces must share one time grid")

    dts = np.diff(t)
    dt = float(dts.mean())
    if not np.allclose(dts, dt, rtol=1e-8, atol=0):
        raise ValueError("spectrum needs a uniform time grid")
    span = t[-1] - t[0]
    if span < 100 * dt:
        raise SpanTooShortError(
            f"span {span:.4g} is less than two decades above the spacing {dt:.4g}"
        )

    y = np.mean(
        [tr.values if np.ndim(tr.values) == 1 else tr.values.mean(axis=1) for tr in traces],
        axis=0,
    )

    if kind == "correlation":
        win = signal.get_window(window, len(y))
        f = np.fft.rfftfreq(len(y), d=dt)
        S = np.abs(np.fft.rfft((y - y.mean()) * win)) * dt
    elif kind == "periodogram":
        f, S = signal.periodogram(y, fs=1 / dt, window=window, detrend="constant")
    else:
        raise ValueError(f"invalid `kind` {kind!r}")

    f, S = f[1:], S[1:]

    nbins = max(1, int(math.ceil(bins_per_decade * math.log10(f[-1] / f[0]))))
    edges = np.logspace(math.log10(f[0]), math.log10(f[-1]), nbins + 1)
    edges[0], edges[-1] = f[0], f[-1]
    which = np.clip(np.digitize(f, edges) - 1, 0, nbins - 1)
    counts = np.bincount(which, minlength=nbins)
    keep = counts > 0
    fc = np.exp(np.bincount(which, weights=np.log(f), minlength=nbins)[keep] / counts[keep])
    Sc = np.bincount(which, weights=S, minlength=nbins)[keep] / counts[keep]

    return Spectrum(freq=fc, power=Sc, freq_raw=f, power_raw=S)


def spectral_slope(spec: Spectrum, band: tuple[float, float]) -> tuple[float, float]:
    """Log-log slope of the binned spectrum over ``band = (f_lo, f_hi)``, with its standard error."""
    lo, hi = band
    sel = (spec.freq >= lo) & (spec.freq <= hi) & (spec.power > 0)
    if sel.sum() < 3:
        raise ValueError(f"fewer than 3 spectral bins in band {band}")
    (slope, _), cov = np.polyfit(np.log10(spec.freq[sel]), np.log10(spec.power[sel]), 1, cov=True)
    return float(slope), float(np.sqrt(cov[0, 0]))
