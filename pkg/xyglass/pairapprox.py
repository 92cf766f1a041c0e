"""
Independent-pair approximation to the return probability.

Each bond ``(r, r')`` is treated as an isolated two-level flip-flop pair with detuning
``eps = (h_r - h_r') / 2`` and splitting ``E = sqrt(eps^2 + J^2)``, so

.. math::

   R(t) \\approx \\prod_\\mu \\left[1 - \\frac{J^2}{E_\\mu^2} \\sin^2(E_\\mu t)\\right]

Open boundaries are used throughout, so the bond count ``B`` is the lattice's own
(``2n`` is the bulk square-lattice value).
"""

from __future__ import annotations

import math
import warnings
from typing import NamedTuple, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd

from .lattice import DisorderRealization, LatticeSpec, neel_word, sample_disorder
from .util import derive_seed


class PairSpectrum(NamedTuple):
    eps: npt.NDArray[np.float64]
    """Per-bond detuning ``(h_r - h_r') / 2``."""
    energy: npt.NDArray[np.float64]
    """Per-bond ``sqrt(eps^2 + J^2)``."""
    bonds: tuple[tuple[int, int], ...]


def active_bonds(lattice: LatticeSpec, word: int | None = None) -> tuple[tuple[int, int], ...]:
    """Bonds that can flip from `word`: those whose two sites are anti-aligned.

    Without a word all bonds count.
    """
    if word is None:
        return lattice.bonds
    return tuple((i, j) for i, j in lattice.bonds if ((word >> i) ^ (word >> j)) & 1)


def pair_spectrum(
    lattice: LatticeSpec, disorder: DisorderRealization, *, word: int | None = None, J: float = 1.0
) -> PairSpectrum:
    if J == 0:
        raise ValueError("pair spectrum needs J != 0")
    bonds = active_bonds(lattice, word)
    h = np.asarray(disorder.h)
    b = np.asarray(bonds, dtype=np.int64).reshape(-1, 2)
    eps = (h[b[:, 0]] - h[b[:, 1]]) / 2
    return PairSpectrum(eps=eps, energy=np.sqrt(eps**2 + J**2), bonds=bonds)


def pair_return_probability(
    lattice: LatticeSpec,
    disorder: DisorderRealization,
    t,
    *,
    word: int | None = None,
    J: float = 1.0,
):
    """Product over bonds of the two-level return probabilities.

    Parameters
    ----------
    t
        Time or array of times (units ``1/J``).
    word
        Initial bitstring. Only bonds anti-aligned in it contribute.
        Without it every bond contributes (exact for a Néel word on a bipartite layout).
    """
    tt = np.asarray(t, dtype=np.float64)
    if np.any(tt < 0):
        raise ValueError("`t` must be nonnegative")
    if J == 0:
        return np.ones_like(tt) if tt.ndim else 1.0

    ps = pair_spectrum(lattice, disorder, word=word, J=J)
    amp = J**2 / ps.energy**2
    factors = 1 - amp * np.sin(np.multiply.outer(tt, ps.energy)) ** 2
    R = np.prod(factors, axis=-1)

    return R if tt.ndim else float(R)


def typical_pair_R(
    lattice: LatticeSpec,
    w: float,
    t,
    realizations: int,
    seed: int,
    *,
    word: int | None = None,
    J: float = 1.0,
):
    """``exp`` of the disorder average of ``ln R_pair``.

    Realization ``r`` draws its fields with key ``derive_seed(seed, r)``.
    """
    if realizations < 1:
        raise ValueError(f"`realizations` must be at least 1, got {realizations}")

    tt = np.asarray(t, dtype=np.float64)
    acc = np.zeros_like(tt)
    with np.errstate(divide="ignore"):
        for r in range(realizations):
            dis = sample_disorder(lattice, w, derive_seed(seed, r))
            acc = acc + np.log(pair_return_probability(lattice, dis, tt, word=word, J=J))

    out = np.exp(acc / realizations)
    return out if tt.ndim else float(out)


def asymptotic_lnR(w: float, bond_count: int) -> float:
    """Leading-order ``-ln R_typ(t -> inf)``: ``B * 4 (pi - 2) / w``.

    Valid for ``w >> 1``; warns below ``w = 5``.
    """
    if w <= 0:
        raise ValueError(f"`w` must be positive, got {w}")
    if w < 5:
        warnings.warn(
            f"leading-order asymptote is unreliable for w = {w} < 5", stacklevel=2
        )
    return bond_count * 4 * (math.pi - 2) / w


def _longtime_bond(eps, J=1.0):
    # time average of ln(1 - a sin^2) is 2 ln((1 + sqrt(1 - a)) / 2), with a = J^2 / E^2
    eps = np.asarray(eps, dtype=np.float64)
    return 2 * np.log((1 + np.abs(eps) / np.sqrt(eps**2 + J**2)) / 2)


def longtime_pair_lnR(
    lattice: LatticeSpec, disorder: DisorderRealization, *, word: int | None = None, J: float = 1.0
) -> float:
    """Time-averaged ``ln R_pair`` of one realization (oscillations averaged analytically)."""
    ps = pair_spectrum(lattice, disorder, word=word, J=J)
    return float(np.sum(_longtime_bond(ps.eps, J)))


def asymptotic_lnR_exact(w: float, bond_count: int) -> float:
    """``-ln R_typ(inf)`` from the time-averaged pair formula, averaged over the box disorder.

    The field difference ``d = h_r - h_r'`` has the triangular density ``(w - |d|) / w^2``
    on ``[-w, w]``. Tends to :func:`asymptotic_lnR` as ``w -> inf``,
    with relative corrections of order ``ln(w) / w``.
    """
    from scipy.integrate import quad

    if w <= 0:
        raise ValueError(f"`w` must be positive, got {w}")

    def integrand(d):
        return -2 * (w - d) / w**2 * _longtime_bond(d / 2)

    val, err = quad(integrand, 0, w, epsabs=1e-13, epsrel=1e-10, limit=200)
    return bond_count * float(val)


def compare_pair_exact(
    lattice: LatticeSpec,
    w: float,
    times: Sequence[float],
    realizations: int,
    seed: int,
    *,
    word: int | None = None,
    cfg=None,
) -> pd.DataFrame:
    """Typical pair-approximation and exact return probabilities on one time grid.

    The initial word defaults to :func:`~xyglass.lattice.neel_word`.
    Realizations use the same keys as :func:`typical_pair_R`.
    """
    from .evolve import StateVector, evolve_series, return_probability
    from .hilbert import build_hamiltonian, enumerate_basis

    if realizations < 1:
        raise ValueError(f"`realizations` must be at least 1, got {realizations}")
    if word is None:
        word = neel_word(lattice)

    tt = np.asarray(times, dtype=np.float64)
    basis = enumerate_basis(lattice.n, bin(word).count("1"))
    psi0 = StateVector.from_word(basis, word)

    ln_pair = np.zeros_like(tt)
    ln_exact = np.zeros_like(tt)
    with np.errstate(divide="ignore"):
        for r in range(realizations):
            dis = sample_disorder(lattice, w, derive_seed(seed, r))
            ln_pair += np.log(pair_return_probability(lattice, dis, tt, word=word))
            H = build_hamiltonian(lattice, dis, basis)
            R = evolve_series(H, psi0, tt, cfg, observe=lambda s: return_probability(psi0, s))
            ln_exact += np.log(R)
    ln_pair /= realizations
    ln_exact /= realizations

    df = pd.DataFrame(
        {
            "t": tt,
            "R_pair_typ": np.exp(ln_pair),
            "R_exact_typ": np.exp(ln_exact),
            "lnR_pair": ln_pair,
            "lnR_exact": ln_exact,
        }
    )
    df.attrs.update(
        col_desc={
            "t": "Time [1/J]",
            "R_pair_typ": "Typical return probability, independent-pair approximation",
            "R_exact_typ": "Typical return probability, exact evolution",
            "lnR_pair": "Disorder-averaged ln R, pair approximation",
            "lnR_exact": "Disorder-averaged ln R, exact evolution",
        },
        lattice=lattice.name,
        w=w,
        realizations=realizations,
        word=word,
    )

    return df
