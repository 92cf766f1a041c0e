"""
Fixed-magnetization sector and the sparse XY Hamiltonian over it.

.. math::

   H = -J \\sum_{\\langle i,j \\rangle} (S^+_i S^-_j + S^-_i S^+_j) + \\sum_i h_i S^z_i

Basis states are occupation words: bit ``i`` set means site ``i`` is up (``S^z_i = +1/2``).
Within a sector the words are stored in increasing integer order,
which is the lexicographic order of their bitstrings written with site 0 rightmost.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
import scipy.sparse as sparse
from numba import njit

from .lattice import DisorderRealization, LatticeSpec

MAX_DIM = 50_000_000
"""Largest sector enumerated (``C(28, 14) = 40 116 600`` fits; ``n = 24`` half filling is 2.7M)."""

MAX_N = 62
"""Words are signed 64-bit integers."""


class SectorTooLargeError(ValueError):
    """Requested sector exceeds :data:`MAX_DIM`."""

    def __init__(self, n: int, n_up: int, dim: int):
        self.dim = dim
        super().__init__(
            f"sector (n={n}, n_up={n_up}) has dim {dim}, above the cap MAX_DIM={MAX_DIM}"
        )


class DimensionMismatchError(ValueError):
    """Lattice, disorder and basis disagree on the number of sites."""


class Basis(NamedTuple):
    n: int
    """Number of spins."""
    n_up: int
    """Number of up spins."""
    states: npt.NDArray[np.int64]
    """Occupation words, strictly increasing."""

    @property
    def dim(self) -> int:
        return len(self.states)

    def bitstring(self, index: int) -> str:
        """Word at `index` as an ``n``-character string, site 0 rightmost."""
        return format(int(self.states[index]), f"0{self.n}b")


class SparseHamiltonian(NamedTuple):
    matrix: sparse.csr_matrix
    """Real symmetric CSR matrix over the basis, canonical (sorted, duplicate-free)."""
    lattice: str
    """Lattice identifier."""
    seed: int
    """Disorder seed."""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def indptr(self) -> npt.NDArray[np.int64]:
        return self.matrix.indptr

    @property
    def indices(self) -> npt.NDArray[np.int64]:
        return self.matrix.indices

    @property
    def data(self) -> npt.NDArray[np.float64]:
        return self.matrix.data

    def __matmul__(self, v):
        return self.matrix @ v


@njit
def _gosper(first, dim):  # pragma: no cover - compiled
    out = np.empty(dim, dtype=np.int64)
    v = first
    for i in range(dim):
        out[i] = v
        if v == 0:
            break
        c = v & -v
        r = v + c
        v = (((r ^ v) >> 2) // c) | r
    return out


def enumerate_basis(n: int, n_up: int | None = None) -> Basis:
    """All ``n``-bit words with ``n_up`` set bits, increasing.

    Parameters
    ----------
    n
        Number of spins (at most :data:`MAX_N`).
    n_up
        Number of up spins. Defaults to half filling ``n // 2``.

    Examples
    --------
    >>> enumerate_basis(4, 2).dim
    6
    """
    if n_up is None:
        n_up = n // 2
    if not (0 <= n_up <= n):
        raise ValueError(f"need 0 <= n_up <= n, got n={n}, n_up={n_up}")
    if n > MAX_N:
        raise ValueError(f"n={n} exceeds the word size limit MAX_N={MAX_N}")

    dim = math.comb(n, n_up)
    if dim > MAX_DIM:
        raise SectorTooLargeError(n, n_up, dim)

    states = _gosper(np.int64((1 << n_up) - 1), dim)

    return Basis(n=n, n_up=n_up, states=states)


def _popcount(words: npt.NDArray[np.int64], n: int) -> npt.NDArray[np.int64]:
    c = np.zeros(words.shape, dtype=np.int64)
    for i in range(n):
        c += (words >> i) & 1
    return c


def rank(basis: Basis, word) -> int | npt.NDArray[np.int64]:
    """Index of `word` (or an array of words) in `basis`.

    Combinatorial number system: the set bits ``p_1 < p_2 < ...`` of a word
    map to ``sum_j C(p_j, j)``, which equals its position in increasing order.

    `word` may be an int, an array of ints, or a bitstring such as ``'0011'``.
    """
    scalar = np.ndim(word) == 0
    if isinstance(word, str):
        word = int(word, 2)
    words = np.atleast_1d(np.asarray(word, dtype=np.int64))

    n, k = basis.n, basis.n_up
    counts = _popcount(words, 63)
    bad = counts != k
    if bad.any():
        w0 = int(words[bad][0])
        raise ValueError(
            f"word {w0:b} has {int(counts[bad][0])} set bits, basis sector has n_up={k}"
        )
    if (words >> n).any():
        raise ValueError(f"word has bits set above site {n - 1}")

    table = np.zeros((n + 1, k + 2), dtype=np.int64)
    for p in range(n + 1):
        for j in range(k + 2):
            table[p, j] = math.comb(p, j)

    idx = np.zeros(words.shape, dtype=np.int64)
    seen = np.zeros(words.shape, dtype=np.int64)
    for p in range(n):
        b = (words >> p) & 1
        seen += b
        idx += b * table[p, seen]

    return int(idx[0]) if scalar else idx


def build_hamiltonian(
    lattice: LatticeSpec,
    disorder: DisorderRealization,
    basis: Basis,
    *,
    J: float = 1.0,
) -> SparseHamiltonian:
    """Sector Hamiltonian in CSR layout.

    Diagonal: ``sum_i h_i s_i`` with ``s_i = +-1/2``.
    Off-diagonal: ``-J`` between each word and the word obtained by swapping
    the two sites of a bond whose occupations differ.

    Parameters
    ----------
    J
        Hopping strength. ``J = 0`` gives the frozen (diagonal) limit.
    """
    if not (lattice.n == basis.n == len(disorder.h)):
        raise DimensionMismatchError(
            f"lattice has {lattice.n} sites, basis {basis.n}, disorder {len(disorder.h)}"
        )

    states = basis.states
    dim = basis.dim
    h = np.asarray(disorder.h, dtype=np.float64)

    diag = np.zeros(dim)
    for i in range(basis.n):
        diag += h[i] * (((states >> i) & 1) - 0.5)

    rows = [np.arange(dim, dtype=np.int64)]
    cols = [np.arange(dim, dtype=np.int64)]
    vals = [diag]
    if J != 0:
        for i, j in lattice.bonds:
            hop = ((states >> i) ^ (states >> j)) & 1
            a = np.flatnonzero(hop)
            partners = states[a] ^ ((1 << i) | (1 << j))
            b = np.searchsorted(states, partners)
            rows.append(a)
            cols.append(b)
            vals.append(np.full(len(a), -float(J)))

    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    m.sum_duplicates()
    m.sort_indices()

    return SparseHamiltonian(matrix=m, lattice=lattice.name, seed=int(disorder.seed))


# Binary cache layout (all little-endian):
#   magic b"XYGH", uint32 version, int64 dim, int64 nnz, uint64 seed, uint32 len(name), name utf-8,
#   int64[dim + 1] indptr, int64[nnz] indices, float64[nnz] data
_MAGIC = b"XYGH"
_VERSION = 2


def save_hamiltonian(H: SparseHamiltonian, path: Path | str) -> Path:
    """Dump `H` in the documented binary layout."""
    p = Path(path)
    name = H.lattice.encode()
    m = H.matrix
    with p.open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IqqQ", _VERSION, H.dim, m.nnz, H.seed))
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(m.indptr.astype("<i8").tobytes())
        f.write(m.indices.astype("<i8").tobytes())
        f.write(m.data.astype("<f8").tobytes())

    return p


def load_hamiltonian(path: Path | str) -> SparseHamiltonian:
    """Read a file written by :func:`save_hamiltonian`."""
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path} is not a Hamiltonian cache file")
    version, dim, nnz, seed = struct.unpack_from("<IqqQ", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported cache version {version}")
    off = 4 + struct.calcsize("<IqqQ")
    (lname,) = struct.unpack_from("<I", buf, off)
    off += 4
    name = buf[off : off + lname].decode()
    off += lname

    indptr = np.frombuffer(buf, dtype="<i8", count=dim + 1, offset=off)
    off += 8 * (dim + 1)
    indices = np.frombuffer(buf, dtype="<i8", count=nnz, offset=off)
    off += 8 * nnz
    data = np.frombuffer(buf, dtype="<f8", count=nnz, offset=off)

    m = sparse.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(dim, dim))

    return SparseHamiltonian(matrix=m, lattice=name, seed=seed)
