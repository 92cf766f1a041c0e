"""
Lattice geometry and disorder.

For example:

- build a rectangular patch of qubits (optionally with sites masked out)
- draw a box-distributed field realization for it
- compute the graph-Laplacian eigenmodes used by the diffusion analysis

Units: J = 1 throughout, so fields and the disorder width ``w = W/J`` are dimensionless.
Boundaries are open.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import numpy.typing as npt

from .util import rng


class DisconnectedLatticeError(ValueError):
    """The (masked) lattice graph is not connected."""


class EmptyLatticeError(ValueError):
    """The lattice has fewer than two sites."""


class LatticeSpec(NamedTuple):
    sites: tuple[tuple[int, int], ...]
    """Integer ``(row, col)`` coordinates, row-major order."""
    bonds: tuple[tuple[int, int], ...]
    """Nearest-neighbor site-index pairs ``(i, j)`` with ``i < j``, sorted."""

    @property
    def n(self) -> int:
        """Number of sites."""
        return len(self.sites)

    @property
    def name(self) -> str:
        """Short identifier, e.g. ``'4x4'`` or ``'5x5-3'`` (three sites masked)."""
        rows = max(r for r, _ in self.sites) - min(r for r, _ in self.sites) + 1
        cols = max(c for _, c in self.sites) - min(c for _, c in self.sites) + 1
        missing = rows * cols - self.n
        return f"{rows}x{cols}" + (f"-{missing}" if missing else "")

    def adjacency(self):
        """Symmetric sparse adjacency matrix (CSR)."""
        import scipy.sparse as sparse

        b = np.asarray(self.bonds, dtype=np.int64).reshape(-1, 2)
        data = np.ones(2 * len(b))
        rows = np.concatenate([b[:, 0], b[:, 1]])
        cols = np.concatenate([b[:, 1], b[:, 0]])

        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    def laplacian(self) -> npt.NDArray[np.float64]:
        """Dense combinatorial graph Laplacian ``L = D - A``."""
        from scipy.sparse.csgraph import laplacian

        return np.asarray(laplacian(self.adjacency()).toarray(), dtype=np.float64)


class DisorderRealization(NamedTuple):
    h: npt.NDArray[np.float64]
    """Per-site field, units of J."""
    w: float
    """Box width ``W/J``."""
    seed: int
    """64-bit key the fields were drawn with."""


class EigenmodeSet(NamedTuple):
    eigenvalues: npt.NDArray[np.float64]
    """Ascending, nonnegative; the first is exactly 0."""
    modes: npt.NDArray[np.float64]
    """``modes[k]`` is the orthonormal eigenvector of ``eigenvalues[k]``."""


def _check_connected(sites, bonds) -> None:
    import scipy.sparse as sparse
    from scipy.sparse.csgraph import connected_components

    n = len(sites)
    b = np.asarray(bonds, dtype=np.int64).reshape(-1, 2)
    a = sparse.coo_matrix((np.ones(len(b)), (b[:, 0], b[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(a, directed=False)
    if ncomp > 1:
        sizes = np.bincount(labels)
        raise DisconnectedLatticeError(
            f"lattice graph has {ncomp} connected components (sizes {sorted(sizes.tolist())}); "
            "the masked layout must stay connected"
        )


def from_sites(sites: Iterable[tuple[int, int]]) -> LatticeSpec:
    """Build a lattice from arbitrary integer coordinates.

    Bonds connect every pair of sites at Manhattan distance 1.
    Sites are sorted row-major.
    """
    sites_ = tuple(sorted({(int(r), int(c)) for r, c in sites}))
    if len(sites_) < 2:
        raise EmptyLatticeError(f"need at least 2 sites, got {len(sites_)}")

    index = {s: i for i, s in enumerate(sites_)}
    bonds = []
    for i, (r, c) in enumerate(sites_):
        for nb in [(r, c + 1), (r + 1, c)]:
            j = index.get(nb)
            if j is not None:
                bonds.append((min(i, j), max(i, j)))
    bonds_ = tuple(sorted(bonds))

    _check_connected(sites_, bonds_)

    return LatticeSpec(sites=sites_, bonds=bonds_)


def build_lattice(
    rows: int, cols: int, *, mask: Iterable[tuple[int, int]] | None = None
) -> LatticeSpec:
    """Rectangular ``rows`` x ``cols`` patch with open boundaries.

    Parameters
    ----------
    rows, cols
        Patch dimensions.
    mask
        ``(row, col)`` sites to exclude.

    Examples
    --------
    >>> lat = build_lattice(5, 5)
    >>> lat.n, len(lat.bonds)
    (25, 40)
    """
    if rows < 1 or cols < 1:
        raise EmptyLatticeError(f"rows and cols must be positive, got {rows}x{cols}")
    if rows * cols < 2:
        raise EmptyLatticeError(f"need at least 2 sites, got {rows}x{cols}")

    masked = set()
    for r, c in mask or ():
        if not (0 <= r < rows and 0 <= c < cols):
            raise ValueError(f"masked site {(r, c)} is outside the {rows}x{cols} patch")
        masked.add((int(r), int(c)))

    sites = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in masked]

    return from_sites(sites)


def sample_disorder(lattice: LatticeSpec, w: float, seed: int) -> DisorderRealization:
    """Draw i.i.d. fields uniform on ``[-w/2, w/2]``.

    A pure function of ``(lattice, w, seed)``.
    """
    if not w >= 0:
        raise ValueError(f"disorder width `w` must be nonnegative, got {w}")

    h = rng(seed).uniform(-w / 2, w / 2, size=lattice.n)

    return DisorderRealization(h=h, w=float(w), seed=int(seed))


def laplacian_eigenmodes(lattice: LatticeSpec) -> EigenmodeSet:
    """Full spectrum of the graph Laplacian, ascending.

    The zero mode is set exactly to the constant vector.
    Every other mode is signed so that its largest-magnitude entry is positive.
    """
    L = lattice.laplacian()
    evals, evecs = np.linalg.eigh(L)

    evals = np.clip(evals, 0, None)
    evals[0] = 0.0
    modes = evecs.T.copy()
    modes[0] = 1 / np.sqrt(lattice.n)
    for k in range(1, lattice.n):
        v = modes[k]
        if v[np.argmax(np.abs(v))] < 0:
            modes[k] = -v

    return EigenmodeSet(eigenvalues=evals, modes=modes)


def neel_word(lattice: LatticeSpec) -> int:
    """Checkerboard occupation word: site ``i`` up iff ``row + col`` is even.

    On a bipartite layout every bond is anti-aligned.
    """
    word = 0
    for i, (r, c) in enumerate(lattice.sites):
        if (r + c) % 2 == 0:
            word |= 1 << i
    return word


def dump_record(lattice: LatticeSpec, disorder: DisorderRealization, path: Path | str) -> Path:
    """Write a YAML record (sites, bonds, fields, width, seed) that replays the realization."""
    import yaml

    p = Path(path)
    doc = {
        "lattice": lattice.name,
        "sites": [list(s) for s in lattice.sites],
        "bonds": [list(b) for b in lattice.bonds],
        "w": float(disorder.w),
        "seed": int(disorder.seed),
        "h": [float(x) for x in disorder.h],
    }
    p.write_text(yaml.safe_dump(doc, sort_keys=False))

    return p


def load_record(path: Path | str) -> tuple[LatticeSpec, DisorderRealization]:
    """Read a record written by :func:`dump_record`.

    Fields are re-drawn from the seed and checked against the stored values.
    """
    import yaml

    doc = yaml.safe_load(Path(path).read_text())
    lattice = from_sites(tuple(s) for s in doc["sites"])
    if [list(b) for b in lattice.bonds] != doc["bonds"]:
        raise ValueError("stored bonds do not match the nearest-neighbor bonds of the stored sites")

    disorder = sample_disorder(lattice, doc["w"], doc["seed"])
    if not np.allclose(disorder.h, doc["h"], rtol=0, atol=1e-12):
        raise ValueError("stored fields do not match a redraw from the stored seed")

    return lattice, disorder
