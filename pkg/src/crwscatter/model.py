"""Model parameters and the truncated Fock x atom basis.

A basis state carries photon occupations ``n_1 .. n_N`` for the cavities of the
supercavity plus the atomic state.  Only the global excitation cutoff
``sum(n_j) + atom <= max_excitation`` is imposed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from math import comb
from typing import Iterator

import numpy as np

from .errors import ParameterError, ResourceLimitError

DEFAULT_MAX_DIM = 2_000_000


@dataclass(frozen=True)
class ModelParams:
    """Physical and truncation parameters, energies in units of ``omega_c``."""

    n_cavities: int = 7
    omega_c: float = 1.0
    omega_a: float = 1.0
    xi: float = 0.23
    eta: float = 0.23
    g: float = 0.0
    max_excitation: int = 7
    rwa_only: bool = False
    atom_site: int | None = None

    def __post_init__(self):
        n = self.n_cavities
        if not isinstance(n, (int, np.integer)) or n < 1 or n % 2 == 0:
            raise ParameterError(f"n_cavities must be a positive odd integer, got {n!r}")
        if self.atom_site is None:
            object.__setattr__(self, "atom_site", (n + 1) // 2)
        elif self.atom_site != (n + 1) // 2:
            raise ParameterError(
                f"atom_site must be the center cavity {(n + 1) // 2}, got {self.atom_site}"
            )
        if self.xi < 0 or self.eta < 0 or self.g < 0:
            raise ParameterError("xi, eta and g must be non-negative")
        if self.eta > self.xi:
            raise ParameterError(f"eta ({self.eta}) must not exceed xi ({self.xi})")
        if not isinstance(self.max_excitation, (int, np.integer)) or self.max_excitation < 1:
            raise ParameterError(f"max_excitation must be >= 1, got {self.max_excitation!r}")
        if self.omega_c <= 0:
            raise ParameterError("omega_c must be positive")

    @property
    def n(self) -> int:
        return self.n_cavities

    @property
    def s(self) -> int:
        return self.atom_site

    @property
    def band(self) -> tuple[float, float]:
        """Lower and upper edge of the lead propagation band."""
        return self.omega_c - 2 * self.xi, self.omega_c + 2 * self.xi

    def replace(self, **changes) -> "ModelParams":
        changes.setdefault("atom_site", None)
        return dataclasses.replace(self, **changes)

    def hamiltonian_key(self) -> tuple:
        """Parameters that enter the scatterer Hamiltonian (``eta`` does not)."""
        return (self.n_cavities, self.max_excitation, float(self.omega_c), float(self.omega_a),
                float(self.xi), float(self.g), bool(self.rwa_only))

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class BasisState:
    photon_occupations: tuple[int, ...]
    atom_excited: bool

    @property
    def n_ext(self) -> int:
        return sum(self.photon_occupations) + int(self.atom_excited)


def parity_of(state: BasisState) -> int:
    """Eigenvalue of ``(-1)**N_ext`` on a basis state."""
    return -1 if state.n_ext % 2 else 1


def basis_dimension(n_cavities: int, max_excitation: int) -> int:
    """Closed-form count of states with ``N_ext <= max_excitation``."""
    ground = sum(comb(p + n_cavities - 1, n_cavities - 1) for p in range(max_excitation + 1))
    excited = sum(comb(p + n_cavities - 1, n_cavities - 1) for p in range(max_excitation))
    return ground + excited


def basis_tag(n_cavities: int, max_excitation: int) -> str:
    return f"N{n_cavities}-cut{max_excitation}"


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    # lexicographically ascending
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class Basis:
    """Ordered basis, immutable after construction.

    Ordering is lexicographic in ``(N_ext, atom_excited, occupations)``.
    """

    def __init__(self, n_cavities: int, max_excitation: int, occupations: np.ndarray,
                 atom: np.ndarray):
        self.n_cavities = n_cavities
        self.max_excitation = max_excitation
        self.tag = basis_tag(n_cavities, max_excitation)
        self.occupations = occupations
        self.atom = atom
        self.occupations.setflags(write=False)
        self.atom.setflags(write=False)
        self.n_ext = occupations.sum(axis=1) + atom.astype(np.int64)
        self.parity = np.where(self.n_ext % 2 == 0, 1, -1).astype(np.int8)
        self.n_ext.setflags(write=False)
        self.parity.setflags(write=False)

        keys = self.encode(occupations, atom)
        self._order = np.argsort(keys, kind="stable")
        self._sorted_keys = keys[self._order]

    def __len__(self) -> int:
        return self.occupations.shape[0]

    @property
    def dim(self) -> int:
        return len(self)

    def encode(self, occupations: np.ndarray, atom: np.ndarray) -> np.ndarray:
        radix = self.max_excitation + 2
        weights = radix ** np.arange(self.n_cavities, dtype=np.int64)
        return 2 * (np.asarray(occupations, dtype=np.int64) @ weights) + np.asarray(atom, dtype=np.int64)

    def lookup(self, occupations: np.ndarray, atom: np.ndarray) -> np.ndarray:
        """Vectorized state -> index map; returns -1 for states outside the basis."""
        occupations = np.atleast_2d(np.asarray(occupations, dtype=np.int64))
        atom = np.atleast_1d(np.asarray(atom, dtype=np.int64))
        inside = (occupations.min(axis=1) >= 0) & (
            occupations.sum(axis=1) + atom <= self.max_excitation)
        keys = self.encode(np.clip(occupations, 0, None), atom)
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.clip(pos, 0, len(self._sorted_keys) - 1)
        found = inside & (self._sorted_keys[pos] == keys)
        return np.where(found, self._order[pos], -1)

    def index(self, state: BasisState) -> int:
        i = int(self.lookup(np.array(state.photon_occupations), int(state.atom_excited))[0])
        if i < 0:
            raise KeyError(state)
        return i

    def state(self, i: int) -> BasisState:
        return BasisState(tuple(int(x) for x in self.occupations[i]), bool(self.atom[i]))

    @cached_property
    def states(self) -> list[BasisState]:
        return [self.state(i) for i in range(len(self))]

    def parity_of(self, i: int) -> int:
        return int(self.parity[i])

    @cached_property
    def sector_indices(self) -> dict[int, np.ndarray]:
        return {1: np.flatnonzero(self.parity == 1), -1: np.flatnonzero(self.parity == -1)}

    def sector(self, parity: int) -> np.ndarray:
        return self.sector_indices[parity]


def enumerate_basis(params: ModelParams, max_dim: int = DEFAULT_MAX_DIM) -> Basis:
    n, cutoff = params.n_cavities, params.max_excitation
    dim = basis_dimension(n, cutoff)
    if dim > max_dim:
        raise ResourceLimitError(
            f"basis dimension {dim} for N={n}, max_excitation={cutoff} exceeds limit {max_dim}",
            dim)
    occ_rows = []
    atom_rows = []
    for n_ext in range(cutoff + 1):
        for atom in (0, 1):
            photons = n_ext - atom
            if photons < 0:
                continue
            block = list(_compositions(photons, n))
            occ_rows.extend(block)
            atom_rows.extend([atom] * len(block))
    occupations = np.array(occ_rows, dtype=np.int64).reshape(-1, n)
    atom = np.array(atom_rows, dtype=bool)
    assert occupations.shape[0] == dim
    return Basis(n, cutoff, occupations, atom)
