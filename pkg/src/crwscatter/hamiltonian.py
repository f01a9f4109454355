"""Scatterer Hamiltonian assembly on the truncated basis.

The lead Hamiltonians are never built as matrices; the semi-infinite channels
enter only through the boundary equations in :mod:`crwscatter.scattering`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ParameterError
from .model import Basis, ModelParams


@dataclass(frozen=True)
class HermitianOperator:
    """Real symmetric operator stored as its upper triangle (``row <= col``).

    ``support`` lists the parent-basis indices spanned by the operator rows; it
    is ``None`` for operators on the full basis.
    """

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    basis_tag: str
    parity: np.ndarray
    support: np.ndarray | None = None

    @property
    def nnz(self) -> int:
        return len(self.values)

    def entries(self):
        for r, c, v in zip(self.rows, self.cols, self.values):
            yield int(r), int(c), float(v)

    def to_sparse(self) -> sp.csr_matrix:
        upper = sp.coo_matrix((self.values, (self.rows, self.cols)), shape=(self.dim, self.dim))
        offdiag = self.rows != self.cols
        lower = sp.coo_matrix((self.values[offdiag], (self.cols[offdiag], self.rows[offdiag])),
                              shape=(self.dim, self.dim))
        return (upper + lower).tocsr()

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def restrict(self, indices: np.ndarray, tag_suffix: str) -> "HermitianOperator":
        """Projection onto the span of the given (sorted) local indices."""
        indices = np.asarray(indices)
        local = np.full(self.dim, -1, dtype=np.int64)
        local[indices] = np.arange(len(indices))
        keep = (local[self.rows] >= 0) & (local[self.cols] >= 0)
        support = indices if self.support is None else self.support[indices]
        return HermitianOperator(len(indices), local[self.rows[keep]], local[self.cols[keep]],
                                 self.values[keep], f"{self.basis_tag}|{tag_suffix}",
                                 self.parity[indices], support)


def _shifted(basis: Basis, src: np.ndarray, site_deltas: dict[int, int], atom_to: int | None):
    occ = basis.occupations[src].copy()
    for site, delta in site_deltas.items():
        occ[:, site - 1] += delta
    atom = basis.atom[src].astype(np.int64) if atom_to is None else np.full(len(src), atom_to)
    return basis.lookup(occ, atom)


def _term_entries(params: ModelParams, basis: Basis, fault: str | None = None):
    """Yield ``(row, col, value)`` arrays for each term, one triangle per pair."""
    occ, atom = basis.occupations, basis.atom
    n, s = params.n_cavities, params.s

    diag = params.omega_c * occ.sum(axis=1) + np.where(atom, 0.5, -0.5) * params.omega_a
    idx = np.arange(len(basis))
    yield idx, idx, diag

    # -xi a_j^dag a_{j-1}; the h.c. is the mirrored entry
    if params.xi != 0:
        for j in range(2, n + 1):
            src = np.flatnonzero(occ[:, j - 2] > 0)
            tgt = _shifted(basis, src, {j - 1: -1, j: +1}, None)
            coef = -params.xi * np.sqrt(occ[src, j - 2] * (occ[src, j - 1] + 1.0))
            yield tgt, src, coef

    if params.g == 0:
        return

    # rotating-wave part: g sigma_+ a_s  (h.c. a_s^dag sigma_- mirrored)
    src = np.flatnonzero(~atom & (occ[:, s - 1] > 0))
    tgt = _shifted(basis, src, {s: -1}, 1)
    yield tgt, src, params.g * np.sqrt(occ[src, s - 1].astype(float))

    if params.rwa_only:
        return

    if fault == "crw_parity":
        # deliberately corrupted counter-rotating term used by the validation hook
        src = np.flatnonzero(~atom)
        tgt = _shifted(basis, src, {}, 1)
        keep = tgt >= 0
        yield tgt[keep], src[keep], np.full(keep.sum(), params.g)
        return

    # counter-rotating part: g sigma_+ a_s^dag (h.c. a_s sigma_- mirrored);
    # targets above the cutoff are absent from the basis and dropped
    src = np.flatnonzero(~atom)
    tgt = _shifted(basis, src, {s: +1}, 1)
    keep = tgt >= 0
    yield tgt[keep], src[keep], params.g * np.sqrt(occ[src[keep], s - 1] + 1.0)


def _check_tag(params: ModelParams, basis: Basis):
    if basis.n_cavities != params.n_cavities or basis.max_excitation != params.max_excitation:
        raise ContractError(
            f"basis {basis.tag} was not built for N={params.n_cavities}, "
            f"max_excitation={params.max_excitation}")


def build_sc_hamiltonian(params: ModelParams, basis: Basis, *,
                         fault: str | None = None) -> HermitianOperator:
    """Supercavity + atom Hamiltonian ``H_S`` on ``basis``.

    ``rwa_only`` drops the counter-rotating ``sigma_+ a_s^dag + a_s sigma_-``
    part.  ``fault`` is a test hook that injects a corrupted counter-rotating
    term; it is never used by the normal pipeline.
    """
    _check_tag(params, basis)
    rows, cols, vals = [], [], []
    for r, c, v in _term_entries(params, basis, fault):
        lo, hi = np.minimum(r, c), np.maximum(r, c)
        rows.append(lo)
        cols.append(hi)
        vals.append(np.asarray(v, dtype=float))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    nz = vals != 0
    rows, cols, vals = rows[nz], cols[nz], vals[nz]
    order = np.lexsort((cols, rows))
    return HermitianOperator(len(basis), rows[order], cols[order], vals[order], basis.tag,
                             basis.parity.copy())


def build_subspace_hamiltonian(params: ModelParams, basis: Basis,
                               min_excitation: int) -> HermitianOperator:
    """``H_S`` projected onto basis states with ``N_ext >= min_excitation``."""
    if min_excitation > params.max_excitation:
        raise ParameterError(
            f"min_excitation {min_excitation} exceeds max_excitation {params.max_excitation}")
    h = build_sc_hamiltonian(params, basis)
    if min_excitation <= 0:
        return h
    keep = np.flatnonzero(basis.n_ext >= min_excitation)
    if len(keep) == 0:
        raise ParameterError("empty subspace")
    return h.restrict(keep, f"next>={min_excitation}")


def annihilation_operator(basis: Basis, site: int) -> sp.csr_matrix:
    """Sparse matrix of ``a_site`` on the truncated basis."""
    if not 1 <= site <= basis.n_cavities:
        raise ParameterError(f"site {site} outside 1..{basis.n_cavities}")
    src = np.flatnonzero(basis.occupations[:, site - 1] > 0)
    tgt = _shifted(basis, src, {site: -1}, None)
    vals = np.sqrt(basis.occupations[src, site - 1].astype(float))
    return sp.csr_matrix((vals, (tgt, src)), shape=(len(basis), len(basis)))


def mode_coupling(params: ModelParams, k: int) -> float:
    """Atom coupling ``G_k`` of the k-th standing-wave mode of the supercavity."""
    n = params.n_cavities
    if not 1 <= k <= n:
        raise ParameterError(f"mode index {k} outside 1..{n}")
    if k % 2 == 0:
        return 0.0
    # sin(k pi / 2) for odd k
    sign = 1.0 if (k - 1) % 4 == 0 else -1.0
    return sign * params.g * np.sqrt(2.0 / (n + 1))


def mode_frequency(params: ModelParams, k: int) -> float:
    return params.omega_c - 2 * params.xi * np.cos(k * np.pi / (params.n_cavities + 1))


def dark_mode_energies(params: ModelParams) -> list[tuple[int, float]]:
    """Modes with ``G_k = 0`` paired with their g-independent excitation gap."""
    n = params.n_cavities
    out = []
    for k in range(1, n + 1):
        if mode_coupling(params.replace(g=1.0), k) == 0.0:
            gap = params.omega_c if 2 * k == n + 1 else mode_frequency(params, k)
            out.append((k, float(gap)))
    return out


def site_occupations(vectors: np.ndarray, basis: Basis) -> np.ndarray:
    """``<a_j^dag a_j>`` for every site; ``vectors`` is (dim,) or (dim, m)."""
    weights = np.abs(vectors) ** 2
    return basis.occupations.T.astype(float) @ weights


def site_occupation(vector: np.ndarray, basis: Basis, site: int) -> float:
    if not 1 <= site <= basis.n_cavities:
        raise ParameterError(f"site {site} outside 1..{basis.n_cavities}")
    return float(np.abs(vector) ** 2 @ basis.occupations[:, site - 1])


def write_triplets(op: HermitianOperator, path: str | Path) -> None:
    """Debug dump of the stored upper triangle as ``row,col,value`` CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "value"])
        for r, c, v in op.entries():
            writer.writerow([r, c, repr(v)])
