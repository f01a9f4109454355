"""Exact diagonalization, bound-state identification and Brillouin-Wigner energies."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from .errors import BWPTError, ParameterError, ResourceLimitError
from .hamiltonian import (HermitianOperator, build_sc_hamiltonian, build_subspace_hamiltonian,
                          site_occupations)
from .model import Basis, ModelParams, enumerate_basis

log = logging.getLogger(__name__)

DEFAULT_DENSE_LIMIT = 8000
PARITY_PATTERN = (1, -1, 1)
_SECTORS = {"even": (1,), "odd": (-1,), "both": (1, -1)}


@dataclass(frozen=True)
class SectorBlock:
    parity: int
    indices: np.ndarray  # positions in the operator's index space
    energies: np.ndarray
    vectors: np.ndarray  # (len(indices), n_levels)


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs of one operator, merged across parity sectors in ascending order."""

    dim: int
    basis_tag: str
    blocks: tuple[SectorBlock, ...]
    support: np.ndarray | None = None

    @cached_property
    def _merged(self):
        energies = np.concatenate([b.energies for b in self.blocks])
        block_id = np.concatenate([np.full(len(b.energies), i) for i, b in enumerate(self.blocks)])
        column = np.concatenate([np.arange(len(b.energies)) for b in self.blocks])
        order = np.argsort(energies, kind="stable")
        return energies[order], block_id[order], column[order]

    @property
    def energies(self) -> np.ndarray:
        return self._merged[0]

    @property
    def parity(self) -> np.ndarray:
        _, block_id, _ = self._merged
        return np.array([self.blocks[i].parity for i in block_id], dtype=np.int8)

    def __len__(self) -> int:
        return len(self.energies)

    def vector(self, m: int) -> np.ndarray:
        _, block_id, column = self._merged
        block = self.blocks[block_id[m]]
        out = np.zeros(self.dim)
        out[block.indices] = block.vectors[:, column[m]]
        return out

    @property
    def vectors(self) -> np.ndarray:
        """Dense ``(dim, len)`` eigenvector matrix; materialized on demand."""
        out = np.zeros((self.dim, len(self)))
        for m in range(len(self)):
            out[:, m] = self.vector(m)
        return out

    def block(self, parity: int) -> SectorBlock:
        for b in self.blocks:
            if b.parity == parity:
                return b
        raise KeyError(parity)

    def positions(self, parity: int) -> np.ndarray:
        """Merged level index of each column of the given parity block."""
        _, block_id, column = self._merged
        bid = next(i for i, b in enumerate(self.blocks) if b.parity == parity)
        pos = np.flatnonzero(block_id == bid)
        out = np.empty(len(pos), dtype=np.int64)
        out[column[pos]] = pos
        return out

    def locate(self, m: int) -> tuple[int, int]:
        """(parity, column within that parity block) of merged level ``m``."""
        _, block_id, column = self._merged
        return self.blocks[block_id[m]].parity, int(column[m])


def _check_parity_blocks(h: HermitianOperator):
    cross = h.parity[h.rows] != h.parity[h.cols]
    if np.any(cross):
        raise ParameterError(
            f"operator has {int(cross.sum())} entries between opposite-parity states; "
            "sector-wise diagonalization is invalid")


def _eigh_by_components(sub: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Dense eigh of a sparse symmetric matrix, one connected block at a time.

    Exact: an operator with conserved quantum numbers beyond parity (e.g. the
    RWA excitation number) is block diagonal and each block is solved alone.
    Eigenpairs are returned in ascending energy order.
    """
    n_comp, labels = csgraph.connected_components(sub, directed=False)
    if n_comp == 1:
        return la.eigh(sub.toarray(), driver="evd")
    energies = np.empty(sub.shape[0])
    vectors = np.zeros(sub.shape)
    col = 0
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        w, v = la.eigh(sub[members][:, members].toarray(), driver="evd")
        energies[col:col + len(w)] = w
        vectors[members, col:col + len(w)] = v
        col += len(w)
    order = np.argsort(energies, kind="stable")
    return energies[order], vectors[:, order]


def diagonalize(h: HermitianOperator, sector: str = "both",
                dense_limit: int = DEFAULT_DENSE_LIMIT) -> Spectrum:
    """Full dense eigendecomposition of the requested parity sector(s)."""
    if sector not in _SECTORS:
        raise ValueError(f"sector must be one of {sorted(_SECTORS)}")
    _check_parity_blocks(h)
    full = h.to_sparse()
    blocks = []
    for parity in _SECTORS[sector]:
        idx = np.flatnonzero(h.parity == parity)
        if len(idx) > dense_limit:
            raise ResourceLimitError(
                f"{'even' if parity == 1 else 'odd'} sector has dimension {len(idx)} > dense "
                f"limit {dense_limit}; diagonalize a single sector, use lowest_eigenpairs, or "
                "reduce max_excitation", len(idx))
        if len(idx) == 0:
            continue
        w, v = _eigh_by_components(full[idx][:, idx])
        blocks.append(SectorBlock(parity, idx, w, v))
    return Spectrum(h.dim, h.basis_tag, tuple(blocks), h.support)


def lowest_eigenpairs(h: HermitianOperator, parity: int, k: int = 1,
                      dense_cutoff: int = 1500) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``k`` eigenpairs of one sector; vectors are full-dimension.

    Small sectors go through the dense solver, larger ones through Lanczos.
    """
    _check_parity_blocks(h)
    idx = np.flatnonzero(h.parity == parity)
    sub = h.to_sparse()[idx][:, idx]
    if len(idx) <= dense_cutoff:
        w, v = la.eigh(sub.toarray(), subset_by_index=[0, min(k, len(idx)) - 1])
    else:
        v0 = np.ones(len(idx)) / np.sqrt(len(idx))
        w, v = spla.eigsh(sub.tocsc(), k=k, which="SA", v0=v0, tol=1e-12)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    out = np.zeros((h.dim, len(w)))
    out[idx] = v
    return w, out


def localization_ratio(vector: np.ndarray, basis: Basis, params: ModelParams | None = None) -> float:
    """Photon number in the last cavity over the total photon number."""
    occ = site_occupations(vector, basis)
    return float(_ratio(occ))


def _ratio(occ: np.ndarray) -> np.ndarray:
    # occ is (N,) or (N, m); pure-atom states count as perfectly localized
    total = occ.sum(axis=0)
    safe = np.where(total < 1e-14, 1.0, total)
    return np.where(total < 1e-14, 0.0, occ[-1] / safe)


def block_localization_ratios(block: SectorBlock, basis: Basis) -> np.ndarray:
    occ = basis.occupations[block.indices].T.astype(float) @ (block.vectors ** 2)
    return _ratio(occ)


@dataclass(frozen=True)
class BoundState:
    label: int
    energy: float
    vector: np.ndarray
    parity: int
    localization_ratio: float
    spectrum_index: int


@dataclass(frozen=True)
class BoundStateSet:
    states: tuple[BoundState, ...]
    requested: int
    threshold: float
    xi: float
    basis_tag: str

    @property
    def complete(self) -> bool:
        return len(self.states) == self.requested

    @property
    def count(self) -> int:
        return len(self.states)

    def get(self, label: int) -> BoundState | None:
        for st in self.states:
            if st.label == label:
                return st
        return None

    def __getitem__(self, label: int) -> BoundState:
        st = self.get(label)
        if st is None:
            raise KeyError(f"bound state {label} not identified")
        return st

    @property
    def energies(self) -> dict[int, float]:
        return {st.label: st.energy for st in self.states}

    def e2_usable(self) -> bool:
        """Whether the second even bound state can open an inelastic channel."""
        e0, e2 = self.get(0), self.get(2)
        return e0 is not None and e2 is not None and e2.energy <= e0.energy + 4 * self.xi


def classify_bound_states(spectrum: Spectrum, basis: Basis, params: ModelParams,
                          threshold: float = 0.01,
                          pattern: tuple[int, ...] = PARITY_PATTERN) -> BoundStateSet:
    """Pick the lowest localized eigenstates following the parity ``pattern``.

    Within each parity sector states are scanned upward in energy; a state is
    accepted when its localization ratio is below ``threshold``.  Degenerate
    candidates (energies within 1e-10) prefer the smaller ratio.
    """
    if spectrum.basis_tag != basis.tag:
        raise ParameterError("spectrum and basis disagree")
    ratios, orders = {}, {}
    for block in spectrum.blocks:
        r = block_localization_ratios(block, basis)
        ratios[block.parity] = r
        # ascending energy; degenerate levels by ratio, then column
        e_key = np.round(block.energies / 1e-10)
        orders[block.parity] = np.lexsort((np.arange(len(r)), r, e_key))
    merged = {spectrum.locate(m): m for m in range(len(spectrum))}

    cursor = {p: 0 for p in orders}
    states = []
    for label, parity in enumerate(pattern):
        if parity not in orders:
            break
        order, r = orders[parity], ratios[parity]
        pick = None
        for pos in range(cursor[parity], len(order)):
            if r[order[pos]] < threshold:
                pick = pos
                break
            if label == 0:
                # the elastic reference must be the true ground state
                break
        if pick is None:
            log.info("bound state %d (parity %+d) not found below ratio %g", label, parity,
                     threshold)
            break
        cursor[parity] = pick + 1
        col = int(order[pick])
        block = spectrum.block(parity)
        vec = np.zeros(spectrum.dim)
        vec[block.indices] = block.vectors[:, col]
        states.append(BoundState(label, float(block.energies[col]), vec, parity,
                                 float(r[col]), merged[(parity, col)]))
    return BoundStateSet(tuple(states), len(pattern), threshold, params.xi, basis.tag)


def bound_states(params: ModelParams, basis: Basis | None = None, threshold: float = 0.01,
                 dense_limit: int = DEFAULT_DENSE_LIMIT) -> tuple[Spectrum, BoundStateSet]:
    basis = basis or enumerate_basis(params)
    spec = diagonalize(build_sc_hamiltonian(params, basis), "both", dense_limit)
    return spec, classify_bound_states(spec, basis, params, threshold)


def export_bound_state_rows(rows: list[dict], path: str | Path, header_comment: str = "") -> None:
    """CSV export of per-g bound-state data (energies, parities, ratios)."""
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def export_profile(profile: np.ndarray, path: str | Path, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["site", "occupation"])
        for j, n in enumerate(profile, start=1):
            writer.writerow([j, repr(float(n))])


# --- single-site Rabi model and Brillouin-Wigner energies -------------------

@dataclass(frozen=True)
class RabiEigensystem:
    """Eigenpairs of the center-site Rabi model, split by parity.

    Local states are ``(n, atom)`` with ``n + atom <= local_cutoff``.
    """

    local_cutoff: int
    states: np.ndarray  # (m, 2) rows of (n, atom)
    energies: dict[int, np.ndarray]
    vectors: dict[int, np.ndarray]
    indices: dict[int, np.ndarray]

    def level(self, index: int, parity: int) -> tuple[float, np.ndarray]:
        """Energy and full local vector of the ``index``-th level (0-based) of a parity."""
        e = self.energies[parity]
        if not 0 <= index < len(e):
            raise ParameterError(f"Rabi level {index} with parity {parity:+d} not available")
        vec = np.zeros(len(self.states))
        vec[self.indices[parity]] = self.vectors[parity][:, index]
        return float(e[index]), vec


def _rabi_matrix(omega_c, omega_a, g, local_cutoff, rwa_only=False):
    states = [(n, a) for a in (0, 1) for n in range(local_cutoff + 1 - a)]
    states.sort(key=lambda t: (t[0] + t[1], t[1], t[0]))
    pos = {st: i for i, st in enumerate(states)}
    h = np.zeros((len(states), len(states)))
    for (n, a), i in pos.items():
        h[i, i] = omega_c * n + (0.5 if a else -0.5) * omega_a
        if a == 0:
            j = pos.get((n - 1, 1))
            if j is not None and n > 0:
                h[i, j] = h[j, i] = g * np.sqrt(n)
            j = pos.get((n + 1, 1))
            if j is not None and not rwa_only:
                h[i, j] = h[j, i] = g * np.sqrt(n + 1)
    return np.array(states), h


def rabi_site_eigensystem(params: ModelParams, local_cutoff: int) -> RabiEigensystem:
    """Diagonalize ``omega_c a^dag a + omega_a/2 sigma_z + g sigma_x (a^dag + a)`` by parity."""
    if local_cutoff < 1:
        raise ParameterError("local_cutoff must be >= 1")
    states, h = _rabi_matrix(params.omega_c, params.omega_a, params.g, local_cutoff,
                             params.rwa_only)
    par = np.where(states.sum(axis=1) % 2 == 0, 1, -1)
    energies, vectors, indices = {}, {}, {}
    for p in (1, -1):
        idx = np.flatnonzero(par == p)
        w, v = la.eigh(h[np.ix_(idx, idx)])
        energies[p], vectors[p], indices[p] = w, v, idx
    return RabiEigensystem(local_cutoff, states, energies, vectors, indices)


@dataclass(frozen=True)
class BWPTResult:
    energy: float
    converged: bool
    iterations: int
    unperturbed: float
    history: tuple[float, ...] = field(default=())


class _FreeBasis:
    """Eigenbasis of ``H_0`` (Rabi site plus decoupled cavities) on the truncated basis."""

    def __init__(self, params: ModelParams, basis: Basis):
        s = params.s
        occ = basis.occupations
        others = np.delete(occ, s - 1, axis=1)
        n_others = others.sum(axis=1)
        # group states by the occupations of the non-atom cavities
        radix = params.max_excitation + 1
        keys = others @ (radix ** np.arange(others.shape[1], dtype=np.int64))
        order = np.lexsort((basis.atom, occ[:, s - 1], keys))
        keys_sorted = keys[order]
        starts = np.flatnonzero(np.r_[True, keys_sorted[1:] != keys_sorted[:-1]])
        ends = np.r_[starts[1:], len(order)]

        rabi_cache = {}
        rows, cols, vals = [], [], []
        energies = np.empty(len(basis))
        col = 0
        for a, b in zip(starts, ends):
            members = order[a:b]
            local_cut = params.max_excitation - int(n_others[members[0]])
            if local_cut not in rabi_cache:
                rabi_cache[local_cut] = self._local_eigensystem(params, local_cut)
            st, w, v, par = rabi_cache[local_cut]
            local_pos = {(int(occ[i, s - 1]), int(basis.atom[i])): i for i in members}
            member_idx = np.array([local_pos[(int(n), int(at))] for n, at in st])
            r, c = np.nonzero(v)
            rows.append(member_idx[r])
            cols.append(col + c)
            vals.append(v[r, c])
            energies[col:col + len(w)] = w + params.omega_c * n_others[members[0]]
            if n_others[members[0]] == 0:
                self.vacuum_columns = {p: col + np.flatnonzero(par == p) for p in (1, -1)}
            col += len(w)
        self.u = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(len(basis), len(basis)))
        self.energies = energies

    @staticmethod
    def _local_eigensystem(params, local_cut):
        st, h = _rabi_matrix(params.omega_c, params.omega_a, params.g, local_cut, params.rwa_only)
        local_par = np.where(st.sum(axis=1) % 2 == 0, 1, -1)
        w_all, par_all = [], []
        v = np.zeros_like(h)
        col = 0
        for p in (1, -1):
            idx = np.flatnonzero(local_par == p)
            w, vp = la.eigh(h[np.ix_(idx, idx)])
            v[np.ix_(idx, np.arange(col, col + len(idx)))] = vp
            w_all.append(w)
            par_all.append(np.full(len(idx), p))
            col += len(idx)
        return st, np.concatenate(w_all), v, np.concatenate(par_all)


def bwpt_bound_energy(params: ModelParams, level: tuple[int, int] = (0, 1), tol: float = 1e-12,
                      max_iter: int = 200, order: int | None = None,
                      basis: Basis | None = None) -> BWPTResult:
    """Self-consistent Brillouin-Wigner energy of an ``H_0`` level.

    ``H_0`` keeps the cavity energies and the Rabi coupling at the center site;
    the inter-cavity hopping is the perturbation.  ``level = (index, parity)``
    selects the ``index``-th (0-based) Rabi level of that parity with all other
    cavities empty.  The energy is iterated as ``E <- e0 + <0|V|chi(E)>`` with
    ``chi = |0> + R(E) Q V chi`` and ``R(E) = Q (E - H_0)^-1 Q``.  With
    ``order=None`` the wave equation is solved exactly on the truncated space;
    a finite ``order`` truncates the series at that power of ``V``.
    """
    index, parity = level
    basis = basis or enumerate_basis(params)
    free = _FreeBasis(params, basis)
    cand = free.vacuum_columns[parity]
    if not 0 <= index < len(cand):
        raise ParameterError(f"Rabi level {index} with parity {parity:+d} not available")
    ref = int(cand[index])
    e0 = float(free.energies[ref])

    hop = (build_sc_hamiltonian(params, basis).to_sparse()
           - build_sc_hamiltonian(params.replace(xi=0.0, eta=0.0), basis).to_sparse())
    vrot = (free.u.T @ hop @ free.u).tocsr()
    vrot.eliminate_zeros()
    q = np.ones(len(basis), dtype=bool)
    q[ref] = False
    d_q = free.energies[q]
    if np.min(np.abs(d_q - e0), initial=np.inf) < 1e-12:
        raise BWPTError(f"H_0 level {level} is degenerate (small denominator at E={e0})")
    v00 = vrot[ref, ref]
    v_q0 = vrot[:, ref].toarray().ravel()[q]
    v_0q = vrot[ref, :].toarray().ravel()[q]
    v_qq = vrot[q][:, q].tocsc()

    if vrot.nnz == 0:
        return BWPTResult(e0, True, 1, e0, (e0,))

    def self_energy(energy):
        denom = energy - d_q
        if np.min(np.abs(denom)) < 1e-12:
            raise BWPTError(f"small denominator |E - e_H0| < 1e-12 at E={energy}")
        if order is None:
            lhs = (sp.diags(denom) - v_qq).tocsc()
            y = spla.spsolve(lhs, v_q0)
            return v00 + v_0q @ y
        total = v00
        chi = v_q0 / denom
        for _ in range(order - 1):
            total += v_0q @ chi
            chi = (v_qq @ chi) / denom
        return total

    history = [e0]
    energy = e0
    damping = 1.0
    last_step = None
    for it in range(1, max_iter + 1):
        target = e0 + self_energy(energy)
        step = target - energy
        if last_step is not None and step * last_step < 0 and abs(step) > 0.5 * abs(last_step):
            damping = 0.5
        new = energy + damping * step
        history.append(float(new))
        if abs(new - energy) < tol:
            return BWPTResult(float(new), True, it, e0, tuple(history))
        energy, last_step = new, step
    return BWPTResult(float(energy), False, max_iter, e0, tuple(history))


@dataclass(frozen=True)
class QuasiBoundState:
    energy: float
    energy_rel: float
    ground_energy: float
    profile: np.ndarray
    parity: int
    localization_ratio: float
    vector: np.ndarray


def subspace_quasi_bound_state(params: ModelParams, min_excitation: int = 3,
                               basis: Basis | None = None,
                               ground_energy: float | None = None) -> QuasiBoundState:
    """Lowest odd-parity level of ``H_S`` restricted to ``N_ext >= min_excitation``.

    The energy is reported relative to the ground energy of the full ``H_S``.
    """
    basis = basis or enumerate_basis(params)
    if ground_energy is None:
        w, _ = lowest_eigenpairs(build_sc_hamiltonian(params, basis), 1, 1)
        ground_energy = float(w[0])
    sub = build_subspace_hamiltonian(params, basis, min_excitation)
    w, vecs = lowest_eigenpairs(sub, -1, 1)
    vec = np.zeros(len(basis))
    vec[sub.support if sub.support is not None else np.arange(len(basis))] = vecs[:, 0]
    profile = site_occupations(vec, basis)
    return QuasiBoundState(float(w[0]), float(w[0]) - ground_energy, ground_energy, profile, -1,
                           float(_ratio(profile)), vec)
