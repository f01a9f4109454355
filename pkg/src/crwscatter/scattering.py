"""Time-independent single-photon scattering off the supercavity system.

A photon in the lead band ``omega = omega_c - 2 xi cos k`` hits the scatterer
prepared in its ground bound state ``psi_0``.  Outgoing channels are the
elastic one (scatterer back in ``psi_0``) and, when identified, the inelastic
one leaving the scatterer in ``psi_2``.  The scatterer eigenstates enter only
through their energies and the matrix elements of ``a_1`` and ``a_N``
between the channel states and every eigenstate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConservationError, MissingBoundStateError, ParameterError, PoleError
from .hamiltonian import annihilation_operator
from .model import Basis, ModelParams
from .spectral import BoundStateSet, Spectrum

POLE_TOL = 1e-9
CONSERVATION_HARD_LIMIT = 1e-6
_COND_LIMIT = 1e13


def momentum_from_frequency(omega: float, omega_c: float, xi: float) -> complex:
    """Invert ``omega = omega_c - 2 xi cos k``.

    In the band ``k`` is real in ``[0, pi]``; outside it the evanescent branch
    with ``Re k`` in ``{0, pi}`` and ``Im k > 0`` is returned.
    """
    if xi <= 0:
        raise ParameterError("xi must be positive for a propagating lead band")
    c = (omega_c - omega) / (2 * xi)
    if abs(c) <= 1:
        return complex(np.arccos(c), 0.0)
    if c > 1:
        return complex(0.0, np.arccosh(c))
    return complex(np.pi, np.arccosh(-c))


@dataclass(frozen=True)
class ChannelKinematics:
    omega_in: float
    k0: float
    E_in: float
    omega_out_inelastic: float | None
    k2: complex | None
    inelastic_open: bool


def kinematics(params: ModelParams, e0: float, e2: float | None, omega_in: float) -> ChannelKinematics:
    k0 = momentum_from_frequency(omega_in, params.omega_c, params.xi)
    if k0.imag != 0:
        raise ParameterError(f"omega_in={omega_in} is outside the lead band {params.band}")
    e_in = e0 + omega_in
    if e2 is None:
        return ChannelKinematics(omega_in, k0.real, e_in, None, None, False)
    omega_out = e_in - e2
    k2 = momentum_from_frequency(omega_out, params.omega_c, params.xi)
    lo, hi = params.band
    is_open = (omega_in >= e2 - e0 + lo) and (omega_out <= hi)
    return ChannelKinematics(omega_in, k0.real, e_in, omega_out, k2, bool(is_open and k2.imag == 0))


def inelastic_threshold(bound_states: BoundStateSet, params: ModelParams) -> float:
    """Lowest incident frequency at which the ``psi_2`` channel propagates."""
    e0, e2 = bound_states.get(0), bound_states.get(2)
    if e0 is None or e2 is None:
        raise MissingBoundStateError(
            "E2 not identified; run the scattering problem in elastic-only mode")
    return e2.energy - e0.energy + params.omega_c - 2 * params.xi


@dataclass(frozen=True)
class TransitionAmplitudes:
    """``<psi_a| a_site |phi_j>`` for every eigenstate ``j`` (real for real ``H_S``).

    Rows of ``table`` follow ``labels`` = ``(channel state, site)``: the elastic
    rows ``(0, 1)``, ``(0, N)`` and, when ``psi_2`` is present, ``(2, 1)``, ``(2, N)``.
    """

    energies: np.ndarray
    table: np.ndarray
    labels: tuple[tuple[int, int], ...]
    n_cavities: int
    basis_tag: str

    @property
    def n_channels(self) -> int:
        return len(self.labels) // 2

    def row(self, state: int, site: int) -> np.ndarray:
        return self.table[self.labels.index((state, site))]

    def mirrored(self) -> "TransitionAmplitudes":
        """Tables with the roles of site 1 and site N exchanged."""
        n = self.n_cavities
        order = [self.labels.index((st, n + 1 - site)) for st, site in self.labels]
        return TransitionAmplitudes(self.energies, self.table[order], self.labels, n,
                                    self.basis_tag)


def transition_amplitudes(spectrum: Spectrum, bound_states: BoundStateSet, basis: Basis,
                          channels: tuple[int, ...] = (0, 2)) -> TransitionAmplitudes:
    """Matrix elements of ``a_1``/``a_N`` between channel states and all eigenstates.

    Computed as projections of ``a_site^dag |psi_a>`` onto each eigenvector.
    Channel labels missing from ``bound_states`` are skipped, except ``0``.
    """
    if spectrum.basis_tag != basis.tag or bound_states.basis_tag != basis.tag:
        raise ParameterError("spectrum, bound states and basis were built on different bases")
    if bound_states.get(0) is None:
        raise MissingBoundStateError("ground bound state psi_0 is required")
    n = basis.n_cavities
    ops = {site: annihilation_operator(basis, site) for site in (1, n)}
    rows, labels = [], []
    for c in channels:
        if bound_states.get(c) is None:
            continue
        psi = bound_states[c].vector
        for site in (1, n):
            created = ops[site].T @ psi  # a_site^dag |psi>
            row = np.zeros(len(spectrum))
            for block in spectrum.blocks:
                row[spectrum.positions(block.parity)] = block.vectors.T @ created[block.indices]
            rows.append(row)
            labels.append((c, site))
    return TransitionAmplitudes(spectrum.energies.copy(), np.array(rows), tuple(labels), n,
                                basis.tag)


@dataclass(frozen=True)
class ScatteringSolution:
    kinematics: ChannelKinematics
    r_e: complex
    t_e: complex
    r_in: complex
    t_in: complex
    d: np.ndarray
    residual: float
    method: str
    incident: str = "left"


@dataclass(frozen=True)
class Flows:
    J_Re: float
    J_Te: float
    J_Rin: float
    J_Tin: float
    conservation_defect: float

    @property
    def J_T(self) -> float:
        return self.J_Te + self.J_Tin

    @property
    def J_R(self) -> float:
        return self.J_Re + self.J_Rin


class ScatteringProblem:
    """Prepared scatterer data reused for every incident frequency.

    Holds the eigenenergies and transition amplitudes; per frequency the
    eigenstate amplitudes ``d_j`` are eliminated analytically, leaving a small
    system for ``(r_e, t_e[, r_in, t_in])``.
    """

    def __init__(self, params: ModelParams, amplitudes: TransitionAmplitudes, e0: float,
                 e2: float | None, incident: str = "left"):
        if params.eta <= 0:
            raise ParameterError("eta must be positive: the scatterer is decoupled from the leads")
        if incident not in ("left", "right"):
            raise ValueError("incident must be 'left' or 'right'")
        self.params = params
        self.incident = incident
        amp = amplitudes.mirrored() if incident == "right" else amplitudes
        self.amplitudes = amp
        self.e0 = e0
        self.e2 = e2 if amp.n_channels == 2 else None
        w = amp.table
        # only eigenstates coupled to some channel take part in the sums
        scale = np.max(np.abs(w)) if w.size else 0.0
        self.active = np.flatnonzero(np.any(np.abs(w) > 1e-14 * max(scale, 1.0), axis=0))
        self.w = w[:, self.active]
        self.eps = amp.energies[self.active]
        self._w_all = w
        self._eps_all = amp.energies

    @classmethod
    def from_spectrum(cls, params: ModelParams, spectrum: Spectrum, bound_states: BoundStateSet,
                      basis: Basis, channels: tuple[int, ...] = (0, 2),
                      incident: str = "left") -> "ScatteringProblem":
        amp = transition_amplitudes(spectrum, bound_states, basis, channels)
        e2 = bound_states[2].energy if (2 in channels and bound_states.get(2)) else None
        return cls(params, amp, bound_states[0].energy, e2, incident)

    def kinematics(self, omega_in: float) -> ChannelKinematics:
        return kinematics(self.params, self.e0, self.e2, omega_in)

    def _coefficients(self, kin: ChannelKinematics):
        xi, n = self.params.xi, self.params.n_cavities
        k0 = kin.k0
        diag = [xi * np.exp(-1j * k0), xi * np.exp(1j * n * k0)]
        phase = [1.0, np.exp(1j * (n + 1) * k0)]
        if self.e2 is not None:
            k2 = kin.k2
            diag += [xi * np.exp(-1j * k2), xi * np.exp(1j * n * k2)]
            phase += [1.0, np.exp(1j * (n + 1) * k2)]
        rhs = np.zeros(len(diag), dtype=complex)
        rhs[0] = -xi * np.exp(1j * k0)
        return np.array(diag), np.array(phase), rhs

    def solve(self, omega_in: float, method: str = "reduced") -> ScatteringSolution:
        """Amplitudes at one incident frequency.

        ``method="reduced"`` eliminates every ``d_j`` (falling back to keeping
        near-pole states explicit); ``method="augmented"`` solves the full
        system with all coupled ``d_j`` as unknowns.
        """
        kin = self.kinematics(omega_in)
        denom = kin.E_in - self.eps
        if method == "augmented":
            explicit = np.ones(len(self.eps), dtype=bool)
        elif method == "reduced":
            explicit = np.abs(denom) < POLE_TOL
        else:
            raise ValueError(f"unknown method {method!r}")
        used = "reduced" if not explicit.any() else ("augmented" if method == "augmented"
                                                      else "pole-augmented")
        x, d_active = self._solve_partitioned(kin, explicit)
        d = np.zeros(len(self._eps_all), dtype=complex)
        d[self.active] = d_active
        residual = self._residual(kin, x, d)
        if not np.isfinite(residual) or residual > 1e-8:
            raise PoleError(f"scattering system singular at omega_in={omega_in} "
                            f"(residual {residual:.2e})")
        amps = list(x) + [0j, 0j]
        return ScatteringSolution(kin, complex(amps[0]), complex(amps[1]), complex(amps[2]),
                                  complex(amps[3]), d, residual, used, self.incident)

    def _solve_partitioned(self, kin, explicit):
        eta = self.params.eta
        diag, phase, rhs = self._coefficients(kin)
        nc = len(diag)
        # Solve for the amplitudes at the far boundary (t * e^{iNk}) rather than
        # t itself: for a closed, evanescent channel the raw coefficients span
        # e^{+kappa} .. e^{-N kappa} and the system would be badly scaled.
        n = self.params.n_cavities
        ks = [kin.k0, kin.k0, kin.k2, kin.k2][:nc]
        scale = np.array([1.0 if b % 2 == 0 else np.exp(1j * n * ks[b]) for b in range(nc)])
        diag = diag / scale
        phase = phase / scale
        w = self.w[:nc]
        denom = kin.E_in - self.eps
        src = w[0]  # <psi_0|a_1|phi_j>, drives every d_j
        imp = ~explicit
        inv = np.zeros_like(denom)
        inv[imp] = 1.0 / denom[imp]
        # Green-function sums over the eliminated states
        green = (w * inv) @ w.T
        a = np.diag(diag) + eta ** 2 * green * phase[None, :]
        b = rhs - eta ** 2 * green[:, 0]
        p_idx = np.flatnonzero(explicit)
        if len(p_idx) == 0:
            if np.linalg.cond(a) > _COND_LIMIT:
                raise PoleError(f"reduced system singular at omega_in={kin.omega_in}")
            x = np.linalg.solve(a, b)
            d = -eta * (src + (w.T * phase) @ x) * inv
            return x / scale, d
        npl = len(p_idx)
        big = np.zeros((nc + npl, nc + npl), dtype=complex)
        big[:nc, :nc] = a
        big[:nc, nc:] = -eta * w[:, p_idx]
        big[nc:, :nc] = eta * (w[:, p_idx].T * phase[None, :])
        big[nc:, nc:] = np.diag(denom[p_idx])
        rhs_big = np.concatenate([b, -eta * src[p_idx]])
        if npl < 64 and np.linalg.cond(big) > _COND_LIMIT:
            raise PoleError(f"augmented system singular at omega_in={kin.omega_in}")
        try:
            sol = np.linalg.solve(big, rhs_big)
        except np.linalg.LinAlgError as exc:
            raise PoleError(f"augmented system singular at omega_in={kin.omega_in}") from exc
        x = sol[:nc]
        d = -eta * (src + (w.T * phase) @ x) * inv
        d[p_idx] = sol[nc:]
        return x / scale, d

    def _residual(self, kin, x, d) -> float:
        """Largest defect of the full equation set (all eigenstates) over the largest term."""
        eta = self.params.eta
        diag, phase, rhs = self._coefficients(kin)
        nc = len(diag)
        w = self._w_all[:nc]
        src = w[0]
        denom = kin.E_in - self._eps_all
        coupling = w.T * phase[None, :]  # (M, nc)
        # boundary equations for the lead amplitudes
        t1 = diag * x
        t2 = -eta * (w @ d)
        r13 = t1 + t2 - rhs
        s13 = np.abs(t1) + eta * (np.abs(w) @ np.abs(d)) + np.abs(rhs)
        # scatterer-eigenstate equations
        t3 = denom * d
        t4 = eta * coupling @ x
        r14 = t3 + t4 + eta * src
        s14 = np.abs(t3) + eta * (np.abs(coupling) @ np.abs(x)) + eta * np.abs(src)
        err = max(np.max(np.abs(r13)), np.max(np.abs(r14), initial=0.0))
        scale = max(np.max(s13), np.max(s14, initial=0.0))
        return float(err / scale)


def solve_scattering(params: ModelParams, spectrum: Spectrum, bound_states: BoundStateSet,
                     omega_in: float, basis: Basis, method: str = "reduced",
                     channels: tuple[int, ...] = (0, 2), incident: str = "left") -> ScatteringSolution:
    lo, hi = params.band
    if not lo < omega_in < hi:
        raise ParameterError(f"omega_in={omega_in} must lie strictly inside the band ({lo}, {hi})")
    problem = ScatteringProblem.from_spectrum(params, spectrum, bound_states, basis, channels,
                                              incident)
    return problem.solve(omega_in, method)


def flows(solution: ScatteringSolution) -> Flows:
    """Channel flows; the inelastic ones carry the velocity ratio ``sin k2 / sin k0``."""
    kin = solution.kinematics
    j_re = abs(solution.r_e) ** 2
    j_te = abs(solution.t_e) ** 2
    if kin.inelastic_open:
        ratio = np.sin(kin.k2.real) / np.sin(kin.k0)
        j_rin = abs(solution.r_in) ** 2 * ratio
        j_tin = abs(solution.t_in) ** 2 * ratio
    else:
        j_rin = j_tin = 0.0
    defect = abs(1.0 - (j_re + j_te + j_rin + j_tin))
    if defect > CONSERVATION_HARD_LIMIT:
        raise ConservationError(
            f"flow conservation violated by {defect:.3e} at omega_in={kin.omega_in}")
    return Flows(float(j_re), float(j_te), float(j_rin), float(j_tin), float(defect))
