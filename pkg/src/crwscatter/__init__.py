"""Single-photon scattering off a coupled-cavity supercavity with a two-level atom.

The scatterer is a chain of ``N`` cavities with an atom in the center cavity,
coupled beyond the rotating-wave approximation; two semi-infinite
tight-binding leads attach to its ends.
"""

from .errors import (BWPTError, ConfigError, ConservationError, ContractError, CrwScatterError,
                     MissingBoundStateError, ParameterError, PoleError, ResourceLimitError)
from .hamiltonian import HermitianOperator, build_sc_hamiltonian, dark_mode_energies
from .model import Basis, BasisState, ModelParams, basis_dimension, enumerate_basis, parity_of
from .scattering import Flows, ScatteringProblem, ScatteringSolution, flows, solve_scattering
from .spectral import (BoundStateSet, Spectrum, bound_states, bwpt_bound_energy,
                       classify_bound_states, diagonalize, localization_ratio,
                       subspace_quasi_bound_state)
from .sweeps import Grid, SweepResult, SweepSpec, overlay_references, sweep, transmission_minimum

__version__ = "0.1.0"

__all__ = [
    "Basis", "BasisState", "BoundStateSet", "BWPTError", "ConfigError", "ConservationError",
    "ContractError", "CrwScatterError", "Flows", "Grid", "HermitianOperator",
    "MissingBoundStateError", "ModelParams", "ParameterError", "PoleError", "ResourceLimitError",
    "ScatteringProblem", "ScatteringSolution", "Spectrum", "SweepResult", "SweepSpec",
    "basis_dimension", "bound_states", "build_sc_hamiltonian", "bwpt_bound_energy",
    "classify_bound_states", "dark_mode_energies", "diagonalize", "enumerate_basis", "flows",
    "localization_ratio", "overlay_references", "parity_of", "solve_scattering",
    "subspace_quasi_bound_state", "sweep", "transmission_minimum",
]
