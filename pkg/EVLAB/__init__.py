r"""Everett lab: collapse-free measurement in fermionic quantum field theory.

EVLAB simulates measurements without collapse on a lattice of fermionic field modes. Systems, observers and a
comparator are single quanta of distinct species; interactions only rotate internal labels, and observers are located
by their number densities.

Modules:
    lattice: Lattices, species and the canonical mode ordering.
    fock_state: Sparse multi-species Fock states and fermionic operator terms.
    sector_tensor: Dense single-occupancy tensors for product-like states.
    model: Hamiltonians, wavepackets and interaction gates.
    evolution: Staged schedule evolution and its consistency checks.
    analytic: The massive narrow-wavepacket backend and continuum integrals.
    deutsch_hayden: Fictitious-field dressing and the Deutsch-Hayden transformation.
    eprb: Scenario runs, the interpretational rule and correlation scans.
    cli: The ``evlab`` command.

The internal register of the analytic backend is handled with Qiskit's Statevector and QuantumCircuit, wrapped by
`InternalState` and `InternalCircuit` in textbook qubit order.

See Also:
    [Qiskit Statevector documentation](https://qiskit.org/documentation/stubs/qiskit.quantum_info.Statevector.html)
"""

import importlib.metadata

from .analytic import MNConfiguration, mn_run, tail_integral, tail_scan
from .deutsch_hayden import dh_check, dh_scenario
from .eprb import ResultRecord, density, localize, run_eprb, scan_correlation
from .fock_state import OperatorTerm, SectorState
from .internal_circuit import InternalCircuit
from .internal_state import InternalState
from .lattice import Lattice, ModeTable, SpeciesSpec
from .scenario import Backend, ScenarioKind, ScenarioSpec, eprb_layout, single_observer_layout

try:
    __version__ = importlib.metadata.version("EVLAB")
except importlib.metadata.PackageNotFoundError:
    __version__ = "0+unknown"

__all__ = [
    "Backend",
    "InternalCircuit",
    "InternalState",
    "Lattice",
    "MNConfiguration",
    "ModeTable",
    "OperatorTerm",
    "ResultRecord",
    "ScenarioKind",
    "ScenarioSpec",
    "SectorState",
    "SpeciesSpec",
    "density",
    "dh_check",
    "dh_scenario",
    "eprb_layout",
    "localize",
    "mn_run",
    "run_eprb",
    "scan_correlation",
    "single_observer_layout",
    "tail_integral",
    "tail_scan",
]
