r"""A textbook-ordered wrapper around Qiskit's QuantumCircuit for the internal register.

The MN backend keeps the internal factors of all entities in one register (qubit `k` is entity `k`, written left to
right) and applies the interactions of the schedule as gates:

- a measurement of wing `p` is a rotation of the observer's awareness by `RY(2Θ)`, controlled on the system being
  spin up along the analyser axis;
- the comparison is a rotation of the comparator by `RY(2Θ_C)`, controlled on both observers being aware.

`RY(2Θ) = [[cosΘ, -sinΘ], [sinΘ, cosΘ]]` is exactly `exp(-iΘ σ_y)` on the awareness labels.

See Also:
    [Qiskit QuantumCircuit documentation](https://qiskit.org/documentation/stubs/qiskit.circuit.QuantumCircuit.html)
"""

from __future__ import annotations

import typing
from collections.abc import Sequence

import numpy as np
from qiskit import QuantumCircuit as QiskitQC
from qiskit import quantum_info
from qiskit.circuit.library import RYGate

from EVLAB import latex_drawer
from EVLAB.utils import inverse_tensor

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray
    from qiskit.circuit.quantumcircuit import QubitSpecifier


class InternalCircuit:
    """Gate sequence acting on the internal register.

    Args:
        num_qubits (int): Number of entities in the register.
    """

    def __init__(self, num_qubits: int):
        self._qiskit_qc = QiskitQC(num_qubits)

    @property
    def num_qubits(self) -> int:
        return self._qiskit_qc.num_qubits

    def to_matrix(self) -> NDArray[np.complex128]:
        """Matrix of the circuit in textbook qubit order."""
        reverse_qc = self._qiskit_qc.reverse_bits()  # REVERSE the order of qubits to match textbook notation
        return np.asarray(quantum_info.Operator(reverse_qc).data, dtype=np.complex128)

    def draw(self, output: str | None = "text", source: bool = False, **kwargs):
        """Draw the circuit, or its matrix form when `output` is ``"matrix"``."""
        match output:
            case "matrix":
                return latex_drawer.matrix_to_latex(self.to_matrix(), source=source)
            case "latex" if source:
                return self._qiskit_qc.draw(output="latex_source", **kwargs)
            case _:
                return self._qiskit_qc.draw(output=output, **kwargs)

    def unitary(
        self, matrix: NDArray[np.complex128], qubits: Sequence[QubitSpecifier], label: str | None = None
    ) -> InternalCircuit:
        """Apply a unitary given in textbook order to the listed qubits."""
        matrix = np.asarray(matrix, dtype=np.complex128)
        matrix = inverse_tensor(matrix)  # REVERSE the order of qubits to match textbook notation
        self._qiskit_qc.unitary(matrix, qubits, label=label)
        return self

    def barrier(self, *qargs: QubitSpecifier, label: str | None = None) -> InternalCircuit:
        self._qiskit_qc.barrier(*qargs, label=label)
        return self

    def ry(self, theta: float, qubit: QubitSpecifier, label: str | None = None) -> InternalCircuit:
        self._qiskit_qc.ry(theta, qubit, label=label)
        return self

    def cry(
        self,
        theta: float,
        control_qubit: QubitSpecifier,
        target_qubit: QubitSpecifier,
        label: str | None = None,
        ctrl_state: str | int | None = None,
    ) -> InternalCircuit:
        self._qiskit_qc.cry(theta, control_qubit, target_qubit, label=label, ctrl_state=ctrl_state)
        return self

    def mcry(self, theta: float, controls: Sequence[QubitSpecifier], target: QubitSpecifier) -> InternalCircuit:
        """`RY(theta)` on `target` controlled on every qubit of `controls` being 1."""
        gate = RYGate(theta).control(len(controls))
        self._qiskit_qc.append(gate, [*controls, target])
        return self

    def measurement(
        self, rotation: NDArray[np.complex128], angle: float, system: int, observer: int
    ) -> InternalCircuit:
        """Rotate the observer by `RY(2·angle)` when the system is spin up along the axis of `rotation`.

        `rotation` has the up/down spinors of the axis as columns; its adjoint maps spin up along the axis to the
        computational 0 (spin label 1).
        """
        rotation = np.asarray(rotation, dtype=np.complex128)
        self.unitary(rotation.conj().T, [system], label="U†")
        self.cry(2 * angle, system, observer, ctrl_state=0)
        self.unitary(rotation, [system], label="U")
        return self

    def comparison(self, angle: float, observers: Sequence[int], comparator: int) -> InternalCircuit:
        """Rotate the comparator by `RY(2·angle)` when every observer is aware."""
        return self.mcry(2 * angle, observers, comparator)
