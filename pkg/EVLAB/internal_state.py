r"""Internal register states of the massive narrow-wavepacket backend.

`InternalState` wraps Qiskit's Statevector. The state vector is stored in textbook order: the leftmost character of
a label is qubit 0, the first entity of the register. Qiskit counts qubits from the right, so circuits are applied on
the reversed vector and the result is reversed back.

See Also:
    [Qiskit Statevector documentation](https://qiskit.org/documentation/stubs/qiskit.quantum_info.Statevector.html)
"""

from __future__ import annotations

import itertools
import typing
from collections.abc import Sequence

import numpy as np
from qiskit.quantum_info import Statevector
from scipy import stats

from EVLAB import latex_drawer
from EVLAB.exceptions import EvlabError
from EVLAB.utils import Ket, tensor_product

if typing.TYPE_CHECKING:
    from IPython.display import Latex
    from numpy.typing import NDArray

    from EVLAB.internal_circuit import InternalCircuit


class InternalState:
    """A normalized state of the internal register.

    Args:
        data (NDArray | Statevector): Amplitudes in textbook order; normalized on construction.
        names (Sequence[str]): Entity name per qubit (e.g. ``("S1", "O1")``).
        kinds (str | None, optional): ``"s"`` (system) or ``"o"`` (observer or comparator) per qubit; derived from the
            names when omitted.
    """

    def __init__(self, data: NDArray[np.complex128] | Statevector, names: Sequence[str], kinds: str | None = None):
        if not isinstance(data, Statevector):
            data = np.asarray(data, dtype=complex)
            data = data / np.linalg.norm(data)
        self.state_vector = Statevector(data)
        self._num_of_qubit = int(np.log2(len(self.state_vector.data)))
        self.names = tuple(names)
        self.kinds = kinds or "".join("s" if name.startswith("S") else "o" for name in self.names)
        if len(self.names) != self._num_of_qubit or len(self.kinds) != self._num_of_qubit:
            raise EvlabError("One entity name and kind is needed per qubit.")

    @property
    def data(self) -> NDArray[np.complex128]:
        return self.state_vector.data

    @property
    def num_of_qubit(self) -> int:
        return self._num_of_qubit

    @classmethod
    def from_label(cls, names: Sequence[str], *args: str | tuple[complex, str]) -> InternalState:
        """Create a state from register labels, optionally weighted.

        Examples:
            >>> InternalState.from_label(("S1", "O1"), "u0")
            |u0> InternalState object.

            >>> InternalState.from_label(("S1", "S2"), "ud", (-1, "du"))
            (|ud> - |du>)/√2 InternalState object.

        Args:
            names (Sequence[str]): Entity names, one per character of the labels.
            args (str | tuple[complex, str]): Labels or `(coefficient, label)` pairs.

        Raises:
            EvlabError: If a label is invalid for the entity kinds.

        Returns:
            InternalState: The normalized state.
        """
        kinds = "".join("s" if name.startswith("S") else "o" for name in names)
        state_vector = None
        for arg in args:
            coefficient, label = arg if isinstance(arg, tuple) else (1.0, arg)
            if not Ket.check_valid(label, kinds):
                raise EvlabError(f"Invalid register label {label!r} for entities {tuple(names)}.")
            # qiskit reads the leftmost character as its highest qubit, which is textbook qubit 0
            term = Statevector.from_label(Ket.to_qiskit_notation(label, kinds)) * coefficient
            state_vector = term if state_vector is None else state_vector + term
        if state_vector is None:
            raise EvlabError("At least one label is needed.")
        return cls(state_vector.data, names, kinds)

    @classmethod
    def product(cls, factors: Sequence[tuple[str, NDArray[np.complex128]]]) -> InternalState:
        """Tensor product of single-entity vectors given as `(name, amplitudes)` in register order."""
        data = tensor_product(*(np.asarray(vector, dtype=complex) for _, vector in factors))
        return cls(data, [name for name, _ in factors])

    def tensor(self, other: InternalState) -> InternalState:
        """The register `self ⊗ other`."""
        return InternalState(np.kron(self.data, other.data), self.names + other.names, self.kinds + other.kinds)

    def entropy(self) -> float:
        """Shannon entropy (base 2) of the outcome distribution in the computational basis."""
        return float(stats.entropy(self.state_vector.probabilities(), base=2))

    def apply(self, circuit: InternalCircuit) -> InternalState:
        """Evolve the state with a circuit written in textbook qubit order."""
        reversed_state_vector = self.state_vector.reverse_qargs()
        evolved = reversed_state_vector.evolve(circuit._qiskit_qc).reverse_qargs()
        return InternalState(evolved, self.names, self.kinds)

    def qubit(self, name: str) -> int:
        return self.names.index(name)

    def probabilities(self, names: Sequence[str] | None = None) -> dict[str, float]:
        """Born weights of the register configurations of some entities, keyed by register label."""
        names = list(self.names if names is None else names)
        qubits = [self.qubit(name) for name in names]
        kinds = "".join(self.kinds[q] for q in qubits)
        # qiskit's outcome index has its first qarg least significant; list them right to left
        qargs = [self._num_of_qubit - 1 - q for q in reversed(qubits)]
        weights = self.state_vector.probabilities(qargs)
        result = {}
        for bits in itertools.product("01", repeat=len(qubits)):
            result[Ket.from_bits("".join(bits), kinds)] = float(weights[int("".join(bits), 2)])
        return result

    def excited(self, name: str) -> float:
        """Probability that an entity is in its second label (spin 2, or aware)."""
        return float(self.state_vector.probabilities([self._num_of_qubit - 1 - self.qubit(name)])[1])

    def to_matrix(self) -> NDArray[np.complex128]:
        """The state as a column matrix."""
        return self.state_vector.data[np.newaxis].T

    def draw(self, output: str = "latex", source: bool = False, **kwargs) -> str | Latex:
        """Render the state: ``"latex"`` kets, ``"matrix"`` column, or any Statevector drawer output."""
        match output:
            case "matrix" | "vector":
                return latex_drawer.matrix_to_latex(self.to_matrix(), source=source)
            case "latex":
                return latex_drawer.state_to_latex(self, source=source, **kwargs)
            case _:
                return self.state_vector.draw(output=output)

    def __repr__(self) -> str:
        return f"InternalState(names={self.names}, data={np.round(self.data, 12).tolist()})"
