r"""Dense single-occupancy sector tensors.

When every species of a state holds exactly one quantum, the sector is the tensor product of the one-body spaces of
the species. A `SectorTensor` stores the amplitudes as one array axis per species (axis order = `ModeTable` order,
axis length `internal_dim * num_cells`) so that

    T[i_1, ..., i_k]  is the amplitude of  a†_{s_1, i_1} ... a†_{s_k, i_k} |0>,

which is the canonical basis vector because species blocks are contiguous and ordered in the table. One-body
operators act on a single axis without any fermionic sign.
"""

from __future__ import annotations

import string
import typing
from collections.abc import Mapping, Sequence

import numpy as np

from EVLAB.config import Settings
from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import SectorState, _num_words, _unpack_bits

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.lattice import ModeTable


class SectorTensor:
    """Amplitude tensor of a sector with one quantum per listed species.

    Args:
        table (ModeTable): The mode table.
        species (Sequence[str]): Species ids, one per axis; reordered to table order (with the data transposed).
        data (NDArray[np.complex128]): Amplitudes, one axis per species in the order given.
    """

    __slots__ = ("table", "species", "data")

    def __init__(self, table: ModeTable, species: Sequence[str], data: NDArray[np.complex128]):
        order = [spec.id for spec in table.species]
        species = list(species)
        if len(set(species)) != len(species):
            raise PreconditionError(f"Repeated species in {species}.")
        permutation = sorted(range(len(species)), key=lambda axis: order.index(species[axis]))
        data = np.asarray(data, dtype=np.complex128)
        expected = tuple(table.one_body_dim(species[axis]) for axis in permutation)
        data = np.transpose(data, permutation) if permutation != list(range(len(species))) else data
        if data.shape != expected:
            raise PreconditionError(f"Sector tensor shape {data.shape} does not match {expected}.")
        self.table = table
        self.species: tuple[str, ...] = tuple(species[axis] for axis in permutation)
        self.data = data

    @classmethod
    def product(cls, table: ModeTable, factors: Mapping[str, NDArray[np.complex128]]) -> SectorTensor:
        """Tensor product of one-body amplitude vectors, one per species."""
        species = list(factors)
        data = np.ones((), dtype=complex)
        for species_id in species:
            data = np.multiply.outer(data, np.asarray(factors[species_id], dtype=complex))
        return cls(table, species, data)

    @classmethod
    def from_state(cls, state: SectorState, species: Sequence[str] | None = None) -> SectorTensor:
        """Convert a `SectorState` holding exactly one quantum of each listed species and nothing else.

        Raises:
            PreconditionError: If a configuration holds another species or a different quantum count.
        """
        table = state.table
        if species is None:
            occupations = state.occupations or {}
            species = [species_id for species_id, count in occupations.items() if count == 1]
        counts = state.species_counts()
        for spec in table.species:
            wanted = 1 if spec.id in species else 0
            if np.any(counts[spec.id] != wanted):
                raise PreconditionError(f"State is not a single-occupancy sector of {list(species)} ({spec.id}).")
        ordered = [spec.id for spec in table.species if spec.id in species]
        data = np.zeros(tuple(table.one_body_dim(species_id) for species_id in ordered), dtype=complex)
        if len(state):
            positions = []
            for species_id in ordered:
                block = table.species_slice(species_id)
                positions.append(np.argmax(_unpack_bits(state.configs, block.start, block.stop), axis=1))
            data[tuple(positions)] = state.amplitudes
        return cls(table, ordered, data)

    def to_state(self) -> SectorState:
        """Convert to a sparse `SectorState`, dropping amplitudes below the prune threshold."""
        if not self.species:
            return SectorState.vacuum(self.table) * complex(self.data)
        indices = np.nonzero(np.abs(self.data) > Settings.prune_threshold)
        count = len(indices[0])
        configs = np.zeros((count, _num_words(len(self.table))), dtype=np.uint64)
        rows = np.arange(count)
        for species_id, local in zip(self.species, indices):
            ranks = self.table.species_slice(species_id).start + local
            configs[rows, ranks // 64] |= np.left_shift(np.uint64(1), (ranks % 64).astype(np.uint64))
        return SectorState(self.table, configs, self.data[indices])

    # ------------------------------------------------------------------ vector-space operations

    def _like(self, data: NDArray[np.complex128]) -> SectorTensor:
        return SectorTensor(self.table, self.species, data)

    def __add__(self, other: SectorTensor) -> SectorTensor:
        return self._like(self.data + other.data)

    def __sub__(self, other: SectorTensor) -> SectorTensor:
        return self._like(self.data - other.data)

    def __mul__(self, factor: complex) -> SectorTensor:
        return self._like(self.data * factor)

    __rmul__ = __mul__

    def __neg__(self) -> SectorTensor:
        return self._like(-self.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    @property
    def norm_sq(self) -> float:
        return float(np.vdot(self.data, self.data).real)

    def inner(self, other: SectorTensor) -> complex:
        """The inner product `<self|other>`."""
        return complex(np.vdot(self.data, other.data))

    def axis(self, species_id: str) -> int:
        try:
            return self.species.index(species_id)
        except ValueError:
            raise PreconditionError(f"Species {species_id} is not an axis of this tensor.") from None

    # ------------------------------------------------------------------ operators

    def apply_one_body(self, species_id: str, matrix: NDArray[np.complex128]) -> SectorTensor:
        """Apply a one-body matrix on the axis of `species_id`."""
        axis = self.axis(species_id)
        moved = np.tensordot(np.asarray(matrix), self.data, axes=([1], [axis]))
        return self._like(np.moveaxis(moved, 0, axis))

    def split_axes(self) -> NDArray[np.complex128]:
        """View of the data with each species axis split into `(internal, cell)`."""
        shape = []
        for species_id in self.species:
            spec = self.table.spec(species_id)
            shape.extend((spec.internal_dim, self.table.lattice.num_cells))
        return self.data.reshape(shape)

    def apply_local(
        self,
        internal: Mapping[str, NDArray[np.complex128]],
        gate: NDArray[np.float64],
        gate_species: Sequence[str],
    ) -> SectorTensor:
        """Apply a product of internal-label matrices weighted by a position-dependent gate.

        Computes `sum_cells gate(cells) * (prod_s M_s)` where `M_s` acts on the internal label of species `s` at the
        cell it occupies and `gate` depends on the cells of `gate_species` (an array with one axis per listed
        species, of length `num_cells`). Species absent from both arguments are untouched.

        Args:
            internal (Mapping[str, NDArray[np.complex128]]): Internal-label matrix per species.
            gate (NDArray[np.float64]): Position weights, one axis per entry of `gate_species`.
            gate_species (Sequence[str]): The species whose cells the gate depends on.

        Returns:
            SectorTensor: The image of the tensor.
        """
        split = self.split_axes()
        letters = iter(string.ascii_letters)
        internal_index = {species_id: next(letters) for species_id in self.species}
        cell_index = {species_id: next(letters) for species_id in self.species}
        output = {species_id: internal_index[species_id] for species_id in self.species}
        operands: list[NDArray] = []
        subscripts: list[str] = []
        for species_id, matrix in internal.items():
            fresh = next(letters)
            operands.append(np.asarray(matrix))
            subscripts.append(fresh + internal_index[species_id])
            output[species_id] = fresh
        operands.append(np.asarray(gate))
        subscripts.append("".join(cell_index[species_id] for species_id in gate_species))
        source = "".join(internal_index[s] + cell_index[s] for s in self.species)
        target = "".join(output[s] + cell_index[s] for s in self.species)
        expression = ",".join([*subscripts, source]) + "->" + target
        result = np.einsum(expression, *operands, split, optimize=True)
        return self._like(result.reshape(self.data.shape))

    def marginal_density(self, species_id: str) -> NDArray[np.float64]:
        """Occupation probability of every one-body mode of one species."""
        axis = self.axis(species_id)
        others = tuple(i for i in range(self.data.ndim) if i != axis)
        return np.sum(np.abs(self.data) ** 2, axis=others)

    def reduced_density_matrix(self, species_id: str) -> NDArray[np.complex128]:
        """One-body reduced density matrix `rho[a, b] = <a†_b a_a>` of one species."""
        axis = self.axis(species_id)
        flat = np.moveaxis(self.data, axis, 0).reshape(self.data.shape[axis], -1)
        return flat @ flat.conj().T

    def __repr__(self) -> str:
        return f"SectorTensor(species={self.species}, shape={self.data.shape}, norm_sq={self.norm_sq:.12g})"
