r"""Spatial lattice, field species and the canonical ordering of fermionic modes.

A lattice discretizes the continuum into `L^dim` cubic cells of side `spacing`. Every field species contributes
`internal_dim * L^dim` fermionic modes. The `ModeTable` fixes one global order of all modes (species list order,
then internal label, then cell), and that order fixes every fermionic sign in the package:

    |r1 r2 ... rk> = a†_{r1} a†_{r2} ... a†_{rk} |0>   with r1 < r2 < ... < rk

Fictitious species are always placed after the physical ones, whatever order they are listed in.
"""

from __future__ import annotations

import enum
import itertools
import typing
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from EVLAB.exceptions import PreconditionError

if typing.TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from numpy.typing import NDArray


class Boundary(enum.Enum):
    """Boundary condition of the lattice."""

    OPEN = "open"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class Lattice:
    """A hypercubic lattice of `sites_per_axis ** dim` cells.

    Cells are numbered in row-major order over the axes; the centre of cell `k` along an axis is `(k + 1/2) * spacing`.

    Attributes:
        dim (int): Spatial dimension, 1, 2 or 3.
        sites_per_axis (int): Number of cells `L` along each axis.
        spacing (float): Cell side `Δx`.
        boundary (Boundary): Open or periodic boundary.
    """

    dim: int = 1
    sites_per_axis: int = 48
    spacing: float = 1.0
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise PreconditionError(f"Lattice dimension must be 1, 2 or 3, got {self.dim}.")
        if self.sites_per_axis < 1:
            raise PreconditionError("A lattice needs at least one site per axis.")
        if not self.spacing > 0:
            raise PreconditionError("Lattice spacing must be positive.")
        if not isinstance(self.boundary, Boundary):
            object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def num_cells(self) -> int:
        """Total number of cells, `L ** dim`."""
        return self.sites_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        """Volume `Δx ** dim` of one cell."""
        return self.spacing**self.dim

    @property
    def extent(self) -> float:
        """Side length `L * Δx` of the lattice."""
        return self.sites_per_axis * self.spacing

    @cached_property
    def cell_coordinates(self) -> NDArray[np.int64]:
        """Integer coordinates of every cell, shape `(num_cells, dim)`."""
        grids = np.indices((self.sites_per_axis,) * self.dim).reshape(self.dim, -1)
        return grids.T.copy()

    @cached_property
    def cell_centers(self) -> NDArray[np.float64]:
        """Cell centres `(k + 1/2) Δx`, shape `(num_cells, dim)`."""
        return (self.cell_coordinates + 0.5) * self.spacing

    def cell_index(self, coordinates: Sequence[int]) -> int:
        """Flat index of the cell with the given integer coordinates."""
        return int(np.ravel_multi_index(tuple(coordinates), (self.sites_per_axis,) * self.dim))

    def nearest_cell(self, position: Sequence[float] | float) -> int:
        """Index of the cell whose centre is closest to `position` (clipped to the lattice)."""
        position = np.atleast_1d(np.asarray(position, dtype=float))
        coordinates = np.clip(np.floor(position / self.spacing), 0, self.sites_per_axis - 1).astype(int)
        return self.cell_index(coordinates)

    def displacement(self, a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
        """Displacement `a - b` between positions, using the minimum image on periodic lattices."""
        delta = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.boundary is Boundary.PERIODIC:
            delta = delta - self.extent * np.round(delta / self.extent)
        return delta

    @cached_property
    def distance_matrix(self) -> NDArray[np.float64]:
        """Centre-to-centre distance between every pair of cells, shape `(num_cells, num_cells)`."""
        centers = self.cell_centers
        delta = self.displacement(centers[:, np.newaxis, :], centers[np.newaxis, :, :])
        return np.sqrt(np.sum(delta**2, axis=-1))

    def neighbor_pairs(self) -> list[tuple[int, int]]:
        """Ordered nearest-neighbour pairs `(i, j)`, each bond listed in both directions.

        On a periodic axis with two sites both bonds of a cell point to the same neighbour and are listed twice.
        """
        pairs = []
        size = self.sites_per_axis
        for index, coordinates in enumerate(self.cell_coordinates):
            for axis in range(self.dim):
                for step in (-1, 1):
                    shifted = coordinates.copy()
                    shifted[axis] += step
                    if self.boundary is Boundary.PERIODIC:
                        shifted[axis] %= size
                    elif not 0 <= shifted[axis] < size:
                        continue
                    pairs.append((index, self.cell_index(shifted)))
        return pairs


class SpeciesKind(enum.Enum):
    """Role of a field species in the measurement model."""

    SYSTEM = "system"
    OBSERVER = "observer"
    COMPARATOR = "comparator"
    FICTITIOUS = "fictitious"


_DEFAULT_LABELS = {
    SpeciesKind.SYSTEM: (1, 2),
    SpeciesKind.OBSERVER: (0, 1),
    SpeciesKind.COMPARATOR: (0, 1),
    SpeciesKind.FICTITIOUS: (0,),
}


@dataclass(frozen=True)
class SpeciesSpec:
    """A fermionic field species.

    Attributes:
        id (str): Symbolic name, e.g. ``"S1"``, ``"O2"``, ``"C"`` or ``"Z_S1"``.
        kind (SpeciesKind): System (spin labels 1, 2), observer or comparator (awareness 0, 1), or fictitious.
        mass (float | None): Mass of the quanta; None for static (fictitious) fields.
        internal_labels (tuple[int, ...]): The internal labels, fixed by `kind`.
    """

    id: str
    kind: SpeciesKind
    mass: float | None = 1.0
    internal_labels: tuple[int, ...] = field(default=())

    def __post_init__(self):
        expected = _DEFAULT_LABELS[self.kind]
        if not self.internal_labels:
            object.__setattr__(self, "internal_labels", expected)
        elif tuple(self.internal_labels) != expected:
            raise PreconditionError(f"Species {self.id} of kind {self.kind.value} must carry labels {expected}.")
        if self.kind is SpeciesKind.FICTITIOUS:
            object.__setattr__(self, "mass", None)
        elif self.mass is None or not self.mass > 0:
            raise PreconditionError(f"Physical species {self.id} needs a positive mass.")

    @classmethod
    def system(cls, id: str, mass: float = 1.0) -> SpeciesSpec:
        """A spin-1/2 system species with labels 1 and 2."""
        return cls(id, SpeciesKind.SYSTEM, mass)

    @classmethod
    def observer(cls, id: str, mass: float = 1.0) -> SpeciesSpec:
        """An observer species with awareness labels 0 and 1."""
        return cls(id, SpeciesKind.OBSERVER, mass)

    @classmethod
    def comparator(cls, id: str, mass: float = 1.0) -> SpeciesSpec:
        """A comparator species with awareness labels 0 and 1."""
        return cls(id, SpeciesKind.COMPARATOR, mass)

    @classmethod
    def fictitious(cls, id: str) -> SpeciesSpec:
        """A static single-level fictitious species."""
        return cls(id, SpeciesKind.FICTITIOUS, None)

    @property
    def internal_dim(self) -> int:
        return len(self.internal_labels)

    @property
    def fictitious_field(self) -> bool:
        return self.kind is SpeciesKind.FICTITIOUS

    def label_position(self, label: int) -> int:
        """Position of an internal label in `internal_labels`."""
        try:
            return self.internal_labels.index(label)
        except ValueError:
            raise PreconditionError(f"Species {self.id} has no internal label {label}.") from None


class ModeIndex(typing.NamedTuple):
    """One fermionic mode: a species, an internal label and a cell, with its global rank."""

    species: str
    internal: int
    cell: int
    global_rank: int


class ModeTable:
    """Canonical ordering of all fermionic modes of a set of species on a lattice.

    Args:
        lattice (Lattice): The spatial lattice.
        species (Sequence[SpeciesSpec]): The species, in the order that fixes the fermionic signs. Fictitious
            species are moved after the physical ones, keeping their relative order.

    Raises:
        PreconditionError: If two species share an id.
    """

    def __init__(self, lattice: Lattice, species: Sequence[SpeciesSpec]):
        ids = [spec.id for spec in species]
        if len(set(ids)) != len(ids):
            raise PreconditionError(f"Duplicate species ids in {ids}.")
        physical = [spec for spec in species if not spec.fictitious_field]
        fictitious = [spec for spec in species if spec.fictitious_field]
        self.lattice = lattice
        self.species: tuple[SpeciesSpec, ...] = tuple(physical + fictitious)
        self._by_id = {spec.id: spec for spec in self.species}
        self._offsets: dict[str, int] = {}
        offset = 0
        for spec in self.species:
            self._offsets[spec.id] = offset
            offset += spec.internal_dim * lattice.num_cells
        self._num_modes = offset
        self._starts = np.array([self._offsets[spec.id] for spec in self.species])

    def __len__(self) -> int:
        return self._num_modes

    def __contains__(self, species_id: str) -> bool:
        return species_id in self._by_id

    def __iter__(self) -> Iterator[ModeIndex]:
        for rank in range(self._num_modes):
            yield self.mode(rank)

    @property
    def num_modes(self) -> int:
        return self._num_modes

    @property
    def physical_species(self) -> tuple[SpeciesSpec, ...]:
        return tuple(spec for spec in self.species if not spec.fictitious_field)

    def spec(self, species_id: str) -> SpeciesSpec:
        """The `SpeciesSpec` registered under `species_id`."""
        try:
            return self._by_id[species_id]
        except KeyError:
            raise PreconditionError(f"Unknown species {species_id}.") from None

    def one_body_dim(self, species_id: str) -> int:
        """Number of modes of one species, `internal_dim * num_cells`."""
        return self.spec(species_id).internal_dim * self.lattice.num_cells

    def rank(self, species_id: str, internal: int, cell: int) -> int:
        """Global rank of the mode `(species, internal label, cell)`."""
        spec = self.spec(species_id)
        if not 0 <= cell < self.lattice.num_cells:
            raise PreconditionError(f"Cell {cell} is outside the lattice.")
        return self._offsets[species_id] + spec.label_position(internal) * self.lattice.num_cells + cell

    def index(self, species_id: str, internal: int, cell: int) -> ModeIndex:
        """The `ModeIndex` of `(species, internal label, cell)`."""
        return ModeIndex(species_id, internal, cell, self.rank(species_id, internal, cell))

    def mode(self, rank: int) -> ModeIndex:
        """The `ModeIndex` with global rank `rank`."""
        if not 0 <= rank < self._num_modes:
            raise PreconditionError(f"Rank {rank} is outside [0, {self._num_modes}).")
        spec = self.species_of(rank)
        local = rank - self._offsets[spec.id]
        position, cell = divmod(local, self.lattice.num_cells)
        return ModeIndex(spec.id, spec.internal_labels[position], cell, rank)

    def species_of(self, rank: int) -> SpeciesSpec:
        """The species owning the mode of rank `rank`."""
        position = int(np.searchsorted(self._starts, rank, side="right")) - 1
        return self.species[position]

    def species_slice(self, species_id: str) -> slice:
        """Slice of global ranks belonging to one species."""
        start = self._offsets[self.spec(species_id).id]
        return slice(start, start + self.one_body_dim(species_id))

    def species_modes(self, species_id: str, internal: int | None = None) -> list[ModeIndex]:
        """All modes of a species, optionally restricted to one internal label."""
        spec = self.spec(species_id)
        labels = spec.internal_labels if internal is None else (internal,)
        return [
            self.index(species_id, label, cell)
            for label, cell in itertools.product(labels, range(self.lattice.num_cells))
        ]

    def fictitious_ranks(self) -> NDArray[np.int64]:
        """Global ranks of every fictitious mode."""
        ranks = [
            np.arange(self.species_slice(spec.id).start, self.species_slice(spec.id).stop)
            for spec in self.species
            if spec.fictitious_field
        ]
        return np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)
