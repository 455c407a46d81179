r"""Fictitious fields and the effectively local transformation to the vacuum representation.

Every physical quantum of the initial state is paired with a static fictitious quantum `ζ` of its own species
`Z_<id>`. With `c†` the creator of the physical packet (internal state included) and `d† = sum ψ'(y) ζ†(y)` the
creator of the fictitious packet, the skew-Hermitian generator

    W = B† - B,   B† = c† d†,

rotates the vacuum into `B†|0>` within the two-dimensional space `{|0>, B†|0>}`: `exp(θW)|0> = cosθ|0> + sinθ B†|0>`.
The EPRB singlet pair uses the four-field block `B† = sum η[s1, s2] φ1†_s1 φ2†_s2 ζ1† ζ2†`. All generators of a
scenario commute, so `V = exp(π/2 sum W)` maps the vacuum onto the dressed state `|ψ'_in> = prod B†|0>` and `V†`
maps it back.

Conjugating an annihilator of the dressed species gives the closed form

    V† a V = a + {a, c†} (d† - c),

which touches only modes where the physical or the fictitious packet lives.
"""

from __future__ import annotations

import enum
import logging
import math
import typing
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from EVLAB.exceptions import PreconditionError
from EVLAB.expm import evolve_exp
from EVLAB.fock_state import (
    OperatorTerm,
    SectorState,
    apply_terms,
    creation_matrix,
    hermiticity_defect,
    terms_to_matrix,
)
from EVLAB.lattice import Lattice, ModeTable, SpeciesKind, SpeciesSpec
from EVLAB.model import SINGLET, PacketEntry, build_packet_state, number_density_terms
from EVLAB.scenario import ScenarioKind

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.lattice import ModeIndex

logger = logging.getLogger(__name__)

DENSE_MODE_LIMIT = 14
NORMALIZATION_TOLERANCE = 1e-10
_SHAPES = ("gaussian", "uniform", "random")


class DHKind(enum.Enum):
    SYSTEM = "W_S"
    OBSERVER = "W_O"
    SINGLET = "W_S_E"
    COMPARATOR = "W_C"


_PARTNER_KIND = {
    DHKind.SYSTEM: SpeciesKind.SYSTEM,
    DHKind.OBSERVER: SpeciesKind.OBSERVER,
    DHKind.COMPARATOR: SpeciesKind.COMPARATOR,
}


def fictitious_id(partner: str) -> str:
    return f"Z_{partner}"


@dataclass(frozen=True)
class FictitiousFieldSpec:
    """Wavefunction of the fictitious quantum dressing one physical species.

    Attributes:
        partner (str): Physical species id.
        wavefunction (NDArray): One amplitude per cell, norm 1 within 1e-10.
    """

    partner: str
    wavefunction: NDArray[np.complex128]

    def __post_init__(self):
        wavefunction = np.asarray(self.wavefunction, dtype=complex).reshape(-1)
        if abs(np.linalg.norm(wavefunction) - 1) > NORMALIZATION_TOLERANCE:
            raise PreconditionError(f"Fictitious wavefunction of {self.partner} is not normalized.")
        object.__setattr__(self, "wavefunction", wavefunction)

    @property
    def species_id(self) -> str:
        return fictitious_id(self.partner)

    @classmethod
    def draw(
        cls,
        partner: str,
        lattice: Lattice,
        shape: str = "gaussian",
        rng: np.random.Generator | None = None,
        center: float | Sequence[float] | None = None,
        width: float | None = None,
    ) -> FictitiousFieldSpec:
        """A normalized wavefunction of the requested shape.

        ``"gaussian"`` is centred at `center` (the lattice middle by default) with `width` (one cell by default),
        ``"uniform"`` is flat and ``"random"`` has independent complex normal amplitudes.
        """
        match shape:
            case "gaussian":
                centers = lattice.cell_centers
                origin = np.mean(centers, axis=0) if center is None else np.atleast_1d(center)
                width = width or lattice.spacing
                offset = lattice.displacement(centers, np.asarray(origin, dtype=float))
                values = np.exp(-np.sum(offset**2, axis=1) / (2 * width**2)).astype(complex)
            case "uniform":
                values = np.ones(lattice.num_cells, dtype=complex)
            case "random":
                rng = rng or np.random.default_rng()
                values = rng.normal(size=lattice.num_cells) + 1j * rng.normal(size=lattice.num_cells)
            case _:
                raise PreconditionError(f"Unknown fictitious wavefunction shape {shape!r}; use one of {_SHAPES}.")
        return cls(partner, values / np.linalg.norm(values))


@dataclass
class DHGenerator:
    """A skew-Hermitian generator `W = B† - B`.

    Attributes:
        kind (DHKind): Which quanta it dresses.
        partners (tuple[str, ...]): Physical species dressed (two for the singlet).
        creator_terms (list[OperatorTerm]): The terms of `B†`.
        vectors (dict[str, NDArray]): One-body amplitudes of the physical packets, over (internal, cell); for the
            singlet only the spatial amplitudes.
        fields (dict[str, NDArray]): Fictitious wavefunction per partner.
        norm_bound (float): Bound of `||W||`.
    """

    kind: DHKind
    partners: tuple[str, ...]
    creator_terms: list[OperatorTerm]
    vectors: dict[str, NDArray[np.complex128]]
    fields: dict[str, NDArray[np.complex128]]
    norm_bound: float = 2.0

    @cached_property
    def terms(self) -> list[OperatorTerm]:
        return self.creator_terms + [term.adjoint().scaled(-1) for term in self.creator_terms]

    def create(self, state: SectorState) -> SectorState:
        """`B† |state>`."""
        return apply_terms(state, self.creator_terms)

    def apply(self, state: SectorState) -> SectorState:
        """`W |state>`."""
        return apply_terms(state, self.terms)

    def matrix(self, num_modes: int) -> sparse.csr_matrix:
        return terms_to_matrix(self.terms, num_modes)


def build_generator(
    kind: DHKind,
    table: ModeTable,
    vectors: Mapping[str, NDArray[np.complex128]],
    fields: Mapping[str, FictitiousFieldSpec],
    eta: NDArray[np.complex128] = SINGLET,
) -> DHGenerator:
    """Discretize the generator of one kind.

    Args:
        kind (DHKind): Generator kind.
        table (ModeTable): Mode table holding the physical species and their fictitious partners.
        vectors (Mapping[str, NDArray]): For a single partner its one-body amplitudes over (internal, cell); for the
            singlet the spatial amplitudes of ``S1`` and ``S2``.
        fields (Mapping[str, FictitiousFieldSpec]): Fictitious wavefunction per partner.
        eta (NDArray, optional): Spin coefficients of the singlet block. Defaults to `SINGLET`.

    Raises:
        PreconditionError: If a partner has the wrong kind, a vector has the wrong shape or a field is missing.
    """
    cells = table.lattice.num_cells
    partners = tuple(vectors)
    normalized = {}
    for partner in partners:
        vector = np.asarray(vectors[partner], dtype=complex).reshape(-1)
        expected = cells if kind is DHKind.SINGLET else table.one_body_dim(partner)
        if vector.shape != (expected,) or not np.linalg.norm(vector) > 0:
            raise PreconditionError(f"Packet of {partner} needs {expected} non-zero amplitudes.")
        if partner not in fields:
            raise PreconditionError(f"No fictitious field for {partner}.")
        normalized[partner] = vector / np.linalg.norm(vector)

    def fictitious_modes(partner: str) -> list[tuple[complex, ModeIndex]]:
        wavefunction = fields[partner].wavefunction
        return [
            (wavefunction[y], table.index(fictitious_id(partner), 0, y)) for y in np.flatnonzero(np.abs(wavefunction))
        ]

    terms = []
    if kind is DHKind.SINGLET:
        if set(partners) != {"S1", "S2"}:
            raise PreconditionError(f"The singlet generator dresses S1 and S2, got {partners}.")
        first, second = normalized["S1"], normalized["S2"]
        spin_labels = table.spec("S1").internal_labels
        for s1, s2 in zip(*np.nonzero(eta)):
            for x1 in np.flatnonzero(np.abs(first)):
                for x2 in np.flatnonzero(np.abs(second)):
                    physical = eta[s1, s2] * first[x1] * second[x2]
                    m1 = table.index("S1", spin_labels[s1], int(x1))
                    m2 = table.index("S2", spin_labels[s2], int(x2))
                    for c1, z1 in fictitious_modes("S1"):
                        for c2, z2 in fictitious_modes("S2"):
                            terms.append(OperatorTerm(physical * c1 * c2, (m1, m2, z1, z2)))
        norm_bound = 2.0 * float(np.sum(np.abs(eta)))
    else:
        (partner,) = partners
        if table.spec(partner).kind is not _PARTNER_KIND[kind]:
            raise PreconditionError(f"{kind.value} cannot dress {partner} ({table.spec(partner).kind.value}).")
        start = table.species_slice(partner).start
        vector = normalized[partner]
        for local in np.flatnonzero(np.abs(vector)):
            mode = table.mode(start + int(local))
            for coefficient, zeta in fictitious_modes(partner):
                terms.append(OperatorTerm(vector[local] * coefficient, (mode, zeta)))
        norm_bound = 2.0
    logger.debug("Generator %s for %s: %d creator terms", kind.value, partners, len(terms))
    return DHGenerator(
        kind,
        partners,
        terms,
        normalized,
        {partner: fields[partner].wavefunction for partner in partners},
        norm_bound,
    )


def dh_table(physical: Sequence[SpeciesSpec], lattice: Lattice) -> ModeTable:
    """Mode table of the physical species followed by one fictitious partner each."""
    fictitious = [SpeciesSpec.fictitious(fictitious_id(spec.id)) for spec in physical]
    return ModeTable(lattice, [*physical, *fictitious])


# ---------------------------------------------------------------------- dressed scenarios


@dataclass
class DressedScenario:
    """Physical initial state, its dressed counterpart and the generators relating them.

    Attributes:
        kind (ScenarioKind): Single observer or EPRB.
        table (ModeTable): Physical and fictitious modes.
        packets (dict[str, NDArray]): Spatial amplitudes of every physical quantum.
        spin (NDArray): Spin of the single-observer system.
        fields (dict[str, FictitiousFieldSpec]): Fictitious wavefunctions.
        generators (list[DHGenerator]): Generators in application order of their `V` factors (last applied first).
        physical (SectorState): `|ψ_in>`.
        dressed (SectorState): `|ψ'_in>`.
    """

    kind: ScenarioKind
    table: ModeTable
    packets: dict[str, NDArray[np.complex128]]
    spin: NDArray[np.complex128]
    fields: dict[str, FictitiousFieldSpec]
    generators: list[DHGenerator] = field(default_factory=list)
    physical: SectorState | None = None
    dressed: SectorState | None = None

    @property
    def terms(self) -> list[OperatorTerm]:
        return [term for generator in self.generators for term in generator.terms]

    @property
    def norm_bound(self) -> float:
        return sum(generator.norm_bound for generator in self.generators)

    def redraw(self, fields: Mapping[str, FictitiousFieldSpec]) -> DressedScenario:
        """The same physical content dressed with other fictitious wavefunctions."""
        return dress(self.kind, self.table, self.packets, self.spin, fields)


def dress(
    kind: ScenarioKind,
    table: ModeTable,
    packets: Mapping[str, NDArray[np.complex128]],
    spin: Sequence[complex] = (1.0, 0.0),
    fields: Mapping[str, FictitiousFieldSpec] | None = None,
    shape: str = "gaussian",
    seed: int = 0,
) -> DressedScenario:
    """Build the physical and dressed initial states of a scenario.

    Args:
        kind (ScenarioKind): Single observer (``S1, O1``) or EPRB (``S1, S2, O1, O2, C``).
        table (ModeTable): From `dh_table`.
        packets (Mapping[str, NDArray]): Spatial amplitudes per physical species.
        spin (Sequence[complex], optional): Spin of the single-observer system. Defaults to spin up.
        fields (Mapping[str, FictitiousFieldSpec] | None, optional): Fictitious wavefunctions; drawn with `shape`
            around each packet's centroid when omitted.
        shape (str, optional): Shape of drawn wavefunctions. Defaults to ``"gaussian"``.
        seed (int, optional): Seed of random draws. Defaults to 0.
    """
    species = ("S1", "O1") if kind is ScenarioKind.SINGLE_OBSERVER else ("S1", "S2", "O1", "O2", "C")
    lattice = table.lattice
    packets = {s: np.asarray(packets[s], dtype=complex).reshape(-1) for s in species}
    packets = {s: amplitude / np.linalg.norm(amplitude) for s, amplitude in packets.items()}
    spin = np.asarray(spin, dtype=complex)
    spin = spin / np.linalg.norm(spin)
    if fields is None:
        rng = np.random.default_rng(seed)
        fields = {}
        for s in species:
            weights = np.abs(packets[s]) ** 2
            centroid = weights @ lattice.cell_centers
            fields[s] = FictitiousFieldSpec.draw(s, lattice, shape, rng, centroid)
    fields = dict(fields)
    unaware = np.eye(2, dtype=complex)[0]

    generators = []
    if kind is ScenarioKind.EPRB:
        generators.append(
            build_generator(DHKind.SINGLET, table, {"S1": packets["S1"], "S2": packets["S2"]}, fields)
        )
    else:
        generators.append(build_generator(DHKind.SYSTEM, table, {"S1": np.kron(spin, packets["S1"])}, fields))
    for s in species:
        match s[0]:
            case "O":
                generators.append(build_generator(DHKind.OBSERVER, table, {s: np.kron(unaware, packets[s])}, fields))
            case "C":
                generators.append(build_generator(DHKind.COMPARATOR, table, {s: np.kron(unaware, packets[s])}, fields))

    entries = [PacketEntry(s, spin if s[0] == "S" else 0, packets[s]) for s in species]
    singlet = ("S1", "S2") if kind is ScenarioKind.EPRB else None
    physical = build_packet_state(table, entries, singlet)
    dressed = SectorState.vacuum(table)
    for generator in reversed(generators):
        dressed = generator.create(dressed)
    return DressedScenario(kind, table, packets, spin, fields, generators, physical, dressed)


def toy_packets(kind: ScenarioKind, lattice: Lattice) -> dict[str, NDArray[np.complex128]]:
    """Small deterministic packets (one per physical species) spread over a few-cell lattice."""
    species = ("S1", "O1") if kind is ScenarioKind.SINGLE_OBSERVER else ("S1", "S2", "O1", "O2", "C")
    x = lattice.cell_centers[:, 0]
    packets = {}
    for index, s in enumerate(species):
        center = x[index % len(x)]
        packets[s] = np.exp(-((x - center) ** 2) / 2 + 0.3j * (index + 1) * x)
    return packets


def dh_scenario(
    kind: ScenarioKind, sites: int, shape: str = "gaussian", seed: int = 0, spin: Sequence[complex] = (0.6, 0.8)
) -> DressedScenario:
    """Dressed scenario on a 1-D lattice of `sites` cells with `toy_packets`."""
    species = ("S1", "O1") if kind is ScenarioKind.SINGLE_OBSERVER else ("S1", "S2", "O1", "O2", "C")
    lattice = Lattice(dim=1, sites_per_axis=sites)
    physical = [
        SpeciesSpec.system(s) if s[0] == "S" else SpeciesSpec.observer(s) if s[0] == "O" else SpeciesSpec.comparator(s)
        for s in species
    ]
    table = dh_table(physical, lattice)
    return dress(kind, table, toy_packets(kind, lattice), spin, shape=shape, seed=seed)


# ---------------------------------------------------------------------- transformations


def dh_transform_state(
    generators: Sequence[DHGenerator], state: SectorState, angle: float = math.pi / 2, inverse: bool = True
) -> SectorState:
    """`V† |state>` (or `V |state>`) with `V = exp(angle · sum W)`, by `evolve_exp`."""
    terms = [term for generator in generators for term in generator.terms]
    bound = sum(generator.norm_bound for generator in generators)
    return evolve_exp(state, terms, -angle if inverse else angle, norm_bound=bound)


def vacuum_fidelity(state: SectorState) -> float:
    """`|<0|state>|²`."""
    return abs(state.amplitude_of(())) ** 2


def _dense_unitary(generators: Sequence[DHGenerator], num_modes: int, angle: float) -> sparse.csc_matrix:
    if num_modes > DENSE_MODE_LIMIT:
        raise PreconditionError(f"Dense transformations are limited to {DENSE_MODE_LIMIT} modes, got {num_modes}.")
    generator = sum((g.matrix(num_modes) for g in generators), sparse.csr_matrix((1 << num_modes, 1 << num_modes)))
    return sparse_linalg.expm((angle * generator).tocsc())


def _annihilator(table: ModeTable, mode: ModeIndex | Sequence[tuple[complex, ModeIndex]]) -> sparse.csr_matrix:
    smeared = [(1.0, mode)] if hasattr(mode, "global_rank") else list(mode)
    num_modes = len(table)
    total = sparse.csr_matrix((1 << num_modes, 1 << num_modes), dtype=complex)
    for coefficient, single in smeared:
        total = total + coefficient * creation_matrix(single.global_rank, num_modes).T.astype(complex)
    return total.tocsr()


def dh_transform_operator(
    table: ModeTable,
    generators: Sequence[DHGenerator],
    mode: ModeIndex | Sequence[tuple[complex, ModeIndex]],
    angle: float = math.pi / 2,
) -> sparse.csr_matrix:
    """Dense `V† a V` for a mode or a smeared annihilator `sum c a`.

    Raises:
        PreconditionError: Beyond 14 modes.
    """
    unitary = _dense_unitary(generators, len(table), angle)
    field_matrix = _annihilator(table, mode)
    return (unitary.conj().T @ field_matrix @ unitary).tocsr()


def _partner_generator(generators: Sequence[DHGenerator], species_id: str) -> DHGenerator | None:
    for generator in generators:
        if species_id in generator.partners:
            if generator.kind is DHKind.SINGLET:
                raise PreconditionError("The closed form covers bilinear generators, not the singlet block.")
            return generator
    return None


def closed_form_coefficients(
    table: ModeTable, generators: Sequence[DHGenerator], mode: ModeIndex
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Coefficients of `V† a V - a` on every annihilator and every creator, indexed by global rank.

    `V† a V - a = u (d† - c)` with `u = {a, c†}` the packet amplitude at the mode.
    """
    annihilators = np.zeros(len(table), dtype=complex)
    creators = np.zeros(len(table), dtype=complex)
    generator = _partner_generator(generators, mode.species)
    if generator is None:
        return annihilators, creators
    (partner,) = generator.partners
    start = table.species_slice(partner).start
    vector = generator.vectors[partner]
    weight = vector[mode.global_rank - start]
    if weight == 0:
        return annihilators, creators
    annihilators[table.species_slice(partner)] = -weight * vector.conj()
    creators[table.species_slice(fictitious_id(partner))] = weight * generator.fields[partner]
    return annihilators, creators


def closed_form_operator(table: ModeTable, generators: Sequence[DHGenerator], mode: ModeIndex) -> sparse.csr_matrix:
    """Dense matrix of the closed form `a + u (d† - c)`."""
    annihilators, creators = closed_form_coefficients(table, generators, mode)
    num_modes = len(table)
    operator = _annihilator(table, mode)
    for rank in np.flatnonzero(np.abs(annihilators) + np.abs(creators)):
        creator = creation_matrix(int(rank), num_modes).astype(complex)
        operator = operator + annihilators[rank] * creator.T + creators[rank] * creator
    return operator.tocsr()


def closed_form_deviation(table: ModeTable, generators: Sequence[DHGenerator], mode: ModeIndex) -> float:
    """Frobenius norm (an upper bound of the operator norm) of dense `V† a V` minus the closed form."""
    difference = dh_transform_operator(table, generators, mode) - closed_form_operator(table, generators, mode)
    return float(sparse_linalg.norm(difference))


# ---------------------------------------------------------------------- algebra checks


def skew_defect(generator: DHGenerator, num_modes: int) -> float:
    """Largest entry of `|W + W†|`."""
    return hermiticity_defect(generator.matrix(num_modes) * 1j)


def commutation_defect(first: DHGenerator, second: DHGenerator, table: ModeTable, samples=()) -> float:
    """Size of `[W_A, W_B]`: largest dense entry, or the largest norm on sample states beyond the dense regime."""
    if len(table) <= DENSE_MODE_LIMIT:
        a, b = first.matrix(len(table)), second.matrix(len(table))
        commutator = (a @ b - b @ a).tocsr()
        commutator.eliminate_zeros()
        return float(np.max(np.abs(commutator.data))) if commutator.nnz else 0.0
    samples = list(samples) or [SectorState.vacuum(table)]
    return max((first.apply(second.apply(p)) - second.apply(first.apply(p))).norm() for p in samples)


def roundtrip_defect(generators: Sequence[DHGenerator], state: SectorState) -> float:
    """`||V V† ψ - ψ||`, unitarity of the transformation on the reachable subspace."""
    there = dh_transform_state(generators, state, inverse=True)
    back = dh_transform_state(generators, there, inverse=False)
    return (back - state).norm()


# ---------------------------------------------------------------------- locality and fictitious independence


@dataclass
class LocalityFootprint:
    """Per-cell weight of `V† a V - a`, split into physical and fictitious content.

    Attributes:
        mode (ModeIndex): The transformed mode.
        physical (NDArray): Sum of coefficient magnitudes on physical modes, per cell.
        fictitious (NDArray): The same on fictitious modes.
        positions (NDArray): Cell centres.
        epsilon (float): Support threshold.
    """

    mode: ModeIndex
    physical: NDArray[np.float64]
    fictitious: NDArray[np.float64]
    positions: NDArray[np.float64]
    epsilon: float = 1e-6

    @property
    def total(self) -> float:
        return float(self.physical.sum())

    def support(self, epsilon: float | None = None) -> NDArray[np.int64]:
        return np.flatnonzero(self.physical >= (self.epsilon if epsilon is None else epsilon))

    def support_radius(self, origin: Sequence[float] | float, epsilon: float | None = None) -> float:
        """Largest distance from `origin` of a cell in the physical support (0 for an empty support)."""
        cells = self.support(epsilon)
        if len(cells) == 0:
            return 0.0
        offset = self.positions[cells] - np.atleast_1d(np.asarray(origin, dtype=float))
        return float(np.max(np.linalg.norm(offset, axis=1)))


def _per_cell(table: ModeTable, coefficients: NDArray[np.float64], fictitious: bool) -> NDArray[np.float64]:
    cells = table.lattice.num_cells
    weights = np.zeros(cells)
    for spec in table.species:
        if spec.fictitious_field != fictitious:
            continue
        block = coefficients[table.species_slice(spec.id)].reshape(spec.internal_dim, cells)
        weights += block.sum(axis=0)
    return weights


def locality_footprint(
    table: ModeTable,
    generators: Sequence[DHGenerator],
    mode: ModeIndex,
    dense: bool | None = None,
    epsilon: float = 1e-6,
) -> LocalityFootprint:
    """Footprint of the transformed field at one mode.

    In the dense regime the coefficients are read off the conjugated matrix, `α_r = Tr(a_r† X) / 2^(n-1)` for
    `X = V† a V - a`; beyond it they come from the closed form.
    """
    dense = len(table) <= DENSE_MODE_LIMIT if dense is None else dense
    if dense:
        num_modes = len(table)
        difference = dh_transform_operator(table, generators, mode) - _annihilator(table, mode)
        annihilators = np.zeros(num_modes, dtype=complex)
        creators = np.zeros(num_modes, dtype=complex)
        transposed = difference.T.tocsr()
        for rank in range(num_modes):
            creator = creation_matrix(rank, num_modes).astype(complex)
            annihilators[rank] = creator.multiply(transposed).sum() / 2 ** (num_modes - 1)
            creators[rank] = creator.T.multiply(transposed).sum() / 2 ** (num_modes - 1)
    else:
        annihilators, creators = closed_form_coefficients(table, generators, mode)
    magnitude = np.abs(annihilators) + np.abs(creators)
    return LocalityFootprint(
        mode,
        _per_cell(table, magnitude, fictitious=False),
        _per_cell(table, magnitude, fictitious=True),
        table.lattice.cell_centers,
        epsilon,
    )


@dataclass
class EquivalenceReport:
    """Physical expectations on `|ψ_in>` and on dressed states with several fictitious draws."""

    reference: dict[str, complex]
    draws: list[dict[str, complex]]
    tolerance: float = 1e-10

    @property
    def max_deviation(self) -> float:
        return max(
            (abs(values[name] - self.reference[name]) for values in self.draws for name in self.reference),
            default=0.0,
        )

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def default_observables(table: ModeTable) -> dict[str, list[OperatorTerm]]:
    """Awareness-0 density of every observer species at every cell."""
    observables = {}
    for spec in table.physical_species:
        if spec.kind is SpeciesKind.OBSERVER:
            for cell in range(table.lattice.num_cells):
                observables[f"N0_{spec.id}[{cell}]"] = number_density_terms(table, spec.id, 0, cell)
    return observables


def expectation_equivalence(
    scenario: DressedScenario,
    observables: Mapping[str, Sequence[OperatorTerm]] | None = None,
    draws: int = 3,
    seed: int = 0,
    shape: str = "random",
) -> EquivalenceReport:
    """Compare physical expectations on `|ψ_in>` with those on `|ψ'_in>` for random fictitious wavefunctions.

    Raises:
        PreconditionError: If an observable touches a fictitious mode.
    """
    table = scenario.table
    observables = dict(observables or default_observables(table))
    fictitious = set(table.fictitious_ranks().tolist())
    for name, terms in observables.items():
        if any(mode.global_rank in fictitious for term in terms for mode in term.modes):
            raise PreconditionError(f"Observable {name} contains fictitious-field operators.")
    reference = {name: complex(scenario.physical.expectation(terms)) for name, terms in observables.items()}
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(draws):
        fields = {
            partner: FictitiousFieldSpec.draw(partner, table.lattice, shape, rng) for partner in scenario.fields
        }
        redrawn = scenario.redraw(fields).dressed
        results.append({name: complex(redrawn.expectation(terms)) for name, terms in observables.items()})
    report = EquivalenceReport(reference, results)
    logger.info("Fictitious-field independence over %d draws: max deviation %.3e", draws, report.max_deviation)
    return report


# ---------------------------------------------------------------------- report


@dataclass
class DHCheck:
    name: str
    value: float
    tolerance: float
    lower_is_better: bool = True

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance if self.lower_is_better else self.value >= self.tolerance


@dataclass
class DHReport:
    checks: list[DHCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def first_failure(self) -> DHCheck | None:
        return next((check for check in self.checks if not check.passed), None)


def dh_check(
    kind: ScenarioKind, sites: int | None = None, draws: int = 3, shape: str = "gaussian", seed: int = 0
) -> DHReport:
    """Vacuum mapping, generator algebra, closed form and fictitious-field independence for one scenario."""
    single = kind is ScenarioKind.SINGLE_OBSERVER
    sites = sites or (2 if single else 3)
    scenario = dh_scenario(kind, sites, shape, seed)
    table, generators = scenario.table, scenario.generators
    report = DHReport()
    mapped = dh_transform_state(generators, scenario.dressed)
    report.checks.append(DHCheck("vacuum_fidelity", vacuum_fidelity(mapped), 1 - (1e-9 if single else 1e-8), False))
    report.checks.append(DHCheck("roundtrip", roundtrip_defect(generators, scenario.dressed), 1e-10))
    samples = [SectorState.vacuum(table), scenario.dressed, scenario.physical]
    commutators = [
        commutation_defect(a, b, table, samples) for i, a in enumerate(generators) for b in generators[i + 1 :]
    ]
    report.checks.append(DHCheck("commutation", max(commutators, default=0.0), 1e-12))
    if len(table) <= DENSE_MODE_LIMIT:
        report.checks.append(
            DHCheck("skew_hermitian", max(skew_defect(g, len(table)) for g in generators), 1e-14)
        )
        observer = next(s for s in scenario.packets if s[0] == "O")
        deviations = [
            closed_form_deviation(table, generators, table.index(observer, label, cell))
            for label in (0, 1)
            for cell in range(table.lattice.num_cells)
        ]
        report.checks.append(DHCheck("closed_form", max(deviations), 1e-9))
    equivalence = expectation_equivalence(scenario, draws=draws, seed=seed)
    report.checks.append(DHCheck("fictitious_independence", equivalence.max_deviation, equivalence.tolerance))
    for check in report.checks:
        logger.info("dh-check %s: %.3e (%s)", check.name, check.value, "ok" if check.passed else "FAILED")
    return report
