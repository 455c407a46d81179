r"""Operators and initial states of the measurement model on a lattice.

Species ids follow one convention throughout the package: systems ``S1``, ``S2`` (spin labels 1, 2), observers
``O1``, ``O2`` and the comparator ``C`` (awareness labels 0, 1), fictitious partners ``Z_<id>``.

Lattice fields are normalized so that `{a, a†}` is a Kronecker delta; a continuum field is `a / Δx^(dim/2)`.
With this convention the `Δx^dim` weights of the spatial integrals cancel against the field normalization, and a
measurement interaction contributes `i κ f(x, y)` per gated cell pair.

Every interaction exists in two forms: an `OperatorTerm` list for sparse `SectorState` evolution and a
`TensorGenerator` for single-occupancy `SectorTensor` evolution. Both represent `H / κ`, so a sudden window of
angle Θ is `exp(-iΘ G)`.
"""

from __future__ import annotations

import logging
import math
import typing
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy import sparse

from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import OperatorTerm, SectorState, term_product
from EVLAB.lattice import Boundary, SpeciesKind
from EVLAB.sector_tensor import SectorTensor

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.lattice import Lattice, ModeIndex, ModeTable, SpeciesSpec

logger = logging.getLogger(__name__)

SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
"""Internal action of `i(a†_1 a_0 - a†_0 a_1)` on the awareness labels (0, 1)."""

AWARE_PROJECTOR = np.diag([0.0, 1.0]).astype(complex)
"""Internal action of the awareness-1 density on the labels (0, 1)."""

PACKET_NORM_TOLERANCE = 1e-6
PACKET_TAIL_TOLERANCE = 1e-8
ALIASING_BOUND = math.pi / 4


@dataclass(frozen=True)
class SpinAxis:
    """A spin-analyser direction.

    Attributes:
        theta (float): Polar angle in `[0, π]`.
        phi (float): Azimuthal angle, reduced to `[0, 2π)`.
    """

    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not -1e-12 <= self.theta <= math.pi + 1e-12:
            raise PreconditionError(f"Polar angle must lie in [0, π], got {self.theta}.")
        object.__setattr__(self, "phi", float(self.phi) % (2 * math.pi))

    @property
    def n(self) -> NDArray[np.float64]:
        """The unit vector `(sinθ cosφ, sinθ sinφ, cosθ)`."""
        return np.array(
            [
                math.sin(self.theta) * math.cos(self.phi),
                math.sin(self.theta) * math.sin(self.phi),
                math.cos(self.theta),
            ]
        )

    def rotation_matrix(self) -> NDArray[np.complex128]:
        """Unitary whose columns are the spin-up and spin-down vectors along the axis (basis: labels 1, 2)."""
        half = self.theta / 2
        left, right = np.exp(-0.5j * self.phi), np.exp(0.5j * self.phi)
        return np.array(
            [
                [left * math.cos(half), -left * math.sin(half)],
                [right * math.sin(half), right * math.cos(half)],
            ]
        )

    def spinor(self, up_or_down: int) -> NDArray[np.complex128]:
        """Coefficients of the rotated creator on the spin labels (1, 2); `up_or_down` is 1 (up) or 2 (down)."""
        if up_or_down not in (1, 2):
            raise PreconditionError(f"Spin orientation must be 1 (up) or 2 (down), got {up_or_down}.")
        return self.rotation_matrix()[:, up_or_down - 1]

    def projector(self, up_or_down: int = 1) -> NDArray[np.complex128]:
        """Internal action of the rotated density `φ†_{n,i} φ_{n,i}` on the labels (1, 2)."""
        spinor = self.spinor(up_or_down)
        return np.outer(spinor, spinor.conj())

    def relative_angle(self, other: SpinAxis) -> float:
        return math.acos(float(np.clip(self.n @ other.n, -1.0, 1.0)))

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> SpinAxis:
        x, y, z = np.asarray(vector, dtype=float) / np.linalg.norm(vector)
        return cls(math.acos(float(np.clip(z, -1.0, 1.0))), math.atan2(y, x))


def rotation_matrix(axis: SpinAxis) -> NDArray[np.complex128]:
    """Functional alias of `SpinAxis.rotation_matrix`."""
    return axis.rotation_matrix()


@dataclass(frozen=True)
class WavepacketSpec:
    """A Gaussian packet `(α/π)^(d/4) exp(-α|x - x0|²/2 + i k·(x - x0))`.

    Attributes:
        center (tuple[float, ...]): Centre `x0` at the reference time.
        width_param (float): `α > 0`; the packet width is `α^(-1/2)`.
        velocity (tuple[float, ...]): Group velocity `v`.
        mass (float): Mass of the quantum.
    """

    center: tuple[float, ...]
    width_param: float
    velocity: tuple[float, ...] = ()
    mass: float = 1.0

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        velocity = tuple(float(v) for v in np.atleast_1d(self.velocity))
        if not velocity:
            velocity = (0.0,) * len(center)
        if len(velocity) != len(center):
            raise PreconditionError("Packet centre and velocity must have the same dimension.")
        if not self.width_param > 0:
            raise PreconditionError("Packet width parameter must be positive.")
        if not self.mass > 0:
            raise PreconditionError("Packet mass must be positive.")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "velocity", velocity)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def width(self) -> float:
        return self.width_param**-0.5

    def position(self, elapsed: float) -> NDArray[np.float64]:
        """Classical centre after `elapsed` time."""
        return np.asarray(self.center) + np.asarray(self.velocity) * elapsed


@dataclass(frozen=True)
class CouplingSpec:
    """Interaction strengths and apertures.

    Attributes:
        kappa (float): Observer-system coupling `κ`.
        kappa_c (float): Comparator coupling `κ_C`.
        range_a (tuple[float, ...]): Aperture radius `a_[p]` per observer (a single value is shared).
        range_ac (float): Comparator aperture `a_C`.
    """

    kappa: float = 1.0
    kappa_c: float = 1.0
    range_a: tuple[float, ...] = (4.0,)
    range_ac: float = 4.0

    def __post_init__(self):
        radii = tuple(float(a) for a in np.atleast_1d(self.range_a))
        if not radii or min(radii) <= 0 or self.range_ac <= 0:
            raise PreconditionError("Interaction ranges must be positive.")
        object.__setattr__(self, "range_a", radii)

    def aperture(self, p: int) -> float:
        """Aperture of observer `p` (1-based)."""
        return self.range_a[min(p, len(self.range_a)) - 1]


def rotated_creator(
    table: ModeTable, species_id: str, axis: SpinAxis, up_or_down: int, cell: int
) -> list[tuple[complex, ModeIndex]]:
    """The rotated creator `φ†_{n,i}(cell)` as a combination of the spin-1 and spin-2 creators.

    Raises:
        PreconditionError: If the species is not a system.
    """
    spec = table.spec(species_id)
    if spec.kind is not SpeciesKind.SYSTEM:
        raise PreconditionError(f"Rotated creators need a system species, {species_id} is {spec.kind.value}.")
    spinor = axis.spinor(up_or_down)
    return [
        (complex(spinor[0]), table.index(species_id, 1, cell)),
        (complex(spinor[1]), table.index(species_id, 2, cell)),
    ]


def rotated_density_terms(table: ModeTable, species_id: str, axis: SpinAxis, cell: int) -> list[OperatorTerm]:
    """Terms of `φ†_{n,1}(cell) φ_{n,1}(cell) = sum_ij u_i u_j* φ†_i φ_j`."""
    creator = rotated_creator(table, species_id, axis, 1, cell)
    return [
        OperatorTerm(ci * np.conj(cj), (mi,), (mj,))
        for ci, mi in creator
        for cj, mj in creator
        if abs(ci * np.conj(cj)) > 0
    ]


def number_density_terms(table: ModeTable, species_id: str, internal: int, cell: int) -> list[OperatorTerm]:
    """The single term `a†a` of one mode."""
    mode = table.index(species_id, internal, cell)
    return [OperatorTerm(1.0, (mode,), (mode,))]


# ---------------------------------------------------------------------- free motion


def kinetic_matrix(lattice: Lattice, mass: float, hbar: float = 1.0) -> sparse.csr_matrix:
    """One-body lattice Laplacian `ħ²/(2mΔx²) (2·dim δ - neighbour hops)` over the cells."""
    size = lattice.num_cells
    rows, cols = zip(*lattice.neighbor_pairs()) if size > 1 or lattice.boundary is Boundary.PERIODIC else ((), ())
    hops = sparse.coo_matrix((-np.ones(len(rows)), (rows, cols)), shape=(size, size))
    diagonal = sparse.identity(size, format="coo") * (2 * lattice.dim)
    return ((diagonal + hops) * (hbar**2 / (2 * mass * lattice.spacing**2))).tocsr()


@lru_cache(maxsize=64)
def free_propagator(lattice: Lattice, mass: float, duration: float, hbar: float = 1.0) -> NDArray[np.complex128]:
    """Single-particle propagator `exp(-i K t / ħ)` over the cells, built once per duration."""
    if duration < 0:
        raise PreconditionError("Free propagation needs a non-negative duration.")
    if duration == 0:
        return np.eye(lattice.num_cells, dtype=complex)
    kinetic = kinetic_matrix(lattice, mass, hbar).toarray()
    return scipy.linalg.expm(-1j * duration / hbar * kinetic)


def species_propagator(spec: SpeciesSpec, lattice: Lattice, duration: float, hbar: float = 1.0) -> NDArray:
    """Propagator on the one-body space of a species: identity on internal labels, free motion on cells."""
    if spec.fictitious_field:
        return np.eye(spec.internal_dim * lattice.num_cells, dtype=complex)
    return np.kron(np.eye(spec.internal_dim), free_propagator(lattice, spec.mass, duration, hbar))


def build_free_hamiltonian(table: ModeTable, species: str | Sequence[str], hbar: float = 1.0) -> list[OperatorTerm]:
    """Kinetic terms of one or several species, one copy per internal label.

    Raises:
        PreconditionError: For a fictitious species, which has no kinetic term.
    """
    ids = [species] if isinstance(species, str) else list(species)
    terms = []
    for species_id in ids:
        spec = table.spec(species_id)
        if spec.fictitious_field:
            raise PreconditionError(f"Fictitious species {species_id} has no kinetic or interaction terms.")
        kinetic = kinetic_matrix(table.lattice, spec.mass, hbar).tocoo()
        for label in spec.internal_labels:
            for row, col, value in zip(kinetic.row, kinetic.col, kinetic.data):
                terms.append(
                    OperatorTerm(
                        float(value),
                        (table.index(species_id, label, int(row)),),
                        (table.index(species_id, label, int(col)),),
                    )
                )
    return terms


# ---------------------------------------------------------------------- interactions


def range_gate(lattice: Lattice, radius: float) -> NDArray[np.float64]:
    """Heaviside gate `θ(a - |x - y|)` on cell-centre distances, as a `(cells, cells)` 0/1 array."""
    return (lattice.distance_matrix <= radius * (1 + 1e-12)).astype(float)


def _flip_term(table: ModeTable, species_id: str, cell: int) -> list[OperatorTerm]:
    """`i(a†_1 a_0 - a†_0 a_1)` at one cell."""
    zero, one = table.index(species_id, 0, cell), table.index(species_id, 1, cell)
    return [OperatorTerm(1j, (one,), (zero,)), OperatorTerm(-1j, (zero,), (one,))]


def _aware_term(table: ModeTable, species_id: str, cell: int) -> OperatorTerm:
    mode = table.index(species_id, 1, cell)
    return OperatorTerm(1.0, (mode,), (mode,))


def build_measurement_hamiltonian(
    table: ModeTable,
    p: int,
    axis: SpinAxis,
    coupling: CouplingSpec,
    system: str | None = None,
    observer: str | None = None,
) -> list[OperatorTerm]:
    """Terms of `H_M^{OS[p]} = iκ sum f(x,y) (χ†_1 χ_0 - χ†_0 χ_1)(x) φ†_{n,1} φ_{n,1}(y)`.

    Args:
        table (ModeTable): Mode table containing the system and the observer.
        p (int): Wing index, 1 or 2; selects the aperture and the default species ids.
        axis (SpinAxis): Analyser axis `n[p]`.
        coupling (CouplingSpec): Strength `κ` and aperture `a_[p]`.
        system (str | None, optional): System species id, defaults to ``f"S{p}"``.
        observer (str | None, optional): Observer species id, defaults to ``f"O{p}"``.

    Returns:
        list[OperatorTerm]: The Hermitian term list.
    """
    system = system or f"S{p}"
    observer = observer or f"O{p}"
    gate = range_gate(table.lattice, coupling.aperture(p))
    densities = {y: rotated_density_terms(table, system, axis, y) for y in range(table.lattice.num_cells)}
    terms = []
    for x, y in zip(*np.nonzero(gate)):
        for flip in _flip_term(table, observer, int(x)):
            for density in densities[int(y)]:
                terms.append(term_product(flip, density).scaled(coupling.kappa))
    logger.debug("Measurement Hamiltonian for wing %d: %d terms", p, len(terms))
    return terms


def build_comparator_hamiltonian(
    table: ModeTable, coupling: CouplingSpec, observers: tuple[str, str] = ("O1", "O2"), comparator: str = "C"
) -> list[OperatorTerm]:
    """Terms of `H_M^{CO} = iκ_C sum f_C(x,y) f_C(x,z) (ξ†_1 ξ_0 - ξ†_0 ξ_1)(x) N_1^{O1}(y) N_1^{O2}(z)`."""
    gate = range_gate(table.lattice, coupling.range_ac)
    first, second = observers
    terms = []
    for x in range(table.lattice.num_cells):
        near = np.flatnonzero(gate[x])
        for flip in _flip_term(table, comparator, x):
            for y in near:
                pair = term_product(flip, _aware_term(table, first, int(y)))
                for z in near:
                    terms.append(term_product(pair, _aware_term(table, second, int(z))).scaled(coupling.kappa_c))
    logger.debug("Comparator Hamiltonian: %d terms", len(terms))
    return terms


@dataclass
class TensorGenerator:
    """A position-gated product of internal-label matrices acting on `SectorTensor` states.

    Calling the generator returns `G T`; `norm_bound` bounds `||G||` on single-occupancy sectors.

    Attributes:
        internal (dict[str, NDArray]): Internal-label matrix per species.
        gate (NDArray): Position weights, one axis per species of `gate_species`.
        gate_species (tuple[str, ...]): Species whose cells the gate depends on.
        norm_bound (float): Bound of the generator norm.
    """

    internal: dict[str, NDArray[np.complex128]]
    gate: NDArray[np.float64]
    gate_species: tuple[str, ...]
    norm_bound: float = 1.0
    extra: list[Callable[[SectorTensor], SectorTensor]] = field(default_factory=list)

    def __call__(self, tensor: SectorTensor) -> SectorTensor:
        if not all(species_id in tensor.species for species_id in self.gate_species):
            result = tensor * 0.0
        else:
            result = tensor.apply_local(self.internal, self.gate, self.gate_species)
        for part in self.extra:
            result = result + part(tensor)
        return result


def measurement_generator(
    table: ModeTable,
    p: int,
    axis: SpinAxis,
    coupling: CouplingSpec,
    system: str | None = None,
    observer: str | None = None,
) -> TensorGenerator:
    """Tensor form of `H_M^{OS[p]} / κ`: `sum f(x,y) σ_y(x) ⊗ P_n(y)`."""
    system = system or f"S{p}"
    observer = observer or f"O{p}"
    gate = range_gate(table.lattice, coupling.aperture(p))
    return TensorGenerator({observer: SIGMA_Y, system: axis.projector(1)}, gate, (observer, system))


def comparator_generator(
    table: ModeTable, coupling: CouplingSpec, observers: tuple[str, str] = ("O1", "O2"), comparator: str = "C"
) -> TensorGenerator:
    """Tensor form of `H_M^{CO} / κ_C`: `sum f_C(x,y) f_C(x,z) σ_y(x) ⊗ N_1(y) ⊗ N_1(z)`."""
    gate = range_gate(table.lattice, coupling.range_ac)
    triple = gate[:, :, np.newaxis] * gate[:, np.newaxis, :]
    first, second = observers
    return TensorGenerator(
        {comparator: SIGMA_Y, first: AWARE_PROJECTOR, second: AWARE_PROJECTOR}, triple, (comparator, first, second)
    )


# ---------------------------------------------------------------------- packets and initial states


def lattice_wavenumber(velocity: float, mass: float, width_param: float, spacing: float, hbar: float = 1.0) -> float:
    """Carrier wave number whose discretized Gaussian moves with group velocity `velocity` on the lattice.

    Solves `sin(k Δx) exp(-α Δx²/4) ħ / (m Δx) = v`.

    Raises:
        PreconditionError: If `m|v|Δx/ħ` exceeds the aliasing bound π/4 or no solution exists.
    """
    ratio = mass * velocity * spacing / hbar
    if abs(ratio) > ALIASING_BOUND:
        raise PreconditionError(f"m|v|Δx/ħ = {abs(ratio):.3g} exceeds the aliasing bound π/4.")
    target = ratio * math.exp(width_param * spacing**2 / 4)
    if abs(target) >= 1:
        raise PreconditionError("Packet too narrow for the requested velocity on this lattice.")
    return math.asin(target) / spacing


def discretize_packet(
    packet: WavepacketSpec, lattice: Lattice, hbar: float = 1.0, phase: str = "lattice"
) -> NDArray[np.complex128]:
    """Lattice amplitudes `ψ(x) Δx^(d/2)` of a Gaussian packet, normalized.

    Args:
        packet (WavepacketSpec): The packet.
        lattice (Lattice): The lattice; must have the packet's dimension.
        hbar (float, optional): Reduced Planck constant. Defaults to 1.0.
        phase (str, optional): ``"lattice"`` uses the lattice-consistent wave number, ``"continuum"`` the plane wave
            `m v / ħ`. Defaults to ``"lattice"``.

    Raises:
        PreconditionError: If the lattice does not resolve the packet (norm off by more than 1e-6 or boundary
            amplitude above 1e-8) or the velocity aliases.

    Returns:
        NDArray[np.complex128]: One amplitude per cell.
    """
    if packet.dim != lattice.dim:
        raise PreconditionError(f"Packet dimension {packet.dim} differs from lattice dimension {lattice.dim}.")
    alpha = packet.width_param
    match phase:
        case "lattice":
            k = np.array([lattice_wavenumber(v, packet.mass, alpha, lattice.spacing, hbar) for v in packet.velocity])
        case "continuum":
            ratios = np.abs(np.asarray(packet.velocity)) * packet.mass * lattice.spacing / hbar
            if np.any(ratios > ALIASING_BOUND):
                raise PreconditionError("m|v|Δx/ħ exceeds the aliasing bound π/4.")
            k = np.asarray(packet.velocity) * packet.mass / hbar
        case _:
            raise PreconditionError(f"Unknown packet phase convention {phase}.")
    offset = lattice.displacement(lattice.cell_centers, np.asarray(packet.center))
    exponent = -alpha * np.sum(offset**2, axis=1) / 2 + 1j * offset @ k
    amplitude = (alpha / math.pi) ** (lattice.dim / 4) * np.exp(exponent)
    amplitude = amplitude * lattice.spacing ** (lattice.dim / 2)
    norm = float(np.linalg.norm(amplitude))
    if abs(norm**2 - 1) > PACKET_NORM_TOLERANCE:
        raise PreconditionError(f"Lattice does not resolve the packet: discretized norm² = {norm**2:.9f}.")
    if lattice.boundary is Boundary.OPEN:
        coordinates = lattice.cell_coordinates
        edge = np.any((coordinates == 0) | (coordinates == lattice.sites_per_axis - 1), axis=1)
        tail = float(np.max(np.abs(amplitude[edge]))) if np.any(edge) else 0.0
        if tail > PACKET_TAIL_TOLERANCE:
            raise PreconditionError(f"Packet tail {tail:.2e} at the lattice boundary exceeds {PACKET_TAIL_TOLERANCE}.")
    return amplitude / norm


InternalSpec = int | Sequence[complex] | Mapping[int, complex]


def internal_amplitudes(spec: SpeciesSpec, internal: InternalSpec) -> NDArray[np.complex128]:
    """Normalized internal-label amplitudes from a label or a superposition (sequence or label->coefficient map)."""
    match internal:
        case int() | np.integer():
            vector = np.zeros(spec.internal_dim, dtype=complex)
            vector[spec.label_position(internal)] = 1.0
        case Mapping():
            vector = np.zeros(spec.internal_dim, dtype=complex)
            for label, coefficient in internal.items():
                vector[spec.label_position(label)] = coefficient
        case _:
            vector = np.asarray(internal, dtype=complex)
    if vector.shape != (spec.internal_dim,) or not np.linalg.norm(vector) > 0:
        raise PreconditionError(f"Invalid internal amplitudes {internal!r} for species {spec.id}.")
    return vector / np.linalg.norm(vector)


@dataclass(frozen=True)
class PacketEntry:
    """One quantum of an initial state: species, internal content and packet.

    The packet is either a `WavepacketSpec` or explicit cell amplitudes (normalized on use).
    """

    species: str
    internal: InternalSpec
    packet: WavepacketSpec | NDArray[np.complex128]

    def amplitudes(self, lattice: Lattice, hbar: float = 1.0, phase: str = "lattice") -> NDArray[np.complex128]:
        if isinstance(self.packet, WavepacketSpec):
            return discretize_packet(self.packet, lattice, hbar, phase)
        amplitudes = np.asarray(self.packet, dtype=complex).reshape(-1)
        if amplitudes.shape != (lattice.num_cells,) or not np.linalg.norm(amplitudes) > 0:
            raise PreconditionError(
                f"Explicit packet for {self.species} needs {lattice.num_cells} non-zero amplitudes."
            )
        return amplitudes / np.linalg.norm(amplitudes)


SINGLET = np.array([[0.0, 1.0], [-1.0, 0.0]]) / math.sqrt(2)
"""Spin coefficients `η[s1, s2]` of `(|1>|2> - |2>|1>)/√2` (positions of labels 1, 2)."""


def build_packet_tensor(
    table: ModeTable,
    entries: Sequence[PacketEntry],
    singlet: tuple[str, str] | None = None,
    hbar: float = 1.0,
    phase: str = "lattice",
) -> SectorTensor:
    """Single-occupancy tensor of a product of one-quantum packets, optionally with a spin singlet.

    For the singlet pair the internal content of the two entries is ignored and replaced by
    `(|1>|2> - |2>|1>)/√2`.
    """
    packets = {entry.species: entry.amplitudes(table.lattice, hbar, phase) for entry in entries}
    factors = {}
    for entry in entries:
        spec = table.spec(entry.species)
        if singlet and entry.species in singlet:
            continue
        factors[entry.species] = np.kron(internal_amplitudes(spec, entry.internal), packets[entry.species])
    if not singlet:
        return SectorTensor.product(table, factors)
    first, second = singlet
    for species_id in singlet:
        if table.spec(species_id).kind is not SpeciesKind.SYSTEM or species_id not in packets:
            raise PreconditionError(f"Singlet pairing needs two system packets, got {singlet}.")
    total = None
    for i, j in ((0, 1), (1, 0)):
        spins = np.eye(2)
        pair = dict(factors)
        pair[first] = np.kron(spins[i], packets[first])
        pair[second] = np.kron(spins[j], packets[second])
        part = SectorTensor.product(table, pair) * SINGLET[i, j]
        total = part if total is None else total + part
    return total


def build_packet_state(
    table: ModeTable,
    entries: Sequence[PacketEntry],
    singlet: tuple[str, str] | None = None,
    hbar: float = 1.0,
    phase: str = "lattice",
) -> SectorState:
    """Sparse initial state: product of one-quantum packets, optionally with the singlet spin part."""
    state = build_packet_tensor(table, entries, singlet, hbar, phase).to_state()
    return state.normalized()
