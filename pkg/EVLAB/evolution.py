r"""The five-window evolution schedule in the sudden approximation.

The schedule alternates free and interaction windows:

    [t0, t1]  H_F                               every physical species moves
    [t1, t2]  sum_p H_M^{OS[p]} + H_F^C         measurements; only the comparator moves
    [t2, t3]  H_F
    [t3, t4]  sum_p H_F^{S[p]} + H_M^{CO}       comparison; only the systems move
    [t4, ...) H_F

Interaction windows are parameterized by their angle (Θ = κ(t2 - t1)/ħ, Θ_C = κ_C(t4 - t3)/ħ). A window of zero
duration is the sudden limit; a window of finite duration applies the same angle, with the coupling
`κ = ħΘ/(t2 - t1)` implied, together with the free motion of the species that keep moving. Both pieces of a window
Hamiltonian act on disjoint species and commute, so they are applied one after the other.

Propagation accepts sparse `SectorState` states (term-list generators) and `SectorTensor` states (tensor generators).
"""

from __future__ import annotations

import enum
import logging
import math
import typing
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from EVLAB.exceptions import PreconditionError
from EVLAB.expm import evolve_exp
from EVLAB.fock_state import OperatorTerm, SectorState, apply_terms, terms_to_matrix
from EVLAB.lattice import SpeciesKind
from EVLAB.model import (
    build_comparator_hamiltonian,
    build_free_hamiltonian,
    build_measurement_hamiltonian,
    comparator_generator,
    measurement_generator,
    rotated_density_terms,
    species_propagator,
)
from EVLAB.sector_tensor import SectorTensor

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.lattice import ModeTable
    from EVLAB.model import CouplingSpec, SpinAxis

logger = logging.getLogger(__name__)

State = SectorState | SectorTensor
_DENSE_SCHEDULE_MODES = 14


class WindowKind(enum.Enum):
    FREE = "free"
    MEASUREMENT = "measurement"
    COMPARATOR = "comparator"


_MOVING = {
    WindowKind.FREE: frozenset(SpeciesKind) - {SpeciesKind.FICTITIOUS},
    WindowKind.MEASUREMENT: frozenset({SpeciesKind.COMPARATOR}),
    WindowKind.COMPARATOR: frozenset({SpeciesKind.SYSTEM}),
}


@dataclass(frozen=True)
class Window:
    """One window of the schedule; `end` is `math.inf` for the last one."""

    start: float
    end: float
    kind: WindowKind

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def moving(self) -> frozenset[SpeciesKind]:
        """Species kinds whose kinetic terms are kept inside the window."""
        return _MOVING[self.kind]


@dataclass(frozen=True)
class StagePlan:
    """Times and sudden angles of the schedule.

    Attributes:
        times (tuple[float, ...]): `(t0, t1, t2, t3, t4)` with `t0 < t1 <= t2 < t3 <= t4`.
        theta (float): Measurement angle Θ.
        theta_c (float): Comparator angle Θ_C (β).
        comparator (bool): Whether the comparator windows take place (False for a single observer).
    """

    times: tuple[float, float, float, float, float] = (0.0, 1.0, 1.0, 2.0, 2.0)
    theta: float = math.pi / 2
    theta_c: float = 0.1
    comparator: bool = True

    def __post_init__(self):
        t0, t1, t2, t3, t4 = (float(t) for t in self.times)
        object.__setattr__(self, "times", (t0, t1, t2, t3, t4))
        if not (t0 < t1 <= t2 < t3 <= t4):
            raise PreconditionError(f"Stage times must satisfy t0 < t1 <= t2 < t3 <= t4, got {self.times}.")

    @property
    def t0(self) -> float:
        return self.times[0]

    def windows(self) -> list[Window]:
        """The windows in schedule order."""
        t0, t1, t2, t3, t4 = self.times
        if not self.comparator:
            return [
                Window(t0, t1, WindowKind.FREE),
                Window(t1, t2, WindowKind.MEASUREMENT),
                Window(t2, math.inf, WindowKind.FREE),
            ]
        return [
            Window(t0, t1, WindowKind.FREE),
            Window(t1, t2, WindowKind.MEASUREMENT),
            Window(t2, t3, WindowKind.FREE),
            Window(t3, t4, WindowKind.COMPARATOR),
            Window(t4, math.inf, WindowKind.FREE),
        ]

    def angle(self, kind: WindowKind) -> float:
        match kind:
            case WindowKind.MEASUREMENT:
                return self.theta
            case WindowKind.COMPARATOR:
                return self.theta_c
            case _:
                return 0.0

    def coupling_strength(self, kind: WindowKind, hbar: float = 1.0) -> float:
        """Coupling implied by a finite window, `ħ·angle/duration`; infinite for a sudden window."""
        window = next(w for w in self.windows() if w.kind is kind)
        return math.inf if window.duration == 0 else hbar * self.angle(kind) / window.duration

    @property
    def query_times(self) -> dict[str, float]:
        """Representative query times: `t_[2,3]` (mid-way) and `t_[4,5]` (a tenth of the run after t4)."""
        t0, _, t2, t3, t4 = self.times
        return {"t23": (t2 + t3) / 2, "t45": t4 + (t4 - t0) / 10}


def _kind_of(species_id: str) -> SpeciesKind:
    match species_id[:1]:
        case "S":
            return SpeciesKind.SYSTEM
        case "O":
            return SpeciesKind.OBSERVER
        case "C":
            return SpeciesKind.COMPARATOR
        case _:
            return SpeciesKind.FICTITIOUS


@dataclass(frozen=True)
class TrajectoryPlan:
    """Classical trajectories of the packet centres.

    An entity moves with constant velocity except inside interaction windows that drop its kinetic term.

    Attributes:
        starts (Mapping[str, tuple[float, ...]]): Centre of every entity at `t0`.
        velocities (Mapping[str, tuple[float, ...]]): Velocity of every entity.
        plan (StagePlan): The schedule.
    """

    starts: Mapping[str, tuple[float, ...]]
    velocities: Mapping[str, tuple[float, ...]]
    plan: StagePlan

    def moving_time(self, entity: str, t: float) -> float:
        """Time spent moving between `t0` and `t`."""
        kind = _kind_of(entity)
        total = 0.0
        for window in self.plan.windows():
            if t <= window.start:
                break
            if kind in window.moving:
                total += min(t, window.end) - window.start
        return total

    def position(self, entity: str, t: float) -> NDArray[np.float64]:
        return np.asarray(self.starts[entity], dtype=float) + np.asarray(self.velocities[entity]) * self.moving_time(
            entity, t
        )

    def separation(self, first: str, second: str, t: float) -> float:
        return float(np.linalg.norm(self.position(first, t) - self.position(second, t)))

    def alignment_residuals(self) -> dict[str, float]:
        """Distances that vanish for a perfectly aligned experiment."""
        t1, t3 = self.plan.times[1], self.plan.times[3]
        residuals = {}
        for p in (1, 2):
            if f"S{p}" in self.starts and f"O{p}" in self.starts:
                residuals[f"S{p}-O{p}@t1"] = self.separation(f"S{p}", f"O{p}", t1)
        if self.plan.comparator and "C" in self.starts:
            residuals["O1-O2@t3"] = self.separation("O1", "O2", t3)
            for p in (1, 2):
                residuals[f"O{p}-C@t3"] = self.separation(f"O{p}", "C", t3)
        return residuals

    def encounter_intervals(self, first: str, second: str, radius: float, horizon: float) -> list[tuple[float, float]]:
        """Maximal time intervals in `[t0, horizon]` during which the two centres are within `radius`.

        Motion is linear between window boundaries, so each piece is solved in closed form.
        """
        breaks = sorted({self.plan.t0, horizon, *(t for t in self.plan.times if self.plan.t0 < t < horizon)})
        pieces: list[tuple[float, float]] = []
        for start, end in zip(breaks[:-1], breaks[1:]):
            offset = self.position(first, start) - self.position(second, start)
            rate = (self.position(first, end) - self.position(second, end) - offset) / (end - start)
            pieces.extend(_quadratic_interval(offset, rate, radius, start, end))
        merged: list[tuple[float, float]] = []
        for start, end in pieces:
            if merged and start <= merged[-1][1] + 1e-12:
                merged[-1] = (merged[-1][0], max(merged[-1][1], end))
            else:
                merged.append((start, end))
        return merged


def _quadratic_interval(offset, rate, radius, start, end) -> list[tuple[float, float]]:
    """Sub-interval of `[start, end]` where `|offset + rate (t - start)| <= radius`."""
    a = float(rate @ rate)
    b = 2 * float(offset @ rate)
    c = float(offset @ offset) - radius**2
    if a == 0:
        return [(start, end)] if c <= 0 else []
    discriminant = b * b - 4 * a * c
    if discriminant < 0:
        return []
    root = math.sqrt(discriminant)
    low, high = start + (-b - root) / (2 * a), start + (-b + root) / (2 * a)
    low, high = max(low, start), min(high, end)
    return [(low, high)] if low <= high else []


@dataclass
class ModelContext:
    """Everything the propagators need besides the state: modes, couplings and analyser axes.

    Attributes:
        table (ModeTable): Mode table of the run.
        coupling (CouplingSpec): Interaction strengths and apertures.
        axes (Mapping[int, SpinAxis]): Analyser axis per wing.
        hbar (float): Reduced Planck constant.
    """

    table: ModeTable
    coupling: CouplingSpec
    axes: Mapping[int, SpinAxis]
    hbar: float = 1.0
    _propagators: dict = field(default_factory=dict, repr=False)

    @property
    def wings(self) -> tuple[int, ...]:
        return tuple(p for p in (1, 2) if f"S{p}" in self.table and f"O{p}" in self.table and p in self.axes)

    @property
    def has_comparator(self) -> bool:
        return all(species_id in self.table for species_id in ("C", "O1", "O2"))

    @cached_property
    def _unit_coupling(self) -> CouplingSpec:
        return replace(self.coupling, kappa=1.0, kappa_c=1.0)

    @cached_property
    def measurement_terms(self) -> list[OperatorTerm]:
        """Sparse form of `sum_p H_M^{OS[p]} / κ`."""
        terms: list[OperatorTerm] = []
        for p in self.wings:
            terms.extend(build_measurement_hamiltonian(self.table, p, self.axes[p], self._unit_coupling))
        return terms

    @cached_property
    def comparator_terms(self) -> list[OperatorTerm]:
        """Sparse form of `H_M^{CO} / κ_C`."""
        return build_comparator_hamiltonian(self.table, self._unit_coupling) if self.has_comparator else []

    def measurement_generators(self) -> list[Callable]:
        return [measurement_generator(self.table, p, self.axes[p], self._unit_coupling) for p in self.wings]

    def comparator_generators(self) -> list[Callable]:
        return [comparator_generator(self.table, self._unit_coupling)] if self.has_comparator else []

    def propagator(self, species_id: str, duration: float) -> NDArray[np.complex128]:
        key = (species_id, duration)
        if key not in self._propagators:
            spec = self.table.spec(species_id)
            self._propagators[key] = species_propagator(spec, self.table.lattice, duration, self.hbar)
        return self._propagators[key]

    def free_terms(self, kinds: frozenset[SpeciesKind] | None = None) -> list[OperatorTerm]:
        """Kinetic terms of the physical species of the given kinds (all physical species by default)."""
        species = [
            spec.id for spec in self.table.physical_species if kinds is None or spec.kind in kinds
        ]
        return build_free_hamiltonian(self.table, species, self.hbar) if species else []


def propagate_free(
    state: State, duration: float, context: ModelContext, species: Sequence[str] | None = None
) -> State:
    """Apply `exp(-i H_F duration / ħ)` species by species through single-particle propagators.

    Args:
        state (State): Sparse state or sector tensor.
        duration (float): Non-negative duration.
        context (ModelContext): Model context providing the propagators.
        species (Sequence[str] | None, optional): Species that move; all physical species by default.

    Raises:
        PreconditionError: If `duration` is negative.

    Returns:
        State: The propagated state.
    """
    if duration < 0:
        raise PreconditionError("Free propagation needs a non-negative duration.")
    if duration == 0:
        return state
    moving = [spec.id for spec in context.table.physical_species] if species is None else list(species)
    for species_id in moving:
        if context.table.spec(species_id).fictitious_field:
            continue
        if isinstance(state, SectorTensor):
            if species_id in state.species:
                state = state.apply_one_body(species_id, context.propagator(species_id, duration))
        else:
            state = state.apply_one_body(species_id, context.propagator(species_id, duration))
    return state


def _sum_generators(generators: Sequence[Callable]) -> Callable:
    def apply(state):
        result = generators[0](state)
        for generator in generators[1:]:
            result = result + generator(state)
        return result

    return apply


def propagate_interaction(
    state: State, kind: WindowKind, context: ModelContext, angle: float, duration: float = 0.0
) -> State:
    """Apply one interaction window: `exp(-i angle G)` for `G = H_M / κ`, plus the free motion it keeps.

    Args:
        state (State): Sparse state or sector tensor.
        kind (WindowKind): `MEASUREMENT` (all wings at once) or `COMPARATOR`.
        context (ModelContext): Model context.
        angle (float): The window angle, `κ·duration/ħ` folded into one number.
        duration (float, optional): Window duration; the species kept moving by the window move for this long.

    Raises:
        ConvergenceError: Propagated from `evolve_exp`.

    Returns:
        State: The state after the window.
    """
    match kind:
        case WindowKind.MEASUREMENT:
            terms, generators = context.measurement_terms, context.measurement_generators()
        case WindowKind.COMPARATOR:
            terms, generators = context.comparator_terms, context.comparator_generators()
        case _:
            raise PreconditionError("propagate_interaction needs an interaction window.")
    if angle != 0 and generators:
        bound = float(len(generators))
        if isinstance(state, SectorTensor):
            state = evolve_exp(state, _sum_generators(generators), -1j * angle, norm_bound=bound)
        else:
            state = evolve_exp(state, terms, -1j * angle, norm_bound=bound)
    if duration > 0:
        moving = [spec.id for spec in context.table.physical_species if spec.kind in _MOVING[kind]]
        state = propagate_free(state, duration, context, moving)
    return state


def run_schedule(
    initial: State,
    plan: StagePlan,
    context: ModelContext,
    t_query: float,
    trajectories: TrajectoryPlan | None = None,
) -> State:
    """Compose the window propagators in schedule order up to `t_query`.

    A window containing `t_query` is applied partially; for an interaction window the angle is interpolated
    linearly in time. A sudden window at `t_query` is included.

    Raises:
        PreconditionError: If `t_query < t0`.
    """
    if t_query < plan.t0:
        raise PreconditionError(f"Query time {t_query} precedes t0 = {plan.t0}.")
    if trajectories is not None:
        for name, residual in trajectories.alignment_residuals().items():
            logger.debug("alignment residual %s = %.3g", name, residual)
    state = initial
    for window in plan.windows():
        if t_query < window.start:
            break
        elapsed = min(t_query, window.end) - window.start
        if window.kind is WindowKind.FREE:
            state = propagate_free(state, elapsed, context)
        else:
            fraction = 1.0 if window.duration == 0 else elapsed / window.duration
            state = propagate_interaction(state, window.kind, context, plan.angle(window.kind) * fraction, elapsed)
        logger.debug("window %s [%g, %g]: norm² = %.15f", window.kind.value, window.start, window.end, state.norm_sq)
    return state


# ---------------------------------------------------------------------- series and picture checks


@dataclass
class QRReport:
    """Deviation of the truncated Q/R series from their cos/sin resummation, per truncation order.

    Attributes:
        angle (float): Θ.
        orders (list[int]): Truncation orders N.
        q_deviation (list[float]): `||Q_N ψ - (ψ + (cosΘ - 1) M ψ)||` per order.
        r_deviation (list[float]): `||R_N ψ - sinΘ M ψ||` per order.
        q_bound (list[float]): Taylor remainder bound `Θ^(2N+2)/(2N+2)! ||Mψ||` per order.
    """

    angle: float
    orders: list[int] = field(default_factory=list)
    q_deviation: list[float] = field(default_factory=list)
    r_deviation: list[float] = field(default_factory=list)
    q_bound: list[float] = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        return max(self.q_deviation[-1], self.r_deviation[-1]) if self.orders else 0.0

    @property
    def converges_factorially(self) -> bool:
        """Every Q deviation stays within twice its Taylor remainder bound (plus round-off)."""
        return all(dev <= 2 * bound + 1e-13 for dev, bound in zip(self.q_deviation, self.q_bound))


def qr_series_check(
    table: ModeTable,
    p: int,
    axis: SpinAxis,
    state: SectorState,
    angle: float,
    truncation: int,
    observer_cell: int,
    coupling: CouplingSpec,
) -> QRReport:
    """Compare the truncated series Q (even orders) and R (odd orders) with their resummed forms.

    With `M = sum_y f(x, y) φ†_{n,1}(y) φ_{n,1}(y)` at the observer cell `x`,
    `Q_N = sum_{k<=N} (-1)^k Θ^(2k)/(2k)! M^(2k)` and `R_N = sum_{k<=N} (-1)^k Θ^(2k+1)/(2k+1)! M^(2k+1)`.
    On one-quantum states `M` is idempotent, so `Q ψ = ψ + (cosΘ - 1) M ψ` and `R ψ = sinΘ M ψ`; for a packet
    spinning up along `n` inside the aperture these are `cosΘ ψ` and `sinΘ ψ`.

    Raises:
        PreconditionError: If `truncation < 1`.
    """
    if truncation < 1:
        raise PreconditionError("The Q/R truncation order must be at least 1.")
    gate = table.lattice.distance_matrix[observer_cell] <= coupling.aperture(p) * (1 + 1e-12)
    density = [
        term for y in np.flatnonzero(gate) for term in rotated_density_terms(table, f"S{p}", axis, int(y))
    ]
    projected = apply_terms(state, density)
    q_reference = state + projected * (math.cos(angle) - 1)
    r_reference = projected * math.sin(angle)

    powers = [state]
    for _ in range(2 * truncation + 1):
        powers.append(apply_terms(powers[-1], density))
    report = QRReport(angle=angle)
    q_sum = SectorState.zero(table)
    r_sum = SectorState.zero(table)
    for k in range(truncation + 1):
        q_sum = q_sum + powers[2 * k] * ((-1) ** k * angle ** (2 * k) / math.factorial(2 * k))
        r_sum = r_sum + powers[2 * k + 1] * ((-1) ** k * angle ** (2 * k + 1) / math.factorial(2 * k + 1))
        if k == 0:
            continue
        report.orders.append(k)
        report.q_deviation.append((q_sum - q_reference).norm())
        report.r_deviation.append((r_sum - r_reference).norm())
        report.q_bound.append(angle ** (2 * k + 2) / math.factorial(2 * k + 2) * projected.norm())
    return report


def _sector_indices(state: SectorState) -> NDArray[np.int64]:
    """Dense basis indices sharing a species-count pattern with some configuration of `state`."""
    table = state.table
    basis = np.arange(1 << len(table), dtype=np.int64)
    patterns = np.zeros((len(basis), len(table.species)), dtype=np.int64)
    for column, spec in enumerate(table.species):
        block = table.species_slice(spec.id)
        mask = ((1 << (block.stop - block.start)) - 1) << block.start
        patterns[:, column] = np.bitwise_count((basis & mask).astype(np.uint64))
    present = {tuple(int(c) for c in row) for row in zip(*(state.species_counts()[s.id] for s in table.species))}
    keep = np.array([tuple(row) in present for row in patterns.tolist()])
    return basis[keep]


def dense_propagator(
    plan: StagePlan, context: ModelContext, t_query: float, indices: NDArray[np.int64]
) -> NDArray[np.complex128]:
    """Brute-force schedule propagator restricted to the basis `indices` (dense regime only)."""
    num_modes = len(context.table)
    if num_modes > _DENSE_SCHEDULE_MODES:
        raise PreconditionError(f"Dense schedules are limited to {_DENSE_SCHEDULE_MODES} modes, got {num_modes}.")

    def restricted(terms: list[OperatorTerm]) -> NDArray[np.complex128]:
        if not terms:
            return np.zeros((len(indices), len(indices)), dtype=complex)
        return terms_to_matrix(terms, num_modes)[indices][:, indices].toarray()

    free = restricted(context.free_terms())
    unitary = np.eye(len(indices), dtype=complex)
    for window in plan.windows():
        if t_query < window.start:
            break
        elapsed = min(t_query, window.end) - window.start
        if window.kind is WindowKind.FREE:
            step = scipy.linalg.expm(-1j * elapsed / context.hbar * free)
        else:
            fraction = 1.0 if window.duration == 0 else elapsed / window.duration
            interaction = restricted(
                context.measurement_terms if window.kind is WindowKind.MEASUREMENT else context.comparator_terms
            )
            moving = restricted(context.free_terms(window.moving))
            step = scipy.linalg.expm(-1j * plan.angle(window.kind) * fraction * interaction)
            step = scipy.linalg.expm(-1j * elapsed / context.hbar * moving) @ step
        unitary = step @ unitary
    return unitary


def dense_schedule_state(initial: SectorState, plan: StagePlan, context: ModelContext, t_query: float) -> SectorState:
    """Brute-force dense evolution of `initial` to `t_query`, for cross-checks of `run_schedule`."""
    indices = _sector_indices(initial)
    unitary = dense_propagator(plan, context, t_query, indices)
    vector = np.zeros(1 << len(context.table), dtype=complex)
    vector[indices] = unitary @ initial.to_dense()[indices]
    return SectorState.from_dense(context.table, vector)


@dataclass
class HeisenbergReport:
    """Schrödinger- and Heisenberg-picture values of one expectation."""

    schrodinger: complex
    heisenberg: complex
    tolerance: float = 1e-9

    @property
    def deviation(self) -> float:
        return abs(self.schrodinger - self.heisenberg)

    @property
    def passed(self) -> bool:
        return self.deviation <= self.tolerance


def heisenberg_consistency(
    initial: SectorState,
    plan: StagePlan,
    context: ModelContext,
    observable: Sequence[OperatorTerm],
    t_query: float,
) -> HeisenbergReport:
    """Check `<ψ_in| U† A U |ψ_in> = <ψ(t)| A |ψ(t)>` with a dense `U` (at most 14 modes)."""
    evolved = run_schedule(initial, plan, context, t_query)
    schrodinger = evolved.expectation(observable)
    indices = _sector_indices(initial)
    unitary = dense_propagator(plan, context, t_query, indices)
    operator = terms_to_matrix(observable, len(context.table))[indices][:, indices].toarray()
    heisenberg_operator = unitary.conj().T @ operator @ unitary
    vector = initial.to_dense()[indices]
    heisenberg = complex(np.vdot(vector, heisenberg_operator @ vector))
    report = HeisenbergReport(schrodinger=complex(schrodinger), heisenberg=heisenberg)
    logger.info("Heisenberg consistency at t=%g: deviation %.3e", t_query, report.deviation)
    return report
