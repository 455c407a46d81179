"""Scenario description, the S1-S4 audit and the standard layouts.

A `ScenarioSpec` fixes everything a run needs: packets at `t0`, couplings, the schedule, analyser axes and the
system spin. The layout factories place the packets so that the experiment is perfectly aligned (systems meet their
observers at t1, observers meet each other and the comparator at t3), the audit passes, and every moving packet
carries the same lattice momentum `m|v|Δx/ħ` below the aliasing bound.
"""

from __future__ import annotations

import enum
import logging
import math
import typing
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from functools import cached_property
from itertools import combinations

import numpy as np

from EVLAB.evolution import ModelContext, StagePlan, TrajectoryPlan
from EVLAB.exceptions import PreconditionError, ScenarioError
from EVLAB.lattice import Lattice, ModeTable, SpeciesKind, SpeciesSpec
from EVLAB.model import (
    ALIASING_BOUND,
    CouplingSpec,
    PacketEntry,
    SpinAxis,
    WavepacketSpec,
    discretize_packet,
    internal_amplitudes,
)

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

SEPARATION_WIDTHS = 5.0
MARGIN_WIDTHS = 7.0
_ALIGNMENT_TOLERANCE = 1e-9


class ScenarioKind(enum.Enum):
    SINGLE_OBSERVER = "single_observer"
    EPRB = "eprb"


class Backend(enum.Enum):
    LATTICE = "lattice"
    ANALYTIC = "analytic"
    BOTH = "both"

    @property
    def runs_lattice(self) -> bool:
        return self is not Backend.ANALYTIC

    @property
    def runs_analytic(self) -> bool:
        return self is not Backend.LATTICE


@dataclass
class AuditReport:
    """Outcome of the scenario audit: one entry per condition tag (`S1`..`S4`, `alignment`)."""

    passed: dict[str, bool] = field(default_factory=dict)
    messages: dict[str, list[str]] = field(default_factory=dict)

    def fail(self, condition: str, message: str) -> None:
        self.passed[condition] = False
        self.messages.setdefault(condition, []).append(message)

    def succeed(self, condition: str) -> None:
        self.passed.setdefault(condition, True)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def raise_first(self) -> None:
        """Raise `ScenarioError` for the first violated condition, in tag order."""
        for condition in sorted(self.passed):
            if not self.passed[condition]:
                raise ScenarioError(condition, "; ".join(self.messages[condition]))


@dataclass(frozen=True)
class ScenarioSpec:
    """A complete scenario.

    Attributes:
        kind (ScenarioKind): Single observer or EPRB.
        lattice (Lattice): The lattice.
        packets (Mapping[str, WavepacketSpec]): Packet of every physical species at `t0`; masses come from here.
        coupling (CouplingSpec): Couplings and apertures.
        plan (StagePlan): Stage times and sudden angles.
        axes (Mapping[int, SpinAxis]): Analyser axis per wing.
        spin (tuple[complex, complex]): Spin coefficients `b_1, b_2` of the single-observer system.
        hbar (float): Reduced Planck constant.
        aligned (bool): Whether perfect alignment is requested; False marks deliberately closed gates.
    """

    kind: ScenarioKind
    lattice: Lattice
    packets: Mapping[str, WavepacketSpec]
    coupling: CouplingSpec
    plan: StagePlan
    axes: Mapping[int, SpinAxis]
    spin: tuple[complex, complex] = (1.0, 0.0)
    hbar: float = 1.0
    aligned: bool = True

    @property
    def wings(self) -> tuple[int, ...]:
        return (1, 2) if self.kind is ScenarioKind.EPRB else (1,)

    @property
    def species(self) -> tuple[str, ...]:
        return ("S1", "S2", "O1", "O2", "C") if self.kind is ScenarioKind.EPRB else ("S1", "O1")

    @property
    def singlet(self) -> tuple[str, str] | None:
        return ("S1", "S2") if self.kind is ScenarioKind.EPRB else None

    def species_spec(self, species_id: str) -> SpeciesSpec:
        mass = self.packets[species_id].mass
        match species_id[0]:
            case "S":
                return SpeciesSpec.system(species_id, mass)
            case "O":
                return SpeciesSpec.observer(species_id, mass)
            case _:
                return SpeciesSpec.comparator(species_id, mass)

    @cached_property
    def table(self) -> ModeTable:
        return ModeTable(self.lattice, [self.species_spec(species_id) for species_id in self.species])

    def subtable(self, species: tuple[str, ...]) -> ModeTable:
        """Mode table of a subset of the species (same lattice and masses)."""
        return ModeTable(self.lattice, [self.species_spec(species_id) for species_id in species])

    def internal_state(self, species_id: str) -> NDArray[np.complex128]:
        """Initial internal amplitudes; the EPRB systems are reported with the singlet's first component."""
        spec = self.species_spec(species_id)
        if spec.kind is SpeciesKind.SYSTEM:
            return internal_amplitudes(spec, list(self.spin))
        return internal_amplitudes(spec, 0)

    def entries(self) -> list[PacketEntry]:
        return [PacketEntry(s, self.internal_state(s), self.packets[s]) for s in self.species]

    def context(self, table: ModeTable | None = None) -> ModelContext:
        return ModelContext(table or self.table, self.coupling, dict(self.axes), self.hbar)

    def trajectories(self) -> TrajectoryPlan:
        return TrajectoryPlan(
            {s: packet.center for s, packet in self.packets.items()},
            {s: packet.velocity for s, packet in self.packets.items()},
            self.plan,
        )

    def amplitudes(self, species_id: str) -> NDArray[np.complex128]:
        """Discretized spatial amplitudes of one packet."""
        return discretize_packet(self.packets[species_id], self.lattice, self.hbar)

    def with_axes(self, axes: Mapping[int, SpinAxis]) -> ScenarioSpec:
        return replace(self, axes={**self.axes, **axes})

    def query_times(self) -> dict[str, float]:
        return self.plan.query_times

    # ------------------------------------------------------------------ audit

    def interacting_pairs(self) -> dict[tuple[str, str], float]:
        """Pairs coupled by an interaction, with the aperture of that interaction."""
        pairs = {(f"S{p}", f"O{p}"): self.coupling.aperture(p) for p in self.wings}
        if self.kind is ScenarioKind.EPRB:
            pairs.update({("O1", "C"): self.coupling.range_ac, ("O2", "C"): self.coupling.range_ac})
        return pairs

    def audit(self, strict: bool = True) -> AuditReport:
        """Check conditions S1-S4 and, when requested, perfect alignment.

        S1: one quantum per species, every packet resolved by the lattice. S2: observers and the comparator start
        well separated from each other and from the systems (5 widths plus the aperture of the pair's interaction).
        S3: observers and comparator start in awareness 0. S4: each interacting pair is within its aperture during a
        single interval containing its window time, and every measurement interval ends before any comparator
        interval starts.

        Args:
            strict (bool, optional): Raise `ScenarioError` at the first violation. Defaults to True.

        Returns:
            AuditReport: The per-condition outcome.
        """
        report = AuditReport()
        self._audit_localization(report)
        self._audit_separation(report)
        self._audit_awareness(report)
        self._audit_encounters(report)
        if self.aligned:
            for name, residual in self.trajectories().alignment_residuals().items():
                if residual > _ALIGNMENT_TOLERANCE * max(1.0, self.lattice.extent):
                    report.fail("alignment", f"{name} misaligned by {residual:.3g}")
            report.succeed("alignment")
        if strict:
            report.raise_first()
        logger.debug("Scenario audit: %s", report.passed)
        return report

    def _audit_localization(self, report: AuditReport) -> None:
        missing = set(self.species) - set(self.packets)
        if missing:
            report.fail("S1", f"no packet for {sorted(missing)}")
        for species_id in self.species:
            if species_id not in self.packets:
                continue
            try:
                discretize_packet(self.packets[species_id], self.lattice, self.hbar)
            except PreconditionError as error:
                report.fail("S1", f"{species_id}: {error}")
        report.succeed("S1")

    def _audit_separation(self, report: AuditReport) -> None:
        coupled = self.interacting_pairs()
        for first, second in combinations(self.species, 2):
            if first[0] == "S" and second[0] == "S":
                continue
            radius = coupled.get((first, second), coupled.get((second, first), 0.0))
            width = max(self.packets[first].width, self.packets[second].width)
            needed = SEPARATION_WIDTHS * width + radius
            distance = float(np.linalg.norm(np.subtract(self.packets[first].center, self.packets[second].center)))
            if distance <= needed:
                report.fail("S2", f"{first}-{second} start {distance:.4g} apart, need more than {needed:.4g}")
        report.succeed("S2")

    def _audit_awareness(self, report: AuditReport) -> None:
        for species_id in self.species:
            if species_id[0] in "OC" and abs(self.internal_state(species_id)[1]) > 0:
                report.fail("S3", f"{species_id} does not start in awareness 0")
        report.succeed("S3")

    def _audit_encounters(self, report: AuditReport) -> None:
        trajectories = self.trajectories()
        t0, t1, _, t3, t4 = self.plan.times
        horizon = t4 + (t4 - t0)
        measurement_end, comparator_start = -math.inf, math.inf
        for (first, second), radius in self.interacting_pairs().items():
            window_time = t1 if first[0] == "S" else t3
            intervals = trajectories.encounter_intervals(first, second, radius, horizon)
            if self.aligned:
                if len(intervals) != 1 or not intervals[0][0] <= window_time <= intervals[0][1]:
                    report.fail("S4", f"{first}-{second} encounters {intervals} do not bracket t={window_time:g}")
            elif len(intervals) > 1:
                report.fail("S4", f"{first}-{second} meet repeatedly: {intervals}")
            if not intervals:
                continue
            if first[0] == "S":
                measurement_end = max(measurement_end, intervals[-1][1])
            else:
                comparator_start = min(comparator_start, intervals[0][0])
        if measurement_end >= comparator_start:
            report.fail("S4", f"measurement encounters end at {measurement_end:.4g} after comparison starts")
        report.succeed("S4")

    def describe(self) -> dict[str, typing.Any]:
        """Plain parameters for result echoes."""
        return {
            "kind": self.kind.value,
            "lattice": {
                "dim": self.lattice.dim,
                "sites_per_axis": self.lattice.sites_per_axis,
                "spacing": self.lattice.spacing,
                "boundary": self.lattice.boundary.value,
            },
            "packets": {
                s: {"center": list(p.center), "width": p.width, "velocity": list(p.velocity), "mass": p.mass}
                for s, p in self.packets.items()
            },
            "coupling": {"range_a": list(self.coupling.range_a), "range_ac": self.coupling.range_ac},
            "plan": {"times": list(self.plan.times), "theta": self.plan.theta, "theta_c": self.plan.theta_c},
            "axes": {str(p): {"theta": axis.theta, "phi": axis.phi} for p, axis in self.axes.items()},
            "spin": [[complex(b).real, complex(b).imag] for b in self.spin],
            "hbar": self.hbar,
            "aligned": self.aligned,
        }


# ---------------------------------------------------------------------- layouts


@dataclass(frozen=True)
class LayoutParameters:
    """Knobs of the standard layouts (lengths in lattice units).

    Attributes:
        width (float): Packet width `α^(-1/2)`, shared by all packets.
        aperture (float): Observer aperture `a`.
        aperture_c (float): Comparator aperture `a_C`.
        spacing (float): Lattice spacing `Δx`.
        hbar (float): Reduced Planck constant.
        lattice_momentum (float): `m|v|Δx/ħ` of every moving packet; below π/4.
        duration (float): Length of the run before the last window (t4 - t0, or t3 - t0 for one observer).
        observer_mass_ratio (float): Mass of the static single observer relative to its system.
    """

    width: float = 16.0
    aperture: float = 64.0
    aperture_c: float = 128.0
    spacing: float = 1.0
    hbar: float = 1.0
    lattice_momentum: float = 0.72
    duration: float = 100.0
    observer_mass_ratio: float = 100.0

    def __post_init__(self):
        if not 0 < self.lattice_momentum < ALIASING_BOUND:
            raise PreconditionError(f"lattice_momentum must lie in (0, π/4), got {self.lattice_momentum}.")
        if min(self.width, self.aperture, self.aperture_c, self.spacing, self.hbar, self.duration) <= 0:
            raise PreconditionError("Layout lengths, ħ and the duration must be positive.")
        if self.aperture < self.spacing or self.aperture_c < self.spacing:
            raise PreconditionError("Apertures must span at least one lattice cell.")

    @property
    def width_param(self) -> float:
        return self.width**-2

    def mass_for(self, speed: float) -> float:
        """Mass giving a packet of this speed the configured lattice momentum."""
        return self.lattice_momentum * self.hbar / (abs(speed) * self.spacing)

    def snap(self, length: float) -> float:
        """Round a length up to a whole number of cells."""
        return math.ceil(length / self.spacing - 1e-9) * self.spacing

    def separation(self, aperture: float) -> float:
        return self.snap(SEPARATION_WIDTHS * self.width + aperture + 2 * self.spacing)

    @property
    def margin(self) -> float:
        return self.snap(MARGIN_WIDTHS * self.width)


def single_observer_layout(
    parameters: LayoutParameters | None = None,
    theta: float = math.pi / 2,
    spin: tuple[complex, complex] = (1.0, 0.0),
    axis: SpinAxis | None = None,
    gate_off: bool = False,
) -> ScenarioSpec:
    """One system moving onto a heavy static observer, meeting it at `t1 = duration / 2`.

    With `gate_off` the system stays at rest at its start, so the measurement gate never opens.
    """
    parameters = parameters or LayoutParameters()
    duration = parameters.duration
    t1 = duration / 2
    separation = parameters.separation(parameters.aperture)
    origin = parameters.margin + parameters.spacing / 2
    sites = round((2 * parameters.margin + separation) / parameters.spacing) + 1
    lattice = Lattice(dim=1, sites_per_axis=sites, spacing=parameters.spacing)
    speed = separation / t1
    system_mass = parameters.mass_for(speed)
    packets = {
        "S1": WavepacketSpec(
            (origin + separation,), parameters.width_param, (0.0 if gate_off else -speed,), system_mass
        ),
        "O1": WavepacketSpec((origin,), parameters.width_param, (0.0,), system_mass * parameters.observer_mass_ratio),
    }
    plan = StagePlan((0.0, t1, t1, duration, duration), theta=theta, theta_c=0.0, comparator=False)
    coupling = CouplingSpec(range_a=(parameters.aperture,), range_ac=parameters.aperture_c)
    return ScenarioSpec(
        ScenarioKind.SINGLE_OBSERVER,
        lattice,
        packets,
        coupling,
        plan,
        {1: axis or SpinAxis()},
        spin=spin,
        hbar=parameters.hbar,
        aligned=not gate_off,
    )


def eprb_layout(
    parameters: LayoutParameters | None = None,
    theta: float = math.pi / 2,
    beta: float = 0.1,
    n1: SpinAxis | None = None,
    n2: SpinAxis | None = None,
) -> ScenarioSpec:
    """The EPRB geometry in one dimension.

    The singlet pair starts at the source `s`; observer O1 starts at `s - R` moving right, O2 at `s + R` moving left,
    both reaching `s` at `t3`. The comparator starts at `s + R + R_C` and also reaches `s` at `t3`. The systems fly
    apart and meet their observers at `t1`, chosen so that the measurement encounters end well before the
    comparator encounters start.
    """
    parameters = parameters or LayoutParameters()
    n1 = n1 or SpinAxis()
    n2 = n2 or SpinAxis(math.pi / 2, 0.0)
    t3 = parameters.duration
    reach = parameters.separation(parameters.aperture)
    reach_c = parameters.separation(parameters.aperture_c)
    # measurement encounters end at t1 (1 + a/R); the first comparator encounter starts at t3 (1 - a_C/R_C)
    fraction = 0.8 * (1 - parameters.aperture_c / reach_c) / (1 + parameters.aperture / reach)
    t1 = fraction * t3
    observer_speed = reach / t3
    system_speed = reach / t1 - observer_speed
    comparator_speed = (reach + reach_c) / t3

    source = parameters.margin + reach + parameters.spacing / 2
    sites = round((2 * parameters.margin + 2 * reach + reach_c) / parameters.spacing) + 1
    lattice = Lattice(dim=1, sites_per_axis=sites, spacing=parameters.spacing)
    alpha = parameters.width_param

    def packet(center: float, velocity: float) -> WavepacketSpec:
        return WavepacketSpec((center,), alpha, (velocity,), parameters.mass_for(velocity))

    packets = {
        "S1": packet(source, -system_speed),
        "S2": packet(source, system_speed),
        "O1": packet(source - reach, observer_speed),
        "O2": packet(source + reach, -observer_speed),
        "C": packet(source + reach + reach_c, -comparator_speed),
    }
    plan = StagePlan((0.0, t1, t1, t3, t3), theta=theta, theta_c=beta)
    coupling = CouplingSpec(range_a=(parameters.aperture,), range_ac=parameters.aperture_c)
    logger.debug("EPRB layout: %d sites, t1 = %.4g, speeds %.4g/%.4g/%.4g", sites, t1, system_speed,
                 observer_speed, comparator_speed)
    return ScenarioSpec(
        ScenarioKind.EPRB, lattice, packets, coupling, plan, {1: n1, 2: n2}, spin=(1.0, 0.0), hbar=parameters.hbar
    )
