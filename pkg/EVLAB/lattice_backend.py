r"""Lattice backends for scenario runs.

`TensorBackend` evolves the full single-occupancy tensor of every species; it is exact but only affordable on small
lattices. `FactorizedBackend` exploits the structure of the EPRB state,

    |Ψ> = sum_{s,t} η[s, t] |Φ1^(s)> ⊗ |Φ2^(t)> ⊗ |χ_C>,

in which the two wings only share spin coefficients until the comparator acts. Each wing `(S[p], O[p])` is evolved as
a two-species tensor per initial spin label. The comparator interaction is diagonal in observer positions, so the
comparator's reduced density matrix after the window only needs the awareness-1 densities of the wings:

    M_p[s, s'] = F diag(K_p[s, s']) Fᵀ,   K_p[s, s'](y) = sum_S Φp^(s)(S; 1, y) Φp^(s')*(S; 1, y),
    M = sum η[s1, s2] η*[s1', s2'] M_1[s1, s1'] ⊙ M_2[s2, s2'],
    ρ_11 = sin²Θ_C (χ χ†) ⊙ M,
    ρ_00 = (χ χ†) ⊙ (1 - c (T(x) + T(x')) + c² M),   T = diag M,  c = 1 - cosΘ_C,

with `F` the comparator range gate. The comparator is then propagated freely. Systems are never evolved after their
measurement: they only enter through partial traces.
"""

from __future__ import annotations

import logging
import threading
import typing
from collections.abc import Mapping, Sequence
from functools import cached_property

import numpy as np

from EVLAB.evolution import WindowKind, propagate_free, run_schedule
from EVLAB.exceptions import PreconditionError
from EVLAB.model import SINGLET, PacketEntry, build_packet_tensor, free_propagator, range_gate
from EVLAB.sector_tensor import SectorTensor

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.scenario import ScenarioSpec

logger = logging.getLogger(__name__)


def scenario_entries(
    scenario: ScenarioSpec, species: Sequence[str], amplitudes: Mapping[str, NDArray[np.complex128]] | None = None
) -> list[PacketEntry]:
    """Packet entries of some species, with explicit cell amplitudes replacing the Gaussian packets when given."""
    amplitudes = amplitudes or {}
    return [
        PacketEntry(s, scenario.internal_state(s), amplitudes.get(s, scenario.packets[s])) for s in species
    ]


class TensorBackend:
    """Exact evolution of the full sector tensor (all species at once)."""

    def __init__(self, scenario: ScenarioSpec, amplitudes: Mapping[str, NDArray[np.complex128]] | None = None):
        self.scenario = scenario
        self.context = scenario.context()
        self.initial = build_packet_tensor(
            scenario.table, scenario_entries(scenario, scenario.species, amplitudes), scenario.singlet, scenario.hbar
        )
        self._states: dict[float, SectorTensor] = {}

    def state(self, t: float) -> SectorTensor:
        if t not in self._states:
            self._states[t] = run_schedule(
                self.initial, self.scenario.plan, self.context, t, self.scenario.trajectories()
            )
        return self._states[t]

    def species_density(self, species_id: str, t: float) -> NDArray[np.float64]:
        """Occupation per `(internal label position, cell)` of one species."""
        return self.state(t).marginal_density(species_id).reshape(2, -1)


class Wing:
    """One wing `(S[p], O[p])` evolved once per initial spin vector of its system.

    Args:
        scenario (ScenarioSpec): The scenario.
        p (int): Wing index.
        spins (Sequence[NDArray]): Initial spin vectors of the system (labels 1, 2).
        amplitudes (Mapping[str, NDArray] | None, optional): Explicit cell amplitudes per species.
    """

    def __init__(
        self,
        scenario: ScenarioSpec,
        p: int,
        spins: Sequence[NDArray[np.complex128]],
        amplitudes: Mapping[str, NDArray[np.complex128]] | None = None,
    ):
        self.scenario = scenario
        self.p = p
        self.system, self.observer = f"S{p}", f"O{p}"
        self.table = scenario.subtable((self.system, self.observer))
        self.context = scenario.context(self.table)
        pair = scenario_entries(scenario, (self.system, self.observer), amplitudes)
        entries = {entry.species: entry for entry in pair}
        lattice, hbar = self.table.lattice, scenario.hbar
        system_cells = entries[self.system].amplitudes(lattice, hbar)
        observer = np.kron(np.eye(2)[0], entries[self.observer].amplitudes(lattice, hbar))
        self.initial = [
            SectorTensor.product(
                self.table,
                {self.system: np.kron(np.asarray(spin, dtype=complex), system_cells), self.observer: observer},
            )
            for spin in spins
        ]
        self._states: dict[float, list[SectorTensor]] = {}
        # scans query one shared wing from several threads
        self._lock = threading.RLock()

    @property
    def measured_at(self) -> float:
        """End of the measurement window."""
        return self.scenario.plan.times[2]

    def states(self, t: float) -> list[SectorTensor]:
        """Wing tensors at `t`; after the measurement only the observer axis is propagated."""
        with self._lock:
            if t not in self._states:
                self._states[t] = self._evolve(t)
            return self._states[t]

    def _evolve(self, t: float) -> list[SectorTensor]:
        plan, trajectories = self.scenario.plan, self.scenario.trajectories()
        if t <= self.measured_at:
            return [run_schedule(state, plan, self.context, t) for state in self.initial]
        measured = self.states(self.measured_at)
        moving = trajectories.moving_time(self.observer, t)
        moving -= trajectories.moving_time(self.observer, self.measured_at)
        return [propagate_free(state, moving, self.context, [self.observer]) for state in measured]

    @cached_property
    def gram(self) -> NDArray[np.complex128]:
        """`G[s', s] = <Φ^(s')|Φ^(s)>`; constant in time."""
        states = self.states(self.measured_at)
        return np.array([[left.inner(right) for right in states] for left in states])

    def observer_blocks(self, t: float) -> NDArray[np.complex128]:
        """`B[s, s', a, y] = sum_S Φ^(s)(S; a, y) Φ^(s')*(S; a, y)`."""
        cells = self.table.lattice.num_cells
        data = np.stack([state.data for state in self.states(t)])
        data = data.reshape(len(self.initial), -1, 2, cells)
        return np.einsum("siay,tiay->stay", data, data.conj(), optimize=True)


class FactorizedBackend:
    """Wing-factorized lattice evolution of a single-observer or EPRB scenario.

    Args:
        scenario (ScenarioSpec): The scenario.
        amplitudes (Mapping[str, NDArray] | None, optional): Explicit cell amplitudes per species.
        wings (Mapping[int, Wing] | None, optional): Already evolved wings to reuse (their axis must match).
    """

    def __init__(
        self,
        scenario: ScenarioSpec,
        amplitudes: Mapping[str, NDArray[np.complex128]] | None = None,
        wings: Mapping[int, Wing] | None = None,
    ):
        self.scenario = scenario
        self.amplitudes = dict(amplitudes or {})
        if scenario.singlet:
            self.eta = SINGLET.astype(complex)
            spins = list(np.eye(2, dtype=complex))
        else:
            self.eta = np.ones((1, 1), dtype=complex)
            spins = [scenario.internal_state("S1")]
        self.wings = dict(wings or {})
        for p in scenario.wings:
            if p not in self.wings:
                self.wings[p] = Wing(scenario, p, spins, self.amplitudes)
        self._comparator_cells = None
        if "C" in scenario.species:
            entry = scenario_entries(scenario, ("C",), self.amplitudes)[0]
            self._comparator_cells = entry.amplitudes(scenario.lattice, scenario.hbar)

    def reduced_weights(self, p: int) -> NDArray[np.complex128]:
        """Spin weights `R_p[s, s']` of wing `p` after tracing out the other wing."""
        if len(self.scenario.wings) == 1:
            return self.eta
        eta = self.eta
        if p == 1:
            return eta @ self.wings[2].gram.T @ eta.conj().T
        return eta.T @ self.wings[1].gram.T @ eta.conj()

    def observer_density(self, p: int, t: float) -> NDArray[np.float64]:
        """Density of observer `p` per `(awareness, cell)`.

        Raises:
            PreconditionError: After a comparator window with non-zero angle, where back-action on the observers is
                not represented by the wings.
        """
        t4 = self.scenario.plan.times[4]
        if self._comparator_cells is not None and t > t4 and self.scenario.plan.theta_c != 0:
            raise PreconditionError("Observer densities after the comparison need the full tensor backend.")
        blocks = self.wings[p].observer_blocks(t)
        density = np.einsum("st,stay->ay", self.reduced_weights(p), blocks)
        return density.real

    def _comparator_overlap(self) -> NDArray[np.complex128]:
        """The two-wing overlap matrix `M(x, x')` of the comparator gate."""
        t3 = self.scenario.plan.times[3]
        gate = range_gate(self.scenario.lattice, self.scenario.coupling.range_ac)
        overlaps = []
        for p in (1, 2):
            aware = self.wings[p].observer_blocks(t3)[:, :, 1, :]
            overlaps.append(np.einsum("xy,sty,zy->stxz", gate, aware, gate, optimize=True))
        first, second = overlaps
        return np.einsum("ab,cd,acxz,bdxz->xz", self.eta, self.eta.conj(), first, second, optimize=True)

    def comparator_density(self, t: float) -> NDArray[np.float64]:
        """Density of the comparator per `(awareness, cell)`."""
        if self._comparator_cells is None:
            raise PreconditionError("The scenario has no comparator.")
        scenario = self.scenario
        plan, trajectories = scenario.plan, scenario.trajectories()
        t3, t4 = plan.times[3], plan.times[4]
        mass, lattice = scenario.packets["C"].mass, scenario.lattice
        chi = free_propagator(lattice, mass, trajectories.moving_time("C", min(t, t3)), scenario.hbar)
        chi = chi @ self._comparator_cells
        density = np.zeros((2, lattice.num_cells))
        if t < t3:
            density[0] = np.abs(chi) ** 2
            return density
        fraction = 1.0 if t4 == t3 else min(1.0, (t - t3) / (t4 - t3))
        angle = plan.angle(WindowKind.COMPARATOR) * fraction
        overlap = self._comparator_overlap()
        outer = np.outer(chi, chi.conj())
        shrink = 1 - np.cos(angle)
        diagonal = np.diag(overlap)
        rho_aware = np.sin(angle) ** 2 * outer * overlap
        rho_ignorant = outer * (1 - shrink * (diagonal[:, None] + diagonal[None, :]) + shrink**2 * overlap)
        elapsed = trajectories.moving_time("C", t) - trajectories.moving_time("C", t3)
        propagator = free_propagator(lattice, mass, elapsed, scenario.hbar)
        for label, rho in enumerate((rho_ignorant, rho_aware)):
            density[label] = np.sum((propagator @ rho) * propagator.conj(), axis=1).real
        return density

    def species_density(self, species_id: str, t: float) -> NDArray[np.float64]:
        """Occupation per `(internal label position, cell)` of an observer or the comparator."""
        match species_id[0]:
            case "O":
                return self.observer_density(int(species_id[1:]), t)
            case "C":
                return self.comparator_density(t)
            case _:
                raise PreconditionError(f"The factorized backend does not report system densities ({species_id}).")
