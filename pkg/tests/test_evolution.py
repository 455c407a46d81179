import math

import numpy as np
import pytest

from EVLAB.evolution import (
    ModelContext,
    StagePlan,
    TrajectoryPlan,
    WindowKind,
    dense_schedule_state,
    heisenberg_consistency,
    propagate_free,
    propagate_interaction,
    qr_series_check,
    run_schedule,
)
from EVLAB.exceptions import PreconditionError
from EVLAB.lattice import Lattice, ModeTable, SpeciesSpec
from EVLAB.model import CouplingSpec, PacketEntry, SpinAxis, build_packet_tensor, number_density_terms
from EVLAB.sector_tensor import SectorTensor

ABS_TOL = 1e-10  # absolute tolerance for close comparisons

LATTICE = Lattice(dim=1, sites_per_axis=2)
TABLE = ModeTable(LATTICE, [SpeciesSpec.system("S1"), SpeciesSpec.observer("O1")])
COUPLING = CouplingSpec(range_a=(1.0,), range_ac=1.0)
LOCAL = CouplingSpec(range_a=(0.5,), range_ac=0.5)


def _initial(spin=(0.6, 0.8)) -> SectorTensor:
    entries = [
        PacketEntry("S1", list(spin), np.array([1.0, 0.2])),
        PacketEntry("O1", 0, np.array([0.3, 1.0])),
    ]
    return build_packet_tensor(TABLE, entries)


def _aware(state) -> float:
    if isinstance(state, SectorTensor):
        return float(state.marginal_density("O1").reshape(2, -1)[1].sum())
    ranks = [TABLE.rank("O1", 1, cell) for cell in range(LATTICE.num_cells)]
    return float(state.mode_density()[ranks].sum())


def test_stage_plan():
    """Stage times must be ordered; windows and query times follow from them."""
    plan = StagePlan((0.0, 1.0, 1.0, 2.0, 2.0))
    assert [w.kind for w in plan.windows()] == [
        WindowKind.FREE,
        WindowKind.MEASUREMENT,
        WindowKind.FREE,
        WindowKind.COMPARATOR,
        WindowKind.FREE,
    ]
    assert plan.query_times == {"t23": 1.5, "t45": 2.2}
    assert len(StagePlan((0.0, 1.0, 1.0, 2.0, 2.0), comparator=False).windows()) == 3
    with pytest.raises(PreconditionError):
        StagePlan((0.0, 1.0, 0.5, 2.0, 2.0))


def test_coupling_strength():
    """Sudden windows have unbounded coupling; finite ones carry κ = ħΘ/Δt."""
    assert math.isinf(StagePlan().coupling_strength(WindowKind.MEASUREMENT))
    plan = StagePlan((0.0, 1.0, 1.5, 2.0, 2.0), theta=math.pi / 2)
    assert math.isclose(plan.coupling_strength(WindowKind.MEASUREMENT), math.pi, abs_tol=ABS_TOL)


def test_moving_time():
    """Each kind only moves in the windows that keep its kinetic term."""
    plan = StagePlan((0.0, 1.0, 2.0, 3.0, 4.0))
    trajectories = TrajectoryPlan({"O1": (0.0,), "C": (0.0,), "S1": (0.0,)}, {}, plan)
    assert math.isclose(trajectories.moving_time("O1", 4.0), 2.0, abs_tol=ABS_TOL)
    assert math.isclose(trajectories.moving_time("C", 4.0), 3.0, abs_tol=ABS_TOL)
    assert math.isclose(trajectories.moving_time("S1", 4.0), 3.0, abs_tol=ABS_TOL)


def test_encounter_intervals():
    """A system crossing a static observer is within range for a closed interval around the crossing."""
    plan = StagePlan((0.0, 10.0, 10.0, 20.0, 20.0), comparator=False)
    trajectories = TrajectoryPlan({"S1": (10.0,), "O1": (0.0,)}, {"S1": (-1.0,), "O1": (0.0,)}, plan)
    (interval,) = trajectories.encounter_intervals("S1", "O1", 2.0, 20.0)
    assert np.allclose(interval, (8.0, 12.0), atol=ABS_TOL)
    assert math.isclose(trajectories.alignment_residuals()["S1-O1@t1"], 0.0, abs_tol=ABS_TOL)


@pytest.mark.parametrize("spin", [(1.0, 0.0), (0.6, 0.8), (0.0, 1.0)])
def test_sudden_measurement_probability(spin):
    """With Θ = π/2 the observer becomes aware with the Born weight of spin up."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis()})
    plan = StagePlan((0.0, 1.0, 1.0, 2.0, 2.0), comparator=False)
    tensor = run_schedule(_initial(spin), plan, context, 1.5)
    sparse = run_schedule(_initial(spin).to_state(), plan, context, 1.5)
    expected = abs(spin[0]) ** 2 / (abs(spin[0]) ** 2 + abs(spin[1]) ** 2)
    assert math.isclose(_aware(tensor), expected, abs_tol=ABS_TOL)
    assert math.isclose(_aware(sparse), expected, abs_tol=ABS_TOL)
    assert math.isclose(tensor.norm(), 1.0, abs_tol=ABS_TOL)


def test_propagate_interaction_window():
    """A bare measurement window of angle π/2 makes the observer aware with the spin-up weight."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis()})
    state = propagate_interaction(_initial(), WindowKind.MEASUREMENT, context, math.pi / 2)
    assert math.isclose(_aware(state), 0.36, abs_tol=ABS_TOL)
    idle = propagate_interaction(_initial(), WindowKind.MEASUREMENT, context, 0.0)
    assert math.isclose(_aware(idle), 0.0, abs_tol=ABS_TOL)
    with pytest.raises(PreconditionError):
        propagate_interaction(_initial(), WindowKind.FREE, context, 1.0)


def test_window_order_matters():
    """The schedule applies free motion before the measurement, and swapping the two changes the outcome."""
    context = ModelContext(TABLE, LOCAL, {1: SpinAxis()})
    plan = StagePlan((0.0, 1.0, 1.0, 2.0, 2.0), comparator=False)
    scheduled = run_schedule(_initial(), plan, context, 2.0)
    moved = propagate_free(_initial(), 1.0, context)
    in_order = propagate_free(propagate_interaction(moved, WindowKind.MEASUREMENT, context, math.pi / 2), 1.0, context)
    measured = propagate_interaction(_initial(), WindowKind.MEASUREMENT, context, math.pi / 2)
    swapped = propagate_free(measured, 2.0, context)
    assert np.allclose(scheduled.data, in_order.data, atol=ABS_TOL)
    assert abs(_aware(scheduled) - _aware(swapped)) > 1e-3


@pytest.mark.parametrize("pieces", [2, 5])
def test_split_window_matches_single_window(pieces):
    """Cutting a sudden window into equal angle slices reproduces the single window."""
    context = ModelContext(TABLE, LOCAL, {1: SpinAxis(1.1, 0.4)})
    whole = propagate_interaction(_initial(), WindowKind.MEASUREMENT, context, 1.3)
    split = _initial()
    for _ in range(pieces):
        split = propagate_interaction(split, WindowKind.MEASUREMENT, context, 1.3 / pieces)
    assert np.allclose(split.data, whole.data, atol=1e-8)


def test_awareness_grows_with_aperture():
    """Widening the aperture never lowers the probability of awareness."""
    lattice = Lattice(dim=1, sites_per_axis=6)
    table = ModeTable(lattice, [SpeciesSpec.system("S1"), SpeciesSpec.observer("O1")])
    entries = [
        PacketEntry("S1", [0.6, 0.8], np.array([0.1, 0.5, 1.0, 0.7, 0.2, 0.05])),
        PacketEntry("O1", 0, np.array([0.9, 0.4, 0.1, 0.3, 0.6, 1.0])),
    ]
    initial = build_packet_tensor(table, entries)
    aware = []
    for radius in (0.5, 1.0, 2.0, 3.0, 5.0):
        context = ModelContext(table, CouplingSpec(range_a=(radius,), range_ac=1.0), {1: SpinAxis()})
        aware.append(_aware(propagate_interaction(initial, WindowKind.MEASUREMENT, context, math.pi / 2)))
    assert all(later >= earlier - ABS_TOL for earlier, later in zip(aware, aware[1:]))
    assert aware[0] < aware[-1]
    assert math.isclose(aware[-1], 0.36, abs_tol=ABS_TOL)


def test_partial_window_interpolates_angle():
    """Half-way through a finite measurement window the angle is Θ/2."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis()})
    plan = StagePlan((0.0, 1.0, 2.0, 3.0, 3.0), theta=math.pi / 2, comparator=False)
    state = run_schedule(_initial((1.0, 0.0)), plan, context, 1.5)
    assert math.isclose(_aware(state), math.sin(math.pi / 4) ** 2, abs_tol=ABS_TOL)


def test_dense_schedule_matches_staged():
    """Brute-force dense evolution agrees with the staged sparse evolution."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis(1.1, 0.4)})
    plan = StagePlan((0.0, 0.7, 1.2, 2.0, 2.0), theta=1.1, comparator=False)
    initial = _initial().to_state()
    staged = run_schedule(initial, plan, context, 2.4)
    dense = dense_schedule_state(initial, plan, context, 2.4)
    assert (staged - dense).norm() <= 1e-8


def test_heisenberg_consistency():
    """The Schrödinger and Heisenberg pictures give the same observer density."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis(0.5, 0.0)})
    plan = StagePlan((0.0, 0.5, 0.5, 1.0, 1.0), theta=0.9, comparator=False)
    observable = number_density_terms(TABLE, "O1", 1, 1)
    report = heisenberg_consistency(_initial().to_state(), plan, context, observable, 0.8)
    assert report.passed


def test_qr_series_resummation():
    """Truncated Q/R series converge factorially to their cos/sin forms."""
    axis = SpinAxis(0.7, 0.2)
    up = axis.spinor(1)
    entries = [PacketEntry("S1", list(up), np.array([1.0, 0.0])), PacketEntry("O1", 0, np.array([1.0, 0.0]))]
    state = build_packet_tensor(TABLE, entries).to_state()
    report = qr_series_check(TABLE, 1, axis, state, math.pi / 2, 8, 0, COUPLING)
    assert report.orders == list(range(1, 9))
    assert report.max_deviation <= 1e-6
    assert report.converges_factorially


def test_negative_durations_rejected():
    """Propagation never runs backwards."""
    context = ModelContext(TABLE, COUPLING, {1: SpinAxis()})
    with pytest.raises(PreconditionError):
        propagate_free(_initial(), -1.0, context)
    with pytest.raises(PreconditionError):
        run_schedule(_initial(), StagePlan(), context, -0.5)
