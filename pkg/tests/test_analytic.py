import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from EVLAB.analytic import (
    ConvergenceReport,
    ConvergenceRow,
    MNConfiguration,
    TailIntegralSpec,
    continuum_packet,
    fit_decay_slope,
    green_composition_check,
    mn_density,
    mn_run,
    mn_vs_lattice,
    outcome_probabilities,
    spread_width_param,
    tail_integral,
    tail_scan,
)
from EVLAB.exceptions import PreconditionError
from EVLAB.model import SpinAxis, WavepacketSpec
from EVLAB.scenario import LayoutParameters, eprb_layout, single_observer_layout
from EVLAB.utils import Ket

ABS_TOL = 1e-12  # absolute tolerance for close comparisons

AXIS_ANGLES = st.tuples(st.floats(0.0, math.pi), st.floats(0.0, 2 * math.pi))


@pytest.mark.parametrize("theta", [math.pi / 2, 1.0, 0.0])
def test_single_observer_awareness(theta):
    """The observer ends aware with |b1|² sin²Θ."""
    result = mn_run(single_observer_layout(theta=theta, spin=(0.6, 0.8)))
    assert result.gates == {"M1": True}
    assert math.isclose(result.p_observer[1], 0.36 * math.sin(theta) ** 2, abs_tol=ABS_TOL)
    assert result.p_comparator is None
    assert result.prediction is None


def test_closed_gate_keeps_observer_unaware():
    """An observer out of range never registers anything."""
    result = mn_run(single_observer_layout(gate_off=True))
    assert result.gates == {"M1": False}
    assert math.isclose(result.p_observer[1], 0.0, abs_tol=ABS_TOL)


def test_nothing_happens_before_the_measurement():
    """Before t1 the register is still the initial state."""
    scenario = eprb_layout()
    result = mn_run(scenario, scenario.plan.times[1] / 2)
    assert all(math.isclose(p, 0.0, abs_tol=ABS_TOL) for p in result.p_observer.values())
    assert math.isclose(result.p_comparator, 0.0, abs_tol=ABS_TOL)


def test_singlet_observers_are_unbiased():
    """Each observer of the singlet is aware with probability sin²Θ / 2 after the measurement."""
    scenario = eprb_layout(n2=SpinAxis(1.0, 2.0))
    result = mn_run(scenario, scenario.query_times()["t23"])
    assert math.isclose(result.p_observer[1], 0.5, abs_tol=ABS_TOL)
    assert math.isclose(result.p_observer[2], 0.5, abs_tol=ABS_TOL)


@settings(max_examples=20, deadline=None)
@given(
    st.floats(0.0, math.pi),
    st.floats(0.01, 0.5),
    st.floats(0.1, math.pi / 2),
)
def test_comparator_matches_prediction(theta12, beta, theta):
    """`P(C = 1) = sin²β sin⁴Θ (1 - cosθ12) / 4` for analysers in a plane."""
    scenario = eprb_layout(theta=theta, beta=beta, n2=SpinAxis(theta12, 0.0))
    result = mn_run(scenario)
    expected = math.sin(beta) ** 2 * math.sin(theta) ** 4 * (1 - math.cos(theta12)) / 4
    assert math.isclose(result.p_comparator, expected, abs_tol=ABS_TOL)
    assert math.isclose(result.prediction, expected, abs_tol=ABS_TOL)
    assert math.isclose(result.perturbative, beta**2 * expected / math.sin(beta) ** 2, abs_tol=ABS_TOL)


@settings(max_examples=20, deadline=None)
@given(AXIS_ANGLES, AXIS_ANGLES)
def test_first_observer_ignores_second_axis(first, second):
    """`P(O1 = 1)` does not depend on the analyser of the other wing."""
    n1 = SpinAxis(*first)
    reference = mn_run(eprb_layout(n1=n1, n2=SpinAxis()))
    turned = mn_run(eprb_layout(n1=n1, n2=SpinAxis(*second)))
    assert math.isclose(turned.p_observer[1], reference.p_observer[1], abs_tol=1e-9)


@settings(max_examples=20, deadline=None)
@given(AXIS_ANGLES, AXIS_ANGLES, st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3))
def test_comparator_depends_only_on_relative_axes(first, second, rotation_vector):
    """`P(C = 1)` is symmetric in the two analysers and unchanged when both turn together."""
    n1, n2 = SpinAxis(*first), SpinAxis(*second)
    rotation = Rotation.from_rotvec(rotation_vector)
    turned = [SpinAxis.from_vector(rotation.apply(axis.n)) for axis in (n1, n2)]
    base = mn_run(eprb_layout(n1=n1, n2=n2)).p_comparator
    swapped = mn_run(eprb_layout(n1=n2, n2=n1)).p_comparator
    rotated = mn_run(eprb_layout(n1=turned[0], n2=turned[1])).p_comparator
    assert math.isclose(swapped, base, abs_tol=1e-10)
    assert math.isclose(rotated, base, abs_tol=1e-10)
    expected = math.sin(0.1) ** 2 * (1 - n1.n @ n2.n) / 4
    assert math.isclose(base, expected, abs_tol=1e-10)


def test_parallel_analysers_never_agree():
    """With n1 = n2 the singlet observers are never both aware, so the comparator stays unaware."""
    result = mn_run(eprb_layout(n2=SpinAxis()))
    both = [weight for label, weight in result.joint.items() if label.startswith(Ket.aware * 2)]
    assert len(both) == 2
    assert all(math.isclose(weight, 0.0, abs_tol=ABS_TOL) for weight in both)
    assert math.isclose(result.p_comparator, 0.0, abs_tol=ABS_TOL)
    assert math.isclose(sum(result.joint.values()), 1.0, abs_tol=ABS_TOL)


def test_mn_density_is_a_spike():
    """MN densities sit on the cell nearest the classical position."""
    scenario = single_observer_layout(spin=(0.6, 0.8))
    config = MNConfiguration.from_scenario(scenario)
    t45 = scenario.query_times()["t45"]
    density = mn_density(config, "O1", 1, t45, scenario.lattice)
    cell = scenario.lattice.nearest_cell(config.trajectories.position("O1", t45))
    assert np.flatnonzero(density).tolist() == [cell]
    assert math.isclose(density.sum(), 0.36, abs_tol=ABS_TOL)
    assert math.isclose(mn_density(config, "O1", 0, t45, scenario.lattice).sum(), 0.64, abs_tol=ABS_TOL)


def test_continuum_packet_spreads():
    """The evolved packet stays normalized and its density has width parameter α / (1 + τ²)."""
    packet = WavepacketSpec((0.0,), 0.5, (1.5,), 2.0)
    t = 3.0
    xs = np.linspace(-40.0, 50.0, 20001)
    density = np.abs(continuum_packet(xs, t, packet)) ** 2
    assert math.isclose(np.trapezoid(density, xs), 1.0, abs_tol=1e-9)
    alpha_tilde = spread_width_param(0.5, 2.0, t)
    assert math.isclose(alpha_tilde, 0.5 / (1 + 0.75**2), abs_tol=ABS_TOL)
    center = 1.5 * t
    expected = math.sqrt(alpha_tilde / math.pi) * np.exp(-alpha_tilde * (xs - center) ** 2)
    assert np.allclose(density, expected, atol=1e-12)
    with pytest.raises(PreconditionError):
        continuum_packet(0.0, -1.0, packet)


def test_green_function_composes():
    """Propagating with the Green's function continues the closed-form evolution."""
    packet = WavepacketSpec((0.0,), 1.0, (0.5,), 1.0)
    report = green_composition_check(packet, 0.3, 0.2, [-1.0, 0.0, 0.7])
    assert report.passed, report.deviations


def test_whole_space_tail_is_the_free_packet():
    """With no aperture the exterior integral is the freely propagated packet."""
    spec = TailIntegralSpec(alpha=0.2, aperture=0.0)
    for x in (0.0, 0.8):
        value = tail_integral(spec, x)
        packet = continuum_packet(x, spec.spread_time + spec.query_time, spec.packet())
        assert math.isclose(abs(value), abs(complex(packet)), abs_tol=1e-8)


def test_whole_space_tail_in_three_dimensions():
    """The radial reduction reproduces the free packet at the centre."""
    spec = TailIntegralSpec(alpha=0.3, aperture=0.0, dim=3)
    packet = continuum_packet((0.0, 0.0, 0.0), spec.spread_time + spec.query_time, spec.packet())
    assert math.isclose(abs(tail_integral(spec, 0.0)), abs(complex(packet)), abs_tol=1e-8)


def test_tail_spec_validation():
    """Parameters outside the asymptotic regime are rejected."""
    spec = TailIntegralSpec.from_alpha_tilde(0.16, 5.0)
    assert math.isclose(spec.alpha_tilde, 0.16, abs_tol=ABS_TOL)
    with pytest.raises(PreconditionError):
        tail_integral(TailIntegralSpec.from_alpha_tilde(0.02, 5.0))
    with pytest.raises(PreconditionError):
        TailIntegralSpec.from_alpha_tilde(10.0, 5.0, spread_time=1.0)
    with pytest.raises(PreconditionError):
        TailIntegralSpec(alpha=1.0, dim=2)


def test_fit_decay_slope():
    """A pure exponential is fitted exactly."""
    grid = [4.0, 9.0, 16.0, 25.0]
    fit = fit_decay_slope(grid, [3.0 * math.exp(-g / 2) for g in grid])
    assert math.isclose(fit.slope, -0.5, abs_tol=1e-9)
    assert math.isclose(fit.intercept, math.log(3.0), abs_tol=1e-9)
    assert fit.within()
    with pytest.raises(PreconditionError):
        fit_decay_slope([4.0], [1.0])
    with pytest.raises(PreconditionError):
        fit_decay_slope([4.0, 9.0], [1.0, 0.0])


@pytest.mark.slow
def test_tail_scan_decays():
    """The exterior integral falls like exp(-α̃a²/2)."""
    scan = tail_scan()
    assert scan.monotone
    assert scan.fit.within(-0.5, 0.1), scan.fit
    assert math.isclose(scan.whole.magnitude, scan.reference, abs_tol=1e-8)


@pytest.mark.slow
def test_backends_agree_on_single_observer():
    """Lattice and MN awareness agree on the default single-observer layout."""
    probabilities = outcome_probabilities(single_observer_layout(spin=(0.6, 0.8)))
    assert math.isclose(probabilities["analytic"]["O1"], 0.36, abs_tol=ABS_TOL)
    assert math.isclose(probabilities["lattice"]["O1"], 0.36, abs_tol=1e-2)


def test_convergence_report_trend():
    """A report is decreasing when every finer resolution deviates less."""
    def row(deviation):
        return ConvergenceRow("r", 0.25, 10, deviation, {}, {})

    assert ConvergenceReport([row(1e-2), row(2e-3)]).decreasing
    assert not ConvergenceReport([row(2e-3), row(1e-2)]).decreasing


@pytest.mark.slow
def test_mn_vs_lattice_rows():
    """Packets a quarter of the aperture agree to 1e-2, an eighth to 2e-3, and the deviation falls in between."""
    layouts = [LayoutParameters(), LayoutParameters(aperture=128.0)]
    scenarios = [single_observer_layout(layout, spin=(0.6, 0.8)) for layout in layouts]
    report = mn_vs_lattice(scenarios, labels=["quarter", "eighth"])
    assert [row.label for row in report.rows] == ["quarter", "eighth"]
    assert [row.width_over_aperture for row in report.rows] == pytest.approx([0.25, 0.125])
    assert report.rows[1].sites > report.rows[0].sites
    for row in report.rows:
        assert math.isclose(row.analytic["O1"], 0.36, abs_tol=ABS_TOL)
    assert report.rows[0].deviation < 1e-2
    assert report.rows[1].deviation < 2e-3
    assert report.decreasing
