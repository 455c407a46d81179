import math

import numpy as np
import pytest

from EVLAB.deutsch_hayden import (
    DHKind,
    FictitiousFieldSpec,
    build_generator,
    closed_form_coefficients,
    closed_form_deviation,
    commutation_defect,
    dh_check,
    dh_scenario,
    dh_table,
    dh_transform_operator,
    dh_transform_state,
    dress,
    expectation_equivalence,
    locality_footprint,
    roundtrip_defect,
    skew_defect,
    vacuum_fidelity,
)
from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import SectorState
from EVLAB.lattice import Lattice, SpeciesSpec
from EVLAB.model import number_density_terms
from EVLAB.scenario import ScenarioKind

ABS_TOL = 1e-10  # absolute tolerance for close comparisons


def test_single_observer_report():
    """Every check passes on the two-site single-observer toy, dense checks included."""
    report = dh_check(ScenarioKind.SINGLE_OBSERVER, sites=2)
    names = [check.name for check in report.checks]
    assert names == [
        "vacuum_fidelity",
        "roundtrip",
        "commutation",
        "skew_hermitian",
        "closed_form",
        "fictitious_independence",
    ]
    assert report.passed, report.first_failure
    assert report.first_failure is None


@pytest.mark.parametrize("shape", ["gaussian", "uniform", "random"])
def test_eprb_report(shape):
    """The EPRB toy maps back to the vacuum whatever the fictitious wavefunctions look like."""
    report = dh_check(ScenarioKind.EPRB, sites=3, draws=2, shape=shape, seed=5)
    assert report.passed, report.first_failure
    assert "closed_form" not in [check.name for check in report.checks]


def test_dressed_state_maps_to_vacuum():
    """V† takes the dressed state to the vacuum and V brings it back."""
    scenario = dh_scenario(ScenarioKind.SINGLE_OBSERVER, 2)
    mapped = dh_transform_state(scenario.generators, scenario.dressed)
    assert math.isclose(vacuum_fidelity(mapped), 1.0, abs_tol=1e-9)
    assert roundtrip_defect(scenario.generators, scenario.dressed) <= ABS_TOL
    assert math.isclose(vacuum_fidelity(SectorState.vacuum(scenario.table)), 1.0)


def test_generators_are_skew_and_commute():
    """Each W is skew-Hermitian and distinct generators commute."""
    scenario = dh_scenario(ScenarioKind.SINGLE_OBSERVER, 2)
    system, observer = scenario.generators
    assert system.kind is DHKind.SYSTEM and observer.kind is DHKind.OBSERVER
    assert skew_defect(system, len(scenario.table)) <= 1e-14
    assert commutation_defect(system, observer, scenario.table) <= 1e-12


def test_closed_form_matches_dense_conjugation():
    """The closed form of V† a V agrees with the dense conjugation on every observer mode."""
    scenario = dh_scenario(ScenarioKind.SINGLE_OBSERVER, 2)
    table = scenario.table
    for cell in range(2):
        for label in (0, 1):
            assert closed_form_deviation(table, scenario.generators, table.index("O1", label, cell)) <= 1e-9


def test_singlet_block_has_no_closed_form():
    """Four-field blocks are outside the bilinear closed form."""
    scenario = dh_scenario(ScenarioKind.EPRB, 2)
    with pytest.raises(PreconditionError):
        closed_form_coefficients(scenario.table, scenario.generators, scenario.table.index("S1", 1, 0))


def _localized():
    lattice = Lattice(dim=1, sites_per_axis=3)
    table = dh_table([SpeciesSpec.system("S1"), SpeciesSpec.observer("O1")], lattice)
    packets = {"S1": np.array([1.0, 0.0, 0.0]), "O1": np.array([0.0, 0.0, 1.0])}
    fields = {
        "S1": FictitiousFieldSpec("S1", [0.0, 1.0, 0.0]),
        "O1": FictitiousFieldSpec("O1", [0.0, 0.0, 1.0]),
    }
    return dress(ScenarioKind.SINGLE_OBSERVER, table, packets, (1.0, 0.0), fields)


def _two_site_dress():
    lattice = Lattice(dim=1, sites_per_axis=2)
    table = dh_table([SpeciesSpec.system("S1"), SpeciesSpec.observer("O1")], lattice)
    packets = {"S1": np.array([1.0, 0.0]), "O1": np.array([0.0, 1.0])}
    fields = {"S1": FictitiousFieldSpec("S1", [1.0, 0.0]), "O1": FictitiousFieldSpec("O1", [0.0, 1.0])}
    return dress(ScenarioKind.SINGLE_OBSERVER, table, packets, (1.0, 0.0), fields)


def test_transformation_is_local():
    """The transformed field only touches cells where its packet or its fictitious partner lives."""
    scenario = _localized()
    table = scenario.table
    footprint = locality_footprint(table, scenario.generators, table.index("O1", 0, 2))
    assert np.allclose(footprint.physical, [0.0, 0.0, 1.0], atol=ABS_TOL)
    assert np.allclose(footprint.fictitious, [0.0, 0.0, 1.0], atol=ABS_TOL)
    assert footprint.support().tolist() == [2]
    assert footprint.support_radius(table.lattice.cell_centers[2]) == 0.0

    untouched = locality_footprint(table, scenario.generators, table.index("O1", 0, 0))
    assert untouched.total == 0.0
    assert untouched.support_radius(0.5) == 0.0


def test_dense_transform_of_fields():
    """V† a V leaves modes outside every packet alone, changes dressed ones and is linear in the field."""
    scenario = _two_site_dress()
    table, generators = scenario.table, scenario.generators
    untouched, dressed = table.index("O1", 0, 0), table.index("O1", 0, 1)
    for mode in (untouched, dressed):
        assert dh_transform_operator(table, generators, mode).shape == (1 << len(table),) * 2
    bare = dh_transform_operator(table, generators, untouched, angle=0.0)
    assert abs(dh_transform_operator(table, generators, untouched) - bare).max() <= ABS_TOL
    assert abs(
        dh_transform_operator(table, generators, dressed) - dh_transform_operator(table, generators, dressed, angle=0.0)
    ).max() > 0.1
    smeared = dh_transform_operator(table, generators, [(0.6, untouched), (0.8, dressed)])
    combined = 0.6 * bare + 0.8 * dh_transform_operator(table, generators, dressed)
    assert abs(smeared - combined).max() <= ABS_TOL


def test_build_generator_validation():
    """Generators refuse wrong partner kinds, malformed packets and missing fields."""
    scenario = _two_site_dress()
    table, fields = scenario.table, scenario.fields
    packet = np.zeros(table.one_body_dim("O1"))
    packet[1] = 1.0
    generator = build_generator(DHKind.OBSERVER, table, {"O1": packet}, fields)
    assert generator.partners == ("O1",)
    assert len(generator.creator_terms) == 1
    with pytest.raises(PreconditionError):
        build_generator(DHKind.SYSTEM, table, {"O1": packet}, fields)
    with pytest.raises(PreconditionError):
        build_generator(DHKind.OBSERVER, table, {"O1": np.ones(2)}, fields)
    with pytest.raises(PreconditionError):
        build_generator(DHKind.OBSERVER, table, {"O1": packet}, {})


def test_dense_footprint_matches_closed_form():
    """Coefficients read off the dense conjugation agree with the closed form."""
    scenario = dh_scenario(ScenarioKind.SINGLE_OBSERVER, 2)
    mode = scenario.table.index("O1", 0, 1)
    dense = locality_footprint(scenario.table, scenario.generators, mode, dense=True)
    closed = locality_footprint(scenario.table, scenario.generators, mode, dense=False)
    assert np.allclose(dense.physical, closed.physical, atol=1e-9)
    assert np.allclose(dense.fictitious, closed.fictitious, atol=1e-9)


def test_fictitious_independence():
    """Physical expectations do not depend on the fictitious draw; fictitious observables are refused."""
    scenario = dh_scenario(ScenarioKind.SINGLE_OBSERVER, 2)
    report = expectation_equivalence(scenario, draws=4, seed=11)
    assert len(report.draws) == 4
    assert report.passed
    forbidden = {"zeta": number_density_terms(scenario.table, "Z_S1", 0, 0)}
    with pytest.raises(PreconditionError):
        expectation_equivalence(scenario, forbidden)


def test_fictitious_field_spec():
    """Drawn wavefunctions are normalized; hand-written ones must be."""
    lattice = Lattice(dim=1, sites_per_axis=5)
    rng = np.random.default_rng(3)
    for shape in ("gaussian", "uniform", "random"):
        spec = FictitiousFieldSpec.draw("O1", lattice, shape, rng)
        assert math.isclose(np.linalg.norm(spec.wavefunction), 1.0, abs_tol=ABS_TOL)
        assert spec.species_id == "Z_O1"
    with pytest.raises(PreconditionError):
        FictitiousFieldSpec("O1", [1.0, 1.0, 0.0, 0.0, 0.0])
    with pytest.raises(PreconditionError):
        FictitiousFieldSpec.draw("O1", lattice, "triangle")
