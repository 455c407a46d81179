import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import (
    OperatorTerm,
    SectorState,
    apply_annihilation,
    apply_creation,
    apply_smeared_annihilation,
    apply_smeared_creation,
    apply_term,
    apply_terms,
    check_car,
    creation_matrix,
    hermiticity_defect,
    term_product,
    terms_to_matrix,
)
from EVLAB.lattice import Lattice, ModeTable, SpeciesSpec

ABS_TOL = 1e-12  # absolute tolerance for close comparisons

LATTICE = Lattice(dim=1, sites_per_axis=2)
SPECIES = [SpeciesSpec.system("S1"), SpeciesSpec.observer("O1"), SpeciesSpec.fictitious("Z_S1")]
TABLE = ModeTable(LATTICE, SPECIES)
NUM_MODES = len(TABLE)

ranks = st.integers(0, NUM_MODES - 1)
configurations = st.lists(
    st.tuples(st.frozensets(ranks, max_size=4), st.complex_numbers(max_magnitude=2, allow_nan=False)),
    min_size=1,
    max_size=6,
)


def _state(entries) -> SectorState:
    return SectorState.sum(TABLE, [SectorState.from_configuration(TABLE, sorted(r), c) for r, c in entries])


def test_vacuum():
    """The vacuum has unit norm and no occupied mode."""
    vacuum = SectorState.vacuum(TABLE)
    assert math.isclose(vacuum.norm(), 1.0, abs_tol=ABS_TOL)
    assert np.allclose(vacuum.mode_density(), 0.0, atol=ABS_TOL)
    assert len(apply_annihilation(vacuum, TABLE.mode(3))) == 0


def test_canonical_sign():
    """Creating a mode below an occupied one in rank order is sign-free, above it costs a sign."""
    state = SectorState.from_configuration(TABLE, [2])
    low = apply_creation(state, TABLE.mode(1))
    high = apply_creation(state, TABLE.mode(5))
    assert math.isclose(low.amplitude_of([1, 2]).real, 1.0, abs_tol=ABS_TOL)
    assert math.isclose(high.amplitude_of([2, 5]).real, -1.0, abs_tol=ABS_TOL)


def test_pauli_exclusion():
    """A mode cannot be created twice."""
    state = SectorState.from_configuration(TABLE, [4])
    assert len(apply_creation(state, TABLE.mode(4))) == 0


@settings(max_examples=40, deadline=None)
@given(configurations, ranks, ranks)
def test_creators_anticommute(entries, r, s):
    """a†_r a†_s = -a†_s a†_r on arbitrary states."""
    state = _state(entries)
    first = apply_creation(apply_creation(state, TABLE.mode(s)), TABLE.mode(r))
    second = apply_creation(apply_creation(state, TABLE.mode(r)), TABLE.mode(s))
    assert (first + second).norm() <= ABS_TOL


@settings(max_examples=40, deadline=None)
@given(configurations, ranks, ranks)
def test_mixed_anticommutator(entries, r, s):
    """{a_r, a†_s} |ψ> = δ_rs |ψ> on arbitrary states."""
    state = _state(entries)
    left = apply_annihilation(apply_creation(state, TABLE.mode(s)), TABLE.mode(r))
    right = apply_creation(apply_annihilation(state, TABLE.mode(r)), TABLE.mode(s))
    expected = state if r == s else SectorState.zero(TABLE)
    assert (left + right - expected).norm() <= ABS_TOL


@settings(max_examples=25, deadline=None)
@given(configurations, ranks)
def test_sparse_matches_dense(entries, r):
    """The sparse creation operator agrees with the dense Fock matrix."""
    state = _state(entries)
    sparse_result = apply_creation(state, TABLE.mode(r)).to_dense()
    dense_result = creation_matrix(r, NUM_MODES).astype(complex) @ state.to_dense()
    assert np.allclose(sparse_result, dense_result, atol=ABS_TOL)


def test_dense_roundtrip():
    """`from_dense` inverts `to_dense`."""
    state = _state([({0, 5}, 0.6), ({1, 9}, 0.8j)])
    again = SectorState.from_dense(TABLE, state.to_dense())
    assert math.isclose(abs(again.inner(state)), 1.0, abs_tol=ABS_TOL)


def test_from_creators_and_density():
    """A smeared creator spreads one quantum over its modes with the squared weights."""
    creator = [(0.6, TABLE.index("O1", 0, 0)), (0.8, TABLE.index("O1", 0, 1))]
    state = SectorState.from_creators(TABLE, [creator])
    density = state.mode_density()
    assert math.isclose(density[TABLE.rank("O1", 0, 0)], 0.36, abs_tol=ABS_TOL)
    assert math.isclose(density[TABLE.rank("O1", 0, 1)], 0.64, abs_tol=ABS_TOL)
    assert state.occupations == {"S1": 0, "O1": 1, "Z_S1": 0}


def test_smeared_annihilation_undoes_creation():
    """Annihilating a normalized smeared quantum with the same weights returns the vacuum."""
    creator = [(0.6, TABLE.index("O1", 0, 0)), (0.8, TABLE.index("O1", 0, 1))]
    vacuum = SectorState.vacuum(TABLE)
    state = apply_smeared_creation(vacuum, creator)
    assert math.isclose(state.norm(), 1.0, abs_tol=ABS_TOL)
    back = apply_smeared_annihilation(state, creator)
    assert math.isclose(abs(back.inner(vacuum)), 1.0, abs_tol=ABS_TOL)
    assert apply_smeared_annihilation(vacuum, creator).norm() == 0.0


def test_multi_sector_state_has_no_occupations():
    """A superposition of different quantum counts has no fixed occupation."""
    state = _state([(set(), 1.0), ({0}, 1.0)])
    assert state.occupations is None


def test_expectation_of_number_operator():
    """<N_r> equals the mode density."""
    state = _state([({0, 4}, 0.6), ({1, 4}, 0.8)])
    number = [OperatorTerm(1.0, (TABLE.mode(0),), (TABLE.mode(0),))]
    assert math.isclose(state.expectation(number).real, 0.36, abs_tol=ABS_TOL)


def test_apply_term_hops_a_quantum():
    """A hopping term moves the quantum with its coefficient and kills states without it."""
    hop = OperatorTerm(2.0, (TABLE.mode(1),), (TABLE.mode(0),))
    moved = apply_term(_state([({0, 4}, 1.0)]), hop)
    assert math.isclose(abs(moved.inner(_state([({1, 4}, 1.0)]))), 2.0, abs_tol=ABS_TOL)
    assert len(apply_term(_state([({2, 4}, 1.0)]), hop)) == 0


def test_term_product_sign():
    """(a†_0 a_1)(a†_2 a_3) = -a†_0 a†_2 a_1 a_3 in normal order."""
    left = OperatorTerm(1.0, (TABLE.mode(0),), (TABLE.mode(1),))
    right = OperatorTerm(1.0, (TABLE.mode(2),), (TABLE.mode(3),))
    product = term_product(left, right)
    state = SectorState.from_configuration(TABLE, [1, 3])
    sequential = apply_terms(apply_terms(state, [right]), [left])
    assert (apply_terms(state, [product]) - sequential).norm() <= ABS_TOL
    with pytest.raises(PreconditionError):
        term_product(left, left)


def test_repeated_mode_rejected():
    """A term may not list the same creator twice."""
    with pytest.raises(PreconditionError):
        OperatorTerm(1.0, (TABLE.mode(0), TABLE.mode(0)), ())


def test_hermitian_sum():
    """A term plus its adjoint is Hermitian."""
    term = OperatorTerm(0.3 + 0.4j, (TABLE.mode(0), TABLE.mode(6)), (TABLE.mode(2),))
    matrix = terms_to_matrix([term, term.adjoint()], NUM_MODES)
    assert hermiticity_defect(matrix) <= ABS_TOL
    assert hermiticity_defect(terms_to_matrix([term], NUM_MODES)) > 0.1


def test_check_car_with_fictitious_species():
    """The anticommutation relations hold exactly for every pair, fictitious modes included."""
    report = check_car(LATTICE, SPECIES)
    assert report.passed
    assert report.pairs_checked == NUM_MODES**2


def test_check_car_detects_sign_bug():
    """Creation matrices without the Jordan-Wigner sign violate the relations and the pair is named."""
    report = check_car(LATTICE, SPECIES, factory=lambda rank, n: abs(creation_matrix(rank, n)))
    assert not report.passed
    assert "S1" in report.violations[0]


def test_check_car_mode_limit():
    """The dense audit refuses more than 16 modes."""
    with pytest.raises(PreconditionError):
        check_car(Lattice(dim=1, sites_per_axis=5), SPECIES)
