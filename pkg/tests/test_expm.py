import math

import numpy as np
import pytest

from EVLAB.exceptions import ConvergenceError
from EVLAB.expm import dense_expm_apply, estimate_norm, evolve_exp
from EVLAB.fock_state import OperatorTerm, SectorState, terms_to_matrix
from EVLAB.lattice import Lattice, ModeTable, SpeciesSpec

ABS_TOL = 1e-10  # absolute tolerance for close comparisons

TABLE = ModeTable(Lattice(dim=1, sites_per_axis=3), [SpeciesSpec.observer("O1"), SpeciesSpec.comparator("C")])


def _hopping() -> list[OperatorTerm]:
    terms = []
    for species in ("O1", "C"):
        for cell in range(2):
            term = OperatorTerm(-0.7, (TABLE.index(species, 0, cell + 1),), (TABLE.index(species, 0, cell),))
            terms += [term, term.adjoint()]
    flip = OperatorTerm(0.4j, (TABLE.index("C", 1, 1),), (TABLE.index("C", 0, 1),))
    return terms + [flip, flip.adjoint()]


def _initial() -> SectorState:
    first = [(0.6, TABLE.index("O1", 0, 0)), (0.8, TABLE.index("O1", 0, 1))]
    second = [(1.0, TABLE.index("C", 0, 2))]
    return SectorState.from_creators(TABLE, [first, second])


def test_evolve_exp_matches_dense_reference():
    """The Taylor sub-stepping agrees with scipy's expm_multiply."""
    terms = _hopping()
    state = _initial()
    evolved = evolve_exp(state, terms, -2.3j)
    reference = dense_expm_apply(terms_to_matrix(terms, len(TABLE)), state.to_dense(), -2.3j)
    assert np.allclose(evolved.to_dense(), reference, atol=ABS_TOL)
    assert math.isclose(evolved.norm(), 1.0, abs_tol=ABS_TOL)


def test_evolve_exp_callable_on_arrays():
    """A callable generator acting on numpy vectors gives the matrix exponential."""
    matrix = np.array([[0.0, 1.0], [-1.0, 0.0]])
    result = evolve_exp(np.array([1.0 + 0j, 0.0]), lambda v: matrix @ v, 0.9, norm_bound=1.0)
    assert np.allclose(result, [math.cos(0.9), -math.sin(0.9)], atol=ABS_TOL)


def test_zero_scale_is_identity():
    """A vanishing scale returns the state untouched."""
    state = _initial()
    assert evolve_exp(state, _hopping(), 0.0) is state


def test_estimate_norm_bounds():
    """The power iteration gives a positive lower bound of the operator norm."""
    terms = _hopping()
    matrix = terms_to_matrix(terms, len(TABLE)).toarray()
    true_norm = np.linalg.norm(matrix, 2)
    estimate = estimate_norm(terms, _initial(), iterations=30)
    assert 0 < estimate <= true_norm + ABS_TOL


def test_taylor_failure_raises():
    """A series cut after one term cannot reach the tolerance."""
    with pytest.raises(ConvergenceError) as info:
        evolve_exp(_initial(), _hopping(), -1j, norm_bound=1.0, max_terms=1)
    assert info.value.residual > 0


def test_oversized_generator_raises_before_stepping():
    """A norm bound needing more sub-steps than the cap allows is refused with the total as residual."""
    with pytest.raises(ConvergenceError) as info:
        evolve_exp(_initial(), _hopping(), -1j, norm_bound=1e12)
    assert info.value.residual == pytest.approx(1e12)
