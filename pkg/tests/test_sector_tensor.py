import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import OperatorTerm, SectorState, apply_terms
from EVLAB.lattice import Lattice, ModeTable, SpeciesSpec
from EVLAB.sector_tensor import SectorTensor

ABS_TOL = 1e-12  # absolute tolerance for close comparisons

TABLE = ModeTable(Lattice(dim=1, sites_per_axis=2), [SpeciesSpec.system("S1"), SpeciesSpec.observer("O1")])

amplitudes = arrays(np.float64, (4, 4), elements=st.floats(-1, 1, allow_nan=False, allow_infinity=False))


def test_product_and_roundtrip():
    """A product tensor converts to the sparse state with the same amplitudes and back."""
    system = np.array([0.6, 0.0, 0.8, 0.0])
    observer = np.array([0.0, 1.0, 0.0, 0.0])
    tensor = SectorTensor.product(TABLE, {"O1": observer, "S1": system})
    assert tensor.species == ("S1", "O1")
    state = tensor.to_state()
    assert math.isclose(state.amplitude_of([0, 5]).real, 0.6, abs_tol=ABS_TOL)
    again = SectorTensor.from_state(state)
    assert np.allclose(again.data, tensor.data, atol=ABS_TOL)


@settings(max_examples=30, deadline=None)
@given(amplitudes)
def test_one_body_matches_sparse_terms(data):
    """A one-body matrix on one axis equals the lifted operator applied with fermionic terms."""
    tensor = SectorTensor(TABLE, ("S1", "O1"), data.astype(complex))
    matrix = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.0]])
    terms = [
        OperatorTerm(matrix[a, b], (TABLE.mode(4 + a),), (TABLE.mode(4 + b),))
        for a in range(4)
        for b in range(4)
        if matrix[a, b]
    ]
    expected = apply_terms(tensor.to_state(), terms)
    result = tensor.apply_one_body("O1", matrix).to_state()
    assert (result - expected).norm() <= 1e-10


def test_marginal_density_and_rdm():
    """Marginal densities are the diagonal of the reduced density matrix and sum to the norm."""
    rng = np.random.default_rng(7)
    data = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    tensor = SectorTensor(TABLE, ("S1", "O1"), data / np.linalg.norm(data))
    rho = tensor.reduced_density_matrix("O1")
    assert np.allclose(np.diag(rho).real, tensor.marginal_density("O1"), atol=ABS_TOL)
    assert math.isclose(tensor.marginal_density("S1").sum(), 1.0, abs_tol=ABS_TOL)


def test_apply_local_gate():
    """A gate on the observer cell rotates the observer label only where the gate is on."""
    system = np.array([1.0, 0.0, 0.0, 0.0])
    observer = np.array([0.0, 1.0, 0.0, 0.0])
    tensor = SectorTensor.product(TABLE, {"S1": system, "O1": observer})
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    result = tensor.apply_local({"O1": flip}, np.array([0.0, 1.0]), ["O1"])
    density = result.marginal_density("O1").reshape(2, 2)
    assert np.allclose(density, [[0.0, 0.0], [0.0, 1.0]], atol=ABS_TOL)


def test_shape_and_species_errors():
    """Shapes must match the one-body dimensions, and a state must hold one quantum per species."""
    with pytest.raises(PreconditionError):
        SectorTensor(TABLE, ("S1", "O1"), np.zeros((3, 4)))
    with pytest.raises(PreconditionError):
        SectorTensor.from_state(SectorState.from_configuration(TABLE, [0, 1]), ["S1"])
    tensor = SectorTensor.product(TABLE, {"S1": np.eye(4)[0]})
    with pytest.raises(PreconditionError):
        tensor.axis("O1")
