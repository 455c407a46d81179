import math

import numpy as np
import pytest

from EVLAB.exceptions import PreconditionError
from EVLAB.lattice import Boundary, Lattice, ModeTable, SpeciesKind, SpeciesSpec

ABS_TOL = 1e-12  # absolute tolerance for close comparisons


def _species():
    return [SpeciesSpec.system("S1"), SpeciesSpec.fictitious("Z_S1"), SpeciesSpec.observer("O1")]


def test_cell_centers():
    """Cell centres sit at (k + 1/2) Δx along every axis."""
    lattice = Lattice(dim=2, sites_per_axis=3, spacing=0.5)
    assert lattice.num_cells == 9
    assert np.allclose(lattice.cell_centers[0], [0.25, 0.25], atol=ABS_TOL)
    assert np.allclose(lattice.cell_centers[5], [0.75, 1.25], atol=ABS_TOL)
    assert math.isclose(lattice.cell_volume, 0.25, abs_tol=ABS_TOL)


def test_nearest_cell_clips():
    """Positions outside the lattice map to the boundary cells."""
    lattice = Lattice(dim=1, sites_per_axis=4)
    assert lattice.nearest_cell(1.4) == 1
    assert lattice.nearest_cell(-3.0) == 0
    assert lattice.nearest_cell(10.0) == 3


def test_neighbor_pairs_open_and_periodic():
    """Open chains lose the wrap-around bond, periodic ones keep it; bonds are listed both ways."""
    open_pairs = set(Lattice(dim=1, sites_per_axis=4).neighbor_pairs())
    assert open_pairs == {(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)}
    periodic = set(Lattice(dim=1, sites_per_axis=4, boundary=Boundary.PERIODIC).neighbor_pairs())
    assert (0, 3) in periodic and (3, 0) in periodic


def test_periodic_distance_uses_minimum_image():
    """The distance across the periodic boundary is the short way round."""
    lattice = Lattice(dim=1, sites_per_axis=10, boundary=Boundary.PERIODIC)
    assert math.isclose(lattice.distance_matrix[0, 9], 1.0, abs_tol=ABS_TOL)


def test_invalid_lattice():
    """Dimensions other than 1, 2, 3 are rejected."""
    with pytest.raises(PreconditionError):
        Lattice(dim=4)


def test_species_labels():
    """Systems carry spin labels 1, 2; observers awareness 0, 1; fictitious fields a single level."""
    assert SpeciesSpec.system("S1").internal_labels == (1, 2)
    assert SpeciesSpec.observer("O1").internal_labels == (0, 1)
    fictitious = SpeciesSpec.fictitious("Z_S1")
    assert fictitious.kind is SpeciesKind.FICTITIOUS
    assert fictitious.mass is None
    with pytest.raises(PreconditionError):
        SpeciesSpec("S1", SpeciesKind.SYSTEM, 1.0, (0, 1))


def test_mode_table_order():
    """Species order, then internal label, then cell; fictitious species come last."""
    table = ModeTable(Lattice(dim=1, sites_per_axis=3), _species())
    assert [spec.id for spec in table.species] == ["S1", "O1", "Z_S1"]
    assert len(table) == 6 + 6 + 3
    assert table.rank("S1", 2, 1) == 4
    assert table.rank("O1", 0, 0) == 6
    assert table.species_slice("Z_S1") == slice(12, 15)
    assert table.fictitious_ranks().tolist() == [12, 13, 14]
    assert [mode.global_rank for mode in table.species_modes("O1")] == list(range(6, 12))
    assert [mode.global_rank for mode in table.species_modes("O1", 1)] == [9, 10, 11]


def test_mode_roundtrip():
    """`mode` inverts `rank` over the whole table."""
    table = ModeTable(Lattice(dim=1, sites_per_axis=3), _species())
    for mode in table:
        assert table.rank(mode.species, mode.internal, mode.cell) == mode.global_rank


def test_mode_table_errors():
    """Duplicate ids, unknown species and foreign labels are rejected."""
    lattice = Lattice(dim=1, sites_per_axis=2)
    with pytest.raises(PreconditionError):
        ModeTable(lattice, [SpeciesSpec.system("S1"), SpeciesSpec.system("S1")])
    table = ModeTable(lattice, _species())
    with pytest.raises(PreconditionError):
        table.spec("C")
    with pytest.raises(PreconditionError):
        table.rank("O1", 2, 0)
    with pytest.raises(PreconditionError):
        table.rank("O1", 0, 5)
