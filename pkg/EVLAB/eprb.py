r"""Scenario runs, the interpretational rule and correlation scans.

An observer `O[p]` in awareness state `i` exists at time `t` in the smallest region Ω holding its density
`<𝓝_i(x, t)>`; the probability of that observer is the density integrated over Ω. On the lattice the densities are
probabilities per cell and Ω is taken as the ε-superlevel set of the density, split into connected components.

`run_eprb` audits a scenario, runs the lattice backend, the MN backend or both, and collects probabilities and
localized observers at the query times t_[2,3] (observers) and t_[4,5] (comparator) into a `ResultRecord`.
`scan_correlation` repeats the comparator probability over a grid of relative analyser angles.
"""

from __future__ import annotations

import json
import logging
import math
import typing
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from EVLAB.analytic import MNConfiguration, mn_density, mn_run
from EVLAB.config import Settings, worker_count
from EVLAB.exceptions import PreconditionError
from EVLAB.fock_state import SectorState
from EVLAB.lattice_backend import FactorizedBackend, TensorBackend
from EVLAB.model import SpinAxis
from EVLAB.scenario import Backend, ScenarioKind
from EVLAB.sector_tensor import SectorTensor

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.lattice import Lattice
    from EVLAB.scenario import ScenarioSpec

logger = logging.getLogger(__name__)

DENSITY_SUM_TOLERANCE = 1e-9
SCAN_POINTS = 13


@dataclass
class DensityField:
    """Per-cell expectation of one number-density operator.

    Attributes:
        species (str): Species id.
        internal (int): Internal label.
        values (NDArray): Probability per cell.
        lattice (Lattice): The lattice.
        t (float | None): Query time.
    """

    species: str
    internal: int
    values: NDArray[np.float64]
    lattice: Lattice
    t: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape != (self.lattice.num_cells,):
            raise PreconditionError(f"Density of {self.species} needs {self.lattice.num_cells} cells.")
        if values.size and values.min() < -DENSITY_SUM_TOLERANCE:
            raise PreconditionError(f"Negative density {values.min():.3g} for {self.species}.")
        if values.sum() > 1 + DENSITY_SUM_TOLERANCE:
            raise PreconditionError(f"Density of {self.species} sums to {values.sum():.12g} > 1.")
        self.values = np.clip(values, 0.0, None)

    @property
    def total(self) -> float:
        return float(self.values.sum())


def density(
    source: SectorState | SectorTensor | NDArray[np.float64],
    species: str,
    internal: int,
    lattice: Lattice | None = None,
    t: float | None = None,
) -> DensityField:
    """Density of `(species, internal)` from a sparse state, a sector tensor or a backend array `(labels, cells)`.

    Backend arrays are indexed by label position (0 for spin label 1 and awareness 0).
    """
    match source:
        case SectorState():
            table = source.table
            ranks = [table.rank(species, internal, cell) for cell in range(table.lattice.num_cells)]
            values = source.mode_density()[ranks]
            lattice = table.lattice
        case SectorTensor():
            table = source.table
            spec = table.spec(species)
            block = source.marginal_density(species).reshape(spec.internal_dim, -1)
            values = block[spec.label_position(internal)]
            lattice = table.lattice
        case _:
            if lattice is None:
                raise PreconditionError("A lattice is needed to read a density array.")
            array = np.asarray(source, dtype=float)
            position = internal - 1 if species[0] == "S" else internal
            values = array[position] if array.ndim == 2 else array
    return DensityField(species, internal, values, lattice, t)


@dataclass
class LocalizedObserver:
    """One connected component of the ε-superlevel set of a density.

    Attributes:
        species (str): Species id.
        internal (int): Awareness (or spin) label.
        cells (list[int]): The region Ω.
        probability (float): Density summed over Ω.
        centroid (list[float]): Density-weighted centre of Ω.
        epsilon (float): Threshold used.
        predicted (list[float] | None): Classical trajectory position at the query time.
    """

    species: str
    internal: int
    cells: list[int]
    probability: float
    centroid: list[float]
    epsilon: float
    predicted: list[float] | None = None

    @property
    def offset(self) -> float | None:
        if self.predicted is None:
            return None
        return float(np.linalg.norm(np.subtract(self.centroid, self.predicted)))

    def to_dict(self) -> dict[str, typing.Any]:
        return {**asdict(self), "offset": self.offset}


def localize(field: DensityField, epsilon: float | None = None) -> list[LocalizedObserver]:
    """Split the cells with density `>= epsilon` into connected components, one observer each.

    Raises:
        PreconditionError: If `epsilon <= 0`.
    """
    epsilon = Settings.epsilon if epsilon is None else epsilon
    if epsilon <= 0:
        raise PreconditionError("The localization threshold must be positive.")
    lattice = field.lattice
    selected = np.flatnonzero(field.values >= epsilon)
    if len(selected) == 0:
        return []
    inside = np.zeros(lattice.num_cells, dtype=bool)
    inside[selected] = True
    bonds = [(i, j) for i, j in lattice.neighbor_pairs() if inside[i] and inside[j]]
    rows = [i for i, _ in bonds]
    cols = [j for _, j in bonds]
    graph = sparse.coo_matrix((np.ones(len(bonds)), (rows, cols)), shape=(lattice.num_cells,) * 2)
    _, labels = csgraph.connected_components(graph, directed=False)
    observers = []
    for label in sorted(set(labels[selected].tolist()), key=lambda lab: int(np.min(selected[labels[selected] == lab]))):
        cells = selected[labels[selected] == label]
        weights = field.values[cells]
        mass = float(weights.sum())
        centroid = (weights @ lattice.cell_centers[cells]) / mass
        observers.append(
            LocalizedObserver(field.species, field.internal, cells.tolist(), mass, centroid.tolist(), epsilon)
        )
    return observers


# ---------------------------------------------------------------------- scenario runs


@dataclass
class ProbabilityRow:
    """Probability of one internal label of one entity at one query time, from one backend."""

    query: str
    time: float
    species: str
    internal: int
    backend: str
    probability: float
    localized: list[LocalizedObserver] = field(default_factory=list)

    def to_dict(self) -> dict[str, typing.Any]:
        data = {k: v for k, v in asdict(self).items() if k != "localized"}
        data["localized"] = [observer.to_dict() for observer in self.localized]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, typing.Any]) -> ProbabilityRow:
        localized = [
            LocalizedObserver(**{k: v for k, v in item.items() if k != "offset"}) for item in data.get("localized", [])
        ]
        return cls(
            data["query"],
            data["time"],
            data["species"],
            data["internal"],
            data["backend"],
            data["probability"],
            localized,
        )


@dataclass
class ResultRecord:
    """Everything a run reports, with its provenance.

    Attributes:
        kind (str): Scenario kind.
        backend (str): Requested backend.
        scenario (dict): Scenario echo from `ScenarioSpec.describe`.
        rows (list[ProbabilityRow]): Probabilities per query, entity, label and backend.
        deviations (dict[str, float]): `|lattice - analytic|` per ``query/species/label`` when both ran.
        predictions (dict[str, float]): Closed-form comparator predictions (EPRB).
        tolerances (dict[str, float]): Thresholds in force.
        metadata (dict[str, Any]): Version, seed, configuration text and the region rule.
        densities (list[tuple[str, str, DensityField]]): `(query, backend, field)` per density; not serialized.
    """

    kind: str
    backend: str
    scenario: dict[str, typing.Any]
    rows: list[ProbabilityRow] = field(default_factory=list)
    deviations: dict[str, float] = field(default_factory=dict)
    predictions: dict[str, float] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    metadata: dict[str, typing.Any] = field(default_factory=dict)
    densities: list[tuple[str, str, DensityField]] = field(default_factory=list, repr=False)

    def probability(self, query: str, species: str, internal: int, backend: str | None = None) -> float:
        """Look up one probability; the first matching backend wins when `backend` is omitted."""
        for row in self.rows:
            if (row.query, row.species, row.internal) == (query, species, internal):
                if backend is None or row.backend == backend:
                    return row.probability
        raise KeyError(f"No probability for {query}/{species}/{internal}/{backend}.")

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "kind": self.kind,
            "backend": self.backend,
            "scenario": self.scenario,
            "rows": [row.to_dict() for row in self.rows],
            "deviations": self.deviations,
            "predictions": self.predictions,
            "tolerances": self.tolerances,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ResultRecord:
        data = json.loads(text)
        return cls(
            kind=data["kind"],
            backend=data["backend"],
            scenario=data["scenario"],
            rows=[ProbabilityRow.from_dict(row) for row in data["rows"]],
            deviations=data.get("deviations", {}),
            predictions=data.get("predictions", {}),
            tolerances=data.get("tolerances", {}),
            metadata=data.get("metadata", {}),
        )

    def density_rows(self) -> list[tuple[typing.Any, ...]]:
        """Rows `(query, time, species, internal, cell, x, density, backend)` for the densities CSV."""
        rows = []
        for query, backend, field_ in self.densities:
            centers = field_.lattice.cell_centers
            for cell, value in enumerate(field_.values):
                x = float(centers[cell, 0])
                rows.append(
                    (query, field_.t, field_.species, field_.internal, cell, x, float(value), backend)
                )
        return rows


def reported_entities(scenario: ScenarioSpec) -> dict[str, tuple[str, ...]]:
    """Entities reported at each query time."""
    observers = tuple(f"O{p}" for p in scenario.wings)
    if scenario.kind is ScenarioKind.EPRB:
        return {"t23": observers, "t45": ("C",)}
    return {"t23": observers, "t45": observers}


def run_eprb(
    scenario: ScenarioSpec,
    backend: Backend = Backend.LATTICE,
    epsilon: float | None = None,
    lattice_backend: FactorizedBackend | TensorBackend | None = None,
    times: Mapping[str, float] | None = None,
    metadata: Mapping[str, typing.Any] | None = None,
) -> ResultRecord:
    """Run a scenario and evaluate the interpretational rule.

    Args:
        scenario (ScenarioSpec): The scenario; audited first.
        backend (Backend, optional): Lattice, MN or both. Defaults to the lattice.
        epsilon (float | None, optional): Localization threshold; `Settings.epsilon` by default.
        lattice_backend (FactorizedBackend | TensorBackend | None, optional): An already built lattice backend.
        times (Mapping[str, float] | None, optional): Query times; the plan's `t23`, `t45` by default.
        metadata (Mapping[str, Any] | None, optional): Extra provenance merged into the record.

    Raises:
        ScenarioError: If the audit fails.
    """
    scenario.audit()
    epsilon = Settings.epsilon if epsilon is None else epsilon
    times = dict(times or scenario.query_times())
    trajectories = scenario.trajectories()
    record = ResultRecord(
        kind=scenario.kind.value,
        backend=backend.value,
        scenario=scenario.describe(),
        tolerances={"epsilon": epsilon, "density_sum": DENSITY_SUM_TOLERANCE},
        metadata={"region_rule": "epsilon-superlevel connected components", "query_times": times, **(metadata or {})},
    )
    sources = {}
    if backend.runs_lattice:
        lattice_impl = lattice_backend or FactorizedBackend(scenario)
        sources["lattice"] = lattice_impl.species_density
    if backend.runs_analytic:
        config = MNConfiguration.from_scenario(scenario)

        def analytic_density(species_id: str, t: float) -> NDArray[np.float64]:
            return np.stack([mn_density(config, species_id, label, t, scenario.lattice) for label in (0, 1)])

        sources["analytic"] = analytic_density
        if scenario.kind is ScenarioKind.EPRB:
            result = mn_run(config, times["t45"])
            record.predictions = {"p_c1_exact": result.prediction, "p_c1_perturbative": result.perturbative}

    for query, entities in reported_entities(scenario).items():
        t = times[query]
        for name, source in sources.items():
            for species_id in entities:
                array = source(species_id, t)
                predicted = trajectories.position(species_id, t).tolist()
                for label in (0, 1):
                    field_ = density(array, species_id, label, scenario.lattice, t)
                    localized = localize(field_, epsilon)
                    for observer in localized:
                        observer.predicted = predicted
                    record.rows.append(ProbabilityRow(query, t, species_id, label, name, field_.total, localized))
                    record.densities.append((query, name, field_))
        logger.info("Query %s (t = %g) done", query, t)

    if backend is Backend.BOTH:
        for row in record.rows:
            if row.backend == "lattice":
                analytic = record.probability(row.query, row.species, row.internal, "analytic")
                record.deviations[f"{row.query}/{row.species}/{row.internal}"] = abs(row.probability - analytic)
    return record


# ---------------------------------------------------------------------- correlation scan


@dataclass
class CorrelationRow:
    """One point of the correlation curve.

    `normalized` is `P^C_1 / (β²/2)`; `p_c1_normalized` divides by `sin²β / 2` instead, which equals
    `(1 - cos θ12) / 2` exactly for the closed-form comparator.
    """

    theta12: float
    p_c1: float
    backend: str
    beta: float

    @property
    def normalized(self) -> float:
        return self.p_c1 / (self.beta**2 / 2)

    @property
    def p_c1_normalized(self) -> float:
        return self.p_c1 / (math.sin(self.beta) ** 2 / 2)

    @property
    def expected(self) -> float:
        return 0.5 * (1 - math.cos(self.theta12))


def default_angles(points: int = SCAN_POINTS) -> list[float]:
    return np.linspace(0.0, math.pi, points).tolist()


def _axes_for(theta12: float) -> dict[int, SpinAxis]:
    return {1: SpinAxis(0.0, 0.0), 2: SpinAxis(theta12, 0.0)}


def scan_correlation(
    base: ScenarioSpec,
    angles: Sequence[float] | None = None,
    backend: Backend = Backend.ANALYTIC,
    workers: int | None = None,
) -> list[CorrelationRow]:
    """`P^C_1` at t_[4,5] over relative analyser angles `θ12 ∈ [0, π]` (n1 along z, n2 tilted in the xz plane).

    Lattice points share the evolved wing 1, whose axis does not change along the scan.

    Raises:
        PreconditionError: For a scenario without comparator or an angle outside `[0, π]`.
    """
    if base.kind is not ScenarioKind.EPRB:
        raise PreconditionError("Correlation scans need the EPRB scenario.")
    angles = default_angles() if angles is None else list(angles)
    if any(not 0 <= angle <= math.pi for angle in angles):
        raise PreconditionError("Relative angles must lie in [0, π].")
    base.audit()
    t45 = base.query_times()["t45"]
    beta = base.plan.theta_c
    rows: list[CorrelationRow] = []
    if backend.runs_analytic:
        for angle in angles:
            result = mn_run(MNConfiguration.from_scenario(base.with_axes(_axes_for(angle))), t45)
            rows.append(CorrelationRow(angle, result.p_comparator, "analytic", beta))
    if backend.runs_lattice and angles:
        first = FactorizedBackend(base.with_axes(_axes_for(angles[0])))
        shared = first.wings[1]
        t3 = base.plan.times[3]
        shared.gram  # noqa: B018
        shared.observer_blocks(t3)

        def lattice_point(angle: float) -> CorrelationRow:
            scenario = base.with_axes(_axes_for(angle))
            p_c1 = float(FactorizedBackend(scenario, wings={1: shared}).comparator_density(t45)[1].sum())
            logger.info("θ12 = %.4f: P^C_1 = %.6e", angle, p_c1)
            return CorrelationRow(angle, p_c1, "lattice", beta)

        with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
            rows.extend(pool.map(lattice_point, angles))
    return rows
