r"""Closed-form backend and continuum checks.

In the massive narrow-wavepacket (MN) limit every quantum follows its classical trajectory and only its internal
factor evolves. The joint internal state lives in an `InternalState` register ordered [S1, S2, O1, O2, C] (or
[S1, O1] for a single observer); the measurement and comparison windows act on it as controlled rotations, each
gated by whether the two trajectories are within the aperture at the window time.

The module also holds the continuum counterparts of the lattice machinery: the freely evolved Gaussian packet,
the free Green's function and quadrature against it, and the exterior ("tail") integral

    Ĩ(x) = ∫_{|y - x_S| > a} G*(x - y, t_[2,3] - t1) ψ*(y, t1) dy,

whose magnitude decays like `exp(-α̃ a² / 2)`.
"""

from __future__ import annotations

import cmath
import logging
import math
import typing
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from EVLAB.evolution import WindowKind
from EVLAB.exceptions import ConvergenceError, PreconditionError
from EVLAB.internal_circuit import InternalCircuit
from EVLAB.internal_state import InternalState
from EVLAB.lattice_backend import FactorizedBackend
from EVLAB.model import SINGLET, WavepacketSpec
from EVLAB.scenario import ScenarioKind

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.evolution import StagePlan, TrajectoryPlan
    from EVLAB.lattice import Lattice
    from EVLAB.model import SpinAxis
    from EVLAB.scenario import ScenarioSpec

logger = logging.getLogger(__name__)

TAIL_ABS_TOLERANCE = 1e-10
_GAUSSIAN_CUTOFF = 90.0  # α̃ r² beyond which the packet is dropped, exp(-45)
_MAX_ZONES = 200_000


# ---------------------------------------------------------------------- MN register


@dataclass
class MNConfiguration:
    """Entities of the MN backend with their trajectories and the joint internal state at `t0`.

    Attributes:
        names (tuple[str, ...]): Entity per register qubit.
        trajectories (TrajectoryPlan): Classical trajectories.
        plan (StagePlan): The schedule.
        axes (dict[int, SpinAxis]): Analyser axis per wing.
        apertures (dict[str, float]): Aperture per gate (``"M1"``, ``"M2"``, ``"C"``).
        initial (InternalState): Joint internal state at `t0`.
    """

    names: tuple[str, ...]
    trajectories: TrajectoryPlan
    plan: StagePlan
    axes: dict[int, SpinAxis]
    apertures: dict[str, float]
    initial: InternalState

    @classmethod
    def from_scenario(cls, scenario: ScenarioSpec) -> MNConfiguration:
        names = scenario.species
        unaware = np.eye(2, dtype=complex)[0]
        if scenario.kind is ScenarioKind.EPRB:
            data = SINGLET.reshape(-1).astype(complex)
            for _ in names[2:]:
                data = np.kron(data, unaware)
            initial = InternalState(data, names)
        else:
            initial = InternalState.product([("S1", scenario.internal_state("S1")), ("O1", unaware)])
        apertures = {f"M{p}": scenario.coupling.aperture(p) for p in scenario.wings}
        if scenario.kind is ScenarioKind.EPRB:
            apertures["C"] = scenario.coupling.range_ac
        return cls(names, scenario.trajectories(), scenario.plan, dict(scenario.axes), apertures, initial)

    @property
    def wings(self) -> tuple[int, ...]:
        return tuple(p for p in (1, 2) if f"O{p}" in self.names)

    @property
    def gate_history(self) -> dict[str, bool]:
        """Whether each interaction is switched on: the partners are within the aperture at the window time."""
        t1, t3 = self.plan.times[1], self.plan.times[3]
        gates = {
            f"M{p}": self.trajectories.separation(f"S{p}", f"O{p}", t1) <= self.apertures[f"M{p}"] * (1 + 1e-12)
            for p in self.wings
        }
        if "C" in self.names:
            radius = self.apertures["C"] * (1 + 1e-12)
            gates["C"] = all(self.trajectories.separation(f"O{p}", "C", t3) <= radius for p in self.wings)
        return gates

    def circuit(self, t: float) -> InternalCircuit:
        """Gates of the windows started before `t`; a window in progress contributes its elapsed fraction."""
        circuit = InternalCircuit(len(self.names))
        gates = self.gate_history
        t1, t2, t3, t4 = self.plan.times[1:]
        measured = _window_fraction(t, t1, t2)
        if measured > 0:
            for p in self.wings:
                if gates[f"M{p}"]:
                    circuit.measurement(
                        self.axes[p].rotation_matrix(),
                        self.plan.angle(WindowKind.MEASUREMENT) * measured,
                        self.names.index(f"S{p}"),
                        self.names.index(f"O{p}"),
                    )
        compared = _window_fraction(t, t3, t4) if "C" in self.names else 0.0
        if compared > 0 and gates["C"]:
            circuit.barrier()
            circuit.comparison(
                self.plan.angle(WindowKind.COMPARATOR) * compared,
                [self.names.index(f"O{p}") for p in self.wings],
                self.names.index("C"),
            )
        return circuit

    def state(self, t: float) -> InternalState:
        return self.initial.apply(self.circuit(t))


def _window_fraction(t: float, start: float, end: float) -> float:
    if t < start:
        return 0.0
    if end == start or t >= end:
        return 1.0
    return (t - start) / (end - start)


@dataclass
class MNResult:
    """Outcome of an MN run at one query time.

    Attributes:
        t (float): Query time.
        state (InternalState): Joint internal state.
        p_observer (dict[int, float]): `P(O[p] = 1)` per wing.
        p_comparator (float | None): `P(C = 1)`; None without a comparator.
        joint (dict[str, float]): Born weights of the (observers, comparator) register configurations.
        gates (dict[str, bool]): Which interactions were switched on.
        prediction (float | None): `sin²β sin⁴Θ (1 - n1·n2)/4` for the singlet.
        perturbative (float | None): Its small-β form `β² sin⁴Θ (1 - n1·n2)/4`.
    """

    t: float
    state: InternalState
    p_observer: dict[int, float]
    p_comparator: float | None
    joint: dict[str, float]
    gates: dict[str, bool]
    prediction: float | None = None
    perturbative: float | None = None

    def probability(self, species_id: str, label: int) -> float:
        """Born weight of one internal label of one entity."""
        excited = self.state.excited(species_id)
        return excited if label else 1.0 - excited


def mn_run(config: MNConfiguration | ScenarioSpec, t: float | None = None) -> MNResult:
    """Run the MN backend up to `t` (after every window when omitted).

    Args:
        config (MNConfiguration | ScenarioSpec): The configuration, or a scenario to derive it from.
        t (float | None, optional): Query time. Defaults to the end of the last window.

    Returns:
        MNResult: Probabilities, joint outcome table and the closed-form singlet prediction.
    """
    if not isinstance(config, MNConfiguration):
        config = MNConfiguration.from_scenario(config)
    t = config.plan.times[4] if t is None else t
    state = config.state(t)
    p_observer = {p: state.excited(f"O{p}") for p in config.wings}
    outcome_names = [name for name in config.names if name[0] in "OC"]
    result = MNResult(
        t=t,
        state=state,
        p_observer=p_observer,
        p_comparator=state.excited("C") if "C" in config.names else None,
        joint=state.probabilities(outcome_names),
        gates=config.gate_history,
    )
    if "C" in config.names:
        theta, beta = config.plan.theta, config.plan.theta_c
        alignment = 0.25 * (1 - float(config.axes[1].n @ config.axes[2].n)) * math.sin(theta) ** 4
        result.prediction = math.sin(beta) ** 2 * alignment
        result.perturbative = beta**2 * alignment
    logger.debug("MN run at t=%g: observers %s, comparator %s", t, p_observer, result.p_comparator)
    return result


def mn_density(config: MNConfiguration, species_id: str, label: int, t: float, lattice: Lattice) -> NDArray:
    """Density of one label as a single-cell spike at the classical position, for comparison with lattice runs."""
    result = mn_run(config, t)
    density = np.zeros(lattice.num_cells)
    position = config.trajectories.position(species_id, t)
    density[lattice.nearest_cell(position)] = result.probability(species_id, label)
    return density


# ---------------------------------------------------------------------- continuum packets


def continuum_packet(x: float | NDArray, t: float, packet: WavepacketSpec, hbar: float = 1.0, t0: float = 0.0):
    """Freely evolved Gaussian packet `ψ(x, t)`.

    `ψ = (α/π)^(d/4) (1 + iτ)^(-d/2) exp(-α|x - x0 - v(t - t0)|² / (2(1 + iτ)) + ik·(x - x0) - iħk²(t - t0)/(2m))`
    with `τ = αħ(t - t0)/m` and `k = mv/ħ`; `|ψ|²` is a Gaussian of width parameter `α / (1 + τ²)`.

    Args:
        x (float | NDArray): Points, shape `(..., d)`; scalars and flat arrays are read as 1-D points.
        t (float): Time.
        packet (WavepacketSpec): Packet at `t0`.
        hbar (float, optional): Reduced Planck constant. Defaults to 1.0.
        t0 (float, optional): Reference time of `packet`. Defaults to 0.0.

    Raises:
        PreconditionError: If `t < t0`.
    """
    elapsed = t - t0
    if elapsed < 0:
        raise PreconditionError("The continuum packet is only propagated forward in time.")
    points = np.asarray(x, dtype=float)
    if packet.dim == 1 and (points.ndim == 0 or points.shape[-1] != 1):
        points = points[..., np.newaxis]
    alpha, mass = packet.width_param, packet.mass
    center, velocity = np.asarray(packet.center), np.asarray(packet.velocity)
    k = mass * velocity / hbar
    tau = alpha * hbar * elapsed / mass
    shift = points - center - velocity * elapsed
    exponent = (
        -alpha * np.sum(shift**2, axis=-1) / (2 * (1 + 1j * tau))
        + 1j * (points - center) @ k
        - 1j * hbar * float(k @ k) * elapsed / (2 * mass)
    )
    return (alpha / math.pi) ** (packet.dim / 4) * (1 + 1j * tau) ** (-packet.dim / 2) * np.exp(exponent)


def spread_width_param(alpha: float, mass: float, elapsed: float, hbar: float = 1.0) -> float:
    """`α̃ = α / (1 + (αħ t / m)²)`."""
    return alpha / (1 + (alpha * hbar * elapsed / mass) ** 2)


def green_function(displacement, duration: float, mass: float, hbar: float = 1.0, dim: int = 1):
    """Free Green's function `(m / (2πiħt))^(d/2) exp(i m |r|² / (2ħt))`."""
    r2 = np.asarray(displacement, dtype=float) ** 2
    if dim > 1:
        r2 = np.sum(r2, axis=-1)
    return (mass / (2j * math.pi * hbar * duration)) ** (dim / 2) * np.exp(1j * mass * r2 / (2 * hbar * duration))


def _zone_breaks(lo: float, hi: float, center: float, scale: float) -> list[float]:
    """`[lo, hi]` split where `(y - center)² / scale` crosses an integer."""
    reach = max(abs(lo - center), abs(hi - center))
    count = int(reach**2 / scale) + 1
    if count > _MAX_ZONES:
        raise PreconditionError(f"{count} oscillation zones exceed the quadrature limit {_MAX_ZONES}.")
    roots = np.sqrt(scale * np.arange(1, count + 1))
    inner = np.concatenate([center - roots, center + roots])
    inner = inner[(inner > lo) & (inner < hi)]
    return [lo, *np.unique(inner).tolist(), hi]


def _complex_quad(
    function: Callable[[float], complex], breaks: Sequence[float], tolerance: float
) -> tuple[complex, float]:
    """Sum of `quad` over consecutive break intervals; returns the value and the summed error estimate."""
    pieces = max(1, len(breaks) - 1)
    epsabs = tolerance / (2 * pieces)
    value, error = 0j, 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        for part, weight in ((lambda y: function(y).real, 1.0), (lambda y: function(y).imag, 1j)):
            result = integrate.quad(part, lo, hi, epsabs=epsabs, epsrel=1e-10, limit=200, full_output=1)
            value += weight * result[0]
            error += result[1]
    return value, error


def continuum_propagate(
    x: float,
    duration: float,
    initial: Callable[[float], complex],
    support: tuple[float, float],
    mass: float = 1.0,
    hbar: float = 1.0,
    tolerance: float = TAIL_ABS_TOLERANCE,
) -> complex:
    """`∫ G(x - y, duration) ψ(y) dy` over `support` in one dimension.

    Raises:
        ConvergenceError: If the quadrature error estimate exceeds `tolerance`.
    """
    if duration <= 0:
        raise PreconditionError("The propagation time must be positive.")
    breaks = _zone_breaks(*support, x, 2 * math.pi * hbar * duration / mass)

    def integrand(y: float) -> complex:
        return complex(green_function(x - y, duration, mass, hbar)) * complex(initial(y))

    value, error = _complex_quad(integrand, breaks, tolerance)
    if error > tolerance:
        raise ConvergenceError("Green's-function quadrature did not converge", error)
    return value


@dataclass
class CompositionReport:
    """Deviation of `∫ G(t2) ψ(t1)` from `ψ(t1 + t2)` at sample points."""

    points: list[float]
    deviations: list[float]
    tolerance: float = 1e-8

    @property
    def max_deviation(self) -> float:
        return max(self.deviations, default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def green_composition_check(
    packet: WavepacketSpec, first: float, second: float, points: Sequence[float], hbar: float = 1.0
) -> CompositionReport:
    """Check in 1-D that propagating by `first`, then by `second` with the Green's function, gives `first + second`."""
    if packet.dim != 1:
        raise PreconditionError("The composition check is one-dimensional.")
    alpha_tilde = spread_width_param(packet.width_param, packet.mass, first, hbar)
    reach = math.sqrt(_GAUSSIAN_CUTOFF / alpha_tilde)
    center = float(packet.position(first)[0])

    def evolved(y: float) -> complex:
        return complex(continuum_packet(y, first, packet, hbar))

    deviations = []
    for x in points:
        numeric = continuum_propagate(x, second, evolved, (center - reach, center + reach), packet.mass, hbar)
        exact = complex(continuum_packet(x, first + second, packet, hbar))
        deviations.append(abs(numeric - exact))
    return CompositionReport(list(points), deviations)


# ---------------------------------------------------------------------- tail integral


@dataclass(frozen=True)
class TailIntegralSpec:
    """Parameters of the exterior integral `Ĩ(x)`.

    The observer packet is static, centred at `center`, with width parameter `alpha` at `t0`; it has spread for
    `spread_time` (t1 - t0) and the Green's function covers `query_time` (t_[2,3] - t1).

    Attributes:
        alpha (float): Width parameter at `t0`.
        aperture (float): Aperture `a`; 0 gives the whole-space integral.
        mass (float): Observer mass.
        spread_time (float): `t1 - t0`.
        query_time (float): `t_[2,3] - t1`.
        hbar (float): Reduced Planck constant.
        dim (int): 1, or 3 for the radial reduction.
        center (float): Observer centre (1-D).
    """

    alpha: float
    aperture: float = 5.0
    mass: float = 1.0
    spread_time: float = 0.25
    query_time: float = 0.1
    hbar: float = 1.0
    dim: int = 1
    center: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0 or self.mass <= 0 or self.hbar <= 0:
            raise PreconditionError("alpha, mass and hbar must be positive.")
        if self.aperture < 0 or self.spread_time < 0 or self.query_time <= 0:
            raise PreconditionError("The aperture and spread time must be non-negative, the query time positive.")
        if self.dim not in (1, 3):
            raise PreconditionError(f"Tail integrals are implemented in 1 or 3 dimensions, not {self.dim}.")

    @property
    def alpha_tilde(self) -> float:
        return spread_width_param(self.alpha, self.mass, self.spread_time, self.hbar)

    @classmethod
    def from_alpha_tilde(cls, alpha_tilde: float, aperture: float = 5.0, **kwargs) -> TailIntegralSpec:
        """Spec whose spread width parameter at t1 is `alpha_tilde` (the narrower of the two solutions)."""
        mass, hbar = kwargs.get("mass", 1.0), kwargs.get("hbar", 1.0)
        c = hbar * kwargs.get("spread_time", 0.25) / mass
        discriminant = 1 - 4 * alpha_tilde**2 * c**2
        if alpha_tilde <= 0 or discriminant < 0:
            raise PreconditionError(f"No width parameter spreads to α̃ = {alpha_tilde} (needs 2α̃ħt/m <= 1).")
        alpha = 2 * alpha_tilde / (1 + math.sqrt(discriminant))
        return cls(alpha=alpha, aperture=aperture, **kwargs)

    def packet(self) -> WavepacketSpec:
        """The observer packet at `t0`; in 3-D it sits at the origin and points are given relative to it."""
        center = (self.center,) if self.dim == 1 else (0.0, 0.0, 0.0)
        return WavepacketSpec(center, self.alpha, mass=self.mass)

    def profile(self) -> Callable[[float], complex]:
        """`ψ(r, t1)` of the spread static packet as a function of the distance to its centre."""
        tau = self.alpha * self.hbar * self.spread_time / self.mass
        amplitude = (self.alpha / math.pi) ** (self.dim / 4) * (1 + 1j * tau) ** (-self.dim / 2)
        rate = self.alpha / (2 * (1 + 1j * tau))
        return lambda r: amplitude * cmath.exp(-rate * r * r)


def tail_integral(spec: TailIntegralSpec, x: float | Sequence[float] = 0.0) -> complex:
    """The exterior integral `Ĩ(x)`, by quadrature split at the Fresnel zones of the Green's function.

    In three dimensions the angular integral is done in closed form, leaving the radial kernel
    `4π r² sinc(m ρ r / (ħ τ))` with `ρ = |x - center|`.

    Args:
        spec (TailIntegralSpec): The integral.
        x (float | Sequence[float], optional): Evaluation point; in 3-D a vector or its distance to the centre.

    Raises:
        PreconditionError: If `0 < α̃a² < 1`.
        ConvergenceError: If the summed quadrature error estimate exceeds 1e-10.
    """
    alpha_tilde, a = spec.alpha_tilde, spec.aperture
    if a > 0 and alpha_tilde * a**2 < 1:
        raise PreconditionError(f"α̃a² = {alpha_tilde * a**2:.3g} is below 1; the tail is not asymptotic.")
    m, hbar, tau = spec.mass, spec.hbar, spec.query_time
    scale = 2 * math.pi * hbar * tau / m
    reach = a + math.sqrt(_GAUSSIAN_CUTOFF / alpha_tilde)
    profile = spec.profile()
    prefactor = ((m / (2j * math.pi * hbar * tau)) ** (spec.dim / 2)).conjugate()

    if spec.dim == 1:
        x = float(np.atleast_1d(x)[0])
        c = spec.center

        def integrand(y: float) -> complex:
            chirp = cmath.exp(-1j * m * (x - y) ** 2 / (2 * hbar * tau))
            return prefactor * chirp * profile(y - c).conjugate()

        if a == 0:
            regions = [(c - reach, c + reach)]
        else:
            regions = [(c - reach, c - a), (c + a, c + reach)]
        breaks = [_zone_breaks(lo, hi, x, scale) for lo, hi in regions]
    else:
        rho = float(np.linalg.norm(x)) if np.ndim(x) else abs(float(x))

        def integrand(r: float) -> complex:
            chirp = cmath.exp(-1j * m * (rho**2 + r**2) / (2 * hbar * tau))
            kernel = 4 * math.pi * r**2 * float(np.sinc(m * rho * r / (math.pi * hbar * tau)))
            return prefactor * kernel * chirp * profile(r).conjugate()

        zones = set(_zone_breaks(a, reach, 0.0, scale)) | set(_zone_breaks(a, reach, rho, scale))
        breaks = [sorted(zones)]

    value, error = 0j, 0.0
    for region in breaks:
        part, part_error = _complex_quad(integrand, region, TAIL_ABS_TOLERANCE / len(breaks))
        value += part
        error += part_error
    if error > TAIL_ABS_TOLERANCE:
        raise ConvergenceError(f"Tail integral at α̃a² = {alpha_tilde * a**2:.3g} did not converge", error)
    logger.debug("Tail integral α̃a² = %.4g: |Ĩ| = %.6e (error %.2e)", alpha_tilde * a**2, abs(value), error)
    return value


@dataclass
class DecayFit:
    """Least-squares line through `(α̃a², log|Ĩ|)`."""

    slope: float
    intercept: float

    def within(self, target: float = -0.5, relative: float = 0.1) -> bool:
        return abs(self.slope - target) <= relative * abs(target)


def fit_decay_slope(alpha_tilde_a2: Sequence[float], magnitudes: Sequence[float]) -> DecayFit:
    """Fit `log|Ĩ|` against `α̃a²`.

    Raises:
        PreconditionError: With fewer than two points or a non-positive magnitude.
    """
    xs, ys = np.asarray(alpha_tilde_a2, dtype=float), np.asarray(magnitudes, dtype=float)
    if len(xs) < 2 or len(xs) != len(ys) or np.any(ys <= 0):
        raise PreconditionError("The decay fit needs at least two points with positive magnitudes.")
    slope, intercept = np.polyfit(xs, np.log(ys), 1)
    return DecayFit(float(slope), float(intercept))


@dataclass
class TailRow:
    alpha_tilde_a2: float
    alpha_tilde: float
    aperture: float
    value: complex

    @property
    def magnitude(self) -> float:
        return abs(self.value)


@dataclass
class TailScan:
    """Tail integrals over a grid of `α̃a²` at fixed aperture, plus the whole-space reference row."""

    rows: list[TailRow]
    whole: TailRow
    reference: float
    fit: DecayFit = field(init=False)

    def __post_init__(self):
        self.fit = fit_decay_slope([r.alpha_tilde_a2 for r in self.rows], [r.magnitude for r in self.rows])

    @property
    def monotone(self) -> bool:
        magnitudes = [r.magnitude for r in self.rows]
        return all(later < earlier for earlier, later in zip(magnitudes, magnitudes[1:]))


def tail_scan(
    grid: Sequence[float] = (4.0, 9.0, 16.0, 25.0),
    aperture: float = 5.0,
    x: float = 0.0,
    **kwargs,
) -> TailScan:
    """Evaluate `Ĩ(x)` for each `α̃a²` in `grid` by varying α̃ at fixed `aperture`.

    The whole-space row uses the α̃ of the first grid point with a vanishing aperture; `reference` is the
    freely propagated packet `|ψ(x, t_[2,3])|` it must equal.
    """
    grid = sorted(float(g) for g in grid)
    rows = []
    for g in grid:
        spec = TailIntegralSpec.from_alpha_tilde(g / aperture**2, aperture, **kwargs)
        rows.append(TailRow(g, spec.alpha_tilde, aperture, tail_integral(spec, x)))
        logger.info("α̃a² = %g: |Ĩ| = %.6e", g, rows[-1].magnitude)
    spec = TailIntegralSpec.from_alpha_tilde(grid[0] / aperture**2, 0.0, **kwargs)
    whole = TailRow(0.0, spec.alpha_tilde, 0.0, tail_integral(spec, x))
    point = (x,) + (0.0,) * (spec.dim - 1)
    reference = abs(complex(continuum_packet(point, spec.spread_time + spec.query_time, spec.packet(), spec.hbar)))
    return TailScan(rows, whole, reference)


# ---------------------------------------------------------------------- backend comparison


@dataclass
class ConvergenceRow:
    label: str
    width_over_aperture: float
    sites: int
    deviation: float
    lattice: dict[str, float]
    analytic: dict[str, float]


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]

    @property
    def decreasing(self) -> bool:
        deviations = [row.deviation for row in self.rows]
        return all(later <= earlier for earlier, later in zip(deviations, deviations[1:]))


def outcome_probabilities(scenario: ScenarioSpec, backend: FactorizedBackend | None = None) -> dict[str, dict]:
    """`P(O[p] = 1)` at t_[2,3] and `P(C = 1)` at t_[4,5] from both backends."""
    times = scenario.query_times()
    config = MNConfiguration.from_scenario(scenario)
    backend = backend or FactorizedBackend(scenario)
    analytic = {f"O{p}": mn_run(config, times["t23"]).p_observer[p] for p in scenario.wings}
    lattice = {f"O{p}": float(backend.observer_density(p, times["t23"])[1].sum()) for p in scenario.wings}
    if scenario.kind is ScenarioKind.EPRB:
        analytic["C"] = mn_run(config, times["t45"]).p_comparator
        lattice["C"] = float(backend.comparator_density(times["t45"])[1].sum())
    return {"analytic": analytic, "lattice": lattice}


def mn_vs_lattice(scenarios: Sequence[ScenarioSpec], labels: Sequence[str] | None = None) -> ConvergenceReport:
    """Run both backends on each scenario (ordered by resolution) and report the largest probability deviation."""
    rows = []
    for index, scenario in enumerate(scenarios):
        scenario.audit()
        probabilities = outcome_probabilities(scenario)
        analytic, lattice = probabilities["analytic"], probabilities["lattice"]
        deviation = max(abs(lattice[key] - analytic[key]) for key in analytic)
        width = max(packet.width for packet in scenario.packets.values())
        label = labels[index] if labels else f"resolution {index}"
        rows.append(
            ConvergenceRow(
                label, width / scenario.coupling.aperture(1), scenario.lattice.num_cells, deviation, lattice, analytic
            )
        )
        logger.info("%s: %d sites, max deviation %.3e", label, scenario.lattice.num_cells, deviation)
    return ConvergenceReport(rows)
