"""Command-line front end: ``evlab {algebra-check, run-eprb, scan, dh-check, tail}``.

A run is described by an INI file with dotted section names::

    [run]
    kind = eprb
    backend = analytic

    [scenario]
    theta = 1.5707963267948966
    beta = 0.1

    [scenario.axes.n2]
    theta = 1.5707963267948966
    phi = 0.0

Every section and key is optional; unknown ones are rejected. Command-line flags override the file.
Exit codes: 0 when every check passes, 1 when a check fails, 2 for configuration or scenario errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import logging
import math
import pathlib
import sys
import typing
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from EVLAB.analytic import tail_scan
from EVLAB.deutsch_hayden import dh_check
from EVLAB.eprb import default_angles, run_eprb, scan_correlation
from EVLAB.evolution import ModelContext, StagePlan, dense_propagator
from EVLAB.exceptions import ConfigError, ConvergenceError, EvlabError, PreconditionError, ScenarioError
from EVLAB.fock_state import check_car, creation_matrix, hermiticity_defect, terms_to_matrix
from EVLAB.lattice import Lattice, ModeTable, SpeciesSpec
from EVLAB.model import CouplingSpec, SpinAxis, build_comparator_hamiltonian, build_free_hamiltonian
from EVLAB.scenario import Backend, LayoutParameters, ScenarioKind, eprb_layout, single_observer_layout

if typing.TYPE_CHECKING:
    from EVLAB.scenario import ScenarioSpec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2

UNITARITY_TOLERANCE = 1e-10
HERMITICITY_TOLERANCE = 1e-12


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(item) for item in raw.replace(",", " ").split())


def _complexes(raw: str) -> tuple[complex, ...]:
    return tuple(complex(item.replace(" ", "")) for item in raw.split(","))


def _optional_float(raw: str) -> float | None:
    return None if raw.strip().lower() in ("", "none") else float(raw)


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        value = raw.strip().lower()
        if value not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return value

    return parse


_LAYOUT_FIELDS = {item.name: item.default for item in dataclasses.fields(LayoutParameters)}

# section -> key -> (parser, default)
_SCHEMA: dict[str, dict[str, tuple[Callable[[str], typing.Any], typing.Any]]] = {
    "run": {
        "kind": (_choice("eprb", "single_observer"), "eprb"),
        "backend": (_choice("lattice", "analytic", "both"), "analytic"),
        "seed": (int, 0),
        "epsilon": (_optional_float, None),
        "t23": (_optional_float, None),
        "t45": (_optional_float, None),
    },
    "scenario": {
        "theta": (float, math.pi / 2),
        "beta": (float, 0.1),
        "spin": (_complexes, (1 + 0j, 0j)),
    },
    "scenario.axes.n1": {"theta": (float, 0.0), "phi": (float, 0.0)},
    "scenario.axes.n2": {"theta": (float, math.pi / 2), "phi": (float, 0.0)},
    "layout": {name: (float, default) for name, default in _LAYOUT_FIELDS.items()},
    "scan": {"points": (int, 13)},
    "dh": {
        "scenario": (_choice("single_observer", "eprb"), "single_observer"),
        "sites": (int, 0),
        "draws": (int, 3),
        "shape": (_choice("gaussian", "uniform", "random"), "random"),
    },
    "tail": {
        "alpha_tilde_a2": (_floats, (4.0, 9.0, 16.0, 25.0)),
        "aperture": (float, 5.0),
        "mass": (float, 1.0),
        "spread_time": (float, 0.25),
        "query_time": (float, 0.1),
        "dim": (int, 1),
    },
    "algebra": {"sites": (int, 2), "trials": (int, 0)},
}

# sections that must give every key
_ALL_KEYS_REQUIRED = ("scenario.axes.n1", "scenario.axes.n2")


def _format(value: typing.Any) -> str:
    match value:
        case None:
            return "none"
        case float():
            return repr(value)
        case complex():
            return repr(value).strip("()")
        case tuple():
            return ", ".join(_format(item) for item in value)
        case _:
            return str(value)


@dataclass
class RunConfig:
    """Resolved run configuration: ``values[section][key]``, with the sections given explicitly tracked.

    Attributes:
        values (dict[str, dict[str, Any]]): Every schema entry, parsed or defaulted.
        explicit (set[str]): Sections present in the source text.
    """

    values: dict[str, dict[str, typing.Any]] = field(
        default_factory=lambda: {section: {k: d for k, (_, d) in keys.items()} for section, keys in _SCHEMA.items()}
    )
    explicit: set[str] = field(default_factory=set)

    def __getitem__(self, section: str) -> dict[str, typing.Any]:
        return self.values[section]

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        """Parse a run configuration.

        Raises:
            ConfigError: On unknown sections or keys, unparsable values, or an incomplete axis section.
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case sensitive
        try:
            parser.read_string(text)
        except configparser.Error as error:
            raise ConfigError("<file>", f"unreadable configuration ({error.__class__.__name__})") from error
        config = cls()
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(section, "unknown section")
            config.explicit.add(section)
            for key, raw in parser[section].items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                parse, _ = _SCHEMA[section][key]
                try:
                    config.values[section][key] = parse(raw)
                except ValueError as error:
                    raise ConfigError(f"{section}.{key}", f"invalid value {raw!r}: {error}") from error
            if section in _ALL_KEYS_REQUIRED:
                for key in _SCHEMA[section]:
                    if key not in parser[section]:
                        raise ConfigError(f"{section}.{key}", "missing key")
        return config

    @classmethod
    def from_path(cls, path: str | pathlib.Path | None) -> RunConfig:
        if path is None:
            return cls()
        path = pathlib.Path(path)
        if not path.is_file():
            raise ConfigError(str(path), "configuration file not found")
        return cls.from_text(path.read_text(encoding="utf-8"))

    def to_text(self) -> str:
        """Normalized INI text holding every value; `from_text` of it reproduces this configuration."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {key: _format(value) for key, value in keys.items()}
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    @property
    def kind(self) -> ScenarioKind:
        return ScenarioKind.EPRB if self["run"]["kind"] == "eprb" else ScenarioKind.SINGLE_OBSERVER

    @property
    def backend(self) -> Backend:
        return Backend(self["run"]["backend"])

    def layout(self) -> LayoutParameters:
        try:
            return LayoutParameters(**self["layout"])
        except PreconditionError as error:
            raise ConfigError("layout", str(error)) from error

    def axis(self, p: int) -> SpinAxis:
        values = self[f"scenario.axes.n{p}"]
        try:
            return SpinAxis(values["theta"], values["phi"])
        except PreconditionError as error:
            raise ConfigError(f"scenario.axes.n{p}.theta", str(error)) from error

    def scenario(self) -> ScenarioSpec:
        """Build the scenario from the standard layouts."""
        values = self["scenario"]
        if self.kind is ScenarioKind.EPRB:
            return eprb_layout(self.layout(), values["theta"], values["beta"], self.axis(1), self.axis(2))
        spin = values["spin"]
        if len(spin) != 2:
            raise ConfigError("scenario.spin", "two spin coefficients are needed")
        return single_observer_layout(self.layout(), values["theta"], tuple(spin), self.axis(1))

    def query_times(self, scenario: ScenarioSpec) -> dict[str, float]:
        times = scenario.query_times()
        for key in ("t23", "t45"):
            if self["run"][key] is not None:
                times[key] = self["run"][key]
        return times


# ---------------------------------------------------------------------- output


def _cell(value: typing.Any) -> str:
    if isinstance(value, float | np.floating):
        return f"{float(value):.17g}"
    return "" if value is None else str(value)


def write_csv(path: pathlib.Path, header: Sequence[str], rows: Sequence[Sequence[typing.Any]]) -> None:
    """Write a CSV with 17 significant digits and ``\\n`` line endings."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])


def package_version() -> str:
    from EVLAB import __version__

    return __version__


# ---------------------------------------------------------------------- commands


@dataclass
class CheckLine:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAIL"
        suffix = f" ({self.detail})" if self.detail else ""
        return f"{status:4s} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.1e}){suffix}"


def algebra_checks(config: RunConfig, factory: Callable = creation_matrix) -> list[CheckLine]:
    """CAR audit with a fictitious species, Hermiticity of every Hamiltonian and unitarity of a dense schedule."""
    sites = config["algebra"]["sites"]
    trials = config["algebra"]["trials"] or None
    lattice = Lattice(dim=1, sites_per_axis=sites)
    species = [SpeciesSpec.system("S1"), SpeciesSpec.observer("O1"), SpeciesSpec.fictitious("Z_S1")]
    lines = []

    car = check_car(lattice, species, trials=trials, factory=factory, seed=config["run"]["seed"])
    lines.append(
        CheckLine("car", float(len(car.violations)), 0.0, car.passed, car.violations[0] if car.violations else "")
    )

    table = ModeTable(lattice, species)
    coupling = CouplingSpec(range_a=(lattice.spacing,), range_ac=lattice.spacing)
    context = ModelContext(table, coupling, {1: config.axis(1)})
    hamiltonians = {
        "hermitian_free": build_free_hamiltonian(table, ["S1", "O1"]),
        "hermitian_measurement": context.measurement_terms,
    }
    comparator_table = ModeTable(
        Lattice(dim=1, sites_per_axis=1),
        [SpeciesSpec.observer("O1"), SpeciesSpec.observer("O2"), SpeciesSpec.comparator("C")],
    )
    hamiltonians["hermitian_comparator"] = build_comparator_hamiltonian(comparator_table, coupling)
    for name, terms in hamiltonians.items():
        num_modes = len(comparator_table if name == "hermitian_comparator" else table)
        defect = hermiticity_defect(terms_to_matrix(terms, num_modes))
        lines.append(CheckLine(name, defect, HERMITICITY_TOLERANCE, defect <= HERMITICITY_TOLERANCE))

    plan = StagePlan((0.0, 0.5, 0.5, 1.0, 1.0), theta=config["scenario"]["theta"], comparator=False)
    unitary = dense_propagator(plan, context, 1.0, np.arange(1 << len(table)))
    defect = float(np.max(np.abs(unitary.conj().T @ unitary - np.eye(len(unitary)))))
    lines.append(CheckLine("unitary_schedule", defect, UNITARITY_TOLERANCE, defect <= UNITARITY_TOLERANCE))
    return lines


def cmd_algebra_check(config: RunConfig, args: argparse.Namespace) -> int:
    lines = algebra_checks(config)
    for line in lines:
        print(line)
    failure = next((line for line in lines if not line.passed), None)
    if failure is not None:
        logger.error("Algebra check failed: %s", failure.detail or failure.name)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_run_eprb(config: RunConfig, args: argparse.Namespace) -> int:
    scenario = config.scenario()
    record = run_eprb(
        scenario,
        config.backend,
        epsilon=config["run"]["epsilon"],
        times=config.query_times(scenario),
        metadata={"version": package_version(), "seed": config["run"]["seed"], "config": config.to_text()},
    )
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "record.json").write_text(record.to_json() + "\n", encoding="utf-8")
    write_csv(
        out / "densities.csv",
        ("query", "time", "species", "internal", "cell", "x", "density", "backend"),
        record.density_rows(),
    )
    for row in record.rows:
        print(f"{row.query} {row.backend:8s} P[{row.species}={row.internal}] = {row.probability:.12f}")
    for key, deviation in record.deviations.items():
        print(f"deviation {key}: {deviation:.3e}")
    return EXIT_OK


def cmd_scan(config: RunConfig, args: argparse.Namespace) -> int:
    scenario = config.scenario()
    if scenario.kind is not ScenarioKind.EPRB:
        raise ConfigError("run.kind", "the correlation scan needs kind = eprb")
    rows = scan_correlation(scenario, default_angles(config["scan"]["points"]), config.backend)
    write_csv(
        pathlib.Path(args.out) / "scan.csv",
        ("theta12_rad", "p_c1", "p_c1_normalized", "backend", "beta"),
        [(r.theta12, r.p_c1, r.p_c1_normalized, r.backend, r.beta) for r in rows],
    )
    for row in rows:
        print(
            f"{row.backend:8s} θ12 = {row.theta12:.6f}  P^C_1 = {row.p_c1:.6e}  "
            f"normalized = {row.p_c1_normalized:.9f}"
        )
    return EXIT_OK


def cmd_dh_check(config: RunConfig, args: argparse.Namespace) -> int:
    values = config["dh"]
    kind = ScenarioKind.EPRB if values["scenario"] == "eprb" else ScenarioKind.SINGLE_OBSERVER
    report = dh_check(kind, values["sites"] or None, values["draws"], values["shape"], config["run"]["seed"])
    for check in report.checks:
        relation = "<=" if check.lower_is_better else ">="
        print(f"{'ok' if check.passed else 'FAIL':4s} {check.name}: {check.value:.3e} {relation} {check.tolerance:.1e}")
    failure = report.first_failure
    if failure is not None:
        logger.error("Deutsch-Hayden check %s failed with %.6e", failure.name, failure.value)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_tail(config: RunConfig, args: argparse.Namespace) -> int:
    values = config["tail"]
    scan = tail_scan(
        values["alpha_tilde_a2"],
        values["aperture"],
        mass=values["mass"],
        spread_time=values["spread_time"],
        query_time=values["query_time"],
        dim=values["dim"],
    )
    rows = [(row.alpha_tilde_a2, row.alpha_tilde, row.magnitude, scan.fit.slope) for row in [scan.whole, *scan.rows]]
    write_csv(pathlib.Path(args.out) / "tail.csv", ("alpha_tilde_a2", "alpha_tilde", "magnitude", "slope"), rows)
    print(f"slope {scan.fit.slope:.6f} (expected -0.5 within 10%), monotone {scan.monotone}")
    print(f"whole space |I| = {scan.whole.magnitude:.12e}, |ψ| = {scan.reference:.12e}")
    if not scan.fit.within():
        logger.error("Fitted decay slope %.6f is outside -0.5 ± 10%%", scan.fit.slope)
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "algebra-check": cmd_algebra_check,
    "run-eprb": cmd_run_eprb,
    "scan": cmd_scan,
    "dh-check": cmd_dh_check,
    "tail": cmd_tail,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evlab", description="Collapse-free measurement simulations.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="Run configuration (INI with dotted sections).")
    parser.add_argument("--out", default="evlab-out", help="Output directory.")
    parser.add_argument("--seed", type=int, default=None, help="Seed for fictitious wavefunction draws.")
    parser.add_argument("--backend", choices=[b.value for b in Backend], default=None)
    parser.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        config = RunConfig.from_path(args.config)
        if args.seed is not None:
            config["run"]["seed"] = args.seed
        if args.backend is not None:
            config["run"]["backend"] = args.backend
        return COMMANDS[args.command](config, args)
    except (ConfigError, ScenarioError) as error:
        logger.error("%s", error)
        return EXIT_CONFIG_ERROR
    except ConvergenceError as error:
        logger.error("%s", error)
        return EXIT_CHECK_FAILED
    except EvlabError as error:
        logger.error("%s", error)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
