import json
import math

import pytest

from EVLAB.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    RunConfig,
    algebra_checks,
    main,
    write_csv,
)
from EVLAB.exceptions import ConfigError
from EVLAB.fock_state import creation_matrix
from EVLAB.scenario import Backend, ScenarioKind

CONFIG = """
[run]
kind = single_observer
backend = analytic
seed = 4
t23 = 30.5

[scenario]
theta = 1.2
spin = 0.6, 0.8j

[scenario.axes.n1]
theta = 0.3
phi = 1.0

[layout]
lattice_momentum = 0.72
"""


def test_defaults():
    """An empty configuration is the default EPRB run on the analytic backend."""
    config = RunConfig.from_text("")
    assert config.kind is ScenarioKind.EPRB
    assert config.backend is Backend.ANALYTIC
    assert config["scan"]["points"] == 13
    assert config.explicit == set()


def test_parse_configuration():
    """Values are parsed per key and feed the scenario."""
    config = RunConfig.from_text(CONFIG)
    assert config.explicit == {"run", "scenario", "scenario.axes.n1", "layout"}
    assert config["scenario"]["spin"] == (0.6, 0.8j)
    assert config["layout"]["lattice_momentum"] == 0.72
    scenario = config.scenario()
    assert scenario.kind is ScenarioKind.SINGLE_OBSERVER
    assert math.isclose(scenario.axes[1].theta, 0.3)
    assert math.isclose(scenario.plan.theta, 1.2)
    times = config.query_times(scenario)
    assert times["t23"] == 30.5
    assert times["t45"] == scenario.query_times()["t45"]


def test_normalized_text_round_trip():
    """The normalized text parses back to the same values."""
    config = RunConfig.from_text(CONFIG)
    assert RunConfig.from_text(config.to_text()).values == config.values
    assert RunConfig.from_text(RunConfig().to_text()).values == RunConfig().values


@pytest.mark.parametrize(
    ("text", "key_path"),
    [
        ("[run]\ncolour = blue\n", "run.colour"),
        ("[plot]\nx = 1\n", "plot"),
        ("[run]\nbackend = quantum\n", "run.backend"),
        ("[scan]\npoints = many\n", "scan.points"),
        ("[scenario.axes.n1]\ntheta = 0.5\n", "scenario.axes.n1.phi"),
        ("[scenario.axes.n2]\nphi = 0.5\n", "scenario.axes.n2.theta"),
        ("no section header\n", "<file>"),
    ],
)
def test_config_errors_name_the_key(text, key_path):
    """Malformed configurations are rejected with the dotted path of the offending key."""
    with pytest.raises(ConfigError) as error:
        RunConfig.from_text(text)
    assert error.value.key_path == key_path


def test_invalid_scenario_values():
    """Out-of-range physics parameters surface as configuration errors."""
    with pytest.raises(ConfigError) as error:
        RunConfig.from_text("[scenario.axes.n2]\ntheta = 4.0\nphi = 0.0\n").scenario()
    assert error.value.key_path == "scenario.axes.n2.theta"
    with pytest.raises(ConfigError) as error:
        RunConfig.from_text("[layout]\nlattice_momentum = 0.9\n").scenario()
    assert error.value.key_path == "layout"
    with pytest.raises(ConfigError):
        RunConfig.from_path("/nonexistent/evlab.ini")


def test_algebra_checks_pass():
    """The default algebra audit passes every line."""
    lines = algebra_checks(RunConfig())
    assert [line.name for line in lines] == [
        "car",
        "hermitian_free",
        "hermitian_measurement",
        "hermitian_comparator",
        "unitary_schedule",
    ]
    assert all(line.passed for line in lines), [str(line) for line in lines]


def test_algebra_checks_catch_sign_bug():
    """Dropping the Jordan-Wigner sign fails the CAR line and names the offending pair."""
    def unsigned(rank, num_modes):
        return abs(creation_matrix(rank, num_modes))

    car = algebra_checks(RunConfig(), factory=unsigned)[0]
    assert not car.passed
    assert "S1" in car.detail
    assert str(car).startswith("FAIL")


def test_write_csv(tmp_path):
    """CSV cells carry 17 significant digits and Unix line endings."""
    path = tmp_path / "nested" / "table.csv"
    write_csv(path, ("a", "b", "c"), [(0.1, None, "x"), (2, 1e-20, "y")])
    assert path.read_bytes() == b"a,b,c\n0.10000000000000001,,x\n2,1e-20,y\n"


def test_main_algebra_check(tmp_path):
    """A passing audit exits with 0."""
    assert main(["algebra-check", "--quiet", "--out", str(tmp_path)]) == EXIT_OK


def test_main_run_eprb(tmp_path):
    """run-eprb writes the record and the densities."""
    config = tmp_path / "run.ini"
    config.write_text("[run]\nkind = eprb\n\n[scenario]\nbeta = 0.2\n", encoding="utf-8")
    out = tmp_path / "out"
    code = main(["run-eprb", "--config", str(config), "--out", str(out), "--seed", "9", "--backend", "analytic"])
    assert code == EXIT_OK
    record = json.loads((out / "record.json").read_text(encoding="utf-8"))
    assert record["kind"] == "eprb"
    assert record["metadata"]["seed"] == 9
    assert math.isclose(record["predictions"]["p_c1_exact"], math.sin(0.2) ** 2 / 4)
    lines = (out / "densities.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "query,time,species,internal,cell,x,density,backend"
    assert len(lines) > 1


def test_main_scan(tmp_path):
    """scan writes one row per angle."""
    config = tmp_path / "scan.ini"
    config.write_text("[scan]\npoints = 5\n", encoding="utf-8")
    assert main(["scan", "--config", str(config), "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    lines = (tmp_path / "scan.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "theta12_rad,p_c1,p_c1_normalized,backend,beta"
    assert len(lines) == 6
    last = lines[-1].split(",")
    assert len(last) == 5
    assert float(last[2]) == pytest.approx(1.0, abs=1e-6)


def test_main_dh_check(tmp_path):
    """dh-check on the single-observer toy passes."""
    assert main(["dh-check", "--quiet", "--out", str(tmp_path), "--seed", "2"]) == EXIT_OK


def test_main_configuration_errors(tmp_path):
    """Configuration problems exit with 2."""
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\ncolour = blue\n", encoding="utf-8")
    assert main(["run-eprb", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG_ERROR
    assert main(["run-eprb", "--config", str(tmp_path / "missing.ini"), "--quiet"]) == EXIT_CONFIG_ERROR
    single = tmp_path / "single.ini"
    single.write_text("[run]\nkind = single_observer\n", encoding="utf-8")
    assert main(["scan", "--config", str(single), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG_ERROR


@pytest.mark.slow
def test_main_tail(tmp_path):
    """tail writes the whole-space row and one row per grid point."""
    assert main(["tail", "--quiet", "--out", str(tmp_path)]) in (EXIT_OK, EXIT_CHECK_FAILED)
    lines = (tmp_path / "tail.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "alpha_tilde_a2,alpha_tilde,magnitude,slope"
    assert len(lines) == 6
