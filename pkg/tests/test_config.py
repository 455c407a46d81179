import configparser
import logging

import pytest

from EVLAB.config import Settings, worker_count
from EVLAB.config.settings import _SettingsMeta
from EVLAB.utils import Ket
from EVLAB.utils.ket import _ConfigMeta


def _parser(sections: dict[str, dict[str, str]]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_dict(sections)
    return parser


@pytest.mark.parametrize(("raw", "expected"), [("3", 3), ("1", 1)])
def test_worker_count_explicit(monkeypatch, raw, expected):
    """An explicit thread count is used as given."""
    monkeypatch.setenv("EVERETT_LAB_THREADS", raw)
    assert worker_count() == expected


@pytest.mark.parametrize("raw", ["0", "", "abc", "-2"])
def test_worker_count_automatic(monkeypatch, raw):
    """Zero, empty and unparsable values select between one and four workers."""
    monkeypatch.setenv("EVERETT_LAB_THREADS", raw)
    assert 1 <= worker_count() <= 4


def test_worker_count_unset(monkeypatch):
    """An unset variable is automatic."""
    monkeypatch.delenv("EVERETT_LAB_THREADS", raising=False)
    assert 1 <= worker_count() <= 4


def test_settings_values():
    """The resolved settings lie in their admissible ranges."""
    assert 0.0 <= Settings.prune_threshold < 1e-3
    assert Settings.max_taylor_terms >= 4
    assert Settings.epsilon > 0.0


def test_settings_fallback(monkeypatch, caplog):
    """Unparsable and out-of-range entries fall back to the defaults with a warning."""
    parser = _parser(
        {
            "numerics": {
                "prune_threshold": "tiny",
                "max_taylor_terms": "2",
                "power_iterations": "7",
                "max_squarings": "64",
            },
            "interpretation": {"epsilon": "-1"},
        }
    )
    monkeypatch.setattr("EVLAB.config.settings.CONFIG_PARSER", parser)
    with caplog.at_level(logging.WARNING, logger="EVLAB.config.settings"):

        class Resolved(metaclass=_SettingsMeta):
            pass

    assert Resolved.prune_threshold == 1e-14
    assert Resolved.max_taylor_terms == 80
    assert Resolved.epsilon == 1e-6
    assert Resolved.power_iterations == 7
    assert Resolved.max_squarings == 20
    assert len(caplog.records) == 4
    assert "prune_threshold" in caplog.text


def test_ket_labels_fall_back_on_clash(monkeypatch, caplog):
    """Clashing labels of one entity kind restore every default."""
    monkeypatch.setattr("EVLAB.utils.ket.CONFIG_PARSER", _parser({"ket": {"up": "x", "down": "x"}}))
    with caplog.at_level(logging.WARNING, logger="EVLAB.utils.ket"):

        class Resolved(metaclass=_ConfigMeta):
            pass

    assert (Resolved.up, Resolved.down, Resolved.unaware, Resolved.aware) == ("u", "d", "0", "1")
    assert "must differ" in caplog.text


def test_ket_ignores_invalid_labels(monkeypatch, caplog):
    """Unknown keys and multi-character labels are skipped."""
    monkeypatch.setattr("EVLAB.utils.ket.CONFIG_PARSER", _parser({"ket": {"sideways": "s", "aware": "yes"}}))
    with caplog.at_level(logging.WARNING, logger="EVLAB.utils.ket"):

        class Resolved(metaclass=_ConfigMeta):
            pass

    assert Resolved.aware == Ket.aware
    assert "sideways" in caplog.text
    assert "single character" in caplog.text
