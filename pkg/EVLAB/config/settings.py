"""Typed access to the numerical settings of ``config.ini``.

The `[numerics]` and `[interpretation]` sections are read once, when the `Settings` class is created.
Entries that cannot be parsed, or that fall outside their admissible range, are reported and replaced by
the built-in default.
"""

import logging
from collections.abc import Callable

from EVLAB.config.config import CONFIG_PARSER

logger = logging.getLogger(__name__)

# (section, key) -> (default, parser, validity check)
_SCHEMA: dict[tuple[str, str], tuple[float | int, Callable[[str], float | int], Callable[[float], bool]]] = {
    ("numerics", "prune_threshold"): (1e-14, float, lambda v: 0.0 <= v < 1e-3),
    ("numerics", "taylor_tolerance"): (1e-15, float, lambda v: 0.0 < v < 1e-3),
    ("numerics", "max_taylor_terms"): (80, int, lambda v: v >= 4),
    ("numerics", "max_squarings"): (20, int, lambda v: 0 <= v <= 30),
    ("numerics", "power_iterations"): (12, int, lambda v: v >= 1),
    ("interpretation", "epsilon"): (1e-6, float, lambda v: v > 0.0),
}


class _SettingsMeta(type):
    """Metaclass to load and validate the numerical settings from the config file."""

    def __new__(cls, name, bases, namespace):
        """Create the settings class with every schema entry resolved."""
        values: dict[str, float | int] = {}
        for (section, key), (default, parse, valid) in _SCHEMA.items():
            values[key] = default
            if not CONFIG_PARSER.has_option(section, key):
                continue
            raw = CONFIG_PARSER[section][key]
            try:
                value = parse(raw)
            except ValueError:
                logger.warning("Invalid value [%s] for %s.%s in config.ini, using %s.", raw, section, key, default)
                continue
            if not valid(value):
                logger.warning("Out-of-range value [%s] for %s.%s in config.ini, using %s.", raw, section, key, default)
                continue
            values[key] = value
        namespace["_values"] = values
        return super().__new__(cls, name, bases, namespace)

    @property
    def prune_threshold(cls) -> float:
        return float(cls._values["prune_threshold"])

    @property
    def taylor_tolerance(cls) -> float:
        return float(cls._values["taylor_tolerance"])

    @property
    def max_taylor_terms(cls) -> int:
        return int(cls._values["max_taylor_terms"])

    @property
    def max_squarings(cls) -> int:
        return int(cls._values["max_squarings"])

    @property
    def power_iterations(cls) -> int:
        return int(cls._values["power_iterations"])

    @property
    def epsilon(cls) -> float:
        return float(cls._values["epsilon"])


class Settings(metaclass=_SettingsMeta):
    """Numerical settings resolved from ``~/.EVLAB/config.ini``."""
