"""Exception hierarchy for the EVLAB package.

Every error raised by the library derives from `EvlabError`, which itself extends Qiskit's
`QiskitError` so that code written against the internal-register wrappers keeps catching a single
exception family.
"""

from __future__ import annotations

from qiskit.exceptions import QiskitError


class EvlabError(QiskitError):
    """Base class for all EVLAB errors."""


class PreconditionError(EvlabError):
    """A documented precondition of an operation does not hold."""


class ConvergenceError(EvlabError):
    """An iterative numerical method did not reach its tolerance.

    Attributes:
        residual (float): The last residual (or error estimate) reached before giving up.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ScenarioError(EvlabError):
    """A scenario violates one of the S1-S4 conditions or the alignment requirement.

    Attributes:
        condition (str): Tag of the violated condition, e.g. ``"S2"`` or ``"alignment"``.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(f"[{condition}] {message}")
        self.condition = condition


class ConfigError(EvlabError):
    """A run configuration is malformed.

    Attributes:
        key_path (str): Dotted path of the offending key, e.g. ``"scenario.axes.n1.theta"``.
    """

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path
