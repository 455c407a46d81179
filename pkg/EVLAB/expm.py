"""Matrix-free action of operator exponentials.

`evolve_exp` computes `exp(scale * G) |state>` for a generator `G` given either as a list of `OperatorTerm` (applied to
a `SectorState`) or as a callable acting on any vector-like state (`SectorState`, `SectorTensor` or a numpy array).
The interval is cut into `2^k` sub-steps so that every sub-step has `|scale| * ||G|| <= 1/2`, and each sub-step is a
Taylor series truncated once the next term is negligible.
"""

from __future__ import annotations

import logging
import math
import typing
from collections.abc import Callable, Sequence
from functools import partial

import numpy as np
from scipy.sparse.linalg import expm_multiply

from EVLAB.config import Settings
from EVLAB.exceptions import ConvergenceError
from EVLAB.fock_state import OperatorTerm, apply_terms

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

State = typing.TypeVar("State")
Generator = Sequence[OperatorTerm] | Callable[[typing.Any], typing.Any]

_STEP_NORM = 0.5


def _norm(state) -> float:
    if hasattr(state, "norm"):
        return float(state.norm())
    return float(np.linalg.norm(state))


def _as_callable(generator: Generator) -> Callable:
    if callable(generator):
        return generator
    return partial(_apply_term_list, terms=tuple(generator))


def _apply_term_list(state, terms):
    return apply_terms(state, terms)


def estimate_norm(generator: Generator, state, iterations: int | None = None) -> float:
    """Power-iteration estimate of `||G||` on the cyclic subspace generated from `state`.

    Args:
        generator (Generator): The generator.
        state: Starting vector.
        iterations (int | None, optional): Number of power steps; defaults to `Settings.power_iterations`.

    Returns:
        float: The largest growth factor seen, a lower bound of the norm of `G` restricted to the subspace.
    """
    apply = _as_callable(generator)
    iterations = Settings.power_iterations if iterations is None else iterations
    norm = _norm(state)
    if norm == 0.0:
        return 0.0
    vector = state * (1.0 / norm)
    estimate = 0.0
    for _ in range(iterations):
        image = apply(vector)
        growth = _norm(image)
        if growth == 0.0:
            break
        estimate = max(estimate, growth)
        vector = image * (1.0 / growth)
    return estimate


def _taylor_step(apply: Callable, state, step: complex, tolerance: float, max_terms: int):
    result = state
    term = state
    for order in range(1, max_terms + 1):
        term = apply(term) * (step / order)
        term_norm = _norm(term)
        result = result + term
        if term_norm <= tolerance * max(_norm(result), 1.0):
            return result
    raise ConvergenceError(f"Taylor series did not converge within {max_terms} terms", term_norm)


def evolve_exp(
    state: State,
    generator: Generator,
    scale: complex,
    norm_bound: float | None = None,
    tolerance: float | None = None,
    max_terms: int | None = None,
) -> State:
    """Return `exp(scale * G) |state>`.

    Args:
        state (State): The state to evolve.
        generator (Generator): Term list or callable implementing `G`.
        scale (complex): The scalar multiplying `G`; `-1j * t / hbar` for a Hamiltonian.
        norm_bound (float | None, optional): Upper bound of `||G||` on the reachable subspace. Estimated by power
            iteration (with a safety factor of 2) when omitted.
        tolerance (float | None, optional): Relative truncation tolerance, defaults to `Settings.taylor_tolerance`.
        max_terms (int | None, optional): Taylor terms per sub-step, defaults to `Settings.max_taylor_terms`.

    Raises:
        ConvergenceError: If more than `2^Settings.max_squarings` sub-steps would be needed or a sub-step series does
            not converge.

    Returns:
        State: The evolved state.
    """
    if scale == 0 or (not callable(generator) and len(generator) == 0):
        return state
    apply = _as_callable(generator)
    tolerance = Settings.taylor_tolerance if tolerance is None else tolerance
    max_terms = Settings.max_taylor_terms if max_terms is None else max_terms
    bound = 2.0 * estimate_norm(apply, state) if norm_bound is None else norm_bound
    total = abs(scale) * bound
    if total == 0.0:
        return state
    squarings = max(0, math.ceil(math.log2(total / _STEP_NORM)))
    if squarings > Settings.max_squarings:
        raise ConvergenceError(f"evolve_exp would need 2^{squarings} sub-steps", total)
    steps = 1 << squarings
    logger.debug("evolve_exp: |scale|*||G|| = %.3g, %d sub-steps", total, steps)
    step = scale / steps
    for _ in range(steps):
        state = _taylor_step(apply, state, step, tolerance, max_terms)
    return state


def dense_expm_apply(matrix, vector: NDArray[np.complex128], scale: complex) -> NDArray[np.complex128]:
    """Reference action `exp(scale * M) v` for a sparse or dense matrix, via `scipy.sparse.linalg.expm_multiply`."""
    return expm_multiply(scale * matrix, np.asarray(vector, dtype=complex))
