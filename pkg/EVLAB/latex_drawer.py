r"""Convert internal-register states and matrices to LaTeX.

The formatted strings are wrapped in `IPython.display.Latex` so that notebooks render them; pass ``source=True`` to
get the LaTeX source instead. Coefficients are simplified with sympy (``1/√2`` rather than ``0.7071...``) and kets
use the labels configured in the ``[ket]`` section of ``config.ini``.
"""

from __future__ import annotations

import typing

import numpy as np
import sympy
from IPython.display import Latex

from EVLAB.utils import Ket

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

    from EVLAB.internal_state import InternalState


def matrix_to_latex(matrix: NDArray[np.complex128], source: bool = False) -> str | Latex:
    """Convert a matrix (or a vector, shown as a column) to a LaTeX ``bmatrix``.

    Args:
        matrix (NDArray[np.complex128]): The matrix to be converted.
        source (bool, optional): Whether to return the LaTeX source code. Defaults to False.

    Returns:
        str | Latex: The LaTeX source or its renderable wrapper.
    """
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[np.newaxis].T
    rows = [" & ".join(_num_to_latex(value) for value in row) for row in matrix]
    latex_code = R"$\begin{bmatrix}" + R"\\[6pt]".join(rows) + R"\end{bmatrix}$"
    if source:
        return latex_code
    return Latex(latex_code)


def state_to_latex(
    state: InternalState,
    show_entity_names: bool = True,
    output_length: int = 2,
    source: bool = False,
) -> str | Latex:
    """Convert an internal-register state to a sum of kets.

    Args:
        state (InternalState): The state to be converted.
        show_entity_names (bool, optional): Whether to subscript the kets with the entity names. Defaults to True.
        output_length (int, optional): Number of terms per line, defined as 2^output_length. Defaults to 2.
        source (bool, optional): Whether to return the LaTeX source code. Defaults to False.

    Returns:
        str | Latex: The LaTeX source or its renderable wrapper.
    """
    data = np.around(state.data, 15)
    nonzero = np.flatnonzero(data)
    terms = _coeffs_to_latex_terms(data[nonzero])
    subscript = ",".join(state.names) if show_entity_names else ""
    kets = []
    for term, index in zip(terms, nonzero):
        label = Ket.from_bits(format(int(index), f"0{state.num_of_qubit}b"), state.kinds)
        kets.append(Rf"{term}|\texttt{{{label}}}\rangle_{{{subscript}}}")
    per_line = 2**output_length
    lines = ["".join(kets[i : i + per_line]) for i in range(0, len(kets), per_line)]
    latex_code = R"$\begin{aligned}&" + R"\\ &".join(lines) + R"\end{aligned}$"
    if source:
        return latex_code
    return Latex(latex_code)


def _coeffs_to_latex_terms(coeffs: NDArray[np.complex128], decimals: int = 15) -> list[str]:
    """Format coefficients; the first non-zero term gets no leading + sign."""
    first_term = True
    terms = []
    for coeff in coeffs:
        term = _coeff_to_latex_ket(coeff, first_term, decimals)
        if term is not None:
            first_term = False
        terms.append(term or "")
    return terms


def _coeff_to_latex_ket(raw_value: complex, first_coeff: bool, decimals: int = 15) -> str | None:
    """Convert a complex coefficient to LaTeX code suitable for a ket expression.

    Args:
        raw_value (complex): The complex value to convert.
        first_coeff (bool): If True, generate LaTeX code for the first term in an expression.
        decimals (int, optional): Number of decimal places to round to. Defaults to 15.

    Returns:
        str | None: LaTeX code representing the coefficient or None if no term is required.
    """
    raw_value = np.around(raw_value, decimals=decimals)
    if np.abs(raw_value) == 0:
        return None

    # +(-0.5+0.5j) is written -(0.5-0.5j)
    real_value, imag_value = raw_value.real, raw_value.imag
    two_term_sign = "+"
    if np.sign(real_value) == -1 and imag_value != 0:
        two_term_sign = "-"
        raw_value = -raw_value

    value = sympy.nsimplify(raw_value, constants=(sympy.pi,), rational=False)
    latex_element = sympy.latex(value, full_prec=False)
    two_term = (real_value != 0 and imag_value != 0) or isinstance(value, sympy.Add)

    if latex_element == "1":
        return "" if first_coeff else "+"
    if latex_element == "-1":
        return "-"
    if two_term:
        if first_coeff and two_term_sign == "+":
            return f"({latex_element})"
        return f"{two_term_sign}({latex_element})"
    if not first_coeff and latex_element[0] != "-":
        return f"+{latex_element}"
    return latex_element


def _num_to_latex(raw_value: complex, decimals: int = 15) -> str:
    raw_value = np.around(raw_value, decimals=decimals)
    value = sympy.nsimplify(raw_value, constants=(sympy.pi,), rational=False)
    return sympy.latex(value, full_prec=False)
