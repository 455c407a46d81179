"""Extension of numpy functions."""

from functools import reduce

import numpy as np


def tensor_product(*arrays: np.ndarray) -> np.ndarray:
    """Kronecker product of a sequence of square matrices or vectors, left to right."""
    return reduce(np.kron, arrays)


def inverse_tensor(array: np.ndarray) -> np.ndarray:
    """Reverse the qubit order of a register vector or square matrix.

    Example:
        input  = A ⊗ B ⊗ C ,
        output = C ⊗ B ⊗ A ,
        (A, B, C are 2x2 matrices or length-2 vectors)

    Args:
        array (ndarray): A vector of length 2^n or a 2^n x 2^n matrix.

    Raises:
        ValueError: If the input is neither such a vector nor such a matrix.

    Returns:
        ndarray: The array with its qubit order reversed.
    """
    array = np.asarray(array)
    size = array.shape[0]
    num_qubits = size.bit_length() - 1
    if size != 1 << num_qubits:
        raise ValueError("Only accept matrix/vector with length of 2^n.")
    if array.ndim == 1:
        return array.reshape((2,) * num_qubits).transpose(tuple(reversed(range(num_qubits)))).reshape(size)
    if array.ndim != 2 or array.shape[1] != size:
        raise ValueError("Only accept square matrix or vector.")
    reverse = tuple(reversed(range(num_qubits)))
    axes = reverse + tuple(num_qubits + axis for axis in reverse)
    return array.reshape((2,) * (2 * num_qubits)).transpose(axes).reshape(size, size)
