"""Utils module for the EVLAB package.

Modules:
    ket: Contains the Ket class managing the register notation of the massive narrow-wavepacket backend.
    np_extension: Contains Kronecker-product helpers and the qubit-order reversal used by the register wrappers.
"""

from .ket import Ket
from .np_extension import inverse_tensor, tensor_product

__all__ = ["Ket", "inverse_tensor", "tensor_product"]
