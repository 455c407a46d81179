r"""Ket notation for the internal register of the massive narrow-wavepacket backend.

Every entity of the MN backend carries a two-level internal factor: systems a spin (labels 1 and 2),
observers and the comparator an awareness level (labels 0 and 1). A register state is written as a string
with one character per entity, e.g. ``"ud000"`` for S1 up, S2 down and all observers unaware.

Configurable notations (section ``[ket]`` of ``config.ini``):
- up: Default is "u" (spin label 1)
- down: Default is "d" (spin label 2)
- unaware: Default is "0" (awareness label 0)
- aware: Default is "1" (awareness label 1)

The spin and awareness alphabets may overlap, the entity kind decides how a character is read.
"""

import logging
import re

from EVLAB.config import CONFIG_PARSER

logger = logging.getLogger(__name__)


class _ConfigMeta(type):
    """Metaclass to load and store ket notations from the config file."""

    __up: str = "u"
    __down: str = "d"
    __unaware: str = "0"
    __aware: str = "1"

    def __new__(cls, name, bases, namespace):
        """Create a new instance of the metaclass and load the config settings."""
        section = CONFIG_PARSER["ket"] if CONFIG_PARSER.has_section("ket") else {}
        for ket in section:
            value = section[ket]
            if ket not in ("up", "down", "unaware", "aware"):
                logger.warning("Unknown ket label [%s] in config.ini; expected up, down, unaware or aware.", ket)
                continue
            if len(value) != 1:
                logger.warning("Ket label [%s] must be a single character, [%s] is ignored.", ket, value)
                continue
            setattr(cls, f"_ConfigMeta__{ket}", value)
        if cls.__up == cls.__down or cls.__unaware == cls.__aware:
            logger.warning("Ket labels of one entity kind must differ, falling back to the defaults.")
            cls.__up, cls.__down, cls.__unaware, cls.__aware = "u", "d", "0", "1"
        return super().__new__(cls, name, bases, namespace)

    @property
    def up(cls) -> str:
        return cls.__up

    @property
    def down(cls) -> str:
        return cls.__down

    @property
    def unaware(cls) -> str:
        return cls.__unaware

    @property
    def aware(cls) -> str:
        return cls.__aware


class Ket(metaclass=_ConfigMeta):
    """Class to store and check the ket notation of the internal register."""

    @classmethod
    def check_valid(cls, label: str, kinds: str) -> bool:
        """Check if a register label is valid for the given entity kinds.

        Args:
            label (str): The register label, one character per entity.
            kinds (str): One character per entity, ``"s"`` for a system and ``"o"`` for an observer.

        Returns:
            bool: True if every character belongs to the alphabet of its entity kind.
        """
        if len(label) != len(kinds):
            return False
        spin = "[" + re.escape(cls.up + cls.down) + "]"
        awareness = "[" + re.escape(cls.unaware + cls.aware) + "]"
        pattern = "".join(spin if kind == "s" else awareness for kind in kinds)
        return re.fullmatch(pattern, label) is not None

    @classmethod
    def to_qiskit_notation(cls, label: str, kinds: str) -> str:
        """Convert a register label to a Qiskit computational-basis label.

        Spin label 1 and awareness 0 map to ``"0"``, spin label 2 and awareness 1 map to ``"1"``.

        Args:
            label (str): The register label to convert.
            kinds (str): One character per entity, ``"s"`` for a system and ``"o"`` for an observer.

        Returns:
            str: The converted label, in the same (textbook) qubit order.
        """
        bits = []
        for char, kind in zip(label, kinds):
            if kind == "s":
                bits.append("0" if char == cls.up else "1")
            else:
                bits.append("0" if char == cls.unaware else "1")
        return "".join(bits)

    @classmethod
    def from_bits(cls, bits: str, kinds: str) -> str:
        """Convert a computational-basis label back to the register notation.

        Args:
            bits (str): A string of ``"0"``/``"1"`` characters in textbook qubit order.
            kinds (str): One character per entity, ``"s"`` for a system and ``"o"`` for an observer.

        Returns:
            str: The register label.
        """
        chars = []
        for bit, kind in zip(bits, kinds):
            if kind == "s":
                chars.append(cls.down if int(bit) else cls.up)
            else:
                chars.append(cls.aware if int(bit) else cls.unaware)
        return "".join(chars)
