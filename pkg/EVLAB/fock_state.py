r"""Sparse fermionic Fock states and normal-ordered operator terms.

A `SectorState` stores the configurations it touches as occupation bitmasks (bit `r` of a configuration is the
occupation of the mode with global rank `r`) together with one complex amplitude per configuration. The basis vector
of a configuration is the canonical product

    |{r1 < r2 < ... < rk}> = a†_{r1} a†_{r2} ... a†_{rk} |0>

so creating or annihilating mode `r` picks up the sign `(-1)^(number of occupied modes with rank < r)`.

Operations never mutate their inputs. Amplitudes whose magnitude falls below `Settings.prune_threshold` are dropped
after every operator application.

The module also provides the dense (full 2^n Fock space) matrices used to audit the algebra on small mode tables.
"""

from __future__ import annotations

import itertools
import logging
import typing
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from EVLAB.config import Settings
from EVLAB.exceptions import PreconditionError
from EVLAB.lattice import Lattice, ModeIndex, ModeTable, SpeciesSpec

if typing.TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

Smeared = Sequence[tuple[complex, ModeIndex]]
"""A linear combination `sum_k c_k a_{r_k}` (or of creators), given as `(c_k, mode_k)` pairs."""

_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)
_DENSE_MODE_LIMIT = 20


def _num_words(num_modes: int) -> int:
    return max(1, -(-num_modes // 64))


def _word_and_bit(rank: int) -> tuple[int, np.uint64]:
    return rank // 64, np.uint64(1) << np.uint64(rank % 64)


def _below_mask(rank: int, num_words: int) -> NDArray[np.uint64]:
    """Mask with every bit of rank lower than `rank` set."""
    mask = np.zeros(num_words, dtype=np.uint64)
    word, offset = divmod(rank, 64)
    mask[:word] = _ALL_ONES
    if offset:
        mask[word] = (np.uint64(1) << np.uint64(offset)) - np.uint64(1)
    return mask


def _range_mask(start: int, stop: int, num_words: int) -> NDArray[np.uint64]:
    """Mask with the bits of ranks in `[start, stop)` set."""
    return _below_mask(stop, num_words) & ~_below_mask(start, num_words)


def _parity(configs: NDArray[np.uint64], mask: NDArray[np.uint64]) -> NDArray[np.int64]:
    return np.bitwise_count(configs & mask).sum(axis=1, dtype=np.int64) & 1


def _unpack_bits(configs: NDArray[np.uint64], start: int, stop: int) -> NDArray[np.uint8]:
    """Occupation bits of ranks `[start, stop)` for every configuration, shape `(n, stop - start)`."""
    as_bytes = np.ascontiguousarray(configs).view(np.uint8).reshape(len(configs), -1)
    bits = np.unpackbits(as_bytes, axis=1, bitorder="little")
    return bits[:, start:stop]


def _merge(
    configs: NDArray[np.uint64], amplitudes: NDArray[np.complex128]
) -> tuple[NDArray[np.uint64], NDArray[np.complex128]]:
    """Sum the amplitudes of repeated configurations."""
    if len(configs) == 0:
        return configs, amplitudes
    if configs.shape[1] == 1:
        unique, inverse = np.unique(configs[:, 0], return_inverse=True)
        unique = unique[:, np.newaxis]
    else:
        unique, inverse = np.unique(configs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    merged = np.bincount(inverse, weights=amplitudes.real, minlength=len(unique)) + 1j * np.bincount(
        inverse, weights=amplitudes.imag, minlength=len(unique)
    )
    return unique, merged


class SectorState:
    """A sparse state of the fermionic Fock space of a `ModeTable`.

    Args:
        table (ModeTable): The mode table fixing the canonical order.
        configs (NDArray[np.uint64]): Occupation bitmasks, shape `(n, num_words)`.
        amplitudes (NDArray[np.complex128]): One amplitude per configuration.
        merge (bool, optional): Whether repeated configurations must be summed. Defaults to False.
    """

    __slots__ = ("table", "configs", "amplitudes", "norm_sq")

    def __init__(
        self,
        table: ModeTable,
        configs: NDArray[np.uint64],
        amplitudes: NDArray[np.complex128],
        merge: bool = False,
    ):
        configs = np.asarray(configs, dtype=np.uint64).reshape(-1, _num_words(len(table)))
        amplitudes = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        if merge:
            configs, amplitudes = _merge(configs, amplitudes)
        keep = np.abs(amplitudes) > Settings.prune_threshold
        if not np.all(keep):
            configs, amplitudes = configs[keep], amplitudes[keep]
        self.table = table
        self.configs = configs
        self.amplitudes = amplitudes
        self.norm_sq = float(np.sum(np.abs(amplitudes) ** 2))

    # ------------------------------------------------------------------ construction

    @classmethod
    def zero(cls, table: ModeTable) -> SectorState:
        return cls(table, np.zeros((0, _num_words(len(table))), dtype=np.uint64), np.zeros(0, dtype=complex))

    @classmethod
    def vacuum(cls, table: ModeTable) -> SectorState:
        """The Fock vacuum `|0>`."""
        return cls(table, np.zeros((1, _num_words(len(table))), dtype=np.uint64), np.ones(1, dtype=complex))

    @classmethod
    def from_configuration(cls, table: ModeTable, ranks: Iterable[int], amplitude: complex = 1.0) -> SectorState:
        """The canonical basis vector of a set of occupied ranks, times `amplitude`."""
        config = np.zeros((1, _num_words(len(table))), dtype=np.uint64)
        for rank in set(ranks):
            word, bit = _word_and_bit(rank)
            config[0, word] |= bit
        return cls(table, config, np.array([amplitude], dtype=complex))

    @classmethod
    def from_creators(cls, table: ModeTable, creators: Sequence[Smeared]) -> SectorState:
        """The state `A†_1 A†_2 ... A†_k |0>` for smeared creators `A†_j = sum c a†`."""
        state = cls.vacuum(table)
        for smeared in reversed(creators):
            state = apply_smeared_creation(state, smeared)
        return state

    @classmethod
    def from_dense(cls, table: ModeTable, vector: NDArray[np.complex128]) -> SectorState:
        """Inverse of `to_dense`."""
        vector = np.asarray(vector, dtype=complex)
        if len(vector) != 1 << len(table):
            raise PreconditionError(f"Dense vector length {len(vector)} does not match {len(table)} modes.")
        indices = np.flatnonzero(np.abs(vector) > Settings.prune_threshold)
        configs = np.zeros((len(indices), _num_words(len(table))), dtype=np.uint64)
        configs[:, 0] = indices.astype(np.uint64)
        return cls(table, configs, vector[indices])

    # ------------------------------------------------------------------ arithmetic

    def __len__(self) -> int:
        return len(self.amplitudes)

    def __add__(self, other: SectorState) -> SectorState:
        return SectorState(
            self.table,
            np.concatenate([self.configs, other.configs]),
            np.concatenate([self.amplitudes, other.amplitudes]),
            merge=True,
        )

    def __sub__(self, other: SectorState) -> SectorState:
        return self + (-1.0) * other

    def __mul__(self, factor: complex) -> SectorState:
        return SectorState(self.table, self.configs, self.amplitudes * factor)

    __rmul__ = __mul__

    def __neg__(self) -> SectorState:
        return self * -1.0

    def __truediv__(self, factor: complex) -> SectorState:
        return self * (1.0 / factor)

    @classmethod
    def sum(cls, table: ModeTable, states: Sequence[SectorState]) -> SectorState:
        """Sum of many states, merged once."""
        if not states:
            return cls.zero(table)
        return cls(
            table,
            np.concatenate([state.configs for state in states]),
            np.concatenate([state.amplitudes for state in states]),
            merge=True,
        )

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq))

    def normalized(self) -> SectorState:
        if self.norm_sq == 0.0:
            raise PreconditionError("Cannot normalize the zero state.")
        return self / self.norm()

    def inner(self, other: SectorState) -> complex:
        """The inner product `<self|other>`."""
        if len(self) == 0 or len(other) == 0:
            return 0j
        configs = np.concatenate([self.configs, other.configs])
        if configs.shape[1] == 1:
            _, inverse = np.unique(configs[:, 0], return_inverse=True)
        else:
            _, inverse = np.unique(configs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        size = int(inverse.max()) + 1
        left = np.zeros(size, dtype=complex)
        right = np.zeros(size, dtype=complex)
        left[inverse[: len(self)]] = self.amplitudes
        right[inverse[len(self) :]] = other.amplitudes
        return complex(np.vdot(left, right))

    # ------------------------------------------------------------------ inspection

    def configurations(self) -> list[tuple[int, ...]]:
        """The occupied ranks of every stored configuration, ascending."""
        bits = _unpack_bits(self.configs, 0, len(self.table))
        return [tuple(int(rank) for rank in np.flatnonzero(row)) for row in bits]

    def amplitude_of(self, ranks: Iterable[int]) -> complex:
        """Amplitude of the canonical basis vector of `ranks`."""
        target = SectorState.from_configuration(self.table, ranks).configs[0]
        match = np.flatnonzero(np.all(self.configs == target, axis=1))
        return complex(self.amplitudes[match[0]]) if len(match) else 0j

    def species_counts(self) -> dict[str, NDArray[np.int64]]:
        """Number of quanta of every species in every configuration."""
        words = self.configs.shape[1]
        counts = {}
        for spec in self.table.species:
            block = self.table.species_slice(spec.id)
            mask = _range_mask(block.start, block.stop, words)
            counts[spec.id] = np.bitwise_count(self.configs & mask).sum(axis=1, dtype=np.int64)
        return counts

    @property
    def occupations(self) -> dict[str, int] | None:
        """Quantum count per species, or None when the configurations do not agree (a multi-sector state)."""
        result = {}
        for species_id, counts in self.species_counts().items():
            if len(counts) == 0:
                return None
            if np.any(counts != counts[0]):
                return None
            result[species_id] = int(counts[0])
        return result

    def mode_density(self) -> NDArray[np.float64]:
        """Expectation `<a†_r a_r>` of every mode, indexed by global rank."""
        bits = _unpack_bits(self.configs, 0, len(self.table)).astype(np.float64)
        return np.abs(self.amplitudes) ** 2 @ bits

    def expectation(self, terms: Sequence[OperatorTerm]) -> complex:
        """Expectation `<self| sum terms |self>` (not divided by the norm)."""
        return self.inner(apply_terms(self, terms))

    def to_dense(self) -> NDArray[np.complex128]:
        """Full Fock-space vector; bit `r` of the basis index is the occupation of rank `r`."""
        num_modes = len(self.table)
        if num_modes > _DENSE_MODE_LIMIT:
            raise PreconditionError(f"Dense vectors are limited to {_DENSE_MODE_LIMIT} modes, got {num_modes}.")
        vector = np.zeros(1 << num_modes, dtype=complex)
        vector[self.configs[:, 0].astype(np.int64)] = self.amplitudes
        return vector

    def apply_one_body(self, species_id: str, matrix: NDArray[np.complex128]) -> SectorState:
        """Apply the Fock-space lift of a one-body matrix acting on one species.

        The matrix acts on the one-body index `internal_position * num_cells + cell` of the species. Configurations
        with no quantum of the species are left as they are, which is the action of the exponential of any
        number-conserving one-body operator; a plain one-body operator must therefore be applied with
        `apply_terms` instead.

        Args:
            species_id (str): The species the matrix acts on.
            matrix (NDArray[np.complex128]): Square matrix of size `internal_dim * num_cells`, typically unitary.

        Returns:
            SectorState: The transformed state.
        """
        block = self.table.species_slice(species_id)
        size = block.stop - block.start
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (size, size):
            raise PreconditionError(f"One-body matrix for {species_id} must be {size}x{size}.")
        words = self.configs.shape[1]
        counts = np.bitwise_count(self.configs & _range_mask(block.start, block.stop, words)).sum(axis=1)
        parts = [SectorState(self.table, self.configs[counts == 0], self.amplitudes[counts == 0])]

        single = counts == 1
        if np.any(single):
            configs = self.configs[single]
            local = np.argmax(_unpack_bits(configs, block.start, block.stop), axis=1)
            rest = configs & ~_range_mask(block.start, block.stop, words)
            if words == 1:
                groups, inverse = np.unique(rest[:, 0], return_inverse=True)
                groups = groups[:, np.newaxis]
            else:
                groups, inverse = np.unique(rest, axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            coefficients = np.zeros((len(groups), size), dtype=complex)
            coefficients[inverse, local] = self.amplitudes[single]
            coefficients = coefficients @ matrix.T
            group_index, target = np.nonzero(np.abs(coefficients) > Settings.prune_threshold)
            new_configs = groups[group_index].copy()
            ranks = block.start + target
            new_configs[np.arange(len(ranks)), ranks // 64] |= np.left_shift(
                np.uint64(1), (ranks % 64).astype(np.uint64)
            )
            parts.append(SectorState(self.table, new_configs, coefficients[group_index, target]))

        multiple = counts > 1
        if np.any(multiple):
            logger.debug("apply_one_body: %d configurations hold several %s quanta.", multiple.sum(), species_id)
            columns = {
                rank: [(matrix[i, rank - block.start], self.table.mode(block.start + i)) for i in range(size)]
                for rank in range(block.start, block.stop)
            }
            for config, amplitude in zip(
                SectorState(self.table, self.configs[multiple], self.amplitudes[multiple]).configurations(),
                self.amplitudes[multiple],
            ):
                creators = [columns[rank] if rank in columns else [(1.0, self.table.mode(rank))] for rank in config]
                parts.append(SectorState.from_creators(self.table, creators) * amplitude)
        return SectorState.sum(self.table, parts)

    def __repr__(self) -> str:
        return f"SectorState(configs={len(self)}, norm_sq={self.norm_sq:.12g}, modes={len(self.table)})"


@dataclass(frozen=True)
class OperatorTerm:
    """A normal-ordered monomial `coefficient * a†_{c1} a†_{c2} ... a_{a1} a_{a2} ...`.

    Attributes:
        coefficient (complex): The prefactor.
        creators (tuple[ModeIndex, ...]): Creation operators, left to right.
        annihilators (tuple[ModeIndex, ...]): Annihilation operators, left to right.
    """

    coefficient: complex = 1.0
    creators: tuple[ModeIndex, ...] = field(default=())
    annihilators: tuple[ModeIndex, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "creators", tuple(self.creators))
        object.__setattr__(self, "annihilators", tuple(self.annihilators))
        for name, modes in (("creators", self.creators), ("annihilators", self.annihilators)):
            ranks = [mode.global_rank for mode in modes]
            if len(set(ranks)) != len(ranks):
                raise PreconditionError(f"Repeated mode among the {name} of a term: {ranks}.")

    def adjoint(self) -> OperatorTerm:
        """Hermitian conjugate, again normal-ordered."""
        return OperatorTerm(
            complex(np.conj(self.coefficient)),
            tuple(reversed(self.annihilators)),
            tuple(reversed(self.creators)),
        )

    def scaled(self, factor: complex) -> OperatorTerm:
        return OperatorTerm(self.coefficient * factor, self.creators, self.annihilators)

    @property
    def modes(self) -> tuple[ModeIndex, ...]:
        return self.creators + self.annihilators

    def species(self) -> set[str]:
        """Species touched by the term."""
        return {mode.species for mode in self.modes}


def apply_creation(state: SectorState, mode: ModeIndex) -> SectorState:
    """Return `a†_mode |state>`."""
    word, bit = _word_and_bit(mode.global_rank)
    free = (state.configs[:, word] & bit) == 0
    configs = state.configs[free].copy()
    sign = 1 - 2 * _parity(configs, _below_mask(mode.global_rank, configs.shape[1]))
    configs[:, word] |= bit
    return SectorState(state.table, configs, state.amplitudes[free] * sign)


def apply_annihilation(state: SectorState, mode: ModeIndex) -> SectorState:
    """Return `a_mode |state>`."""
    word, bit = _word_and_bit(mode.global_rank)
    occupied = (state.configs[:, word] & bit) != 0
    configs = state.configs[occupied].copy()
    sign = 1 - 2 * _parity(configs, _below_mask(mode.global_rank, configs.shape[1]))
    configs[:, word] &= ~bit
    return SectorState(state.table, configs, state.amplitudes[occupied] * sign)


def apply_term(state: SectorState, term: OperatorTerm) -> SectorState:
    """Apply one normal-ordered term: annihilators right to left, then creators right to left."""
    result = state
    for mode in reversed(term.annihilators):
        result = apply_annihilation(result, mode)
        if len(result) == 0:
            return result
    for mode in reversed(term.creators):
        result = apply_creation(result, mode)
        if len(result) == 0:
            return result
    return result * term.coefficient


def apply_terms(state: SectorState, terms: Sequence[OperatorTerm]) -> SectorState:
    """Apply the sum of `terms` to `state`."""
    return SectorState.sum(state.table, [apply_term(state, term) for term in terms])


def apply_smeared_creation(state: SectorState, smeared: Smeared) -> SectorState:
    """Apply `sum_k c_k a†_{r_k}` to `state`."""
    return SectorState.sum(state.table, [apply_creation(state, mode) * c for c, mode in smeared])


def apply_smeared_annihilation(state: SectorState, smeared: Smeared) -> SectorState:
    """Apply `sum_k c_k a_{r_k}` to `state` (the coefficients are used as given, not conjugated)."""
    return SectorState.sum(state.table, [apply_annihilation(state, mode) * c for c, mode in smeared])


def term_product(left: OperatorTerm, right: OperatorTerm) -> OperatorTerm:
    """Normal-ordered product `left * right` of two terms acting on disjoint modes.

    Moving the creators of `right` past the annihilators of `left` gives the sign
    `(-1)^(len(left.annihilators) * len(right.creators))`.

    Raises:
        PreconditionError: If the terms share a mode (a contraction would be needed).
    """
    left_ranks = {mode.global_rank for mode in left.modes}
    right_ranks = {mode.global_rank for mode in right.modes}
    if left_ranks & right_ranks:
        raise PreconditionError("term_product needs terms on disjoint modes.")
    sign = -1 if (len(left.annihilators) * len(right.creators)) % 2 else 1
    return OperatorTerm(
        left.coefficient * right.coefficient * sign,
        left.creators + right.creators,
        left.annihilators + right.annihilators,
    )


# ---------------------------------------------------------------------- dense Fock matrices


def creation_matrix(rank: int, num_modes: int, dtype: type = np.int64) -> sparse.csr_matrix:
    """Dense-regime matrix of `a†_rank` over the full `2^num_modes` Fock space (CSR, integer entries)."""
    dim = 1 << num_modes
    basis = np.arange(dim, dtype=np.int64)
    source = basis[((basis >> rank) & 1) == 0]
    target = source | (1 << rank)
    sign = 1 - 2 * (np.bitwise_count((source & ((1 << rank) - 1)).astype(np.uint64)).astype(np.int64) & 1)
    return sparse.csr_matrix((sign.astype(dtype), (target, source)), shape=(dim, dim))


MatrixFactory = Callable[[int, int], sparse.csr_matrix]


def terms_to_matrix(
    terms: Sequence[OperatorTerm], num_modes: int, factory: MatrixFactory = creation_matrix
) -> sparse.csr_matrix:
    """Sum of `terms` as a sparse matrix over the full Fock space of `num_modes` modes."""
    if num_modes > _DENSE_MODE_LIMIT:
        raise PreconditionError(f"Dense matrices are limited to {_DENSE_MODE_LIMIT} modes, got {num_modes}.")
    dim = 1 << num_modes
    cache: dict[int, sparse.csr_matrix] = {}

    def creator(rank: int) -> sparse.csr_matrix:
        if rank not in cache:
            cache[rank] = factory(rank, num_modes).astype(complex)
        return cache[rank]

    total = sparse.csr_matrix((dim, dim), dtype=complex)
    for term in terms:
        product = sparse.identity(dim, dtype=complex, format="csr") * term.coefficient
        for mode in term.creators:
            product = product @ creator(mode.global_rank)
        for mode in term.annihilators:
            product = product @ creator(mode.global_rank).T
        total = total + product
    return total.tocsr()


def hermiticity_defect(matrix: sparse.spmatrix) -> float:
    """Largest entry of `|M - M†|`; zero for an exactly Hermitian matrix."""
    difference = (matrix - matrix.conj().T).tocsr()
    difference.eliminate_zeros()
    return float(np.max(np.abs(difference.data))) if difference.nnz else 0.0


@dataclass
class CarReport:
    """Outcome of a canonical-anticommutation-relation audit.

    Attributes:
        num_modes (int): Number of modes audited.
        pairs_checked (int): Number of `(r, s)` pairs evaluated.
        violations (list[str]): One human-readable line per violated identity.
    """

    num_modes: int
    pairs_checked: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def check_car(
    lattice: Lattice,
    species: Sequence[SpeciesSpec],
    trials: int | None = None,
    factory: MatrixFactory = creation_matrix,
    seed: int = 0,
) -> CarReport:
    """Audit `{a_r, a†_s} = δ_rs` and `{a_r, a_s} = 0` with exact integer matrices.

    Args:
        lattice (Lattice): The lattice.
        species (Sequence[SpeciesSpec]): The species; fictitious ones are included like any other.
        trials (int | None, optional): Number of randomly drawn `(r, s)` pairs; None (or at least the number of
            pairs) audits every pair. Defaults to None.
        factory (MatrixFactory, optional): Builder of creation matrices; replaceable to audit other conventions.
        seed (int, optional): Seed of the pair sampler. Defaults to 0.

    Raises:
        PreconditionError: If the mode table has more than 16 modes.

    Returns:
        CarReport: The audit report.
    """
    table = ModeTable(lattice, species)
    num_modes = len(table)
    if num_modes > 16:
        raise PreconditionError(f"check_car needs at most 16 modes, got {num_modes}.")
    dim = 1 << num_modes
    creators = [factory(rank, num_modes).astype(np.int64).tocsr() for rank in range(num_modes)]
    identity = sparse.identity(dim, dtype=np.int64, format="csr")
    pairs = list(itertools.product(range(num_modes), repeat=2))
    if trials is not None and trials < len(pairs):
        rng = np.random.default_rng(seed)
        pairs = [pairs[i] for i in rng.choice(len(pairs), size=trials, replace=False)]

    report = CarReport(num_modes=num_modes)
    for r, s in pairs:
        a_r, a_s = creators[r].T, creators[s].T
        mixed = a_r @ creators[s] + creators[s] @ a_r - (identity if r == s else 0 * identity)
        pure = a_r @ a_s + a_s @ a_r
        for name, matrix in (("{a, a†}", mixed), ("{a, a}", pure)):
            matrix = matrix.tocsr()
            matrix.eliminate_zeros()
            if matrix.nnz:
                report.violations.append(f"{name} violated for {table.mode(r)} and {table.mode(s)}")
        report.pairs_checked += 1
    if report.violations:
        logger.warning("CAR audit found %d violations; first: %s", len(report.violations), report.violations[0])
    return report
