import concurrent.futures
import dataclasses
import enum
import functools
import hashlib
import logging
import math
import pathlib
import struct
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import LatticeMismatchError, ResourceBoundError, TableFormatError
from .lattice import ORDERING_VERSION, LatticeSpec
from .types import IndexArray

_logger = logging.getLogger(__name__)

# Upper bound on candidate tuples scanned by the naive enumerators.
NAIVE_COST_BOUND = 2 * 10 ** 7
# Bytes a finished table may occupy in memory.
DEFAULT_MEMORY_BUDGET = 2 * 1024 ** 3

SignedTuple = Tuple[int, ...]


class TableKind(enum.Enum):
    # R(k, n): tuples of length 2n+1, grouped per target mode
    VECTOR_FIELD = 1
    # RES: tuples of length 2n+2 with zero alternating momentum and frequency, one group
    HAMILTONIAN = 2


class DivisorStatistics(NamedTuple):
    gap: Union[int, float]
    max_frequency: int


def alternating_signs(length: int) -> IndexArray:
    """+1 on odd positions (k_1, k_3, ...), -1 on even ones, as in the monomials."""
    return np.where(np.arange(length) % 2 == 0, 1, -1).astype(np.int64)


def _signed_sums(lattice: LatticeSpec, signs: IndexArray) -> Tuple[IndexArray, IndexArray]:
    """Alternating momentum and frequency sums of every index tuple, lexicographic order.

    Row r corresponds to the tuple `np.unravel_index(r, (N,) * len(signs))`.
    """
    modes = lattice.modes
    freqs = lattice.frequencies
    momentum = np.zeros((1, lattice.d), dtype=np.int64)
    frequency = np.zeros(1, dtype=np.int64)
    for sign in signs:
        momentum = (momentum[:, None, :] + sign * modes[None, :, :]).reshape(-1, lattice.d)
        frequency = (frequency[:, None] + sign * freqs[None, :]).reshape(-1)
    return momentum, frequency


def _unravel(rows: IndexArray, size: int, count: int) -> IndexArray:
    if count == 0:
        return np.zeros((len(rows), 0), dtype=np.int64)
    digits = np.unravel_index(rows, (size,) * count)
    return np.stack(digits, axis=1).astype(np.int64)


def _in_box(modes: IndexArray, bound: int) -> "np.ndarray":
    return np.all(np.abs(modes) <= bound, axis=-1)


def _check_degree(n: int) -> None:
    if n < 1:
        raise ValueError(f"degree parameter must be positive: {n}")


def _naive(
    target: Sequence[int], n: int, lattice: LatticeSpec, resonant: bool
) -> IndexArray:
    _check_degree(n)
    target_index = lattice.index_of(target)
    cost = lattice.size ** (2 * n)
    if cost > NAIVE_COST_BOUND:
        raise ResourceBoundError(f"naive enumeration too large for {lattice}, n={n}", cost)

    # the last position carries sign +1, so it is determined by the first 2n ones
    momentum, frequency = _signed_sums(lattice, alternating_signs(2 * n))
    last = np.asarray(target, dtype=np.int64)[None, :] - momentum
    mask = _in_box(last, lattice.cutoff)
    rows = np.flatnonzero(mask)
    last_index = lattice.indices_of(last[rows])
    if resonant:
        total = frequency[rows] + lattice.frequencies[last_index]
        keep = total == lattice.frequencies[target_index]
        rows = rows[keep]
        last_index = last_index[keep]

    prefix = _unravel(rows, lattice.size, 2 * n)
    return np.column_stack([prefix, last_index]).astype(np.int64)


def enumerate_S_naive(target: Sequence[int], n: int, lattice: LatticeSpec) -> IndexArray:
    """All in-box tuples with sum_j (-1)^{j-1} k_j = target, as rows of mode indexes."""
    return _naive(target, n, lattice, resonant=False)


def enumerate_R_naive(target: Sequence[int], n: int, lattice: LatticeSpec) -> IndexArray:
    """The tuples of `enumerate_S_naive` whose alternating frequency sum is lambda_target."""
    return _naive(target, n, lattice, resonant=True)


def as_signed_tuples(lattice: LatticeSpec, tuples: IndexArray) -> List[Tuple[SignedTuple, ...]]:
    """Convert index rows into tuples of mode coordinates, mostly for reports and tests."""
    return [tuple(lattice.mode(int(i)) for i in row) for row in tuples]


def _canonical_order(tuples: IndexArray) -> IndexArray:
    if len(tuples) == 0:
        return tuples
    order = np.lexsort(tuples.T[::-1])
    return tuples[order]


class _MeetInTheMiddle:
    """Sort-merge join over the two halves of an alternating tuple.

    The first ceil(L/2) positions are indexed by the exact integer key
    (partial momentum, partial frequency); the remaining positions are scanned and looked
    up for their complement. No floating point enters any constraint.
    """

    def __init__(self, lattice: LatticeSpec, length: int) -> None:
        self._lattice = lattice
        self._length = length
        self._head = (length + 1) // 2
        self._tail = length - self._head

        signs = alternating_signs(length)
        cutoff = lattice.cutoff
        self._momentum_bound = self._head * cutoff
        self._frequency_bound = self._head * lattice.d * cutoff * cutoff
        self._momentum_radix = 2 * self._momentum_bound + 1
        self._frequency_radix = 2 * self._frequency_bound + 1

        head_momentum, head_frequency = _signed_sums(lattice, signs[: self._head])
        keys = self._encode(head_momentum, head_frequency)
        self._order = np.argsort(keys, kind="stable")
        self._sorted_keys = keys[self._order]

        self._tail_momentum, self._tail_frequency = _signed_sums(lattice, signs[self._head :])

    @property
    def index_size(self) -> int:
        return len(self._sorted_keys)

    def _encode(self, momentum: IndexArray, frequency: IndexArray) -> IndexArray:
        key = np.zeros(len(frequency), dtype=np.int64)
        for i in range(self._lattice.d):
            key = key * self._momentum_radix + momentum[:, i] + self._momentum_bound
        return key * self._frequency_radix + frequency + self._frequency_bound

    def _lookup(
        self, momentum: Sequence[int], frequency: int
    ) -> Tuple[IndexArray, IndexArray, IndexArray]:
        need_momentum = np.asarray(momentum, dtype=np.int64)[None, :] - self._tail_momentum
        need_frequency = frequency - self._tail_frequency
        valid = _in_box(need_momentum, self._momentum_bound) & (
            np.abs(need_frequency) <= self._frequency_bound
        )
        rows = np.flatnonzero(valid)
        keys = self._encode(need_momentum[rows], need_frequency[rows])
        lo = np.searchsorted(self._sorted_keys, keys, side="left")
        hi = np.searchsorted(self._sorted_keys, keys, side="right")
        return rows, lo, hi - lo

    def count(self, momentum: Sequence[int], frequency: int) -> int:
        _, _, counts = self._lookup(momentum, frequency)
        return int(counts.sum())

    def expand(self, momentum: Sequence[int], frequency: int) -> IndexArray:
        rows, lo, counts = self._lookup(momentum, frequency)
        total = int(counts.sum())
        tail_rows = np.repeat(rows, counts)
        starts = np.repeat(lo - (np.cumsum(counts) - counts), counts)
        head_rows = self._order[starts + np.arange(total, dtype=np.int64)]

        size = self._lattice.size
        tuples = np.column_stack(
            [_unravel(head_rows, size, self._head), _unravel(tail_rows, size, self._tail)]
        ).astype(np.int64)
        return _canonical_order(tuples)


@dataclasses.dataclass(frozen=True, eq=False)
class ResonanceTable:
    d: int
    cutoff: int
    n: int
    kind: TableKind
    tuples: IndexArray
    offsets: IndexArray
    divisor_gap: Union[int, float]
    max_frequency: int

    def __post_init__(self) -> None:
        tuples = np.array(self.tuples, dtype=np.int64).reshape(-1, self.length)
        offsets = np.array(self.offsets, dtype=np.int64)
        tuples.flags.writeable = False
        offsets.flags.writeable = False
        if (
            len(offsets) == 0
            or offsets[0] != 0
            or offsets[-1] != len(tuples)
            or np.any(np.diff(offsets) < 0)
        ):
            raise TableFormatError("inconsistent table offsets")
        object.__setattr__(self, "tuples", tuples)
        object.__setattr__(self, "offsets", offsets)

    @property
    def lattice(self) -> LatticeSpec:
        return LatticeSpec(d=self.d, cutoff=self.cutoff)

    @property
    def length(self) -> int:
        if self.kind == TableKind.HAMILTONIAN:
            return 2 * self.n + 2
        return 2 * self.n + 1

    @property
    def counts(self) -> IndexArray:
        counts: IndexArray = np.diff(self.offsets)
        return counts

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    @functools.cached_property
    def targets(self) -> IndexArray:
        """Group index of every stored tuple (the target mode for vector field tables)."""
        return np.repeat(np.arange(len(self.counts), dtype=np.int64), self.counts)

    def tuples_for(self, group: int) -> IndexArray:
        return self.tuples[self.offsets[group] : self.offsets[group + 1]]

    def require_lattice(self, lattice: LatticeSpec) -> None:
        if self.lattice != lattice:
            raise LatticeMismatchError(
                f"table built for {self.lattice} cannot be used with {lattice}"
            )

    def require(self, lattice: LatticeSpec, n: int, kind: TableKind) -> None:
        self.require_lattice(lattice)
        if self.n != n or self.kind != kind:
            raise LatticeMismatchError(
                f"expected a {kind.name.lower()} table of degree {n}, "
                f"got {self.kind.name.lower()} of degree {self.n}"
            )


def _check_budget(lattice: LatticeSpec, total: int, length: int, budget: int) -> None:
    if total * length * 8 > budget:
        raise ResourceBoundError(
            f"resonance table for {lattice} exceeds the memory budget of {budget} bytes",
            total,
        )


def _map_targets(
    join: _MeetInTheMiddle,
    targets: Iterable[Tuple[Sequence[int], int]],
    jobs: int,
) -> List[IndexArray]:
    items = list(targets)
    if jobs <= 1:
        return [join.expand(m, f) for m, f in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(lambda item: join.expand(*item), items))


def build_resonance_table(
    lattice: LatticeSpec,
    n: int,
    jobs: int = 1,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> ResonanceTable:
    _check_degree(n)
    length = 2 * n + 1
    _logger.info(f"building resonance table for d={lattice.d}, K={lattice.cutoff}, n={n}")

    index_bytes = lattice.size ** ((length + 1) // 2) * 8 * (lattice.d + 2)
    if index_bytes > memory_budget:
        raise ResourceBoundError(
            f"join index for {lattice}, n={n} exceeds the memory budget",
            lattice.size ** ((length + 1) // 2),
        )

    join = _MeetInTheMiddle(lattice, length)
    targets = [
        (lattice.modes[i], int(lattice.frequencies[i])) for i in range(lattice.size)
    ]
    total = sum(join.count(m, f) for m, f in targets)
    _check_budget(lattice, total, length, memory_budget)

    groups = _map_targets(join, targets, jobs)
    counts = np.array([len(g) for g in groups], dtype=np.int64)
    stats = divisor_statistics(lattice, n)
    _logger.info(f"resonance table ready: {total} tuples, divisor gap {stats.gap}")
    return ResonanceTable(
        d=lattice.d,
        cutoff=lattice.cutoff,
        n=n,
        kind=TableKind.VECTOR_FIELD,
        tuples=np.concatenate(groups) if groups else np.zeros((0, length), np.int64),
        offsets=np.concatenate([[0], np.cumsum(counts)]),
        divisor_gap=stats.gap,
        max_frequency=stats.max_frequency,
    )


def build_hamiltonian_table(
    lattice: LatticeSpec, q: int, memory_budget: int = DEFAULT_MEMORY_BUDGET
) -> ResonanceTable:
    """Tuples of length 2q+2 with zero alternating momentum and zero alternating frequency.

    The momentum constraint is imposed together with the frequency one; only then does the
    resonant Hamiltonian generate the resonant vector field.
    """
    _check_degree(q)
    length = 2 * q + 2
    _logger.info(f"building hamiltonian table for d={lattice.d}, K={lattice.cutoff}, q={q}")
    join = _MeetInTheMiddle(lattice, length)
    zero = [0] * lattice.d
    _check_budget(lattice, join.count(zero, 0), length, memory_budget)
    tuples = join.expand(zero, 0)
    stats = divisor_statistics(lattice, q)
    return ResonanceTable(
        d=lattice.d,
        cutoff=lattice.cutoff,
        n=q,
        kind=TableKind.HAMILTONIAN,
        tuples=tuples,
        offsets=np.array([0, len(tuples)], dtype=np.int64),
        divisor_gap=stats.gap,
        max_frequency=stats.max_frequency,
    )


def frequency_bound(lattice: LatticeSpec, n: int) -> int:
    """A priori bound (2n+2) d K^2 on every divisor of S(k, n)."""
    return (2 * n + 2) * lattice.d * lattice.cutoff ** 2


def _unique_pairs(
    momentum_keys: IndexArray, frequency: IndexArray, frequency_offset: int
) -> Tuple[IndexArray, IndexArray]:
    radix = 2 * frequency_offset + 1
    combined = np.unique(momentum_keys * radix + frequency + frequency_offset)
    return combined // radix, combined % radix - frequency_offset


@functools.lru_cache(maxsize=32)
def divisor_statistics(lattice: LatticeSpec, n: int) -> DivisorStatistics:
    """Smallest nonzero and largest |divisor| over all in-box tuples of every S(k, n).

    Divisor values only depend on (partial momentum, partial frequency) of each half, so both
    halves are deduplicated before the join on momentum.
    """
    _check_degree(n)
    length = 2 * n + 1
    head = (length + 1) // 2
    signs = alternating_signs(length)
    bound = head * lattice.cutoff
    radix = 2 * bound + 1
    frequency_offset = head * lattice.d * lattice.cutoff ** 2

    def momentum_key(momentum: IndexArray) -> IndexArray:
        key = np.zeros(len(momentum), dtype=np.int64)
        for i in range(lattice.d):
            key = key * radix + momentum[:, i] + bound
        return key

    head_momentum, head_frequency = _signed_sums(lattice, signs[:head])
    head_keys, head_freqs = _unique_pairs(
        momentum_key(head_momentum), head_frequency, frequency_offset
    )
    tail_momentum, tail_frequency = _signed_sums(lattice, signs[head:])
    tail_keys, tail_freqs = _unique_pairs(
        momentum_key(tail_momentum), tail_frequency, frequency_offset
    )
    tail_modes = _decode_keys(tail_keys, lattice.d, bound, radix)

    gap: Union[int, float] = math.inf
    largest = 0
    for i in range(lattice.size):
        target = lattice.modes[i]
        need = target[None, :] - tail_modes
        valid = np.flatnonzero(_in_box(need, bound))
        keys = momentum_key(need[valid])
        lo = np.searchsorted(head_keys, keys, side="left")
        hi = np.searchsorted(head_keys, keys, side="right")
        counts = hi - lo
        total = int(counts.sum())
        if total == 0:
            continue
        starts = np.repeat(lo - (np.cumsum(counts) - counts), counts)
        head_rows = starts + np.arange(total, dtype=np.int64)
        divisors = np.abs(
            head_freqs[head_rows]
            + np.repeat(tail_freqs[valid], counts)
            - lattice.frequencies[i]
        )
        largest = max(largest, int(divisors.max()))
        nonzero = divisors[divisors > 0]
        if len(nonzero) > 0:
            gap = min(gap, int(nonzero.min()))
    return DivisorStatistics(gap=gap, max_frequency=largest)


def _decode_keys(keys: IndexArray, d: int, bound: int, radix: int) -> IndexArray:
    modes = np.zeros((len(keys), d), dtype=np.int64)
    rest = keys.copy()
    for i in range(d - 1, -1, -1):
        modes[:, i] = rest % radix - bound
        rest //= radix
    return modes


_MAGIC = b"RCGLTAB\x00"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHHBHHHHIQdq32s")


def _payload(table: ResonanceTable) -> bytes:
    return table.offsets.astype("<i8").tobytes() + table.tuples.astype("<i4").tobytes()


def save_table(table: ResonanceTable, path: pathlib.Path) -> None:
    payload = _payload(table)
    header = _HEADER.pack(
        _MAGIC,
        _FORMAT_VERSION,
        ORDERING_VERSION,
        table.kind.value,
        table.d,
        table.cutoff,
        table.n,
        table.length,
        len(table.counts),
        table.total,
        float(table.divisor_gap),
        table.max_frequency,
        hashlib.sha256(payload).digest(),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def load_table(path: pathlib.Path, lattice: Optional[LatticeSpec] = None) -> ResonanceTable:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TableFormatError(f"{path}: truncated header")
    (
        magic,
        format_version,
        ordering,
        kind,
        d,
        cutoff,
        n,
        length,
        groups,
        total,
        gap,
        max_frequency,
        checksum,
    ) = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise TableFormatError(f"{path}: not a resonance table")
    if format_version != _FORMAT_VERSION or ordering != ORDERING_VERSION:
        raise TableFormatError(
            f"{path}: unsupported version (format {format_version}, ordering {ordering})"
        )
    payload = data[_HEADER.size :]
    if hashlib.sha256(payload).digest() != checksum:
        raise TableFormatError(f"{path}: checksum mismatch")
    expected = (groups + 1) * 8 + total * length * 4
    if len(payload) != expected:
        raise TableFormatError(f"{path}: payload size {len(payload)} != {expected}")

    split = (groups + 1) * 8
    offsets = np.frombuffer(payload[:split], dtype="<i8").astype(np.int64)
    tuples = np.frombuffer(payload[split:], dtype="<i4").astype(np.int64)
    table = ResonanceTable(
        d=d,
        cutoff=cutoff,
        n=n,
        kind=TableKind(kind),
        tuples=tuples.reshape(total, length),
        offsets=offsets,
        divisor_gap=gap if math.isinf(gap) else int(gap),
        max_frequency=max_frequency,
    )
    if lattice is not None:
        table.require_lattice(lattice)
    return table
