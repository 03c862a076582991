import dataclasses
import functools
import itertools
import logging
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.fft

from .errors import LatticeMismatchError
from .types import ComplexArray, IndexArray, Mode, RealArray

_logger = logging.getLogger(__name__)

# Bumped whenever the mode ordering below changes; recorded in every artifact.
ORDERING_VERSION = 1


@dataclasses.dataclass(frozen=True)
class LatticeSpec:
    """Truncated Fourier lattice: all k in Z^d with max_i |k_i| <= cutoff.

    Modes are ordered lexicographically over coordinates in [-cutoff, cutoff], which is
    exactly the order of `itertools.product`, so the index of a mode is its mixed-radix
    value with digits k_i + cutoff.
    """

    d: int
    cutoff: int

    def __post_init__(self) -> None:
        if self.d <= 0:
            raise ValueError(f"dimension must be positive: {self.d}")
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be nonnegative: {self.cutoff}")

    @property
    def side(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def size(self) -> int:
        return int(self.side ** self.d)

    @functools.cached_property
    def modes(self) -> IndexArray:
        coords = range(-self.cutoff, self.cutoff + 1)
        modes = np.array(list(itertools.product(coords, repeat=self.d)), dtype=np.int64)
        modes.flags.writeable = False
        return modes.reshape(self.size, self.d)

    @functools.cached_property
    def frequencies(self) -> IndexArray:
        """The frequency vector, lambda_k = |k|^2 (exact integers)."""
        freqs = np.sum(self.modes * self.modes, axis=1)
        freqs.flags.writeable = False
        return freqs

    def weights(self, s: float) -> RealArray:
        """|k|^{2s} + 1 per mode, with the k = 0 weight fixed to 1 for every s."""
        lam = self.frequencies.astype(np.float64)
        powered = np.power(lam, s, out=np.zeros_like(lam), where=lam > 0)
        return powered + 1.0

    def contains(self, mode: Sequence[int]) -> bool:
        return len(mode) == self.d and all(abs(int(c)) <= self.cutoff for c in mode)

    def index_of(self, mode: Sequence[int]) -> int:
        if not self.contains(mode):
            raise ValueError(f"mode {tuple(mode)} is outside the lattice box {self}")
        index = 0
        for c in mode:
            index = index * self.side + int(c) + self.cutoff
        return index

    def indices_of(self, modes: IndexArray) -> IndexArray:
        """Vectorized `index_of` for an (..., d) array of in-box modes."""
        digits = np.asarray(modes, dtype=np.int64) + self.cutoff
        radix = self.side ** np.arange(self.d - 1, -1, -1, dtype=np.int64)
        return np.asarray(digits @ radix, dtype=np.int64)

    def mode(self, index: int) -> Mode:
        return tuple(int(c) for c in self.modes[index])

    def require_same(self, other: "LatticeSpec") -> None:
        if self != other:
            raise LatticeMismatchError(f"lattice mismatch: {self} != {other}")


def build_lattice(d: int, cutoff: int) -> LatticeSpec:
    return LatticeSpec(d=d, cutoff=cutoff)


def _readonly(values: Any, dtype: Any) -> Any:
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


@dataclasses.dataclass(frozen=True, eq=False)
class FourierField:
    lattice: LatticeSpec
    amps: ComplexArray

    def __post_init__(self) -> None:
        amps = _readonly(self.amps, np.complex128)
        if amps.shape != (self.lattice.size,):
            raise ValueError(
                f"expected {self.lattice.size} amplitudes, got shape {amps.shape}"
            )
        object.__setattr__(self, "amps", amps)

    @classmethod
    def zeros(cls, lattice: LatticeSpec) -> "FourierField":
        return cls(lattice, np.zeros(lattice.size, dtype=np.complex128))

    @classmethod
    def from_modes(
        cls, lattice: LatticeSpec, coefficients: Mapping[Mode, complex]
    ) -> "FourierField":
        amps = np.zeros(lattice.size, dtype=np.complex128)
        for mode, value in coefficients.items():
            amps[lattice.index_of(mode)] = value
        return cls(lattice, amps)

    def with_amps(self, amps: ComplexArray) -> "FourierField":
        return FourierField(self.lattice, amps)

    def coefficient(self, mode: Sequence[int]) -> complex:
        return complex(self.amps[self.lattice.index_of(mode)])


@dataclasses.dataclass(frozen=True, eq=False)
class ActionVector:
    lattice: LatticeSpec
    actions: RealArray

    def __post_init__(self) -> None:
        actions = _readonly(self.actions, np.float64)
        if actions.shape != (self.lattice.size,):
            raise ValueError(f"expected {self.lattice.size} actions, got {actions.shape}")
        if np.any(actions < 0):
            raise ValueError("actions must be nonnegative")
        object.__setattr__(self, "actions", actions)

    def norm(self, s: float) -> float:
        """The weighted l^1 norm sum_k 2(|k|^{2s}+1)|I_k|."""
        return float(np.sum(2.0 * self.lattice.weights(s) * np.abs(self.actions)))


@dataclasses.dataclass(frozen=True, eq=False)
class PhaseVector:
    lattice: LatticeSpec
    theta: RealArray

    def __post_init__(self) -> None:
        theta = _readonly(self.theta, np.float64)
        if theta.shape != (self.lattice.size,):
            raise ValueError(f"expected {self.lattice.size} angles, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def along_frequencies(cls, lattice: LatticeSpec, t: float) -> "PhaseVector":
        """theta = t * Lambda, the phase of the linear flow after time t."""
        return cls(lattice, t * lattice.frequencies.astype(np.float64))


@dataclasses.dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: int
    values: ComplexArray

    def __post_init__(self) -> None:
        values = _readonly(self.values, np.complex128)
        if values.ndim == 0 or any(n != self.grid for n in values.shape):
            raise ValueError(f"expected a cubic grid of side {self.grid}: {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return int(self.values.ndim)


def h_norm(v: FourierField, s: float) -> float:
    weights = v.lattice.weights(s)
    return float(np.sqrt(np.sum(weights * np.abs(v.amps) ** 2)))


def actions(v: FourierField) -> ActionVector:
    return ActionVector(v.lattice, 0.5 * (v.amps.real ** 2 + v.amps.imag ** 2))


def angles(v: FourierField) -> PhaseVector:
    # np.angle(0) is 0 already; negative zero imaginary parts would give -pi instead of pi
    theta = np.angle(v.amps)
    theta = np.where(theta == -np.pi, np.pi, theta)
    return PhaseVector(v.lattice, theta)


def action_norm(actions: ActionVector, s: float) -> float:
    return actions.norm(s)


def phase_rotate(v: FourierField, theta: PhaseVector) -> FourierField:
    v.lattice.require_same(theta.lattice)
    return v.with_amps(np.exp(1j * theta.theta) * v.amps)


def interaction_picture(v: FourierField, tau: float, epsilon: float) -> FourierField:
    """a_k = exp(-i lambda_k tau / epsilon) v_k."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive: {epsilon}")
    if tau == 0:
        return v
    return phase_rotate(v, PhaseVector.along_frequencies(v.lattice, -tau / epsilon))


def from_interaction_picture(a: FourierField, tau: float, epsilon: float) -> FourierField:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive: {epsilon}")
    if tau == 0:
        return a
    return phase_rotate(a, PhaseVector.along_frequencies(a.lattice, tau / epsilon))


def roundtrip_grid_size(lattice: LatticeSpec) -> int:
    return lattice.side


def dealiased_grid_size(lattice: LatticeSpec, n: int) -> int:
    """Smallest FFT-friendly M >= (2n+2)K+1.

    With that many points the degree 2n+1 products of box-supported fields are evaluated
    without aliasing back into the box.
    """
    return int(scipy.fft.next_fast_len((2 * n + 2) * lattice.cutoff + 1))


@functools.lru_cache(maxsize=64)
def _grid_index(lattice: LatticeSpec, grid: int) -> Tuple[IndexArray, ...]:
    wrapped = np.mod(lattice.modes, grid)
    return tuple(np.ascontiguousarray(wrapped[:, i]) for i in range(lattice.d))


def spectral_synthesis(amps: ComplexArray, lattice: LatticeSpec, grid: int) -> ComplexArray:
    """Evaluate u(x_j) = sum_k v_k exp(i k.x_j) on the grid, over the trailing axis of `amps`.

    Leading axes are treated as a batch.
    """
    batch = amps.shape[:-1]
    coefficients = np.zeros(batch + (grid,) * lattice.d, dtype=np.complex128)
    coefficients[(Ellipsis,) + _grid_index(lattice, grid)] = amps
    axes = tuple(range(-lattice.d, 0))
    values: ComplexArray = scipy.fft.ifftn(coefficients, axes=axes, norm="forward")
    return values


def spectral_analysis(values: ComplexArray, lattice: LatticeSpec) -> ComplexArray:
    """Inverse of `spectral_synthesis`, restricted to the lattice box."""
    grid = values.shape[-1]
    axes = tuple(range(-lattice.d, 0))
    coefficients = scipy.fft.fftn(values, axes=axes, norm="forward")
    amps: ComplexArray = coefficients[(Ellipsis,) + _grid_index(lattice, grid)]
    return amps


def to_physical(v: FourierField, grid: int) -> PhysicalField:
    if grid < roundtrip_grid_size(v.lattice):
        raise ValueError(
            f"grid size {grid} is below the lossless threshold {v.lattice.side}"
        )
    return PhysicalField(grid, spectral_synthesis(v.amps, v.lattice, grid))


def to_fourier(u: PhysicalField, lattice: LatticeSpec) -> FourierField:
    if u.d != lattice.d:
        raise LatticeMismatchError(f"grid dimension {u.d} != lattice dimension {lattice.d}")
    if u.grid < roundtrip_grid_size(lattice):
        raise ValueError(f"grid size {u.grid} is below the lossless threshold {lattice.side}")
    return FourierField(lattice, spectral_analysis(u.values, lattice))


def field_to_record(v: FourierField) -> Dict[str, Any]:
    return {
        "d": v.lattice.d,
        "cutoff": v.lattice.cutoff,
        "ordering": ORDERING_VERSION,
        "amps": [[float(a.real), float(a.imag)] for a in v.amps],
    }


def field_from_record(
    record: Mapping[str, Any], lattice: Optional[LatticeSpec] = None
) -> FourierField:
    if record.get("ordering") != ORDERING_VERSION:
        raise ValueError(f"unsupported mode ordering: {record.get('ordering')}")
    recorded = LatticeSpec(d=int(record["d"]), cutoff=int(record["cutoff"]))
    if lattice is not None:
        lattice.require_same(recorded)
    pairs = np.asarray(record["amps"], dtype=np.float64).reshape(-1, 2)
    return FourierField(recorded, pairs[:, 0] + 1j * pairs[:, 1])
