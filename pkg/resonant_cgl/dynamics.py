import dataclasses
import logging
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ResourceBoundError
from .lattice import (
    FourierField,
    LatticeSpec,
    dealiased_grid_size,
    spectral_analysis,
    spectral_synthesis,
)
from .resonance import (
    ResonanceTable,
    TableKind,
    divisor_statistics,
    enumerate_S_naive,
    frequency_bound,
)
from .types import ComplexArray, IndexArray, RealArray

_logger = logging.getLogger(__name__)

# Candidate tuples the convolution oracle may visit.
ORACLE_COST_BOUND = 5 * 10 ** 6
# Quadrature nodes evaluated per batched transform.
_NODE_CHUNK = 256


@dataclasses.dataclass(frozen=True)
class EquationParams:
    """Scalar parameters of the equation

    u_t + i Lap u = eps [mu (-1)^{m-1} Lap^m u + b|u|^{2p}u + ic|u|^{2q}u].
    """

    epsilon: float
    mu: float = 0.0
    b: float = 0.0
    c: float = 1.0
    m: int = 1
    p: int = 1
    q: int = 1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive: {self.epsilon}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative: {self.mu}")
        for name in ("m", "p", "q"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer: {getattr(self, name)}")

    @property
    def degree(self) -> int:
        """n = max(p, q); the nonlinearity has total degree 2n+1."""
        return max(self.p, self.q)

    @property
    def active_degrees(self) -> List[int]:
        degrees = []
        if self.b != 0:
            degrees.append(self.p)
        if self.c != 0:
            degrees.append(self.q)
        return sorted(set(degrees))

    @property
    def is_hamiltonian(self) -> bool:
        return self.mu == 0 and self.b == 0

    @property
    def is_dissipative(self) -> bool:
        """mu > 0, b <= 0: the L^2 norm cannot grow, whatever the sign of c."""
        return self.mu > 0 and self.b <= 0

    @property
    def energy_decays(self) -> bool:
        """m = 1, mu > 0, b <= 0, c >= 0: `diagnostics.energy` is nonincreasing.

        The conserved energy of i c |u|^{2q}u carries +eps c/(2q+2) <|u|^{2q+2}>, so the
        cross terms of its derivative are nonpositive only for c >= 0.
        """
        return self.m == 1 and self.is_dissipative and self.c >= 0

    def with_epsilon(self, epsilon: float) -> "EquationParams":
        return dataclasses.replace(self, epsilon=epsilon)


def dissipation_rates(lattice: LatticeSpec, params: EquationParams) -> RealArray:
    """-mu lambda_k^m per mode."""
    lam = lattice.frequencies.astype(np.float64)
    rates: RealArray = -params.mu * lam ** params.m
    return rates


def full_linear_rates(lattice: LatticeSpec, params: EquationParams) -> ComplexArray:
    """i lambda_k / eps - mu lambda_k^m per mode."""
    lam = lattice.frequencies.astype(np.float64)
    rates: ComplexArray = 1j * lam / params.epsilon + dissipation_rates(lattice, params)
    return rates


def monomials(amps: ComplexArray, tuples: IndexArray) -> ComplexArray:
    """v_{k1} conj(v_{k2}) v_{k3} ... for every row of `tuples` (any number of positions)."""
    factors = np.take(amps, tuples, axis=-1)
    factors[..., 1::2] = np.conj(factors[..., 1::2])
    products: ComplexArray = np.prod(factors, axis=-1)
    return products


class Nonlinearity:
    """P(v) = F(b|u|^{2p}u + ic|u|^{2q}u) by dealiased collocation, re-truncated to the box."""

    def __init__(
        self, lattice: LatticeSpec, params: EquationParams, grid: Optional[int] = None
    ) -> None:
        required = (2 * params.degree + 2) * lattice.cutoff + 1
        if grid is None:
            grid = dealiased_grid_size(lattice, params.degree)
        elif grid < required:
            raise ValueError(
                f"grid size {grid} is too small for alias-free evaluation (need {required})"
            )
        self._lattice = lattice
        self._params = params
        self._grid = grid

    @property
    def grid(self) -> int:
        return self._grid

    def __call__(self, amps: ComplexArray) -> ComplexArray:
        params = self._params
        if params.b == 0 and params.c == 0:
            return np.zeros_like(amps)
        u = spectral_synthesis(amps, self._lattice, self._grid)
        modulus = u.real ** 2 + u.imag ** 2
        term = np.zeros_like(u)
        if params.b != 0:
            term += params.b * modulus ** params.p * u
        if params.c != 0:
            term += 1j * params.c * modulus ** params.q * u
        return spectral_analysis(term, self._lattice)


def nonlinearity_P(
    v: FourierField, params: EquationParams, grid: Optional[int] = None
) -> FourierField:
    return v.with_amps(Nonlinearity(v.lattice, params, grid)(v.amps))


def nonlinearity_P_oracle(v: FourierField, n: int) -> FourierField:
    """P_k(v, n) as the explicit monomial sum over S(k, n); small lattices only."""
    lattice = v.lattice
    cost = lattice.size ** (2 * n + 1)
    if cost > ORACLE_COST_BOUND:
        raise ResourceBoundError(f"convolution oracle too large for {lattice}, n={n}", cost)
    out = np.zeros(lattice.size, dtype=np.complex128)
    for i in range(lattice.size):
        tuples = enumerate_S_naive(lattice.modes[i], n, lattice)
        out[i] = np.sum(monomials(v.amps, tuples))
    return v.with_amps(out)


def table_sum(amps: ComplexArray, table: ResonanceTable) -> ComplexArray:
    """R_k(v, n): the monomial sum over the stored tuples of every target."""
    size = len(table.counts)
    if table.total == 0:
        return np.zeros(size, dtype=np.complex128)
    values = monomials(amps, table.tuples)
    targets = table.targets
    real = np.bincount(targets, weights=values.real, minlength=size)
    imag = np.bincount(targets, weights=values.imag, minlength=size)
    summed: ComplexArray = real + 1j * imag
    return summed


class ResonantField:
    """R(v) = b R(v, p) + ic R(v, q) evaluated from resonance tables."""

    def __init__(
        self,
        lattice: LatticeSpec,
        params: EquationParams,
        table_p: ResonanceTable,
        table_q: ResonanceTable,
    ) -> None:
        table_p.require(lattice, params.p, TableKind.VECTOR_FIELD)
        table_q.require(lattice, params.q, TableKind.VECTOR_FIELD)
        self._lattice = lattice
        self._params = params
        self._table_p = table_p
        self._table_q = table_q

    def __call__(self, amps: ComplexArray) -> ComplexArray:
        out = np.zeros(self._lattice.size, dtype=np.complex128)
        if self._params.b != 0:
            out += self._params.b * table_sum(amps, self._table_p)
        if self._params.c != 0:
            out += 1j * self._params.c * table_sum(amps, self._table_q)
        return out


def resonant_R_table(
    v: FourierField,
    table_p: ResonanceTable,
    table_q: ResonanceTable,
    params: EquationParams,
) -> FourierField:
    return v.with_amps(ResonantField(v.lattice, params, table_p, table_q)(v.amps))


class QuadratureAverage(NamedTuple):
    field: FourierField
    nodes: int
    exact: bool


def default_quadrature_nodes(lattice: LatticeSpec, params: EquationParams) -> int:
    return 2 * frequency_bound(lattice, params.degree) + 1


def resonant_R_average(
    v: FourierField, params: EquationParams, nodes: Optional[int] = None
) -> QuadratureAverage:
    """Trapezoid rule for (1/2pi) int_0^{2pi} Phi_{-t Lambda} P(Phi_{t Lambda} v) dt.

    The integrand is a trigonometric polynomial in t whose integer frequencies are the
    divisors, so the rule is exact once it has more than twice the largest divisor nodes.
    """
    lattice = v.lattice
    if nodes is None:
        nodes = default_quadrature_nodes(lattice, params)
    if nodes < 1:
        raise ValueError(f"at least one quadrature node is required: {nodes}")

    largest = max(
        (divisor_statistics(lattice, n).max_frequency for n in params.active_degrees),
        default=0,
    )
    exact = nodes >= 2 * largest + 1
    if not exact:
        _logger.warning(
            f"{nodes} quadrature nodes do not resolve divisors up to {largest}; "
            "the averaged field is not exact"
        )

    nonlinearity = Nonlinearity(lattice, params)
    lam = lattice.frequencies.astype(np.float64)
    total = np.zeros(lattice.size, dtype=np.complex128)
    for start in range(0, nodes, _NODE_CHUNK):
        t = 2.0 * np.pi * np.arange(start, min(start + _NODE_CHUNK, nodes)) / nodes
        rotation = np.exp(1j * t[:, None] * lam[None, :])
        rotated = nonlinearity(rotation * v.amps[None, :])
        total += np.sum(np.conj(rotation) * rotated, axis=0)
    return QuadratureAverage(v.with_amps(total / nodes), nodes, exact)


def dissipation_F(v: FourierField, params: EquationParams) -> FourierField:
    return v.with_amps(dissipation_rates(v.lattice, params) * v.amps)


def dissipation_semigroup(v: FourierField, t: float, params: EquationParams) -> FourierField:
    if t < 0:
        raise ValueError(f"the dissipation semigroup is only defined for t >= 0: {t}")
    return v.with_amps(np.exp(dissipation_rates(v.lattice, params) * t) * v.amps)


def full_rhs(
    v: FourierField,
    tau: float,
    params: EquationParams,
    nonlinearity: Optional[Nonlinearity] = None,
) -> FourierField:
    # the equation is autonomous; tau is kept for the v' = f(v, tau) calling convention
    if nonlinearity is None:
        nonlinearity = Nonlinearity(v.lattice, params)
    rates = full_linear_rates(v.lattice, params)
    return v.with_amps(rates * v.amps + nonlinearity(v.amps))


def effective_rhs(
    v: FourierField,
    params: EquationParams,
    tables: Tuple[ResonanceTable, ResonanceTable],
) -> FourierField:
    field = ResonantField(v.lattice, params, *tables)
    return v.with_amps(dissipation_rates(v.lattice, params) * v.amps + field(v.amps))


def action_rates(v: FourierField, params: EquationParams) -> RealArray:
    """dI_k/dtau = Re(conj(v_k) (F(v) + P(v))_k); the fast rotation does not move actions."""
    forcing = dissipation_rates(v.lattice, params) * v.amps + Nonlinearity(
        v.lattice, params
    )(v.amps)
    rates: RealArray = np.real(np.conj(v.amps) * forcing)
    return rates
