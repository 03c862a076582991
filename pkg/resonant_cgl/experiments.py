import concurrent.futures
import dataclasses
import logging
import math
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .diagnostics import hamiltonian_Hres
from .dynamics import EquationParams, table_sum
from .errors import LatticeMismatchError, NumericalAbort
from .integrators import (
    Integrator,
    StepControl,
    Trajectory,
    integrate_effective,
    integrate_full,
    residual_Y,
)
from .lattice import FourierField, LatticeSpec
from .resonance import ResonanceTable, TableKind
from .types import ComplexArray, RealArray

__all__ = [
    "ComparisonReport",
    "ConservationCheck",
    "ConservationReport",
    "ConvergenceReport",
    "LadderResult",
    "LadderRung",
    "LipschitzProfile",
    "action_discrepancy",
    "closed_form_check_1d",
    "compare_actions",
    "conservation_suite",
    "epsilon_ladder",
    "hamiltonian_Hres",
    "lipschitz_profile",
    "self_convergence",
]

_logger = logging.getLogger(__name__)

# sup errors at or below this are treated as zero and make the exponent fit degenerate
DEGENERATE_ERROR = 1e-10
# largest accepted spread of sup_error / eps^(1/2) across a ladder
RATIO_SPREAD_BOUND = 4.0
MIN_LADDER_SIZE = 3


def action_discrepancy(
    lattice: LatticeSpec, first: ComplexArray, second: ComplexArray, s1: float
) -> RealArray:
    """sum_k 2 (|k|^{2 s1} + 1) |I_k(first) - I_k(second)| along the trailing axis."""
    difference = 0.5 * (np.abs(first) ** 2 - np.abs(second) ** 2)
    weights = lattice.weights(s1)
    discrepancy: RealArray = np.sum(2.0 * weights * np.abs(difference), axis=-1)
    return discrepancy


@dataclasses.dataclass(frozen=True)
class ComparisonReport:
    s1: float
    params: EquationParams
    times: RealArray
    errors: RealArray

    @property
    def sup_error(self) -> float:
        return float(np.max(self.errors, initial=0.0))


def compare_actions(full: Trajectory, effective: Trajectory, s1: float) -> ComparisonReport:
    if full.lattice != effective.lattice:
        raise LatticeMismatchError(
            f"cannot compare runs on {full.lattice} and {effective.lattice}"
        )
    if len(full) != len(effective) or not np.array_equal(
        full.times_array, effective.times_array
    ):
        raise ValueError("full and effective runs use different checkpoint schedules")
    if not np.array_equal(full.fields[0], effective.fields[0]):
        raise ValueError("full and effective runs start from different data")
    errors = action_discrepancy(full.lattice, full.fields_array, effective.fields_array, s1)
    return ComparisonReport(s1, full.params, full.times_array, errors)


class LadderRung(NamedTuple):
    epsilon: float
    report: Optional[ComparisonReport]
    residual_sup: Optional[float] = None
    residual_reliable: Optional[bool] = None

    @property
    def aborted(self) -> bool:
        return self.report is None

    @property
    def sup_error(self) -> float:
        return math.nan if self.report is None else self.report.sup_error


@dataclasses.dataclass(frozen=True)
class LadderResult:
    rungs: List[LadderRung]
    effective: Trajectory
    fitted_exponent: Optional[float]
    monotone: bool
    ratio_spread: Optional[float]
    complete: bool

    @property
    def ladder(self) -> List[Tuple[float, float]]:
        return [(r.epsilon, r.sup_error) for r in self.rungs]

    @property
    def ratio_bounded(self) -> bool:
        return self.ratio_spread is not None and self.ratio_spread < RATIO_SPREAD_BOUND

    @property
    def residual_sups(self) -> List[Optional[float]]:
        return [r.residual_sup for r in self.rungs]

    @property
    def residual_ratios(self) -> List[float]:
        sups = self.residual_sups
        ratios = []
        for previous, current in zip(sups[:-1], sups[1:]):
            if previous is None or current is None or previous == 0:
                continue
            ratios.append(current / previous)
        return ratios


def _fit_exponent(epsilons: RealArray, errors: RealArray) -> Optional[float]:
    if len(errors) < MIN_LADDER_SIZE or np.any(errors <= DEGENERATE_ERROR):
        return None
    slope, _ = np.polyfit(np.log(epsilons), np.log(errors), 1)
    return float(slope)


def _summarize(rungs: List[LadderRung], effective: Trajectory) -> LadderResult:
    complete = all(not r.aborted for r in rungs)
    if not complete:
        aborted = [r.epsilon for r in rungs if r.aborted]
        _logger.warning(f"ladder incomplete: runs aborted for eps in {aborted}")
        return LadderResult(rungs, effective, None, False, None, False)

    epsilons = np.array([r.epsilon for r in rungs])
    errors = np.array([r.sup_error for r in rungs])
    monotone = bool(np.all(np.diff(errors) <= 0))
    ratio_spread: Optional[float] = None
    if np.all(errors > DEGENERATE_ERROR):
        ratios = errors / np.sqrt(epsilons)
        ratio_spread = float(np.max(ratios) / np.min(ratios))
    return LadderResult(
        rungs, effective, _fit_exponent(epsilons, errors), monotone, ratio_spread, True
    )


def epsilon_ladder(
    v0: FourierField,
    params: EquationParams,
    epsilons: Sequence[float],
    horizon: float,
    tables: Tuple[ResonanceTable, ResonanceTable],
    control: StepControl,
    s1: float,
    norms: Sequence[float] = (),
    hamiltonian_table: Optional[ResonanceTable] = None,
    residual: bool = False,
    jobs: int = 1,
) -> LadderResult:
    """Paired full/effective runs over a decreasing list of epsilon values.

    The effective equation does not involve epsilon, so it is integrated once and shared by
    every rung; full runs are independent and go through a worker pool.
    """
    if len(epsilons) < MIN_LADDER_SIZE:
        raise ValueError(
            f"an epsilon ladder needs at least {MIN_LADDER_SIZE} values: {list(epsilons)}"
        )
    if any(e <= 0 for e in epsilons) or any(
        a <= b for a, b in zip(epsilons[:-1], epsilons[1:])
    ):
        raise ValueError(f"epsilon values must be positive and decreasing: {list(epsilons)}")

    effective = integrate_effective(
        v0, horizon, params, tables, control, norms, hamiltonian_table
    )

    def rung(epsilon: float) -> LadderRung:
        rung_params = params.with_epsilon(epsilon)
        try:
            full = integrate_full(v0, horizon, rung_params, control, norms)
        except NumericalAbort as e:
            _logger.warning(f"full run for eps={epsilon} aborted: {e}")
            return LadderRung(epsilon, None)
        report = compare_actions(full, effective, s1)
        _logger.info(f"eps={epsilon}: sup action error {report.sup_error:.6e}")
        if not residual:
            return LadderRung(epsilon, report)
        residual_report = residual_Y(full, rung_params, tables, s1)
        return LadderRung(epsilon, report, residual_report.sup, residual_report.reliable)

    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        rungs = list(executor.map(rung, epsilons))
    return _summarize(rungs, effective)


class ConservationCheck(NamedTuple):
    quantity: str
    # "drift": max |q(tau) - q(0)| / |q(0)|; "monotone": largest relative increase
    kind: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.value <= self.tolerance


@dataclasses.dataclass(frozen=True)
class ConservationReport:
    mode: str
    checks: List[ConservationCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> Dict[str, float]:
        return {f"{c.quantity}_{c.kind}": c.value for c in self.checks}


def _scale(values: RealArray) -> float:
    return max(abs(float(values[0])), float(np.finfo(np.float64).tiny))


def _drift(values: RealArray) -> float:
    return float(np.max(np.abs(values - values[0])) / _scale(values))


def _largest_increase(values: RealArray) -> float:
    if len(values) < 2:
        return 0.0
    return float(max(np.max(np.diff(values)), 0.0) / _scale(values))


def conservation_suite(
    trajectory: Trajectory,
    mode: Optional[str] = None,
    tolerances: Optional[Dict[str, float]] = None,
) -> ConservationReport:
    mode = trajectory.kind if mode is None else mode
    if mode not in ("full", "effective"):
        raise ValueError(f"unknown trajectory mode: {mode}")
    limits = {
        "invariant": 1e-8,
        "hamiltonian": 1e-6,
        "l2_monotone": 1e-10,
        "energy_monotone": 1e-8,
    }
    limits.update(tolerances or {})
    params = trajectory.params
    available = trajectory.diagnostics

    checks: List[ConservationCheck] = []

    def drift(name: str, tolerance: float) -> None:
        if name in available:
            checks.append(
                ConservationCheck(name, "drift", _drift(trajectory.diagnostic(name)), tolerance)
            )

    def monotone(name: str, tolerance: float) -> None:
        if name in available:
            value = _largest_increase(trajectory.diagnostic(name))
            checks.append(ConservationCheck(name, "monotone", value, tolerance))

    if params.is_hamiltonian and mode == "effective":
        drift("H1", limits["invariant"])
        drift("H2", limits["invariant"])
        drift("H_res", limits["hamiltonian"])
    elif params.is_hamiltonian:
        drift("l2_norm", limits["invariant"])
        drift("energy", limits["hamiltonian"])
    elif params.is_dissipative and mode == "full":
        monotone("l2_norm", limits["l2_monotone"])
        if params.energy_decays:
            monotone("energy", limits["energy_monotone"])
    else:
        _logger.info("no conservation law applies to these parameters")
    return ConservationReport(mode, checks)


def closed_form_check_1d(v: FourierField, table: ResonanceTable) -> float:
    """max_k |R_k(v, 1) - (2 v_k sum_m |v_m|^2 - v_k |v_k|^2)| for the 1d cubic table."""
    if v.lattice.d != 1:
        raise LatticeMismatchError(f"the closed form only holds in d=1, got d={v.lattice.d}")
    table.require(v.lattice, 1, TableKind.VECTOR_FIELD)
    amps = v.amps
    modulus = np.abs(amps) ** 2
    closed = 2.0 * amps * np.sum(modulus) - amps * modulus
    return float(np.max(np.abs(table_sum(amps, table) - closed), initial=0.0))


class LipschitzProfile(NamedTuple):
    radii: RealArray
    ratios: RealArray
    growth_exponent: Optional[float]


def _random_in_ball(
    rng: np.random.Generator, weights: RealArray, radius: float
) -> ComplexArray:
    direction = rng.standard_normal(len(weights)) + 1j * rng.standard_normal(len(weights))
    direction /= np.sqrt(np.sum(weights * np.abs(direction) ** 2))
    sample: ComplexArray = radius * rng.uniform() * direction
    return sample


def lipschitz_profile(
    func: Callable[[ComplexArray], ComplexArray],
    lattice: LatticeSpec,
    s: float,
    radii: Sequence[float],
    samples: int = 32,
    seed: int = 0,
) -> LipschitzProfile:
    """Largest sampled |F(v) - F(v')|_s / |v - v'|_s over pairs in the ball |v|_s <= M.

    For a nonlinearity of degree 2n+1 the ratio grows like M^{2n}; the growth exponent is
    the least-squares slope of log ratio against log M.
    """
    if samples < 1:
        raise ValueError(f"at least one sample is required: {samples}")
    weights = lattice.weights(s)

    def norm(amps: ComplexArray) -> float:
        return float(np.sqrt(np.sum(weights * np.abs(amps) ** 2)))

    ratios = []
    for radius in radii:
        # the same draws on every shell, so a homogeneous F gives an exact power law
        rng = np.random.default_rng(seed)
        best = 0.0
        for _ in range(samples):
            first = _random_in_ball(rng, weights, radius)
            second = _random_in_ball(rng, weights, radius)
            distance = norm(first - second)
            if distance > 0:
                best = max(best, norm(func(first) - func(second)) / distance)
        ratios.append(best)

    radii_array = np.asarray(radii, dtype=np.float64)
    ratios_array = np.asarray(ratios, dtype=np.float64)
    exponent: Optional[float] = None
    if len(radii_array) >= 2 and np.all(ratios_array > 0) and np.all(radii_array > 0):
        exponent = float(np.polyfit(np.log(radii_array), np.log(ratios_array), 1)[0])
    return LipschitzProfile(radii_array, ratios_array, exponent)


class ConvergenceReport(NamedTuple):
    steps: RealArray
    differences: RealArray
    orders: RealArray


def self_convergence(
    integrator: Integrator,
    v0: FourierField,
    horizon: float,
    step: float,
    levels: int = 3,
) -> ConvergenceReport:
    """Runs at step, step/2, ... and reports log2(e_j / e_{j+1}).

    e_j is the largest checkpoint difference between consecutive refinements.
    """
    if levels < 3:
        raise ValueError(f"at least three refinement levels are needed: {levels}")
    steps = step / 2.0 ** np.arange(levels)
    runs = [integrator.run(v0, horizon, step=float(h)).fields_array for h in steps]
    differences = np.array(
        [float(np.max(np.abs(a - b))) for a, b in zip(runs[:-1], runs[1:])]
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(differences[:-1] / differences[1:])
    return ConvergenceReport(steps, differences, orders)

