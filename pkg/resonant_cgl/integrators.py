import abc
import dataclasses
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .diagnostics import DiagnosticSet
from .dynamics import (
    EquationParams,
    Nonlinearity,
    ResonantField,
    dissipation_rates,
    full_linear_rates,
)
from .errors import NumericalAbort
from .lattice import FourierField, LatticeSpec
from .resonance import ResonanceTable, divisor_statistics
from .types import ComplexArray, RealArray

_logger = logging.getLogger(__name__)

_NONLINEAR_CHUNK = 1024


@dataclasses.dataclass(frozen=True)
class StepControl:
    cfl_fraction: float = 0.1
    max_step: float = 1e-3
    checkpoint_dt: float = 1.0 / 64
    blowup_norm: float = 1e6
    blowup_s: float = 0.0
    min_step: float = 1e-12
    self_check: bool = False
    self_check_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        if not 0 < self.cfl_fraction <= 1:
            raise ValueError(f"cfl_fraction must be in (0, 1]: {self.cfl_fraction}")
        if not self.max_step > 0:
            raise ValueError(f"max_step must be positive: {self.max_step}")
        if not self.checkpoint_dt > 0:
            raise ValueError(f"checkpoint_dt must be positive: {self.checkpoint_dt}")

    def schedule(self, horizon: float) -> RealArray:
        if not horizon > 0:
            raise ValueError(f"horizon must be positive: {horizon}")
        intervals = max(1, math.ceil(horizon / self.checkpoint_dt - 1e-9))
        times: RealArray = np.linspace(0.0, horizon, intervals + 1)
        return times


@dataclasses.dataclass
class Trajectory:
    lattice: LatticeSpec
    params: EquationParams
    kind: str
    times: List[float] = dataclasses.field(default_factory=list)
    fields: List[ComplexArray] = dataclasses.field(default_factory=list)
    diagnostics: Dict[str, List[float]] = dataclasses.field(default_factory=dict)
    step_log: List[float] = dataclasses.field(default_factory=list)
    self_check_error: Optional[float] = None

    def append(self, tau: float, amps: ComplexArray, values: Dict[str, float]) -> None:
        if self.times and tau <= self.times[-1]:
            raise ValueError(f"checkpoint times must increase: {tau} after {self.times[-1]}")
        self.times.append(float(tau))
        self.fields.append(np.array(amps, dtype=np.complex128))
        for name, value in values.items():
            self.diagnostics.setdefault(name, []).append(value)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def times_array(self) -> RealArray:
        return np.asarray(self.times, dtype=np.float64)

    @property
    def fields_array(self) -> ComplexArray:
        return np.stack(self.fields) if self.fields else np.zeros((0, self.lattice.size))

    @property
    def actions_array(self) -> RealArray:
        fields = self.fields_array
        actions: RealArray = 0.5 * (fields.real ** 2 + fields.imag ** 2)
        return actions

    def field(self, index: int) -> FourierField:
        return FourierField(self.lattice, self.fields[index])

    @property
    def final(self) -> FourierField:
        return self.field(-1)

    def diagnostic(self, name: str) -> RealArray:
        return np.asarray(self.diagnostics[name], dtype=np.float64)


class Integrator(abc.ABC):
    """Integrating-factor RK4 for v' = L v + N(v) with diagonal L.

    Each step is the Lawson scheme anchored at the start of the step; it only multiplies by
    exp(L h) and exp(L h/2), so arbitrarily stiff dissipation is safe. Runs without a
    nonlinear term take the exact exponential flow over each checkpoint interval.
    """

    kind = ""

    def __init__(
        self,
        lattice: LatticeSpec,
        params: EquationParams,
        control: StepControl,
        diagnostics: DiagnosticSet,
    ) -> None:
        self._lattice = lattice
        self._params = params
        self._control = control
        self._diagnostics = diagnostics
        self._linear = self._linear_rates()

    @property
    def lattice(self) -> LatticeSpec:
        return self._lattice

    @abc.abstractmethod
    def _linear_rates(self) -> ComplexArray:
        ...

    @abc.abstractmethod
    def _nonlinear(self, amps: ComplexArray) -> ComplexArray:
        ...

    @abc.abstractmethod
    def step_size(self) -> float:
        ...

    def _advance(self, v: ComplexArray, span: float, steps: int) -> ComplexArray:
        if self._params.b == 0 and self._params.c == 0:
            exact: ComplexArray = np.exp(self._linear * span) * v
            return exact
        h = span / steps
        # both factors decay or rotate, so they may underflow to zero but never overflow
        full = np.exp(self._linear * h)
        half = np.exp(self._linear * (0.5 * h))
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(steps):
                k1 = self._nonlinear(v)
                k2 = self._nonlinear(half * (v + 0.5 * h * k1))
                k3 = self._nonlinear(half * v + 0.5 * h * k2)
                k4 = self._nonlinear(full * v + h * (half * k3))
                v = full * v + (h / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
                if not np.all(np.isfinite(v)):
                    raise FloatingPointError("non-finite amplitude")
        return v

    def _check_bounded(self, amps: ComplexArray) -> None:
        weights = self._lattice.weights(self._control.blowup_s)
        norm = float(np.sqrt(np.sum(weights * np.abs(amps) ** 2)))
        if not norm <= self._control.blowup_norm:
            raise FloatingPointError(f"norm {norm:.3e} exceeds the blow-up threshold")

    def run(self, v0: FourierField, horizon: float, step: Optional[float] = None) -> Trajectory:
        v0.lattice.require_same(self._lattice)
        times = self._control.schedule(horizon)
        target = self.step_size() if step is None else step
        _logger.info(
            f"integrating {self.kind} system to tau={horizon} with step <= {target:.3e}"
        )

        trajectory = Trajectory(self._lattice, self._params, self.kind)
        amps = np.array(v0.amps, dtype=np.complex128)
        trajectory.append(0.0, amps, self._diagnostics.evaluate(amps))
        for start, stop in zip(times[:-1], times[1:]):
            span = float(stop - start)
            steps = max(1, math.ceil(span / target - 1e-9))
            if span / steps < self._control.min_step:
                raise NumericalAbort(f"step underflow at tau={start:.6f}", trajectory)
            try:
                amps = self._advance(amps, span, steps)
                self._check_bounded(amps)
            except FloatingPointError as e:
                raise NumericalAbort(
                    f"{self.kind} run aborted in ({start:.6f}, {stop:.6f}]: {e}", trajectory
                ) from e
            trajectory.step_log.append(span / steps)
            trajectory.append(float(stop), amps, self._diagnostics.evaluate(amps))
        return trajectory


class FullIntegrator(Integrator):
    kind = "full"

    def __init__(
        self,
        lattice: LatticeSpec,
        params: EquationParams,
        control: StepControl,
        diagnostics: DiagnosticSet,
    ) -> None:
        super().__init__(lattice, params, control, diagnostics)
        self._nonlinearity = Nonlinearity(lattice, params)

    def _linear_rates(self) -> ComplexArray:
        return full_linear_rates(self._lattice, self._params)

    def _nonlinear(self, amps: ComplexArray) -> ComplexArray:
        return self._nonlinearity(amps)

    def max_frequency(self) -> int:
        return max(
            (
                divisor_statistics(self._lattice, n).max_frequency
                for n in self._params.active_degrees
            ),
            default=0,
        )

    def step_size(self) -> float:
        """min(cfl eps / omega_max, max_step): resolves the fastest phase exp(i omega tau/eps)."""
        omega = self.max_frequency()
        if omega == 0:
            return self._control.max_step
        return min(
            self._control.cfl_fraction * self._params.epsilon / omega, self._control.max_step
        )


class EffectiveIntegrator(Integrator):
    kind = "effective"

    def __init__(
        self,
        lattice: LatticeSpec,
        params: EquationParams,
        control: StepControl,
        diagnostics: DiagnosticSet,
        tables: Tuple[ResonanceTable, ResonanceTable],
    ) -> None:
        super().__init__(lattice, params, control, diagnostics)
        self._field = ResonantField(lattice, params, *tables)

    def _linear_rates(self) -> ComplexArray:
        rates: ComplexArray = dissipation_rates(self._lattice, self._params).astype(
            np.complex128
        )
        return rates

    def _nonlinear(self, amps: ComplexArray) -> ComplexArray:
        return self._field(amps)

    def step_size(self) -> float:
        return self._control.max_step


def integrate_full(
    v0: FourierField,
    horizon: float,
    params: EquationParams,
    control: StepControl,
    norms: Sequence[float] = (),
    diagnostics: Optional[DiagnosticSet] = None,
) -> Trajectory:
    if diagnostics is None:
        diagnostics = DiagnosticSet(v0.lattice, params, norms)
    return FullIntegrator(v0.lattice, params, control, diagnostics).run(v0, horizon)


def integrate_effective(
    a0: FourierField,
    horizon: float,
    params: EquationParams,
    tables: Tuple[ResonanceTable, ResonanceTable],
    control: StepControl,
    norms: Sequence[float] = (),
    hamiltonian_table: Optional[ResonanceTable] = None,
) -> Trajectory:
    # the effective equation does not depend on epsilon; diagnostics skip the energy for
    # the same reason
    diagnostics = DiagnosticSet(
        a0.lattice, params, norms, hamiltonian_table, include_energy=False
    )
    integrator = EffectiveIntegrator(a0.lattice, params, control, diagnostics, tables)
    trajectory = integrator.run(a0, horizon)
    if control.self_check:
        halved = integrator.run(a0, horizon, step=0.5 * integrator.step_size())
        error = float(np.max(np.abs(halved.fields_array - trajectory.fields_array)))
        trajectory.self_check_error = error
        if error > control.self_check_tolerance:
            _logger.warning(
                f"halving the effective step changed the trajectory by {error:.3e}"
            )
    return trajectory


class ResidualReport(NamedTuple):
    times: RealArray
    norms: RealArray
    sup: float
    reliable: bool


def residual_Y(
    trajectory: Trajectory,
    params: EquationParams,
    tables: Tuple[ResonanceTable, ResonanceTable],
    s1: float,
) -> ResidualReport:
    """|int_0^tau (Y(a, t) - R(a)) dt|_{s1} along the interaction picture of a full run.

    Y(a, tau) = Phi_{-tau Lambda/eps} P(Phi_{tau Lambda/eps} a) = Phi_{-tau Lambda/eps} P(v),
    so only P(v) at the checkpoints is needed. The integral is a trapezoid rule over the
    checkpoints and is flagged unreliable when the spacing exceeds eps / omega_max.
    """
    lattice = trajectory.lattice
    times = trajectory.times_array
    fields = trajectory.fields_array
    nonlinearity = Nonlinearity(lattice, params)
    field = ResonantField(lattice, params, *tables)

    lam = lattice.frequencies.astype(np.float64)
    back = np.exp(-1j * np.outer(times, lam) / params.epsilon)
    integrand = np.empty_like(fields)
    for start in range(0, len(times), _NONLINEAR_CHUNK):
        chunk = slice(start, start + _NONLINEAR_CHUNK)
        integrand[chunk] = back[chunk] * nonlinearity(fields[chunk])
    for i in range(len(times)):
        integrand[i] -= field(back[i] * fields[i])

    if len(times) > 1:
        running = cumulative_trapezoid(integrand, times, axis=0, initial=0)
    else:
        running = np.zeros_like(integrand)
    weights = lattice.weights(s1)
    norms = np.sqrt(np.sum(weights[None, :] * np.abs(running) ** 2, axis=1))

    omega = max(
        (divisor_statistics(lattice, n).max_frequency for n in params.active_degrees),
        default=0,
    )
    spacing = float(np.max(np.diff(times))) if len(times) > 1 else 0.0
    reliable = spacing * omega / params.epsilon <= 1.0
    if not reliable:
        _logger.warning(
            f"checkpoint spacing {spacing:.3e} is too coarse for eps={params.epsilon}; "
            "the residual is unreliable"
        )
    return ResidualReport(times, norms, float(np.max(norms, initial=0.0)), reliable)
