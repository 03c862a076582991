from typing import Tuple

import numpy as np
import pytest

from resonant_cgl.diagnostics import DiagnosticSet
from resonant_cgl.dynamics import EquationParams, full_linear_rates
from resonant_cgl.errors import LatticeMismatchError, NumericalAbort
from resonant_cgl.experiments import conservation_suite
from resonant_cgl.integrators import (
    EffectiveIntegrator,
    FullIntegrator,
    StepControl,
    integrate_effective,
    integrate_full,
    residual_Y,
)
from resonant_cgl.lattice import (
    FourierField,
    LatticeSpec,
    actions,
    build_lattice,
    interaction_picture,
)
from resonant_cgl.resonance import ResonanceTable, build_resonance_table, divisor_statistics


def get_datum(lattice: LatticeSpec, scale: float = 1.0) -> FourierField:
    coefficients = {(0,): 0.6, (1,): 0.3, (-1,): 0.2j, (2,): 0.1, (-2,): 0.05}
    return FourierField.from_modes(
        lattice, {mode: scale * value for mode, value in coefficients.items()}
    )


def get_tables(lattice: LatticeSpec, n: int = 1) -> Tuple[ResonanceTable, ResonanceTable]:
    table = build_resonance_table(lattice, n)
    return table, table


def test_step_control() -> None:
    control = StepControl()
    times = control.schedule(1.0)
    assert len(times) == 65
    assert times[0] == 0.0 and times[-1] == 1.0
    assert len(StepControl(checkpoint_dt=0.3).schedule(1.0)) == 5

    with pytest.raises(ValueError):
        control.schedule(0.0)
    with pytest.raises(ValueError):
        StepControl(cfl_fraction=0.0)
    with pytest.raises(ValueError):
        StepControl(cfl_fraction=1.5)
    with pytest.raises(ValueError):
        StepControl(max_step=0.0)


@pytest.mark.parametrize("mu,m", [(0.0, 1), (1.0, 1), (0.0, 2), (1.0, 2)])
def test_linear_run_is_exact(mu: float, m: int) -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.05, mu=mu, b=0.0, c=0.0, m=m)
    v0 = get_datum(lattice)
    trajectory = integrate_full(v0, 1.0, params, StepControl())

    rates = full_linear_rates(lattice, params)
    for tau, amps in zip(trajectory.times, trajectory.fields):
        assert np.max(np.abs(amps - np.exp(rates * tau) * v0.amps)) <= 1e-12
    assert trajectory.times[0] == 0.0
    assert np.array_equal(trajectory.fields[0], v0.amps)
    assert all(np.diff(trajectory.times) > 0)


@pytest.mark.parametrize("d,cutoff,m", [(1, 10, 3), (1, 4, 6), (2, 4, 4)])
def test_stiff_linear_run_is_exact(d: int, cutoff: int, m: int) -> None:
    lattice = build_lattice(d, cutoff)
    params = EquationParams(epsilon=0.05, mu=1.0, b=0.0, c=0.0, m=m)
    v0 = FourierField(lattice, np.full(lattice.size, 0.01 + 0.02j))
    trajectory = integrate_full(v0, 0.25, params, StepControl())

    rates = full_linear_rates(lattice, params)
    assert len(trajectory) == 17
    for tau, amps in zip(trajectory.times, trajectory.fields):
        assert np.all(np.isfinite(amps))
        assert np.max(np.abs(amps - np.exp(rates * tau) * v0.amps)) <= 1e-12
    # only the zero mode survives the first checkpoint interval
    assert trajectory.final.coefficient((0,) * d) == v0.amps[lattice.index_of((0,) * d)]


def test_stiff_nonlinear_runs_stay_finite() -> None:
    lattice = build_lattice(1, 4)
    params = EquationParams(epsilon=0.05, mu=1.0, b=0.0, c=1.0, m=6)
    v0 = get_datum(lattice)
    control = StepControl()

    full = integrate_full(v0, 0.25, params, control)
    effective = integrate_effective(v0, 0.25, params, get_tables(lattice), control)
    for trajectory in (full, effective):
        assert len(trajectory) == 17
        assert np.all(np.isfinite(trajectory.fields_array))
        l2 = trajectory.diagnostic("l2_norm")
        assert np.all(np.diff(l2) <= 1e-10 * l2[0])
        assert abs(trajectory.final.coefficient((2,))) <= 1e-3


def test_full_step_size() -> None:
    lattice = build_lattice(1, 2)
    control = StepControl(cfl_fraction=0.1, max_step=1e-3)
    params = EquationParams(epsilon=0.05, c=1.0)
    diagnostics = DiagnosticSet(lattice, params)
    omega = divisor_statistics(lattice, 1).max_frequency
    integrator = FullIntegrator(lattice, params, control, diagnostics)
    assert integrator.step_size() == pytest.approx(min(0.1 * 0.05 / omega, 1e-3))

    linear = EquationParams(epsilon=0.05, b=0.0, c=0.0)
    integrator = FullIntegrator(lattice, linear, control, DiagnosticSet(lattice, linear))
    assert integrator.step_size() == 1e-3


def test_full_nls_conserves() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, mu=0.0, b=0.0, c=1.0)
    control = StepControl(cfl_fraction=0.05)
    trajectory = integrate_full(get_datum(lattice), 0.5, params, control, norms=(2.0,))

    l2 = trajectory.diagnostic("l2_norm")
    assert np.max(np.abs(l2 - l2[0])) / l2[0] <= 1e-8
    energy = trajectory.diagnostic("energy")
    assert np.max(np.abs(energy - energy[0])) / abs(energy[0]) <= 1e-6
    assert "norm_2" in trajectory.diagnostics

    # the interaction picture only rotates phases
    for tau, amps in zip(trajectory.times, trajectory.fields):
        v = FourierField(lattice, amps)
        rotated = interaction_picture(v, tau, params.epsilon)
        assert np.allclose(actions(rotated).actions, actions(v).actions, rtol=0, atol=1e-15)


def test_full_dissipative_is_monotone() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, mu=1.0, b=-1.0, c=-1.0, m=1)
    trajectory = integrate_full(get_datum(lattice), 0.5, params, StepControl())
    l2 = trajectory.diagnostic("l2_norm")
    assert np.all(np.diff(l2) <= 1e-10 * l2[0])
    assert l2[-1] < l2[0]
    report = conservation_suite(trajectory)
    assert report.passed
    assert [check.quantity for check in report.checks] == ["l2_norm"]


def test_full_dissipative_energy_decays() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, mu=1.0, b=-1.0, c=1.0, m=1)
    trajectory = integrate_full(get_datum(lattice), 0.5, params, StepControl())
    report = conservation_suite(trajectory)
    assert [check.quantity for check in report.checks] == ["l2_norm", "energy"]
    assert report.passed
    energy = trajectory.diagnostic("energy")
    assert energy[-1] < energy[0]


def test_blowup_aborts() -> None:
    lattice = build_lattice(1, 1)
    params = EquationParams(epsilon=0.1, b=50.0, c=0.0)
    v0 = FourierField.from_modes(lattice, {(0,): 1.0})
    with pytest.raises(NumericalAbort) as e:
        integrate_full(v0, 1.0, params, StepControl(blowup_norm=10.0))
    trajectory = e.value.trajectory
    assert trajectory is not None
    assert len(trajectory) >= 1
    assert trajectory.times[0] == 0.0
    assert np.all(np.isfinite(trajectory.fields_array))


def test_effective_single_mode() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, mu=0.0, b=0.0, c=1.0, q=1)
    a0 = FourierField.from_modes(lattice, {(0,): 2.0})
    trajectory = integrate_effective(a0, 1.0, params, get_tables(lattice), StepControl())
    final = trajectory.final.coefficient((0,))
    assert abs(abs(final) - 2.0) <= 1e-10
    assert abs(final - 2.0 * np.exp(4.0j)) <= 1e-8


def test_effective_1d_actions_frozen() -> None:
    lattice = build_lattice(1, 3)
    params = EquationParams(epsilon=0.1, mu=0.0, b=0.0, c=1.0)
    trajectory = integrate_effective(
        get_datum(lattice), 1.0, params, get_tables(lattice), StepControl()
    )
    moduli = np.abs(trajectory.fields_array)
    assert np.max(np.abs(moduli - moduli[0])) <= 1e-8


def test_effective_identity_flow() -> None:
    lattice = build_lattice(2, 1)
    params = EquationParams(epsilon=0.1, mu=0.0, b=0.0, c=0.0)
    a0 = FourierField.from_modes(lattice, {(0, 1): 0.5, (1, 1): -0.25j})
    trajectory = integrate_effective(a0, 0.5, params, get_tables(lattice), StepControl())
    for amps in trajectory.fields:
        assert np.array_equal(amps, a0.amps)


def test_effective_self_check() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, mu=0.2, b=0.0, c=1.0)
    control = StepControl(self_check=True, max_step=1e-2)
    trajectory = integrate_effective(
        get_datum(lattice), 0.5, params, get_tables(lattice), control
    )
    assert trajectory.self_check_error is not None
    assert trajectory.self_check_error <= 1e-8


def test_effective_integrator_needs_matching_tables() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.1, c=1.0, q=2)
    with pytest.raises(LatticeMismatchError):
        EffectiveIntegrator(
            lattice, params, StepControl(), DiagnosticSet(lattice, params), get_tables(lattice)
        )


def test_residual_vanishes_without_nonlinearity() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.05, b=0.0, c=0.0)
    trajectory = integrate_full(get_datum(lattice), 0.25, params, StepControl())
    report = residual_Y(trajectory, params, get_tables(lattice), 1.5)
    assert np.all(report.norms == 0.0)
    assert report.sup == 0.0


def test_residual_flags_coarse_spacing() -> None:
    lattice = build_lattice(1, 2)
    params = EquationParams(epsilon=0.01, c=1.0)
    trajectory = integrate_full(
        get_datum(lattice), 0.25, params, StepControl(checkpoint_dt=0.125)
    )
    report = residual_Y(trajectory, params, get_tables(lattice), 1.5)
    assert not report.reliable
    assert report.norms[0] == 0.0


def test_residual_shrinks_with_epsilon() -> None:
    lattice = build_lattice(1, 4)
    tables = get_tables(lattice)
    omega = divisor_statistics(lattice, 1).max_frequency
    v0 = get_datum(lattice)

    sups = []
    for epsilon in (0.05, 0.025):
        params = EquationParams(epsilon=epsilon, c=1.0)
        control = StepControl(checkpoint_dt=0.5 * 0.025 / omega)
        trajectory = integrate_full(v0, 0.5, params, control)
        report = residual_Y(trajectory, params, tables, 2.0)
        assert report.reliable
        assert report.norms[0] == 0.0
        sups.append(report.sup)
    assert sups[1] <= 0.8 * sups[0]
