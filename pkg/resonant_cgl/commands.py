import concurrent.futures
import contextlib
import dataclasses
import logging
import pathlib
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from . import artifacts
from .artifacts import ArtifactDirectory, NdjsonWriter
from .cache import TableCache, resolve_cache_dir
from .config import RunConfig
from .errors import ConfigurationError, NumericalAbort, ResourceBoundError
from .experiments import (
    ComparisonReport,
    compare_actions,
    conservation_suite,
    epsilon_ladder,
)
from .integrators import Trajectory, integrate_effective, integrate_full
from .lattice import ORDERING_VERSION
from .logger import ArtifactLogHandler
from .resonance import ResonanceTable, TableKind

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_RESOURCE = 4


class Commands:
    Resonances = "resonances"
    Simulate = "simulate"
    Compare = "compare"
    Conserve = "conserve"


_EXIT_CODES: Tuple[Tuple[type, int], ...] = (
    (ConfigurationError, EXIT_CONFIG),
    (NumericalAbort, EXIT_NUMERICAL),
    (ResourceBoundError, EXIT_RESOURCE),
)


def exit_code_for(error: Exception) -> int:
    for error_type, code in _EXIT_CODES:
        if isinstance(error, error_type):
            return code
    raise ValueError(f"no exit code is assigned to {type(error).__name__}") from error


@dataclasses.dataclass
class _Runs:
    effective: Optional[Trajectory]
    full: List[Trajectory]


class Application:
    def __init__(
        self,
        config: RunConfig,
        log_handler: Optional[ArtifactLogHandler] = None,
        force: bool = False,
        log_file: Optional[pathlib.Path] = None,
    ) -> None:
        self._config = config
        self._log_handler = log_handler
        self._log_file = log_file
        self._artifacts = ArtifactDirectory(
            pathlib.Path(config.output.out), config.config_hash(), force
        )
        self._cache = TableCache(
            resolve_cache_dir(config.output.cache), jobs=config.output.jobs
        )
        self._commands: Dict[str, Callable[[], Dict[str, Any]]] = {}

        self._register_command(Commands.Resonances, self.cmd_resonances)
        self._register_command(Commands.Simulate, self.cmd_simulate)
        self._register_command(Commands.Compare, self.cmd_compare)
        self._register_command(Commands.Conserve, self.cmd_conserve)

    def _register_command(self, name: str, handler: Callable[[], Dict[str, Any]]) -> None:
        self._commands[name] = handler

    @property
    def commands(self) -> List[str]:
        return list(self._commands)

    @property
    def cache(self) -> TableCache:
        return self._cache

    @property
    def artifacts(self) -> ArtifactDirectory:
        return self._artifacts

    def run(self, command: str) -> int:
        handler = self._commands.get(command)
        if handler is None:
            raise ValueError(f"unknown command: {command}")
        try:
            with self._run_log(command):
                handler()
        except (ConfigurationError, NumericalAbort, ResourceBoundError) as e:
            _logger.error(f"{command} failed: {e}")
            return exit_code_for(e)
        return EXIT_OK

    def _manifest(self, command: str) -> Dict[str, Any]:
        lattice = self._config.lattice_spec
        return artifacts.manifest_record(
            self._artifacts.config_hash,
            command=command,
            config=self._config.dict(exclude={"output"}),
            lattice={"d": lattice.d, "cutoff": lattice.cutoff, "ordering": ORDERING_VERSION},
        )

    @contextlib.contextmanager
    def _run_log(self, command: str) -> Iterator[None]:
        # the log depends on cache state and thread order and is never an artifact
        if self._log_handler is None or self._log_file is None:
            yield
            return
        self._log_file.parent.mkdir(parents=True, exist_ok=True)
        with NdjsonWriter(self._log_file) as writer:
            writer.write(self._manifest(command))
            writer.write(artifacts.timestamp_record())
            self._log_handler.writer = writer
            try:
                yield
            finally:
                self._log_handler.writer = None

    @contextlib.contextmanager
    def _stream(self, name: str, command: str) -> Iterator[NdjsonWriter]:
        with self._artifacts.ndjson(name) as writer:
            writer.write(self._manifest(command))
            writer.write(artifacts.timestamp_record())
            yield writer

    def _vector_field_tables(self) -> Tuple[ResonanceTable, ResonanceTable]:
        equation = self._config.equation
        return self._cache.vector_field_tables(
            self._config.lattice_spec, equation.p, equation.q
        )

    def _hamiltonian_table(self) -> Optional[ResonanceTable]:
        params = self._config.params()
        if not (self._config.toggles.diagnostics and params.is_hamiltonian):
            return None
        return self._cache.hamiltonian_table(self._config.lattice_spec, params.q)

    def cmd_resonances(self) -> Dict[str, Any]:
        lattice = self._config.lattice_spec
        equation = self._config.equation
        summary: Dict[str, Any] = {}
        for n in sorted({equation.p, equation.q}):
            table = self._cache.get(lattice, n, TableKind.VECTOR_FIELD)
            rows = [
                [" ".join(str(k) for k in lattice.mode(i)), int(c)]
                for i, c in enumerate(table.counts)
            ]
            self._artifacts.write_csv(f"resonances_n{n}.csv", artifacts.COUNT_COLUMNS, rows)
            summary[f"n={n}"] = {
                "total": table.total,
                "divisor_gap": table.divisor_gap,
                "max_frequency": table.max_frequency,
            }
            print(
                f"R(k, {n}) on d={lattice.d}, K={lattice.cutoff}: total {table.total}, "
                f"divisor gap {table.divisor_gap}, max frequency {table.max_frequency}"
            )
            for row in rows:
                print(f"  {row[0]}: {row[1]}")

        hamiltonian = self._cache.hamiltonian_table(lattice, equation.q)
        summary["res"] = {"total": hamiltonian.total}
        print(f"RES for q={equation.q}: {hamiltonian.total} tuples")
        print(f"cache hits: {self._cache.hits}")
        return summary

    def _integrate(self, writer: NdjsonWriter) -> _Runs:
        config = self._config
        v0 = config.initial_datum()
        control = config.control()
        norms = config.norms if config.toggles.diagnostics else ()
        hamiltonian = self._hamiltonian_table()

        effective: Optional[Trajectory] = None
        if config.toggles.effective:
            try:
                effective = integrate_effective(
                    v0,
                    config.horizon.T,
                    config.params(),
                    self._vector_field_tables(),
                    control,
                    norms,
                    hamiltonian,
                )
            except NumericalAbort as e:
                self._preserve(writer, e, "effective")
                raise
            self._write_run(writer, effective, "effective")

        full: List[Trajectory] = []
        if config.toggles.full:

            def run(epsilon: float) -> Trajectory:
                return integrate_full(v0, config.horizon.T, config.params(epsilon), control, norms)

            with concurrent.futures.ThreadPoolExecutor(config.output.jobs) as executor:
                futures = [executor.submit(run, e) for e in config.epsilons]
                for epsilon, future in zip(config.epsilons, futures):
                    try:
                        trajectory = future.result()
                    except NumericalAbort as e:
                        self._preserve(writer, e, f"full_eps{epsilon:g}")
                        raise
                    self._write_run(writer, trajectory, f"full_eps{epsilon:g}")
                    full.append(trajectory)
        return _Runs(effective, full)

    def _write_run(self, writer: NdjsonWriter, trajectory: Trajectory, label: str) -> None:
        artifacts.write_trajectory(writer, trajectory, self._config.output.include_fields)
        self._artifacts.write_csv(
            f"diagnostics_{label}.csv",
            artifacts.diagnostic_columns(trajectory),
            artifacts.diagnostic_rows(trajectory),
        )

    def _preserve(self, writer: NdjsonWriter, error: NumericalAbort, label: str) -> None:
        trajectory = error.trajectory
        if trajectory is None or len(trajectory) == 0:
            return
        _logger.error(
            f"{label} aborted; keeping {len(trajectory)} checkpoints up to "
            f"tau={trajectory.times[-1]}"
        )
        artifacts.write_trajectory(writer, trajectory, include_fields=True)
        writer.write({"type": "abort", "run": label, "message": str(error)})

    def cmd_simulate(self) -> Dict[str, Any]:
        with self._stream("trajectory.ndjson", Commands.Simulate) as writer:
            runs = self._integrate(writer)
            if self._config.toggles.conservation:
                for trajectory in self._trajectories(runs):
                    writer.write(artifacts.conservation_record(conservation_suite(trajectory)))
        print(f"wrote artifacts to '{self._artifacts.root}'")
        return {"runs": len(self._trajectories(runs))}

    def _trajectories(self, runs: _Runs) -> List[Trajectory]:
        return ([runs.effective] if runs.effective is not None else []) + runs.full

    def cmd_conserve(self) -> Dict[str, Any]:
        verdicts: Dict[str, Any] = {}
        with self._stream("conservation.ndjson", Commands.Conserve) as writer:
            runs = self._integrate(writer)
            for trajectory in self._trajectories(runs):
                report = conservation_suite(trajectory)
                writer.write(artifacts.conservation_record(report))
                label = trajectory.kind
                if trajectory.kind == "full":
                    label = f"full eps={trajectory.params.epsilon:g}"
                verdicts[label] = report.passed
                status = "pass" if report.passed else "FAIL"
                print(f"{label}: {status}")
                for check in report.checks:
                    print(
                        f"  {check.quantity} {check.kind}: {check.value:.3e} "
                        f"(tolerance {check.tolerance:.0e})"
                    )
                if not report.passed:
                    _logger.warning(f"conservation checks failed for {label}")
        return verdicts

    def cmd_compare(self) -> Dict[str, Any]:
        config = self._config
        if len(config.epsilons) >= 3:
            return self._compare_ladder()

        v0 = config.initial_datum()
        control = config.control()
        tables = self._vector_field_tables()
        effective = integrate_effective(
            v0, config.horizon.T, config.params(), tables, control, config.norms
        )
        reports: Dict[str, Any] = {}
        with self._stream("comparison.ndjson", Commands.Compare) as writer:
            for epsilon in config.epsilons:
                full = integrate_full(
                    v0, config.horizon.T, config.params(epsilon), control, config.norms
                )
                report = compare_actions(full, effective, config.horizon.s1)
                self._write_comparison(writer, report, epsilon)
                reports[f"{epsilon:g}"] = report.sup_error
                print(f"eps={epsilon:g}: sup action error {report.sup_error:.6e}")
        print("fewer than three epsilon values; exponent fit skipped")
        return reports

    def _write_comparison(
        self, writer: NdjsonWriter, report: ComparisonReport, epsilon: float
    ) -> None:
        for record in artifacts.comparison_records(report, epsilon):
            writer.write(record)
        self._artifacts.write_csv(
            f"comparison_eps{epsilon:g}.csv",
            artifacts.COMPARISON_COLUMNS,
            artifacts.comparison_rows(report),
        )

    def _compare_ladder(self) -> Dict[str, Any]:
        config = self._config
        result = epsilon_ladder(
            config.initial_datum(),
            config.params(),
            config.epsilons,
            config.horizon.T,
            self._vector_field_tables(),
            config.control(),
            config.horizon.s1,
            norms=config.norms,
            residual=config.toggles.residual,
            jobs=config.output.jobs,
        )
        with self._stream("comparison.ndjson", Commands.Compare) as writer:
            for rung in result.rungs:
                if rung.report is not None:
                    self._write_comparison(writer, rung.report, rung.epsilon)
            writer.write(artifacts.ladder_record(result))
        self._artifacts.write_csv(
            "ladder.csv", artifacts.LADDER_COLUMNS, artifacts.ladder_rows(result)
        )
        self._artifacts.write_csv(
            "ladder_plot.csv", artifacts.PLOT_COLUMNS, artifacts.plot_rows(result)
        )

        for epsilon, error in result.ladder:
            print(f"eps={epsilon:g}: sup action error {error:.6e}")
        if not result.complete:
            print("ladder incomplete: at least one run aborted")
        else:
            exponent = result.fitted_exponent
            print(
                "fitted exponent: "
                + ("skipped (degenerate errors)" if exponent is None else f"{exponent:.4f}")
            )
            print(f"monotone decay: {'yes' if result.monotone else 'no'}")
            print(f"sup_error / eps^(1/2) bounded: {'yes' if result.ratio_bounded else 'no'}")
            if config.toggles.residual:
                ratios = ", ".join(f"{r:.3f}" for r in result.residual_ratios)
                print(f"residual ratios per step: {ratios}")
        return artifacts.ladder_record(result)
