import csv
import datetime
import json
import math
import pathlib
import threading
from typing import IO, Any, Dict, Iterable, List, Mapping, Optional, Sequence

from . import __version__
from .errors import ConfigurationError
from .experiments import ComparisonReport, ConservationReport, LadderResult
from .integrators import Trajectory
from .lattice import FourierField, field_to_record

# Frozen column orders; downstream scripts index by position.
DIAGNOSTIC_COLUMNS = ("tau", "l2_norm", "H1", "H2", "energy", "H_res")
COMPARISON_COLUMNS = ("tau", "action_error")
LADDER_COLUMNS = ("epsilon", "sup_error", "fitted_exponent", "residual_sup")
PLOT_COLUMNS = ("log_epsilon", "log_sup_error")
COUNT_COLUMNS = ("target", "count")

_HASH_PREFIX = "# config_hash="


class NdjsonWriter:
    """One JSON object per line; safe to share between threads."""

    def __init__(self, path: pathlib.Path) -> None:
        self._lock = threading.Lock()
        self._path = path
        self._fp: Optional[IO[str]] = None

    @property
    def path(self) -> pathlib.Path:
        return self._path

    def __enter__(self) -> "NdjsonWriter":
        self._fp = self._path.open("w")
        return self

    def __exit__(self, *args: Any) -> None:
        self.close()

    def close(self) -> None:
        with self._lock:
            if self._fp is not None:
                self._fp.close()
                self._fp = None

    def write(self, record: Mapping[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            if self._fp is None:
                raise RuntimeError(f"'{self._path}' is not open")
            self._fp.write(line + "\n")


def _existing_hash(path: pathlib.Path) -> Optional[str]:
    with path.open() as fp:
        first = fp.readline().strip()
    if first.startswith(_HASH_PREFIX):
        return first[len(_HASH_PREFIX) :]
    try:
        record = json.loads(first)
    except ValueError:
        return None
    value = record.get("config_hash") if isinstance(record, dict) else None
    return str(value) if value is not None else None


class ArtifactDirectory:
    """Output directory whose files all carry the hash of the configuration that made them."""

    def __init__(self, root: pathlib.Path, config_hash: str, force: bool = False) -> None:
        self._root = root
        self._config_hash = config_hash
        self._force = force

    @property
    def root(self) -> pathlib.Path:
        return self._root

    @property
    def config_hash(self) -> str:
        return self._config_hash

    def path(self, name: str) -> pathlib.Path:
        path = self._root / name
        if path.exists() and not self._force:
            recorded = _existing_hash(path)
            if recorded != self._config_hash:
                raise ConfigurationError(
                    f"refusing to overwrite '{path}' written by config {recorded}; "
                    "use --force to replace it"
                )
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def write_csv(
        self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> pathlib.Path:
        path = self.path(name)
        with path.open("w", newline="") as fp:
            fp.write(f"{_HASH_PREFIX}{self._config_hash}\n")
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_format(v) for v in row])
        return path

    def ndjson(self, name: str) -> NdjsonWriter:
        return NdjsonWriter(self.path(name))


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def manifest_record(config_hash: str, **fields: Any) -> Dict[str, Any]:
    record = {"type": "manifest", "config_hash": config_hash, "version": __version__}
    record.update(fields)
    return record


def timestamp_record(now: Optional[datetime.datetime] = None) -> Dict[str, Any]:
    # the only wall-clock value in any artifact; kept out of every other record
    now = now or datetime.datetime.now(datetime.timezone.utc)
    return {"type": "timestamp", "created": now.isoformat()}


def checkpoint_records(
    trajectory: Trajectory, include_fields: bool = False
) -> Iterable[Dict[str, Any]]:
    for i, tau in enumerate(trajectory.times):
        record: Dict[str, Any] = {
            "type": "checkpoint",
            "kind": trajectory.kind,
            "epsilon": trajectory.params.epsilon if trajectory.kind == "full" else None,
            "index": i,
            "tau": tau,
            "diagnostics": {k: v[i] for k, v in trajectory.diagnostics.items()},
        }
        if include_fields:
            field = FourierField(trajectory.lattice, trajectory.fields[i])
            record["field"] = field_to_record(field)
        yield record


def write_trajectory(
    writer: NdjsonWriter, trajectory: Trajectory, include_fields: bool = False
) -> None:
    for record in checkpoint_records(trajectory, include_fields):
        writer.write(record)


def diagnostic_columns(trajectory: Trajectory) -> List[str]:
    norms = sorted(
        (k for k in trajectory.diagnostics if k.startswith("norm_")),
        key=lambda k: float(k[len("norm_") :]),
    )
    fixed = [c for c in DIAGNOSTIC_COLUMNS[1:] if c in trajectory.diagnostics]
    return ["tau"] + fixed + norms


def diagnostic_rows(trajectory: Trajectory) -> List[List[Any]]:
    columns = diagnostic_columns(trajectory)[1:]
    return [
        [tau] + [trajectory.diagnostics[c][i] for c in columns]
        for i, tau in enumerate(trajectory.times)
    ]


def comparison_rows(report: ComparisonReport) -> List[List[Any]]:
    return [[float(t), float(e)] for t, e in zip(report.times, report.errors)]


def comparison_records(report: ComparisonReport, epsilon: float) -> Iterable[Dict[str, Any]]:
    for i, (tau, error) in enumerate(zip(report.times, report.errors)):
        yield {
            "type": "comparison",
            "epsilon": epsilon,
            "index": i,
            "tau": float(tau),
            "action_error": float(error),
        }


def ladder_rows(result: LadderResult) -> List[List[Any]]:
    rows = []
    for rung in result.rungs:
        rows.append([rung.epsilon, rung.sup_error, result.fitted_exponent, rung.residual_sup])
    return rows


def plot_rows(result: LadderResult) -> List[List[Any]]:
    return [
        [math.log(rung.epsilon), math.log(rung.sup_error)]
        for rung in result.rungs
        if not rung.aborted and rung.sup_error > 0
    ]


def conservation_record(report: ConservationReport) -> Dict[str, Any]:
    return {
        "type": "conservation",
        "mode": report.mode,
        "passed": report.passed,
        "checks": [dict(c._asdict(), passed=c.passed) for c in report.checks],
    }


def ladder_record(result: LadderResult) -> Dict[str, Any]:
    return {
        "type": "ladder",
        "complete": result.complete,
        "monotone": result.monotone,
        "fitted_exponent": result.fitted_exponent,
        "ratio_spread": result.ratio_spread,
        "ratio_bounded": result.ratio_bounded,
        "residual_ratios": result.residual_ratios,
        "rungs": [
            {
                "epsilon": r.epsilon,
                "aborted": r.aborted,
                "sup_error": None if r.aborted else r.sup_error,
                "residual_sup": r.residual_sup,
                "residual_reliable": r.residual_reliable,
            }
            for r in result.rungs
        ],
    }

