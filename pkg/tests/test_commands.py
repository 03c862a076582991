import json
import logging
import pathlib
from typing import Any, Dict, List

import pytest

from resonant_cgl.__main__ import main, setup_logger
from resonant_cgl.commands import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    Application,
    Commands,
    exit_code_for,
)
from resonant_cgl.config import RunConfig, parse
from resonant_cgl.errors import ConfigurationError, NumericalAbort, ResourceBoundError
from resonant_cgl.logger import ArtifactLogHandler


def get_config(root: pathlib.Path, **sections: Dict[str, Any]) -> RunConfig:
    data: Dict[str, Dict[str, Any]] = {
        "lattice": {"d": 1, "cutoff": 2},
        "equation": {"epsilon": [0.1], "c": 1.0},
        "horizon": {"T": 0.25, "checkpoints": 4},
        "output": {"out": str(root / "out"), "cache": str(root / "cache")},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return parse(data)


def read_records(path: pathlib.Path) -> List[Dict[str, Any]]:
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_exit_codes() -> None:
    assert exit_code_for(ConfigurationError("x")) == 2
    assert exit_code_for(NumericalAbort("x")) == 3
    assert exit_code_for(ResourceBoundError("x", 1)) == 4
    with pytest.raises(ValueError):
        exit_code_for(RuntimeError("x"))


def test_resonances(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture) -> None:
    config = get_config(tmp_path, lattice={"cutoff": 1})
    assert Application(config).run(Commands.Resonances) == EXIT_OK
    out = capsys.readouterr().out
    assert "total 15" in out
    assert "cache hits: 0" in out

    lines = (tmp_path / "out" / "resonances_n1.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={config.config_hash()}"
    assert lines[1] == "target,count"
    assert lines[2:] == ["-1,5", "0,5", "1,5"]

    # tables are read back from the cache directory by a new process
    assert Application(config).run(Commands.Resonances) == EXIT_OK
    assert "cache hits: 2" in capsys.readouterr().out


def test_resonances_single_mode_lattice(
    tmp_path: pathlib.Path, capsys: pytest.CaptureFixture
) -> None:
    config = get_config(tmp_path, lattice={"cutoff": 0}, equation={"p": 1, "q": 2})
    assert Application(config).run(Commands.Resonances) == EXIT_OK
    out = capsys.readouterr().out
    assert "R(k, 1) on d=1, K=0: total 1" in out
    assert "R(k, 2) on d=1, K=0: total 1" in out
    assert "RES for q=2: 1 tuples" in out

    for n in (1, 2):
        lines = (tmp_path / "out" / f"resonances_n{n}.csv").read_text().splitlines()
        assert lines[2:] == ["0,1"]


def test_simulate(tmp_path: pathlib.Path) -> None:
    config = get_config(tmp_path, equation={"b": 0.0, "c": 0.0})
    assert Application(config).run(Commands.Simulate) == EXIT_OK

    out = tmp_path / "out"
    records = read_records(out / "trajectory.ndjson")
    assert records[0]["type"] == "manifest"
    assert records[0]["config_hash"] == config.config_hash()
    assert records[1]["type"] == "timestamp"
    assert all("created" not in r for i, r in enumerate(records) if i != 1)

    checkpoints = [r for r in records if r["type"] == "checkpoint"]
    assert [r["kind"] for r in checkpoints] == ["effective"] * 5 + ["full"] * 5
    conservation = [r for r in records if r["type"] == "conservation"]
    assert [r["mode"] for r in conservation] == ["effective", "full"]
    assert all(r["passed"] for r in conservation)

    header = (out / "diagnostics_full_eps0.1.csv").read_text().splitlines()[1]
    assert header == "tau,l2_norm,H1,H2,energy,norm_1.5,norm_2"
    header = (out / "diagnostics_effective.csv").read_text().splitlines()[1]
    assert header == "tau,l2_norm,H1,H2,H_res,norm_1.5,norm_2"

    assert not (out / "run.log.ndjson").exists()


def test_blowup_exit_code(tmp_path: pathlib.Path) -> None:
    config = get_config(
        tmp_path,
        lattice={"cutoff": 1},
        equation={"b": 50.0, "c": 0.0},
        datum={"coefficients": [{"mode": [0], "re": 1.0}]},
        horizon={"T": 1.0},
        step={"blowup_norm": 10.0},
        toggles={"effective": False},
    )
    assert Application(config).run(Commands.Simulate) == EXIT_NUMERICAL

    records = read_records(tmp_path / "out" / "trajectory.ndjson")
    assert records[-1]["type"] == "abort"
    assert records[-1]["run"] == "full_eps0.1"
    checkpoints = [r for r in records if r["type"] == "checkpoint"]
    assert checkpoints[0]["tau"] == 0.0
    assert "field" in checkpoints[0]


def test_refuses_foreign_artifacts(tmp_path: pathlib.Path) -> None:
    linear = {"b": 0.0, "c": 0.0}
    first = get_config(tmp_path, equation=linear)
    assert Application(first).run(Commands.Simulate) == EXIT_OK

    second = get_config(tmp_path, equation=linear, horizon={"T": 0.5})
    assert Application(second).run(Commands.Simulate) == EXIT_CONFIG
    records = read_records(tmp_path / "out" / "trajectory.ndjson")
    assert records[0]["config_hash"] == first.config_hash()

    assert Application(second, force=True).run(Commands.Simulate) == EXIT_OK
    records = read_records(tmp_path / "out" / "trajectory.ndjson")
    assert records[0]["config_hash"] == second.config_hash()


def test_compare_single_epsilon(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture) -> None:
    config = get_config(tmp_path)
    assert Application(config).run(Commands.Compare) == EXIT_OK
    out = capsys.readouterr().out
    assert "eps=0.1: sup action error" in out
    assert "exponent fit skipped" in out

    lines = (tmp_path / "out" / "comparison_eps0.1.csv").read_text().splitlines()
    assert lines[1] == "tau,action_error"
    assert len(lines) == 2 + 5
    assert lines[2] == "0.0,0.0"

    records = read_records(tmp_path / "out" / "comparison.ndjson")
    assert records[0]["type"] == "manifest"
    assert records[0]["config_hash"] == config.config_hash()
    assert records[1]["type"] == "timestamp"
    rows = records[2:]
    assert [r["type"] for r in rows] == ["comparison"] * 5
    assert [r["tau"] for r in rows] == [0.0, 0.0625, 0.125, 0.1875, 0.25]
    assert rows[0]["action_error"] == 0.0
    assert [float(line.split(",")[1]) for line in lines[2:]] == [
        r["action_error"] for r in rows
    ]


def test_compare_ladder(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture) -> None:
    config = get_config(tmp_path, equation={"epsilon": [0.1, 0.05, 0.025]})
    assert Application(config).run(Commands.Compare) == EXIT_OK
    out = capsys.readouterr().out
    assert "fitted exponent" in out
    assert "monotone decay" in out

    root = tmp_path / "out"
    ladder = (root / "ladder.csv").read_text().splitlines()
    assert ladder[1] == "epsilon,sup_error,fitted_exponent,residual_sup"
    assert [line.split(",")[0] for line in ladder[2:]] == ["0.1", "0.05", "0.025"]
    assert (root / "ladder_plot.csv").read_text().splitlines()[1] == "log_epsilon,log_sup_error"
    for epsilon in ("0.1", "0.05", "0.025"):
        assert (root / f"comparison_eps{epsilon}.csv").exists()

    records = read_records(root / "comparison.ndjson")
    assert [r["type"] for r in records] == ["manifest", "timestamp"] + ["comparison"] * 15 + [
        "ladder"
    ]
    rows = records[2:-1]
    assert [r["epsilon"] for r in rows] == [0.1] * 5 + [0.05] * 5 + [0.025] * 5
    assert [r["index"] for r in rows[:5]] == [0, 1, 2, 3, 4]
    assert rows[0]["action_error"] == 0.0
    assert rows[4]["tau"] == 0.25
    assert len(records[-1]["rungs"]) == 3


def test_conserve(tmp_path: pathlib.Path, capsys: pytest.CaptureFixture) -> None:
    config = get_config(tmp_path, equation={"mu": 1.0, "b": -1.0, "c": -1.0})
    assert Application(config).run(Commands.Conserve) == EXIT_OK
    out = capsys.readouterr().out
    assert "full eps=0.1: pass" in out
    assert "l2_norm monotone" in out

    records = read_records(tmp_path / "out" / "conservation.ndjson")
    verdicts = [r for r in records if r["type"] == "conservation"]
    assert [r["mode"] for r in verdicts] == ["effective", "full"]


def test_deterministic_artifacts(tmp_path: pathlib.Path) -> None:
    def run(name: str) -> pathlib.Path:
        config = get_config(
            tmp_path, equation={"epsilon": [0.1, 0.05]}, output={"out": str(tmp_path / name)}
        )
        log_file = tmp_path / f"{name}.log.ndjson"
        assert Application(config, ArtifactLogHandler(), log_file=log_file).run(
            Commands.Simulate
        ) == EXIT_OK
        return tmp_path / name

    # the first run builds the tables, the second reads them from the shared cache
    first, second = run("first"), run("second")

    def without_timestamps(path: pathlib.Path) -> List[Dict[str, Any]]:
        return [r for r in read_records(path) if r["type"] != "timestamp"]

    names = sorted(path.name for path in first.iterdir())
    assert names == sorted(path.name for path in second.iterdir())
    assert "trajectory.ndjson" in names
    for name in names:
        if name.endswith(".ndjson"):
            assert without_timestamps(first / name) == without_timestamps(second / name)
        else:
            assert (first / name).read_bytes() == (second / name).read_bytes()


def test_log_file(tmp_path: pathlib.Path) -> None:
    package_logger = logging.getLogger("resonant_cgl")
    level = package_logger.level
    handler = ArtifactLogHandler()
    package_logger.setLevel(logging.INFO)
    package_logger.addHandler(handler)
    try:
        config = get_config(tmp_path, equation={"b": 0.0, "c": 0.0})
        log_file = tmp_path / "logs" / "run.ndjson"
        assert Application(config, handler, log_file=log_file).run(Commands.Simulate) == EXIT_OK
    finally:
        package_logger.removeHandler(handler)
        package_logger.setLevel(level)

    records = read_records(log_file)
    assert records[0]["type"] == "manifest"
    assert records[0]["command"] == "simulate"
    assert records[1]["type"] == "timestamp"
    assert any(
        r["type"] == "log" and r["message"].startswith("integrating full system")
        for r in records[2:]
    )
    assert handler.writer is None
    assert not (tmp_path / "out" / "run.log.ndjson").exists()


def test_main(tmp_path: pathlib.Path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("[lattice]\nunknown = 1\n")
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")])
    assert e.value.code == EXIT_CONFIG

    path = tmp_path / "good.toml"
    path.write_text("[lattice]\ncutoff = 2\n\n[equation]\nepsilon = 0.1\n")
    with pytest.raises(SystemExit) as e:
        main(
            [
                "resonances",
                "--config",
                str(path),
                "--out",
                str(tmp_path / "out"),
                "--cache",
                str(tmp_path / "cache"),
                "--jobs",
                "2",
            ]
        )
    assert e.value.code == EXIT_OK
    assert (tmp_path / "out" / "resonances_n1.csv").exists()
    assert (tmp_path / "cache" / "r_d1_K2_n1.tbl").exists()


def test_main_default_datum_on_small_lattice(tmp_path: pathlib.Path) -> None:
    for cutoff in (0, 1):
        path = tmp_path / f"k{cutoff}.toml"
        path.write_text(f"[lattice]\ncutoff = {cutoff}\n")
        out = tmp_path / f"out{cutoff}"
        with pytest.raises(SystemExit) as e:
            main(["resonances", "--config", str(path), "--out", str(out), "--cache", str(tmp_path)])
        assert e.value.code == EXIT_OK
        assert (out / "resonances_n1.csv").exists()


def test_setup_logger_replaces_handlers() -> None:
    package_logger = logging.getLogger("resonant_cgl")
    level = package_logger.level
    try:
        first = setup_logger("INFO")
        second = setup_logger("DEBUG")
        assert first is not second
        assert first not in package_logger.handlers
        assert second in package_logger.handlers
        assert len(package_logger.handlers) == 2
        assert package_logger.level == logging.DEBUG
    finally:
        for handler in list(package_logger.handlers):
            package_logger.removeHandler(handler)
        package_logger.setLevel(level)
