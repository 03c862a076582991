import pathlib

import numpy as np
import pytest

from resonant_cgl.cache import CACHE_ENV_VAR, TableCache, resolve_cache_dir, table_filename
from resonant_cgl.lattice import build_lattice
from resonant_cgl.resonance import TableKind, save_table


def test_resolve_cache_dir(monkeypatch: pytest.MonkeyPatch, tmp_path: pathlib.Path) -> None:
    monkeypatch.delenv(CACHE_ENV_VAR, raising=False)
    assert resolve_cache_dir() == pathlib.Path.home() / ".cache" / "resonant_cgl"

    monkeypatch.setenv(CACHE_ENV_VAR, str(tmp_path / "env"))
    assert resolve_cache_dir() == tmp_path / "env"
    assert resolve_cache_dir(str(tmp_path / "flag")) == tmp_path / "flag"


def test_table_filename() -> None:
    lattice = build_lattice(2, 3)
    assert table_filename(lattice, 1, TableKind.VECTOR_FIELD) == "r_d2_K3_n1.tbl"
    assert table_filename(lattice, 2, TableKind.HAMILTONIAN) == "res_d2_K3_n2.tbl"


def test_cache_persists(tmp_path: pathlib.Path) -> None:
    lattice = build_lattice(1, 2)
    cache = TableCache(tmp_path)
    built = cache.get(lattice, 1, TableKind.VECTOR_FIELD)
    assert cache.hits == 0
    assert (tmp_path / "r_d1_K2_n1.tbl").exists()

    # memoized in process
    assert cache.get(lattice, 1, TableKind.VECTOR_FIELD) is built
    assert cache.hits == 1

    # a fresh cache reads the file back
    other = TableCache(tmp_path)
    loaded = other.get(lattice, 1, TableKind.VECTOR_FIELD)
    assert other.hits == 1
    assert np.array_equal(loaded.tuples, built.tuples)

    first, second = other.vector_field_tables(lattice, 1, 1)
    assert first is loaded and second is loaded
    hamiltonian = other.hamiltonian_table(lattice, 1)
    assert hamiltonian.kind == TableKind.HAMILTONIAN
    assert (tmp_path / "res_d1_K2_n1.tbl").exists()


def test_cache_rebuilds_corrupt_file(tmp_path: pathlib.Path) -> None:
    lattice = build_lattice(1, 2)
    path = tmp_path / "r_d1_K2_n1.tbl"
    path.write_bytes(b"garbage")

    cache = TableCache(tmp_path)
    table = cache.get(lattice, 1, TableKind.VECTOR_FIELD)
    assert cache.hits == 0
    assert table.total > 0
    assert path.read_bytes() != b"garbage"


def test_cache_rebuilds_stale_file(tmp_path: pathlib.Path) -> None:
    lattice = build_lattice(1, 2)
    # a table for another degree stored under this name
    seed = TableCache(None).get(lattice, 2, TableKind.VECTOR_FIELD)
    save_table(seed, tmp_path / "r_d1_K2_n1.tbl")

    table = TableCache(tmp_path).get(lattice, 1, TableKind.VECTOR_FIELD)
    assert table.n == 1


def test_memory_only_cache() -> None:
    cache = TableCache(None)
    lattice = build_lattice(1, 1)
    assert cache.path_for(lattice, 1, TableKind.VECTOR_FIELD) is None
    assert cache.get(lattice, 1, TableKind.VECTOR_FIELD).total == 15
