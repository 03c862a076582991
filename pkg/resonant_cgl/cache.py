import logging
import os
import pathlib
import threading
from typing import Dict, Optional, Tuple

from .errors import LatticeMismatchError, TableFormatError
from .lattice import LatticeSpec
from .resonance import (
    DEFAULT_MEMORY_BUDGET,
    ResonanceTable,
    TableKind,
    build_hamiltonian_table,
    build_resonance_table,
    load_table,
    save_table,
)

_logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "RESONANT_CGL_CACHE"

_TableKey = Tuple[int, int, int, TableKind]


def resolve_cache_dir(override: Optional[str] = None) -> pathlib.Path:
    if override:
        return pathlib.Path(override)
    from_env = os.environ.get(CACHE_ENV_VAR)
    if from_env:
        return pathlib.Path(from_env)
    return pathlib.Path.home() / ".cache" / "resonant_cgl"


def table_filename(lattice: LatticeSpec, n: int, kind: TableKind) -> str:
    prefix = "res" if kind == TableKind.HAMILTONIAN else "r"
    return f"{prefix}_d{lattice.d}_K{lattice.cutoff}_n{n}.tbl"


class TableCache:
    """Resonance tables memoized in process and persisted under one directory.

    A corrupt or stale file is rebuilt and overwritten rather than failing the run.
    """

    def __init__(
        self,
        directory: Optional[pathlib.Path],
        jobs: int = 1,
        memory_budget: int = DEFAULT_MEMORY_BUDGET,
    ) -> None:
        self._lock = threading.Lock()
        self._directory = directory
        self._jobs = jobs
        self._memory_budget = memory_budget
        self._tables: Dict[_TableKey, ResonanceTable] = {}
        self._hits = 0

    @property
    def directory(self) -> Optional[pathlib.Path]:
        return self._directory

    @property
    def hits(self) -> int:
        return self._hits

    def path_for(self, lattice: LatticeSpec, n: int, kind: TableKind) -> Optional[pathlib.Path]:
        if self._directory is None:
            return None
        return self._directory / table_filename(lattice, n, kind)

    def _build(self, lattice: LatticeSpec, n: int, kind: TableKind) -> ResonanceTable:
        if kind == TableKind.HAMILTONIAN:
            return build_hamiltonian_table(lattice, n, self._memory_budget)
        return build_resonance_table(lattice, n, self._jobs, self._memory_budget)

    def _load(
        self, path: Optional[pathlib.Path], lattice: LatticeSpec, n: int, kind: TableKind
    ) -> Optional[ResonanceTable]:
        if path is None or not path.exists():
            return None
        try:
            table = load_table(path, lattice)
            table.require(lattice, n, kind)
            return table
        except (TableFormatError, LatticeMismatchError, ValueError) as e:
            _logger.warning(f"cached table '{path}' is unusable ({e}); rebuilding")
            return None

    def get(self, lattice: LatticeSpec, n: int, kind: TableKind) -> ResonanceTable:
        key = (lattice.d, lattice.cutoff, n, kind)
        with self._lock:
            table = self._tables.get(key)
            if table is not None:
                self._hits += 1
                return table

            path = self.path_for(lattice, n, kind)
            table = self._load(path, lattice, n, kind)
            if table is not None:
                self._hits += 1
                _logger.info(f"loaded cached table '{path}'")
            else:
                table = self._build(lattice, n, kind)
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    save_table(table, path)
                    _logger.info(f"saved table to '{path}'")
            self._tables[key] = table
            return table

    def vector_field_tables(
        self, lattice: LatticeSpec, p: int, q: int
    ) -> Tuple[ResonanceTable, ResonanceTable]:
        return (
            self.get(lattice, p, TableKind.VECTOR_FIELD),
            self.get(lattice, q, TableKind.VECTOR_FIELD),
        )

    def hamiltonian_table(self, lattice: LatticeSpec, q: int) -> ResonanceTable:
        return self.get(lattice, q, TableKind.HAMILTONIAN)
