from typing import Dict, Optional, Sequence

import numpy as np

from .dynamics import EquationParams, monomials
from .lattice import FourierField, LatticeSpec, dealiased_grid_size, spectral_synthesis
from .resonance import ResonanceTable, TableKind
from .types import ComplexArray


def mass(v: FourierField) -> float:
    """H_1 = sum_k |v_k|^2, which is also ||u||_0^2 for the normalized torus measure."""
    return float(np.sum(np.abs(v.amps) ** 2))


def quadratic_energy(v: FourierField) -> float:
    """H_2 = sum_k lambda_k |v_k|^2."""
    return float(np.sum(v.lattice.frequencies * np.abs(v.amps) ** 2))


def l2_norm(v: FourierField) -> float:
    return float(np.sqrt(mass(v)))


def potential_mean(v: FourierField, q: int) -> float:
    """(2pi)^{-d} int |u|^{2q+2} dx, exact on the grid dealiased for degree q."""
    grid = dealiased_grid_size(v.lattice, q)
    u = spectral_synthesis(v.amps, v.lattice, grid)
    return float(np.mean((u.real ** 2 + u.imag ** 2) ** (q + 1)))


def energy(v: FourierField, params: EquationParams) -> float:
    """1/2 sum lambda_k |v_k|^2 + eps c/(2q+2) <|u|^{2q+2}>.

    Conserved by the full equation when mu = b = 0 and nonincreasing when
    `EquationParams.energy_decays` holds.
    """
    coupling = params.epsilon * params.c / (2 * params.q + 2)
    return 0.5 * quadratic_energy(v) + coupling * potential_mean(v, params.q)


def resonant_monomial_sum(v: FourierField, table: ResonanceTable) -> complex:
    table.require(v.lattice, table.n, TableKind.HAMILTONIAN)
    return complex(np.sum(monomials(v.amps, table.tuples)))


def hamiltonian_Hres(v: FourierField, c: float, q: int, table: ResonanceTable) -> float:
    """c/(2q+2) times the sum over RES of v_{k1} conj(v_{k2}) ... conj(v_{k_{2q+2}}).

    RES is closed under swapping the barred and unbarred positions, so the sum is real up to
    rounding; only the real part is returned.
    """
    table.require(v.lattice, q, TableKind.HAMILTONIAN)
    return float(c / (2 * q + 2) * resonant_monomial_sum(v, table).real)


def norm_key(s: float) -> str:
    return f"norm_{s:g}"


class DiagnosticSet:
    """Scalar quantities recorded at every checkpoint of a trajectory."""

    def __init__(
        self,
        lattice: LatticeSpec,
        params: EquationParams,
        norms: Sequence[float] = (),
        hamiltonian_table: Optional[ResonanceTable] = None,
        include_energy: bool = True,
    ) -> None:
        if hamiltonian_table is not None:
            hamiltonian_table.require(lattice, params.q, TableKind.HAMILTONIAN)
        self._lattice = lattice
        self._params = params
        self._norms = tuple(norms)
        self._hamiltonian_table = hamiltonian_table
        self._include_energy = include_energy

    @property
    def names(self) -> Sequence[str]:
        names = [norm_key(s) for s in self._norms] + ["l2_norm", "H1", "H2"]
        if self._include_energy:
            names.append("energy")
        if self._hamiltonian_table is not None:
            names.append("H_res")
        return names

    def evaluate(self, amps: ComplexArray) -> Dict[str, float]:
        v = FourierField(self._lattice, amps)
        weights = {s: self._lattice.weights(s) for s in self._norms}
        values = {
            norm_key(s): float(np.sqrt(np.sum(w * np.abs(amps) ** 2)))
            for s, w in weights.items()
        }
        values["l2_norm"] = l2_norm(v)
        values["H1"] = mass(v)
        values["H2"] = quadratic_energy(v)
        if self._include_energy:
            values["energy"] = energy(v, self._params)
        if self._hamiltonian_table is not None:
            values["H_res"] = hamiltonian_Hres(
                v, self._params.c, self._params.q, self._hamiltonian_table
            )
        return values
