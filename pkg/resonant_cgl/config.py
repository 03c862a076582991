import hashlib
import json
import pathlib
from typing import Any, Dict, List, Optional, Sequence

import tomlkit
from pydantic import BaseModel, Extra, ValidationError, root_validator, validator
from tomlkit.exceptions import TOMLKitError

from .dynamics import EquationParams
from .errors import ConfigurationError
from .integrators import StepControl
from .lattice import FourierField, LatticeSpec


class _Section(BaseModel):
    class Config:
        extra = Extra.forbid
        allow_mutation = False


class LatticeSection(_Section):
    d: int = 1
    cutoff: int = 4
    max_grid_points: int = 2 ** 24

    @validator("d")
    def _check_d(cls, v: int) -> int:
        if v < 1:
            raise ValueError("d must be at least 1")
        return v

    @validator("cutoff")
    def _check_cutoff(cls, v: int) -> int:
        if v < 0:
            raise ValueError("cutoff must be nonnegative")
        return v


class EquationSection(_Section):
    epsilon: List[float] = [0.1, 0.05, 0.025, 0.0125]
    mu: float = 0.0
    b: float = 0.0
    c: float = 1.0
    m: int = 1
    p: int = 1
    q: int = 1

    @validator("epsilon", pre=True)
    def _single_epsilon(cls, v: Any) -> Any:
        if isinstance(v, (int, float)):
            return [v]
        return v

    @validator("epsilon")
    def _check_epsilon(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one epsilon is required")
        if any(e <= 0 for e in v):
            raise ValueError("epsilon values must be positive")
        if any(a <= b for a, b in zip(v[:-1], v[1:])):
            raise ValueError("epsilon values must be sorted in strictly decreasing order")
        return v

    @validator("mu")
    def _check_mu(cls, v: float) -> float:
        if v < 0:
            raise ValueError("mu must be nonnegative")
        return v

    @validator("m", "p", "q")
    def _check_exponent(cls, v: int) -> int:
        if v < 1:
            raise ValueError("exponents must be positive integers")
        return v

    def params(self, epsilon: Optional[float] = None) -> EquationParams:
        return EquationParams(
            epsilon=self.epsilon[0] if epsilon is None else epsilon,
            mu=self.mu,
            b=self.b,
            c=self.c,
            m=self.m,
            p=self.p,
            q=self.q,
        )


# Default datum along the first lattice axis; its h^2 norm is about 0.91 when K >= 2.
DEFAULT_PROFILE: Dict[int, complex] = {0: 0.6, 1: 0.3, -1: 0.2j, 2: 0.1, -2: 0.05}


class Coefficient(_Section):
    mode: List[int]
    re: float = 0.0
    im: float = 0.0


class DatumSection(_Section):
    # None selects DEFAULT_PROFILE, laid out along the first axis and cut to the box
    coefficients: Optional[List[Coefficient]] = None


class HorizonSection(_Section):
    T: float = 1.0
    s: float = 2.0
    s1: float = 1.5
    checkpoints: int = 64

    @validator("T")
    def _check_horizon(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("T must be positive")
        return v

    @validator("checkpoints")
    def _check_checkpoints(cls, v: int) -> int:
        if v < 1:
            raise ValueError("at least one checkpoint interval is required")
        return v


class StepSection(_Section):
    cfl_fraction: float = 0.1
    max_step: float = 1e-3
    blowup_norm: float = 1e6
    self_check: bool = False

    @validator("cfl_fraction")
    def _check_cfl(cls, v: float) -> float:
        if not 0 < v <= 1:
            raise ValueError("cfl_fraction must be in (0, 1]")
        return v

    @validator("max_step", "blowup_norm")
    def _check_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be positive")
        return v


class OutputSection(_Section):
    out: str = "out"
    cache: Optional[str] = None
    jobs: int = 1
    include_fields: bool = False

    @validator("jobs")
    def _check_jobs(cls, v: int) -> int:
        if v < 1:
            raise ValueError("jobs must be at least 1")
        return v


class ToggleSection(_Section):
    full: bool = True
    effective: bool = True
    diagnostics: bool = True
    residual: bool = False
    conservation: bool = True


class RunConfig(_Section):
    lattice: LatticeSection = LatticeSection()
    equation: EquationSection = EquationSection()
    datum: DatumSection = DatumSection()
    horizon: HorizonSection = HorizonSection()
    step: StepSection = StepSection()
    output: OutputSection = OutputSection()
    toggles: ToggleSection = ToggleSection()

    @root_validator(skip_on_failure=True)
    def _check_consistency(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        lattice: LatticeSection = values["lattice"]
        equation: EquationSection = values["equation"]
        horizon: HorizonSection = values["horizon"]
        datum: DatumSection = values["datum"]

        if horizon.s1 > horizon.s:
            raise ValueError(f"s1={horizon.s1} must not exceed s={horizon.s}")
        if not horizon.s1 > lattice.d / 2:
            raise ValueError(f"s1={horizon.s1} must exceed d/2={lattice.d / 2}")

        box = LatticeSpec(d=lattice.d, cutoff=lattice.cutoff)
        for coefficient in datum.coefficients or []:
            if not box.contains(coefficient.mode):
                raise ValueError(f"datum mode {coefficient.mode} lies outside {box}")

        grid = (2 * max(equation.p, equation.q) + 2) * lattice.cutoff + 1
        if grid ** lattice.d > lattice.max_grid_points:
            raise ValueError(
                f"dealiased grid {grid}^{lattice.d} exceeds "
                f"max_grid_points={lattice.max_grid_points}"
            )
        return values

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    @property
    def lattice_spec(self) -> LatticeSpec:
        return LatticeSpec(d=self.lattice.d, cutoff=self.lattice.cutoff)

    @property
    def epsilons(self) -> Sequence[float]:
        return self.equation.epsilon

    def params(self, epsilon: Optional[float] = None) -> EquationParams:
        return self.equation.params(epsilon)

    def initial_datum(self) -> FourierField:
        lattice = self.lattice_spec
        if self.datum.coefficients is None:
            padding = (0,) * (lattice.d - 1)
            return FourierField.from_modes(
                lattice,
                {
                    (k,) + padding: value
                    for k, value in DEFAULT_PROFILE.items()
                    if abs(k) <= lattice.cutoff
                },
            )
        return FourierField.from_modes(
            lattice, {tuple(c.mode): complex(c.re, c.im) for c in self.datum.coefficients}
        )

    def control(self) -> StepControl:
        return StepControl(
            cfl_fraction=self.step.cfl_fraction,
            max_step=self.step.max_step,
            checkpoint_dt=self.horizon.T / self.horizon.checkpoints,
            blowup_norm=self.step.blowup_norm,
            blowup_s=self.horizon.s,
            self_check=self.step.self_check,
        )

    @property
    def norms(self) -> Sequence[float]:
        return sorted({self.horizon.s, self.horizon.s1})

    def config_hash(self) -> str:
        """SHA-256 of everything that influences results; output locations are excluded."""
        canonical = json.dumps(self.dict(exclude={"output"}), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.parse_obj(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration:\n{e}") from e


def load(path: Optional[pathlib.Path]) -> RunConfig:
    if path is None:
        return RunConfig.default()
    try:
        document = tomlkit.loads(path.read_text())
    except (OSError, TOMLKitError) as e:
        raise ConfigurationError(f"cannot read configuration '{path}': {e}") from e
    return parse(document.unwrap())
