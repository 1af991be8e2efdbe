import math
import os
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .coherent_dynamics import DispersionLaw
from .operator_algebra import PhaseRule


class ScenarioName(str, Enum):
    HARMONIC_COHERENT = 'harmonic-coherent'
    QUENCH_SQUEEZE = 'quench-squeeze'
    FREE_SPREAD = 'free-spread'
    FEEDBACK = 'feedback'
    SAMPLE = 'sample'
    OPERATOR_CHECK = 'operator-check'


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class ConstantsSection(Section):
    hbar: float = Field(1.0, gt=0, description="reduced Planck constant")
    mass: float = Field(1.0, gt=0, description="particle mass")


class GridSection(Section):
    x_min: float = -20.0
    x_max: float = 20.0
    n_points: int = 1024

    @field_validator('n_points')
    def power_of_two(cls, v):
        if v < 16 or v & (v - 1):
            raise ValueError(f"n_points must be a power of two >= 16, got {v}")
        return v

    @model_validator(mode='after')
    def ordered_box(self):
        if not self.x_max > self.x_min:
            raise ValueError(f"x_max ({self.x_max}) must exceed x_min ({self.x_min})")
        return self


class ProfileSection(Section):
    name: str = Field('gaussian', description="built-in profile: gaussian or sech2")
    table: Optional[str] = Field(None, description="CSV of (xi, rho) pairs; overrides name")

    @field_validator('name')
    def known_profile(cls, v):
        if v not in ('gaussian', 'sech2'):
            raise ValueError(f"profile name must be gaussian or sech2, got {v!r}")
        return v

    @field_validator('table')
    def table_exists(cls, v):
        if v is not None and not os.path.isfile(v):
            raise ValueError(f"profile table {v!r} does not exist")
        return v


class PotentialSection(Section):
    kind: str = Field('harmonic', description="harmonic, time-harmonic, polynomial, poschl-teller or free")
    omega: float = Field(1.0, gt=0)
    omega_after: float = Field(2.0, gt=0)
    t_quench: float = 0.0
    center: float = 0.0
    coefficients: List[float] = Field(default_factory=list)
    width: float = Field(1.0, gt=0, description="Poschl-Teller inverse width a")
    lam: float = Field(1.0, gt=0, description="Poschl-Teller strength lambda")

    @field_validator('kind')
    def known_kind(cls, v):
        kinds = ('harmonic', 'time-harmonic', 'polynomial', 'poschl-teller', 'free')
        if v not in kinds:
            raise ValueError(f"potential kind must be one of {kinds}, got {v!r}")
        return v


class InitialSection(Section):
    q_mean: float = 0.0
    v_mean: float = 0.0
    dq: Optional[float] = Field(None, gt=0, description="defaults to the stationary dispersion of the well")
    dq_dot: float = 0.0
    S0: float = 0.0


class IntegratorSection(Section):
    dt: float = Field(1e-3, gt=0)
    t_span: Tuple[float, float] = (0.0, 2.0 * math.pi)
    law: DispersionLaw = DispersionLaw.PROJECTED
    initial: InitialSection = InitialSection()

    @model_validator(mode='after')
    def increasing_span(self):
        if not self.t_span[1] > self.t_span[0]:
            raise ValueError(f"t_span must be increasing, got {self.t_span}")
        return self


class OracleSection(Section):
    enabled: bool = True
    dt: float = Field(2.5e-4, gt=0)
    output_stride: int = Field(400, ge=1)
    leakage_threshold: float = Field(1e-8, gt=0)


class EnsembleSection(Section):
    n_paths: int = Field(100000, ge=100)
    dt: float = Field(1e-3, gt=0)
    seed: int = 0
    output_stride: int = Field(100, ge=1)
    backward_lag_steps: int = Field(10, ge=1)
    block_size: int = Field(4096, ge=1)
    n_workers: int = Field(4, ge=1)
    chi_square_bins: int = Field(50, ge=2)


class OperatorSection(Section):
    dq_ratio: float = Field(2.0, gt=0, description="requested dq / dq0 for the pure dilation check")
    dq: float = Field(0.7, gt=0, description="dispersion of the full-route comparison")
    dq_dot: float = Field(0.3, description="dispersion rate of the full-route comparison")
    sweep_points: int = Field(11, ge=2)
    sweep_f_max: float = Field(1.0, gt=0)
    sweep_g: float = 0.1
    sweep_n_points: int = 512
    phase_rule: PhaseRule = PhaseRule.PRINTED


class OutputSection(Section):
    directory: str = 'squeezelab-out'
    trajectory_stride: int = Field(10, ge=1)


class ScenarioConfig(Section):
    scenario: ScenarioName
    constants: ConstantsSection = ConstantsSection()
    grid: GridSection = GridSection()
    profile: ProfileSection = ProfileSection()
    potential: PotentialSection = PotentialSection()
    integrator: IntegratorSection = IntegratorSection()
    oracle: OracleSection = OracleSection()
    ensemble: EnsembleSection = EnsembleSection()
    operator: OperatorSection = OperatorSection()
    output: OutputSection = OutputSection()

    @model_validator(mode='after')
    def initial_dispersion_known(self):
        if self.integrator.initial.dq is None and self.potential.kind not in ('harmonic', 'time-harmonic'):
            raise ValueError(f"integrator.initial.dq is required for a {self.potential.kind} potential")
        return self

    def output_directory(self) -> str:
        return os.environ.get('SQUEEZELAB_OUT') or self.output.directory


SCENARIO_DEFAULTS: Dict[ScenarioName, Dict[str, Any]] = {
    ScenarioName.HARMONIC_COHERENT: {
        'integrator': {'t_span': [0.0, 20.0 * math.pi], 'initial': {'q_mean': 1.0}},
    },
    ScenarioName.QUENCH_SQUEEZE: {
        'potential': {'kind': 'time-harmonic', 'omega': 1.0, 'omega_after': 2.0, 't_quench': 0.0},
        'integrator': {'t_span': [0.0, 2.0 * math.pi]},
    },
    ScenarioName.FREE_SPREAD: {
        'grid': {'x_min': -40.0, 'x_max': 40.0, 'n_points': 2048},
        'potential': {'kind': 'free'},
        'integrator': {'t_span': [0.0, 5.0], 'initial': {'dq': math.sqrt(0.5)}},
    },
    ScenarioName.FEEDBACK: {
        'grid': {'x_min': -60.0, 'x_max': 60.0, 'n_points': 4096},
        'profile': {'name': 'sech2'},
        'integrator': {'t_span': [0.0, 2.0 * math.pi], 'initial': {'q_mean': 1.0}},
    },
    ScenarioName.SAMPLE: {
        'integrator': {'t_span': [0.0, 2.0 * math.pi], 'initial': {'q_mean': 1.0}},
    },
    ScenarioName.OPERATOR_CHECK: {
        'oracle': {'enabled': False},
    },
}


def _layered(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _layered(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(data: Dict[str, Any]) -> ScenarioConfig:
    """Layers the scenario's defaults under user values and validates the result."""
    if not isinstance(data, dict) or 'scenario' not in data:
        raise ValueError("config must be a mapping with a 'scenario' key")
    scenario = ScenarioName(data['scenario'])
    return ScenarioConfig.model_validate(_layered(SCENARIO_DEFAULTS[scenario], data))


def load_config(path) -> ScenarioConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    return build_config(data or {})


def default_config_yaml(scenario: ScenarioName) -> str:
    config = build_config({'scenario': ScenarioName(scenario).value})
    return yaml.safe_dump(config.model_dump(mode='json'), sort_keys=False)


class InvariantStatus(str, Enum):
    PASS = 'pass'
    FAIL = 'fail'
    SKIPPED = 'skipped'
    REPORTED = 'reported'


class InvariantEntry(BaseModel):
    name: str
    status: InvariantStatus
    measured: Optional[float] = None
    threshold: Optional[float] = None
    hard: bool = True
    detail: str = ''

    @field_validator('measured', 'threshold', mode='before')
    def finite_or_none(cls, v):
        if v is None:
            return None
        v = float(v)
        return v if math.isfinite(v) else None


class InvariantReport(BaseModel):
    scenario: ScenarioName
    entries: List[InvariantEntry] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.status is not InvariantStatus.FAIL for entry in self.entries if entry.hard)

    def names(self) -> List[str]:
        return [entry.name for entry in self.entries]
