"""
Displacement and dynamical squeeze operators in the coordinate representation.

The squeeze generator is iM = f (2x d/dx + 1) + i (g/dq0^2) x^2. Its two parts
obey [A, B] = 4f B, so exp(A + B) = exp(A) exp(beta B) exactly with
beta = (1 - exp(-4f)) / 4f. The "printed" phase rule keeps the first-order
coefficient (1 - 2f) instead; both agree when f = 0 or g = 0.

The dense matrix oracle builds the generator from q (diagonal) and p
(spectral) and exponentiates it with scipy's scaling-and-squaring expm.
"""
import logging
import time
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import expm
from scipy.special import eval_hermite, factorial

from .exceptions import MatrixExponentialError, ProfileError, SupportViolationError
from .grid import (LEAKAGE_THRESHOLD, Grid1D, PhysConstants, WaveFunction, align_global_phase,
                   l2_distance, observables, overlap)
from .state_factory import StateProfile, TrajectoryState, assemble_state, ground_state_from_profile

logger = logging.getLogger(__name__)

MAX_ORACLE_POINTS = 2048
SINGULAR_SQUEEZE = 1e-12
RATIO_WARNING = 1e-3
DQ0_TOLERANCE = 1e-6


class PhaseRule(str, Enum):
    PRINTED = 'printed'
    BCH = 'bch'


class SqueezeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    f: float
    g: float
    dq0: float = Field(gt=0)
    dq: float = Field(gt=0)
    dq_dot: float = 0.0

    @model_validator(mode='after')
    def consistent_dilation(self):
        expected = -0.5 * np.log(self.dq / self.dq0)
        if abs(expected - self.f) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(f"f={self.f} does not match -ln(dq/dq0)/2 = {expected}")
        return self

    @classmethod
    def from_trajectory(cls, dq: float, dq_dot: float, dq0: float,
                        constants: PhysConstants = PhysConstants()) -> "SqueezeParams":
        f = -0.5 * np.log(dq / dq0)
        denominator = 1.0 - 2.0 * f
        if abs(denominator) < SINGULAR_SQUEEZE:
            raise ValueError(f"1 - 2f vanishes at dq/dq0 = {dq / dq0:.6g}; g is undefined")
        g = constants.mass / constants.hbar * dq_dot / (dq * denominator)
        return cls(f=f, g=g, dq0=dq0, dq=dq, dq_dot=dq_dot)

    @classmethod
    def from_f(cls, f: float, dq0: float, g: float = 0.0,
               constants: PhysConstants = PhysConstants()) -> "SqueezeParams":
        dq = dq0 * np.exp(-2.0 * f)
        dq_dot = g * constants.hbar / constants.mass * (1.0 - 2.0 * f) * dq
        return cls(f=f, g=g, dq0=dq0, dq=dq, dq_dot=dq_dot)

    def bch_factor(self) -> float:
        return 1.0 if self.f == 0.0 else float(-np.expm1(-4.0 * self.f) / (4.0 * self.f))

    def phase_coefficient(self, rule: PhaseRule = PhaseRule.PRINTED) -> float:
        """Coefficient c of the output phase c x^2 (radians per length^2)."""
        factor = (1.0 - 2.0 * self.f) if PhaseRule(rule) is PhaseRule.PRINTED else self.bch_factor()
        return self.g / self.dq0 ** 2 * factor * np.exp(4.0 * self.f)


class OperatorMatrix(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray
    description: str
    grid: Grid1D

    def apply(self, wf: WaveFunction) -> WaveFunction:
        return wf.with_psi(self.matrix @ wf.psi)

    def unitarity_defect(self, margin: float = 0.25) -> float:
        """max |U^H U - I| over columns in the central part of the box."""
        n = self.grid.n_points
        columns = slice(int(margin * n), int((1.0 - margin) * n))
        block = self.matrix[:, columns]
        gram = block.conj().T @ block
        return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))


class OperatorReport(BaseModel):
    phase_rule: PhaseRule
    f: float
    g: float
    requested_dq: float
    measured_dq: float
    pre_norm: float
    overlap: float
    modulus_max_diff: float
    closed_form_phase: float
    fitted_phase_operator: float
    fitted_phase_model: float
    target_phase: float
    phase_ratio: Optional[float]


class SweepPoint(BaseModel):
    f: float
    g: float
    phase_rule: PhaseRule
    distance: float
    norm_change: float


def derivative_matrix(grid: Grid1D) -> np.ndarray:
    """Real antisymmetric spectral d/dx."""
    n = grid.n_points
    multiplier = 1j * grid.k
    multiplier[n // 2] = 0.0
    D = np.fft.ifft(multiplier[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0).real
    return 0.5 * (D - D.T)


def _exponentiate(generator: np.ndarray, description: str, grid: Grid1D) -> OperatorMatrix:
    if grid.n_points > MAX_ORACLE_POINTS:
        raise ValueError(f"Dense operators need n_points <= {MAX_ORACLE_POINTS}, got {grid.n_points}")
    start_time = time.time()
    matrix = expm(generator)
    if not np.all(np.isfinite(matrix)):
        raise MatrixExponentialError(f"Matrix exponential of '{description}' is not finite")
    logger.info(f"Matrix exponential of {description} on {grid.n_points} points "
                f"took {time.time() - start_time:.2f} seconds")
    return OperatorMatrix(matrix=matrix, description=description, grid=grid)


def displace(wf: WaveFunction, q_shift: float, p_shift: float, s0_phase: float = 0.0) -> WaveFunction:
    """exp(i s0_phase) exp(i p_shift x / hbar) psi(x - q_shift), shift by band-limited translation."""
    shifted = wf.grid.shift(wf.psi, q_shift)
    psi = np.exp(1j * s0_phase) * np.exp(1j * p_shift * wf.grid.x / wf.constants.hbar) * shifted
    return wf.with_psi(psi).check_boundary()


def squeeze_closed_form(psi0: WaveFunction, params: SqueezeParams, phase_rule: PhaseRule = PhaseRule.PRINTED,
                        renormalize: bool = True) -> WaveFunction:
    """exp(f + i c x^2) psi0(exp(2f) x); renormalized unless asked otherwise."""
    grid = psi0.grid
    x = grid.x
    scale = np.exp(2.0 * params.f)
    coefficient = params.phase_coefficient(phase_rule)
    psi = np.exp(params.f + 1j * coefficient * x ** 2) * grid.interpolate(psi0.psi, scale * x)
    result = psi0.with_psi(psi)
    edge = result.boundary_amplitude()
    if edge > LEAKAGE_THRESHOLD:
        raise SupportViolationError(
            f"Squeezed state reaches the box edge with amplitude {edge:.3e} (f={params.f:.4f}); enlarge the box")
    if renormalize:
        pre_norm = result.norm()
        if abs(pre_norm - 1.0) > 1e-6:
            logger.info(f"Closed-form squeeze changed the norm to {pre_norm:.10f}; renormalizing")
        result = result.with_psi(result.psi / np.sqrt(pre_norm))
    return result


def squeeze_generator(params: SqueezeParams, grid: Grid1D, constants: PhysConstants = PhysConstants()) -> np.ndarray:
    """iM = (i f / hbar) {q, p} + i (g / dq0^2) q^2 as a dense matrix."""
    D = derivative_matrix(grid)
    X = np.diag(grid.x)
    P = -1j * constants.hbar * D
    anticommutator = X @ P + P @ X
    return 1j * params.f / constants.hbar * anticommutator + 1j * params.g / params.dq0 ** 2 * np.diag(grid.x ** 2)


def squeeze_matrix_oracle(params: SqueezeParams, grid: Grid1D,
                          constants: PhysConstants = PhysConstants()) -> OperatorMatrix:
    return _exponentiate(squeeze_generator(params, grid, constants),
                         f"squeeze(f={params.f:.6g}, g={params.g:.6g})", grid)


def dilation_matrix(f: float, grid: Grid1D) -> OperatorMatrix:
    """exp(2f * (1/2)(x d/dx + d/dx x)), the symmetrized form of (1/2)(1 + 2x d/dx)."""
    D = derivative_matrix(grid)
    X = np.diag(grid.x)
    return _exponentiate(f * (X @ D + D @ X), f"dilation(f={f:.6g})", grid)


def hermite_gaussian(grid: Grid1D, order: int, width: float) -> np.ndarray:
    y = grid.x / width
    norm = 1.0 / np.sqrt(2.0 ** order * factorial(order) * np.sqrt(np.pi) * width)
    return norm * eval_hermite(order, y) * np.exp(-0.5 * y ** 2)


def commutator_residual(grid: Grid1D, constants: PhysConstants = PhysConstants(), orders=(0, 1, 2, 3),
                        width: Optional[float] = None, interior: float = 0.5) -> float:
    """
    Relative size of ([{q,p}, q^2] + 4 i hbar q^2) v against 4 hbar q^2 v for
    Hermite-Gaussian test vectors v, measured on rows with |x| <= interior * x_max.
    """
    D = derivative_matrix(grid)
    X = np.diag(grid.x)
    P = -1j * constants.hbar * D
    A = X @ P + P @ X
    Q2 = np.diag(grid.x ** 2)
    defect = A @ Q2 - Q2 @ A + 4j * constants.hbar * Q2
    width = width or grid.length / 16.0
    rows = np.abs(grid.x - 0.5 * (grid.x_min + grid.x_max)) <= 0.5 * interior * grid.length
    worst = 0.0
    for order in orders:
        v = hermite_gaussian(grid, order, width)
        scale = np.linalg.norm(4.0 * constants.hbar * (Q2 @ v)[rows])
        worst = max(worst, float(np.linalg.norm((defect @ v)[rows]) / scale))
    return worst


def fit_quadratic_phase(wf: WaveFunction, floor: float = 1e-6) -> Tuple[float, float, float]:
    """Density-weighted least-squares fit phase(x) = c2 x^2 + c1 x + c0; returns (c2, c1, c0)."""
    rho = wf.density
    region = rho > floor * rho.max()
    x = wf.grid.x[region]
    phase = np.unwrap(np.angle(wf.psi[region]))
    c2, c1, c0 = np.polyfit(x, phase, 2, w=np.sqrt(rho[region]))
    return float(c2), float(c1), float(c0)


def oracle_equivalence(psi0: WaveFunction, params: SqueezeParams, phase_rule: PhaseRule = PhaseRule.PRINTED,
                       oracle: Optional[OperatorMatrix] = None) -> Tuple[float, float]:
    """
    L2 distance between the closed form and exp(iM) psi0 after normalization and
    global-phase alignment, plus the norm change exp(iM) itself produced.
    """
    oracle = oracle or squeeze_matrix_oracle(params, psi0.grid, psi0.constants)
    closed = squeeze_closed_form(psi0, params, phase_rule)
    exact = oracle.apply(psi0)
    norm_change = exact.norm() - psi0.norm()
    exact = exact.with_psi(exact.psi / np.sqrt(exact.norm()))
    return l2_distance(closed, align_global_phase(closed, exact)), float(norm_change)


def oracle_sweep(profile: StateProfile, dq0: float, f_values, g: float = 0.0,
                 phase_rules=(PhaseRule.PRINTED, PhaseRule.BCH), n_points: int = 512,
                 box_factor: float = 12.0) -> List[SweepPoint]:
    """Closed form against the matrix oracle over f, on a box sized to the wider of input and output."""
    constants = profile.constants
    points = []
    for f in f_values:
        half_width = box_factor * max(dq0, dq0 * np.exp(-2.0 * f))
        grid = Grid1D(x_min=-half_width, x_max=half_width, n_points=n_points)
        psi0 = ground_state_from_profile(profile, dq0, grid, constants)
        params = SqueezeParams(f=float(f), g=g, dq0=dq0, dq=dq0 * np.exp(-2.0 * f))
        oracle = squeeze_matrix_oracle(params, grid, constants)
        for rule in phase_rules:
            distance, norm_change = oracle_equivalence(psi0, params, rule, oracle)
            points.append(SweepPoint(f=float(f), g=g, phase_rule=rule, distance=distance, norm_change=norm_change))
    return points


def _reference_dispersion(psi0: WaveFunction, profile: StateProfile) -> float:
    """dq of psi0, which must match the profile's ground-state dispersion when it carries one."""
    measured = observables(psi0).dq
    if profile.dq0 is not None and abs(measured - profile.dq0) > DQ0_TOLERANCE * profile.dq0:
        raise ProfileError(f"psi0 has dq {measured:.10g} but profile '{profile.name}' has dq0 {profile.dq0:.10g}")
    return measured


def squeezed_state(psi0: WaveFunction, traj: TrajectoryState, profile: StateProfile,
                   phase_rule: PhaseRule = PhaseRule.PRINTED) -> WaveFunction:
    """D(<q>, m<v>, S0) S(dq) psi0, squeezing relative to the dq0 of psi0."""
    constants = psi0.constants
    dq0 = _reference_dispersion(psi0, profile)
    params = SqueezeParams.from_trajectory(traj.dq, traj.dq_dot, dq0, constants)
    squeezed = squeeze_closed_form(psi0, params, phase_rule)
    return displace(squeezed, traj.q_mean, constants.mass * traj.v_mean, traj.S0 / constants.hbar)


def compare_operator_route(psi0: WaveFunction, traj: TrajectoryState, profile: StateProfile,
                           phase_rule: PhaseRule = PhaseRule.PRINTED) -> OperatorReport:
    constants = psi0.constants
    m, hbar = constants.mass, constants.hbar
    dq0 = _reference_dispersion(psi0, profile)
    params = SqueezeParams.from_trajectory(traj.dq, traj.dq_dot, dq0, constants)
    pre_norm = squeeze_closed_form(psi0, params, phase_rule, renormalize=False).norm()

    operator_state = squeezed_state(psi0, traj, profile, phase_rule)
    model_state = assemble_state(profile, traj, psi0.grid, constants, check_identity=False)
    target = m * traj.dq_dot / (2.0 * hbar * traj.dq)
    closed = params.phase_coefficient(phase_rule)
    ratio = closed / target if target != 0.0 else None
    if ratio is not None and abs(ratio - 1.0) > RATIO_WARNING:
        logger.warning(f"Operator-route phase curvature {closed:.6g} differs from the model's {target:.6g} "
                       f"(ratio {ratio:.6g}, rule {PhaseRule(phase_rule).value})")

    return OperatorReport(
        phase_rule=phase_rule, f=params.f, g=params.g, requested_dq=traj.dq,
        measured_dq=observables(operator_state).dq, pre_norm=pre_norm,
        overlap=abs(overlap(operator_state, model_state)),
        modulus_max_diff=float(np.max(np.abs(np.abs(operator_state.psi) - np.abs(model_state.psi)))),
        closed_form_phase=closed,
        fitted_phase_operator=fit_quadratic_phase(operator_state)[0],
        fitted_phase_model=fit_quadratic_phase(model_state)[0],
        target_phase=target, phase_ratio=ratio)
