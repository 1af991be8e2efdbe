"""
Madelung decomposition psi = sqrt(rho) exp(iS/hbar) and residuals of the
continuity and Hamilton-Jacobi-Madelung equations.

Velocities come from the spectral log-derivative of psi rather than from
derivatives of log(rho) and S, so the tails never need a separate unwrap.
"""
import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import PhaseUnwrapError
from .grid import LEAKAGE_THRESHOLD, Grid1D, PhysConstants, WaveFunction, observables

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-14
REPORT_FLOOR = 1e-10
UNWRAP_LIMIT = np.pi / 2


class HydroFields(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid1D
    constants: PhysConstants
    rho: np.ndarray
    S: np.ndarray
    u: np.ndarray
    v: np.ndarray
    du: np.ndarray
    current: np.ndarray
    valid: np.ndarray
    rho_floor: float = RHO_FLOOR

    def report_mask(self, report_floor: float = REPORT_FLOOR) -> np.ndarray:
        return self.valid & (self.rho > report_floor)

    def expectation(self, field: np.ndarray) -> float:
        return float(self.grid.quadrature(self.rho * field))

    def spread(self, field: np.ndarray) -> float:
        mean = self.expectation(field)
        return float(np.sqrt(self.expectation((field - mean) ** 2)))

    @property
    def log_density_gradient(self) -> np.ndarray:
        """d(ln rho)/dx from the spectral derivative of rho, zero outside the valid region."""
        gradient = np.zeros_like(self.rho)
        drho = self.grid.derivative(self.rho, 1)
        gradient[self.valid] = drho[self.valid] / self.rho[self.valid]
        return gradient


class FieldResidual(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    field: np.ndarray
    mask: np.ndarray
    max_abs: float
    l2: float


class ChainReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    heisenberg: float = Field(description="(Dq Dp)^2 of the quantum state")
    osmotic: float = Field(description="(m Dq Du)^2 from the osmotic velocity")
    bound: float = Field(description="hbar^2 / 4")
    tolerance: float = 1e-8

    @property
    def holds(self) -> bool:
        return self.heisenberg >= self.osmotic - self.tolerance and self.osmotic >= self.bound - self.tolerance


class MomentumDecomposition(BaseModel):
    model_config = ConfigDict(frozen=True)

    dp_squared: float
    velocity_sum: float
    mean_u: float

    @property
    def relative_error(self) -> float:
        return abs(self.dp_squared - self.velocity_sum) / self.dp_squared


def _extend_constant(field: np.ndarray, valid: np.ndarray) -> np.ndarray:
    # constant beyond the outermost valid points, linear across interior gaps
    index = np.arange(field.size)
    return np.interp(index, index[valid], field[valid])


def _unwrapped_phase(psi: np.ndarray, valid: np.ndarray) -> np.ndarray:
    valid_index = np.flatnonzero(valid)
    increments = np.angle(psi[valid_index[1:]] * np.conj(psi[valid_index[:-1]]))
    adjacent = np.diff(valid_index) == 1
    too_steep = adjacent & (np.abs(increments) > UNWRAP_LIMIT)
    if np.any(too_steep):
        worst = float(np.max(np.abs(increments[too_steep])))
        raise PhaseUnwrapError(
            f"Phase increment {worst:.3f} rad between adjacent points exceeds {UNWRAP_LIMIT:.3f}; refine the grid")
    phase = np.zeros(psi.size)
    phase[valid_index] = np.angle(psi[valid_index[0]]) + np.concatenate(([0.0], np.cumsum(increments)))
    return phase


def decompose(wf: WaveFunction, rho_floor: float = RHO_FLOOR, S_pin: float = 0.0) -> HydroFields:
    """
    Madelung fields of a normalized state. S is pinned to S_pin at the grid
    point nearest <q>; u, v and du/dx are held constant outside rho > rho_floor.
    """
    if rho_floor <= 0:
        raise ValueError(f"rho_floor must be positive, got {rho_floor}")
    wf.check_normalized()
    grid, psi = wf.grid, wf.psi
    scale = wf.constants.hbar / wf.constants.mass
    rho = wf.density
    valid = rho > rho_floor
    if valid.sum() < 2:
        raise PhaseUnwrapError("Fewer than two grid points carry density above the floor")

    dpsi = grid.derivative(psi, 1)
    d2psi = grid.derivative(psi, 2)
    r1 = np.zeros_like(psi)
    r2 = np.zeros_like(psi)
    r1[valid] = dpsi[valid] / psi[valid]
    r2[valid] = d2psi[valid] / psi[valid]

    u = _extend_constant(scale * r1.real, valid)
    v = _extend_constant(scale * r1.imag, valid)
    du = _extend_constant(scale * (r2 - r1 ** 2).real, valid)
    current = scale * np.imag(np.conj(psi) * dpsi)

    phase = _unwrapped_phase(psi, valid)
    q_mean = grid.quadrature(grid.x * rho)
    pin = int(np.argmin(np.abs(grid.x - q_mean)))
    if not valid[pin]:
        pin = int(np.argmax(rho))
    S = wf.constants.hbar * (phase - phase[pin]) + S_pin
    S = _extend_constant(S, valid)

    return HydroFields(grid=grid, constants=wf.constants, rho=rho, S=S, u=u, v=v, du=du,
                       current=current, valid=valid, rho_floor=rho_floor)


def drifts(h: HydroFields) -> Tuple[np.ndarray, np.ndarray]:
    """Forward and backward drifts v + u and v - u."""
    return h.v + h.u, h.v - h.u


def _residual(h: HydroFields, field: np.ndarray, report_floor: float) -> FieldResidual:
    mask = h.report_mask(report_floor)
    masked = np.where(mask, field, 0.0)
    return FieldResidual(field=masked, mask=mask, max_abs=float(np.max(np.abs(masked))),
                         l2=float(np.sqrt(h.grid.quadrature(masked ** 2))))


def continuity_residual(h: HydroFields, rho_dot: np.ndarray, report_floor: float = REPORT_FLOOR) -> FieldResidual:
    rho_dot = h.grid.check_shape(rho_dot)
    return _residual(h, rho_dot + h.grid.derivative(h.current, 1), report_floor)


def hjm_residual(h: HydroFields, S_dot: np.ndarray, potential, t: float,
                 report_floor: float = REPORT_FLOOR) -> FieldResidual:
    S_dot = h.grid.check_shape(S_dot)
    m, hbar = h.constants.mass, h.constants.hbar
    field = S_dot + 0.5 * m * h.v ** 2 - 0.5 * m * h.u ** 2 - 0.5 * hbar * h.du + potential.phi(h.grid.x, t)
    return _residual(h, field, report_floor)


def density_time_derivative(prev: WaveFunction, nxt: WaveFunction, dt: float) -> np.ndarray:
    """Centered difference of the densities of two frames 2 dt apart."""
    return (nxt.density - prev.density) / (2.0 * dt)


def phase_time_derivative(prev: WaveFunction, nxt: WaveFunction, dt: float) -> np.ndarray:
    """Centered dS/dt at fixed x from two frames 2 dt apart; free of unwrap ambiguity for small dt."""
    return prev.constants.hbar * np.angle(nxt.psi * np.conj(prev.psi)) / (2.0 * dt)


def chain_inequality(wf: WaveFunction, tolerance: float = 1e-8,
                     leakage_threshold: float = LEAKAGE_THRESHOLD) -> ChainReport:
    obs = observables(wf, leakage_threshold)
    h = decompose(wf)
    m, hbar = wf.constants.mass, wf.constants.hbar
    return ChainReport(heisenberg=obs.uncertainty_product ** 2,
                       osmotic=(m * obs.dq * h.spread(h.u)) ** 2,
                       bound=0.25 * hbar ** 2,
                       tolerance=tolerance)


def momentum_decomposition(wf: WaveFunction) -> MomentumDecomposition:
    obs = observables(wf)
    h = decompose(wf)
    m = wf.constants.mass
    return MomentumDecomposition(dp_squared=obs.dp ** 2,
                                 velocity_sum=m ** 2 * (h.spread(h.u) ** 2 + h.spread(h.v) ** 2),
                                 mean_u=h.expectation(h.u))
