"""
Split-step Fourier propagator for i hbar dpsi/dt = [-hbar^2/2m d2/dx2 + Phi(x, t)] psi.

Each step applies exp(-i V dt / 2hbar) exp(-i T dt / hbar) exp(-i V dt / 2hbar)
with V sampled at the step midpoint, which keeps second order for
time-dependent potentials.
"""
import logging
import time
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .coherent_dynamics import TrajectoryRecord
from .exceptions import TimeGridMismatchError
from .grid import Grid1D, PhysConstants, WaveFunction, l2_distance, observables, overlap
from .potentials import PotentialModel
from .state_factory import StateProfile, assemble_state

logger = logging.getLogger(__name__)

ORACLE_LEAKAGE_THRESHOLD = 1e-8
CONVERGENCE_GATE = 1e-8


class PropagatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dt: float = Field(2.5e-4, gt=0)
    output_stride: int = Field(400, ge=1)
    potential: PotentialModel
    leakage_threshold: float = Field(ORACLE_LEAKAGE_THRESHOLD, gt=0)

    def halved(self) -> "PropagatorConfig":
        return self.model_copy(update={'dt': 0.5 * self.dt, 'output_stride': 2 * self.output_stride})


class PropagationResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    frames: List[WaveFunction]

    @property
    def final(self) -> WaveFunction:
        return self.frames[-1]

    def window(self, t_max: float) -> "PropagationResult":
        keep = self.times <= t_max + 1e-12
        return PropagationResult(times=self.times[keep], frames=[f for f, k in zip(self.frames, keep) if k])


class FidelityRow(BaseModel):
    t: float
    overlap: float
    density_l2: float
    q_mean_delta: float
    dq_delta: float


class FidelityReport(BaseModel):
    rows: List[FidelityRow]

    @property
    def min_overlap(self) -> float:
        return min(row.overlap for row in self.rows)

    @property
    def max_q_mean_delta(self) -> float:
        return max(abs(row.q_mean_delta) for row in self.rows)

    @property
    def max_dq_delta(self) -> float:
        return max(abs(row.dq_delta) for row in self.rows)


class ConvergenceReport(BaseModel):
    dt: float
    defect: float
    passed: bool


def _kinetic_factor(grid: Grid1D, constants: PhysConstants, dt: complex) -> np.ndarray:
    return np.exp(-1j * constants.hbar * grid.k ** 2 * dt / (2.0 * constants.mass))


def propagate(wf0: WaveFunction, cfg: PropagatorConfig, t_span: Tuple[float, float]) -> PropagationResult:
    t0, t1 = float(t_span[0]), float(t_span[1])
    n_steps = int(round((t1 - t0) / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - (t1 - t0)) > 1e-9 * max(1.0, t1 - t0):
        raise ValueError(f"t_span {t_span} is not a whole number of steps of {cfg.dt:g}")
    wf0.check_normalized()
    wf0.check_boundary(cfg.leakage_threshold)

    start_time = time.time()
    grid, hbar, dt = wf0.grid, wf0.constants.hbar, cfg.dt
    x = grid.x
    kinetic = _kinetic_factor(grid, wf0.constants, dt)
    potential = cfg.potential
    static_half = np.exp(-0.5j * potential.phi(x, t0) * dt / hbar) if potential.is_static else None

    psi = wf0.psi.copy()
    times, frames = [t0], [wf0]
    for step in range(1, n_steps + 1):
        t_mid = t0 + (step - 0.5) * dt
        half = static_half if static_half is not None else np.exp(-0.5j * potential.phi(x, t_mid) * dt / hbar)
        psi = half * np.fft.ifft(kinetic * np.fft.fft(half * psi))
        if step % cfg.output_stride == 0 or step == n_steps:
            frame = wf0.with_psi(psi.copy())
            frame.check_boundary(cfg.leakage_threshold)
            times.append(t0 + step * dt)
            frames.append(frame)

    norm_drift = abs(frames[-1].norm() - 1.0)
    logger.info(f"Propagated {n_steps} split steps (dt={dt:g}) to t={t1:g}, norm drift {norm_drift:.2e}, "
                f"took {time.time() - start_time:.2f} seconds")
    return PropagationResult(times=np.array(times), frames=frames)


def check_convergence(wf0: WaveFunction, cfg: PropagatorConfig, t_span: Tuple[float, float],
                      gate: float = CONVERGENCE_GATE) -> ConvergenceReport:
    """Final-state overlap defect between steps dt and dt/2."""
    coarse = propagate(wf0, cfg, t_span).final
    fine = propagate(wf0, cfg.halved(), t_span).final
    defect = 1.0 - abs(overlap(coarse, fine))
    if defect > gate:
        logger.warning(f"Propagator step {cfg.dt:g} is not converged: overlap defect {defect:.3e} > {gate:.0e}")
    return ConvergenceReport(dt=cfg.dt, defect=defect, passed=defect <= gate)


def convergence_order(wf0: WaveFunction, cfg: PropagatorConfig, t_span: Tuple[float, float]) -> float:
    """Observed order log2(e1/e2) from final states at dt, dt/2 and dt/4."""
    finals = [propagate(wf0, c, t_span).final for c in (cfg, cfg.halved(), cfg.halved().halved())]
    e1 = l2_distance(finals[0], finals[1])
    e2 = l2_distance(finals[1], finals[2])
    return float(np.log2(e1 / e2))


def compare_with_model(result: PropagationResult, profile: StateProfile, record: TrajectoryRecord) -> FidelityReport:
    rows = []
    for t, frame in zip(result.times, result.frames):
        try:
            index = record.index_of(float(t))
        except TimeGridMismatchError as e:
            raise TimeGridMismatchError(f"Frame at t={t:.12g} has no model counterpart: {e}") from e
        model = assemble_state(profile, record.state_at(index), frame.grid, frame.constants, check_identity=False)
        pde_obs, model_obs = observables(frame, ORACLE_LEAKAGE_THRESHOLD), observables(model)
        density_l2 = float(np.sqrt(frame.grid.quadrature((frame.density - model.density) ** 2)))
        rows.append(FidelityRow(t=float(t), overlap=abs(overlap(frame, model)), density_l2=density_l2,
                                q_mean_delta=pde_obs.q_mean - model_obs.q_mean, dq_delta=pde_obs.dq - model_obs.dq))
    return FidelityReport(rows=rows)


def relax_ground_state(potential: PotentialModel, grid: Grid1D, constants: PhysConstants = PhysConstants(),
                       dtau: float = 5e-4, tolerance: float = 1e-11, max_steps: int = 400000,
                       initial: Optional[WaveFunction] = None) -> WaveFunction:
    """Imaginary-time split-step relaxation of a static well to its ground state."""
    start_time = time.time()
    x = grid.x
    half = np.exp(-0.5 * potential.phi(x, 0.0) * dtau / constants.hbar)
    kinetic = np.exp(-constants.hbar * grid.k ** 2 * dtau / (2.0 * constants.mass))
    psi = initial.psi.copy() if initial is not None else np.exp(-0.5 * x ** 2).astype(complex)
    psi /= np.sqrt(grid.quadrature(np.abs(psi) ** 2))

    for step in range(1, max_steps + 1):
        updated = half * np.fft.ifft(kinetic * np.fft.fft(half * psi))
        updated /= np.sqrt(grid.quadrature(np.abs(updated) ** 2))
        change = np.sqrt(grid.quadrature(np.abs(updated - psi) ** 2))
        psi = updated
        if change < tolerance * dtau:
            break
    else:
        logger.warning(f"Imaginary-time relaxation stopped at {max_steps} steps with change {change:.3e}")

    psi = np.abs(psi.real).astype(complex)
    wf = WaveFunction.normalized(grid, psi, constants)
    logger.info(f"Relaxed ground state in {step} imaginary-time steps, took {time.time() - start_time:.2f} seconds")
    return wf
