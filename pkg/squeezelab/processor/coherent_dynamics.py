"""
Center and dispersion dynamics of generalized coherent states, and the
feedback potential that keeps a prescribed trajectory coherent.

The state vector is (q_mean, v_mean, dq, dq_dot, S0). The center follows the
Ehrenfest law, S0 is closed by requiring the Hamilton-Jacobi-Madelung equation
to hold at xi = 0, and dq follows one of two dispersion laws:

    projected       m dq dq'' = C_G / dq^2 - <(x - q) dPhi/dx>
    energy-balance  dq'' = 2 / (m dq) [ -<Phi> + (m/2) v^2 - (m/2) K / dq^2 ]
"""
import logging
import time
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr, model_validator
from scipy.interpolate import CubicSpline

from .exceptions import (ExtrapolationError, IntegrationError, QuadratureConvergenceError,
                         SingularDispersionError, TimeGridMismatchError)
from .grid import Grid1D
from .potentials import PotentialModel
from .state_factory import QUADRATURE_TOLERANCE, StateProfile, TrajectoryState

logger = logging.getLogger(__name__)

SINGULAR_DQ = 1e-6
MAX_RECORD_DT = 1e-2
STATE_FIELDS = ('q_mean', 'v_mean', 'dq', 'dq_dot', 'S0')
COEFFICIENT_FIELDS = STATE_FIELDS + ('v_dot', 'dq_ddot', 'S0_dot')
RECORD_COLUMNS = ('t', 'q_mean', 'v_mean', 'dq', 'dq_dot', 'S0', 'v_dot', 'dq_ddot', 'S0_dot',
                  'phi_mean', 'energy', 'uncertainty_product', 'f', 'g', 'feedback_residual')


class DispersionLaw(str, Enum):
    PROJECTED = 'projected'
    ENERGY_BALANCE = 'energy-balance'

    @classmethod
    def _missing_(cls, value):
        return LAW_ALIASES.get(value) if isinstance(value, str) else None


LAW_ALIASES = {'paper-eq22': DispersionLaw.ENERGY_BALANCE}


class TrajectoryRate(BaseModel):
    model_config = ConfigDict(frozen=True)

    q_dot: float
    v_dot: float
    dq_dot: float
    dq_ddot: float
    S0_dot: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q_dot, self.v_dot, self.dq_dot, self.dq_ddot, self.S0_dot])


class TrajectoryRecord(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    law: DispersionLaw
    t: np.ndarray
    q_mean: np.ndarray
    v_mean: np.ndarray
    dq: np.ndarray
    dq_dot: np.ndarray
    S0: np.ndarray
    v_dot: np.ndarray
    dq_ddot: np.ndarray
    S0_dot: np.ndarray
    phi_mean: np.ndarray
    energy: np.ndarray
    uncertainty_product: np.ndarray
    f: np.ndarray
    g: np.ndarray
    feedback_residual: np.ndarray

    def __len__(self) -> int:
        return self.t.size

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def state_at(self, index: int) -> TrajectoryState:
        return TrajectoryState(q_mean=float(self.q_mean[index]), v_mean=float(self.v_mean[index]),
                               dq=float(self.dq[index]), dq_dot=float(self.dq_dot[index]),
                               S0=float(self.S0[index]), t=float(self.t[index]))

    def index_of(self, t: float, tolerance: float = 1e-9) -> int:
        index = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[index] - t) > tolerance * max(1.0, abs(t)):
            raise TimeGridMismatchError(f"No recorded time matches t={t:.12g} (nearest {self.t[index]:.12g})")
        return index

    def columns(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in RECORD_COLUMNS}

    def splines(self, names=COEFFICIENT_FIELDS) -> Dict[str, CubicSpline]:
        return {name: CubicSpline(self.t, getattr(self, name)) for name in names}

    def coefficients_at(self, index: int) -> Dict[str, float]:
        return {name: float(getattr(self, name)[index]) for name in COEFFICIENT_FIELDS}


def ermakov_quench_variance(t, dq0: float, omega: float, hbar: float = 1.0, mass: float = 1.0):
    """dq^2(t) after a sudden switch to frequency omega, starting from rest at dq0."""
    t = np.asarray(t, dtype=float)
    return (dq0 * np.cos(omega * t)) ** 2 + (hbar / (2.0 * mass * dq0 * omega) * np.sin(omega * t)) ** 2


def free_spread_variance(t, dq0: float, hbar: float = 1.0, mass: float = 1.0):
    t = np.asarray(t, dtype=float)
    return dq0 ** 2 + (hbar * t / (2.0 * mass * dq0)) ** 2


def action_rate(mass: float, c: Dict[str, float], x):
    """dS/dt at fixed x for the assembled phase, from trajectory values and rates."""
    q, v, dq, dq_dot = c['q_mean'], c['v_mean'], c['dq'], c['dq_dot']
    y = x - q
    return (mass * c['v_dot'] * x - mass * y * v * dq_dot / dq
            + 0.5 * mass * y ** 2 * (c['dq_ddot'] / dq - dq_dot ** 2 / dq ** 2) + c['S0_dot'])


def density_rate(profile: StateProfile, c: Dict[str, float], x):
    """d rho/dt at fixed x for rho = rho~(xi) / dq moving along the trajectory."""
    m, hbar = profile.constants.mass, profile.constants.hbar
    v, dq, dq_dot = c['v_mean'], c['dq'], c['dq_dot']
    xi = (x - c['q_mean']) / dq
    rho = np.clip(profile.rho_shape(xi), 0.0, None) / dq
    return -rho * (2.0 * m / hbar * profile.G(xi) * (v + xi * dq_dot) / dq + dq_dot / dq)


def potential_expectations(profile: StateProfile, traj: TrajectoryState, potential: PotentialModel, t: float,
                           check_convergence: bool = True) -> Tuple[float, float, float]:
    """(<Phi>, <dPhi/dx>, <(x - q) dPhi/dx>) over rho = rho~(xi) / dq."""
    closed = potential.closed_form_expectations(traj.q_mean, traj.dq, t)
    if closed is not None:
        return tuple(float(value) for value in closed)

    def integrate(nodes, weights):
        x = traj.q_mean + traj.dq * nodes
        phi = potential.phi(x, t)
        grad = potential.grad_phi(x, t)
        return np.array([np.sum(phi * weights), np.sum(grad * weights), np.sum(traj.dq * nodes * grad * weights)])

    fine = integrate(profile.nodes, profile.weights)
    if check_convergence:
        coarse = integrate(profile.nodes[::2], 2.0 * profile.weights[::2])
        change = np.abs(fine - coarse)
        if np.any(change > QUADRATURE_TOLERANCE * np.maximum(1.0, np.abs(fine))):
            raise QuadratureConvergenceError(
                f"Potential expectations change by {change.max():.3e} when the quadrature resolution doubles")
    return float(fine[0]), float(fine[1]), float(fine[2])


def _rates(y, t, profile, potential, law, check_convergence=False):
    q, v, dq, dq_dot, _ = y
    if not dq > SINGULAR_DQ:
        raise SingularDispersionError(f"Dispersion dq={dq:.3e} at t={t:.6f} fell below {SINGULAR_DQ:.0e}")
    m, hbar = profile.constants.mass, profile.constants.hbar
    state = TrajectoryState.model_construct(q_mean=q, v_mean=v, dq=dq, dq_dot=dq_dot, S0=0.0, t=t)
    phi_mean, grad_mean, torque = potential_expectations(profile, state, potential, t, check_convergence)

    v_dot = -grad_mean / m
    if law is DispersionLaw.PROJECTED:
        dq_ddot = (profile.C_G / dq ** 2 - torque) / (m * dq)
    else:
        dq_ddot = 2.0 / (m * dq) * (-phi_mean + 0.5 * m * v ** 2 - 0.5 * m * profile.K / dq ** 2)
    S0_dot = (-m * v_dot * q - 0.5 * m * v ** 2 + 0.5 * m * profile.G0 ** 2 / dq ** 2
              + 0.5 * hbar * profile.G0p / dq ** 2 - float(potential.phi(q, t)))
    return np.array([v, v_dot, dq_dot, dq_ddot, S0_dot]), phi_mean, grad_mean


def rhs(traj: TrajectoryState, profile: StateProfile, potential: PotentialModel,
        law: DispersionLaw = DispersionLaw.PROJECTED, t: Optional[float] = None) -> TrajectoryRate:
    t = traj.t if t is None else t
    y = np.array([traj.q_mean, traj.v_mean, traj.dq, traj.dq_dot, traj.S0])
    rates, _, _ = _rates(y, t, profile, potential, DispersionLaw(law), check_convergence=True)
    return TrajectoryRate(q_dot=rates[0], v_dot=rates[1], dq_dot=rates[2], dq_ddot=rates[3], S0_dot=rates[4])


def feedback_diagnostic(profile: StateProfile, traj: TrajectoryState, potential: PotentialModel, t: float) -> float:
    _, grad_mean, _ = potential_expectations(profile, traj, potential, t)
    return _feedback_residual(profile, traj.q_mean, traj.dq, grad_mean, potential, t)


def _feedback_residual(profile, q, dq, grad_mean, potential, t):
    m, hbar = profile.constants.mass, profile.constants.hbar
    local = float(potential.grad_phi(q, t)) - grad_mean
    quantum = (m * profile.G0 * profile.G0p + 0.5 * hbar * profile.G0pp) / dq ** 3
    return local - quantum


def _squeeze_rates(dq, dq_dot, dq0, m, hbar):
    if dq0 is None:
        return np.full(dq.shape, np.nan), np.full(dq.shape, np.nan)
    f = -0.5 * np.log(dq / dq0)
    denominator = 1.0 - 2.0 * f
    with np.errstate(divide='ignore', invalid='ignore'):
        g = np.where(np.abs(denominator) > 1e-12, (m / hbar) * dq_dot / (dq * denominator), np.nan)
    return f, g


def integrate(initial: TrajectoryState, profile: StateProfile, potential: PotentialModel,
              law: DispersionLaw = DispersionLaw.PROJECTED, t_span: Tuple[float, float] = (0.0, 10.0),
              dt: float = 1e-3) -> TrajectoryRecord:
    """
    Fixed-step classical RK4. Every step is recorded; a collapsing dispersion
    raises SingularDispersionError with the partial record attached as `.record`.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (np.isfinite(t0) and np.isfinite(t1) and t1 > t0):
        raise ValueError(f"t_span must be a finite increasing interval, got {t_span}")
    law = DispersionLaw(law)
    n_steps = max(1, int(round((t1 - t0) / dt)))
    h = (t1 - t0) / n_steps
    if abs(h - dt) > 1e-12 * dt:
        logger.info(f"Adjusted step from {dt:g} to {h:.12g} to land on t={t1:g}")

    start_time = time.time()
    m, hbar = profile.constants.mass, profile.constants.hbar
    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, 5))
    rates = np.empty((n_steps + 1, 5))
    phi_mean = np.empty(n_steps + 1)
    feedback = np.empty(n_steps + 1)
    y = np.array([initial.q_mean, initial.v_mean, initial.dq, initial.dq_dot, initial.S0], dtype=float)

    def evaluate(y_now, t_now, check=False):
        return _rates(y_now, t_now, profile, potential, law, check)

    completed = 0
    try:
        k1, phi, grad = evaluate(y, t0, check=True)
        for i in range(n_steps + 1):
            t = times[i]
            states[i], rates[i], phi_mean[i] = y, k1, phi
            feedback[i] = _feedback_residual(profile, y[0], y[2], grad, potential, t)
            completed = i + 1
            if i == n_steps:
                break
            k2 = evaluate(y + 0.5 * h * k1, t + 0.5 * h)[0]
            k3 = evaluate(y + 0.5 * h * k2, t + 0.5 * h)[0]
            k4 = evaluate(y + h * k3, t + h)[0]
            y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"Non-finite trajectory state at t={t + h:.6f}: {y}")
            k1, phi, grad = evaluate(y, t + h)
    except SingularDispersionError as e:
        e.record = _make_record(law, times[:completed], states[:completed], rates[:completed],
                                phi_mean[:completed], feedback[:completed], profile)
        logger.warning(f"Integration stopped after {completed} of {n_steps + 1} records: {e}")
        raise

    record = _make_record(law, times, states, rates, phi_mean, feedback, profile)
    logger.info(f"Integrated {n_steps} RK4 steps ({law.value}) to t={t1:g}, "
                f"took {time.time() - start_time:.2f} seconds")
    if potential.is_static and record.energy.size > 1:
        drift = float(np.max(np.abs(record.energy - record.energy[0])))
        logger.info(f"Model energy drift over the run: {drift:.3e}")
    return record


def _make_record(law, times, states, rates, phi_mean, feedback, profile) -> TrajectoryRecord:
    m, hbar = profile.constants.mass, profile.constants.hbar
    q, v, dq, dq_dot, S0 = (states[:, j].copy() for j in range(5))
    energy = 0.5 * m * (v ** 2 + dq_dot ** 2 + profile.K / dq ** 2) + phi_mean
    product = np.sqrt(m ** 2 * profile.K + (m * dq * dq_dot) ** 2)
    f, g = _squeeze_rates(dq, dq_dot, profile.dq0, m, hbar)
    return TrajectoryRecord(law=law, t=np.asarray(times).copy(), q_mean=q, v_mean=v, dq=dq, dq_dot=dq_dot, S0=S0,
                            v_dot=rates[:, 1].copy(), dq_ddot=rates[:, 3].copy(), S0_dot=rates[:, 4].copy(),
                            phi_mean=np.asarray(phi_mean).copy(), energy=energy, uncertainty_product=product,
                            f=f, g=g, feedback_residual=np.asarray(feedback).copy())


class SynthesizedPotential(PotentialModel):
    """
    Feedback potential obtained by inverting the Hamilton-Jacobi-Madelung
    equation along a recorded trajectory. Trajectory coefficients are cubic
    splines in time; the x dependence is evaluated in closed form. The
    additive c(t) matches `reference` at x = q(t), or is zero there without one.
    """
    kind: str = 'synthesized-table'
    profile: StateProfile
    record: TrajectoryRecord
    reference: Optional[PotentialModel] = None

    _splines: Dict[str, CubicSpline] = PrivateAttr(default_factory=dict)

    @model_validator(mode='after')
    def dense_record(self):
        if len(self.record) < 4:
            raise ExtrapolationError("Synthesis needs at least four recorded times")
        if self.record.dt > MAX_RECORD_DT:
            raise ExtrapolationError(f"Record step {self.record.dt:g} is coarser than {MAX_RECORD_DT:g}")
        self._splines = self.record.splines()
        return self

    @property
    def is_static(self) -> bool:
        return False

    def _coefficients(self, t: float) -> Dict[str, float]:
        t0, t1 = float(self.record.t[0]), float(self.record.t[-1])
        slack = 1e-12 * max(1.0, abs(t1))
        if t < t0 - slack or t > t1 + slack:
            raise ExtrapolationError(f"t={t:.6f} lies outside the recorded span [{t0:g}, {t1:g}]")
        t = min(max(t, t0), t1)
        return {name: float(spline(t)) for name, spline in self._splines.items()}

    def _raw_phi(self, x, c):
        m, hbar = self.profile.constants.mass, self.profile.constants.hbar
        v, dq, dq_dot = c['v_mean'], c['dq'], c['dq_dot']
        xi = (x - c['q_mean']) / dq
        G = self.profile.G(xi)
        quantum = (m * G ** 2 + hbar * self.profile.dG(xi)) / (2.0 * dq ** 2)
        return -action_rate(m, c, x) - 0.5 * m * (v + xi * dq_dot) ** 2 + quantum

    def gauge(self, t: float) -> float:
        c = self._coefficients(t)
        q = np.atleast_1d(c['q_mean'])
        target = float(np.asarray(self.reference.phi(q, t)).ravel()[0]) if self.reference is not None else 0.0
        return target - float(self._raw_phi(q, c)[0])

    def phi(self, x, t: float = 0.0):
        c = self._coefficients(t)
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        values = self._raw_phi(x_arr, c) + self.gauge(t)
        return values if np.ndim(x) else float(values[0])

    def grad_phi(self, x, t: float = 0.0):
        c = self._coefficients(t)
        m, hbar = self.profile.constants.mass, self.profile.constants.hbar
        q, v, dq, dq_dot = c['q_mean'], c['v_mean'], c['dq'], c['dq_dot']
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        y = x_arr - q
        xi = y / dq
        flow = -(m * c['v_dot'] - m * v * dq_dot / dq + m * y * (c['dq_ddot'] / dq - dq_dot ** 2 / dq ** 2))
        convective = -m * (v + xi * dq_dot) * dq_dot / dq
        G = self.profile.G(xi)
        quantum = (m * G * self.profile.dG(xi) + 0.5 * hbar * self.profile.d2G(xi)) / dq ** 3
        values = flow + convective + quantum
        return values if np.ndim(x) else float(values[0])

    def tabulate(self, grid: Grid1D, times: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Phi on the (t, x) mesh; defaults to the recorded times."""
        times = self.record.t if times is None else np.asarray(times, dtype=float)
        return times, np.stack([self.phi(grid.x, float(t)) for t in times])


def synthesize_potential(profile: StateProfile, record: TrajectoryRecord, grid: Optional[Grid1D] = None,
                         reference: Optional[PotentialModel] = None) -> SynthesizedPotential:
    potential = SynthesizedPotential(profile=profile, record=record, reference=reference,
                                     mass=profile.constants.mass)
    if grid is not None:
        for t in (record.t[0], record.t[-1]):
            if not np.all(np.isfinite(potential.phi(grid.x, float(t)))):
                raise ExtrapolationError(f"Synthesized potential is not finite on the grid at t={t:g}")
    logger.info(f"Synthesized feedback potential over t in [{record.t[0]:g}, {record.t[-1]:g}] "
                f"({'gauge from ' + reference.kind if reference is not None else 'zero gauge at <q>'})")
    return potential
