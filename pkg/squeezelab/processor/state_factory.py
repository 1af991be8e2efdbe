"""
Coherent-state families. A StateProfile carries the unit-variance shape
rho~(xi) of a ground state, its osmotic function G(xi) = (hbar/2m) dln(rho~)/dxi
and the moments K and C_G; assemble_state turns a profile plus trajectory data
into the wavefunction

    psi(x) = sqrt(rho~(xi) / dq) exp(i [m v x + (m/2)(x - q)^2 dq_dot/dq + S0] / hbar),
    xi = (x - q) / dq.

The Jacobian form rho~(xi)/dq keeps the density normalized as dq varies.
"""
import csv
import logging
import time
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .exceptions import ProfileError, QuadratureConvergenceError
from .grid import LEAKAGE_THRESHOLD, Grid1D, PhysConstants, WaveFunction, observables

logger = logging.getLogger(__name__)

XI_MAX = 8.0
TABLE_HALF_WIDTH = 30.0
TABLE_POINTS = 4001
SPLINE_POINTS = 1601
MOMENT_TOLERANCE = 1e-8
QUADRATURE_TOLERANCE = 1e-6
TABLE_EDGE_TOLERANCE = 1e-10
SECH2_WIDTH = np.pi / np.sqrt(12.0)

FieldFunction = Callable[[np.ndarray], np.ndarray]


class TrajectoryState(BaseModel):
    model_config = ConfigDict(frozen=True)

    q_mean: float = 0.0
    v_mean: float = 0.0
    dq: float = Field(gt=0)
    dq_dot: float = 0.0
    S0: float = 0.0
    t: float = 0.0


class StateProfile(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    constants: PhysConstants
    rho_shape: FieldFunction
    G: FieldFunction
    dG: FieldFunction
    d2G: FieldFunction
    dq0: Optional[float] = None
    xi_max: float = XI_MAX

    nodes: np.ndarray
    weights: np.ndarray
    cdf_nodes: np.ndarray
    cdf_values: np.ndarray

    K: float = Field(gt=0)
    C_G: float
    G0: float
    G0p: float
    G0pp: float
    K_unweighted: float

    def expectation(self, func: FieldFunction) -> float:
        """Integral of func(xi) rho~(xi) dxi on the profile's quadrature table."""
        return float(np.sum(func(self.nodes) * self.weights))

    def sample_xi(self, uniforms: np.ndarray) -> np.ndarray:
        return np.interp(uniforms, self.cdf_values, self.cdf_nodes)

    def drift_G(self, xi: np.ndarray) -> np.ndarray:
        """G(xi) inside |xi| <= xi_max, continued linearly with the edge slope beyond."""
        clipped = np.clip(xi, -self.xi_max, self.xi_max)
        return self.G(clipped) + self.dG(clipped) * (xi - clipped)

    @property
    def osmotic_product(self) -> float:
        """m Dq Du = m sqrt(K), independent of dq."""
        return self.constants.mass * float(np.sqrt(self.K))


def _checked_moments(nodes, weights, name: str):
    mass = np.sum(weights)
    mean = np.sum(nodes * weights)
    variance = np.sum(nodes ** 2 * weights)
    for label, value, target in (('mass', mass, 1.0), ('mean', mean, 0.0), ('variance', variance, 1.0)):
        if abs(value - target) > MOMENT_TOLERANCE:
            raise ProfileError(f"Profile '{name}' has {label} {value:.12f}, expected {target}")


def _converged(fine: float, coarse: float, label: str) -> float:
    if abs(fine - coarse) > QUADRATURE_TOLERANCE * max(1.0, abs(fine)):
        raise QuadratureConvergenceError(
            f"{label} changes from {coarse:.10g} to {fine:.10g} when the quadrature resolution doubles")
    return fine


def _cdf_table(nodes, density):
    cdf = cumulative_trapezoid(density, nodes, initial=0.0)
    cdf /= cdf[-1]
    increasing = np.concatenate(([True], np.diff(cdf) > 0))
    return nodes[increasing], cdf[increasing]


def _build_profile(name, constants, rho_shape, G, dG, d2G, dq0=None, xi_max=XI_MAX) -> StateProfile:
    m, hbar = constants.mass, constants.hbar
    nodes = np.linspace(-TABLE_HALF_WIDTH, TABLE_HALF_WIDTH, TABLE_POINTS)
    h = nodes[1] - nodes[0]
    rho = rho_shape(nodes)
    if np.any(rho < 0) or not np.all(np.isfinite(rho)):
        raise ProfileError(f"Profile '{name}' density must be finite and non-negative")
    weights = rho * h
    _checked_moments(nodes, weights, name)

    def moments(xi, w):
        g, dg, d2g = G(xi), dG(xi), d2G(xi)
        return np.sum(g ** 2 * w), np.sum(xi * (m * g * dg + 0.5 * hbar * d2g) * w)

    K, C_G = moments(nodes, weights)
    K_coarse, C_G_coarse = moments(nodes[::2], 2.0 * weights[::2])
    K = _converged(K, K_coarse, 'K')
    C_G = _converged(C_G, C_G_coarse, 'C_G')

    inner = np.abs(nodes) <= xi_max
    K_unweighted = float(np.sum(G(nodes[inner]) ** 2) * h)
    cdf_nodes, cdf_values = _cdf_table(nodes, rho)
    zero = np.zeros(1)
    return StateProfile(name=name, constants=constants, rho_shape=rho_shape, G=G, dG=dG, d2G=d2G,
                        dq0=dq0, xi_max=xi_max, nodes=nodes, weights=weights,
                        cdf_nodes=cdf_nodes, cdf_values=cdf_values, K=float(K), C_G=float(C_G),
                        G0=float(G(zero)[0]), G0p=float(dG(zero)[0]), G0pp=float(d2G(zero)[0]),
                        K_unweighted=K_unweighted)


def gaussian_profile(constants: PhysConstants = PhysConstants(), dq0: Optional[float] = None) -> StateProfile:
    scale = constants.hbar / (2.0 * constants.mass)
    return _build_profile(
        'gaussian', constants,
        rho_shape=lambda xi: np.exp(-0.5 * np.asarray(xi) ** 2) / np.sqrt(2.0 * np.pi),
        G=lambda xi: -scale * np.asarray(xi, dtype=float),
        dG=lambda xi: np.full(np.shape(xi), -scale),
        d2G=lambda xi: np.zeros(np.shape(xi)),
        dq0=dq0)


def sech2_profile(constants: PhysConstants = PhysConstants(), dq0: Optional[float] = None) -> StateProfile:
    a = SECH2_WIDTH
    scale = constants.hbar * a / constants.mass

    def sech2(xi):
        return 1.0 / np.cosh(a * np.asarray(xi)) ** 2

    return _build_profile(
        'sech2', constants,
        rho_shape=lambda xi: 0.5 * a * sech2(xi),
        G=lambda xi: -scale * np.tanh(a * np.asarray(xi)),
        dG=lambda xi: -scale * a * sech2(xi),
        d2G=lambda xi: 2.0 * scale * a ** 2 * sech2(xi) * np.tanh(a * np.asarray(xi)),
        dq0=dq0)


def named_profile(name: str, constants: PhysConstants = PhysConstants(), dq0: Optional[float] = None) -> StateProfile:
    builders = {'gaussian': gaussian_profile, 'sech2': sech2_profile}
    if name not in builders:
        raise ProfileError(f"Unknown profile '{name}', expected one of {sorted(builders)}")
    return builders[name](constants, dq0)


class _SampledShape:
    """Shape functions of a measured ground state on its own grid."""

    def __init__(self, grid: Grid1D, psi: np.ndarray, q0: float, dq0: float, scale: float, xi_max: float):
        self.grid, self.psi, self.q0, self.dq0 = grid, psi, q0, dq0
        d1 = grid.derivative(psi, 1)
        d2 = grid.derivative(psi, 2)
        d3 = grid.derivative(d2, 1)
        xi = np.linspace(-xi_max, xi_max, SPLINE_POINTS)
        x = q0 + dq0 * xi
        values = [grid.interpolate(f, x).real for f in (psi, d1, d2, d3)]
        if np.any(values[0] <= 0):
            raise ProfileError(f"Ground state vanishes inside |xi| <= {xi_max}; enlarge the box or refine the grid")
        r1, r2, r3 = (dq0 ** n * values[n] / values[0] for n in (1, 2, 3))
        self._G = CubicSpline(xi, scale * r1)
        self._dG = CubicSpline(xi, scale * (r2 - r1 ** 2))
        self._d2G = CubicSpline(xi, scale * (r3 - 3.0 * r1 * r2 + 2.0 * r1 ** 3))
        self.xi_max = xi_max

    def rho_shape(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.dq0 * self.grid.interpolate(self.psi, self.q0 + self.dq0 * xi).real ** 2

    def G(self, xi):
        xi = np.asarray(xi, dtype=float)
        clipped = np.clip(xi, -self.xi_max, self.xi_max)
        return self._G(clipped) + self._dG(clipped) * (xi - clipped)

    def dG(self, xi):
        return self._dG(np.clip(np.asarray(xi, dtype=float), -self.xi_max, self.xi_max))

    def d2G(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.where(np.abs(xi) <= self.xi_max, self._d2G(np.clip(xi, -self.xi_max, self.xi_max)), 0.0)


def profile_from_ground_state(psi0: WaveFunction, name: str = 'ground-state', xi_max: float = XI_MAX,
                              leakage_threshold: float = LEAKAGE_THRESHOLD) -> StateProfile:
    """
    Measures <q> and Dq of a real, nodeless ground state and standardizes it
    into a unit-variance profile. Moments use division-free forms so the
    exponential tails do not amplify round-off.
    """
    start_time = time.time()
    psi0.check_normalized()
    psi0.check_boundary(leakage_threshold)
    grid, constants = psi0.grid, psi0.constants
    psi = psi0.psi
    peak = float(np.max(np.abs(psi)))
    if np.max(np.abs(psi.imag)) > 1e-10 * peak:
        raise ProfileError("Ground-state profiles require a real wavefunction")
    real = psi.real * np.sign(psi.real[np.argmax(np.abs(psi))])
    significant = np.abs(real) > 1e-8 * peak
    if np.any(real[significant] < 0):
        raise ProfileError("Ground-state profiles must be nodeless")
    real = real / np.sqrt(grid.quadrature(real ** 2))

    x = grid.x
    density = real ** 2
    q0 = float(grid.quadrature(x * density))
    dq0 = float(np.sqrt(grid.quadrature((x - q0) ** 2 * density)))
    m, hbar = constants.mass, constants.hbar

    xi = (x - q0) / dq0
    h = grid.dx / dq0
    shape_psi = np.sqrt(dq0) * real
    d1 = np.sqrt(dq0) * dq0 * grid.derivative(real, 1)
    weights = shape_psi ** 2 * h
    _checked_moments(xi, weights, name)

    def kinetic_moment(step):
        return (hbar / m) ** 2 * np.sum(d1[::step] ** 2) * h * step

    K = _converged(kinetic_moment(1), kinetic_moment(2), 'K')
    # integration by parts gives C_G = m K
    C_G = m * K

    shape = _SampledShape(grid, real, q0, dq0, hbar / m, xi_max)
    inner = (np.abs(xi) <= xi_max) & (shape_psi > 0)
    K_unweighted = float(np.sum(((hbar / m) * d1[inner] / shape_psi[inner]) ** 2) * h)
    cdf_nodes, cdf_values = _cdf_table(xi, shape_psi ** 2)
    zero = np.zeros(1)

    logger.info(f"Profile '{name}' measured from ground state (dq0={dq0:.6f}, K={K:.8f}) "
                f"took {time.time() - start_time:.2f} seconds")
    return StateProfile(name=name, constants=constants, rho_shape=shape.rho_shape, G=shape.G, dG=shape.dG,
                        d2G=shape.d2G, dq0=dq0, xi_max=xi_max, nodes=xi, weights=weights,
                        cdf_nodes=cdf_nodes, cdf_values=cdf_values, K=float(K), C_G=float(C_G),
                        G0=float(shape.G(zero)[0]), G0p=float(shape.dG(zero)[0]),
                        G0pp=float(shape.d2G(zero)[0]), K_unweighted=K_unweighted)


def read_profile_table(path) -> Tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline='') as f:
        for row in csv.reader(f):
            if not row or row[0].lstrip().startswith('#'):
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                # header line
                continue
    if len(rows) < 16:
        raise ProfileError(f"Profile table {path} has {len(rows)} numeric rows, need at least 16")
    table = np.array(rows)
    return table[:, 0], table[:, 1]


def profile_from_table(path, constants: PhysConstants = PhysConstants(), n_points: int = 2048,
                       name: Optional[str] = None) -> StateProfile:
    """
    Reads (xi, rho~) pairs, interpolates sqrt(rho~) with a cubic spline and
    standardizes the result to unit mass, zero mean and unit variance.
    """
    xi, rho = read_profile_table(path)
    if np.any(np.diff(xi) <= 0):
        raise ProfileError(f"Profile table {path} must have strictly increasing xi")
    if np.any(rho < 0):
        raise ProfileError(f"Profile table {path} has negative densities")
    peak = rho.max()
    if max(rho[0], rho[-1]) > TABLE_EDGE_TOLERANCE * peak:
        raise ProfileError(f"Profile table {path} does not decay at its ends")

    grid = Grid1D(x_min=float(xi[0]), x_max=float(xi[-1]), n_points=n_points)
    amplitude = np.clip(CubicSpline(xi, np.sqrt(rho))(grid.x), 0.0, None)
    wf = WaveFunction.normalized(grid, amplitude.astype(complex), constants)
    threshold = 10.0 * np.sqrt(TABLE_EDGE_TOLERANCE) * float(np.max(np.abs(wf.psi)))
    return profile_from_ground_state(wf, name=name or Path(path).stem, leakage_threshold=threshold)


def assemble_state(profile: StateProfile, traj: TrajectoryState, grid: Grid1D,
                   constants: Optional[PhysConstants] = None, check_identity: bool = True) -> WaveFunction:
    constants = constants or profile.constants
    m, hbar = constants.mass, constants.hbar
    x = grid.x
    y = x - traj.q_mean
    xi = y / traj.dq
    amplitude = np.sqrt(np.clip(profile.rho_shape(xi), 0.0, None) / traj.dq)
    phase = (m * traj.v_mean * x + 0.5 * m * y ** 2 * traj.dq_dot / traj.dq + traj.S0) / hbar
    wf = WaveFunction(grid=grid, psi=amplitude * np.exp(1j * phase), constants=constants)
    wf.check_boundary()
    if check_identity:
        target = m * traj.dq * traj.dq_dot
        measured = observables(wf).anticom
        if abs(measured - target) > 1e-6 * max(abs(target), 0.5 * hbar):
            raise ProfileError(f"Assembled state has <{{Q,P}}>/2 = {measured:.10g}, expected {target:.10g}")
    return wf


def ground_state_from_profile(profile: StateProfile, dq0: float, grid: Grid1D,
                              constants: Optional[PhysConstants] = None) -> WaveFunction:
    return assemble_state(profile, TrajectoryState(dq=dq0), grid, constants, check_identity=False)


def uncertainty_identity(profile: StateProfile, traj: TrajectoryState, constants: Optional[PhysConstants] = None,
                         grid: Optional[Grid1D] = None) -> Tuple[float, float]:
    """(Dq Dp)^2 measured on the assembled state against m^2 K + (m dq dq_dot)^2."""
    constants = constants or profile.constants
    wf = assemble_state(profile, traj, grid or Grid1D(), constants, check_identity=False)
    lhs = observables(wf).uncertainty_product ** 2
    m = constants.mass
    rhs = m ** 2 * profile.K + (m * traj.dq * traj.dq_dot) ** 2
    return lhs, rhs
