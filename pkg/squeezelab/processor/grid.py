"""
Uniform periodic 1-D grid, wavefunctions on it, spectral calculus and the
quantum observables used throughout the laboratory.

All derivatives are Fourier multipliers; all integrals are plain sums times dx,
which is the trapezoidal rule on a periodic grid and spectrally accurate for
packets that decay before the box edges.
"""
import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .exceptions import BoundaryLeakageError, GridMismatchError, NormalizationError

logger = logging.getLogger(__name__)

EDGE_POINTS = 5
LEAKAGE_THRESHOLD = 1e-12
NORM_TOLERANCE = 1e-6


class PhysConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    hbar: float = Field(1.0, gt=0)
    mass: float = Field(1.0, gt=0)


class Grid1D(BaseModel):
    model_config = ConfigDict(frozen=True)

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

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def check_shape(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field)
        if field.shape != (self.n_points,):
            raise GridMismatchError(f"Field of shape {field.shape} does not match grid of {self.n_points} points")
        return field

    def derivative(self, field: np.ndarray, order: int = 1) -> np.ndarray:
        if order not in (1, 2):
            raise ValueError(f"Spectral derivative order must be 1 or 2, got {order}")
        field = self.check_shape(field)
        if order == 1:
            multiplier = 1j * self.k
            # the Nyquist mode has no odd-derivative partner
            multiplier[self.n_points // 2] = 0.0
        else:
            multiplier = -self.k ** 2
        result = np.fft.ifft(multiplier * np.fft.fft(field))
        return result.real if np.isrealobj(field) else result

    def quadrature(self, field: np.ndarray):
        field = self.check_shape(field)
        return np.sum(field) * self.dx

    def shift(self, field: np.ndarray, distance: float) -> np.ndarray:
        """Band-limited translation: returns f(x - distance)."""
        field = self.check_shape(field)
        shifted = np.fft.ifft(np.fft.fft(field) * np.exp(-1j * self.k * distance))
        return shifted.real if np.isrealobj(field) else shifted

    def interpolate(self, field: np.ndarray, points: np.ndarray, chunk: int = 512) -> np.ndarray:
        """
        Evaluates the trigonometric interpolant of `field` at arbitrary points.
        Points outside the box evaluate to zero rather than to the periodic image.
        """
        field = self.check_shape(field)
        points = np.asarray(points, dtype=float)
        coefficients = np.fft.fft(field) / self.n_points
        coefficients[self.n_points // 2] = 0.0
        values = np.empty(points.shape, dtype=complex)
        flat_points = points.ravel()
        flat_values = values.reshape(-1)
        for start in range(0, flat_points.size, chunk):
            block = flat_points[start:start + chunk]
            phases = np.exp(1j * np.outer(block - self.x_min, self.k))
            flat_values[start:start + chunk] = phases @ coefficients
        outside = (points < self.x_min) | (points >= self.x_max)
        values[outside] = 0.0
        return values


class WaveFunction(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid1D
    psi: np.ndarray
    constants: PhysConstants = PhysConstants()

    @field_validator('psi', mode='before')
    def as_complex_array(cls, v):
        return np.asarray(v, dtype=complex)

    @model_validator(mode='after')
    def matches_grid(self):
        self.grid.check_shape(self.psi)
        return self

    @classmethod
    def normalized(cls, grid: Grid1D, psi: np.ndarray, constants: Optional[PhysConstants] = None) -> "WaveFunction":
        psi = np.asarray(psi, dtype=complex)
        norm = np.sqrt(grid.quadrature(np.abs(psi) ** 2))
        if not np.isfinite(norm) or norm <= 0.0:
            raise NormalizationError(f"Cannot normalize a wavefunction of norm {norm}")
        return cls(grid=grid, psi=psi / norm, constants=constants or PhysConstants())

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(self.grid.quadrature(self.density))

    def boundary_amplitude(self, width: int = EDGE_POINTS) -> float:
        magnitude = np.abs(self.psi)
        return float(max(magnitude[:width].max(), magnitude[-width:].max()))

    def check_boundary(self, threshold: float = LEAKAGE_THRESHOLD) -> "WaveFunction":
        amplitude = self.boundary_amplitude()
        if amplitude > threshold:
            raise BoundaryLeakageError(
                f"Packet amplitude {amplitude:.3e} within {EDGE_POINTS} points of the box edge exceeds {threshold:.1e}")
        return self

    def check_normalized(self, tolerance: float = NORM_TOLERANCE) -> "WaveFunction":
        deviation = abs(self.norm() - 1.0)
        if deviation > tolerance:
            raise NormalizationError(f"Wavefunction norm deviates from one by {deviation:.3e}")
        return self

    def with_psi(self, psi: np.ndarray) -> "WaveFunction":
        return WaveFunction(grid=self.grid, psi=psi, constants=self.constants)


class Observables(BaseModel):
    model_config = ConfigDict(frozen=True)

    q_mean: float
    p_mean: float
    dq: float = Field(gt=0)
    dp: float = Field(gt=0)
    anticom: float
    kinetic: float

    @property
    def uncertainty_product(self) -> float:
        return self.dq * self.dp


def observables(wf: WaveFunction, leakage_threshold: float = LEAKAGE_THRESHOLD) -> Observables:
    wf.check_normalized()
    wf.check_boundary(leakage_threshold)
    grid, hbar = wf.grid, wf.constants.hbar
    x, psi, rho = grid.x, wf.psi, wf.density

    q_mean = float(grid.quadrature(x * rho))
    dpsi = grid.derivative(psi, 1)
    p_mean = float(hbar * np.imag(grid.quadrature(np.conj(psi) * dpsi)))
    dq = np.sqrt(grid.quadrature((x - q_mean) ** 2 * rho))

    # P = -i hbar d/dx - <p>, Q = x - <q>
    p_psi = -1j * hbar * dpsi - p_mean * psi
    dp = np.sqrt(grid.quadrature(np.abs(p_psi) ** 2))
    anticom = float(np.real(grid.quadrature(np.conj(psi) * (x - q_mean) * p_psi)))
    kinetic = float(grid.quadrature(np.abs(hbar * dpsi) ** 2) / (2.0 * wf.constants.mass))

    return Observables(q_mean=q_mean, p_mean=p_mean, dq=float(dq), dp=float(dp), anticom=anticom, kinetic=kinetic)


def momentum_spread(wf: WaveFunction) -> float:
    """Dp from the second moment of the momentum-space distribution."""
    weights = np.abs(np.fft.fft(wf.psi)) ** 2
    weights /= weights.sum()
    p = wf.constants.hbar * wf.grid.k
    p_mean = np.sum(p * weights)
    return float(np.sqrt(np.sum((p - p_mean) ** 2 * weights)))


def energy(wf: WaveFunction, potential, t: float = 0.0) -> float:
    kinetic = observables(wf).kinetic
    return kinetic + float(wf.grid.quadrature(potential.phi(wf.grid.x, t) * wf.density))


def overlap(a: WaveFunction, b: WaveFunction) -> complex:
    return complex(a.grid.quadrature(np.conj(a.psi) * b.psi))


def align_global_phase(reference: WaveFunction, wf: WaveFunction) -> WaveFunction:
    """Removes the relative global phase, pinned where the reference density peaks."""
    peak = int(np.argmax(reference.density))
    relative = wf.psi[peak] * np.conj(reference.psi[peak])
    if abs(relative) == 0.0:
        return wf
    return wf.with_psi(wf.psi * np.conj(relative) / abs(relative))


def l2_distance(a: WaveFunction, b: WaveFunction) -> float:
    return float(np.sqrt(a.grid.quadrature(np.abs(a.psi - b.psi) ** 2)))
