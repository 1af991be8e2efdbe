"""
External potentials Phi(x, t) with their gradients.

Harmonic kinds also report the three profile expectations <Phi>, <dPhi/dx> and
<(x - <q>) dPhi/dx> in closed form, which holds for every zero-mean,
unit-variance shape profile.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class PotentialModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: str
    mass: float = Field(1.0, gt=0)

    @property
    def is_static(self) -> bool:
        return True

    def phi(self, x, t: float):
        raise NotImplementedError

    def grad_phi(self, x, t: float):
        raise NotImplementedError

    def closed_form_expectations(self, q_mean: float, dq: float, t: float) -> Optional[Tuple[float, float, float]]:
        return None


class HarmonicPotential(PotentialModel):
    kind: str = 'harmonic'
    omega: float = Field(1.0, gt=0)
    center: float = 0.0

    def stiffness(self, t: float) -> float:
        return self.mass * self.omega ** 2

    def phi(self, x, t: float = 0.0):
        return 0.5 * self.stiffness(t) * (x - self.center) ** 2

    def grad_phi(self, x, t: float = 0.0):
        return self.stiffness(t) * (x - self.center)

    def closed_form_expectations(self, q_mean, dq, t):
        kappa = self.stiffness(t)
        offset = q_mean - self.center
        return 0.5 * kappa * (offset ** 2 + dq ** 2), kappa * offset, kappa * dq ** 2


class TimeHarmonicPotential(HarmonicPotential):
    """Harmonic well whose frequency jumps from omega to omega_after at t_quench."""
    kind: str = 'time-harmonic'
    omega_after: float = Field(2.0, gt=0)
    t_quench: float = 0.0

    @property
    def is_static(self) -> bool:
        return False

    def frequency(self, t: float) -> float:
        return self.omega if t < self.t_quench else self.omega_after

    def stiffness(self, t: float) -> float:
        return self.mass * self.frequency(t) ** 2


class PolynomialPotential(PotentialModel):
    """Phi(x) = sum_j coefficients[j] * x**j; an empty list is the free particle."""
    kind: str = 'polynomial'
    coefficients: List[float] = Field(default_factory=list)

    def phi(self, x, t: float = 0.0):
        if not self.coefficients:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def grad_phi(self, x, t: float = 0.0):
        if len(self.coefficients) < 2:
            return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
        return np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(self.coefficients))

    @classmethod
    def free(cls, mass: float = 1.0) -> "PolynomialPotential":
        return cls(coefficients=[], mass=mass)

    @classmethod
    def quartic(cls, strength: float, mass: float = 1.0) -> "PolynomialPotential":
        return cls(coefficients=[0.0, 0.0, 0.0, 0.0, strength], mass=mass)


class PoschlTellerPotential(PotentialModel):
    """
    Phi(x) = -hbar^2 a^2 lam (lam + 1) / (2 m) * sech^2(a x).
    Its ground state is proportional to sech^lam(a x) with energy -hbar^2 a^2 lam^2 / (2 m).
    """
    kind: str = 'poschl-teller'
    width: float = Field(1.0, gt=0)
    lam: float = Field(1.0, gt=0)
    hbar: float = Field(1.0, gt=0)

    @property
    def depth(self) -> float:
        return self.hbar ** 2 * self.width ** 2 * self.lam * (self.lam + 1.0) / (2.0 * self.mass)

    @property
    def ground_energy(self) -> float:
        return -self.hbar ** 2 * self.width ** 2 * self.lam ** 2 / (2.0 * self.mass)

    def phi(self, x, t: float = 0.0):
        return -self.depth / np.cosh(self.width * x) ** 2

    def grad_phi(self, x, t: float = 0.0):
        ax = self.width * x
        return 2.0 * self.depth * self.width * np.tanh(ax) / np.cosh(ax) ** 2
