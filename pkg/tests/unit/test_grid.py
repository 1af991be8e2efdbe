import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from squeezelab.processor.exceptions import BoundaryLeakageError, GridMismatchError, NormalizationError
from squeezelab.processor.grid import (Grid1D, WaveFunction, align_global_phase, energy, l2_distance,
                                       momentum_spread, observables, overlap)

BOX = Grid1D(x_min=-20.0, x_max=20.0, n_points=1024)


def chirped(sigma, chirp=0.0, q=0.0, p=0.0):
    x = BOX.x
    return WaveFunction.normalized(BOX, np.exp(-(x - q) ** 2 / (4.0 * sigma ** 2) + 1j * (p * x + chirp * x ** 2)))


def test_grid_spacing_and_wavenumbers():
    grid = Grid1D(x_min=-1.0, x_max=1.0, n_points=16)
    assert grid.dx == pytest.approx(0.125)
    assert grid.x[0] == -1.0
    assert grid.x[-1] == pytest.approx(0.875)
    assert grid.k[1] == pytest.approx(math.pi)


@pytest.mark.parametrize('n_points', [8, 1000])
def test_grid_rejects_bad_point_counts(n_points):
    with pytest.raises(ValidationError):
        Grid1D(n_points=n_points)


def test_grid_rejects_empty_box():
    with pytest.raises(ValidationError):
        Grid1D(x_min=1.0, x_max=1.0)


def test_spectral_derivatives_of_periodic_function():
    grid = Grid1D(x_min=0.0, x_max=2.0 * math.pi, n_points=64)
    f = np.sin(3.0 * grid.x)
    assert np.max(np.abs(grid.derivative(f, 1) - 3.0 * np.cos(3.0 * grid.x))) < 1e-10
    assert np.max(np.abs(grid.derivative(f, 2) + 9.0 * f)) < 1e-9


def test_derivative_order_and_shape_are_checked(grid):
    with pytest.raises(ValueError):
        grid.derivative(np.zeros(grid.n_points), 3)
    with pytest.raises(GridMismatchError):
        grid.derivative(np.zeros(grid.n_points + 1))


def test_interpolation_between_nodes_and_outside_box(grid):
    f = np.exp(-grid.x ** 2)
    points = np.array([0.013, -1.2345, 2.5, 25.0, -30.0])
    values = grid.interpolate(f, points)
    assert np.max(np.abs(values[:3] - np.exp(-points[:3] ** 2))) < 1e-10
    assert np.all(values[3:] == 0.0)


def test_normalized_rejects_zero_state(grid):
    with pytest.raises(NormalizationError):
        WaveFunction.normalized(grid, np.zeros(grid.n_points))


def test_wavefunction_must_match_grid(grid):
    with pytest.raises(GridMismatchError):
        WaveFunction(grid=grid, psi=np.ones(grid.n_points // 2))


def test_observables_of_harmonic_ground_state(harmonic):
    wf = chirped(1.0 / math.sqrt(2.0))
    obs = observables(wf)
    assert obs.q_mean == pytest.approx(0.0, abs=1e-12)
    assert obs.p_mean == pytest.approx(0.0, abs=1e-12)
    assert obs.dq == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-10)
    assert obs.dp == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-10)
    assert obs.uncertainty_product == pytest.approx(0.5, rel=1e-10)
    assert obs.anticom == pytest.approx(0.0, abs=1e-12)
    assert energy(wf, harmonic) == pytest.approx(0.5, rel=1e-10)


def test_boundary_leakage_is_detected():
    wf = chirped(1.0, q=17.0)
    with pytest.raises(BoundaryLeakageError):
        observables(wf)


def test_unnormalized_state_is_rejected(grid):
    wf = WaveFunction(grid=grid, psi=2.0 * chirped(1.0).psi)
    with pytest.raises(NormalizationError):
        observables(wf)


@settings(max_examples=25, deadline=None)
@given(sigma=st.floats(0.4, 1.5), chirp=st.floats(-0.5, 0.5))
def test_heisenberg_bound_for_chirped_gaussians(sigma, chirp):
    obs = observables(chirped(sigma, chirp))
    expected = 0.5 * math.sqrt(1.0 + 16.0 * chirp ** 2 * sigma ** 4)
    assert obs.uncertainty_product >= 0.5 - 1e-10
    assert obs.uncertainty_product == pytest.approx(expected, rel=1e-8)
    assert obs.anticom == pytest.approx(2.0 * chirp * sigma ** 2, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(distance=st.floats(-3.0, 3.0))
def test_band_limited_translation(distance):
    wf = chirped(1.0)
    shifted = BOX.shift(wf.psi, distance)
    expected = chirped(1.0, q=distance).psi
    assert np.max(np.abs(shifted - expected)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(p=st.floats(-3.0, 3.0))
def test_boost_shifts_mean_momentum_only(p):
    rest = observables(chirped(0.8))
    boosted = observables(chirped(0.8, p=p))
    assert boosted.p_mean == pytest.approx(p, abs=1e-9)
    assert boosted.dq == pytest.approx(rest.dq, rel=1e-10)
    assert boosted.dp == pytest.approx(rest.dp, rel=1e-8)


def test_momentum_spread_matches_position_route():
    wf = chirped(0.9, chirp=0.2, p=1.0)
    assert momentum_spread(wf) == pytest.approx(observables(wf).dp, rel=1e-8)


def test_global_phase_alignment():
    wf = chirped(0.9, chirp=0.1)
    rotated = wf.with_psi(wf.psi * np.exp(0.7j))
    assert abs(overlap(wf, rotated)) == pytest.approx(1.0, abs=1e-12)
    assert l2_distance(wf, rotated) > 0.5
    assert l2_distance(wf, align_global_phase(wf, rotated)) < 1e-12
