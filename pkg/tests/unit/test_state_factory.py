import math

import numpy as np
import pytest

from squeezelab.processor.exceptions import ProfileError
from squeezelab.processor.grid import PhysConstants, WaveFunction, observables
from squeezelab.processor.state_factory import (SECH2_WIDTH, TrajectoryState, assemble_state, ground_state_from_profile,
                                                named_profile, profile_from_ground_state, profile_from_table,
                                                read_profile_table, uncertainty_identity)


def test_gaussian_profile_moments(gaussian):
    assert gaussian.K == pytest.approx(0.25, rel=1e-10)
    assert gaussian.C_G == pytest.approx(0.25, rel=1e-10)
    assert gaussian.G0 == 0.0
    assert gaussian.G0p == pytest.approx(-0.5)
    assert gaussian.osmotic_product == pytest.approx(0.5, rel=1e-10)
    assert gaussian.expectation(lambda xi: xi ** 2) == pytest.approx(1.0, rel=1e-10)


def test_sech2_profile_moments(sech2):
    assert SECH2_WIDTH ** 2 == pytest.approx(math.pi ** 2 / 12.0)
    assert sech2.K == pytest.approx(math.pi ** 2 / 36.0, rel=1e-8)
    assert sech2.C_G == pytest.approx(math.pi ** 2 / 36.0, rel=1e-8)
    assert sech2.K > 0.25
    assert sech2.expectation(lambda xi: xi ** 2) == pytest.approx(1.0, abs=1e-8)
    assert sech2.K_unweighted > 0


def test_named_profile_rejects_unknown_shape(constants):
    with pytest.raises(ProfileError):
        named_profile('lorentzian', constants)


def test_inverse_cdf_sampling(gaussian, sech2):
    assert gaussian.sample_xi(np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-6)
    assert gaussian.sample_xi(np.array([0.8413447460685429]))[0] == pytest.approx(1.0, abs=1e-4)
    # sech2 quantile: xi = atanh(2u - 1) / a
    u = np.array([0.1, 0.9])
    assert np.allclose(sech2.sample_xi(u), np.arctanh(2.0 * u - 1.0) / SECH2_WIDTH, atol=1e-4)


def test_drift_continues_linearly_beyond_support(sech2):
    edge = sech2.xi_max
    xi = np.array([edge + 2.0, -edge - 3.0])
    expected = np.array([sech2.G(np.array([edge]))[0] + 2.0 * sech2.dG(np.array([edge]))[0],
                         sech2.G(np.array([-edge]))[0] - 3.0 * sech2.dG(np.array([-edge]))[0]])
    assert np.allclose(sech2.drift_G(xi), expected)
    inside = np.linspace(-3.0, 3.0, 7)
    assert np.allclose(sech2.drift_G(inside), sech2.G(inside))


def test_assembled_state_carries_trajectory(sech2, wide_grid):
    traj = TrajectoryState(q_mean=-0.5, v_mean=0.7, dq=1.1, dq_dot=-0.2, S0=0.4)
    wf = assemble_state(sech2, traj, wide_grid)
    obs = observables(wf)
    assert wf.norm() == pytest.approx(1.0, abs=1e-10)
    assert obs.q_mean == pytest.approx(traj.q_mean, abs=1e-9)
    assert obs.p_mean == pytest.approx(traj.v_mean, abs=1e-9)
    assert obs.dq == pytest.approx(traj.dq, rel=1e-8)
    assert obs.anticom == pytest.approx(traj.dq * traj.dq_dot, rel=1e-8)


def test_uncertainty_identity(sech2, gaussian, grid, wide_grid):
    traj = TrajectoryState(dq=0.9, dq_dot=0.4)
    for profile, box in ((gaussian, grid), (sech2, wide_grid)):
        lhs, rhs = uncertainty_identity(profile, traj, grid=box)
        assert lhs == pytest.approx(rhs, rel=1e-8)
        assert lhs > profile.K


def test_ground_state_round_trip_through_profile(gaussian, grid):
    psi0 = ground_state_from_profile(gaussian, gaussian.dq0, grid)
    measured = profile_from_ground_state(psi0, name='measured')
    assert measured.dq0 == pytest.approx(gaussian.dq0, rel=1e-10)
    assert measured.K == pytest.approx(0.25, rel=1e-8)
    assert measured.C_G == pytest.approx(0.25, rel=1e-7)
    xi = np.linspace(-3.0, 3.0, 13)
    assert np.allclose(measured.G(xi), gaussian.G(xi), atol=1e-6)


def test_ground_state_profile_rejects_nodes(grid, constants):
    wf = WaveFunction.normalized(grid, grid.x * np.exp(-grid.x ** 2), constants)
    with pytest.raises(ProfileError):
        profile_from_ground_state(wf)


def _write_table(path, xi, rho, header=True):
    with open(path, 'w') as f:
        if header:
            f.write('# profile table\nxi,rho\n')
        for a, b in zip(xi, rho):
            f.write(f"{float(a):.17g},{float(b):.17g}\n")
    return path


def test_read_profile_table_skips_comments(tmp_path):
    xi = np.linspace(-12.0, 12.0, 41)
    path = _write_table(tmp_path / 'shape.csv', xi, np.exp(-0.5 * xi ** 2))
    nodes, rho = read_profile_table(path)
    assert np.array_equal(nodes, xi)
    assert rho[20] == 1.0


def test_profile_table_validation(tmp_path, constants):
    xi = np.linspace(-12.0, 12.0, 41)
    with pytest.raises(ProfileError):
        read_profile_table(_write_table(tmp_path / 'short.csv', xi[:10], np.ones(10)))
    with pytest.raises(ProfileError):
        profile_from_table(_write_table(tmp_path / 'flat.csv', xi, np.ones(41)), constants)
    with pytest.raises(ProfileError):
        profile_from_table(_write_table(tmp_path / 'negative.csv', xi, -np.exp(-0.5 * xi ** 2)), constants)
    with pytest.raises(ProfileError):
        profile_from_table(_write_table(tmp_path / 'unordered.csv', xi[::-1], np.exp(-0.5 * xi ** 2)), constants)


@pytest.mark.parametrize('name', ['gaussian', 'sech2'])
def test_profile_from_table_matches_built_in_shape(tmp_path, constants, name):
    built_in = named_profile(name, constants)
    xi = np.linspace(-25.0, 25.0, 401)
    path = _write_table(tmp_path / f'{name}.csv', xi, built_in.rho_shape(xi))
    profile = profile_from_table(path, constants)
    assert profile.name == name
    assert profile.dq0 == pytest.approx(1.0, rel=1e-4)
    assert profile.K == pytest.approx(built_in.K, rel=1e-4)
    assert profile.C_G == pytest.approx(built_in.C_G, rel=1e-4)
    assert profile.C_G == pytest.approx(constants.mass * profile.K, rel=1e-12)
    assert profile.expectation(lambda s: s ** 2) == pytest.approx(1.0, abs=1e-8)


def test_profile_from_table_scales_with_mass(tmp_path):
    heavy = PhysConstants(mass=2.0)
    xi = np.linspace(-25.0, 25.0, 401)
    path = _write_table(tmp_path / 'shape.csv', xi, np.exp(-0.5 * xi ** 2))
    profile = profile_from_table(path, heavy)
    assert profile.K == pytest.approx(0.0625, rel=1e-4)
    assert profile.C_G == pytest.approx(2.0 * profile.K, rel=1e-12)
