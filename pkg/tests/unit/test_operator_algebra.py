import math

import numpy as np
import pytest
from pydantic import ValidationError

from squeezelab.processor.exceptions import ProfileError, SupportViolationError
from squeezelab.processor.grid import Grid1D, WaveFunction, l2_distance, observables, overlap
from squeezelab.processor.operator_algebra import (PhaseRule, SqueezeParams, commutator_residual,
                                                   compare_operator_route, derivative_matrix, dilation_matrix, displace,
                                                   fit_quadratic_phase, hermite_gaussian, oracle_sweep,
                                                   squeeze_closed_form, squeeze_matrix_oracle, squeezed_state)
from squeezelab.processor.state_factory import TrajectoryState, assemble_state, ground_state_from_profile

DQ0 = 1.0 / math.sqrt(2.0)


@pytest.fixture
def psi0(gaussian, grid):
    return ground_state_from_profile(gaussian, DQ0, grid)


def test_params_from_dilation_are_consistent():
    params = SqueezeParams.from_f(0.2, DQ0, g=0.3)
    assert params.dq == pytest.approx(DQ0 * math.exp(-0.4))
    again = SqueezeParams.from_trajectory(params.dq, params.dq_dot, DQ0)
    assert again.f == pytest.approx(0.2)
    assert again.g == pytest.approx(0.3)


def test_inconsistent_dilation_is_rejected():
    with pytest.raises(ValidationError):
        SqueezeParams(f=0.1, g=0.0, dq0=1.0, dq=1.0)


def test_chirp_is_undefined_where_one_minus_two_f_vanishes():
    with pytest.raises(ValueError):
        SqueezeParams.from_trajectory(math.exp(-1.0), 0.1, 1.0)


def test_phase_rules():
    flat = SqueezeParams.from_f(0.0, 1.0, g=0.5)
    assert flat.bch_factor() == 1.0
    assert flat.phase_coefficient(PhaseRule.PRINTED) == flat.phase_coefficient(PhaseRule.BCH)
    small = SqueezeParams.from_f(1e-4, 1.0, g=0.5)
    assert small.bch_factor() == pytest.approx(1.0 - 2e-4, rel=1e-7)
    unchirped = SqueezeParams.from_f(0.4, 1.0)
    assert unchirped.phase_coefficient(PhaseRule.PRINTED) == unchirped.phase_coefficient(PhaseRule.BCH) == 0.0


def test_displacement_is_unitary_and_moves_the_packet(psi0):
    moved = displace(psi0, 1.0, 0.5, s0_phase=0.3)
    obs = observables(moved)
    assert moved.norm() == pytest.approx(1.0, abs=1e-12)
    assert obs.q_mean == pytest.approx(1.0, abs=1e-10)
    assert obs.p_mean == pytest.approx(0.5, abs=1e-10)
    twice = displace(displace(psi0, 0.4, 0.2), 0.6, 0.3)
    assert np.max(np.abs(np.abs(twice.psi) - np.abs(moved.psi))) < 1e-9


def test_closed_form_squeeze_sets_dispersion(psi0):
    params = SqueezeParams.from_f(-0.5 * math.log(2.0), DQ0)
    squeezed = squeeze_closed_form(psi0, params)
    assert squeezed.norm() == pytest.approx(1.0, abs=1e-12)
    assert observables(squeezed).dq == pytest.approx(2.0 * DQ0, rel=1e-8)
    raw = squeeze_closed_form(psi0, params, renormalize=False)
    assert raw.norm() == pytest.approx(1.0, abs=1e-8)


def test_squeeze_past_the_box_is_refused(psi0):
    with pytest.raises(SupportViolationError):
        squeeze_closed_form(psi0, SqueezeParams.from_f(-1.5, DQ0))


def test_derivative_matrix_is_antisymmetric_spectral_derivative():
    small = Grid1D(x_min=-8.0, x_max=8.0, n_points=128)
    D = derivative_matrix(small)
    f = np.exp(-small.x ** 2)
    assert np.allclose(D, -D.T)
    assert np.max(np.abs(D @ f - small.derivative(f, 1))) < 1e-10


def test_hermite_gaussians_are_orthonormal(grid):
    h0, h1, h2 = (hermite_gaussian(grid, n, 1.0) for n in range(3))
    assert grid.quadrature(h0 * h0) == pytest.approx(1.0, abs=1e-12)
    assert grid.quadrature(h2 * h2) == pytest.approx(1.0, abs=1e-12)
    assert grid.quadrature(h0 * h1) == pytest.approx(0.0, abs=1e-12)
    assert grid.quadrature(h0 * h2) == pytest.approx(0.0, abs=1e-12)


def test_commutator_identity_on_interior_rows(constants):
    half_width = 12.0 * DQ0
    box = Grid1D(x_min=-half_width, x_max=half_width, n_points=512)
    assert commutator_residual(box, constants) < 1e-6


def test_dilation_matrix_rescales_hermite_gaussians(constants):
    f = -0.5 * math.log(2.0)
    box = Grid1D(x_min=-24.0, x_max=24.0, n_points=512)
    dilation = dilation_matrix(f, box)
    source = WaveFunction(grid=box, psi=hermite_gaussian(box, 2, 1.0).astype(complex), constants=constants)
    expected = source.with_psi(hermite_gaussian(box, 2, 2.0).astype(complex))
    assert l2_distance(dilation.apply(source), expected) < 1e-6


def test_matrix_oracle_is_unitary(constants):
    box = Grid1D(x_min=-10.0, x_max=10.0, n_points=256)
    oracle = squeeze_matrix_oracle(SqueezeParams.from_f(0.2, DQ0, g=0.1), box, constants)
    assert oracle.unitarity_defect() < 1e-8


def test_oracle_sweep_separates_phase_rules(gaussian):
    points = oracle_sweep(gaussian, DQ0, [-0.3, 0.3], g=0.1, n_points=512)
    by_rule = {rule: max(p.distance for p in points if p.phase_rule is rule) for rule in PhaseRule}
    assert len(points) == 4
    assert by_rule[PhaseRule.BCH] < 1e-5
    assert by_rule[PhaseRule.PRINTED] > 1e-3
    assert all(abs(p.norm_change) < 1e-8 for p in points)


def test_oracle_sweep_without_chirp(gaussian):
    points = oracle_sweep(gaussian, DQ0, [-0.4, 0.0, 0.4], g=0.0, n_points=512, phase_rules=(PhaseRule.PRINTED,))
    assert max(p.distance for p in points) < 1e-5


def test_fit_quadratic_phase(grid):
    wf = WaveFunction.normalized(grid, np.exp(-grid.x ** 2 + 1j * (0.3 * grid.x ** 2 + 0.2 * grid.x)))
    c2, c1, _ = fit_quadratic_phase(wf)
    assert c2 == pytest.approx(0.3, rel=1e-8)
    assert c1 == pytest.approx(0.2, rel=1e-7)


def test_unsqueezed_operator_route_matches_model(psi0, gaussian, grid):
    traj = TrajectoryState(q_mean=1.0, v_mean=0.5, dq=DQ0)
    route = squeezed_state(psi0, traj, gaussian)
    model = assemble_state(gaussian, traj, grid)
    assert 1.0 - abs(overlap(route, model)) < 1e-9


def test_operator_route_report(psi0, gaussian):
    traj = TrajectoryState(dq=0.7, dq_dot=0.3)
    reports = [compare_operator_route(psi0, traj, gaussian, rule) for rule in PhaseRule]
    for report in reports:
        assert report.modulus_max_diff < 1e-6
        assert report.measured_dq == pytest.approx(0.7, rel=1e-8)
        assert report.pre_norm == pytest.approx(1.0, abs=1e-8)
        assert report.phase_ratio is not None
        assert report.fitted_phase_operator == pytest.approx(report.closed_form_phase, rel=1e-6)
    assert reports[0].target_phase == reports[1].target_phase


def test_operator_route_rejects_a_profile_of_another_dispersion(psi0, gaussian):
    traj = TrajectoryState(dq=0.7, dq_dot=0.3)
    stretched = gaussian.model_copy(update={'dq0': 1.0})
    with pytest.raises(ProfileError, match='dq0'):
        compare_operator_route(psi0, traj, stretched)
    with pytest.raises(ProfileError):
        squeezed_state(psi0, traj, stretched)


def test_operator_route_accepts_a_profile_without_dispersion(psi0, gaussian):
    traj = TrajectoryState(dq=0.7, dq_dot=0.3)
    report = compare_operator_route(psi0, traj, gaussian.model_copy(update={'dq0': None}))
    assert report.modulus_max_diff < 1e-6
