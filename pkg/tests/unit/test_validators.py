import math

import pytest
import yaml
from pydantic import ValidationError

from squeezelab.processor.coherent_dynamics import DispersionLaw
from squeezelab.processor.validators import (InvariantEntry, InvariantReport, InvariantStatus, ScenarioName,
                                             build_config, default_config_yaml, load_config)


def test_scenario_defaults_are_layered_under_user_values():
    config = build_config({'scenario': 'free-spread', 'integrator': {'dt': 5e-4}})
    assert config.potential.kind == 'free'
    assert config.grid.n_points == 2048
    assert config.integrator.dt == 5e-4
    assert config.integrator.t_span == (0.0, 5.0)
    assert config.integrator.initial.dq == pytest.approx(math.sqrt(0.5))
    assert config.integrator.law is DispersionLaw.PROJECTED


def test_user_values_override_nested_defaults():
    config = build_config({'scenario': 'harmonic-coherent', 'integrator': {'initial': {'v_mean': 0.4}}})
    assert config.integrator.initial.q_mean == 1.0
    assert config.integrator.initial.v_mean == 0.4
    assert config.integrator.initial.dq is None


@pytest.mark.parametrize('override', [
    {'constants': {'mass': -1.0}},
    {'constants': {'hbar': 0.0}},
    {'grid': {'n_points': 1000}},
    {'grid': {'x_min': 5.0, 'x_max': -5.0}},
    {'integrator': {'t_span': [1.0, 0.0]}},
    {'integrator': {'law': 'bogus'}},
    {'potential': {'kind': 'double-well'}},
    {'profile': {'name': 'lorentzian'}},
    {'profile': {'table': '/nonexistent/shape.csv'}},
    {'ensemble': {'n_paths': 10}},
    {'unknown_section': {}},
    {'oracle': {'dt': 1e-3, 'typo': 1}},
])
def test_invalid_configs_are_rejected(override):
    with pytest.raises(ValidationError):
        build_config(dict(override, scenario='harmonic-coherent'))


def test_polynomial_well_needs_initial_dispersion():
    with pytest.raises(ValidationError):
        build_config({'scenario': 'harmonic-coherent', 'potential': {'kind': 'polynomial', 'coefficients': [0, 0, 1]}})
    config = build_config({'scenario': 'harmonic-coherent',
                           'potential': {'kind': 'polynomial', 'coefficients': [0, 0, 1]},
                           'integrator': {'initial': {'dq': 0.5}}})
    assert config.potential.coefficients == [0.0, 0.0, 1.0]


@pytest.mark.parametrize('data', [None, [], {'grid': {}}, {'scenario': 'no-such-scenario'}])
def test_scenario_key_is_required(data):
    with pytest.raises(ValueError):
        build_config(data)


def test_output_directory_honours_environment(monkeypatch):
    config = build_config({'scenario': 'sample', 'output': {'directory': 'runs'}})
    monkeypatch.delenv('SQUEEZELAB_OUT', raising=False)
    assert config.output_directory() == 'runs'
    monkeypatch.setenv('SQUEEZELAB_OUT', '/tmp/elsewhere')
    assert config.output_directory() == '/tmp/elsewhere'


@pytest.mark.parametrize('scenario', list(ScenarioName))
def test_default_config_yaml_reloads(scenario, tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text(default_config_yaml(scenario))
    assert yaml.safe_load(path.read_text())['scenario'] == scenario.value
    assert load_config(path) == build_config({'scenario': scenario.value})


def test_operator_check_disables_the_oracle():
    assert not build_config({'scenario': 'operator-check'}).oracle.enabled
    assert build_config({'scenario': 'sample'}).oracle.enabled


def test_invariant_entries_drop_non_finite_values():
    entry = InvariantEntry(name='norm-conservation', status=InvariantStatus.FAIL, measured=float('nan'),
                           threshold=math.inf)
    assert entry.measured is None
    assert entry.threshold is None
    assert entry.model_dump(mode='json')['status'] == 'fail'


def test_report_passes_unless_a_hard_invariant_fails():
    soft = InvariantEntry(name='energy-balance-model-overlap', status=InvariantStatus.FAIL, hard=False)
    hard = InvariantEntry(name='ehrenfest-center', status=InvariantStatus.PASS, measured=1e-12, threshold=1e-8)
    report = InvariantReport(scenario=ScenarioName.QUENCH_SQUEEZE, entries=[soft, hard])
    assert report.passed
    assert report.names() == ['energy-balance-model-overlap', 'ehrenfest-center']
    broken = hard.model_copy(update={'status': InvariantStatus.FAIL})
    assert not InvariantReport(scenario=ScenarioName.QUENCH_SQUEEZE, entries=[soft, broken]).passed


def test_energy_balance_law_accepts_its_alias():
    assert DispersionLaw('paper-eq22') is DispersionLaw.ENERGY_BALANCE
    config = build_config({'scenario': 'quench-squeeze', 'integrator': {'law': 'paper-eq22'}})
    assert config.integrator.law is DispersionLaw.ENERGY_BALANCE
    with pytest.raises(ValidationError):
        build_config({'scenario': 'quench-squeeze', 'integrator': {'law': 'eq22'}})


def test_feedback_box_holds_the_sech2_tails():
    config = build_config({'scenario': 'feedback'})
    assert (config.grid.x_min, config.grid.x_max, config.grid.n_points) == (-60.0, 60.0, 4096)
    assert config.oracle.leakage_threshold == 1e-8
