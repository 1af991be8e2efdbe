import json
import math

import yaml
from click.testing import CliRunner

from squeezelab.processor.run_scenario import EXIT_CONFIG, cli, handler
from squeezelab.processor.scenarios import INVARIANTS
from squeezelab.processor.validators import ScenarioName


def _config(tmp_path, data):
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_list_scenarios():
    result = CliRunner().invoke(cli, ['list-scenarios'])
    assert result.exit_code == 0
    assert result.output.split() == [s.value for s in ScenarioName]


def test_list_scenarios_with_invariant_catalog():
    result = CliRunner().invoke(cli, ['list-scenarios', '--invariants'])
    assert result.exit_code == 0
    assert 'chain-inequality: ' in result.output
    assert len(result.output.strip().splitlines()) == len(ScenarioName) + 1 + len(INVARIANTS)


def test_print_default_config():
    result = CliRunner().invoke(cli, ['print-default-config', 'quench-squeeze'])
    assert result.exit_code == 0
    data = yaml.safe_load(result.output)
    assert data['scenario'] == 'quench-squeeze'
    assert data['potential']['kind'] == 'time-harmonic'
    assert data['potential']['omega_after'] == 2.0


def test_print_default_config_rejects_unknown_scenario():
    result = CliRunner().invoke(cli, ['print-default-config', 'nonsense'])
    assert result.exit_code == 2


def test_negative_mass_exits_before_writing(tmp_path):
    out = tmp_path / 'out'
    path = _config(tmp_path, {'scenario': 'harmonic-coherent', 'constants': {'mass': -1.0}})
    result = CliRunner().invoke(cli, ['run', path, '--out', str(out)])
    assert result.exit_code == EXIT_CONFIG
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert handler(str(tmp_path / 'absent.yaml'), str(tmp_path / 'out')) == EXIT_CONFIG


def test_malformed_yaml(tmp_path):
    path = tmp_path / 'broken.yaml'
    path.write_text('scenario: [unclosed\n')
    assert handler(str(path)) == EXIT_CONFIG


def test_operator_check_writes_report(tmp_path):
    out = tmp_path / 'out'
    path = _config(tmp_path, {'scenario': 'operator-check',
                              'operator': {'sweep_points': 3, 'sweep_f_max': 0.3}})
    result = CliRunner().invoke(cli, ['run', path, '--out', str(out)])
    assert result.exit_code in (0, 1)
    report = json.loads((out / 'invariants.json').read_text())
    statuses = {entry['name']: entry['status'] for entry in report['entries']}
    assert report['scenario'] == 'operator-check'
    assert statuses['scenario-completed'] == 'pass'
    assert statuses['oracle-unitarity'] == 'pass'
    assert statuses['displacement-unitarity'] == 'pass'
    assert statuses['ehrenfest-center'] == 'skipped'
    assert set(INVARIANTS) <= set(statuses)
    assert (out / 'operator_report.json').exists()


def _run(tmp_path, data):
    out = tmp_path / 'out'
    result = CliRunner().invoke(cli, ['run', _config(tmp_path, data), '--out', str(out)])
    report = json.loads((out / 'invariants.json').read_text())
    return result, {entry['name']: entry['status'] for entry in report['entries']}, out


def _failures(statuses):
    return sorted(name for name, status in statuses.items() if status == 'fail')


def test_harmonic_coherent_single_period(tmp_path):
    result, statuses, out = _run(tmp_path, {'scenario': 'harmonic-coherent',
                                            'integrator': {'t_span': [0.0, 2.0 * math.pi]}})
    assert result.exit_code == 0, _failures(statuses)
    for name in ('ermakov-fixed-point', 'coherent-center-closed-form', 'dispersion-constancy',
                 'pde-model-overlap', 'chain-inequality', 'oracle-convergence-gate', 'scenario-completed'):
        assert statuses[name] == 'pass', name
    assert statuses['energy-balance-fixed-point-rate'] == 'reported'
    assert (out / 'trajectory.csv').exists()
    assert (out / 'frame_final.csv').exists()


def test_quench_squeeze_defaults(tmp_path):
    result, statuses, out = _run(tmp_path, {'scenario': 'quench-squeeze'})
    assert result.exit_code == 0, _failures(statuses)
    for name in ('quench-dispersion-ode', 'quench-dispersion-pde', 'operator-route-modulus',
                 'squeeze-dispersion', 'chain-inequality', 'scenario-completed'):
        assert statuses[name] == 'pass', name
    assert statuses['ermakov-fixed-point'] == 'skipped'
    assert (out / 'operator_report.json').exists()


def test_free_spread_defaults(tmp_path):
    result, statuses, _ = _run(tmp_path, {'scenario': 'free-spread'})
    assert result.exit_code == 0, _failures(statuses)
    for name in ('free-spread-ode', 'free-spread-pde', 'pde-model-overlap', 'chain-inequality',
                 'scenario-completed'):
        assert statuses[name] == 'pass', name


def test_feedback_default_box_holds_the_pde(tmp_path):
    result, statuses, _ = _run(tmp_path, {'scenario': 'feedback', 'integrator': {'t_span': [0.0, 2.0]}})
    assert result.exit_code == 0, _failures(statuses)
    for name in ('feedback-residual', 'feedback-pde-overlap', 'synthesized-harmonic-match',
                 'synthesized-poschl-teller-match', 'chain-inequality', 'scenario-completed'):
        assert statuses[name] == 'pass', name
    assert statuses['ground-state-profile-moments'] == 'reported'


def test_sample_reduced_ensemble(tmp_path):
    result, statuses, out = _run(tmp_path, {
        'scenario': 'sample',
        'integrator': {'t_span': [0.0, 1.0]},
        'ensemble': {'n_paths': 20000, 'seed': 7, 'n_workers': 2, 'chi_square_bins': 20},
    })
    assert statuses['scenario-completed'] == 'pass'
    for name in ('ensemble-exclusion', 'osmotic-exact-bound', 'quadratic-variation', 'sampler-determinism'):
        assert statuses[name] == 'pass', name
    for name in ('ensemble-mean', 'ensemble-std', 'backward-drift', 'osmotic-empirical', 'density-chi-square'):
        assert statuses[name] in ('pass', 'fail'), name
    assert result.exit_code == (1 if _failures(statuses) else 0)
    assert (out / 'ensemble.csv').exists()
