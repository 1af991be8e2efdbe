import json
import math

import numpy as np
import pytest

from squeezelab.processor import artifacts
from squeezelab.processor.coherent_dynamics import RECORD_COLUMNS, DispersionLaw, integrate
from squeezelab.processor.state_factory import TrajectoryState, ground_state_from_profile
from squeezelab.processor.validators import InvariantEntry, InvariantReport, InvariantStatus, ScenarioName


def test_csv_values_survive_exactly(tmp_path):
    values = np.array([math.pi, -1.0 / 3.0, 1e-300, 6.02214076e23])
    path = artifacts.write_csv(tmp_path / 'values.csv', {'a': values, 'b': 2.0 * values})
    lines = path.read_text().splitlines()
    assert lines[0] == artifacts.SCHEMA_HEADER
    assert lines[1] == 'a,b'
    table = artifacts.read_csv(path)
    assert np.array_equal(table['a'], values)
    assert np.array_equal(table['b'], 2.0 * values)


def test_csv_columns_must_align(tmp_path):
    with pytest.raises(ValueError):
        artifacts.write_csv(tmp_path / 'ragged.csv', {'a': [1.0, 2.0], 'b': [1.0]})


def test_csv_without_schema_header_is_rejected(tmp_path):
    path = tmp_path / 'plain.csv'
    path.write_text('a,b\n1,2\n')
    with pytest.raises(ValueError):
        artifacts.read_csv(path)


def test_trajectory_stride_keeps_final_row(tmp_path, gaussian, harmonic):
    record = integrate(TrajectoryState(q_mean=1.0, dq=gaussian.dq0), gaussian, harmonic,
                       DispersionLaw.PROJECTED, (0.0, 0.105), 1e-3)
    path = artifacts.write_trajectory(tmp_path / 'trajectory.csv', record, stride=10)
    table = artifacts.read_csv(path)
    assert tuple(table) == RECORD_COLUMNS
    assert table['t'].size == 12
    assert table['t'][-1] == record.t[-1]
    assert table['q_mean'][1] == record.q_mean[10]


def test_frame_columns(tmp_path, gaussian, grid):
    wf = ground_state_from_profile(gaussian, gaussian.dq0, grid)
    table = artifacts.read_csv(artifacts.write_frame(tmp_path / 'frame.csv', wf))
    assert set(table) == {'x', 're_psi', 'im_psi'}
    assert np.array_equal(table['re_psi'], wf.psi.real)


def test_json_report_and_non_finite_values(tmp_path):
    report = InvariantReport(scenario=ScenarioName.SAMPLE, entries=[
        InvariantEntry(name='quadratic-variation', status=InvariantStatus.PASS, measured=1.0, threshold=1e-2)])
    path = artifacts.write_json(tmp_path / 'invariants.json', report)
    data = json.loads(path.read_text())
    assert data['scenario'] == 'sample'
    assert data['entries'][0]['status'] == 'pass'

    listed = json.loads(artifacts.write_json(tmp_path / 'list.json', report.entries).read_text())
    assert listed[0]['name'] == 'quadratic-variation'

    with pytest.raises(ValueError):
        artifacts.write_json(tmp_path / 'bad.json', {'value': float('nan')})
