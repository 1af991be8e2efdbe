import csv
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np
from pydantic import BaseModel

from .coherent_dynamics import RECORD_COLUMNS, TrajectoryRecord
from .grid import WaveFunction
from .nelson_sampler import EnsembleSummary
from .schrodinger_oracle import FidelityReport

logger = logging.getLogger(__name__)

SCHEMA_HEADER = '# squeezelab-schema v1'


def _format(value) -> str:
    return format(float(value), '.17g')


def write_csv(path: Path, columns: Dict[str, Sequence[float]]) -> Path:
    """Versioned CSV: schema comment, header row, then one row per sample with round-trip floats."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[name], dtype=float) for name in names]
    lengths = {array.size for array in arrays}
    if len(lengths) > 1:
        raise ValueError(f"Columns of {path.name} have different lengths: {sorted(lengths)}")
    with open(path, 'w', newline='') as f:
        f.write(SCHEMA_HEADER + '\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(names)
        for row in zip(*arrays):
            writer.writerow([_format(value) for value in row])
    logger.info(f"Wrote {path} ({arrays[0].size if arrays else 0} rows)")
    return path


def read_csv(path: Path) -> Dict[str, np.ndarray]:
    with open(path, newline='') as f:
        header = f.readline().rstrip('\n')
        if header != SCHEMA_HEADER:
            raise ValueError(f"{path} does not start with '{SCHEMA_HEADER}'")
        rows: List[List[str]] = list(csv.reader(f))
    names, body = rows[0], rows[1:]
    values = np.array([[float(cell) for cell in row] for row in body]).reshape(len(body), len(names))
    return {name: values[:, j] for j, name in enumerate(names)}


def write_trajectory(path: Path, record: TrajectoryRecord, stride: int = 1) -> Path:
    indices = np.arange(0, len(record), stride)
    if indices[-1] != len(record) - 1:
        indices = np.append(indices, len(record) - 1)
    columns = record.columns()
    return write_csv(path, {name: columns[name][indices] for name in RECORD_COLUMNS})


def write_fidelity(path: Path, report: FidelityReport) -> Path:
    fields = ('t', 'overlap', 'density_l2', 'q_mean_delta', 'dq_delta')
    return write_csv(path, {name: [getattr(row, name) for row in report.rows] for name in fields})


def write_ensemble(path: Path, summary: EnsembleSummary) -> Path:
    fields = ('t', 'empirical_mean', 'empirical_std', 'model_mean', 'model_std', 'excluded_fraction')
    return write_csv(path, {name: [getattr(row, name) for row in summary.rows] for name in fields})


def write_frame(path: Path, wf: WaveFunction) -> Path:
    return write_csv(path, {'x': wf.grid.x, 're_psi': wf.psi.real, 'im_psi': wf.psi.imag})


def write_json(path: Path, payload) -> Path:
    path = Path(path)
    if isinstance(payload, BaseModel):
        data = payload.model_dump(mode='json')
    elif isinstance(payload, Iterable) and not isinstance(payload, dict):
        data = [item.model_dump(mode='json') if isinstance(item, BaseModel) else item for item in payload]
    else:
        data = payload
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, allow_nan=False)
        f.write('\n')
    logger.info(f"Wrote {path}")
    return path
