"""
Euler-Maruyama sampling of the Nelson diffusion behind a coherent-state trajectory:

    dq = v_plus(q, t) dt + sqrt(hbar/m) dW,   v_plus = <v> + xi dq_dot + G(xi) / dq

Paths are generated in fixed-size blocks. Block b draws from a Philox stream
keyed by SeedSequence([seed, b]), so the ensemble depends on the seed and the
block size only, never on how blocks are spread over worker threads.
"""
import concurrent.futures
import hashlib
import logging
import time
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import ndtri
from scipy.stats import chisquare

from .coherent_dynamics import TrajectoryRecord
from .exceptions import ExclusionError, ExtrapolationError
from .state_factory import XI_MAX, StateProfile

logger = logging.getLogger(__name__)

MIN_BIN_SAMPLES = 100


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(100000, ge=100)
    dt: float = Field(1e-3, gt=0)
    seed: int = 0
    t_span: Tuple[float, float] = (0.0, 2.0 * np.pi)
    output_stride: int = Field(100, ge=1)
    backward_lag_steps: int = Field(10, ge=1)
    xi_max: float = Field(XI_MAX, gt=0)
    block_size: int = Field(4096, ge=1)
    n_workers: int = Field(4, ge=1)
    max_excluded_fraction: float = Field(0.01, ge=0, le=1)

    @model_validator(mode='after')
    def lag_fits_stride(self):
        if self.backward_lag_steps > self.output_stride:
            raise ValueError(f"backward_lag_steps ({self.backward_lag_steps}) must not exceed "
                             f"output_stride ({self.output_stride})")
        if not self.t_span[1] > self.t_span[0]:
            raise ValueError(f"t_span must be increasing, got {self.t_span}")
        return self

    @property
    def n_steps(self) -> int:
        return max(1, int(round((self.t_span[1] - self.t_span[0]) / self.dt)))


class PathEnsemble(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    positions: np.ndarray
    lagged: np.ndarray
    excluded: np.ndarray
    quadratic_variation: np.ndarray
    dt: float
    lag_time: float
    n_steps: int

    @property
    def n_paths(self) -> int:
        return self.positions.shape[0]

    @property
    def excluded_fraction(self) -> float:
        return float(np.mean(self.excluded))

    @property
    def kept(self) -> np.ndarray:
        return self.positions[~self.excluded]


class SummaryRow(BaseModel):
    t: float
    empirical_mean: float
    empirical_std: float
    model_mean: float
    model_std: float
    excluded_fraction: float


class EnsembleSummary(BaseModel):
    rows: List[SummaryRow]
    n_kept: int

    def mean_deviation(self) -> float:
        """Largest |empirical - model| mean in units of dq / sqrt(n)."""
        return max(abs(r.empirical_mean - r.model_mean) / (r.model_std / np.sqrt(self.n_kept)) for r in self.rows)

    def std_deviation(self) -> float:
        """Largest |empirical - model| std in units of dq / sqrt(2n)."""
        return max(abs(r.empirical_std - r.model_std) / (r.model_std / np.sqrt(2.0 * self.n_kept))
                   for r in self.rows)


class BackwardReport(BaseModel):
    max_deviation: float = Field(description="largest bin deviation in units of its CLT band")
    bins_used: int
    bins_skipped: int


class OsmoticReport(BaseModel):
    exact: float
    empirical: float
    band: float
    bound: float

    @property
    def agreement(self) -> float:
        return abs(self.exact - self.empirical) / self.band


class QuadraticVariationReport(BaseModel):
    measured: float
    expected: float

    @property
    def ratio(self) -> float:
        return self.measured / self.expected


class _Schedule(BaseModel):
    """Trajectory coefficients at every sampler time."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    q_mean: np.ndarray
    v_mean: np.ndarray
    dq: np.ndarray
    dq_dot: np.ndarray


def _schedule(record: TrajectoryRecord, cfg: EnsembleConfig) -> _Schedule:
    times = cfg.t_span[0] + cfg.dt * np.arange(cfg.n_steps + 1)
    slack = 1e-9 * max(1.0, abs(times[-1]))
    if times[0] < record.t[0] - slack or times[-1] > record.t[-1] + slack:
        raise ExtrapolationError(f"Sampling span [{times[0]:g}, {times[-1]:g}] exceeds the recorded trajectory "
                                 f"[{record.t[0]:g}, {record.t[-1]:g}]")
    times = np.clip(times, record.t[0], record.t[-1])
    splines = record.splines(('q_mean', 'v_mean', 'dq', 'dq_dot'))
    return _Schedule(times=times, **{name: spline(times) for name, spline in splines.items()})


def _sample_block(block: int, n_paths: int, profile: StateProfile, schedule: _Schedule, cfg: EnsembleConfig):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, block])))
    sigma = np.sqrt(profile.constants.hbar / profile.constants.mass * cfg.dt)
    n_out = cfg.n_steps // cfg.output_stride + 1
    positions = np.empty((n_paths, n_out))
    lagged = np.full((n_paths, n_out), np.nan)
    excluded = np.zeros(n_paths, dtype=bool)
    qv = np.zeros(n_paths)

    x = schedule.q_mean[0] + schedule.dq[0] * profile.sample_xi(rng.random(n_paths))
    positions[:, 0] = x
    if cfg.backward_lag_steps == cfg.output_stride and n_out > 1:
        lagged[:, 1] = x
    for i in range(cfg.n_steps):
        xi = (x - schedule.q_mean[i]) / schedule.dq[i]
        excluded |= np.abs(xi) > cfg.xi_max
        drift = schedule.v_mean[i] + xi * schedule.dq_dot[i] + profile.drift_G(xi) / schedule.dq[i]
        noise = sigma * ndtri(rng.random(n_paths))
        x = x + drift * cfg.dt + noise
        qv += noise ** 2
        step = i + 1
        if (step + cfg.backward_lag_steps) % cfg.output_stride == 0:
            k = (step + cfg.backward_lag_steps) // cfg.output_stride
            if k < n_out:
                lagged[:, k] = x
        if step % cfg.output_stride == 0:
            positions[:, step // cfg.output_stride] = x
    xi = (x - schedule.q_mean[-1]) / schedule.dq[-1]
    excluded |= np.abs(xi) > cfg.xi_max
    return positions, lagged, excluded, qv


def sample_forward(profile: StateProfile, record: TrajectoryRecord, cfg: EnsembleConfig) -> PathEnsemble:
    """Forward Euler-Maruyama ensemble started from rho(x, t0) by inverse-CDF sampling of the profile."""
    start_time = time.time()
    schedule = _schedule(record, cfg)
    sizes = [min(cfg.block_size, cfg.n_paths - start) for start in range(0, cfg.n_paths, cfg.block_size)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.n_workers) as executor:
        tasks = [executor.submit(_sample_block, b, size, profile, schedule, cfg) for b, size in enumerate(sizes)]
        blocks = [task.result() for task in tasks]

    positions, lagged, excluded, qv = (np.concatenate([block[j] for block in blocks]) for j in range(4))
    n_out = positions.shape[1]
    ensemble = PathEnsemble(times=schedule.times[::cfg.output_stride][:n_out], positions=positions, lagged=lagged,
                            excluded=excluded, quadratic_variation=qv, dt=cfg.dt,
                            lag_time=cfg.backward_lag_steps * cfg.dt, n_steps=cfg.n_steps)
    fraction = ensemble.excluded_fraction
    logger.info(f"Sampled {cfg.n_paths} paths x {cfg.n_steps} steps in {len(sizes)} blocks, "
                f"excluded fraction {fraction:.2e}, took {time.time() - start_time:.2f} seconds")
    if fraction > cfg.max_excluded_fraction:
        raise ExclusionError(f"{fraction:.2%} of paths left |xi| <= {cfg.xi_max}, "
                             f"above the {cfg.max_excluded_fraction:.2%} limit")
    return ensemble


def _model_at(record: TrajectoryRecord, times: np.ndarray):
    splines = record.splines(('q_mean', 'v_mean', 'dq', 'dq_dot'))
    return {name: spline(times) for name, spline in splines.items()}


def ensemble_summary(ensemble: PathEnsemble, record: TrajectoryRecord) -> EnsembleSummary:
    kept = ensemble.kept
    model = _model_at(record, ensemble.times)
    rows = [SummaryRow(t=float(t), empirical_mean=float(np.mean(kept[:, k])), empirical_std=float(np.std(kept[:, k])),
                       model_mean=float(model['q_mean'][k]), model_std=float(model['dq'][k]),
                       excluded_fraction=ensemble.excluded_fraction)
            for k, t in enumerate(ensemble.times)]
    return EnsembleSummary(rows=rows, n_kept=kept.shape[0])


def density_chi_square(ensemble: PathEnsemble, profile: StateProfile, record: TrajectoryRecord,
                       index: int = -1, n_bins: int = 50) -> Tuple[float, float]:
    """Pearson chi-square of sampled xi against equiprobable profile bins; returns (statistic, p-value)."""
    model = _model_at(record, ensemble.times[[index]])
    xi = (ensemble.kept[:, index] - model['q_mean'][0]) / model['dq'][0]
    inner_edges = profile.sample_xi(np.arange(1, n_bins) / n_bins)
    counts = np.bincount(np.searchsorted(inner_edges, xi), minlength=n_bins)
    result = chisquare(counts)
    return float(result.statistic), float(result.pvalue)


def backward_consistency(ensemble: PathEnsemble, profile: StateProfile, record: TrajectoryRecord,
                         n_bins: int = 20, xi_range: float = 3.0) -> BackwardReport:
    """
    Binned conditional mean of the backward increment (q(t) - q(t - lag)) / lag
    given q(t), against v_minus = v - u averaged over the same samples.
    """
    model = _model_at(record, ensemble.times)
    edges = np.linspace(-xi_range, xi_range, n_bins + 1)
    worst, used, skipped = 0.0, 0, 0
    keep = ~ensemble.excluded
    for k in range(1, ensemble.times.size):
        if np.all(np.isnan(ensemble.lagged[:, k])):
            continue
        x = ensemble.positions[keep, k]
        rate = (x - ensemble.lagged[keep, k]) / ensemble.lag_time
        dq = model['dq'][k]
        xi = (x - model['q_mean'][k]) / dq
        v_minus = model['v_mean'][k] + xi * model['dq_dot'][k] - profile.drift_G(xi) / dq
        labels = np.digitize(xi, edges)
        for label in range(1, n_bins + 1):
            members = labels == label
            count = int(members.sum())
            if count < MIN_BIN_SAMPLES:
                skipped += 1
                continue
            band = np.std(rate[members]) / np.sqrt(count)
            deviation = abs(np.mean(rate[members]) - np.mean(v_minus[members])) / band
            worst = max(worst, float(deviation))
            used += 1
    return BackwardReport(max_deviation=worst, bins_used=used, bins_skipped=skipped)


def osmotic_uncertainty(ensemble: PathEnsemble, profile: StateProfile, record: TrajectoryRecord,
                        index: int = -1) -> OsmoticReport:
    """m Dq Du exactly (m sqrt(K)) and from the spread of u(q_i) over the ensemble at one output time."""
    m, hbar = profile.constants.mass, profile.constants.hbar
    model = _model_at(record, ensemble.times[[index]])
    dq = model['dq'][0]
    xi = (ensemble.kept[:, index] - model['q_mean'][0]) / dq
    u = profile.drift_G(xi) / dq
    empirical = m * dq * float(np.std(u))
    g_squared = (dq * u) ** 2
    band = m * float(np.std(g_squared)) / (2.0 * np.sqrt(profile.K) * np.sqrt(xi.size))
    return OsmoticReport(exact=profile.osmotic_product, empirical=empirical, band=band, bound=0.5 * hbar)


def quadratic_variation(ensemble: PathEnsemble, profile: StateProfile) -> QuadraticVariationReport:
    """Mean per-step squared martingale increment against (hbar/m) dt."""
    measured = float(np.mean(ensemble.quadratic_variation[~ensemble.excluded])) / ensemble.n_steps
    expected = profile.constants.hbar / profile.constants.mass * ensemble.dt
    return QuadraticVariationReport(measured=measured, expected=expected)


def seeded_fingerprint(ensemble: PathEnsemble) -> str:
    """Hex digest of the position array, for determinism checks between runs."""
    return hashlib.sha256(np.ascontiguousarray(ensemble.positions).tobytes()).hexdigest()
