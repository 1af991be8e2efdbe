"""
Scenario orchestration. Each scenario builds its profile and potential from
the config, runs the model, oracle, sampler and operator routes it needs, and
records every catalogued invariant as pass, fail, reported or skipped.
"""
import contextlib
import logging
import math
import time
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from . import artifacts
from .coherent_dynamics import (DispersionLaw, TrajectoryRecord, action_rate, density_rate, ermakov_quench_variance,
                                feedback_diagnostic, free_spread_variance, integrate, rhs, synthesize_potential)
from .exceptions import SingularDispersionError, SqueezeLabError
from .grid import LEAKAGE_THRESHOLD, Grid1D, PhysConstants, WaveFunction, energy, l2_distance, observables, overlap
from .hydrodynamics import chain_inequality, continuity_residual, decompose, hjm_residual
from .nelson_sampler import (EnsembleConfig, backward_consistency, density_chi_square, ensemble_summary,
                             osmotic_uncertainty, quadratic_variation, sample_forward, seeded_fingerprint)
from .operator_algebra import (PhaseRule, SqueezeParams, commutator_residual, compare_operator_route, dilation_matrix,
                               displace, hermite_gaussian, oracle_equivalence, oracle_sweep, squeeze_closed_form,
                               squeeze_matrix_oracle, squeezed_state)
from .potentials import (HarmonicPotential, PolynomialPotential, PoschlTellerPotential, PotentialModel,
                         TimeHarmonicPotential)
from .schrodinger_oracle import (FidelityReport, PropagationResult, PropagatorConfig, check_convergence,
                                 compare_with_model, convergence_order, propagate, relax_ground_state)
from .state_factory import (SECH2_WIDTH, StateProfile, TrajectoryState, assemble_state, ground_state_from_profile,
                            named_profile, profile_from_ground_state, profile_from_table, sech2_profile,
                            uncertainty_identity)
from .validators import InvariantEntry, InvariantReport, InvariantStatus, ScenarioConfig, ScenarioName

logger = logging.getLogger(__name__)

SUPPORT_FLOOR = 1e-8
MODEL_SAMPLES = 9
CHAIN_TOLERANCE = 1e-8

INVARIANTS: Dict[str, str] = {
    'scenario-completed': "the scenario ran to the end without a numerical failure",
    'ermakov-fixed-point': "|rhs| <= 1e-12 at the stationary dispersion of the projected law",
    'energy-balance-fixed-point-rate': "dq'' of the energy-balance law at the projected fixed point",
    'ehrenfest-center': "d<v>/dt + <dPhi/dx>/m = 0 along the record",
    'coherent-center-closed-form': "q_mean(t) against the classical harmonic solution",
    'dispersion-constancy': "dq stays at its initial value in a harmonic well",
    'rk4-step-halving': "halving the RK4 step changes the final state by <= 1e-9",
    'quench-dispersion-ode': "model dq^2(t) against the closed-form quench law",
    'quench-dispersion-pde': "PDE dq^2(t) against the closed-form quench law",
    'free-spread-ode': "model dq^2(t) against free spreading",
    'free-spread-pde': "PDE dq^2(t) against free spreading",
    'energy-balance-model-overlap': "energy-balance model against the PDE until the model stops",
    'pde-model-overlap': "PDE frames against assembled model states",
    'pde-center-agreement': "PDE <q> against the model record",
    'pde-dispersion-agreement': "PDE dq against the model record",
    'oracle-convergence-gate': "halving the split step changes the final state by < 1e-8",
    'split-step-order': "observed order of the Strang splitting",
    'norm-conservation': "PDE norm drift per 1e4 steps",
    'energy-conservation': "PDE energy drift for static potentials",
    'chain-inequality': "(DqDp)^2 >= (m Dq Du)^2 >= hbar^2/4 on every state checked",
    'gaussian-saturation': "m Dq Du = hbar/2 for the Gaussian profile",
    'uncertainty-identity': "(DqDp)^2 = m^2 K + (m dq dq')^2 along the record",
    'continuity-residual': "continuity residual of assembled model states",
    'hjm-residual': "Hamilton-Jacobi-Madelung residual at x = <q>",
    'feedback-residual': "<dPhi/dx> against dPhi/dx at <q> plus the quantum correction",
    'synthesized-harmonic-match': "synthesized potential of a Gaussian coherent run against the harmonic well",
    'synthesized-poschl-teller-match': "synthesized potential of the static sech2 state against its well",
    'feedback-pde-overlap': "PDE in the synthesized potential against the model",
    'ground-state-profile-moments': "K of the relaxed Poschl-Teller ground state against the sech2 profile",
    'ensemble-exclusion': "fraction of paths leaving the profile support",
    'ensemble-mean': "empirical mean against <q>(t) in CLT bands",
    'ensemble-std': "empirical std against dq(t) in CLT bands",
    'density-chi-square': "chi-square p-value of the stationary ensemble",
    'backward-drift': "binned backward increments against v - u in CLT bands",
    'osmotic-exact-bound': "m sqrt(K) >= hbar/2",
    'osmotic-empirical': "empirical m Dq Du against m sqrt(K) in CLT bands",
    'quadratic-variation': "per-step quadratic variation against (hbar/m) dt",
    'sampler-determinism': "ensembles independent of the worker count",
    'oracle-equivalence': "closed-form squeeze against exp(iM) at the requested dq ratio",
    'oracle-sweep-g0': "closed form against exp(iM) over f with g = 0",
    'oracle-sweep-bch': "bch phase rule against exp(iM) over f with g != 0",
    'oracle-sweep-printed': "printed phase rule against exp(iM) over f with g != 0",
    'oracle-unitarity': "orthonormality of exp(iM) columns on the interior",
    'commutator-residual': "[{q,p}, q^2] + 4 i hbar q^2 on interior rows",
    'dilation-identity': "exp(f(xD + Dx)) W against exp(f) W(exp(2f) x)",
    'squeeze-dispersion': "output dq of the squeeze against the requested dq",
    'displacement-unitarity': "norm change under displacement",
    'displacement-composition': "two displacements against one, modulus difference",
    'operator-zero-squeeze': "operator route with f = 0 against the assembled state",
    'operator-route-modulus': "operator route modulus against the assembled state",
    'operator-route-phase-ratio': "closed-form phase curvature over m dq'/(2 hbar dq)",
}


def _whole_span(t_span: Sequence[float], step: float) -> Tuple[float, float]:
    t0, t1 = float(t_span[0]), float(t_span[1])
    return t0, t0 + max(1, int(round((t1 - t0) / step))) * step


def _sample_indices(record: TrajectoryRecord, count: int = MODEL_SAMPLES) -> np.ndarray:
    return np.unique(np.linspace(1, len(record) - 2, count).astype(int))


def _support(wf: WaveFunction) -> np.ndarray:
    return wf.density > SUPPORT_FLOOR * wf.density.max()


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = Path(output_dir or config.output_directory())
        self.constants = PhysConstants(hbar=config.constants.hbar, mass=config.constants.mass)
        self.grid = Grid1D(x_min=config.grid.x_min, x_max=config.grid.x_max, n_points=config.grid.n_points)
        self.entries: Dict[str, InvariantEntry] = {}
        self._chain_states = 0
        self._chain_worst = -math.inf

    # invariant bookkeeping

    def _add(self, entry: InvariantEntry):
        self.entries[entry.name] = entry
        if entry.status is InvariantStatus.FAIL:
            logger.warning(f"Invariant {entry.name} failed: measured {entry.measured}, threshold {entry.threshold} "
                           f"{entry.detail}")
        else:
            logger.info(f"Invariant {entry.name}: {entry.status.value} (measured {entry.measured})")

    def _check(self, name: str, measured: float, threshold: float, detail: str = '', at_least: bool = False):
        measured = float(measured)
        ok = math.isfinite(measured) and (measured >= threshold if at_least else measured <= threshold)
        self._add(InvariantEntry(name=name, status=InvariantStatus.PASS if ok else InvariantStatus.FAIL,
                                 measured=measured, threshold=threshold, hard=True, detail=detail))

    def _reported(self, name: str, measured: Optional[float], detail: str = '', threshold: Optional[float] = None):
        self._add(InvariantEntry(name=name, status=InvariantStatus.REPORTED, measured=measured,
                                 threshold=threshold, hard=False, detail=detail))

    def _fail(self, name: str, detail: str):
        self._add(InvariantEntry(name=name, status=InvariantStatus.FAIL, hard=True, detail=detail))

    @contextlib.contextmanager
    def _guard(self, *names: str):
        try:
            yield
        except SqueezeLabError as e:
            logger.error(f"Check {', '.join(names)} raised {type(e).__name__}: {e}")
            for name in names:
                if name not in self.entries:
                    self._fail(name, f"{type(e).__name__}: {e}")

    def _report(self) -> InvariantReport:
        scenario = self.config.scenario.value
        entries = [self.entries.get(name) or InvariantEntry(
            name=name, status=InvariantStatus.SKIPPED, hard=False,
            detail=f"not exercised by the {scenario} scenario") for name in INVARIANTS]
        entries += [entry for name, entry in self.entries.items() if name not in INVARIANTS]
        return InvariantReport(scenario=self.config.scenario, entries=entries)

    # entry point

    def run(self) -> InvariantReport:
        start_time = time.time()
        scenario = self.config.scenario
        logger.info(f"Starting scenario {scenario.value}, writing to {self.output_dir}")
        self.output_dir.mkdir(parents=True, exist_ok=True)
        runners = {
            ScenarioName.HARMONIC_COHERENT: self.harmonic_coherent,
            ScenarioName.QUENCH_SQUEEZE: self.quench_squeeze,
            ScenarioName.FREE_SPREAD: self.free_spread,
            ScenarioName.FEEDBACK: self.feedback,
            ScenarioName.SAMPLE: self.sample,
            ScenarioName.OPERATOR_CHECK: self.operator_check,
        }
        try:
            runners[scenario]()
            self._finish_chain()
            self._add(InvariantEntry(name='scenario-completed', status=InvariantStatus.PASS))
        except Exception as e:
            self._fail('scenario-completed', f"{type(e).__name__}: {e}")
            raise
        finally:
            report = self._report()
            artifacts.write_json(self.output_dir / 'invariants.json', report)
            failures = [entry.name for entry in report.entries if entry.hard and entry.status is InvariantStatus.FAIL]
            logger.info(f"Scenario {scenario.value} took {time.time() - start_time:.2f} seconds, "
                        f"{len(failures)} hard failures{': ' + ', '.join(failures) if failures else ''}")
        return report

    # building blocks

    def _potential(self) -> PotentialModel:
        p, m = self.config.potential, self.constants.mass
        if p.kind == 'harmonic':
            return HarmonicPotential(omega=p.omega, center=p.center, mass=m)
        if p.kind == 'time-harmonic':
            return TimeHarmonicPotential(omega=p.omega, omega_after=p.omega_after, t_quench=p.t_quench,
                                         center=p.center, mass=m)
        if p.kind == 'poschl-teller':
            return PoschlTellerPotential(width=p.width, lam=p.lam, hbar=self.constants.hbar, mass=m)
        if p.kind == 'free':
            return PolynomialPotential.free(m)
        return PolynomialPotential(coefficients=p.coefficients, mass=m)

    def _profile(self, dq0: Optional[float] = None) -> StateProfile:
        section = self.config.profile
        if section.table is not None:
            profile = profile_from_table(section.table, self.constants)
        else:
            profile = named_profile(section.name, self.constants)
        return profile.model_copy(update={'dq0': dq0}) if dq0 is not None else profile

    def _stationary_dq(self, profile: StateProfile) -> float:
        """Projected-law fixed point in the initial well, dq^4 = C_G / (m omega^2)."""
        initial = self.config.integrator.initial
        if initial.dq is not None:
            return initial.dq
        omega = self.config.potential.omega
        return float((profile.C_G / (self.constants.mass * omega ** 2)) ** 0.25)

    def _setup(self) -> Tuple[StateProfile, PotentialModel, TrajectoryState]:
        base = self._profile()
        dq0 = self._stationary_dq(base)
        profile = base.model_copy(update={'dq0': dq0})
        i = self.config.integrator.initial
        initial = TrajectoryState(q_mean=i.q_mean, v_mean=i.v_mean, dq=dq0, dq_dot=i.dq_dot, S0=i.S0,
                                  t=self.config.integrator.t_span[0])
        logger.info(f"Profile {profile.name}: K={profile.K:.10g}, C_G={profile.C_G:.10g}, dq0={dq0:.10g}")
        return profile, self._potential(), initial

    def _integrate(self, profile, potential, initial, law=None, t_span=None, dt=None) -> TrajectoryRecord:
        integrator = self.config.integrator
        dt = dt or integrator.dt
        span = _whole_span(t_span or integrator.t_span, dt)
        return integrate(initial, profile, potential, law or integrator.law, span, dt)

    def _write_trajectory(self, record: TrajectoryRecord, name: str = 'trajectory.csv'):
        artifacts.write_trajectory(self.output_dir / name, record, self.config.output.trajectory_stride)

    def _oracle(self, profile: StateProfile, record: TrajectoryRecord,
                potential: PotentialModel) -> Tuple[PropagationResult, int]:
        o = self.config.oracle
        cfg = PropagatorConfig(dt=o.dt, output_stride=o.output_stride, potential=potential,
                               leakage_threshold=o.leakage_threshold)
        frame_step = o.dt * o.output_stride
        t0 = float(record.t[0])
        n_frames = int(math.floor((float(record.t[-1]) - t0) / frame_step + 1e-9))
        n_steps = n_frames * o.output_stride
        wf0 = assemble_state(profile, record.state_at(0), self.grid, self.constants)
        result = propagate(wf0, cfg, (t0, t0 + n_steps * o.dt))
        artifacts.write_frame(self.output_dir / 'frame_final.csv', result.final)
        return result, n_steps

    # shared checks

    def _closed_form_fixed_point(self, profile: StateProfile) -> Tuple[float, str]:
        """Stationary dq of the projected law, dq^4 = K / omega^2, with K in closed form for the built-in shapes."""
        hbar, m, omega = self.constants.hbar, self.constants.mass, self.config.potential.omega
        closed_K = {'gaussian': (0.5 * hbar / m) ** 2, 'sech2': (hbar / m) ** 2 * math.pi ** 2 / 36.0}
        if self.config.profile.table is None and profile.name in closed_K:
            return (closed_K[profile.name] / omega ** 2) ** 0.25, 'closed-form K'
        return (profile.C_G / (m * omega ** 2)) ** 0.25, 'tabulated C_G'

    def _fixed_point_checks(self, profile: StateProfile, potential: PotentialModel):
        dq, source = self._closed_form_fixed_point(profile)
        at_rest = TrajectoryState(q_mean=self.config.potential.center, dq=dq, t=self.config.integrator.t_span[0])
        with self._guard('ermakov-fixed-point'):
            rate = rhs(at_rest, profile, potential, DispersionLaw.PROJECTED)
            worst = max(abs(rate.q_dot), abs(rate.v_dot), abs(rate.dq_dot), abs(rate.dq_ddot))
            self._check('ermakov-fixed-point', worst, 1e-12,
                        detail=f"dq = {dq:.12g} from {source}, S0' = {rate.S0_dot:.12g}")
        with self._guard('energy-balance-fixed-point-rate'):
            rate = rhs(at_rest, profile, potential, DispersionLaw.ENERGY_BALANCE)
            self._reported('energy-balance-fixed-point-rate', rate.dq_ddot,
                           detail="nonzero means the fixed point of the projected law is not stationary here")

    def _ehrenfest(self, record: TrajectoryRecord):
        v, h = record.v_mean, record.dt
        if v.size >= 5:
            derivative = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / (12.0 * h)
            self._check('ehrenfest-center', np.max(np.abs(derivative - record.v_dot[2:-2])), 1e-8,
                        detail="fourth-order difference of v_mean against -<dPhi/dx>/m")

    def _record_checks(self, record: TrajectoryRecord):
        self._ehrenfest(record)
        self._check('feedback-residual', np.max(np.abs(record.feedback_residual)), 1e-10)

    def _model_state_checks(self, profile: StateProfile, record: TrajectoryRecord, potential: PotentialModel,
                            hjm_threshold: float = 1e-6, identity: bool = True):
        m = self.constants.mass
        worst_identity, worst_continuity, worst_hjm = 0.0, 0.0, 0.0
        with self._guard('uncertainty-identity', 'continuity-residual', 'hjm-residual', 'chain-inequality'):
            for index in _sample_indices(record):
                state = record.state_at(index)
                t = float(record.t[index])
                coefficients = record.coefficients_at(index)
                wf = assemble_state(profile, state, self.grid, self.constants)
                h = decompose(wf)
                x = self.grid.x
                rho_dot = density_rate(profile, coefficients, x)
                worst_continuity = max(worst_continuity, continuity_residual(h, rho_dot).max_abs)
                pin = int(np.argmin(np.abs(x - state.q_mean)))
                residual = hjm_residual(h, action_rate(m, coefficients, x), potential, t)
                worst_hjm = max(worst_hjm, abs(float(residual.field[pin])))
                if identity:
                    lhs, rhs_value = uncertainty_identity(profile, state, self.constants, self.grid)
                    worst_identity = max(worst_identity, abs(lhs - rhs_value) / rhs_value)
                self._chain(wf)
            self._check('continuity-residual', worst_continuity, 1e-6)
            self._check('hjm-residual', worst_hjm, hjm_threshold)
            if identity:
                self._check('uncertainty-identity', worst_identity, 1e-6, detail="relative")

    def _chain(self, wf: WaveFunction, leakage_threshold: float = LEAKAGE_THRESHOLD):
        report = chain_inequality(wf, leakage_threshold=leakage_threshold)
        self._note_chain(max(report.osmotic - report.heisenberg, report.bound - report.osmotic))

    def _note_chain(self, margin: float):
        self._chain_states += 1
        self._chain_worst = max(self._chain_worst, float(margin))

    def _finish_chain(self):
        if self._chain_states and 'chain-inequality' not in self.entries:
            self._check('chain-inequality', self._chain_worst, CHAIN_TOLERANCE,
                        detail=f"worst margin over {self._chain_states} states")

    def _gaussian_saturation(self, profile: StateProfile, record: TrajectoryRecord):
        if profile.name != 'gaussian':
            return
        with self._guard('gaussian-saturation'):
            wf = assemble_state(profile, record.state_at(len(record) - 1), self.grid, self.constants)
            h = decompose(wf)
            product = self.constants.mass * observables(wf).dq * h.spread(h.u)
            self._check('gaussian-saturation', abs(product - 0.5 * self.constants.hbar), 1e-8)

    def _pde_checks(self, profile: StateProfile, record: TrajectoryRecord, result: PropagationResult,
                    n_steps: int, potential: PotentialModel, overlap_threshold: float,
                    overlap_name: str = 'pde-model-overlap', window: Optional[float] = None):
        """Fidelity against the model plus norm, energy and chain checks on every frame."""
        with self._guard(overlap_name, 'pde-center-agreement', 'pde-dispersion-agreement'):
            fidelity = compare_with_model(result, profile, record)
            artifacts.write_fidelity(self.output_dir / 'fidelity.csv', fidelity)
            if window is not None:
                fidelity = FidelityReport(rows=[row for row in fidelity.rows if row.t <= window + 1e-12])
            self._check(overlap_name, 1.0 - fidelity.min_overlap, overlap_threshold,
                        detail=f"1 - min overlap over t <= {fidelity.rows[-1].t:.6g}")
            # the 1e-6 moment agreement belongs to exact coherent solutions
            if overlap_threshold <= 1e-8:
                self._check('pde-center-agreement', fidelity.max_q_mean_delta, 1e-6)
                self._check('pde-dispersion-agreement', fidelity.max_dq_delta, 1e-6)
            else:
                self._reported('pde-center-agreement', fidelity.max_q_mean_delta, threshold=1e-6)
                self._reported('pde-dispersion-agreement', fidelity.max_dq_delta, threshold=1e-6)
        norms = np.array([frame.norm() for frame in result.frames])
        self._check('norm-conservation', np.max(np.abs(norms - 1.0)) / max(1.0, n_steps / 1e4), 1e-10,
                    detail=f"over {n_steps} steps")
        if potential.is_static:
            energies = np.array([energy(frame, potential, float(t)) for t, frame in zip(result.times, result.frames)])
            self._check('energy-conservation', np.max(np.abs(energies - energies[0])) / abs(energies[0]), 1e-8,
                        detail="relative")
        with self._guard('chain-inequality'):
            for frame in result.frames:
                self._chain(frame, self.config.oracle.leakage_threshold)

    # scenarios

    def harmonic_coherent(self):
        profile, potential, initial = self._setup()
        record = self._integrate(profile, potential, initial)
        self._write_trajectory(record)
        if self.config.potential.kind == 'harmonic':
            self._fixed_point_checks(profile, potential)
        self._record_checks(record)

        omega, center = self.config.potential.omega, self.config.potential.center
        elapsed = record.t - record.t[0]
        expected = center + (initial.q_mean - center) * np.cos(omega * elapsed) + initial.v_mean / omega * np.sin(
            omega * elapsed)
        self._check('coherent-center-closed-form', np.max(np.abs(record.q_mean - expected)), 1e-8)
        self._check('dispersion-constancy', np.max(np.abs(record.dq - record.dq[0])), 1e-8)

        with self._guard('rk4-step-halving'):
            period = (record.t[0], record.t[0] + 2.0 * math.pi / omega)
            coarse = self._integrate(profile, potential, initial, t_span=period)
            fine = self._integrate(profile, potential, initial, t_span=(coarse.t[0], coarse.t[-1]),
                                   dt=0.5 * coarse.dt)
            change = max(abs(coarse.q_mean[-1] - fine.q_mean[-1]), abs(coarse.dq[-1] - fine.dq[-1]))
            self._check('rk4-step-halving', change, 1e-9)

        self._model_state_checks(profile, record, potential)
        self._gaussian_saturation(profile, record)

        if not self.config.oracle.enabled:
            return
        result, n_steps = self._oracle(profile, record, potential)
        self._pde_checks(profile, record, result, n_steps, potential, overlap_threshold=1e-8)
        o = self.config.oracle
        cfg = PropagatorConfig(dt=o.dt, output_stride=o.output_stride, potential=potential,
                               leakage_threshold=o.leakage_threshold)
        wf0 = result.frames[0]
        with self._guard('oracle-convergence-gate'):
            span = _whole_span((record.t[0], record.t[0] + 2.0 * math.pi / omega), o.dt)
            gate = check_convergence(wf0, cfg, span)
            self._check('oracle-convergence-gate', gate.defect, 1e-8)
        with self._guard('split-step-order'):
            coarse = cfg.model_copy(update={'dt': 0.02, 'output_stride': 1000})
            order = convergence_order(wf0, coarse, (record.t[0], record.t[0] + 1.0))
            self._check('split-step-order', abs(order - 2.0), 0.4, detail=f"observed order {order:.4f}")

    def quench_squeeze(self):
        profile, potential, initial = self._setup()
        record = self._integrate(profile, potential, initial)
        self._write_trajectory(record)
        self._record_checks(record)
        p = self.config.potential
        after = record.t >= p.t_quench
        closed = ermakov_quench_variance(record.t[after] - p.t_quench, initial.dq, p.omega_after,
                                         self.constants.hbar, self.constants.mass)
        self._check('quench-dispersion-ode', np.max(np.abs(record.dq[after] ** 2 - closed)), 1e-6)
        self._model_state_checks(profile, record, potential)
        self._gaussian_saturation(profile, record)

        balance = None
        try:
            balance = self._integrate(profile, potential, initial, law=DispersionLaw.ENERGY_BALANCE)
        except SingularDispersionError as e:
            balance = e.record
            logger.warning(f"energy-balance dispersion collapsed at t={balance.t[-1]:.6g}")
        if balance is not None and len(balance) > 1:
            self._write_trajectory(balance, 'trajectory_energy_balance.csv')

        self._operator_route(profile, record, initial.dq)

        if not self.config.oracle.enabled:
            return
        result, n_steps = self._oracle(profile, record, potential)
        two_periods = record.t[0] + 2.0 * math.pi / p.omega_after
        self._pde_checks(profile, record, result, n_steps, potential, overlap_threshold=1e-5, window=two_periods)
        frame_dq2 = np.array([observables(frame, self.config.oracle.leakage_threshold).dq ** 2
                              for frame in result.frames])
        closed = ermakov_quench_variance(result.times - p.t_quench, initial.dq, p.omega_after,
                                         self.constants.hbar, self.constants.mass)
        self._check('quench-dispersion-pde', np.max(np.abs(frame_dq2 - closed)), 1e-5)

        if balance is not None and len(balance) > 1:
            try:
                fidelity = compare_with_model(result.window(float(balance.t[-1])), profile, balance)
                self._reported('energy-balance-model-overlap', fidelity.min_overlap,
                               detail=f"energy-balance record ends at t={balance.t[-1]:.6g}")
            except SqueezeLabError as e:
                self._reported('energy-balance-model-overlap', None,
                               detail=f"comparison stopped: {type(e).__name__}: {e}")

    def _operator_route(self, profile: StateProfile, record: TrajectoryRecord, dq0: float):
        """Operator route at the recorded time where |dq'| peaks."""
        index = int(np.argmax(np.abs(record.dq_dot)))
        traj = record.state_at(index)
        if abs(traj.dq_dot) == 0.0:
            return
        psi0 = ground_state_from_profile(profile, dq0, self.grid, self.constants)
        reports = []
        with self._guard('operator-route-modulus', 'squeeze-dispersion'):
            for rule in (PhaseRule.PRINTED, PhaseRule.BCH):
                reports.append(compare_operator_route(psi0, traj, profile, rule))
            self._check('operator-route-modulus', max(r.modulus_max_diff for r in reports), 1e-6,
                        detail=f"at t={traj.t:.6g}, dq={traj.dq:.6g}, dq'={traj.dq_dot:.6g}")
            self._check('squeeze-dispersion', max(abs(r.measured_dq - r.requested_dq) for r in reports), 1e-6)
            for r in reports:
                if r.phase_rule is self.config.operator.phase_rule:
                    self._reported('operator-route-phase-ratio', r.phase_ratio,
                                   detail=f"rule {r.phase_rule.value}, target {r.target_phase:.6g}")
        artifacts.write_json(self.output_dir / 'operator_report.json',
                             {'route': [r.model_dump(mode='json') for r in reports]})

    def free_spread(self):
        profile, potential, initial = self._setup()
        record = self._integrate(profile, potential, initial)
        self._write_trajectory(record)
        self._record_checks(record)
        closed = free_spread_variance(record.t - record.t[0], initial.dq, self.constants.hbar, self.constants.mass)
        self._check('free-spread-ode', np.max(np.abs(record.dq ** 2 - closed)), 1e-8)
        self._model_state_checks(profile, record, potential, hjm_threshold=1e-5)
        self._gaussian_saturation(profile, record)

        if not self.config.oracle.enabled:
            return
        result, n_steps = self._oracle(profile, record, potential)
        self._pde_checks(profile, record, result, n_steps, potential, overlap_threshold=1e-8)
        frame_dq2 = np.array([observables(frame, self.config.oracle.leakage_threshold).dq ** 2
                              for frame in result.frames])
        closed = free_spread_variance(result.times - record.t[0], initial.dq, self.constants.hbar,
                                      self.constants.mass)
        self._check('free-spread-pde', np.max(np.abs(frame_dq2 - closed)), 1e-5)

    def feedback(self):
        profile, potential, initial = self._setup()
        record = self._integrate(profile, potential, initial)
        self._write_trajectory(record)
        self._ehrenfest(record)
        synthesized = synthesize_potential(profile, record, self.grid, reference=potential)
        with self._guard('feedback-residual'):
            worst = max(float(np.max(np.abs(record.feedback_residual))),
                        self._synthesized_feedback(profile, record, synthesized))
            self._check('feedback-residual', worst, 1e-6)
        self._model_state_checks(profile, record, synthesized, hjm_threshold=1e-5)
        self._synthesized_harmonic_match(potential, initial)
        self._synthesized_poschl_teller_match()

        if not self.config.oracle.enabled:
            return
        result, n_steps = self._oracle(profile, record, synthesized)
        self._pde_checks(profile, record, result, n_steps, synthesized, overlap_threshold=1e-4,
                         overlap_name='feedback-pde-overlap')

    def _synthesized_feedback(self, profile, record, synthesized) -> float:
        worst = 0.0
        for index in _sample_indices(record):
            state = record.state_at(index)
            worst = max(worst, abs(feedback_diagnostic(profile, state, synthesized, state.t)))
        return worst

    def _synthesized_harmonic_match(self, potential: PotentialModel, initial: TrajectoryState):
        with self._guard('synthesized-harmonic-match'):
            gaussian = named_profile('gaussian', self.constants)
            dq = float((gaussian.C_G / (self.constants.mass * self.config.potential.omega ** 2)) ** 0.25)
            start = initial.model_copy(update={'dq': dq, 'dq_dot': 0.0})
            record = self._integrate(gaussian, potential, start, t_span=(initial.t, initial.t + 1.0))
            synthesized = synthesize_potential(gaussian, record, self.grid, reference=potential)
            worst = 0.0
            for index in _sample_indices(record):
                t = float(record.t[index])
                support = _support(assemble_state(gaussian, record.state_at(index), self.grid, self.constants))
                x = self.grid.x[support]
                worst = max(worst, float(np.max(np.abs(synthesized.phi(x, t) - potential.phi(x, t)))))
            self._check('synthesized-harmonic-match', worst, 1e-5)

    def _synthesized_poschl_teller_match(self):
        with self._guard('synthesized-poschl-teller-match', 'ground-state-profile-moments'):
            profile = sech2_profile(self.constants, dq0=1.0)
            well = PoschlTellerPotential(width=SECH2_WIDTH, lam=1.0, hbar=self.constants.hbar,
                                         mass=self.constants.mass)
            record = integrate(TrajectoryState(dq=1.0), profile, well, DispersionLaw.PROJECTED, (0.0, 1.0),
                               self.config.integrator.dt)
            synthesized = synthesize_potential(profile, record, self.grid, reference=well)
            worst = 0.0
            for index in _sample_indices(record):
                t = float(record.t[index])
                support = _support(assemble_state(profile, record.state_at(index), self.grid, self.constants))
                x = self.grid.x[support]
                worst = max(worst, float(np.max(np.abs(synthesized.phi(x, t) - well.phi(x, t)))))
            self._check('synthesized-poschl-teller-match', worst, 1e-5,
                        detail=f"S0' = {record.S0_dot[-1]:.10g}, -E0 = {-well.ground_energy:.10g}")

            guess = ground_state_from_profile(profile, 1.0, self.grid, self.constants)
            relaxed = relax_ground_state(well, self.grid, self.constants, initial=guess)
            measured = profile_from_ground_state(relaxed, name='poschl-teller')
            self._reported('ground-state-profile-moments', abs(measured.K - profile.K), threshold=1e-6,
                           detail=f"K relaxed {measured.K:.10g} against analytic {profile.K:.10g}")

    def sample(self):
        profile, potential, initial = self._setup()
        e = self.config.ensemble
        record = self._integrate(profile, potential, initial)
        self._write_trajectory(record)
        span = (float(record.t[0]), float(record.t[0]) + int(round((record.t[-1] - record.t[0]) / e.dt)) * e.dt)
        cfg = EnsembleConfig(n_paths=e.n_paths, dt=e.dt, seed=e.seed, t_span=span, output_stride=e.output_stride,
                             backward_lag_steps=e.backward_lag_steps, block_size=e.block_size, n_workers=e.n_workers)
        ensemble = sample_forward(profile, record, cfg)
        self._check('ensemble-exclusion', ensemble.excluded_fraction, cfg.max_excluded_fraction)

        summary = ensemble_summary(ensemble, record)
        artifacts.write_ensemble(self.output_dir / 'ensemble.csv', summary)
        self._check('ensemble-mean', summary.mean_deviation(), 4.0, detail="CLT bands dq/sqrt(n)")
        self._check('ensemble-std', summary.std_deviation(), 4.0, detail="CLT bands dq/sqrt(2n)")
        backward = backward_consistency(ensemble, profile, record)
        self._check('backward-drift', backward.max_deviation, 5.0,
                    detail=f"{backward.bins_used} bins used, {backward.bins_skipped} skipped")

        osmotic = osmotic_uncertainty(ensemble, profile, record)
        self._check('osmotic-exact-bound', osmotic.bound - osmotic.exact, 1e-9,
                    detail=f"m sqrt(K) = {osmotic.exact:.10g}")
        self._check('osmotic-empirical', osmotic.agreement, 4.0,
                    detail=f"empirical {osmotic.empirical:.6g} against {osmotic.exact:.6g}")
        qv = quadratic_variation(ensemble, profile)
        self._check('quadratic-variation', abs(qv.ratio - 1.0), 0.02)

        state = assemble_state(profile, record.state_at(len(record) - 1), self.grid, self.constants)
        heisenberg = observables(state).uncertainty_product ** 2
        self._note_chain(max(osmotic.exact ** 2 - heisenberg, osmotic.bound ** 2 - osmotic.exact ** 2))
        logger.info(f"Ensemble m Dq Du = {osmotic.empirical:.6g} (exact {osmotic.exact:.6g})")

        stationary_start = TrajectoryState(q_mean=self.config.potential.center, dq=initial.dq, t=initial.t)
        stationary = self._integrate(profile, potential, stationary_start, t_span=(initial.t, initial.t + 1.0))
        still = sample_forward(profile, stationary, cfg.model_copy(update={'t_span': (stationary.t[0],
                                                                                        stationary.t[-1])}))
        _, p_value = density_chi_square(still, profile, stationary, n_bins=e.chi_square_bins)
        self._check('density-chi-square', p_value, 1e-3, at_least=True, detail="p-value, stationary ensemble")

        with self._guard('sampler-determinism'):
            small = cfg.model_copy(update={'n_paths': 2000, 'block_size': 256,
                                           't_span': (cfg.t_span[0], cfg.t_span[0] + 0.2), 'n_workers': 1})
            serial = seeded_fingerprint(sample_forward(profile, record, small))
            threaded = seeded_fingerprint(sample_forward(profile, record, small.model_copy(update={'n_workers': 4})))
            self._check('sampler-determinism', 0.0 if serial == threaded else 1.0, 0.0)

    def operator_check(self):
        base = self._profile()
        dq0 = self._stationary_dq(base)
        profile = base.model_copy(update={'dq0': dq0})
        op = self.config.operator
        psi0 = ground_state_from_profile(profile, dq0, self.grid, self.constants)
        f = -0.5 * math.log(op.dq_ratio)

        with self._guard('oracle-equivalence', 'oracle-unitarity'):
            half_width = 12.0 * max(dq0, dq0 * op.dq_ratio)
            grid = Grid1D(x_min=-half_width, x_max=half_width, n_points=op.sweep_n_points)
            params = SqueezeParams.from_f(f, dq0, 0.0, self.constants)
            oracle = squeeze_matrix_oracle(params, grid, self.constants)
            distance, norm_change = oracle_equivalence(ground_state_from_profile(profile, dq0, grid, self.constants),
                                                       params, op.phase_rule, oracle)
            self._check('oracle-equivalence', distance, 1e-5, detail=f"f={f:.6g}, norm change {norm_change:.3e}")
            self._check('oracle-unitarity', oracle.unitarity_defect(), 1e-8)

        with self._guard('squeeze-dispersion'):
            squeezed = squeeze_closed_form(psi0, SqueezeParams.from_f(f, dq0, 0.0, self.constants))
            self._check('squeeze-dispersion', abs(observables(squeezed).dq - op.dq_ratio * dq0), 1e-6)

        f_values = np.linspace(-op.sweep_f_max, op.sweep_f_max, op.sweep_points)
        sweep = []
        with self._guard('oracle-sweep-g0'):
            points = oracle_sweep(profile, dq0, f_values, 0.0, n_points=op.sweep_n_points)
            sweep += points
            self._check('oracle-sweep-g0', max(point.distance for point in points), 1e-5)
        with self._guard('oracle-sweep-bch', 'oracle-sweep-printed'):
            points = oracle_sweep(profile, dq0, f_values, op.sweep_g, n_points=op.sweep_n_points)
            sweep += points
            by_rule = {rule: max(p.distance for p in points if p.phase_rule is rule) for rule in PhaseRule}
            self._check('oracle-sweep-bch', by_rule[PhaseRule.BCH], 1e-5, detail=f"g={op.sweep_g:g}")
            self._reported('oracle-sweep-printed', by_rule[PhaseRule.PRINTED], threshold=1e-5,
                           detail=f"g={op.sweep_g:g}")

        with self._guard('commutator-residual', 'dilation-identity'):
            half_width = 12.0 * dq0
            grid = Grid1D(x_min=-half_width, x_max=half_width, n_points=op.sweep_n_points)
            self._check('commutator-residual', commutator_residual(grid, self.constants), 1e-6)
            self._check('dilation-identity', self._dilation_defect(f, dq0), 1e-6)

        with self._guard('displacement-unitarity', 'displacement-composition'):
            moved = displace(psi0, 1.0, 0.5)
            self._check('displacement-unitarity', abs(moved.norm() - psi0.norm()), 1e-10)
            twice = displace(displace(psi0, 0.4, 0.2), 0.6, 0.3)
            self._check('displacement-composition', float(np.max(np.abs(np.abs(twice.psi) - np.abs(moved.psi)))),
                        1e-9)

        with self._guard('operator-zero-squeeze'):
            traj = TrajectoryState(q_mean=1.0, v_mean=0.5, dq=dq0)
            route = squeezed_state(psi0, traj, profile, op.phase_rule)
            model = assemble_state(profile, traj, self.grid, self.constants)
            self._check('operator-zero-squeeze', 1.0 - abs(overlap(route, model)), 1e-9)

        reports = []
        with self._guard('operator-route-modulus'):
            traj = TrajectoryState(dq=op.dq, dq_dot=op.dq_dot)
            reports = [compare_operator_route(psi0, traj, profile, rule) for rule in PhaseRule]
            self._check('operator-route-modulus', max(r.modulus_max_diff for r in reports), 1e-6)
            chosen = next(r for r in reports if r.phase_rule is op.phase_rule)
            self._reported('operator-route-phase-ratio', chosen.phase_ratio,
                           detail=f"rule {chosen.phase_rule.value}, target {chosen.target_phase:.6g}")
        artifacts.write_json(self.output_dir / 'operator_report.json',
                             {'route': [r.model_dump(mode='json') for r in reports],
                              'sweep': [p.model_dump(mode='json') for p in sweep]})

    def _dilation_defect(self, f: float, dq0: float) -> float:
        width = math.sqrt(2.0) * dq0
        half_width = 12.0 * max(width, width * math.exp(-2.0 * f))
        grid = Grid1D(x_min=-half_width, x_max=half_width, n_points=self.config.operator.sweep_n_points)
        dilation = dilation_matrix(f, grid)
        worst = 0.0
        for order in (0, 2):
            source = WaveFunction(grid=grid, psi=hermite_gaussian(grid, order, width).astype(complex),
                                  constants=self.constants)
            expected = source.with_psi(hermite_gaussian(grid, order, width * math.exp(-2.0 * f)).astype(complex))
            worst = max(worst, l2_distance(dilation.apply(source), expected))
        return worst
