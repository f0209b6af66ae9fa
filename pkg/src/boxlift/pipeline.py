"""End-to-end run: refine the path, lift and identify the load, optimise wrenches, transport."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import BOX, Pose6, Wrench, euler_to_matrix
from .dmp_refine import RefineResult, refine
from .estimator import (InertialEstimate, LiftRampState, MeasurementBatch, detect_liftoff, estimate,
                        ramp_step)
from .exec_loop import ExecutionLog, WrenchPid, run_execution
from .friction import decompose, limit_surface_residual
from .scenario import ScenarioConfig
from .simplant import SettleError, add_measurement_noise, settle_batch
from .wrench_opt import OPTIMAL, SocpSolution, optimize_wrenches


class ConvergenceError(RuntimeError):
    """A phase failed to converge (settle, lift-off or optimisation)."""


def run_phase1(sc: ScenarioConfig, seed: int | None = None) -> RefineResult:
    seed = sc.seed if seed is None else seed
    return refine(sc.reference(), sc.exploration(), sc.nominal_plant(), active=sc.active_dims, seed=seed,
                  N=sc.N, max_iter=sc.max_iter)


@dataclass
class LiftResult:
    batch: MeasurementBatch  # noisy samples, {B}
    clean: np.ndarray  # (12,) noise-free hold wrenches, {B}
    box: np.ndarray  # settled box pose after lift-off
    u_hold: tuple[np.ndarray, np.ndarray]
    ramp_steps: int
    estimate: InertialEstimate


def _settle_one(q, u_L, u_R, cfg):
    out = settle_batch(q, u_L, u_R, cfg.box, cfg.env, cfg.K, cfg.r_L, cfg.r_R, cfg.gravity)
    if not out.converged[0]:
        raise SettleError(float(out.residual[0]), out.iterations)
    return out


def _handle_positions(q, cfg):
    R = euler_to_matrix(q[3:])
    return q[:3] + R @ cfg.r_L, q[:3] + R @ cfg.r_R


def lift_experiment(sc: ScenarioConfig, seed: int | None = None) -> LiftResult:
    """Squeeze the resting box, ramp both handles up until lift-off, hold and sample."""
    seed = sc.seed if seed is None else seed
    cfg = sc.plant_config()
    Kinv = sc.stiffness().inverse()
    rest = np.zeros(6)
    rest[2] = sc.ground_height + sc.half_extents[2]
    u = []
    for r, n in ((cfg.r_L, sc.n_L), (cfg.r_R, sc.n_R)):
        w = np.concatenate([-sc.squeeze * np.asarray(n, float), np.zeros(3)])  # press inward
        u.append(np.concatenate([rest[:3] + r, rest[3:]]) + Kinv @ w)
    out = _settle_one(rest, u[0], u[1], sc.plant_config())
    q = out.q[0]
    p_L0, p_R0 = _handle_positions(q, cfg)
    up = np.array([0, 0, 1.0, 0, 0, 0])
    ramp = LiftRampState(Pose6.from_vector(u[0]), Pose6.from_vector(u[1]), up, up, sc.delta_alpha)
    for step in range(1, sc.max_ramp_steps + 1):
        ramp, uL, uR = ramp_step(ramp)
        out = _settle_one(q, uL.vector(), uR.vector(), cfg)
        q = out.q[0]
        p_L, p_R = _handle_positions(q, cfg)
        if detect_liftoff(p_L, p_R, p_L0, p_R0, up[:3], sc.h_lift):
            break
    else:
        raise ConvergenceError(f"no lift-off after {sc.max_ramp_steps} ramp steps")
    # quasi-static hold: every sample sees the same settled state plus sensor noise
    Rt = euler_to_matrix(q[3:]).T
    clean = np.concatenate([np.concatenate([Rt @ w[:3], Rt @ w[3:]]) for w in (out.w_L[0], out.w_R[0])])
    noisy = add_measurement_noise(np.tile(clean, (sc.M, 1)).reshape(sc.M, 2, 6), sc.sigma_f, sc.sigma_tau, seed)
    batch = MeasurementBatch(noisy[:, 0], noisy[:, 1], sc.r_L, sc.r_R, sc.gravity_vec())
    return LiftResult(batch, clean, q, (uL.vector(), uR.vector()), step, estimate(batch))


def run_phase3(sc: ScenarioConfig, est: InertialEstimate) -> SocpSolution:
    sol = optimize_wrenches(sc.grasp_geometry(), est, sc.weight(), sc.gravity_vec(), tol=sc.tol)
    if sol.status != OPTIMAL:
        raise ConvergenceError(f"wrench optimisation ended with status {sol.status}")
    return sol


def naive_wrenches(sc: ScenarioConfig, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Equal normal forces, equal split of the weight, no contact moment.

    The squeeze is the centred-CoM value for the true mass, times ``scale``.
    """
    m = sc.box_model().mass
    g = sc.gravity
    fn = scale * m * g / (2.0 * sc.mu * (1.0 - sc.r_s))
    out = []
    for n in (sc.n_L, sc.n_R):
        f = -fn * np.asarray(n, float) + np.array([0.0, 0.0, 0.5 * m * g])
        out.append(np.concatenate([f, np.zeros(3)]))
    return out[0], out[1]


def _realized_residual(sc, w_des, box_pose, cfg) -> float:
    """Worst contracted-surface residual of the wrenches realized while holding ``box_pose``."""
    Kinv = sc.stiffness().inverse()
    R = euler_to_matrix(box_pose[3:])
    u = []
    for r, w in zip((cfg.r_L, cfg.r_R), w_des):
        z = np.concatenate([box_pose[:3] + R @ r, box_pose[3:]])
        u.append(z + Kinv @ np.concatenate([R @ w[:3], R @ w[3:]]))
    out = _settle_one(box_pose, u[0], u[1], cfg)
    Rt = euler_to_matrix(out.q[0][3:]).T
    worst = -np.inf
    fp = sc.friction()
    for w, n in ((out.w_L[0], sc.n_L), (out.w_R[0], sc.n_R)):
        d = decompose(Wrench.from_vector(np.concatenate([Rt @ w[:3], Rt @ w[3:]]), BOX), n)
        worst = max(worst, limit_surface_residual(d, fp) if d.f_n <= 0 else np.inf)
    return float(worst)


def escalated_naive_wrenches(sc: ScenarioConfig, box_pose, max_rounds: int = 20):
    """Raise the naive squeeze by the escalation factor until the realized hold stays inside the margin."""
    cfg = sc.plant_config()
    scale = 1.0
    for _ in range(max_rounds):
        w = naive_wrenches(sc, scale)
        if _realized_residual(sc, w, np.asarray(box_pose, float), cfg) <= 0:
            return w, scale
        scale *= sc.naive_escalation
    raise ConvergenceError("naive squeeze escalation did not reach a safe grasp")


@dataclass
class RunResult:
    log: ExecutionLog
    w_des: tuple[np.ndarray, np.ndarray]
    estimate: InertialEstimate | None
    refine: RefineResult | None
    lift: LiftResult | None
    solution: SocpSolution | None
    flags: dict
    naive_scale: float | None = None
    timings: dict = field(default_factory=dict)

    @property
    def orientation_deviation_deg(self) -> float:
        return self.log.orientation_deviation_deg()

    def squeeze_effort(self, sc: ScenarioConfig) -> float:
        return self.log.mean_squeeze(np.asarray(sc.n_L, float), np.asarray(sc.n_R, float))

    def invariants(self) -> dict:
        """Pass/fail of each execution invariant checked by the summary."""
        return {
            "no_settle_failure": not self.log.aborted,
            "friction_residual_nonpositive": bool(self.log.max_friction_residual() <= 0),
            "orientation_deviation_le_2deg": bool(self.orientation_deviation_deg <= 2.0),
        }


def run_pipeline(sc: ScenarioConfig, seed: int | None = None, no_phase1: bool = False,
                 no_phase2: bool = False, no_phase3: bool = False,
                 refined: RefineResult | None = None, lift: LiftResult | None = None) -> RunResult:
    """Full pipeline; precomputed ``refined`` or ``lift`` results are reused when given."""
    seed = sc.seed if seed is None else seed
    flags = {"no_phase1": no_phase1, "no_phase2": no_phase2, "no_phase3": no_phase3}
    timings = {}
    t0 = time.perf_counter()
    ref = sc.reference()
    if no_phase1:
        traj, refined = ref.z, None
    else:
        refined = refined or run_phase1(sc, seed)
        traj = refined.trajectory
    timings["phase1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lift = lift or lift_experiment(sc, seed)
    if no_phase2:
        est = InertialEstimate(sc.box_model().mass, np.zeros(3))
    else:
        est = lift.estimate
    timings["phase2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sol, scale = None, None
    if no_phase3:
        w_des, scale = escalated_naive_wrenches(sc, traj[0])
    else:
        sol = run_phase3(sc, est)
        w_des = (sol.w_L.vector(), sol.w_R.vector())
    timings["phase3"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pid = None
    if sc.pid_enabled:
        pid = WrenchPid(sc.kp, sc.ki, sc.kd, sc.du_max, sc.pid_axes)
    fp0 = sc.friction(r_s=0.0)
    log = run_execution(traj, w_des, sc.plant_config(), pid, sc.dt, sc.n_L, sc.n_R, (fp0, fp0),
                        K_cmd=sc.stiffness(), box0=lift.box, approach_from=lift.u_hold,
                        approach_steps=sc.approach_steps)
    timings["execution"] = time.perf_counter() - t0
    return RunResult(log, w_des, est, refined, lift, sol, flags, scale, timings)


def run_summary(sc: ScenarioConfig, res: RunResult) -> str:
    lines = ["[run]"]
    lines += [f"{k} = {'yes' if v else 'no'}" for k, v in res.flags.items()]
    lines.append(f"steps = {len(res.log)}")
    if res.log.aborted:
        lines.append(f"aborted = {res.log.message}")
    if res.estimate is not None:
        lines.append(f"m_hat = {res.estimate.m_hat!r}")
        lines.append("r_com_hat = " + ", ".join(repr(float(v)) for v in res.estimate.r_com_hat))
    if res.naive_scale is not None:
        lines.append(f"naive_squeeze_scale = {res.naive_scale!r}")
    lines.append("w_des_L = " + ", ".join(repr(float(v)) for v in res.w_des[0]))
    lines.append("w_des_R = " + ", ".join(repr(float(v)) for v in res.w_des[1]))
    lines.append("[metrics]")
    lines.append(f"orientation_deviation_deg = {res.orientation_deviation_deg!r}")
    lines.append(f"squeeze_effort_N = {res.squeeze_effort(sc)!r}")
    lines.append(f"max_friction_residual = {res.log.max_friction_residual()!r}")
    lines.append(f"max_env_force_N = {res.log.max_env_force()!r}")
    lines.append("[invariants]")
    for k, ok in res.invariants().items():
        lines.append(f"{k} = {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
