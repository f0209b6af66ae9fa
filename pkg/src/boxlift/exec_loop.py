"""Execution: impedance commands biased by the desired wrench, plus PID wrench correction."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .core import BOX, Pose6, Stiffness, Wrench, euler_to_matrix
from .friction import FrictionParams, decompose, limit_surface_residual, tangent_basis
from .simplant import PlantConfig, SettleError, settle_batch


def nominal_command(z_ref: Pose6, w_des: Wrench, K: Stiffness) -> Pose6:
    """``z_ref + K^{-1} w_des``: the command whose impedance wrench at ``z_ref`` is ``w_des``."""
    Kinv = np.linalg.inv(K.K if isinstance(K, Stiffness) else np.asarray(K, dtype=float))
    return Pose6.from_vector(z_ref.vector() + Kinv @ w_des.vector())


def _six(v, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (6,)).copy()
    if np.any(a < 0):
        raise ValueError(f"{name} must be non-negative")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WrenchPid:
    """Per-axis PID from wrench error to a bounded pose correction.

    Axes follow whatever frame the error is given in; the execution loop
    uses the handle frame, whose first axis is the contact normal.  The
    correction opposes the error: too much force gives a negative increment.
    """

    kp: np.ndarray = 2e-4
    ki: np.ndarray = 5e-4
    kd: np.ndarray = 0.0
    du_max: np.ndarray = 0.005
    mask: tuple = (True, False, False, False, False, False)
    integral: np.ndarray = field(default_factory=lambda: np.zeros(6))
    prev_error: np.ndarray | None = None

    def __post_init__(self):
        for name in ("kp", "ki", "kd", "du_max"):
            object.__setattr__(self, name, _six(getattr(self, name), name))
        m = tuple(bool(v) for v in np.broadcast_to(np.asarray(self.mask, dtype=bool), (6,)))
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "integral", np.asarray(self.integral, dtype=float).reshape(6))

    def reset(self) -> "WrenchPid":
        return replace(self, integral=np.zeros(6), prev_error=None)


def pid_step(pid: WrenchPid, e: Wrench, dt: float) -> tuple[WrenchPid, Pose6]:
    if not dt > 0:
        raise ValueError("time step must be positive")
    ev = e.vector()
    m = np.array(pid.mask, dtype=float)
    ev = ev * m
    deriv = np.zeros(6) if pid.prev_error is None else (ev - pid.prev_error) / dt
    integral = pid.integral + ev * dt
    raw = -(pid.kp * ev + pid.ki * integral + pid.kd * deriv) * m
    clamped = np.abs(raw) > pid.du_max
    # anti-windup: the integrator holds its value on axes that saturate
    integral = np.where(clamped, pid.integral, integral)
    du = np.clip(raw, -pid.du_max, pid.du_max) * m
    return replace(pid, integral=integral, prev_error=ev), Pose6.from_vector(du)


def handle_rotation(n_hat) -> np.ndarray:
    """Rows are the handle axes (normal, tangent 1, tangent 2) expressed in {B}."""
    return np.vstack([np.asarray(n_hat, dtype=float), tangent_basis(n_hat)])


@dataclass
class ExecState:
    t: float
    box: np.ndarray
    box_ref: np.ndarray
    w_meas: tuple[np.ndarray, np.ndarray]  # {B}
    w_des: tuple[np.ndarray, np.ndarray]  # {B}
    u0: tuple[np.ndarray, np.ndarray]
    u: tuple[np.ndarray, np.ndarray]
    du: tuple[np.ndarray, np.ndarray]  # handle frame
    friction_residual: tuple[float, float]
    F_env: np.ndarray
    settle_residual: float
    phase: str = "transport"


@dataclass
class ExecutionLog:
    steps: list[ExecState] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    def __len__(self):
        return len(self.steps)

    def orientation_deviation_deg(self, phase: str | None = "transport") -> float:
        """Largest ``|o_box - o_ref|`` in degrees over steps of ``phase`` (all steps for None)."""
        d = [np.linalg.norm(s.box[3:] - s.box_ref[3:]) for s in self.steps if phase is None or s.phase == phase]
        return float(np.degrees(max(d))) if d else float("nan")

    def max_friction_residual(self) -> float:
        if not self.steps:
            return float("nan")
        return float(max(max(s.friction_residual) for s in self.steps))

    def mean_squeeze(self, n_L, n_R) -> float:
        """Mean over steps of ``|f_n,L| + |f_n,R|`` from the measured wrenches."""
        if not self.steps:
            return float("nan")
        return float(np.mean([abs(s.w_meas[0][:3] @ n_L) + abs(s.w_meas[1][:3] @ n_R) for s in self.steps]))

    def max_env_force(self) -> float:
        return float(max((np.linalg.norm(s.F_env) for s in self.steps), default=0.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        head = ["t", "phase"] + [f"box_{k}" for k in ("x", "y", "z", "rx", "ry", "rz")]
        for h in "LR":
            head += [f"{k}{h}{a}_meas" for k in ("f", "tau") for a in "xyz"]
            head += [f"{k}{h}{a}_des" for k in ("f", "tau") for a in "xyz"]
        head += ["friction_residual_L", "friction_residual_R", "du_n_L", "du_n_R",
                 "F_env_x", "F_env_y", "F_env_z", "settle_residual"]
        wr.writerow(head)
        for s in self.steps:
            row = [repr(float(s.t)), s.phase] + [repr(float(v)) for v in s.box]
            for i in range(2):
                row += [repr(float(v)) for v in s.w_meas[i]] + [repr(float(v)) for v in s.w_des[i]]
            row += [repr(float(v)) for v in s.friction_residual]
            row += [repr(float(s.du[0][0])), repr(float(s.du[1][0]))]
            row += [repr(float(v)) for v in s.F_env] + [repr(float(s.settle_residual))]
            wr.writerow(row)
        return buf.getvalue()


def run_execution(traj, w_des, cfg: PlantConfig, pid: WrenchPid | None, dt: float,
                  n_L, n_R, friction: tuple[FrictionParams, FrictionParams],
                  K_cmd: Stiffness | None = None, box0=None, approach_from=None,
                  approach_steps: int = 0) -> ExecutionLog:
    """Track the box path ``traj`` (T, 6) while commanding the desired {B} wrenches.

    ``w_des`` is ``(w_L, w_R)`` as 6-vectors in {B}.  ``K_cmd`` is the
    controller's stiffness model (defaults to the plant's).  With
    ``approach_from=(u_L, u_R)`` the commands are first blended linearly from
    those values to the start of the path over ``approach_steps`` steps.
    Friction residuals are evaluated on the measured wrenches against the
    limit surfaces in ``friction``.  A settle failure aborts with a partial log.
    """
    traj = np.asarray(traj, dtype=float)
    K_cmd = K_cmd or cfg.K
    Kinv = K_cmd.inverse()
    w_des = [np.asarray(w, dtype=float).reshape(6) for w in w_des]
    normals = [np.asarray(n_L, float), np.asarray(n_R, float)]
    offsets = [cfg.r_L, cfg.r_R]
    C = [handle_rotation(n) for n in normals]
    pids = [pid.reset(), pid.reset()] if pid is not None else [None, None]
    log = ExecutionLog()
    q = np.asarray(traj[0] if box0 is None else box0, dtype=float).copy()
    prev_meas = [w.copy() for w in w_des]

    def nominal(ref):
        R = euler_to_matrix(ref[3:])
        out = []
        for r, w in zip(offsets, w_des):
            z_ref = np.concatenate([ref[:3] + R @ r, ref[3:]])
            w_world = np.concatenate([R @ w[:3], R @ w[3:]])
            out.append(z_ref + Kinv @ w_world)
        return out, R

    schedule = []
    if approach_from is not None and approach_steps > 0:
        start = nominal(traj[0])[0]
        for k in range(1, approach_steps + 1):
            a = k / approach_steps
            schedule.append(("approach", traj[0], [(1 - a) * np.asarray(u0, float) + a * s for u0, s in zip(approach_from, start)]))
    for k in range(traj.shape[0]):
        schedule.append(("transport", traj[k], None))

    for step, (phase, ref, u_fixed) in enumerate(schedule):
        if u_fixed is not None:
            u0 = u_fixed
            R_ref = euler_to_matrix(ref[3:])
        else:
            u0, R_ref = nominal(ref)
        du_h = [np.zeros(6), np.zeros(6)]
        if phase == "transport" and pid is not None:
            for i in range(2):
                e = prev_meas[i] - w_des[i]
                e_h = np.concatenate([C[i] @ e[:3], C[i] @ e[3:]])
                pids[i], d = pid_step(pids[i], Wrench.from_vector(e_h, BOX), dt)
                du_h[i] = d.vector()
        u = []
        for i in range(2):
            back = R_ref @ C[i].T  # handle frame -> world
            du_w = np.concatenate([back @ du_h[i][:3], back @ du_h[i][3:]])
            u.append(u0[i] + du_w)
        out = settle_batch(q, u[0], u[1], cfg.box, cfg.env, cfg.K, cfg.r_L, cfg.r_R, cfg.gravity)
        if not out.converged[0]:
            log.aborted = True
            log.message = str(SettleError(float(out.residual[0]), out.iterations))
            break
        q = out.q[0]
        Rb = euler_to_matrix(q[3:])
        meas = []
        for w in (out.w_L[0], out.w_R[0]):
            meas.append(np.concatenate([Rb.T @ w[:3], Rb.T @ w[3:]]))
        prev_meas = meas
        resid = []
        for w, n, fp in zip(meas, normals, friction):
            d = decompose(Wrench.from_vector(w, BOX), n)
            resid.append(float(limit_surface_residual(d, fp)) if d.f_n <= 0 else float("inf"))
        log.steps.append(ExecState(
            t=step * dt, box=q.copy(), box_ref=np.asarray(ref, float).copy(), w_meas=tuple(meas),
            w_des=tuple(w_des), u0=tuple(u0), u=tuple(u), du=tuple(du_h),
            friction_residual=tuple(resid), F_env=out.F_env[0].copy(),
            settle_residual=float(out.residual[0]), phase=phase,
        ))
    return log
