"""Quasi-static box plant: impedance-coupled handles, gravity and penalty contacts.

The box pose is the only unknown.  Handles are rigidly attached at fixed
offsets in {B}; each applies ``K (u_i - z_i)`` at its contact point.  The
environment is a ground plane plus axis-aligned shelf boxes, touched only
at the eight box corners.  Equilibrium is solved with a damped Newton
iteration on the 6-D net wrench, batched over independent samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import BOX, WORLD, GravityVec, Pose6, Stiffness, Wrench, euler_to_matrix, euler_to_matrix_batch

SETTLE_TOL = 1e-7
SETTLE_MAX_ITER = 60
FD_STEP = 1e-7
_LM_DAMPING = 1e-10


class SettleError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"plant did not settle: net wrench residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class BoxModel:
    half_extents: np.ndarray
    base_mass: float
    added_mass: float = 0.0
    added_mass_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        he = np.array(self.half_extents, dtype=float).reshape(3)
        pos = np.array(self.added_mass_position, dtype=float).reshape(3)
        if np.any(he <= 0):
            raise ValueError("half extents must be positive")
        if not self.base_mass > 0 or self.added_mass < 0:
            raise ValueError("base mass must be positive and added mass non-negative")
        he.setflags(write=False)
        pos.setflags(write=False)
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "added_mass_position", pos)

    @property
    def mass(self) -> float:
        return self.base_mass + self.added_mass

    @property
    def com(self) -> np.ndarray:
        return self.added_mass * self.added_mass_position / self.mass

    def corners(self) -> np.ndarray:
        s = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
        return s * self.half_extents


@dataclass(frozen=True)
class AxisBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(3)
        hi = np.array(self.hi, dtype=float).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("shelf box needs hi > lo on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class EnvironmentModel:
    ground_height: float = 0.0
    shelves: tuple[AxisBox, ...] = ()
    k_env: float = 1e5

    def __post_init__(self):
        if not self.k_env > 0:
            raise ValueError("penalty stiffness must be positive")
        object.__setattr__(self, "shelves", tuple(self.shelves))

    def corner_forces(self, pts: np.ndarray) -> np.ndarray:
        """Penalty forces on points ``pts`` (..., 3); each is along an outward normal and >= 0."""
        F = np.zeros_like(pts)
        pen = self.ground_height - pts[..., 2]
        F[..., 2] = self.k_env * np.maximum(pen, 0.0)
        for sh in self.shelves:
            below = pts - sh.lo  # depth to push out through the low faces
            above = sh.hi - pts
            inside = np.all((below > 0) & (above > 0), axis=-1)
            if not inside.any():
                continue
            depth = np.minimum(below, above)  # per-axis exit depth
            sign = np.where(below < above, -1.0, 1.0)
            order = np.argsort(depth, axis=-1, kind="stable")
            d1 = np.take_along_axis(depth, order[..., :1], axis=-1)[..., 0]
            d2 = np.take_along_axis(depth, order[..., 1:2], axis=-1)[..., 0]
            # near an edge the two shallowest exits are blended so the force stays
            # continuous when they swap; a clear face contact (d2 >= 2 d1) is pure
            h = np.clip(2.0 - d2 / np.maximum(d1, 1e-300), 0.0, 1.0)
            push = np.zeros_like(pts)
            for col, share in ((0, 1.0 - 0.5 * h), (1, 0.5 * h)):
                ax = order[..., col : col + 1]
                s = np.take_along_axis(sign, ax, axis=-1)[..., 0]
                np.put_along_axis(push, ax, (s * self.k_env * d1 * share)[..., None], axis=-1)
            F = F + np.where(inside[..., None], push, 0.0)
        return F


@dataclass(frozen=True)
class PlantState:
    """Box pose, handle commands and the settled interaction quantities.

    ``w_L``/``w_R`` are the wrenches each handle applies to the box in the
    world frame; ``F_env`` is the total environment force on the box.
    """

    box: Pose6
    u_L: Pose6
    u_R: Pose6
    K: Stiffness
    r_L: np.ndarray
    r_R: np.ndarray
    z_L: Pose6 | None = None
    z_R: Pose6 | None = None
    attached: tuple[bool, bool] = (True, True)
    F_env: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_L: Wrench | None = None
    w_R: Wrench | None = None
    residual: float = np.inf
    iterations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "r_L", np.asarray(self.r_L, dtype=float).reshape(3))
        object.__setattr__(self, "r_R", np.asarray(self.r_R, dtype=float).reshape(3))
        if self.z_L is None or self.z_R is None:
            z_L, z_R = handle_poses(self.box, self.r_L, self.r_R)
            object.__setattr__(self, "z_L", z_L)
            object.__setattr__(self, "z_R", z_R)

    def wrenches_box(self) -> tuple[Wrench, Wrench]:
        """Handle wrenches rotated into {B}, as the force sensors report them."""
        R = euler_to_matrix(self.box.o)
        return (
            Wrench(R.T @ self.w_L.f, R.T @ self.w_L.tau, BOX),
            Wrench(R.T @ self.w_R.f, R.T @ self.w_R.tau, BOX),
        )


def handle_poses(box: Pose6, r_L, r_R) -> tuple[Pose6, Pose6]:
    R = euler_to_matrix(box.o)
    return Pose6(box.p + R @ np.asarray(r_L, float), box.o), Pose6(box.p + R @ np.asarray(r_R, float), box.o)


@dataclass(frozen=True)
class _Batch:
    """Batched problem data for :func:`settle_batch`."""

    u_L: np.ndarray  # (B, 6)
    u_R: np.ndarray
    att: np.ndarray  # (2,) float mask


def _net_wrench(q, data: _Batch, box: BoxModel, env: EnvironmentModel, K: np.ndarray,
                r_L, r_R, gravity: GravityVec, corners):
    """Net force and moment about the box centre for poses ``q`` (B, 6)."""
    p, o = q[:, :3], q[:, 3:]
    R = euler_to_matrix_batch(o)
    cL = R @ r_L
    cR = R @ r_R
    zL = np.concatenate([p + cL, o], axis=1)
    zR = np.concatenate([p + cR, o], axis=1)
    wL = data.att[0] * ((data.u_L - zL) @ K.T)
    wR = data.att[1] * ((data.u_R - zR) @ K.T)
    mg = box.mass * np.array([0.0, 0.0, -gravity.g])
    cc = R @ box.com
    cw = np.einsum("bij,kj->bki", R, corners)  # (B, 8, 3)
    Fc = env.corner_forces(p[:, None, :] + cw)
    F_env = Fc.sum(axis=1)
    force = wL[:, :3] + wR[:, :3] + mg + F_env
    moment = (
        np.cross(cL, wL[:, :3]) + wL[:, 3:]
        + np.cross(cR, wR[:, :3]) + wR[:, 3:]
        + np.cross(cc, mg)
        + np.cross(cw, Fc).sum(axis=1)
    )
    return np.concatenate([force, moment], axis=1), F_env, wL, wR


@dataclass
class SettleBatchResult:
    q: np.ndarray
    F_env: np.ndarray
    w_L: np.ndarray
    w_R: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    iterations: int


def settle_batch(q0, u_L, u_R, box: BoxModel, env: EnvironmentModel, K: Stiffness, r_L, r_R,
                 gravity: GravityVec | None = None, attached=(True, True),
                 tol: float = SETTLE_TOL, max_iter: int = SETTLE_MAX_ITER) -> SettleBatchResult:
    """Static equilibrium poses for ``B`` independent command sets.

    Damped Newton on the net wrench with a finite-difference Jacobian and a
    backtracking line search; a small Levenberg term keeps directions with no
    stiffness (e.g. detached handles on the ground) at their initial value.
    """
    gravity = gravity or GravityVec()
    q = np.array(q0, dtype=float).reshape(-1, 6).copy()
    B = q.shape[0]
    data = _Batch(np.asarray(u_L, float).reshape(B, 6), np.asarray(u_R, float).reshape(B, 6),
                  np.array(attached, dtype=float))
    Km = K.K
    r_L = np.asarray(r_L, float)
    r_R = np.asarray(r_R, float)
    corners = box.corners()

    def f(qq, dd):
        return _net_wrench(qq, dd, box, env, Km, r_L, r_R, gravity, corners)

    res, F_env, wL, wR = f(q, data)
    err = np.abs(res).max(axis=1)
    it = 0
    eye6 = np.eye(6)
    for it in range(1, max_iter + 1):
        active = err > tol
        if not active.any():
            it -= 1
            break
        idx = np.flatnonzero(active)
        qa, ra = q[idx], res[idx]
        da = _Batch(data.u_L[idx], data.u_R[idx], data.att)
        n = idx.size
        # central-difference Jacobian (one-sided steps see zero stiffness at a contact kink),
        # all twelve perturbations in one batched evaluation
        pert = np.concatenate([eye6, -eye6]) * FD_STEP
        qp = (qa[:, None, :] + pert[None]).reshape(-1, 6)
        dp = _Batch(np.repeat(da.u_L, 12, axis=0), np.repeat(da.u_R, 12, axis=0), data.att)
        rp = f(qp, dp)[0].reshape(n, 12, 6)
        J = np.transpose(rp[:, :6] - rp[:, 6:], (0, 2, 1)) / (2 * FD_STEP)
        JtJ = np.einsum("bki,bkj->bij", J, J)
        lam = _LM_DAMPING * np.einsum("bii->b", JtJ)[:, None, None] * eye6
        step = -np.linalg.solve(JtJ + lam, np.einsum("bki,bk->bi", J, ra)[..., None])[..., 0]
        # backtracking on the max-norm residual
        t = np.ones(n)
        best_q, best_r = qa.copy(), ra.copy()
        best_err = np.abs(ra).max(axis=1)
        pending = np.ones(n, dtype=bool)
        for _ in range(30):
            qt = qa + t[:, None] * step
            rt, *_ = f(qt, da)
            et = np.abs(rt).max(axis=1)
            ok = pending & (et < best_err)
            best_q[ok], best_r[ok], best_err[ok] = qt[ok], rt[ok], et[ok]
            pending &= ~ok
            if not pending.any():
                break
            t[pending] *= 0.5
        if pending.all():
            break  # no sample made progress
        q[idx] = best_q
        res[idx] = best_r
        err[idx] = best_err
    res, F_env, wL, wR = f(q, data)
    err = np.abs(res).max(axis=1)
    return SettleBatchResult(q, F_env, wL, wR, err, err <= tol, it)


def settle(state: PlantState, box: BoxModel, env: EnvironmentModel,
           gravity: GravityVec | None = None, tol: float = SETTLE_TOL) -> PlantState:
    """Settle one plant state; raises :class:`SettleError` if the residual stays above ``tol``."""
    out = settle_batch(state.box.vector(), state.u_L.vector(), state.u_R.vector(), box, env, state.K,
                       state.r_L, state.r_R, gravity, state.attached, tol=tol)
    if not out.converged[0]:
        raise SettleError(float(out.residual[0]), out.iterations)
    pose = Pose6.from_vector(out.q[0])
    z_L, z_R = handle_poses(pose, state.r_L, state.r_R)
    return replace(
        state, box=pose, z_L=z_L, z_R=z_R, F_env=out.F_env[0],
        w_L=Wrench.from_vector(out.w_L[0], WORLD), w_R=Wrench.from_vector(out.w_R[0], WORLD),
        residual=float(out.residual[0]), iterations=out.iterations,
    )


@dataclass(frozen=True)
class PlantConfig:
    box: BoxModel
    env: EnvironmentModel
    K: Stiffness
    r_L: np.ndarray
    r_R: np.ndarray
    gravity: GravityVec = field(default_factory=GravityVec)

    def __post_init__(self):
        object.__setattr__(self, "r_L", np.asarray(self.r_L, dtype=float).reshape(3))
        object.__setattr__(self, "r_R", np.asarray(self.r_R, dtype=float).reshape(3))

    def with_stiffness(self, K: Stiffness) -> "PlantConfig":
        return replace(self, K=K)


def static_hold_wrenches(box: BoxModel, r_L, r_R, gravity: GravityVec | None = None) -> np.ndarray:
    """Minimum-norm handle wrenches (12,) in {B} that carry the true load of ``box``."""
    gravity = gravity or GravityVec()
    G = np.zeros((6, 12))
    G[:3, 0:3] = np.eye(3)
    G[:3, 6:9] = np.eye(3)
    for col, r in ((0, r_L), (6, r_R)):
        x, y, z = np.asarray(r, float)
        G[3:, col : col + 3] = [[0, -z, y], [z, 0, -x], [-y, x, 0]]
        G[3:, col + 3 : col + 6] = np.eye(3)
    mg = box.mass * gravity.vec
    b = -np.concatenate([mg, np.cross(box.com, mg)])
    return np.linalg.pinv(G) @ b


def handle_commands(box_poses: np.ndarray, r_L, r_R, K: Stiffness, w_L_box, w_R_box) -> tuple[np.ndarray, np.ndarray]:
    """Commands placing the box at ``box_poses`` (..., 6) while applying the given {B} wrenches.

    ``u_i = z_i + K^{-1} R w_i`` with the handle pose ``z_i`` taken from the
    grasp offsets.
    """
    q = np.asarray(box_poses, dtype=float)
    R = euler_to_matrix_batch(q[..., 3:])
    Kinv = K.inverse()
    out = []
    for r, w in ((r_L, w_L_box), (r_R, w_R_box)):
        w = np.asarray(w, dtype=float)
        z = np.concatenate([q[..., :3] + R @ np.asarray(r, float), q[..., 3:]], axis=-1)
        ww = np.concatenate([np.einsum("...ij,...j->...i", R, w[..., :3]),
                             np.einsum("...ij,...j->...i", R, w[..., 3:])], axis=-1)
        out.append(z + ww @ Kinv.T)
    return out[0], out[1]


@dataclass
class RolloutResult:
    """Settled plant trajectory; wrenches are in {B}."""

    z_box: np.ndarray  # (T, 6)
    F_env: np.ndarray  # (T, 3)
    w_L: np.ndarray  # (T, 6)
    w_R: np.ndarray  # (T, 6)
    residual: np.ndarray
    truncated: bool = False

    def __len__(self):
        return self.z_box.shape[0]


def rollout_batch(trajs, cfg: PlantConfig, hold=None, tol: float = SETTLE_TOL) -> list[RolloutResult]:
    """Roll out ``B`` commanded box trajectories (B, T, 6) through the plant.

    Handles track each commanded box pose with a feed-forward hold wrench
    (default: the minimum-norm split of the true load), so the box follows
    the command exactly unless the environment pushes it away.
    """
    trajs = np.asarray(trajs, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[None]
    B, T, _ = trajs.shape
    if T == 0:
        raise ValueError("trajectory must be non-empty")
    hold = static_hold_wrenches(cfg.box, cfg.r_L, cfg.r_R, cfg.gravity) if hold is None else np.asarray(hold, float)
    uL, uR = handle_commands(trajs, cfg.r_L, cfg.r_R, cfg.K, np.broadcast_to(hold[:6], (B, T, 6)),
                             np.broadcast_to(hold[6:], (B, T, 6)))
    z = np.full((B, T, 6), np.nan)
    F = np.full((B, T, 3), np.nan)
    wL = np.full((B, T, 6), np.nan)
    wR = np.full((B, T, 6), np.nan)
    resid = np.full((B, T), np.nan)
    alive = np.ones(B, dtype=bool)
    length = np.full(B, T)
    q = trajs[:, 0].copy()
    for t in range(T):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        # warm start from the previous settled pose shifted by the command increment
        q0 = q[idx] if t == 0 else q[idx] + trajs[idx, t] - trajs[idx, t - 1]
        out = settle_batch(q0, uL[idx, t], uR[idx, t], cfg.box, cfg.env, cfg.K, cfg.r_L, cfg.r_R,
                           cfg.gravity, tol=tol)
        q[idx] = out.q
        R = euler_to_matrix_batch(out.q[:, 3:])
        Rt = np.transpose(R, (0, 2, 1))
        z[idx, t] = out.q
        F[idx, t] = out.F_env
        for dst, w in ((wL, out.w_L), (wR, out.w_R)):
            dst[idx, t, :3] = np.einsum("bij,bj->bi", Rt, w[:, :3])
            dst[idx, t, 3:] = np.einsum("bij,bj->bi", Rt, w[:, 3:])
        resid[idx, t] = out.residual
        failed = idx[~out.converged]
        alive[failed] = False
        length[failed] = t
    return [
        RolloutResult(z[b, : length[b]], F[b, : length[b]], wL[b, : length[b]], wR[b, : length[b]],
                      resid[b, : length[b]], truncated=bool(length[b] < T))
        for b in range(B)
    ]


def rollout(traj, cfg: PlantConfig, hold=None, tol: float = SETTLE_TOL) -> RolloutResult:
    return rollout_batch(np.asarray(traj, float)[None], cfg, hold, tol)[0]


def add_measurement_noise(wrenches, sigma_f: float, sigma_tau: float, seed: int | None = None) -> np.ndarray:
    """I.i.d. zero-mean Gaussian noise on a (..., 6) wrench series."""
    if sigma_f < 0 or sigma_tau < 0:
        raise ValueError("noise levels must be non-negative")
    w = np.array(wrenches, dtype=float)
    if sigma_f == 0 and sigma_tau == 0:
        return w
    rng = np.random.default_rng(seed)
    sig = np.array([sigma_f] * 3 + [sigma_tau] * 3)
    return w + rng.standard_normal(w.shape) * sig
