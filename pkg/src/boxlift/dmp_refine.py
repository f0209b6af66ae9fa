"""Trajectory refinement: DMP encoding of the box path and cross-entropy search.

Each pose dimension is a discrete movement primitive sharing one canonical
phase.  The rollout is linear in the basis weights, so a batch of sampled
weight sets is turned into trajectories with one matrix product and then
pushed through the quasi-static plant in a single batched rollout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import euler_to_matrix_batch
from .simplant import PlantConfig, RolloutResult, rollout_batch

DIMS = ("x", "y", "z", "rx", "ry", "rz")
ALPHA_Z = 25.0
PHASE_END = 0.01  # canonical phase value reached at the end time
WEIGHT_SCALE = 1e-3  # one unit of weight shifts the attractor by about a millimetre
SUBSTEPS = 10
COV_FLOOR = 1e-12
MAX_ITER = 500

CONVERGED = "converged"
ITERATION_CAP = "iteration_cap"


@dataclass(frozen=True)
class RefTrajectory:
    """Time-indexed 6-D box poses sampled every ``dt`` seconds."""

    z: np.ndarray  # (T, 6)
    dt: float
    sigma: np.ndarray | None = None

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        if z.ndim != 2 or z.shape[1] != 6 or z.shape[0] < 2:
            raise ValueError("reference needs at least two 6-D samples")
        if not self.dt > 0:
            raise ValueError("sample interval must be positive")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        if self.sigma is not None:
            S = np.array(self.sigma, dtype=float)
            if S.shape != (6, 6) or not np.allclose(S, S.T) or np.linalg.eigvalsh(S).min() <= 0:
                raise ValueError("trajectory covariance must be symmetric positive definite")
            object.__setattr__(self, "sigma", S)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.z.shape[0])

    @property
    def duration(self) -> float:
        return self.dt * (self.z.shape[0] - 1)

    @property
    def precision(self) -> np.ndarray:
        return np.eye(6) if self.sigma is None else np.linalg.inv(self.sigma)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("t",) + DIMS)
            for t, row in zip(self.times, self.z):
                wr.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, sigma=None) -> "RefTrajectory":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["t", *DIMS]:
            raise ValueError(f"{path}: expected header t,{','.join(DIMS)}")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if data.shape[0] < 2:
            raise ValueError(f"{path}: need at least two samples")
        dt = np.diff(data[:, 0])
        if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-12):
            raise ValueError(f"{path}: samples must be uniformly spaced in time")
        return cls(data[:, 1:], float(dt[0]), sigma)


def min_jerk(s):
    s = np.asarray(s, dtype=float)
    return 10 * s**3 - 15 * s**4 + 6 * s**5


@dataclass(frozen=True)
class DmpParams:
    weights: np.ndarray  # (6, N)
    y0: np.ndarray
    goal: np.ndarray
    duration: float
    alpha_z: float = ALPHA_Z
    beta_z: float = ALPHA_Z / 4.0
    alpha_x: float = -math.log(PHASE_END)
    weight_scale: float = WEIGHT_SCALE

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != 6 or w.shape[1] < 2:
            raise ValueError("weights must have shape (6, N) with N >= 2")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if abs(self.alpha_z**2 - 4.0 * self.alpha_z * self.beta_z) > 1e-9 * self.alpha_z**2:
            raise ValueError("transformation system must be critically damped")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "y0", np.array(self.y0, dtype=float).reshape(6))
        object.__setattr__(self, "goal", np.array(self.goal, dtype=float).reshape(6))

    @property
    def n_basis(self) -> int:
        return self.weights.shape[1]

    def centers_widths(self) -> tuple[np.ndarray, np.ndarray]:
        """Gaussian bases in phase, centred at times spaced evenly over the movement."""
        c = np.exp(-self.alpha_x * np.linspace(0.0, 1.0, self.n_basis))
        d = np.diff(c)
        h = 1.0 / np.append(d, d[-1]) ** 2
        return c, h

    def features(self, x) -> np.ndarray:
        """Normalised forcing features ``alpha_z beta_z s x psi_i(x) / sum psi`` for phases ``x``."""
        c, h = self.centers_widths()
        x = np.asarray(x, dtype=float)[..., None]
        psi = np.exp(-h * (x - c) ** 2)
        return self.alpha_z * self.beta_z * self.weight_scale * x * psi / psi.sum(axis=-1, keepdims=True)


def _integrate(params: DmpParams, times: np.ndarray, forcing_weights: np.ndarray, with_goal: bool) -> np.ndarray:
    """Euler integration of the transformation system for stacked weight rows ``(K, N)``.

    Returns positions ``(len(times), K)``.  With ``with_goal`` the spring pulls
    each row from ``y0`` to ``goal``; without it start and goal are zero, which
    gives the (linear) response to the forcing term alone.
    """
    tau = params.duration
    n_t = len(times)
    dt_out = times[1] - times[0]
    h = dt_out / SUBSTEPS
    K = forcing_weights.shape[0]
    y = np.tile(params.y0, K // 6) if with_goal else np.zeros(K)
    g = np.tile(params.goal, K // 6) if with_goal else np.zeros(K)
    zv = np.zeros(K)
    out = np.empty((n_t, K))
    out[0] = y
    az, bz, ax = params.alpha_z, params.beta_z, params.alpha_x
    for k in range(1, n_t):
        for j in range(SUBSTEPS):
            t = times[k - 1] + j * h
            x = math.exp(-ax * t / tau)
            f = forcing_weights @ params.features(x)
            zd = (az * (bz * (g - y) - zv) + f) / tau
            y = y + h * zv / tau
            zv = zv + h * zd
        out[k] = y
    return out


def dmp_response(params: DmpParams, times) -> tuple[np.ndarray, np.ndarray]:
    """``(y_base (T, 6), Phi (T, N))`` with rollout ``y_d(t) = y_base[t, d] + Phi[t] @ w_d``."""
    times = np.asarray(times, dtype=float)
    N = params.n_basis
    base = _integrate(params, times, np.zeros((6, N)), with_goal=True)
    Phi = _integrate(params, times, np.eye(N), with_goal=False)
    return base, Phi


def dmp_rollout(params: DmpParams, times, weights=None) -> np.ndarray:
    """Direct integration of all six dimensions (independent of :func:`dmp_response`)."""
    w = params.weights if weights is None else np.asarray(weights, dtype=float)
    return _integrate(params, np.asarray(times, dtype=float), w, with_goal=True)


def fit_dmp(ref: RefTrajectory, N: int = 20) -> DmpParams:
    """Locally weighted regression of the forcing term on the reference."""
    if N < 2:
        raise ValueError("need at least two basis functions")
    if not ref.duration > 0:
        raise ValueError("reference has zero duration")
    tau = ref.duration
    t = ref.times
    y = ref.z
    yd = np.gradient(y, ref.dt, axis=0)
    ydd = np.gradient(yd, ref.dt, axis=0)
    params = DmpParams(np.zeros((6, N)), y[0], y[-1], tau)
    az, bz = params.alpha_z, params.beta_z
    f_target = tau**2 * ydd - az * (bz * (params.goal - y) - tau * yd)
    x = np.exp(-params.alpha_x * t / tau)
    c, h = params.centers_widths()
    psi = np.exp(-h * (x[:, None] - c) ** 2)  # (T, N)
    # near centre i the forcing term is w_i * xi
    xi = az * bz * params.weight_scale * x
    w = np.zeros((6, N))
    for i in range(N):
        den = (psi[:, i] * xi**2).sum()
        w[:, i] = (psi[:, i] * xi) @ f_target / den if den > 0 else 0.0
    return DmpParams(w, params.y0, params.goal, tau)


@dataclass
class ExplorationState:
    sigma: np.ndarray  # (D, N, N), one covariance per explored dimension
    c: float = 1000.0
    R: int = 50
    K_e: int = 5
    eps_conv: float = 1e-2
    alpha_cost: float = 0.2

    def __post_init__(self):
        self.sigma = np.array(self.sigma, dtype=float)
        if self.sigma.ndim != 3 or self.sigma.shape[1] != self.sigma.shape[2]:
            raise ValueError("covariances must have shape (D, N, N)")
        if not 1 <= self.K_e <= self.R:
            raise ValueError("elite count must satisfy 1 <= K_e <= R")
        if not 0 < self.eps_conv < self.c:
            raise ValueError("convergence threshold must lie in (0, c)")
        if not 0 < self.alpha_cost < 1:
            raise ValueError("cost weight must lie in (0, 1)")
        if not np.allclose(self.sigma, np.transpose(self.sigma, (0, 2, 1))):
            raise ValueError("covariances must be symmetric")

    @classmethod
    def initial(cls, n_dims: int, N: int, c: float = 1000.0, **kw) -> "ExplorationState":
        return cls(np.broadcast_to(c * np.eye(N), (n_dims, N, N)).copy(), c=c, **kw)

    def converged(self) -> bool:
        return bool(self.sigma.max() < self.eps_conv)


def sample_candidates(mean: np.ndarray, exp: ExplorationState, rng) -> np.ndarray:
    """``R`` draws per explored dimension, shape ``(R, D, N)``.

    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    mean = np.asarray(mean, dtype=float)
    D, N = mean.shape
    out = np.empty((exp.R, D, N))
    for d in range(D):
        # eigh-based draws tolerate the rank-deficient covariances CEM produces
        out[:, d] = rng.multivariate_normal(mean[d], exp.sigma[d], size=exp.R, method="eigh")
    return out


def score_rollout(z_sim, F_env, ref: RefTrajectory, alpha_cost: float) -> tuple[float, float, float]:
    z_sim = np.asarray(z_sim, dtype=float)
    F_env = np.asarray(F_env, dtype=float)
    if z_sim.shape != ref.z.shape or F_env.shape != (ref.z.shape[0], 3):
        raise ValueError("rollout and reference must share the time base")
    e = z_sim - ref.z
    J1 = float(np.einsum("ti,ij,tj->", e, ref.precision, e))
    J2 = float(np.sum(F_env**2))
    return alpha_cost * J1 + (1 - alpha_cost) * J2, J1, J2


def elite_order(costs) -> np.ndarray:
    """Ascending cost order; equal costs keep candidate order."""
    return np.argsort(np.asarray(costs, dtype=float), kind="stable")


def cem_update(costs, candidates, exp: ExplorationState) -> tuple[np.ndarray, np.ndarray]:
    """New mean = best candidate; covariance of the elites about that new mean.

    ``candidates`` has shape ``(R, D, N)``; returns ``(mean (D, N), sigma (D, N, N))``.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.shape[0] == 0:
        raise ValueError("no candidates to update from")
    if candidates.shape[0] != len(costs):
        raise ValueError("one cost per candidate required")
    k = min(exp.K_e, candidates.shape[0])
    order = elite_order(costs)
    mean = candidates[order[0]].copy()
    diff = candidates[order[:k]] - mean  # (k, D, N)
    sigma = np.einsum("kdi,kdj->dij", diff, diff) / k
    return mean, sigma


def _with_floor(sigma: np.ndarray) -> np.ndarray:
    return sigma + COV_FLOOR * np.eye(sigma.shape[-1])


@dataclass
class IterationLog:
    iteration: int
    best_J: float
    best_J1: float
    best_J2: float
    running_best_J: float
    max_sigma: float


@dataclass
class RefineResult:
    trajectory: np.ndarray  # (T, 6) commanded box path
    handle_L: np.ndarray  # (T, 6) end-effector references
    handle_R: np.ndarray
    status: str
    iterations: int
    nominal: tuple[float, float, float]
    best: tuple[float, float, float]
    history: list[IterationLog] = field(default_factory=list)
    nominal_trajectory: np.ndarray | None = None
    rollout: RolloutResult | None = None

    @property
    def J2_reduction(self) -> float:
        return 0.0 if self.nominal[2] == 0 else 1.0 - self.best[2] / self.nominal[2]


def handle_references(traj: np.ndarray, r_L, r_R) -> tuple[np.ndarray, np.ndarray]:
    R = euler_to_matrix_batch(traj[:, 3:])
    out = []
    for r in (r_L, r_R):
        out.append(np.concatenate([traj[:, :3] + R @ np.asarray(r, float), traj[:, 3:]], axis=1))
    return out[0], out[1]


def refine(ref: RefTrajectory, exp: ExplorationState, cfg: PlantConfig, active=(1, 2), seed=0,
           N: int = 20, max_iter: int = MAX_ITER, dmp: DmpParams | None = None) -> RefineResult:
    """Sample, roll out, score and update until the exploration covariance collapses.

    Inactive dimensions are copied from the reference unchanged.  A nominal
    path that is already contact free is returned without exploring.
    """
    active = tuple(sorted(set(int(a) for a in active)))
    if not active or any(a < 0 or a > 5 for a in active):
        raise ValueError("active dimensions must be a non-empty subset of 0..5")
    if exp.sigma.shape[0] != len(active):
        raise ValueError("one exploration covariance per active dimension required")
    params = dmp or fit_dmp(ref, N)
    base, Phi = dmp_response(params, ref.times)

    def assemble(W):  # W: (B, D, N) -> (B, T, 6)
        B = W.shape[0]
        out = np.broadcast_to(ref.z, (B,) + ref.z.shape).copy()
        for j, d in enumerate(active):
            out[:, :, d] = base[:, d] + W[:, j] @ Phi.T
        return out

    mean = params.weights[list(active)].copy()
    nominal = assemble(mean[None])[0]
    nom_roll = rollout_batch(nominal[None], cfg)[0]
    nom_score = _score(nom_roll, ref, exp.alpha_cost)
    handle = lambda tr: handle_references(tr, cfg.r_L, cfg.r_R)  # noqa: E731
    if nom_score[2] == 0.0:
        hl, hr = handle(nominal)
        return RefineResult(nominal, hl, hr, CONVERGED, 0, nom_score, nom_score, [], nominal, nom_roll)

    rng = np.random.default_rng(seed)
    best_score, best_traj, best_roll = nom_score, nominal, nom_roll
    history = []
    status = ITERATION_CAP
    it = 0
    for it in range(1, max_iter + 1):
        cands = sample_candidates(mean, exp, rng)
        trajs = assemble(cands)
        rolls = rollout_batch(trajs, cfg)
        scores = [_score(r, ref, exp.alpha_cost) for r in rolls]
        costs = [s[0] for s in scores]
        mean, sigma = cem_update(costs, cands, exp)
        exp.sigma = _with_floor(sigma)
        k = int(elite_order(costs)[0])
        if scores[k][0] < best_score[0]:
            best_score, best_traj, best_roll = scores[k], trajs[k], rolls[k]
        history.append(IterationLog(it, *scores[k], best_score[0], float(exp.sigma.max())))
        if exp.converged():
            status = CONVERGED
            break
    hl, hr = handle(best_traj)
    return RefineResult(best_traj, hl, hr, status, it, nom_score, best_score, history, nominal, best_roll)


def _score(roll: RolloutResult, ref: RefTrajectory, alpha_cost: float) -> tuple[float, float, float]:
    if roll.truncated:
        return (math.inf, math.inf, math.inf)
    return score_rollout(roll.z_box, roll.F_env, ref, alpha_cost)


def write_refine_log(path, result: RefineResult, exp: ExplorationState, seed, active, N: int):
    lines = [
        "[run]",
        f"seed = {seed}",
        f"status = {result.status}",
        f"iterations = {result.iterations}",
        "[hyperparameters]",
        f"R = {exp.R}",
        f"K_e = {exp.K_e}",
        f"c = {exp.c!r}",
        f"alpha = {exp.alpha_cost!r}",
        f"eps_conv = {exp.eps_conv!r}",
        f"N = {N}",
        "active_dims = " + ",".join(DIMS[a] for a in active),
        "[costs]",
        f"nominal_J = {result.nominal[0]!r}",
        f"nominal_J1 = {result.nominal[1]!r}",
        f"nominal_J2 = {result.nominal[2]!r}",
        f"refined_J = {result.best[0]!r}",
        f"refined_J1 = {result.best[1]!r}",
        f"refined_J2 = {result.best[2]!r}",
        f"J2_reduction = {result.J2_reduction!r}",
        "[iterations]",
        "# iteration, best_J, best_J1, best_J2, running_best_J, max_sigma",
    ]
    for h in result.history:
        lines.append(f"{h.iteration}, {h.best_J!r}, {h.best_J1!r}, {h.best_J2!r}, {h.running_best_J!r}, {h.max_sigma!r}")
    Path(path).write_text("\n".join(lines) + "\n")
