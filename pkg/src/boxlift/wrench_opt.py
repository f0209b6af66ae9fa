"""Contact wrench distribution for a two-handle grasp.

The desired handle wrenches minimise the weighted effort ``|Q^{1/2} x|``
subject to static equilibrium with the estimated load, compression, zero
bending moment and the contracted ellipsoidal limit surface at each handle.

Bending moments are removed by writing each handle moment as ``tau_n * n``,
so the cone program works on ``[f_L, tau_nL, f_R, tau_nR, t]`` and the
12-vector ``[f_L, tau_L, f_R, tau_R]`` is rebuilt afterwards.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import socp
from .core import BOX, GravityVec, Wrench, cross, skew
from .estimator import InertialEstimate
from .friction import (
    ContactDecomposition,
    FrictionParams,
    decompose,
    limit_surface_residual,
    tangent_basis,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200

OPTIMAL = socp.OPTIMAL
INFEASIBLE = socp.INFEASIBLE
MAX_ITER = socp.MAX_ITER


@dataclass(frozen=True)
class GraspGeometry:
    r_L: np.ndarray
    r_R: np.ndarray
    n_L: np.ndarray
    n_R: np.ndarray
    fp_L: FrictionParams
    fp_R: FrictionParams

    def __post_init__(self):
        for name in ("r_L", "r_R", "n_L", "n_R"):
            v = np.array(getattr(self, name), dtype=float).reshape(3)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        for n in (self.n_L, self.n_R):
            if abs(np.linalg.norm(n) - 1.0) > 1e-10:
                raise ValueError("contact normals must be unit length")
        if np.allclose(self.r_L, self.r_R):
            raise ValueError("contacts must be distinct")

    @classmethod
    def symmetric(cls, half_width: float, fp: FrictionParams) -> "GraspGeometry":
        """Handles on the +/-x faces, outward normals along -x (left) and +x (right)."""
        return cls(
            r_L=(-half_width, 0.0, 0.0), r_R=(half_width, 0.0, 0.0),
            n_L=(-1.0, 0.0, 0.0), n_R=(1.0, 0.0, 0.0), fp_L=fp, fp_R=fp,
        )

    def mirrored_y(self) -> "GraspGeometry":
        M = np.diag([1.0, -1.0, 1.0])
        return GraspGeometry(M @ self.r_L, M @ self.r_R, M @ self.n_L, M @ self.n_R, self.fp_L, self.fp_R)

    @property
    def contacts(self):
        return ((self.r_L, self.n_L, self.fp_L), (self.r_R, self.n_R, self.fp_R))


@dataclass(frozen=True)
class WrenchWeight:
    l_c: float

    def __post_init__(self):
        if not self.l_c > 0:
            raise ValueError("characteristic contact length must be positive")

    @property
    def Q_c(self) -> np.ndarray:
        return np.diag([1.0, 1.0, 1.0] + [1.0 / self.l_c**2] * 3)

    @property
    def Q(self) -> np.ndarray:
        Qc = self.Q_c
        return np.block([[Qc, np.zeros((6, 6))], [np.zeros((6, 6)), Qc]])

    @property
    def Q_sqrt(self) -> np.ndarray:
        return np.sqrt(self.Q)


@dataclass(frozen=True)
class StackedWrench:
    x: np.ndarray

    def __post_init__(self):
        v = np.array(self.x, dtype=float).reshape(12)
        if not np.all(np.isfinite(v)):
            raise ValueError("stacked wrench must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "x", v)

    @classmethod
    def from_wrenches(cls, w_L: Wrench, w_R: Wrench) -> "StackedWrench":
        return cls(np.concatenate([w_L.vector(), w_R.vector()]))

    @property
    def left(self) -> Wrench:
        return Wrench.from_vector(self.x[:6], BOX)

    @property
    def right(self) -> Wrench:
        return Wrench.from_vector(self.x[6:], BOX)


def build_grasp_map(geo: GraspGeometry) -> np.ndarray:
    G = np.zeros((6, 12))
    G[:3, 0:3] = np.eye(3)
    G[:3, 6:9] = np.eye(3)
    G[3:, 0:3] = skew(geo.r_L)
    G[3:, 3:6] = np.eye(3)
    G[3:, 6:9] = skew(geo.r_R)
    G[3:, 9:12] = np.eye(3)
    return G


def bending_constraints(geo: GraspGeometry) -> np.ndarray:
    """Rows ``t_k' tau_i = 0`` (two per handle) forbidding tangential moments."""
    B = np.zeros((4, 12))
    B[0:2, 3:6] = tangent_basis(geo.n_L)
    B[2:4, 9:12] = tangent_basis(geo.n_R)
    return B


def equilibrium_rhs(est: InertialEstimate, gravity: GravityVec) -> np.ndarray:
    """``-[m g; r_com x m g]``: the wrench the handles must supply."""
    mg = est.m_hat * gravity.vec
    return -np.concatenate([mg, cross(est.r_com_hat, mg)])


# reduced variable layout
_FL, _TL, _FR, _TR, _T = slice(0, 3), 3, slice(4, 7), 7, 8
N_VARS = 9


def lift_reduced(v: np.ndarray, geo: GraspGeometry) -> np.ndarray:
    """Map ``[f_L, tau_nL, f_R, tau_nR, (t)]`` to the 12-D stacked wrench."""
    x = np.zeros(12)
    x[0:3] = v[_FL]
    x[3:6] = v[_TL] * geo.n_L
    x[6:9] = v[_FR]
    x[9:12] = v[_TR] * geo.n_R
    return x


@dataclass
class SocpProblem:
    geo: GraspGeometry
    est: InertialEstimate
    weight: WrenchWeight
    gravity: GravityVec
    program: socp.ConeProgram
    x_init: np.ndarray
    G_full: np.ndarray
    b: np.ndarray
    bending: np.ndarray

    def constraint_summary(self) -> dict:
        """Constraint counts of the full 12-variable problem.

        The four bending-moment equalities are satisfied by construction of
        the reduced variables rather than imposed as rows of the cone program.
        """
        return {
            "equilibrium": self.G_full.shape[0],
            "bending_moment": self.bending.shape[0],
            "compression": self.program.dims.l,
            "friction_cones": len(self.program.dims.q) - 1,
            "epigraph_cones": 1,
        }


def assemble_socp(geo: GraspGeometry, est: InertialEstimate, weight: WrenchWeight,
                  gravity: GravityVec | None = None) -> SocpProblem:
    gravity = gravity or GravityVec()
    if not est.m_hat > 0:
        raise ValueError("mass estimate must be positive")
    for fp in (geo.fp_L, geo.fp_R):
        if not fp.mu > 0 or not 0 <= fp.r_s < 1:
            raise ValueError("need mu > 0 and r_s in [0, 1)")

    Gf = build_grasp_map(geo)
    b = equilibrium_rhs(est, gravity)

    # equalities in reduced variables
    A = np.zeros((6, N_VARS))
    A[:, _FL] = Gf[:, 0:3]
    A[:, _TL] = Gf[:, 3:6] @ geo.n_L
    A[:, _FR] = Gf[:, 6:9]
    A[:, _TR] = Gf[:, 9:12] @ geo.n_R

    rows, h = [], []
    # compression  n' f <= 0  ->  s = -n' f >= 0
    for fsl, n in ((_FL, geo.n_L), (_FR, geo.n_R)):
        r = np.zeros(N_VARS)
        r[fsl] = n
        rows.append(r)
    # friction cones: ((1-r_s) mu (-n'f), t1'f, t2'f, tau_n / R_eff) in Q^4
    for fsl, tsl, n, fp in ((_FL, _TL, geo.n_L, geo.fp_L), (_FR, _TR, geo.n_R, geo.fp_R)):
        T = tangent_basis(n)
        blk = np.zeros((4, N_VARS))
        blk[0, fsl] = (1.0 - fp.r_s) * fp.mu * n
        blk[1, fsl] = -T[0]
        blk[2, fsl] = -T[1]
        blk[3, tsl] = -1.0 / fp.R_eff
        rows.extend(blk)
    # epigraph: (t, f_L, tau_nL / l_c, f_R, tau_nR / l_c) in Q^9
    epi = np.zeros((9, N_VARS))
    epi[0, _T] = -1.0
    epi[1:4, _FL] = -np.eye(3)
    epi[4, _TL] = -1.0 / weight.l_c
    epi[5:8, _FR] = -np.eye(3)
    epi[8, _TR] = -1.0 / weight.l_c
    rows.extend(epi)

    Gc = np.array(rows)
    dims = socp.ConeDims(l=2, q=(4, 4, 9))
    prog = socp.ConeProgram(
        c=np.eye(N_VARS)[_T], G=Gc, h=np.zeros(dims.size), dims=dims, A=A, b=b
    )
    return SocpProblem(geo, est, weight, gravity, prog, _initial_point(geo, est, weight, gravity),
                       Gf, b, bending_constraints(geo))


def _initial_point(geo, est, weight, gravity) -> np.ndarray:
    # symmetric squeeze at twice the centred-CoM normal force, load shared equally
    mg = est.m_hat * gravity.g
    v = np.zeros(N_VARS)
    support = -0.5 * est.m_hat * gravity.vec
    for fsl, n, fp in ((_FL, geo.n_L, geo.fp_L), (_FR, geo.n_R, geo.fp_R)):
        squeeze = 2.0 * mg / (2.0 * fp.mu * (1.0 - fp.r_s))
        v[fsl] = -squeeze * n + support
    eff = np.concatenate([v[_FL], [v[_TL] / weight.l_c], v[_FR], [v[_TR] / weight.l_c]])
    v[_T] = 1.5 * np.linalg.norm(eff) + 1.0
    return v


@dataclass
class SocpSolution:
    x_star: StackedWrench | None
    t_star: float
    status: str
    kkt_residuals: dict
    iterations: int
    solve_time: float = 0.0
    reduced: np.ndarray | None = field(default=None, repr=False)

    @property
    def w_L(self) -> Wrench:
        return self.x_star.left

    @property
    def w_R(self) -> Wrench:
        return self.x_star.right


def solve_socp(p: SocpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SocpSolution:
    t0 = time.perf_counter()
    sol = socp.solve(p.program, x0=p.x_init, tol=tol, max_iter=max_iter)
    elapsed = time.perf_counter() - t0
    kkt = {"primal": sol.primal_residual, "dual": sol.dual_residual, "gap": sol.gap}
    if sol.status != socp.OPTIMAL:
        status = INFEASIBLE if sol.status in (socp.INFEASIBLE, socp.DUAL_INFEASIBLE) else MAX_ITER
        xs = None
        if status == MAX_ITER and np.all(np.isfinite(sol.x)):
            xs = StackedWrench(lift_reduced(sol.x, p.geo))
        return SocpSolution(xs, float("nan"), status, kkt, sol.iterations, elapsed, sol.x)
    v = sol.x
    return SocpSolution(StackedWrench(lift_reduced(v, p.geo)), float(v[_T]), OPTIMAL, kkt,
                        sol.iterations, elapsed, v)


def optimize_wrenches(geo: GraspGeometry, est: InertialEstimate, weight: WrenchWeight,
                      gravity: GravityVec | None = None, tol: float = DEFAULT_TOL) -> SocpSolution:
    return solve_socp(assemble_socp(geo, est, weight, gravity), tol=tol)


@dataclass
class ContactCheck:
    decomposition: ContactDecomposition
    limit_surface_residual: float
    compression: bool
    bending_norm: float


@dataclass
class VerificationReport:
    equilibrium_residual: np.ndarray
    contacts: tuple[ContactCheck, ContactCheck]
    effort: float

    @property
    def equilibrium_norm(self) -> float:
        return float(np.linalg.norm(self.equilibrium_residual))

    def passes(self, tol: float) -> bool:
        return (
            float(np.abs(self.equilibrium_residual).max()) <= tol
            and all(c.limit_surface_residual <= tol for c in self.contacts)
            and all(c.compression for c in self.contacts)
            and all(c.bending_norm <= tol for c in self.contacts)
        )

    def lines(self) -> list[str]:
        out = [f"equilibrium residual |Gx - b| = {self.equilibrium_norm:.3e}"]
        for name, c in zip(("left", "right"), self.contacts):
            d = c.decomposition
            out.append(
                f"{name}: f_n={d.f_n:+.4f} N |f_t|={np.linalg.norm(d.f_t):.4f} N "
                f"tau_n={d.tau_n:+.5f} Nm |tau_t|={c.bending_norm:.2e} "
                f"limit-surface residual={c.limit_surface_residual:+.3e} "
                f"compression={'yes' if c.compression else 'NO'}"
            )
        return out


def verify_solution(x: StackedWrench, geo: GraspGeometry, est: InertialEstimate,
                    gravity: GravityVec | None = None, fp: tuple[FrictionParams, FrictionParams] | None = None,
                    weight: WrenchWeight | None = None) -> VerificationReport:
    """Re-evaluate every constraint of the distribution problem on ``x``.

    Independent of the solver: it works directly on the 12-D wrench through
    the grasp map and the friction module.
    """
    gravity = gravity or GravityVec()
    fp = fp or (geo.fp_L, geo.fp_R)
    res = build_grasp_map(geo) @ x.x - equilibrium_rhs(est, gravity)
    checks = []
    for w, n, f in ((x.left, geo.n_L, fp[0]), (x.right, geo.n_R, fp[1])):
        d = decompose(w, n)
        comp = d.f_n <= 0
        lsr = limit_surface_residual(d, f) if comp else float("inf")
        checks.append(ContactCheck(d, lsr, comp, float(np.linalg.norm(d.tau_t))))
    effort = float(np.linalg.norm(weight.Q_sqrt @ x.x)) if weight else float("nan")
    return VerificationReport(res, tuple(checks), effort)


def solution_report(p: SocpProblem, s: SocpSolution) -> str:
    lines = [
        f"status: {s.status}",
        f"iterations: {s.iterations}",
        f"solve time: {1e3 * s.solve_time:.2f} ms",
        f"kkt residuals: primal={s.kkt_residuals['primal']:.2e} dual={s.kkt_residuals['dual']:.2e} "
        f"gap={s.kkt_residuals['gap']:.2e}",
        f"mass estimate: {p.est.m_hat:.4f} kg, CoM estimate: "
        + ", ".join(f"{1e3 * v:.2f}" for v in p.est.r_com_hat) + " mm",
    ]
    if s.x_star is not None:
        lines.append(f"effort t*: {s.t_star:.6f}")
        for name, w in (("left", s.w_L), ("right", s.w_R)):
            lines.append(f"w_{name}: f=[" + ", ".join(f"{v:+.4f}" for v in w.f) + "] N  tau=["
                         + ", ".join(f"{v:+.5f}" for v in w.tau) + "] Nm")
        rep = verify_solution(s.x_star, p.geo, p.est, p.gravity, weight=p.weight)
        lines.extend(rep.lines())
    return "\n".join(lines) + "\n"


def solution_csv(p: SocpProblem, s: SocpSolution) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf)
    wr.writerow(["quantity", "value"])
    names = [f"{k}{h}{a}" for h in "LR" for k in ("f", "tau") for a in "xyz"]
    if s.x_star is not None:
        for n, v in zip(names, s.x_star.x):
            wr.writerow([n, repr(float(v))])
        wr.writerow(["t_star", repr(s.t_star)])
        rep = verify_solution(s.x_star, p.geo, p.est, p.gravity, weight=p.weight)
        wr.writerow(["equilibrium_residual", repr(rep.equilibrium_norm)])
        for h, c in zip("LR", rep.contacts):
            wr.writerow([f"limit_surface_residual_{h}", repr(float(c.limit_surface_residual))])
    for k, v in s.kkt_residuals.items():
        wr.writerow([f"kkt_{k}", repr(float(v))])
    wr.writerow(["status", s.status])
    wr.writerow(["iterations", s.iterations])
    return buf.getvalue()
