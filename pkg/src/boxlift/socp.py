"""Dense primal-dual interior-point solver for small second-order cone programs.

Solves the pair ::

    minimize    c'x                  maximize   -h'z - b'y
    subject to  G x + s = h          subject to G'z + A'y + c = 0
                A x = b                         z in K
                s in K

with ``K`` a product of one nonnegative orthant and second-order cones
``{(u0, u1): u0 >= |u1|}``.  The iteration runs on the homogeneous self-dual
embedding, so infeasibility is reported through certificates instead of
divergence.  Nesterov-Todd scaling and a Mehrotra predictor-corrector step
follow the standard conelp layout; everything is dense since the problems in
this package have fewer than twenty variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITER = "max_iter"

STEP_FRACTION = 0.99
REFINE_STEPS = 3
STALL_ITERS = 4


@dataclass(frozen=True)
class ConeDims:
    l: int = 0
    q: tuple[int, ...] = ()

    def __post_init__(self):
        if self.l < 0 or any(k < 2 for k in self.q):
            raise ValueError(f"invalid cone dimensions l={self.l}, q={self.q}")

    @property
    def size(self) -> int:
        return self.l + sum(self.q)

    @property
    def degree(self) -> int:
        return self.l + len(self.q)

    def slices(self):
        start = self.l
        for k in self.q:
            yield slice(start, start + k)
            start += k

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[: self.l] = 1.0
        for sl in self.slices():
            e[sl.start] = 1.0
        return e


class _Segments:
    """Index arrays for vectorised per-cone reductions."""

    def __init__(self, dims: ConeDims):
        self.l = dims.l
        slices = list(dims.slices())
        self.heads = np.array([sl.start for sl in slices], dtype=int)
        self.tail = np.concatenate([np.arange(sl.start + 1, sl.stop) for sl in slices] or [np.zeros(0, int)])
        sizes = np.array(dims.q, dtype=int) - 1
        self.tail_owner = np.repeat(np.arange(len(sizes)), sizes)
        # S @ (u * v) gives the tail inner products of every cone block
        self.S = np.zeros((len(slices), dims.size))
        for k, sl in enumerate(slices):
            self.S[k, sl.start + 1 : sl.stop] = 1.0
        self.slices = slices
        self.diag = [(np.arange(sl.stop - sl.start),) * 2 for sl in slices]
        self.sign = [np.r_[-1.0, np.ones(sl.stop - sl.start - 1)] for sl in slices]

    def tail_dot(self, u, v):
        return self.S @ (u * v)


_SEG_CACHE: dict = {}


def _segments(dims: ConeDims) -> _Segments:
    seg = _SEG_CACHE.get(dims)
    if seg is None:
        seg = _SEG_CACHE[dims] = _Segments(dims)
    return seg


def max_step(u: np.ndarray, du: np.ndarray, dims: ConeDims) -> float:
    """Largest ``a >= 0`` with ``u + a du`` in the closed cone (``inf`` if unbounded)."""
    seg = _segments(dims)
    amax = math.inf
    if dims.l:
        ul, dl = u[: dims.l], du[: dims.l]
        neg = dl < 0
        if neg.any():
            amax = float((-ul[neg] / dl[neg]).min())
    if seg.heads.size:
        tails = seg.S @ np.column_stack([du * du, u * du, u * u])
        heads = np.column_stack([u[seg.heads], du[seg.heads]])
        for (u0, d0), (dd, ud, uu) in zip(heads.tolist(), tails.tolist()):
            amax = min(amax, _soc_root(u0, d0, d0 * d0 - dd, u0 * d0 - ud, max(u0 * u0 - uu, 0.0)))
    return amax


def _soc_root(u0: float, d0: float, a2: float, a1: float, a0: float) -> float:
    # boundary crossing of (u0 + t d0)^2 - |u1 + t d1|^2 = 0, i.e. a2 t^2 + 2 a1 t + a0 = 0,
    # on the branch u0 + t d0 >= 0
    roots = ()
    if abs(a2) > 1e-300:
        disc = a1 * a1 - a2 * a0
        if disc >= 0:
            q = -(a1 + math.copysign(math.sqrt(disc), a1))
            roots = (q / a2, a0 / q) if q != 0 else (0.0,)
    elif a1 != 0:
        roots = (-a0 / (2 * a1),)
    best = math.inf
    for t in roots:
        if 0 < t < best and u0 + t * d0 >= 0:
            best = t
    if d0 < 0:
        best = min(best, -u0 / d0)
    return best


def _jordan_prod(u, v, dims: ConeDims) -> np.ndarray:
    seg = _segments(dims)
    out = u * v
    if seg.heads.size:
        h = seg.heads
        out[seg.tail] = u[h][seg.tail_owner] * v[seg.tail] + v[h][seg.tail_owner] * u[seg.tail]
        out[h] = u[h] * v[h] + seg.tail_dot(u, v)
    return out


def _jordan_div(lmbda, d, dims: ConeDims) -> np.ndarray:
    """Solve ``lmbda o x = d`` for ``x``."""
    seg = _segments(dims)
    out = np.empty_like(d)
    out[: dims.l] = d[: dims.l] / lmbda[: dims.l]
    if seg.heads.size:
        h = seg.heads
        l0, v0 = lmbda[h], d[h]
        det = l0 * l0 - seg.tail_dot(lmbda, lmbda)
        x0 = (l0 * v0 - seg.tail_dot(lmbda, d)) / det
        out[h] = x0
        own = seg.tail_owner
        out[seg.tail] = (d[seg.tail] - x0[own] * lmbda[seg.tail]) / l0[own]
    return out


def nt_scaling(s: np.ndarray, z: np.ndarray, dims: ConeDims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nesterov-Todd scaling ``W`` (block diagonal, symmetric) with ``W z = W^{-1} s``.

    Returns ``(W, Winv, lmbda)``.  For a cone block with ``J = diag(1, -1, ..., -1)``,
    ``W = beta (2 v v' - J)`` and ``W^{-1} = (2 Jv (Jv)' - J) / beta``.
    """
    seg = _segments(dims)
    m = dims.size
    W = np.zeros((m, m))
    Winv = np.zeros((m, m))
    if dims.l:
        d = np.sqrt(s[: dims.l] / z[: dims.l])
        idx = np.arange(dims.l)
        W[idx, idx] = d
        Winv[idx, idx] = 1.0 / d
    if seg.heads.size:
        tails = (seg.S @ np.column_stack([s * s, z * z, s * z])).tolist()
        for sl, diag, sign, (s_t, z_t, sz_t) in zip(seg.slices, seg.diag, seg.sign, tails):
            ss, zz = s[sl], z[sl]
            s0, z0 = float(ss[0]), float(zz[0])
            sn = math.sqrt(max(s0 * s0 - s_t, 1e-300))
            zn = math.sqrt(max(z0 * z0 - z_t, 1e-300))
            gamma = math.sqrt(max((1.0 + (s0 * z0 + sz_t) / (sn * zn)) / 2.0, 1.0))
            beta = math.sqrt(sn / zn)
            # v = (wb + e) / sqrt(2 (wb0 + 1)), wb = (s/sn + J z/zn) / (2 gamma)
            v = ss / (2.0 * gamma * sn) + zz * (sign / (-2.0 * gamma * zn))
            v[0] += 1.0
            v /= math.sqrt(2.0 * v[0])
            Jv = v * -sign
            blk = (2.0 * beta) * np.outer(v, v)
            iblk = (2.0 / beta) * np.outer(Jv, Jv)
            blk[diag] += beta * sign
            iblk[diag] += sign / beta
            W[sl, sl] = blk
            Winv[sl, sl] = iblk
    lmbda = W @ z
    return W, Winv, lmbda


@dataclass
class ConeProgram:
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    dims: ConeDims
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, float)
        self.G = np.asarray(self.G, float)
        self.h = np.asarray(self.h, float)
        self.A = np.asarray(self.A, float).reshape(-1, self.c.size)
        self.b = np.asarray(self.b, float).reshape(-1)
        n = self.c.size
        if self.G.shape != (self.dims.size, n) or self.h.size != self.dims.size:
            raise ValueError("G/h do not match the cone dimensions")
        if self.A.shape[0] != self.b.size:
            raise ValueError("A/b size mismatch")


@dataclass
class ConeSolution:
    status: str
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z: np.ndarray
    iterations: int
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    history: list = field(default_factory=list)


def _interior_margin(u, dims: ConeDims) -> float:
    """Smallest 'eigenvalue' of ``u`` w.r.t. the cone (positive iff interior)."""
    vals = [np.inf]
    if dims.l:
        vals.append(float(u[: dims.l].min()))
    for sl in dims.slices():
        w = u[sl]
        vals.append(float(w[0] - np.linalg.norm(w[1:])))
    return min(vals)


def _metrics(x, y, z, s, tau, kappa, prog: ConeProgram, norms):
    c, G, h, A, b = prog.c, prog.G, prog.h, prog.A, prog.b
    resx0, resy0, resz0 = norms
    rx = A.T @ y + G.T @ z + c * tau
    ry = -A @ x + b * tau
    rz = s + G @ x - h * tau
    rt = kappa + c @ x + b @ y + h @ z
    cx, byhz = c @ x, b @ y + h @ z
    pcost, dcost = cx / tau, -byhz / tau
    pres = max(np.linalg.norm(ry) / resy0, np.linalg.norm(rz) / resz0) / tau
    dres = np.linalg.norm(rx) / resx0 / tau
    gap = (s @ z) / tau**2
    return (rx, ry, rz, rt), (pcost, dcost, pres, dres, gap, cx, byhz)


def solve(prog: ConeProgram, x0=None, tol: float = 1e-8, max_iter: int = 200) -> ConeSolution:
    """Interior-point solve; ``tol`` bounds the scaled residuals and the absolute gap.

    If progress stalls before the absolute gap reaches ``tol`` the best
    iterate is still accepted when its relative gap does.
    """
    c, G, h, A, b, dims = prog.c, prog.G, prog.h, prog.A, prog.b, prog.dims
    n, m, p = c.size, dims.size, b.size
    e = dims.identity()
    deg = dims.degree

    x = np.zeros(n) if x0 is None else np.array(x0, float)
    s = h - G @ x
    margin = _interior_margin(s, dims)
    if margin < 1e-2 * max(1.0, np.abs(s).max()):
        s = s + (max(0.0, -margin) + 1.0) * e
    z = e.copy()
    y = np.zeros(p)
    tau, kappa = 1.0, 1.0
    norms = (max(1.0, np.linalg.norm(c)), max(1.0, np.linalg.norm(b)), max(1.0, np.linalg.norm(h)))

    N = n + p + m + 1
    KKT = np.zeros((N, N))
    ix, iy, iz, it = slice(0, n), slice(n, n + p), slice(n + p, n + p + m), n + p + m
    KKT[ix, iy] = A.T
    KKT[ix, it] = c
    KKT[iy, ix] = -A
    KKT[iy, it] = b
    KKT[iz, iz] = -np.eye(m)
    KKT[it, ix] = c
    KKT[it, iy] = b

    history = []
    status = MAX_ITER
    best = None
    since_best = 0
    it_count = 0
    for it_count in range(max_iter + 1):
        (rx, ry, rz, rt), (pcost, dcost, pres, dres, gap, cx, byhz) = _metrics(x, y, z, s, tau, kappa, prog, norms)
        if not np.isfinite([pres, dres, gap, pcost, dcost]).all():
            break
        mu = (s @ z + tau * kappa) / (deg + 1)
        relgap = gap / max(abs(pcost), abs(dcost), 1.0)
        history.append((it_count, pcost, dcost, pres, dres, gap))

        score = max(pres, dres, relgap)
        if best is None or score < best[0]:
            best = (score, x / tau, s / tau, y / tau, z / tau, it_count, pcost, dcost, pres, dres, gap, relgap)
            since_best = 0
        else:
            since_best += 1

        if pres <= tol and dres <= tol and gap <= tol:
            status = OPTIMAL
            best = (score, x / tau, s / tau, y / tau, z / tau, it_count, pcost, dcost, pres, dres, gap, relgap)
            break
        # certificates of infeasibility
        if byhz < 0 and np.linalg.norm(A.T @ y + G.T @ z) / norms[0] / -byhz <= tol:
            status = INFEASIBLE
            break
        if cx < 0 and max(np.linalg.norm(A @ x) / norms[1], np.linalg.norm(G @ x + s) / norms[2]) / -cx <= tol:
            status = DUAL_INFEASIBLE
            break
        # a flat score only means a stall while iterates head for a solution, not a certificate
        if it_count == max_iter or (since_best >= STALL_ITERS and kappa <= tau):
            break

        W, Winv, lmbda = nt_scaling(s, z, dims)
        Gs = Winv @ G
        hs = Winv @ h
        KKT[ix, iz] = Gs.T
        KKT[iz, ix] = Gs
        KKT[iz, it] = -hs
        KKT[it, iz] = hs
        KKT[it, it] = -kappa / tau
        try:
            lu = _Factor(KKT)
        except (np.linalg.LinAlgError, ValueError):
            break

        lmbda_sq = _jordan_prod(lmbda, lmbda, dims)
        Winv_rz = Winv @ rz

        def newton(ds, dk, eta):
            # scaled unknown dzs = W dz; the step on s follows from ds = W (u - dzs)
            f = 1.0 - eta
            u = _jordan_div(lmbda, ds, dims)
            rhs = np.empty(N)
            rhs[ix] = -f * rx
            rhs[iy] = -f * ry
            rhs[iz] = -f * Winv_rz - u
            rhs[it] = -f * rt - dk / tau
            sol = lu.solve(rhs)
            dzs = sol[iz]
            dt = sol[it]
            return sol[ix], sol[iy], dzs, dt, u - dzs, (dk - kappa * dt) / tau

        def step_length(dz, dt, ds, dk):
            a = min(max_step(s, ds, dims), max_step(z, dz, dims))
            if dt < 0:
                a = min(a, -tau / dt)
            if dk < 0:
                a = min(a, -kappa / dk)
            return a

        # predictor
        dx, dy, dzs, dt, dss, dk = newton(-lmbda_sq, -tau * kappa, 0.0)
        a_aff = min(1.0, step_length(Winv @ dzs, dt, W @ dss, dk))
        sigma = (1.0 - a_aff) ** 3
        # corrector
        ds_c = -lmbda_sq - _jordan_prod(dss, dzs, dims) + sigma * mu * e
        dk_c = -tau * kappa - dt * dk + sigma * mu
        dx, dy, dzs, dt, dss, dk = newton(ds_c, dk_c, sigma)
        dz, ds = Winv @ dzs, W @ dss
        a = min(1.0, STEP_FRACTION * step_length(dz, dt, ds, dk))
        if not a > 1e-14:
            break

        x = x + a * dx
        y = y + a * dy
        z = z + a * dz
        s = s + a * ds
        tau = tau + a * dt
        kappa = kappa + a * dk

    if status == INFEASIBLE:
        scale = -(b @ y + h @ z)
        return ConeSolution(status, np.full(n, np.nan), np.full(m, np.nan), y / scale, z / scale,
                            it_count, np.nan, np.nan, np.nan, np.nan, np.nan, history)
    if status == DUAL_INFEASIBLE:
        scale = -(c @ x)
        return ConeSolution(status, x / scale, s / scale, np.full(p, np.nan), np.full(m, np.nan),
                            it_count, np.nan, np.nan, np.nan, np.nan, np.nan, history)
    if best is None:
        nan = np.full(n, np.nan)
        return ConeSolution(MAX_ITER, nan, np.full(m, np.nan), np.full(p, np.nan), np.full(m, np.nan),
                            it_count, np.nan, np.nan, np.nan, np.nan, np.nan, history)
    _, xb, sb, yb, zb, _, pcost, dcost, pres, dres, gap, relgap = best
    if status != OPTIMAL and pres <= tol and dres <= tol and (gap <= tol or relgap <= tol):
        status = OPTIMAL
    return ConeSolution(status, xb, sb, yb, zb, it_count, float(pcost), float(dcost),
                        float(pres), float(dres), float(gap), history)


class _Factor:
    """LU solve with a few steps of iterative refinement."""

    def __init__(self, M):
        self.M = M
        self.lu = scipy.linalg.lu_factor(M, check_finite=False)

    def solve(self, rhs):
        x = scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)
        scale = max(1.0, np.abs(rhs).max())
        for _ in range(REFINE_STEPS):
            r = rhs - self.M @ x
            if np.abs(r).max() <= 1e-15 * scale:
                break
            x = x + scipy.linalg.lu_solve(self.lu, r, check_finite=False)
        return x
