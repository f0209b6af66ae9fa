"""Ellipsoidal friction limit surface, torsional friction and safety-margin contraction.

Sign convention: the signed normal force ``f_n = n . f`` is negative in
compression, where ``n`` is the outward surface normal of the object.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Wrench

UNIT_NORMAL_TOL = 1e-10


@dataclass(frozen=True)
class ContactPatch:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"patch sides must be positive, got {self.a}, {self.b}")


@dataclass(frozen=True)
class FrictionParams:
    mu: float
    r_s: float
    R_eff: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        if not 0 <= self.r_s < 1:
            raise ValueError("safety margin must lie in [0, 1)")
        if not self.R_eff > 0:
            raise ValueError("effective radius must be positive")

    def with_margin(self, r_s: float) -> "FrictionParams":
        return FrictionParams(self.mu, r_s, self.R_eff)


@dataclass(frozen=True)
class ContactDecomposition:
    f_n: float
    f_t: np.ndarray
    tau_n: float
    tau_t: np.ndarray


def _unit_normal(n_hat) -> np.ndarray:
    n = np.asarray(n_hat, dtype=float).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_NORMAL_TOL:
        raise ValueError(f"contact normal must be unit length, |n| = {np.linalg.norm(n)!r}")
    return n


def tangent_basis(n_hat) -> np.ndarray:
    """Two orthonormal tangent vectors (rows) completing ``n_hat`` to a right-handed frame."""
    n = _unit_normal(n_hat)
    seed = np.eye(3)[np.argmin(np.abs(n))]
    t1 = seed - (seed @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.vstack([t1, t2])


def decompose(w: Wrench, n_hat) -> ContactDecomposition:
    n = _unit_normal(n_hat)
    P = np.eye(3) - np.outer(n, n)
    return ContactDecomposition(
        f_n=float(n @ w.f), f_t=P @ w.f, tau_n=float(n @ w.tau), tau_t=P @ w.tau
    )


def effective_radius(patch: ContactPatch) -> float:
    """Mean distance from the centre of a uniformly loaded ``a x b`` rectangle."""
    a, b = patch.a, patch.b
    return (
        np.hypot(a, b) / 6.0
        + a * a / (12.0 * b) * np.arcsinh(b / a)
        + b * b / (12.0 * a) * np.arcsinh(a / b)
    )


def _check_compression(f_n: float):
    if f_n > 0:
        raise ValueError(f"contact in tension (f_n = {f_n:g} > 0) has no friction budget")


def tangential_limit(f_n: float, fp: FrictionParams) -> float:
    _check_compression(f_n)
    return fp.mu * (-f_n)


def torsional_limit(f_n: float, fp: FrictionParams) -> float:
    _check_compression(f_n)
    return fp.mu * (-f_n) * fp.R_eff


def limit_surface_residual(d: ContactDecomposition, fp: FrictionParams) -> float:
    """``(|f_t|/f_t_max)^2 + (tau_n/tau_n_max)^2 - (1 - r_s)^2``; feasible when <= 0.

    At zero normal load the residual is ``+inf`` unless the contact is also
    unloaded tangentially and torsionally.
    """
    _check_compression(d.f_n)
    ft = float(np.linalg.norm(d.f_t))
    bound = (1.0 - fp.r_s) ** 2
    if d.f_n == 0:
        return -bound if (ft == 0 and d.tau_n == 0) else np.inf
    ft_max = tangential_limit(d.f_n, fp)
    tn_max = torsional_limit(d.f_n, fp)
    return (ft / ft_max) ** 2 + (d.tau_n / tn_max) ** 2 - bound


def limit_surface_residual_batch(f_n, ft_norm, tau_n, fp: FrictionParams) -> np.ndarray:
    """Array version of :func:`limit_surface_residual`; tension entries give ``+inf``."""
    f_n = np.asarray(f_n, dtype=float)
    ft_norm = np.asarray(ft_norm, dtype=float)
    tau_n = np.asarray(tau_n, dtype=float)
    bound = (1.0 - fp.r_s) ** 2
    load = -f_n
    out = np.full(np.broadcast(f_n, ft_norm, tau_n).shape, np.inf)
    pos = load > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (ft_norm / (fp.mu * load)) ** 2 + (tau_n / (fp.mu * load * fp.R_eff)) ** 2 - bound
    out[pos] = np.broadcast_to(val, out.shape)[pos]
    apex = (load == 0) & (ft_norm == 0) & (tau_n == 0)
    out[apex] = -bound
    return out


def soc_feasible(d: ContactDecomposition, fp: FrictionParams) -> bool:
    """Second-order cone form of the contracted limit surface used by the optimizer."""
    _check_compression(d.f_n)
    lhs = np.linalg.norm(np.append(d.f_t, d.tau_n / fp.R_eff))
    return bool(lhs <= (1.0 - fp.r_s) * fp.mu * (-d.f_n))


def contract_friction_cone(f_t_norm: float, f_n: float, fp: FrictionParams) -> bool:
    """Coulomb cone shrunk by the safety margin: ``|f_t| <= (1 - r_s) mu (-f_n)``."""
    _check_compression(f_n)
    return bool(f_t_norm <= (1.0 - fp.r_s) * fp.mu * (-f_n))
