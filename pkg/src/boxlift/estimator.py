"""Lift initiation, lift-off detection and least-squares mass / CoM estimation.

All measurement quantities are expressed in the box frame {B}, where the
contact positions and the CoM are constant.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import BOX, GravityVec, Pose6, Wrench, cross, skew

PINV_RCOND = 1e-10
CSV_COLUMNS = [
    "fLx", "fLy", "fLz", "tauLx", "tauLy", "tauLz",
    "fRx", "fRy", "fRz", "tauRx", "tauRy", "tauRz",
]


@dataclass(frozen=True)
class LiftRampState:
    u0_L: Pose6
    u0_R: Pose6
    lift_dir_L: np.ndarray
    lift_dir_R: np.ndarray
    delta_alpha: float = 5e-4
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("lift_dir_L", "lift_dir_R"):
            d = np.array(getattr(self, name), dtype=float).reshape(6)
            if np.any(d[3:] != 0):
                raise ValueError("lift directions must have zero orientation components")
            if abs(np.linalg.norm(d) - 1.0) > 1e-10:
                raise ValueError("lift directions must be unit vectors")
            object.__setattr__(self, name, d)
        if not self.delta_alpha > 0:
            raise ValueError("lift increment must be positive")
        if self.alpha < 0:
            raise ValueError("lift magnitude starts at zero and only increases")

    def commands(self) -> tuple[Pose6, Pose6]:
        return (
            Pose6.from_vector(self.u0_L.vector() + self.alpha * self.lift_dir_L),
            Pose6.from_vector(self.u0_R.vector() + self.alpha * self.lift_dir_R),
        )


def ramp_step(s: LiftRampState) -> tuple[LiftRampState, Pose6, Pose6]:
    """Advance the lift magnitude by one increment and return the new commands."""
    nxt = replace(s, alpha=s.alpha + s.delta_alpha)
    u_L, u_R = nxt.commands()
    return nxt, u_L, u_R


def handle_heights(p_L, p_R, p_L0, p_R0, z_hat) -> tuple[float, float]:
    z = np.asarray(z_hat, dtype=float)
    dh_L = float((np.asarray(p_L, float) - np.asarray(p_L0, float)) @ z)
    dh_R = float((np.asarray(p_R, float) - np.asarray(p_R0, float)) @ z)
    return dh_L, dh_R


def detect_liftoff(p_L, p_R, p_L0, p_R0, z_hat, h_lift: float) -> bool:
    if not h_lift > 0:
        raise ValueError("lift-off threshold must be positive")
    return min(handle_heights(p_L, p_R, p_L0, p_R0, z_hat)) >= h_lift


@dataclass
class MeasurementBatch:
    """``M`` post-lift-off samples of both handle wrenches, in {B}."""

    wrenches_L: np.ndarray  # (M, 6)
    wrenches_R: np.ndarray  # (M, 6)
    r_L: np.ndarray
    r_R: np.ndarray
    gravity: GravityVec = field(default_factory=GravityVec)

    def __post_init__(self):
        self.wrenches_L = np.atleast_2d(np.asarray(self.wrenches_L, dtype=float))
        self.wrenches_R = np.atleast_2d(np.asarray(self.wrenches_R, dtype=float))
        self.r_L = np.asarray(self.r_L, dtype=float).reshape(3)
        self.r_R = np.asarray(self.r_R, dtype=float).reshape(3)
        if self.wrenches_L.shape != self.wrenches_R.shape or self.wrenches_L.shape[1:] != (6,):
            raise ValueError("wrench arrays must both have shape (M, 6)")

    @classmethod
    def from_wrenches(cls, samples, r_L, r_R, gravity: GravityVec | None = None):
        """Build from a sequence of ``(Wrench, Wrench)`` pairs tagged {B}."""
        samples = list(samples)
        for wl, wr in samples:
            if wl.frame != BOX or wr.frame != BOX:
                raise ValueError("measurements must be expressed in the box frame")
        wl = np.array([w.vector() for w, _ in samples]).reshape(-1, 6)
        wr = np.array([w.vector() for _, w in samples]).reshape(-1, 6)
        return cls(wl, wr, r_L, r_R, gravity or GravityVec())

    def __len__(self):
        return self.wrenches_L.shape[0]

    def sample(self, j: int) -> tuple[Wrench, Wrench]:
        return Wrench.from_vector(self.wrenches_L[j]), Wrench.from_vector(self.wrenches_R[j])

    def scaled(self, c: float) -> "MeasurementBatch":
        return MeasurementBatch(c * self.wrenches_L, c * self.wrenches_R, self.r_L, self.r_R, self.gravity)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for a, b in zip(self.wrenches_L, self.wrenches_R):
                wr.writerow([repr(float(v)) for v in np.concatenate([a, b])])

    @classmethod
    def from_csv(cls, path, r_L, r_R, gravity: GravityVec | None = None) -> "MeasurementBatch":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != CSV_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(CSV_COLUMNS)}")
        data = np.array([[float(v) for v in row] for row in rows[1:]]).reshape(-1, 12)
        return cls(data[:, :6], data[:, 6:], r_L, r_R, gravity or GravityVec())


@dataclass(frozen=True)
class InertialEstimate:
    m_hat: float
    r_com_hat: np.ndarray
    observable_mask: tuple[bool, bool, bool] = (True, True, False)
    mass_residual: float = 0.0
    com_residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r_com_hat", np.asarray(self.r_com_hat, dtype=float).reshape(3))


def mass_regression(batch: MeasurementBatch) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(y_F, Phi_F)`` of the force balance ``F_j = -g m``."""
    F = batch.wrenches_L[:, :3] + batch.wrenches_R[:, :3]
    y = F.reshape(-1)
    Phi = np.tile(-batch.gravity.vec, len(batch)).reshape(-1, 1)
    return y, Phi


def estimate_mass(batch: MeasurementBatch) -> float:
    if len(batch) == 0:
        raise ValueError("need at least one post-lift-off measurement")
    y, Phi = mass_regression(batch)
    return float((np.linalg.pinv(Phi, rcond=PINV_RCOND) @ y)[0])


def resultant_moments(batch: MeasurementBatch) -> np.ndarray:
    """Per-sample moment about the box centre, ``sum_i r_i x f_i + tau_i``."""
    fL, tL = batch.wrenches_L[:, :3], batch.wrenches_L[:, 3:]
    fR, tR = batch.wrenches_R[:, :3], batch.wrenches_R[:, 3:]
    return np.cross(batch.r_L, fL) + tL + np.cross(batch.r_R, fR) + tR


def com_regression(batch: MeasurementBatch, m_hat: float) -> tuple[np.ndarray, np.ndarray]:
    y = resultant_moments(batch).reshape(-1)
    Phi = np.tile(skew(m_hat * batch.gravity.vec), (len(batch), 1))
    return y, Phi


def estimate_com(batch: MeasurementBatch, m_hat: float) -> tuple[np.ndarray, tuple[bool, bool, bool]]:
    """Minimum-norm least-squares CoM and a per-axis observability mask.

    ``[m g]x`` has rank two, so the component along gravity is unobservable;
    the pseudoinverse returns zero there.
    """
    if not m_hat > 0:
        raise ValueError("mass estimate must be positive")
    if len(batch) == 0:
        raise ValueError("need at least one post-lift-off measurement")
    y, Phi = com_regression(batch, m_hat)
    U, sv, Vt = np.linalg.svd(Phi, full_matrices=False)
    keep = sv > PINV_RCOND * sv.max()
    r = Vt[keep].T @ ((U[:, keep].T @ y) / sv[keep])
    # an axis is observable when it has no component in the regressor nullspace
    null = Vt[~keep]
    mask = tuple(bool(np.all(np.abs(null[:, k]) < 1e-8)) for k in range(3))
    if null.shape[0] == 1:
        k = int(np.argmax(np.abs(null[0])))
        if abs(null[0, k]) > 1 - 1e-12:
            r[k] = 0.0  # clean roundoff; the min-norm solution is already zero here
    return r, mask


def estimate(batch: MeasurementBatch) -> InertialEstimate:
    m_hat = estimate_mass(batch)
    if not m_hat > 0:
        raise ValueError(f"non-positive mass estimate {m_hat:g}; measurements do not support the load")
    r, mask = estimate_com(batch, m_hat)
    yF, PhiF = mass_regression(batch)
    yr, Phir = com_regression(batch, m_hat)
    return InertialEstimate(
        m_hat,
        r,
        mask,
        mass_residual=float(np.linalg.norm(yF - PhiF[:, 0] * m_hat)),
        com_residual=float(np.linalg.norm(yr - Phir @ r)),
    )


def infer_added_mass_location(est: InertialEstimate, base_mass: float, added_mass: float,
                              base_com=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Lever rule: position of the added mass that yields the estimated combined CoM."""
    if not added_mass > 0:
        raise ValueError("added mass must be positive")
    total = base_mass + added_mass
    return (total * est.r_com_hat - base_mass * np.asarray(base_com, dtype=float)) / added_mass


def combined_com(base_mass: float, added_mass: float, added_position, base_com=(0.0, 0.0, 0.0)) -> np.ndarray:
    return (base_mass * np.asarray(base_com, float) + added_mass * np.asarray(added_position, float)) / (
        base_mass + added_mass
    )


def synthetic_batch(m: float, r_com, r_L, r_R, M: int = 50, gravity: GravityVec | None = None,
                    squeeze: float = 30.0, n_L=(-1.0, 0.0, 0.0), seed: int | None = None,
                    sigma_f: float = 0.0, sigma_tau: float = 0.0) -> MeasurementBatch:
    """Equilibrium measurements for a free-hanging box of known mass and CoM.

    The load is split between the handles by the minimum-norm grasp-map
    solution plus a pure squeeze along the contact line, so the data obey
    force and moment balance exactly before noise is added.
    """
    gravity = gravity or GravityVec()
    r_L = np.asarray(r_L, float)
    r_R = np.asarray(r_R, float)
    gvec = m * gravity.vec
    b = -np.concatenate([gvec, cross(r_com, gvec)])
    G = np.zeros((6, 12))
    G[:3, 0:3] = np.eye(3)
    G[:3, 6:9] = np.eye(3)
    G[3:, 0:3] = skew(r_L)
    G[3:, 3:6] = np.eye(3)
    G[3:, 6:9] = skew(r_R)
    G[3:, 9:12] = np.eye(3)
    x = np.linalg.lstsq(G, b, rcond=None)[0]
    n = np.asarray(n_L, float)
    x[0:3] += -squeeze * n
    x[6:9] += squeeze * n
    wl = np.tile(x[:6], (M, 1))
    wr = np.tile(x[6:], (M, 1))
    if sigma_f > 0 or sigma_tau > 0:
        rng = np.random.default_rng(seed)
        sig = np.array([sigma_f] * 3 + [sigma_tau] * 3)
        wl = wl + rng.standard_normal(wl.shape) * sig
        wr = wr + rng.standard_normal(wr.shape) * sig
    return MeasurementBatch(wl, wr, r_L, r_R, gravity)
