"""Frames, pose coordinates, wrench algebra and the Cartesian impedance relation.

Poses are 6-vectors ``[x, y, z, rx, ry, rz]`` with orientation in fixed-axis
(extrinsic XYZ) Euler angles.  Differences between poses are taken
componentwise, which is only meaningful for the small rotations of
quasi-static lifting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

WORLD = "world"
BOX = "box"
LEFT = "left"
RIGHT = "right"
FRAMES = (WORLD, BOX, LEFT, RIGHT)


def _vec3(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose6:
    p: np.ndarray
    o: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "p", _vec3(self.p))
        object.__setattr__(self, "o", _vec3(self.o))
        if not (np.all(np.isfinite(self.p)) and np.all(np.isfinite(self.o))):
            raise ValueError("pose components must be finite")

    @classmethod
    def from_vector(cls, v) -> "Pose6":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.o])

    def __add__(self, other: "Pose6") -> "Pose6":
        return Pose6.from_vector(self.vector() + other.vector())

    def __sub__(self, other: "Pose6") -> "Pose6":
        return Pose6.from_vector(self.vector() - other.vector())


@dataclass(frozen=True)
class Wrench:
    f: np.ndarray
    tau: np.ndarray
    frame: str = BOX

    def __post_init__(self):
        object.__setattr__(self, "f", _vec3(self.f))
        object.__setattr__(self, "tau", _vec3(self.tau))
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if not (np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.tau))):
            raise ValueError("wrench components must be finite")

    @classmethod
    def from_vector(cls, v, frame: str = BOX) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:], frame)

    @classmethod
    def zero(cls, frame: str = BOX) -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.f, self.tau])

    def __add__(self, other: "Wrench") -> "Wrench":
        if other.frame != self.frame:
            raise ValueError(f"frame mismatch: {self.frame} vs {other.frame}")
        return Wrench(self.f + other.f, self.tau + other.tau, self.frame)

    def __sub__(self, other: "Wrench") -> "Wrench":
        if other.frame != self.frame:
            raise ValueError(f"frame mismatch: {self.frame} vs {other.frame}")
        return Wrench(self.f - other.f, self.tau - other.tau, self.frame)

    def scaled(self, c: float) -> "Wrench":
        return Wrench(c * self.f, c * self.tau, self.frame)


class Stiffness:
    """Symmetric positive-definite 6x6 Cartesian stiffness."""

    def __init__(self, K):
        K = np.array(K, dtype=float)
        if K.shape != (6, 6):
            raise ValueError(f"stiffness must be 6x6, got {K.shape}")
        if not np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ValueError("stiffness must be symmetric")
        eig = np.linalg.eigvalsh(K)
        if eig.min() <= 0:
            raise ValueError(f"stiffness must be positive definite (min eig {eig.min():g})")
        K.setflags(write=False)
        self.K = K

    @classmethod
    def diagonal(cls, translational: float, rotational: float) -> "Stiffness":
        return cls(np.diag([translational] * 3 + [rotational] * 3))

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.K)

    def scaled(self, c: float) -> "Stiffness":
        return Stiffness(c * self.K)

    def __repr__(self):
        return f"Stiffness(diag={np.diag(self.K).tolist()})"


@dataclass(frozen=True)
class GravityVec:
    g: float = GRAVITY

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("gravity magnitude must be positive")

    @property
    def vec(self) -> np.ndarray:
        """Gravity in the box frame, along -z_local."""
        return np.array([0.0, 0.0, -self.g])

    @property
    def up(self) -> np.ndarray:
        return np.array([0.0, 0.0, 1.0])


def skew(v) -> np.ndarray:
    """Matrix ``[v]x`` with ``skew(v) @ u == cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross(a, b) -> np.ndarray:
    # written out componentwise; tests use it as an independent check on skew
    a1, a2, a3 = np.asarray(a, dtype=float).reshape(3)
    b1, b2, b3 = np.asarray(b, dtype=float).reshape(3)
    return np.array([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])


def impedance_wrench(u: Pose6, z: Pose6, K: Stiffness, frame: str = WORLD) -> Wrench:
    """Wrench ``K (u - z)`` produced by a commanded pose ``u`` at measured pose ``z``."""
    return Wrench.from_vector(K.K @ (u.vector() - z.vector()), frame)


def euler_to_matrix(o) -> np.ndarray:
    """Rotation for extrinsic XYZ angles: ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``."""
    rx, ry, rz = np.asarray(o, dtype=float).reshape(3)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    return np.array([
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ])


def euler_to_matrix_batch(o: np.ndarray) -> np.ndarray:
    """Vectorised :func:`euler_to_matrix` for ``o`` of shape ``(..., 3)``."""
    o = np.asarray(o, dtype=float)
    cx, sx = np.cos(o[..., 0]), np.sin(o[..., 0])
    cy, sy = np.cos(o[..., 1]), np.sin(o[..., 1])
    cz, sz = np.cos(o[..., 2]), np.sin(o[..., 2])
    R = np.empty(o.shape[:-1] + (3, 3))
    R[..., 0, 0] = cz * cy
    R[..., 0, 1] = cz * sy * sx - sz * cx
    R[..., 0, 2] = cz * sy * cx + sz * sx
    R[..., 1, 0] = sz * cy
    R[..., 1, 1] = sz * sy * sx + cz * cx
    R[..., 1, 2] = sz * sy * cx - cz * sx
    R[..., 2, 0] = -sy
    R[..., 2, 1] = cy * sx
    R[..., 2, 2] = cy * cx
    return R


def check_rotation(R, atol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=atol) or abs(np.linalg.det(R) - 1.0) > atol:
        raise ValueError("rotation must be orthonormal with det +1")
    return R


def wrench_to_frame(w: Wrench, rotation, target: str) -> Wrench:
    """Rotate both force and moment of ``w`` by ``rotation`` and retag it."""
    R = check_rotation(rotation)
    return Wrench(R @ w.f, R @ w.tau, target)
