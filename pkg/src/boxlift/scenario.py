"""Scenario files: INI sections of typed keys, validated on load."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import GravityVec, Stiffness
from .dmp_refine import DIMS, ExplorationState, RefTrajectory, min_jerk
from .friction import ContactPatch, FrictionParams, effective_radius
from .simplant import AxisBox, BoxModel, EnvironmentModel, PlantConfig
from .wrench_opt import GraspGeometry, WrenchWeight


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


def _fmt_float(v) -> str:
    return repr(float(v))


def _fmt_vec(v) -> str:
    return ", ".join(repr(float(x)) for x in v)


def _parse_vec(s: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma separated numbers, got {len(vals)}")
    return vals


def _parse_shelves(s: str) -> tuple[tuple[float, ...], ...]:
    out = []
    for chunk in s.split(";"):
        if chunk.strip():
            out.append(_parse_vec(chunk, 6))
    return tuple(out)


def _fmt_shelves(v) -> str:
    return "; ".join(_fmt_vec(s) for s in v)


def _parse_dims(s: str) -> tuple[int, ...]:
    names = [x.strip() for x in s.split(",") if x.strip()]
    try:
        return tuple(DIMS.index(n) for n in names)
    except ValueError:
        raise ValueError(f"active dimensions must be drawn from {', '.join(DIMS)}") from None


def _fmt_dims(v) -> str:
    return ", ".join(DIMS[i] for i in v)


def _parse_bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_axes(s: str) -> tuple[bool, ...]:
    names = {x.strip() for x in s.split(",") if x.strip()}
    allowed = ("normal", "tangent1", "tangent2", "torsion", "rot1", "rot2")
    bad = names - set(allowed)
    if bad:
        raise ValueError(f"unknown PID axes: {', '.join(sorted(bad))}")
    return tuple(a in names for a in allowed)


def _fmt_axes(v) -> str:
    allowed = ("normal", "tangent1", "tangent2", "torsion", "rot1", "rot2")
    return ", ".join(a for a, on in zip(allowed, v) if on)


_FLOAT = (float, _fmt_float)
_INT = (int, str)
_STR = (str, str)
_BOOL = (_parse_bool, lambda v: "yes" if v else "no")
_VEC3 = (lambda s: _parse_vec(s, 3), _fmt_vec)

# section -> key -> (attribute, parse, format, default)
SCHEMA = {
    "box": {
        "half_extents": ("half_extents", *_VEC3, (0.15, 0.10, 0.10)),
        "base_mass": ("base_mass", *_FLOAT, 1.7),
        "added_mass": ("added_mass", *_FLOAT, 0.5),
        "added_mass_position": ("added_mass_position", *_VEC3, (0.0, 0.0, 0.0)),
    },
    "environment": {
        "ground_height": ("ground_height", *_FLOAT, 0.0),
        "k_env": ("k_env", *_FLOAT, 1e5),
        "shelves": ("shelves", _parse_shelves, _fmt_shelves, ()),
    },
    "grasp": {
        "r_L": ("r_L", *_VEC3, (-0.15, 0.0, 0.0)),
        "r_R": ("r_R", *_VEC3, (0.15, 0.0, 0.0)),
        "n_L": ("n_L", *_VEC3, (-1.0, 0.0, 0.0)),
        "n_R": ("n_R", *_VEC3, (1.0, 0.0, 0.0)),
        "patch_a": ("patch_a", *_FLOAT, 0.07),
        "patch_b": ("patch_b", *_FLOAT, 0.10),
    },
    "friction": {
        "mu": ("mu", *_FLOAT, 0.4),
        "r_s": ("r_s", *_FLOAT, 0.1),
        "l_c": ("l_c", *_FLOAT, 0.0),
    },
    "stiffness": {
        "translational": ("k_trans", *_FLOAT, 1000.0),
        "rotational": ("k_rot", *_FLOAT, 10.0),
        "plant_scale": ("plant_scale", *_FLOAT, 1.0),
        "gravity": ("gravity", *_FLOAT, 9.81),
    },
    "trajectory": {
        "path": ("trajectory_path", *_STR, ""),
        "start": ("traj_start", *_VEC3, (0.0, 0.0, 0.13)),
        "goal": ("traj_goal", *_VEC3, (0.0, -0.6, 0.33)),
        "samples": ("traj_samples", *_INT, 61),
        "dt": ("dt", *_FLOAT, 0.1),
    },
    "phase1": {
        "R": ("R", *_INT, 50),
        "K_e": ("K_e", *_INT, 5),
        "c": ("c", *_FLOAT, 1000.0),
        "alpha": ("alpha", *_FLOAT, 0.2),
        "eps_conv": ("eps_conv", *_FLOAT, 1e-2),
        "N": ("N", *_INT, 20),
        "active_dims": ("active_dims", _parse_dims, _fmt_dims, (1, 2)),
        "max_iter": ("max_iter", *_INT, 500),
    },
    "phase2": {
        "M": ("M", *_INT, 50),
        "h_lift": ("h_lift", *_FLOAT, 0.005),
        "delta_alpha": ("delta_alpha", *_FLOAT, 0.0005),
        "squeeze": ("squeeze", *_FLOAT, 40.0),
        "max_ramp_steps": ("max_ramp_steps", *_INT, 400),
    },
    "phase3": {
        "tol": ("tol", *_FLOAT, 1e-8),
        "naive_escalation": ("naive_escalation", *_FLOAT, 1.5),
    },
    "noise": {
        "sigma_f": ("sigma_f", *_FLOAT, 0.05),
        "sigma_tau": ("sigma_tau", *_FLOAT, 0.005),
    },
    "execution": {
        "kp": ("kp", *_FLOAT, 2e-4),
        "ki": ("ki", *_FLOAT, 5e-4),
        "kd": ("kd", *_FLOAT, 0.0),
        "du_max": ("du_max", *_FLOAT, 0.005),
        "pid_axes": ("pid_axes", _parse_axes, _fmt_axes, (True, False, False, False, False, False)),
        "pid": ("pid_enabled", *_BOOL, True),
        "approach_steps": ("approach_steps", *_INT, 10),
    },
    "run": {
        "seed": ("seed", *_INT, 0),
    },
}


def _defaults() -> dict:
    return {attr: d for sec in SCHEMA.values() for attr, _, _, d in sec.values()}


@dataclass
class ScenarioConfig:
    """Flat bag of scenario values; ``values`` is keyed by attribute name."""

    values: dict = field(default_factory=_defaults)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    def __getattr__(self, name):
        vals = self.__dict__.get("values")
        if vals is not None and name in vals:
            return vals[name]
        raise AttributeError(name)

    def replace(self, **kw) -> "ScenarioConfig":
        unknown = set(kw) - set(self.values)
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {', '.join(sorted(unknown))}")
        out = ScenarioConfig(dict(self.values, **kw), self.base_dir)
        out.validate()
        return out

    # -- text form -------------------------------------------------------

    @classmethod
    def from_string(cls, text: str, base_dir=None) -> "ScenarioConfig":
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        cp.optionxform = str  # keys are case sensitive (K_e, r_L)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ScenarioError(str(exc)) from None
        vals = _defaults()
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ScenarioError(f"unknown section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in SCHEMA[sec]:
                    raise ScenarioError(f"unknown key {key!r} in [{sec}]")
                attr, parse, _, _ = SCHEMA[sec][key]
                try:
                    vals[attr] = parse(raw)
                except ValueError as exc:
                    raise ScenarioError(f"[{sec}] {key}: {exc}") from None
        out = cls(vals, Path(base_dir) if base_dir is not None else Path.cwd())
        out.validate()
        return out

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from None
        return cls.from_string(text, path.parent)

    def to_string(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, (attr, _, fmt, _) in keys.items():
                lines.append(f"{key} = {fmt(self.values[attr])}".rstrip())
            lines.append("")
        return "\n".join(lines)

    def save(self, path):
        Path(path).write_text(self.to_string())

    # -- validation ------------------------------------------------------

    def validate(self):
        """Build every derived object once so their own checks run."""
        try:
            self.plant_config()
            self.grasp_geometry()
            self.exploration()
            self.weight()
            if self.traj_samples < 2 or not self.dt > 0:
                raise ValueError("trajectory needs at least two samples and dt > 0")
            if self.M < 1 or self.max_ramp_steps < 1 or self.approach_steps < 0:
                raise ValueError("sample, ramp and approach counts must be positive")
            if not self.h_lift > 0 or not self.delta_alpha > 0 or not self.squeeze > 0:
                raise ValueError("lift threshold, ramp increment and squeeze must be positive")
            if self.sigma_f < 0 or self.sigma_tau < 0:
                raise ValueError("noise levels must be non-negative")
            if not self.tol > 0 or not self.naive_escalation > 1:
                raise ValueError("need tol > 0 and naive escalation factor > 1")
            if min(self.kp, self.ki, self.kd, self.du_max) < 0:
                raise ValueError("PID gains and bound must be non-negative")
            if self.l_c < 0:
                raise ValueError("l_c must be non-negative (0 selects the effective radius)")
            if not 1 <= self.max_iter:
                raise ValueError("max_iter must be positive")
            if self.seed < 0:
                raise ValueError("seed must be non-negative")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from None

    # -- derived objects -------------------------------------------------

    def box_model(self) -> BoxModel:
        return BoxModel(self.half_extents, self.base_mass, self.added_mass, self.added_mass_position)

    def environment(self) -> EnvironmentModel:
        shelves = tuple(AxisBox(s[:3], s[3:]) for s in self.shelves)
        return EnvironmentModel(self.ground_height, shelves, self.k_env)

    def gravity_vec(self) -> GravityVec:
        return GravityVec(self.gravity)

    def stiffness(self) -> Stiffness:
        return Stiffness.diagonal(self.k_trans, self.k_rot)

    def plant_config(self) -> PlantConfig:
        """Plant with the (possibly mismatched) true stiffness."""
        return PlantConfig(self.box_model(), self.environment(), self.stiffness().scaled(self.plant_scale),
                           self.r_L, self.r_R, self.gravity_vec())

    def nominal_plant(self) -> PlantConfig:
        return PlantConfig(self.box_model(), self.environment(), self.stiffness(), self.r_L, self.r_R,
                           self.gravity_vec())

    def R_eff(self) -> float:
        return effective_radius(ContactPatch(self.patch_a, self.patch_b))

    def friction(self, r_s: float | None = None) -> FrictionParams:
        return FrictionParams(self.mu, self.r_s if r_s is None else r_s, self.R_eff())

    def grasp_geometry(self) -> GraspGeometry:
        fp = self.friction()
        return GraspGeometry(self.r_L, self.r_R, self.n_L, self.n_R, fp, fp)

    def weight(self) -> WrenchWeight:
        return WrenchWeight(self.l_c if self.l_c > 0 else self.R_eff())

    def exploration(self) -> ExplorationState:
        return ExplorationState.initial(len(self.active_dims), self.N, self.c, R=self.R, K_e=self.K_e,
                                        eps_conv=self.eps_conv, alpha_cost=self.alpha)

    def reference(self) -> RefTrajectory:
        """Reference from the CSV path if given, else a min-jerk path from start to goal."""
        if self.trajectory_path:
            p = Path(self.trajectory_path)
            if not p.is_absolute():
                p = self.base_dir / p
            return RefTrajectory.from_csv(p)
        s = min_jerk(np.linspace(0.0, 1.0, self.traj_samples))
        z = np.zeros((self.traj_samples, 6))
        a, b = np.array(self.traj_start), np.array(self.traj_goal)
        z[:, :3] = a + np.outer(s, b - a)
        return RefTrajectory(z, self.dt)
