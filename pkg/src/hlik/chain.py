"""Serial kinematic chain: file loading, forward kinematics, geometric Jacobian.

Chain file format (line-oriented, `#` comments):

    chain <name> dof <d>
    joint <name> axis x y z origin tx ty tz qw qx qy qz limits lo hi
    frame <shoulder|elbow|wrist|ee> after <joint-name|base> offset tx ty tz qw qx qy qz

Joint lines appear in order from base to tip; all joints are revolute.
Lengths are meters, angles radians.  `after base` attaches a frame rigidly to
the base link (before any joint).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .liegroup import Pose, UnitQuaternion

REQUIRED_FRAMES = ("shoulder", "elbow", "wrist", "ee")

_UNIT_TOL = 1e-6


class ParseError(ValueError):
    """Malformed chain file; message carries the line number."""


class ValidationError(ValueError):
    """Structurally valid file describing an invalid chain."""


class UnknownFrame(KeyError):
    """Requested frame name is not defined on the chain."""


@dataclass(frozen=True)
class JointSpec:
    name: str
    axis: np.ndarray          # unit 3-vector, in the joint's parent frame
    origin: Pose              # fixed transform from parent link frame
    limits: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))


@dataclass(frozen=True)
class FrameSpec:
    joint_index: int          # -1 attaches to the base link
    offset: Pose


@dataclass(frozen=True)
class KinematicChain:
    name: str
    joints: tuple[JointSpec, ...]
    frames: dict[str, FrameSpec]

    @property
    def dof(self) -> int:
        return len(self.joints)

    def limits_lo(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def limits_hi(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def zero_config(self) -> np.ndarray:
        """All-zero configuration clamped into the limit box."""
        return np.clip(np.zeros(self.dof), self.limits_lo(), self.limits_hi())

    def clamp(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Clamp q into the limit box; returns (q_clamped, per-joint active flags)."""
        q = np.asarray(q, dtype=float)
        lo, hi = self.limits_lo(), self.limits_hi()
        clamped = np.clip(q, lo, hi)
        return clamped, clamped != q


def _parse_floats(tokens: list[str], n: int, lineno: int, what: str) -> list[float]:
    if len(tokens) < n:
        raise ParseError(f"line {lineno}: expected {n} numbers for {what}, got {len(tokens)}")
    try:
        return [float(t) for t in tokens[:n]]
    except ValueError as e:
        raise ParseError(f"line {lineno}: bad number in {what}: {e}") from None


def _unit_or_error(v: np.ndarray, lineno: int, what: str) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > _UNIT_TOL:
        raise ValidationError(f"line {lineno}: {what} must be unit length, norm={n!r}")
    return v / n


def _pose_from_tokens(vals: list[float], lineno: int, what: str) -> Pose:
    tx, ty, tz, qw, qx, qy, qz = vals
    qn = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    if abs(qn - 1.0) > _UNIT_TOL:
        raise ValidationError(f"line {lineno}: {what} quaternion must be unit length, norm={qn!r}")
    return Pose(UnitQuaternion(qw, qx, qy, qz), np.array([tx, ty, tz]))


def parse_chain(text: str, source: str = "<string>") -> KinematicChain:
    name = None
    declared_dof = None
    joints: list[JointSpec] = []
    joint_index: dict[str, int] = {}
    frames: dict[str, FrameSpec] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]

        if kind == "chain":
            if name is not None:
                raise ParseError(f"line {lineno}: duplicate chain header")
            if len(tokens) != 4 or tokens[2] != "dof":
                raise ParseError(f"line {lineno}: expected 'chain <name> dof <d>'")
            name = tokens[1]
            try:
                declared_dof = int(tokens[3])
            except ValueError:
                raise ParseError(f"line {lineno}: dof must be an integer") from None

        elif kind == "joint":
            if name is None:
                raise ParseError(f"line {lineno}: joint before chain header")
            if len(tokens) != 17 or tokens[2] != "axis" or tokens[6] != "origin" or tokens[14] != "limits":
                raise ParseError(
                    f"line {lineno}: expected 'joint <name> axis x y z origin"
                    f" tx ty tz qw qx qy qz limits lo hi'"
                )
            jname = tokens[1]
            if jname in joint_index or jname == "base":
                raise ValidationError(f"line {lineno}: duplicate or reserved joint name {jname!r}")
            axis = np.array(_parse_floats(tokens[3:6], 3, lineno, "axis"))
            axis = _unit_or_error(axis, lineno, "joint axis")
            origin = _pose_from_tokens(_parse_floats(tokens[7:14], 7, lineno, "origin"), lineno, "origin")
            lo, hi = _parse_floats(tokens[15:17], 2, lineno, "limits")
            if lo > hi:
                raise ValidationError(f"line {lineno}: joint {jname!r} limits lo > hi")
            joint_index[jname] = len(joints)
            joints.append(JointSpec(jname, axis, origin, (lo, hi)))

        elif kind == "frame":
            if len(tokens) != 12 or tokens[2] != "after" or tokens[4] != "offset":
                raise ParseError(
                    f"line {lineno}: expected 'frame <name> after <joint> offset tx ty tz qw qx qy qz'"
                )
            fname = tokens[1]
            if fname not in REQUIRED_FRAMES:
                raise ValidationError(f"line {lineno}: unknown frame name {fname!r}")
            if fname in frames:
                raise ValidationError(f"line {lineno}: duplicate frame {fname!r}")
            after = tokens[3]
            if after == "base":
                idx = -1
            elif after in joint_index:
                idx = joint_index[after]
            else:
                raise ValidationError(f"line {lineno}: frame {fname!r} attached after unknown joint {after!r}")
            offset = _pose_from_tokens(_parse_floats(tokens[5:12], 7, lineno, "offset"), lineno, "offset")
            frames[fname] = FrameSpec(idx, offset)

        else:
            raise ParseError(f"line {lineno}: unknown directive {kind!r}")

    if name is None:
        raise ParseError(f"{source}: no chain header found")
    if declared_dof != len(joints):
        raise ValidationError(f"{source}: header dof {declared_dof} != {len(joints)} joint lines")
    missing = [f for f in REQUIRED_FRAMES if f not in frames]
    if missing:
        raise ValidationError(f"{source}: missing frames {missing}")
    if frames["elbow"].joint_index >= frames["ee"].joint_index:
        raise ValidationError(f"{source}: elbow frame must precede the ee frame in the chain")
    return KinematicChain(name, tuple(joints), frames)


def load_chain(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_chain(fh.read(), source=str(path))


class JointSweep:
    """One forward pass over the chain: cumulative transforms plus the joint
    axes and origin points needed for geometric Jacobian columns.

    Solver inner loops reuse a single sweep for several frames.
    """

    __slots__ = ("chain", "poses", "axes", "origins")

    def __init__(self, chain: KinematicChain, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if q.shape != (chain.dof,):
            raise ValueError(f"q has shape {q.shape}, chain dof is {chain.dof}")
        self.chain = chain
        self.poses = []    # pose after joint i's rotation, in base frame
        self.axes = []     # joint i rotation axis, in base frame
        self.origins = []  # joint i origin point, in base frame
        cur = Pose.identity()
        for spec, qi in zip(chain.joints, q):
            pre_rot = cur.rotation.multiply(spec.origin.rotation)
            origin_pt = cur.apply(spec.origin.translation)
            self.axes.append(pre_rot.rotate(spec.axis))
            self.origins.append(origin_pt)
            rot = UnitQuaternion.from_axis_angle(spec.axis, float(qi))
            cur = Pose(pre_rot.multiply(rot), origin_pt)
            self.poses.append(cur)

    def frame_pose(self, frame: str) -> Pose:
        spec = self._frame(frame)
        base = Pose.identity() if spec.joint_index < 0 else self.poses[spec.joint_index]
        return Pose(
            base.rotation.multiply(spec.offset.rotation),
            base.apply(spec.offset.translation),
        )

    def frame_jacobian(self, frame: str) -> np.ndarray:
        """Geometric Jacobian: translation rows then rotation rows, base frame."""
        spec = self._frame(frame)
        p = self.frame_pose(frame).translation
        J = np.zeros((6, self.chain.dof))
        for i in range(spec.joint_index + 1):
            a = self.axes[i]
            J[:3, i] = np.cross(a, p - self.origins[i])
            J[3:, i] = a
        return J

    def _frame(self, frame: str) -> FrameSpec:
        try:
            return self.chain.frames[frame]
        except KeyError:
            raise UnknownFrame(frame) from None


def fk(chain: KinematicChain, q: np.ndarray, frame: str) -> Pose:
    """Pose of the named frame in the chain base frame."""
    return JointSweep(chain, q).frame_pose(frame)


def jacobian(chain: KinematicChain, q: np.ndarray, frame: str) -> np.ndarray:
    """6 x dof geometric Jacobian of the named frame."""
    return JointSweep(chain, q).frame_jacobian(frame)
