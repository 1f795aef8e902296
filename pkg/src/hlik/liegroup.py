"""Quaternion / SE(3) algebra used by every residual in the solver.

Conventions:
    - Unit quaternions are stored (w, x, y, z) with w >= 0 (hemisphere-fixed).
    - A Pose maps coordinates from its child frame to its parent frame:
      p_parent = R * p_child + t.
    - Twists are ordered (translation, rotation): the first three components
      are meters, the last three radians.  This matches the weight-matrix
      block order used by the solver (translational block first).

Quaternion arithmetic is scalar Python math on purpose: these ops sit inside
the forward-kinematics and solver inner loops, where small-ndarray overhead
dominates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle, log/exp switch to second-order Taylor expansions
# of the V / V^-1 coefficients to avoid 0/0 ratios.
SMALL_ANGLE = 1e-5

# log_se3 refuses rotations this close to pi; the branch is ambiguous there.
ANGLE_NEAR_PI_MARGIN = 1e-6


class AngleNearPi(ValueError):
    """Rotation angle within the ambiguity margin of pi; caller picks a branch."""


def _normalized(w: float, x: float, y: float, z: float) -> tuple[float, float, float, float]:
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n < 1e-12:
        raise ValueError("quaternion norm too small to normalize")
    if w < 0.0:
        n = -n
    return w / n, x / n, y / n, z / n


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, renormalized and hemisphere-fixed (w >= 0) on construction."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        w, x, y, z = _normalized(self.w, self.x, self.y, self.z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "UnitQuaternion":
        ax, ay, az = float(axis[0]), float(axis[1]), float(axis[2])
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if n < 1e-12:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return UnitQuaternion(math.cos(half), ax * s, ay * s, az * s)

    @staticmethod
    def from_rotation_vector(omega) -> "UnitQuaternion":
        """exp: so(3) -> unit quaternion (omega = angle * axis)."""
        ox, oy, oz = float(omega[0]), float(omega[1]), float(omega[2])
        theta = math.sqrt(ox * ox + oy * oy + oz * oz)
        if theta < SMALL_ANGLE:
            # sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
            s = 0.5 - theta * theta / 48.0
        else:
            s = math.sin(0.5 * theta) / theta
        return UnitQuaternion(math.cos(0.5 * theta), ox * s, oy * s, oz * s)

    @staticmethod
    def from_matrix(R: np.ndarray) -> "UnitQuaternion":
        """Shepperd's method; input must be a proper rotation matrix."""
        m00, m01, m02 = R[0]
        m10, m11, m12 = R[1]
        m20, m21, m22 = R[2]
        tr = m00 + m11 + m22
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            w = 0.25 * s
            x = (m21 - m12) / s
            y = (m02 - m20) / s
            z = (m10 - m01) / s
        elif m00 > m11 and m00 > m22:
            s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
            w = (m21 - m12) / s
            x = 0.25 * s
            y = (m01 + m10) / s
            z = (m02 + m20) / s
        elif m11 > m22:
            s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
            w = (m02 - m20) / s
            x = (m01 + m10) / s
            y = 0.25 * s
            z = (m12 + m21) / s
        else:
            s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
            w = (m10 - m01) / s
            x = (m02 + m20) / s
            y = (m12 + m21) / s
            z = 0.25 * s
        return UnitQuaternion(w, x, y, z)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        xx, yy, zz = x * x, y * y, z * z
        xy, xz, yz = x * y, x * z, y * z
        wx, wy, wz = w * x, w * y, w * z
        return np.array(
            [
                [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
                [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
                [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
            ]
        )

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector: v' = v + 2 w (u x v) + 2 u x (u x v), u = (x,y,z)."""
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        w, x, y, z = self.w, self.x, self.y, self.z
        tx = 2.0 * (y * vz - z * vy)
        ty = 2.0 * (z * vx - x * vz)
        tz = 2.0 * (x * vy - y * vx)
        return np.array(
            [
                vx + w * tx + y * tz - z * ty,
                vy + w * ty + z * tx - x * tz,
                vz + w * tz + x * ty - y * tx,
            ]
        )

    @property
    def angle(self) -> float:
        """Rotation angle in [0, pi] (w >= 0 guarantees the short branch)."""
        vec = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        return 2.0 * math.atan2(vec, self.w)

    def rotation_vector(self) -> np.ndarray:
        """log: unit quaternion -> so(3), angle * axis."""
        vec = math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)
        theta = 2.0 * math.atan2(vec, self.w)
        if vec < 1e-9:
            # q = (1, omega/2) to first order
            scale = 2.0 / self.w
        else:
            scale = theta / vec
        return np.array([self.x * scale, self.y * scale, self.z * scale])

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (unit quaternion) + translation (meters)."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_parts(qw, qx, qy, qz, tx, ty, tz) -> "Pose":
        return Pose(UnitQuaternion(qw, qx, qy, qz), np.array([tx, ty, tz], dtype=float))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.to_matrix()
        T[:3, 3] = self.translation
        return T

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        return Pose(UnitQuaternion.from_matrix(np.asarray(T)[:3, :3]), np.asarray(T)[:3, 3])

    def apply(self, p) -> np.ndarray:
        return self.rotation.rotate(p) + self.translation

    def vec7(self) -> np.ndarray:
        """(px, py, pz, qw, qx, qy, qz) layout used by the network and CSV files."""
        q = self.rotation
        t = self.translation
        return np.array([t[0], t[1], t[2], q.w, q.x, q.y, q.z])

    @staticmethod
    def from_vec7(v) -> "Pose":
        return Pose.from_parts(v[3], v[4], v[5], v[6], v[0], v[1], v[2])


@dataclass(frozen=True)
class Twist:
    """se(3) element: v translation part (m), omega rotation part (rad)."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float).reshape(3))

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return Twist(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.v, self.v) + np.dot(self.omega, self.omega)))


def compose(a: Pose, b: Pose) -> Pose:
    """a then b, i.e. the transform mapping b's child frame through a."""
    return Pose(a.rotation.multiply(b.rotation), a.rotation.rotate(b.translation) + a.translation)


def inverse(p: Pose) -> Pose:
    qinv = p.rotation.conjugate()
    return Pose(qinv, -qinv.rotate(p.translation))


def skew(v) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _v_matrix(omega: np.ndarray, theta: float) -> np.ndarray:
    """V(omega) with exp_se3 translation = V @ v."""
    K = skew(omega)
    if theta < SMALL_ANGLE:
        b = 0.5 - theta * theta / 24.0
        c = 1.0 / 6.0 - theta * theta / 120.0
    else:
        t2 = theta * theta
        b = (1.0 - math.cos(theta)) / t2
        c = (theta - math.sin(theta)) / (t2 * theta)
    return np.eye(3) + b * K + c * (K @ K)


def _v_inverse(omega: np.ndarray, theta: float) -> np.ndarray:
    K = skew(omega)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = (1.0 - 0.5 * theta * math.sin(theta) / (1.0 - math.cos(theta))) / (theta * theta)
    return np.eye(3) - 0.5 * K + c * (K @ K)


def exp_se3(xi: Twist) -> Pose:
    """SE(3) exponential: twist -> rigid transform."""
    omega = xi.omega
    theta = float(np.linalg.norm(omega))
    q = UnitQuaternion.from_rotation_vector(omega)
    t = _v_matrix(omega, theta) @ xi.v
    return Pose(q, t)


def log_se3(p: Pose) -> Twist:
    """SE(3) logarithm: rigid transform -> twist.

    Raises AngleNearPi when the rotation is within ANGLE_NEAR_PI_MARGIN of pi,
    where the rotation log has two equally valid branches.
    """
    theta = p.rotation.angle
    if abs(theta - math.pi) < ANGLE_NEAR_PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta!r} within {ANGLE_NEAR_PI_MARGIN} of pi")
    omega = p.rotation.rotation_vector()
    v = _v_inverse(omega, theta) @ p.translation
    return Twist(v, omega)


def geodesic_angle(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Angle of the relative rotation between a and b, in [0, pi]."""
    rel = a.conjugate().multiply(b)
    return rel.angle


def so3_left_jacobian_inverse(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    return _v_inverse(np.asarray(omega, dtype=float), theta)


def _q_coupling(rho: np.ndarray, phi: np.ndarray, theta: float) -> np.ndarray:
    """Translation-rotation coupling block Q of the SE(3) left Jacobian."""
    P = skew(phi)
    R = skew(rho)
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        a1 = 1.0 / 6.0 - t2 / 120.0
        a2 = -1.0 / 24.0 + t2 / 720.0
        a3 = -1.0 / 120.0 + t2 / 2520.0
    else:
        t4 = t2 * t2
        a1 = (theta - math.sin(theta)) / (t2 * theta)
        a2 = (1.0 - 0.5 * t2 - math.cos(theta)) / t4
        a3 = 0.5 * (a2 - 3.0 * (theta - math.sin(theta) - t2 * theta / 6.0) / (t4 * theta))
    PR = P @ R
    RP = R @ P
    PRP = PR @ P
    return (
        0.5 * R
        + a1 * (PR + RP + PRP)
        - a2 * (P @ PR + RP @ P - 3.0 * PRP)
        - a3 * (PRP @ P + P @ PR @ P)
    )


def se3_left_jacobian_inverse(xi: Twist) -> np.ndarray:
    """Inverse left Jacobian of SE(3) at xi, (translation, rotation) block order."""
    rho = xi.v
    phi = xi.omega
    theta = float(np.linalg.norm(phi))
    Jl_inv = _v_inverse(phi, theta)
    Q = _q_coupling(rho, phi, theta)
    out = np.zeros((6, 6))
    out[:3, :3] = Jl_inv
    out[3:, 3:] = Jl_inv
    out[:3, 3:] = -Jl_inv @ Q @ Jl_inv
    return out


def se3_right_jacobian_inverse(xi: Twist) -> np.ndarray:
    """Inverse right Jacobian of SE(3) at xi, (translation, rotation) block order.

    Satisfies log(exp(xi) * exp(delta)) = xi + Jr^-1(xi) delta + O(|delta|^2),
    which is exactly the chain-rule factor turning a body-frame velocity into
    the derivative of the log-residual.  Jr(xi) = Jl(-xi).
    """
    return se3_left_jacobian_inverse(Twist(-xi.v, -xi.omega))
