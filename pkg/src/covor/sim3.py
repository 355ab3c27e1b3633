"""Lie-group machinery for SO(3), SE(3) and Sim(3) similarity transforms.

A similarity transform is stored as the triple (rotation R, translation t,
scale s) whose canonical 4x4 matrix form is

    [ R    t   ]
    [ 0  1/s   ]

i.e. the scale enters through the *inverse* in the bottom-right corner.  All
group laws in this module (compose, inverse, point action) are defined as
plain 4x4 matrix algebra on that form; the unit tests pin this with explicit
matrix oracles.  Under this convention the homogeneous action on a point p is
s * (R @ p + t), so the position encoded by a pose is s * t.

Tangent (twist) vectors are plain numpy arrays of shape (7,), ordered as

    xi = (omega_x, omega_y, omega_z, u_x, u_y, u_z, lam)

rotation first, then translation, then log-scale.  The matrix generator of a
twist is [[hat(omega), u], [0, -lam]]; the sign is fixed so that
exp of a pure log-scale twist lam yields the triple (I, 0, e^lam).

Numerical policy: small-angle / small-scale branches switch at 1e-3 using
series accurate to well below 1e-12; rotation logs within 1e-6 of the pi
boundary are rejected (AngleNearPi) rather than approximated.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi, NonPositiveScale

# Branch-switch threshold for closed-form vs series coefficients.
_SMALL = 1e-3
# Re-orthonormalize rotations whose drift from O(3) exceeds this.
_ORTHO_DRIFT = 1e-8
# Reject rotation logs closer to pi than this.
_PI_MARGIN = 1e-6


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric (cross-product) matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat: extract the 3-vector of a skew-symmetric matrix."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def project_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar projection)."""
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def rotation_drift(r: np.ndarray) -> float:
    """Frobenius distance of R^T R from the identity."""
    return float(np.linalg.norm(r.T @ r - np.eye(3)))


def is_rotation(r: np.ndarray, tol: float = 1e-6) -> bool:
    return r.shape == (3, 3) and rotation_drift(r) <= tol and np.linalg.det(r) > 0.0


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation vector -> rotation matrix."""
    theta2 = float(omega @ omega)
    theta = math.sqrt(theta2)
    k = hat(omega)
    if theta < _SMALL:
        # sin(t)/t and (1-cos(t))/t^2 by series; error below 1e-19 here.
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation matrix -> rotation vector on the principal branch.

    Raises:
        AngleNearPi: if the rotation angle is within 1e-6 of pi.
    """
    axis_sin = vee(r - r.T) / 2.0
    sin_theta = float(np.linalg.norm(axis_sin))
    cos_theta = float(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))
    theta = math.atan2(sin_theta, cos_theta)
    if theta >= math.pi - _PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} too close to pi")
    if theta < _SMALL:
        # theta/sin(theta) series.
        c = 1.0 + theta * theta / 6.0 + 7.0 * theta**4 / 360.0
    else:
        c = theta / sin_theta
    return c * axis_sin


def _phi_real(sigma: float) -> float:
    """(e^s - 1)/s, robust near zero."""
    if abs(sigma) < _SMALL:
        return 1.0 + sigma / 2.0 + sigma**2 / 6.0 + sigma**3 / 24.0 + sigma**4 / 120.0
    return math.expm1(sigma) / sigma


def _phi_d1(sigma: float) -> float:
    """First derivative of (e^s - 1)/s."""
    if abs(sigma) < 0.1:
        # d/ds sum s^n/(n+1)! = sum n s^(n-1)/(n+1)!
        return (
            0.5
            + sigma / 3.0
            + sigma**2 / 8.0
            + sigma**3 / 30.0
            + sigma**4 / 144.0
            + sigma**5 / 840.0
        )
    return (sigma * math.exp(sigma) - math.expm1(sigma)) / sigma**2


def _phi_d2(sigma: float) -> float:
    """Second derivative of (e^s - 1)/s."""
    if abs(sigma) < 0.1:
        return (
            1.0 / 3.0
            + sigma / 4.0
            + sigma**2 / 10.0
            + sigma**3 / 36.0
            + sigma**4 / 168.0
        )
    e = math.exp(sigma)
    return e / sigma - 2.0 * e / sigma**2 + 2.0 * math.expm1(sigma) / sigma**3


def _translation_mixer(omega: np.ndarray, lam: float) -> np.ndarray:
    """The 3x3 matrix W with exp(xi) translation given by e^-lam * W @ u.

    W = f(hat(omega) + lam*I) for f(z) = (e^z - 1)/z, evaluated in closed
    form through the spectral structure of hat(omega).
    """
    theta2 = float(omega @ omega)
    theta = math.sqrt(theta2)
    k = hat(omega)
    if theta < _SMALL:
        # Expand f around lam*I; remainder O(theta^3) < 1e-10 * theta.
        return (
            _phi_real(lam) * np.eye(3)
            + _phi_d1(lam) * k
            + 0.5 * _phi_d2(lam) * (k @ k)
        )
    # On the plane orthogonal to the rotation axis the generator acts as the
    # complex scalar lam + i*theta; along the axis it acts as lam.
    phi_c = (cmath.exp(complex(lam, theta)) - 1.0) / complex(lam, theta)
    axis_outer = np.outer(omega, omega) / theta2
    w = (
        phi_c.real * (np.eye(3) - axis_outer)
        + _phi_real(lam) * axis_outer
        + (phi_c.imag / theta) * k
    )
    return w


@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform: rotation matrix plus translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not is_rotation(r):
            raise ValueError("rotation block is not orthonormal with det +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "SE3Pose":
        rt = self.rotation.T
        return SE3Pose(rt, -rt @ self.translation)

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        return SE3Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


@dataclass(frozen=True, eq=False)
class Sim3Pose:
    """Similarity transform (R, t, s) in the [R t; 0 1/s] matrix convention."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        s = float(self.scale)
        if not (math.isfinite(s) and s > 0.0):
            raise NonPositiveScale(f"scale must be positive and finite, got {s}")
        if rotation_drift(r) > _ORTHO_DRIFT:
            r = project_rotation(r)
        if not is_rotation(r):
            raise ValueError("rotation block is not orthonormal with det +1")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))
        object.__setattr__(self, "scale", s)

    @staticmethod
    def identity() -> "Sim3Pose":
        return Sim3Pose(np.eye(3), np.zeros(3), 1.0)

    def matrix(self) -> np.ndarray:
        """Canonical 4x4 form [R t; 0 1/s]."""
        m = np.zeros((4, 4))
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        m[3, 3] = 1.0 / self.scale
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Sim3Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4) or np.any(m[3, :3] != 0.0):
            raise ValueError("not a canonical similarity matrix")
        if m[3, 3] <= 0.0:
            raise NonPositiveScale("bottom-right entry must be positive")
        return Sim3Pose(m[:3, :3], m[:3, 3], 1.0 / m[3, 3])

    @property
    def position(self) -> np.ndarray:
        """World position encoded by the pose: the action on the origin, s*t."""
        return self.scale * self.translation


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _unsafe_pose(r: np.ndarray, t: np.ndarray, s: float) -> Sim3Pose:
    """Construct without validation; only for results of verified group ops."""
    pose = object.__new__(Sim3Pose)
    object.__setattr__(pose, "rotation", r)
    object.__setattr__(pose, "translation", t)
    object.__setattr__(pose, "scale", s)
    return pose


def compose(a: Sim3Pose, b: Sim3Pose) -> Sim3Pose:
    """Group product: the 4x4 matrix product of the canonical forms.

    Re-orthonormalizes the rotation product when floating-point drift
    exceeds 1e-8 (numerical hygiene after long composition chains).
    """
    r = a.rotation @ b.rotation
    if rotation_drift(r) > _ORTHO_DRIFT:
        r = project_rotation(r)
    t = a.rotation @ b.translation + a.translation / b.scale
    return _unsafe_pose(r, t, a.scale * b.scale)


def inverse(a: Sim3Pose) -> Sim3Pose:
    """Group inverse: (R^T, -s R^T t, 1/s)."""
    rt = a.rotation.T
    return _unsafe_pose(rt, -a.scale * (rt @ a.translation), 1.0 / a.scale)


def lift_se3(t: SE3Pose, scale: float) -> Sim3Pose:
    """Promote a rigid pose to a similarity by prepending a pure-scale block.

    Equals diag-block([I, 0; 0, 1/scale]) @ T in matrix form, which keeps the
    rotation and translation and installs the scale factor.
    """
    scale = float(scale)
    if not (math.isfinite(scale) and scale > 0.0):
        raise NonPositiveScale(f"scale must be positive and finite, got {scale}")
    return Sim3Pose(t.rotation, t.translation, scale)


def transform_point(a: Sim3Pose, p: np.ndarray) -> np.ndarray:
    """Homogeneous action of the canonical matrix followed by dehomogenization."""
    p = np.asarray(p, dtype=float).reshape(3)
    return a.scale * (a.rotation @ p + a.translation)


def exp(xi: np.ndarray) -> Sim3Pose:
    """Closed-form exponential of a 7-twist (omega, u, lam)."""
    xi = np.asarray(xi, dtype=float).reshape(7)
    if not np.all(np.isfinite(xi)):
        raise ValueError("twist has non-finite entries")
    omega, u, lam = xi[:3], xi[3:6], float(xi[6])
    r = so3_exp(omega)
    w = _translation_mixer(omega, lam)
    t = math.exp(-lam) * (w @ u)
    return _unsafe_pose(r, t, math.exp(lam))


def log(a: Sim3Pose) -> np.ndarray:
    """Principal-branch logarithm; inverse of exp.

    Raises:
        AngleNearPi: rotation angle within 1e-6 of pi.
    """
    omega = so3_log(a.rotation)
    lam = math.log(a.scale)
    w = _translation_mixer(omega, lam)
    u = np.linalg.solve(w, a.scale * a.translation)
    return np.concatenate([omega, u, [lam]])


def adjoint(a: Sim3Pose) -> np.ndarray:
    """7x7 adjoint: compose(a, exp(xi), inverse(a)) == exp(adjoint(a) @ xi)."""
    r = a.rotation
    p = a.position
    adj = np.zeros((7, 7))
    adj[:3, :3] = r
    adj[3:6, :3] = hat(p) @ r
    adj[3:6, 3:6] = a.scale * r
    adj[3:6, 6] = -p
    adj[6, 6] = 1.0
    return adj


def ad(xi: np.ndarray) -> np.ndarray:
    """7x7 algebra adjoint (Lie bracket with xi, as a matrix)."""
    xi = np.asarray(xi, dtype=float).reshape(7)
    omega, u, lam = xi[:3], xi[3:6], float(xi[6])
    m = np.zeros((7, 7))
    m[:3, :3] = hat(omega)
    m[3:6, :3] = hat(u)
    m[3:6, 3:6] = hat(omega) + lam * np.eye(3)
    m[3:6, 6] = -u
    return m


def right_jacobian(xi: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r(xi) = sum_n (-ad xi)^n / (n+1)!.

    Satisfies log(exp(xi) exp(delta)) ~= xi + inv(J_r(xi)) @ delta to first
    order.  Summed to machine precision; converges for every finite twist.
    """
    a = -ad(xi)
    term = np.eye(7)
    total = np.eye(7)
    for n in range(1, 60):
        term = term @ a / (n + 1.0)
        total = total + term
        if np.max(np.abs(term)) < 1e-17:
            break
    return total


def inv_right_jacobian(xi: np.ndarray) -> np.ndarray:
    return np.linalg.inv(right_jacobian(xi))
