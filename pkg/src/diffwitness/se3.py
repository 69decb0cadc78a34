"""SE(3) arithmetic: exponential map, adjoint, gradient projection, transport.

Twists are ordered ``(omega, v)``: angular part first, linear part second.
Perturbations are applied on the right, ``T <- T @ exp(xi)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numba as nb
import numpy as np

TAYLOR_THRESHOLD = 1e-6


@nb.njit(cache=True)
def _skew(w):
    out = np.zeros((3, 3))
    out[0, 1] = -w[2]
    out[0, 2] = w[1]
    out[1, 0] = w[2]
    out[1, 2] = -w[0]
    out[2, 0] = -w[1]
    out[2, 1] = w[0]
    return out


@nb.njit(cache=True)
def exp_rt(omega, v):
    """Closed-form exponential returning ``(R, t)``."""
    th2 = omega[0] * omega[0] + omega[1] * omega[1] + omega[2] * omega[2]
    th = np.sqrt(th2)
    if th < TAYLOR_THRESHOLD:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
        c = 1.0 / 6.0 - th2 / 120.0
    else:
        s, co = np.sin(th), np.cos(th)
        a = s / th
        b = (1.0 - co) / th2
        c = (th - s) / (th2 * th)
    W = _skew(omega)
    W2 = W @ W
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return R, V @ v


@nb.njit(cache=True)
def compose_right(R, t, omega, v):
    """``(R, t) @ exp(omega, v)``."""
    dR, dt = exp_rt(omega, v)
    return R @ dR, R @ dt + t


@nb.njit(cache=True)
def adjoint_vec(R, t, omega, v):
    w2 = R @ omega
    v2 = R @ v + np.cross(t, w2)
    return w2, v2


def skew(w) -> np.ndarray:
    return _skew(np.asarray(w, dtype=np.float64))


def vee(S) -> np.ndarray:
    S = np.asarray(S)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


@dataclass(frozen=True, eq=False)
class Twist:
    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, x) -> "Twist":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:3], x[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])

    def hat(self) -> np.ndarray:
        out = np.zeros((4, 4))
        out[:3, :3] = skew(self.omega)
        out[:3, 3] = self.v
        return out

    def __neg__(self):
        return Twist(-self.omega, -self.v)

    def __add__(self, other):
        return Twist(self.omega + other.omega, self.v + other.v)

    def __mul__(self, s):
        return Twist(self.omega * s, self.v * s)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation is not in SO(3)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def R(self) -> np.ndarray:
        return self.rotation

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def act(self, points) -> np.ndarray:
        return act(self, points)

    def to_json(self) -> dict:
        return {"R": self.rotation.ravel().tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_json(cls, data) -> "Pose":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(np.reshape(data["R"], (3, 3)), data["t"])


def act(pose: Pose, points) -> np.ndarray:
    """Apply ``R x + t`` to one point or an ``(n, 3)`` array of points."""
    p = np.asarray(points, dtype=np.float64)
    return p @ pose.rotation.T + pose.translation


def exp_map(xi: Twist) -> Pose:
    R, t = exp_rt(xi.omega, xi.v)
    return Pose(R, t)


def adjoint(pose: Pose, xi: Twist) -> Twist:
    w, v = adjoint_vec(pose.rotation, pose.translation, xi.omega, xi.v)
    return Twist(w, v)


def adjoint_matrix(pose: Pose) -> np.ndarray:
    """6x6 matrix of ``adjoint(pose, .)`` in ``(omega, v)`` ordering."""
    R, t = pose.rotation, pose.translation
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, :3] = skew(t) @ R
    A[3:, 3:] = R
    return A


def project_to_algebra(pose: Pose, grad) -> Twist:
    """Orthogonal (Frobenius) projection of ``pose^-1 @ G`` onto se(3).

    The bottom row of ``G`` is ignored.
    """
    G = np.array(grad, dtype=np.float64).reshape(4, 4)
    G[3, :] = 0.0
    M = pose.inverse().matrix() @ G
    A = M[:3, :3]
    return Twist(vee(0.5 * (A - A.T)), M[:3, 3])


def equivalent_transport(t1: Pose, t2: Pose, xi1: Twist) -> Twist:
    """Twist on ``t2`` that reproduces the relative-pose effect of ``xi1`` on ``t1``."""
    return -adjoint(t2.inverse() @ t1, xi1)


def transport_residual(t1: Pose, t2: Pose, xi1: Twist, lam: float = 1.0) -> float:
    """Frobenius gap between the two relative poses the transport should equate.

    Updating ``t1`` with ``-lam xi1`` and updating ``t2`` with ``-lam xi2``,
    ``xi2 = equivalent_transport(t1, t2, xi1)``, must leave the same
    relative pose ``T1^-1 T2`` for every ``lam``.
    """
    xi2 = equivalent_transport(t1, t2, xi1)
    lhs = (t1 @ exp_map(-lam * xi1)).inverse() @ t2
    rhs = t1.inverse() @ t2 @ exp_map(-lam * xi2)
    return float(np.linalg.norm(lhs.matrix() - rhs.matrix()))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


def point_jacobian(pose: Pose, p_local) -> np.ndarray:
    """3x6 derivative of ``pose(exp(xi) p)`` with respect to ``xi`` at zero."""
    J = np.empty((3, 6))
    J[:, :3] = -pose.rotation @ skew(p_local)
    J[:, 3:] = pose.rotation
    return J
