"""Loss, witness Jacobians, pose gradients and the baseline estimators.

Gradients are returned in *algebra coordinates*: the orthogonal
(Frobenius) projection of the ambient gradient ``T^-1 dL/dT`` onto se(3).
For a twist ``(omega, v)`` this is ``(dL/domega / 2, dL/dv)`` where the
partials are taken along ``T <- T exp(eps * e_j)``; the factor one half is
the norm of the skew-matrix embedding.  :func:`diffwitness.se3.project_to_algebra`
computes the same quantity from a 4x4 ambient gradient.

Method codes used by the kernels:

* ``METHOD_SMOOTH``     softmax surrogate (``ours`` with the distance score,
  ``rs1_dir`` with the direction score)
* ``METHOD_ANALYTICAL`` vertex/face closed forms at the forward witness
* ``METHOD_FD``         central finite differences of the full pipeline
* ``METHOD_RS0``        zeroth-order Gaussian smoothing
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numba as nb
import numpy as np

from . import narrowphase as npz
from .geom import CompositeShape, sample_surface_bank
from .se3 import Pose, Twist, adjoint_vec, compose_right, equivalent_transport, point_jacobian
from .smoothing import (ADAPTIVE, FIXED, NEIGHBOR, SCORES, STRATEGIES, SamplingConfig, gather_ball,
                        gather_neighbor, smooth_kernel)

METHOD_SMOOTH = 0
METHOD_ANALYTICAL = 1
METHOD_FD = 2
METHOD_RS0 = 3

# integer config slots
CI_METHOD, CI_SCORE, CI_SAMPLING, CI_MAXC, CI_KRING, CI_SUBSAMPLE = 0, 1, 2, 3, 4, 5
CI_EG, CI_OPT_T1, CI_FULL_TAU, CI_CROSS, CI_RS0_N, CI_JOINT_NORM = 6, 7, 8, 9, 10, 11
NCI = 12
# float config slots
CF_BETA, CF_ALPHA1, CF_ALPHA2, CF_EPS, CF_FD_H, CF_RS0_SIGMA = 0, 1, 2, 3, 4, 5
NCF = 6

FEATURE_VERTEX = 1
FEATURE_EDGE = 2
FEATURE_FACE = 3
FEATURE_TOL = 1e-7
ANALYTIC_FALLBACK = 8       # flag bit: a witness side was neither vertex nor face


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True, eq=False)
class TaskGradient:
    xi1: Twist
    xi2: Twist
    xi2_total: Twist


class KernelShape(NamedTuple):
    verts: np.ndarray
    pstart: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    faces: np.ndarray
    fstart: np.ndarray
    bank: np.ndarray
    bank_piece: np.ndarray
    src_verts: np.ndarray
    adj_ptr: np.ndarray
    adj_idx: np.ndarray
    diag: float


@lru_cache(maxsize=256)
def prepare_shape(shape: CompositeShape, n_samples: int = 512, seed: int = 0) -> KernelShape:
    """Packed arrays plus surface bank for use inside kernels."""
    p = npz.pack(shape)
    bank = sample_surface_bank(shape, n_samples, seed)
    ptr, idx = shape.source_mesh.adjacency_csr()
    return KernelShape(p.verts, p.pstart, p.centers, p.radii, p.faces, p.fstart,
                       np.ascontiguousarray(bank.points), np.ascontiguousarray(bank.piece),
                       np.ascontiguousarray(shape.source_mesh.vertices), ptr, idx, float(shape.diag))


# ---------------------------------------------------------------------------
# loss


def loss(x1, x2, t1_target, t2_target, cfg: LossConfig = LossConfig(), normal=None):
    """Witness-matching loss and its partials ``(L, dL/dx1, dL/dx2)``.

    With ``beta > 0`` the gap term is ``|x1 - x2 + beta n|^2``.  ``n`` defaults
    to ``(x2 - x1)/|x2 - x1|``; pass the contact normal of the forward query
    to keep the sign meaningful under penetration.  ``n`` is not
    differentiated.
    """
    x1, x2 = np.asarray(x1, float), np.asarray(x2, float)
    t1, t2 = np.asarray(t1_target, float), np.asarray(t2_target, float)
    e = x1 - x2
    if cfg.beta > 0:
        if normal is None:
            gap = np.linalg.norm(x2 - x1)
            n = (x2 - x1) / gap if gap > 1e-12 else np.zeros(3)
        else:
            n = np.asarray(normal, float)
        e = e + cfg.beta * n
    r1, r2 = x1 - t1, x2 - t2
    L = float(e @ e + r1 @ r1 + r2 @ r2)
    return L, 2 * e + 2 * r1, -2 * e + 2 * r2


@nb.njit(cache=True)
def loss_kernel(res_f, R1, t1, R2, t2, t1o, t2o, beta, g):
    """Loss at a forward result; ``g`` rows get dL/dx1, dL/dx2, dL/dt1, dL/dt2."""
    L = 0.0
    for r in range(3):
        x1 = res_f[1 + r]
        x2 = res_f[4 + r]
        tw1 = R1[r, 0] * t1o[0] + R1[r, 1] * t1o[1] + R1[r, 2] * t1o[2] + t1[r]
        tw2 = R2[r, 0] * t2o[0] + R2[r, 1] * t2o[1] + R2[r, 2] * t2o[2] + t2[r]
        e = x1 - x2 + beta * res_f[7 + r]
        r1 = x1 - tw1
        r2 = x2 - tw2
        L += e * e + r1 * r1 + r2 * r2
        g[0, r] = 2.0 * e + 2.0 * r1
        g[1, r] = -2.0 * e + 2.0 * r2
        g[2, r] = -2.0 * r1
        g[3, r] = -2.0 * r2
    return L


@nb.njit(cache=True)
def forward_kernel(S1, S2, R1, t1, R2, t2, res_f, res_i):
    res_i[:] = 0
    npz.composite_kernel(S1.verts, S1.pstart, S1.centers, S1.radii, R1, t1,
                         S2.verts, S2.pstart, S2.centers, S2.radii, R2, t2, res_f, res_i, False)


@nb.njit(cache=True)
def loss_at(S1, S2, R1, t1, R2, t2, t1o, t2o, beta, res_f, res_i, g):
    forward_kernel(S1, S2, R1, t1, R2, t2, res_f, res_i)
    return loss_kernel(res_f, R1, t1, R2, t2, t1o, t2o, beta, g)


# ---------------------------------------------------------------------------
# Jacobian helpers


@nb.njit(cache=True)
def rigid_jacobian(R, p, J):
    """``J = [-R [p]x | R]``: derivative of ``T exp(xi) p`` at ``xi = 0``."""
    for r in range(3):
        J[r, 0] = R[r, 2] * p[1] - R[r, 1] * p[2]
        J[r, 1] = R[r, 0] * p[2] - R[r, 2] * p[0]
        J[r, 2] = R[r, 1] * p[0] - R[r, 0] * p[1]
        for c in range(3):
            J[r, 3 + c] = R[r, c]


@nb.njit(cache=True)
def _acc_jt_g(J, g, out, off):
    for c in range(6):
        out[off + c] += J[0, c] * g[0] + J[1, c] * g[1] + J[2, c] * g[2]


@nb.njit(cache=True)
def _local_point(R, t, x, out):
    for r in range(3):
        out[r] = R[0, r] * (x[0] - t[0]) + R[1, r] * (x[1] - t[1]) + R[2, r] * (x[2] - t[2])


@nb.njit(cache=True)
def smooth_side(S, R, t, x_local, piece, x_self, x_other, target, alpha_fixed, cfgi, cfgf, sign,
                C, V, u, w, xs, J, M):
    """Candidate selection plus softmax for one object; returns candidate count."""
    mode = cfgi[CI_SAMPLING]
    if mode == NEIGHBOR:
        n = gather_neighbor(S.src_verts, S.adj_ptr, S.adj_idx, x_local, cfgi[CI_KRING], cfgi[CI_SUBSAMPLE], C)
    else:
        if mode == FIXED:
            alpha = alpha_fixed
        else:
            gap = np.sqrt((target[0] - x_self[0]) ** 2 + (target[1] - x_self[1]) ** 2 + (target[2] - x_self[2]) ** 2)
            alpha = max(gap, cfgf[CF_EPS])
        n = gather_ball(S.bank, S.bank_piece, S.centers, S.radii, x_local, piece, alpha,
                        cfgi[CI_MAXC], cfgi[CI_CROSS] != 0, C)
    smooth_kernel(C, n, R, t, x_self, x_other, cfgi[CI_SCORE], sign, cfgi[CI_FULL_TAU] != 0, V, u, w, xs, J, M)
    return n


@nb.njit(cache=True)
def smooth_jacobians(S1, S2, R1, t1, R2, t2, t1o, t2o, res_f, res_i, cfgi, cfgf, Jout):
    """Fill ``Jout`` (4, 3, 6) with d x1*/d xi1, d x2*/d xi2, d x1*/d xi2, d x2*/d xi1."""
    cap = max(cfgi[CI_MAXC], cfgi[CI_SUBSAMPLE] + 1)
    C = np.empty((cap, 3))
    V = np.empty((cap, 3))
    u = np.empty(cap)
    w = np.empty(cap)
    xs = np.empty(3)
    M1 = np.empty((3, 3))
    M2 = np.empty((3, 3))
    J1 = np.empty((3, 6))
    J2 = np.empty((3, 6))
    x1 = res_f[1:4].copy()
    x2 = res_f[4:7].copy()
    x1l = np.empty(3)
    x2l = np.empty(3)
    _local_point(R1, t1, x1, x1l)
    _local_point(R2, t2, x2, x2l)
    tw1 = R1 @ t1o + t1
    tw2 = R2 @ t2o + t2
    sign = -1.0 if res_f[0] < 0.0 else 1.0
    smooth_side(S1, R1, t1, x1l, res_i[10], x1, x2, tw1, cfgf[CF_ALPHA1], cfgi, cfgf, sign, C, V, u, w, xs, J1, M1)
    smooth_side(S2, R2, t2, x2l, res_i[11], x2, x1, tw2, cfgf[CF_ALPHA2], cfgi, cfgf, sign, C, V, u, w, xs, J2, M2)
    Jout[0] = J1
    Jout[1] = J2
    Jout[2] = M1 @ J2
    Jout[3] = M2 @ J1


@nb.njit(cache=True)
def _feature(ids, lam, k):
    """Count distinct support ids carrying weight; returns (count, first three ids)."""
    sel = np.full(3, -1, np.int64)
    cnt = 0
    for q in range(k):
        if lam[q] <= FEATURE_TOL or ids[q] < 0:
            continue
        dup = False
        for s in range(cnt):
            if sel[s] == ids[q]:
                dup = True
        if not dup:
            if cnt < 3:
                sel[cnt] = ids[q]
            cnt += 1
    return cnt, sel


@nb.njit(cache=True)
def _analytic_self(verts, R, t, x_world, other_world, ids, lam, k, J, P):
    """Self Jacobian of a vertex or face witness; ``P`` gets the world-frame plane projector.

    Returns the feature type (vertex, face, or edge/other as rigid fallback).
    """
    xl = np.empty(3)
    _local_point(R, t, x_world, xl)
    cnt, sel = _feature(ids, lam, k)
    rigid_jacobian(R, xl, J)
    P[:, :] = 0.0
    if cnt != 3:
        return FEATURE_VERTEX if cnt == 1 else FEATURE_EDGE
    a = verts[sel[0]]
    n = np.cross(verts[sel[1]] - a, verts[sel[2]] - a)
    nn = np.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2)
    if nn == 0.0:
        return FEATURE_EDGE
    n /= nn
    pl = np.empty(3)
    _local_point(R, t, other_world, pl)
    # J = R [ -[x]x + (I - n n^T)[p]x | n n^T ]
    Q = np.eye(3) - np.outer(n, n)
    Px = np.zeros((3, 3))
    Px[0, 1], Px[0, 2], Px[1, 0], Px[1, 2], Px[2, 0], Px[2, 1] = -pl[2], pl[1], pl[2], -pl[0], -pl[1], pl[0]
    Xx = np.zeros((3, 3))
    Xx[0, 1], Xx[0, 2], Xx[1, 0], Xx[1, 2], Xx[2, 0], Xx[2, 1] = -xl[2], xl[1], xl[2], -xl[0], -xl[1], xl[0]
    rot = R @ (Q @ Px - Xx)
    lin = R @ np.outer(n, n)
    for r in range(3):
        for c in range(3):
            J[r, c] = rot[r, c]
            J[r, 3 + c] = lin[r, c]
    P[:, :] = R @ Q @ R.T
    return FEATURE_FACE


@nb.njit(cache=True)
def analytic_jacobians(S1, S2, R1, t1, R2, t2, res_f, res_i, Jout):
    """Closed-form vertex/face witness Jacobians; returns fallback flag bits."""
    k = res_i[1]
    lam = res_f[10:14]
    P1 = np.empty((3, 3))
    P2 = np.empty((3, 3))
    J1 = np.empty((3, 6))
    J2 = np.empty((3, 6))
    f1 = _analytic_self(S1.verts, R1, t1, res_f[1:4], res_f[4:7], res_i[2:6], lam, k, J1, P1)
    f2 = _analytic_self(S2.verts, R2, t2, res_f[4:7], res_f[1:4], res_i[6:10], lam, k, J2, P2)
    Jout[0] = J1
    Jout[1] = J2
    Jout[2] = P1 @ J2
    Jout[3] = P2 @ J1
    flags = 0
    if f1 == FEATURE_EDGE or f2 == FEATURE_EDGE:
        flags |= ANALYTIC_FALLBACK
    return flags


@nb.njit(cache=True)
def chain_gradient(Jw, g, R1, R2, t1o, t2o, out):
    """Euclidean twist gradients of both poses from witness Jacobians; ``out`` is 12 long."""
    out[:] = 0.0
    _acc_jt_g(Jw[0], g[0], out, 0)
    _acc_jt_g(Jw[3], g[1], out, 0)
    _acc_jt_g(Jw[1], g[1], out, 6)
    _acc_jt_g(Jw[2], g[0], out, 6)
    Jt = np.empty((3, 6))
    rigid_jacobian(R1, t1o, Jt)
    _acc_jt_g(Jt, g[2], out, 0)
    rigid_jacobian(R2, t2o, Jt)
    _acc_jt_g(Jt, g[3], out, 6)


@nb.njit(cache=True)
def _perturbed(R, t, xi):
    return compose_right(R, t, xi[:3].copy(), xi[3:].copy())


@nb.njit(cache=True)
def fd_gradient(S1, S2, R1, t1, R2, t2, t1o, t2o, beta, h, need1, out):
    """Central differences over basis twists; translation steps scaled by each diag."""
    res_f = np.empty(npz.NF)
    res_i = np.empty(npz.NI, np.int64)
    g = np.empty((4, 3))
    out[:] = 0.0
    xi = np.zeros(6)
    for side in range(2):
        if side == 0 and not need1:
            continue
        diag = S1.diag if side == 0 else S2.diag
        for j in range(6):
            hj = h if j < 3 else h * diag
            vals = np.empty(2)
            for s in range(2):
                xi[:] = 0.0
                xi[j] = hj if s == 0 else -hj
                if side == 0:
                    Rp, tp = _perturbed(R1, t1, xi)
                    vals[s] = loss_at(S1, S2, Rp, tp, R2, t2, t1o, t2o, beta, res_f, res_i, g)
                else:
                    Rp, tp = _perturbed(R2, t2, xi)
                    vals[s] = loss_at(S1, S2, R1, t1, Rp, tp, t1o, t2o, beta, res_f, res_i, g)
            out[6 * side + j] = (vals[0] - vals[1]) / (2.0 * hj)


@nb.njit(cache=True)
def rs0_gradient(S1, S2, R1, t1, R2, t2, t1o, t2o, beta, sigma, n_samples, need1, L0, out):
    """Gaussian-perturbation estimate ``(1/(n sigma)) sum (L(T exp(sigma z)) - L0) z``.

    Translation components of ``z`` are scaled by the object's diag so the
    perturbation is scale-aware; the estimate is returned in plain units.
    Draws from numba's global RNG.
    """
    res_f = np.empty(npz.NF)
    res_i = np.empty(npz.NI, np.int64)
    g = np.empty((4, 3))
    out[:] = 0.0
    z = np.zeros(12)
    xi = np.empty(6)
    lo = 0 if need1 else 6
    for _ in range(n_samples):
        for j in range(lo, 12):
            z[j] = np.random.standard_normal()
        Ra, ta = R1, t1
        if need1:
            for j in range(6):
                xi[j] = sigma * z[j] * (S1.diag if j >= 3 else 1.0)
            Ra, ta = _perturbed(R1, t1, xi)
        for j in range(6):
            xi[j] = sigma * z[6 + j] * (S2.diag if j >= 3 else 1.0)
        Rb, tb = _perturbed(R2, t2, xi)
        dL = loss_at(S1, S2, Ra, ta, Rb, tb, t1o, t2o, beta, res_f, res_i, g) - L0
        for j in range(lo, 12):
            out[j] += dL * z[j]
    for j in range(lo, 12):
        out[j] /= n_samples * sigma
    for j in range(3, 6):
        out[j] /= S1.diag
        out[6 + j] /= S2.diag


@nb.njit(cache=True)
def gradient_kernel(S1, S2, R1, t1, R2, t2, t1o, t2o, res_f, res_i, L0, g, cfgi, cfgf, out):
    """Euclidean twist gradient (12 entries, object 1 then 2) for the configured method."""
    method = cfgi[CI_METHOD]
    need1 = cfgi[CI_EG] != 0 or cfgi[CI_OPT_T1] != 0
    flags = 0
    if method == METHOD_SMOOTH or method == METHOD_ANALYTICAL:
        Jw = np.empty((4, 3, 6))
        if method == METHOD_SMOOTH:
            smooth_jacobians(S1, S2, R1, t1, R2, t2, t1o, t2o, res_f, res_i, cfgi, cfgf, Jw)
        else:
            flags = analytic_jacobians(S1, S2, R1, t1, R2, t2, res_f, res_i, Jw)
        chain_gradient(Jw, g, R1, R2, t1o, t2o, out)
    elif method == METHOD_FD:
        fd_gradient(S1, S2, R1, t1, R2, t2, t1o, t2o, cfgf[CF_BETA], cfgf[CF_FD_H], need1, out)
    else:
        rs0_gradient(S1, S2, R1, t1, R2, t2, t1o, t2o, cfgf[CF_BETA], cfgf[CF_RS0_SIGMA],
                     cfgi[CI_RS0_N], need1, L0, out)
    return flags


@nb.njit(cache=True)
def algebra_step(grad, R1, t1, R2, t2, use_eg, out):
    """Algebra coordinates ``xi1, xi2, xi2_total`` (18 entries) from a Euclidean gradient."""
    for side in range(2):
        for j in range(3):
            out[6 * side + j] = 0.5 * grad[6 * side + j]
            out[6 * side + 3 + j] = grad[6 * side + 3 + j]
    out[12:18] = out[6:12]
    if use_eg:
        # xi2~ = -Ad_{T2^-1 T1} xi1
        Rr = R2.T @ R1
        tr = R2.T @ (t1 - t2)
        w, v = adjoint_vec(Rr, tr, out[0:3].copy(), out[3:6].copy())
        for j in range(3):
            out[12 + j] -= w[j]
            out[15 + j] -= v[j]


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True, eq=False)
class PoseProblem:
    """Two shapes, their poses and their local targets."""

    shape1: CompositeShape
    pose1: Pose
    shape2: CompositeShape
    pose2: Pose
    target1_local: np.ndarray
    target2_local: np.ndarray
    loss: LossConfig = field(default_factory=LossConfig)
    use_eg: bool = True
    optimize_t1: bool = False
    n_bank_samples: int = 512

    def kernel_shapes(self):
        return (prepare_shape(self.shape1, self.n_bank_samples), prepare_shape(self.shape2, self.n_bank_samples))

    def targets_world(self):
        return self.pose1.act(self.target1_local), self.pose2.act(self.target2_local)

    def with_poses(self, pose1: Pose, pose2: Pose) -> "PoseProblem":
        return PoseProblem(self.shape1, pose1, self.shape2, pose2, self.target1_local, self.target2_local,
                           self.loss, self.use_eg, self.optimize_t1, self.n_bank_samples)

    def forward(self):
        S1, S2 = self.kernel_shapes()
        res_f, res_i = np.zeros(npz.NF), np.zeros(npz.NI, np.int64)
        forward_kernel(S1, S2, self.pose1.R, self.pose1.t, self.pose2.R, self.pose2.t, res_f, res_i)
        return res_f, res_i

    def value(self) -> float:
        res_f, _ = self.forward()
        g = np.empty((4, 3))
        return float(loss_kernel(res_f, self.pose1.R, self.pose1.t, self.pose2.R, self.pose2.t,
                                 np.asarray(self.target1_local, float), np.asarray(self.target2_local, float),
                                 self.loss.beta, g))


def method_config(method: str = "ours", sampling: SamplingConfig | None = None, beta: float = 0.0,
                  use_eg: bool = True, optimize_t1: bool = False, full_tau: bool = False,
                  fd_h: float = 1e-6, rs0_sigma: float = 1e-2, rs0_samples: int = 12,
                  joint_normalization: bool = False, diags=(1.0, 1.0), score: str | None = None):
    """Integer and float config arrays consumed by the kernels."""
    codes = {"ours": METHOD_SMOOTH, "rs1_dir": METHOD_SMOOTH, "analytical": METHOD_ANALYTICAL,
             "fd": METHOD_FD, "rs0": METHOD_RS0}
    if method not in codes:
        raise ValueError(f"unknown method {method!r}")
    if sampling is None:
        sampling = SamplingConfig("neighbor") if method == "rs1_dir" else SamplingConfig()
    if score is None:
        score = "direction" if method == "rs1_dir" else "distance"
    ci = np.zeros(NCI, np.int64)
    cf = np.zeros(NCF)
    ci[CI_METHOD] = codes[method]
    ci[CI_SCORE] = SCORES[score]
    ci[CI_SAMPLING] = STRATEGIES[sampling.strategy]
    ci[CI_MAXC] = sampling.max_candidates
    ci[CI_KRING] = sampling.k_ring
    ci[CI_SUBSAMPLE] = sampling.subsample
    ci[CI_EG] = int(use_eg and not optimize_t1)
    ci[CI_OPT_T1] = int(optimize_t1)
    ci[CI_FULL_TAU] = int(full_tau)
    ci[CI_CROSS] = int(sampling.cross_piece)
    ci[CI_RS0_N] = rs0_samples
    ci[CI_JOINT_NORM] = int(joint_normalization)
    cf[CF_BETA] = beta
    cf[CF_ALPHA1] = sampling.alpha if sampling.alpha is not None else 0.05 * diags[0]
    cf[CF_ALPHA2] = sampling.alpha if sampling.alpha is not None else 0.05 * diags[1]
    cf[CF_EPS] = sampling.epsilon
    cf[CF_FD_H] = fd_h
    cf[CF_RS0_SIGMA] = rs0_sigma
    return ci, cf


def _twists(out18) -> TaskGradient:
    return TaskGradient(Twist.from_vector(out18[0:6]), Twist.from_vector(out18[6:12]),
                        Twist.from_vector(out18[12:18]))


@nb.njit(cache=True)
def _problem_gradient(S1, S2, R1, t1, R2, t2, t1o, t2o, cfgi, cfgf, seed, out18):
    np.random.seed(seed)
    res_f = np.zeros(npz.NF)
    res_i = np.zeros(npz.NI, np.int64)
    g = np.empty((4, 3))
    L0 = loss_at(S1, S2, R1, t1, R2, t2, t1o, t2o, cfgf[CF_BETA], res_f, res_i, g)
    grad = np.empty(12)
    gradient_kernel(S1, S2, R1, t1, R2, t2, t1o, t2o, res_f, res_i, L0, g, cfgi, cfgf, grad)
    algebra_step(grad, R1, t1, R2, t2, cfgi[CI_EG] != 0, out18)
    return L0


def problem_gradient(problem: PoseProblem, method: str = "ours", seed: int = 0, **kw) -> TaskGradient:
    """Gradient of ``problem`` by any method (see :func:`method_config` for options)."""
    S1, S2 = problem.kernel_shapes()
    ci, cf = method_config(method, beta=problem.loss.beta, use_eg=problem.use_eg,
                           optimize_t1=problem.optimize_t1, diags=(S1.diag, S2.diag), **kw)
    out = np.zeros(18)
    _problem_gradient(S1, S2, problem.pose1.R, problem.pose1.t, problem.pose2.R, problem.pose2.t,
                      np.asarray(problem.target1_local, float), np.asarray(problem.target2_local, float),
                      ci, cf, int(seed), out)
    return _twists(out)


def grad_finite_difference(problem: PoseProblem, h: float = 1e-6) -> TaskGradient:
    if h <= 0:
        raise ValueError("h must be positive")
    return problem_gradient(problem, "fd", fd_h=h)


def grad_rs0(problem: PoseProblem, sigma: float = 1e-2, n_samples: int = 12, seed: int = 0) -> TaskGradient:
    if sigma <= 0 or n_samples < 1:
        raise ValueError("sigma must be positive and n_samples >= 1")
    return problem_gradient(problem, "rs0", seed=seed, rs0_sigma=sigma, rs0_samples=n_samples)


def grad_analytical(problem: PoseProblem) -> TaskGradient:
    return problem_gradient(problem, "analytical")


def grad_smoothed(problem: PoseProblem, sampling: SamplingConfig | None = None, score: str = "distance",
                  full_tau: bool = False, seed: int = 0) -> TaskGradient:
    return problem_gradient(problem, "ours", seed=seed, sampling=sampling, score=score, full_tau=full_tau)


def witness_jacobians(state1, state2, candidates1, candidates2, t1: Pose, t2: Pose, full_tau: bool = False):
    """The four 3x6 witness Jacobians ``(J11, J22, J12, J21)``.

    ``Jab`` is the derivative of the smoothed witness on object ``a`` with
    respect to a right perturbation of pose ``b``.  The cross blocks chain
    the derivative of one softmax with respect to its reference point with
    the self Jacobian of the other object.
    """
    from .smoothing import smooth
    _, J1, M1 = smooth(candidates1, t1, state1.x_other, state1.score, state1.x_self, state1.sign, full_tau)
    _, J2, M2 = smooth(candidates2, t2, state2.x_other, state2.score, state2.x_self, state2.sign, full_tau)
    return J1, J2, M1 @ J2, M2 @ J1


def assemble_pose_gradients(jacobians, dl_dx1, dl_dx2, t1: Pose, t2: Pose, use_eg: bool = True,
                            optimize_t1: bool = False, dl_dt=None, targets_local=None) -> TaskGradient:
    """Pose gradients in algebra coordinates from witness Jacobians and loss partials.

    ``dl_dt``/``targets_local`` optionally add the rigid motion of the
    targets (pairs for objects 1 and 2).  EG transport is applied only when
    ``use_eg`` is set and ``optimize_t1`` is not.
    """
    J11, J22, J12, J21 = (np.asarray(J) for J in jacobians)
    g1, g2 = np.asarray(dl_dx1, float), np.asarray(dl_dx2, float)
    e1 = J11.T @ g1 + J21.T @ g2
    e2 = J22.T @ g2 + J12.T @ g1
    if dl_dt is not None:
        e1 = e1 + point_jacobian(t1, targets_local[0]).T @ np.asarray(dl_dt[0], float)
        e2 = e2 + point_jacobian(t2, targets_local[1]).T @ np.asarray(dl_dt[1], float)
    xi1 = Twist(0.5 * e1[:3], e1[3:])
    xi2 = Twist(0.5 * e2[:3], e2[3:])
    total = xi2 + equivalent_transport(t1, t2, xi1) if (use_eg and not optimize_t1) else xi2
    return TaskGradient(xi1, xi2, total)


class FrozenSurrogate:
    """Smoothed witnesses with candidate membership frozen at construction.

    ``points(T1, T2)`` re-evaluates both softmax surrogates at new poses.
    Object 1 is scored against the forward witness on object 2 shifted by
    the change of object 2's self-smoothed point (and vice versa), which is
    exactly the composition the cross Jacobians describe.  Used as the
    finite-difference oracle for :func:`witness_jacobians`.
    """

    def __init__(self, problem: PoseProblem, sampling: SamplingConfig | None = None,
                 score: str = "distance", full_tau: bool = False, seed: int = 0):
        from .smoothing import CandidateSet, gather_ball, smooth
        self._smooth = smooth
        self.problem = problem
        self.score = score
        self.full_tau = full_tau
        sampling = sampling or SamplingConfig()
        S1, S2 = problem.kernel_shapes()
        res_f, res_i = problem.forward()
        self.res_f, self.res_i = res_f, res_i
        self.x1f, self.x2f = res_f[1:4].copy(), res_f[4:7].copy()
        self.sign = -1.0 if res_f[0] < 0 else 1.0
        tw1, tw2 = problem.targets_world()
        cands = []
        for S, pose, xw, tw, piece in ((S1, problem.pose1, self.x1f, tw1, res_i[10]),
                                       (S2, problem.pose2, self.x2f, tw2, res_i[11])):
            xl = pose.R.T @ (xw - pose.t)
            if sampling.strategy == "neighbor":
                np_seed(seed)
                buf = np.empty((sampling.subsample + 1, 3))
                n = gather_neighbor(S.src_verts, S.adj_ptr, S.adj_idx, xl, sampling.k_ring, sampling.subsample, buf)
            else:
                alpha = sampling.radius(S.diag, tw, xw)
                buf = np.empty((sampling.max_candidates, 3))
                n = gather_ball(S.bank, S.bank_piece, S.centers, S.radii, xl, int(piece), float(alpha),
                                sampling.max_candidates, sampling.cross_piece, buf)
            local = buf[:n].copy()
            cands.append(CandidateSet(local, pose.act(local), int(piece), sampling.strategy))
        self.candidates = tuple(cands)
        # with a stop-gradient temperature the surrogate keeps tau at its base value
        self.tau = (self._run(0, problem.pose1, self.x2f, 0.0)[0].tau,
                    self._run(1, problem.pose2, self.x1f, 0.0)[0].tau)
        self.x1s0 = self._self_point(0, problem.pose1)
        self.x2s0 = self._self_point(1, problem.pose2)

    def _run(self, side, pose, x_other, tau=None):
        x_self = self.x1f if side == 0 else self.x2f
        if tau is None:
            tau = 0.0 if self.full_tau else self.tau[side]
        return self._smooth(self.candidates[side], pose, x_other, self.score, x_self, self.sign, self.full_tau, tau)

    def _self_point(self, side, pose):
        return self._run(side, pose, self.x2f if side == 0 else self.x1f)[0].x_star

    def points(self, pose1: Pose, pose2: Pose):
        ref1 = self.x2f + (self._self_point(1, pose2) - self.x2s0)
        ref2 = self.x1f + (self._self_point(0, pose1) - self.x1s0)
        return self._run(0, pose1, ref1)[0].x_star, self._run(1, pose2, ref2)[0].x_star

    def jacobians(self):
        s1 = self._run(0, self.problem.pose1, self.x2f)[0]
        s2 = self._run(1, self.problem.pose2, self.x1f)[0]
        return witness_jacobians(s1, s2, self.candidates[0], self.candidates[1],
                                 self.problem.pose1, self.problem.pose2, self.full_tau)


@nb.njit(cache=True)
def _seed_kernel(seed):
    np.random.seed(seed)


def np_seed(seed: int) -> None:
    """Seed numba's global RNG (the one used inside kernels)."""
    _seed_kernel(int(seed))


JACOBIAN_BLOCKS = ("J11", "J22", "J12", "J21")
ERROR_FLOOR = 1e-2


def jacobian_errors(surrogate: FrozenSurrogate, h: float = 1e-6, corrupt_cross: float = 0.0) -> dict:
    """Relative error of each analytic Jacobian block against central differences.

    The error is ``|J - J_fd|_F / max(|J_fd|_F, ERROR_FLOOR)``; the floor
    keeps blocks that vanish (for instance a cross block when both softmax
    weights saturate) from turning rounding noise into a large ratio.
    ``corrupt_cross`` scales the analytic cross blocks by ``1 + corrupt_cross``
    and exists so a checker can prove it detects a broken chain rule.
    """
    from .se3 import exp_map
    P = surrogate.problem
    J = list(surrogate.jacobians())
    if corrupt_cross:
        J[2] = J[2] * (1.0 + corrupt_cross)
        J[3] = J[3] * (1.0 + corrupt_cross)
    num = [np.zeros((3, 6)) for _ in range(4)]
    for side in (0, 1):
        for j in range(6):
            e = np.zeros(6)
            e[j] = h
            plus, minus = [P.pose1, P.pose2], [P.pose1, P.pose2]
            plus[side] = plus[side] @ exp_map(Twist.from_vector(e))
            minus[side] = minus[side] @ exp_map(Twist.from_vector(-e))
            a, b = surrogate.points(*plus), surrogate.points(*minus)
            d1, d2 = (a[0] - b[0]) / (2 * h), (a[1] - b[1]) / (2 * h)
            # side 0 perturbs T1: d x1 -> J11, d x2 -> J21; side 1 perturbs T2
            num[0 if side == 0 else 2][:, j] = d1
            num[3 if side == 0 else 1][:, j] = d2
    return {name: float(np.linalg.norm(J[k] - num[k]) / max(np.linalg.norm(num[k]), ERROR_FLOOR))
            for k, name in enumerate(JACOBIAN_BLOCKS)}
