"""Forward collision detection: support mapping, GJK, EPA and composite queries.

The kernels work on a packed array form of a :class:`~diffwitness.geom.CompositeShape`
(see :func:`pack`).  Result layout of the low-level kernels::

    res_f[0]      signed distance (negative when penetrating)
    res_f[1:4]    witness on shape 1 (world)
    res_f[4:7]    witness on shape 2 (world)
    res_f[7:10]   contact normal, pointing from shape 1 towards shape 2
    res_f[10:14]  barycentric weights of the terminal simplex
    res_i[0]      flags (PENETRATING | NOT_CONVERGED | DEGENERATE)
    res_i[1]      simplex size
    res_i[2:6]    support vertex ids on shape 1 (global into ``verts``)
    res_i[6:10]   support vertex ids on shape 2
    res_i[10:12]  piece indices
    res_i[12]     number of narrow-phase pair queries evaluated
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np

from .geom import CompositeShape, ConvexPiece
from .se3 import Pose

PENETRATING = 1
NOT_CONVERGED = 2
DEGENERATE = 4

GJK_MAX_ITER = 128
EPA_MAX_EXPANSIONS = 255
EPA_MAX_FACES = 4 * (EPA_MAX_EXPANSIONS + 8)
EPA_MAX_VERTS = EPA_MAX_EXPANSIONS + 8
TOUCH_EPS = 1e-12
GJK_REL_TOL = 1e-10
NF, NI = 14, 13


class PackedShape(NamedTuple):
    verts: np.ndarray      # (V, 3) all piece vertices, shape frame
    pstart: np.ndarray     # (P + 1,) vertex offsets per piece
    centers: np.ndarray    # (P, 3) bounding-sphere centers
    radii: np.ndarray      # (P,)
    faces: np.ndarray      # (F, 3) global vertex ids, outward
    fstart: np.ndarray     # (P + 1,) face offsets per piece


def pack(shape: CompositeShape) -> PackedShape:
    verts, faces, pstart, fstart = [], [], [0], [0]
    for piece in shape.pieces:
        faces.append(piece.faces + pstart[-1])
        verts.append(piece.vertices)
        pstart.append(pstart[-1] + len(piece.vertices))
        fstart.append(fstart[-1] + len(piece.faces))
    return PackedShape(
        np.ascontiguousarray(np.concatenate(verts)),
        np.array(pstart, dtype=np.int64),
        np.array([p.centroid for p in shape.pieces]),
        np.array([p.bounding_radius for p in shape.pieces]),
        np.ascontiguousarray(np.concatenate(faces)),
        np.array(fstart, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _support(verts, lo, hi, R, t, d):
    # d in world frame; ties broken by lowest index
    dl0 = R[0, 0] * d[0] + R[1, 0] * d[1] + R[2, 0] * d[2]
    dl1 = R[0, 1] * d[0] + R[1, 1] * d[1] + R[2, 1] * d[2]
    dl2 = R[0, 2] * d[0] + R[1, 2] * d[1] + R[2, 2] * d[2]
    best = -np.inf
    bi = lo
    for i in range(lo, hi):
        s = verts[i, 0] * dl0 + verts[i, 1] * dl1 + verts[i, 2] * dl2
        if s > best:
            best = s
            bi = i
    return bi


@nb.njit(cache=True)
def _world(verts, i, R, t):
    return R @ verts[i] + t


@nb.njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@nb.njit(cache=True)
def _closest_segment(a, b, lam):
    ab = b - a
    den = _dot(ab, ab)
    t = -_dot(a, ab) / den if den > 0 else 0.0
    if t <= 0.0:
        lam[0], lam[1] = 1.0, 0.0
        return 1
    if t >= 1.0:
        lam[0], lam[1] = 0.0, 1.0
        return 2
    lam[0], lam[1] = 1.0 - t, t
    return 3


@nb.njit(cache=True)
def _closest_triangle(a, b, c, lam):
    """Barycentric weights of the point of triangle abc closest to the origin."""
    ab = b - a
    ac = c - a
    d1 = -_dot(ab, a)
    d2 = -_dot(ac, a)
    lam[0], lam[1], lam[2] = 0.0, 0.0, 0.0
    if d1 <= 0.0 and d2 <= 0.0:
        lam[0] = 1.0
        return
    d3 = -_dot(ab, b)
    d4 = -_dot(ac, b)
    if d3 >= 0.0 and d4 <= d3:
        lam[1] = 1.0
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        lam[0], lam[1] = 1.0 - v, v
        return
    d5 = -_dot(ab, c)
    d6 = -_dot(ac, c)
    if d6 >= 0.0 and d5 <= d6:
        lam[2] = 1.0
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        lam[0], lam[2] = 1.0 - w, w
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        lam[1], lam[2] = 1.0 - w, w
        return
    den = va + vb + vc
    if den == 0.0:
        # degenerate triangle: best of its edges
        tmp = np.zeros(2)
        best = np.inf
        for e in range(3):
            i = e
            j = (e + 1) % 3
            p = a if i == 0 else (b if i == 1 else c)
            q = a if j == 0 else (b if j == 1 else c)
            _closest_segment(p, q, tmp)
            x = tmp[0] * p + tmp[1] * q
            dd = _dot(x, x)
            if dd < best:
                best = dd
                lam[0], lam[1], lam[2] = 0.0, 0.0, 0.0
                lam[i] = tmp[0]
                lam[j] = tmp[1]
        return
    v = vb / den
    w = vc / den
    lam[0], lam[1], lam[2] = 1.0 - v - w, v, w


@nb.njit(cache=True)
def _closest_simplex(W, k, lam):
    """Closest point of the simplex W[:k] to the origin.

    Writes barycentric weights into lam; returns True when the origin lies
    inside a tetrahedron (k == 4).
    """
    for i in range(4):
        lam[i] = 0.0
    if k == 1:
        lam[0] = 1.0
        return False
    if k == 2:
        _closest_segment(W[0], W[1], lam)
        return False
    if k == 3:
        _closest_triangle(W[0], W[1], W[2], lam)
        return False
    inside = True
    best = np.inf
    tmp = np.zeros(3)
    faces = ((0, 1, 2, 3), (0, 1, 3, 2), (0, 2, 3, 1), (1, 2, 3, 0))
    for f in faces:
        i, j, m, o = f
        n = np.cross(W[j] - W[i], W[m] - W[i])
        sp = -_dot(W[i], n)
        so = _dot(W[o] - W[i], n)
        scale = np.sqrt(_dot(n, n)) * (np.sqrt(_dot(W[o] - W[i], W[o] - W[i])) + 1e-300)
        outside = sp * so < 0.0 or abs(so) <= 1e-14 * scale
        if outside:
            inside = False
            _closest_triangle(W[i], W[j], W[m], tmp)
            x = tmp[0] * W[i] + tmp[1] * W[j] + tmp[2] * W[m]
            dd = _dot(x, x)
            if dd < best:
                best = dd
                for q in range(4):
                    lam[q] = 0.0
                lam[i] = tmp[0]
                lam[j] = tmp[1]
                lam[m] = tmp[2]
    if inside:
        return True
    return False


@nb.njit(cache=True)
def _compact(W, A, B, IA, IB, lam, k):
    n = 0
    for i in range(k):
        if lam[i] > 0.0:
            W[n] = W[i]
            A[n] = A[i]
            B[n] = B[i]
            IA[n] = IA[i]
            IB[n] = IB[i]
            lam[n] = lam[i]
            n += 1
    for i in range(n, 4):
        lam[i] = 0.0
    return n


@nb.njit(cache=True)
def gjk_kernel(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, d0, W, A, B, IA, IB, lam, last_dir):
    """GJK distance.  Returns (k, status, dist) with status 0 separated,
    1 intersecting, 2 iteration limit reached."""
    ia = _support(VA, loA, hiA, RA, tA, -d0)
    ib = _support(VB, loB, hiB, RB, tB, d0)
    A[0] = _world(VA, ia, RA, tA)
    B[0] = _world(VB, ib, RB, tB)
    W[0] = A[0] - B[0]
    IA[0] = ia
    IB[0] = ib
    lam[0] = 1.0
    k = 1
    v = W[0].copy()
    last_dir[:] = d0
    pW = np.empty((4, 3))
    pA = np.empty((4, 3))
    pB = np.empty((4, 3))
    pIA = np.empty(4, np.int64)
    pIB = np.empty(4, np.int64)
    plam = np.empty(4)
    for it in range(GJK_MAX_ITER):
        vv = _dot(v, v)
        if vv <= (TOUCH_EPS * 1e-2) ** 2:
            return k, 1, 0.0
        last_dir[:] = v
        d = -v
        ia = _support(VA, loA, hiA, RA, tA, d)
        ib = _support(VB, loB, hiB, RB, tB, -d)
        for q in range(k):
            if IA[q] == ia and IB[q] == ib:
                return k, 0, np.sqrt(vv)
        a = _world(VA, ia, RA, tA)
        b = _world(VB, ib, RB, tB)
        w = a - b
        if vv - _dot(v, w) <= GJK_REL_TOL * vv:
            return k, 0, np.sqrt(vv)
        pW[:k] = W[:k]
        pA[:k] = A[:k]
        pB[:k] = B[:k]
        pIA[:k] = IA[:k]
        pIB[:k] = IB[:k]
        plam[:] = lam
        pk = k
        W[k] = w
        A[k] = a
        B[k] = b
        IA[k] = ia
        IB[k] = ib
        k += 1
        inside = _closest_simplex(W, k, lam)
        if inside:
            return k, 1, 0.0
        k = _compact(W, A, B, IA, IB, lam, k)
        nv = np.zeros(3)
        for q in range(k):
            nv += lam[q] * W[q]
        nvv = _dot(nv, nv)
        if nvv >= vv:
            # no progress: keep the previous simplex
            W[:pk] = pW[:pk]
            A[:pk] = pA[:pk]
            B[:pk] = pB[:pk]
            IA[:pk] = pIA[:pk]
            IB[:pk] = pIB[:pk]
            lam[:] = plam
            return pk, 0, np.sqrt(vv)
        v = nv
    return k, 2, np.sqrt(_dot(v, v))


@nb.njit(cache=True)
def _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, d):
    ia = _support(VA, loA, hiA, RA, tA, d)
    ib = _support(VB, loB, hiB, RB, tB, -d)
    a = _world(VA, ia, RA, tA)
    b = _world(VB, ib, RB, tB)
    return ia, ib, a, b


@nb.njit(cache=True)
def _orthonormal(d):
    if abs(d[0]) < 0.57:
        e = np.array([1.0, 0.0, 0.0])
    elif abs(d[1]) < 0.57:
        e = np.array([0.0, 1.0, 0.0])
    else:
        e = np.array([0.0, 0.0, 1.0])
    u = np.cross(d, e)
    u /= np.sqrt(_dot(u, u))
    return u, np.cross(d, u)


@nb.njit(cache=True)
def _blow_up(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, W, A, B, IA, IB, k, eps):
    """Grow a simplex touching the origin into a tetrahedron."""
    if k == 1:
        for ax in range(6):
            d = np.zeros(3)
            d[ax % 3] = 1.0 if ax < 3 else -1.0
            ia, ib, a, b = _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, d)
            w = a - b
            if np.sqrt(_dot(w - W[0], w - W[0])) > eps:
                W[1], A[1], B[1], IA[1], IB[1] = w, a, b, ia, ib
                k = 2
                break
        if k == 1:
            return k
    if k == 2:
        dd = W[1] - W[0]
        dd /= np.sqrt(_dot(dd, dd))
        u, u2 = _orthonormal(dd)
        for s in range(6):
            ang = np.pi * s / 3.0
            d = np.cos(ang) * u + np.sin(ang) * u2
            ia, ib, a, b = _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, d)
            w = a - b
            r = w - W[0]
            off = r - _dot(r, dd) * dd
            if np.sqrt(_dot(off, off)) > eps:
                W[2], A[2], B[2], IA[2], IB[2] = w, a, b, ia, ib
                k = 3
                break
        if k == 2:
            return k
    if k == 3:
        n = np.cross(W[1] - W[0], W[2] - W[0])
        n /= np.sqrt(_dot(n, n))
        ia1, ib1, a1, b1 = _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, n)
        ia2, ib2, a2, b2 = _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, -n)
        h1 = abs(_dot(a1 - b1 - W[0], n))
        h2 = abs(_dot(a2 - b2 - W[0], n))
        if h1 >= h2:
            if h1 <= eps:
                return k
            W[3], A[3], B[3], IA[3], IB[3] = a1 - b1, a1, b1, ia1, ib1
        else:
            if h2 <= eps:
                return k
            W[3], A[3], B[3], IA[3], IB[3] = a2 - b2, a2, b2, ia2, ib2
        k = 4
    return k


@nb.njit(cache=True)
def _set_face(PV, fv, fn, fd, f, i, j, m, interior):
    n = np.cross(PV[j] - PV[i], PV[m] - PV[i])
    nn = np.sqrt(_dot(n, n))
    if nn <= 0.0:
        return False
    n /= nn
    if interior is not None:
        if _dot(n, interior - PV[i]) > 0.0:
            n = -n
            j, m = m, j
    fv[f, 0], fv[f, 1], fv[f, 2] = i, j, m
    fn[f] = n
    fd[f] = _dot(n, PV[i])
    return True


@nb.njit(cache=True)
def epa_kernel(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, W, A, B, IA, IB, k, tol, res_f, res_i):
    """Penetration depth from a simplex enclosing the origin.

    Fills the result arrays; returns flags.
    """
    flags = PENETRATING
    eps = tol
    k = _blow_up(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, W, A, B, IA, IB, k, eps)
    if k < 4:
        # flat Minkowski difference: report zero depth at the simplex point
        lam = np.zeros(4)
        _closest_simplex(W, k, lam)
        x1 = np.zeros(3)
        x2 = np.zeros(3)
        for q in range(k):
            x1 += lam[q] * A[q]
            x2 += lam[q] * B[q]
        res_f[0] = 0.0
        res_f[1:4] = x1
        res_f[4:7] = x2
        res_f[7:10] = 0.0
        res_f[10:14] = lam
        res_i[1] = k
        res_i[2:2 + k] = IA[:k]
        res_i[6:6 + k] = IB[:k]
        return flags | DEGENERATE

    PV = np.empty((EPA_MAX_VERTS, 3))
    PA = np.empty((EPA_MAX_VERTS, 3))
    PB = np.empty((EPA_MAX_VERTS, 3))
    PIA = np.empty(EPA_MAX_VERTS, np.int64)
    PIB = np.empty(EPA_MAX_VERTS, np.int64)
    for q in range(4):
        PV[q], PA[q], PB[q], PIA[q], PIB[q] = W[q], A[q], B[q], IA[q], IB[q]
    nv = 4
    fv = np.empty((EPA_MAX_FACES, 3), np.int64)
    fn = np.empty((EPA_MAX_FACES, 3))
    fd = np.empty(EPA_MAX_FACES)
    alive = np.zeros(EPA_MAX_FACES, np.bool_)
    interior = 0.25 * (PV[0] + PV[1] + PV[2] + PV[3])
    nf = 0
    for (i, j, m) in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        if _set_face(PV, fv, fn, fd, nf, i, j, m, interior):
            alive[nf] = True
            nf += 1
        else:
            flags |= DEGENERATE
    edges = np.empty((3 * EPA_MAX_FACES, 2), np.int64)
    best = -1
    converged = False
    for it in range(EPA_MAX_EXPANSIONS + 1):
        best = -1
        bd = np.inf
        for f in range(nf):
            if alive[f] and fd[f] < bd:
                bd = fd[f]
                best = f
        if best < 0:
            flags |= DEGENERATE
            break
        n = fn[best]
        ia, ib, a, b = _md_support(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, n)
        w = a - b
        if _dot(w, n) - bd <= tol:
            converged = True
            break
        dup = False
        for q in range(nv):
            if PIA[q] == ia and PIB[q] == ib:
                dup = True
                break
        if dup:
            converged = True
            break
        if it == EPA_MAX_EXPANSIONS or nv >= EPA_MAX_VERTS:
            break
        PV[nv], PA[nv], PB[nv], PIA[nv], PIB[nv] = w, a, b, ia, ib
        new = nv
        nv += 1
        ne = 0
        for f in range(nf):
            if alive[f] and _dot(fn[f], w - PV[fv[f, 0]]) > 1e-3 * tol:
                alive[f] = False
                for e in range(3):
                    edges[ne, 0] = fv[f, e]
                    edges[ne, 1] = fv[f, (e + 1) % 3]
                    ne += 1
        if alive[best]:
            alive[best] = False
            for e in range(3):
                edges[ne, 0] = fv[best, e]
                edges[ne, 1] = fv[best, (e + 1) % 3]
                ne += 1
        ok = True
        for e in range(ne):
            i = edges[e, 0]
            j = edges[e, 1]
            shared = False
            for g in range(ne):
                if edges[g, 0] == j and edges[g, 1] == i:
                    shared = True
                    break
            if shared:
                continue
            if nf >= EPA_MAX_FACES:
                ok = False
                break
            if _set_face(PV, fv, fn, fd, nf, i, j, new, None):
                alive[nf] = True
                nf += 1
            else:
                flags |= DEGENERATE
        if not ok:
            flags |= DEGENERATE
            break
    if not converged:
        flags |= NOT_CONVERGED
    if best < 0:
        res_f[0] = 0.0
        res_i[1] = 0
        return flags | DEGENERATE
    i, j, m = fv[best, 0], fv[best, 1], fv[best, 2]
    lam3 = np.zeros(3)
    _closest_triangle(PV[i], PV[j], PV[m], lam3)
    x1 = lam3[0] * PA[i] + lam3[1] * PA[j] + lam3[2] * PA[m]
    x2 = lam3[0] * PB[i] + lam3[1] * PB[j] + lam3[2] * PB[m]
    res_f[0] = -max(fd[best], 0.0)
    res_f[1:4] = x1
    res_f[4:7] = x2
    res_f[7:10] = fn[best]
    res_f[10] = lam3[0]
    res_f[11] = lam3[1]
    res_f[12] = lam3[2]
    res_f[13] = 0.0
    res_i[1] = 3
    res_i[2], res_i[3], res_i[4], res_i[5] = PIA[i], PIA[j], PIA[m], -1
    res_i[6], res_i[7], res_i[8], res_i[9] = PIB[i], PIB[j], PIB[m], -1
    return flags


@nb.njit(cache=True)
def pair_kernel(VA, loA, hiA, cA, rA, RA, tA, VB, loB, hiB, cB, rB, RB, tB, res_f, res_i):
    """Witness pair between two convex pieces; fills result arrays."""
    W = np.zeros((4, 3))
    A = np.zeros((4, 3))
    B = np.zeros((4, 3))
    IA = -np.ones(4, np.int64)
    IB = -np.ones(4, np.int64)
    lam = np.zeros(4)
    last = np.zeros(3)
    d0 = (RA @ cA + tA) - (RB @ cB + tB)
    if _dot(d0, d0) == 0.0:
        d0[0] = 1.0
    k, status, dist = gjk_kernel(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, d0, W, A, B, IA, IB, lam, last)
    res_i[2:10] = -1
    res_f[10:14] = 0.0
    if status != 1:
        x1 = np.zeros(3)
        x2 = np.zeros(3)
        for q in range(k):
            x1 += lam[q] * A[q]
            x2 += lam[q] * B[q]
        diff = x2 - x1
        nd = np.sqrt(_dot(diff, diff))
        res_f[0] = nd
        res_f[1:4] = x1
        res_f[4:7] = x2
        if nd > TOUCH_EPS:
            res_f[7:10] = diff / nd
        else:
            ln = np.sqrt(_dot(last, last))
            res_f[7:10] = 0.0
            if ln > 0:
                res_f[7:10] = -last / ln
        res_f[10:14] = lam
        res_i[0] = NOT_CONVERGED if status == 2 else 0
        res_i[1] = k
        res_i[2:2 + k] = IA[:k]
        res_i[6:6 + k] = IB[:k]
        return
    tol = 1e-9 * (rA + rB)
    flags = epa_kernel(VA, loA, hiA, RA, tA, VB, loB, hiB, RB, tB, W, A, B, IA, IB, k, tol, res_f, res_i)
    if -res_f[0] < TOUCH_EPS:
        ln = np.sqrt(_dot(last, last))
        if ln > 0:
            res_f[7:10] = -last / ln
    res_i[0] = flags


@nb.njit(cache=True)
def composite_kernel(V1, ps1, C1, r1, R1, t1, V2, ps2, C2, r2, R2, t2, res_f, res_i, exhaustive):
    P1 = ps1.shape[0] - 1
    P2 = ps2.shape[0] - 1
    npairs = P1 * P2
    lb = np.empty(npairs)
    order_i = np.empty(npairs, np.int64)
    for i in range(P1):
        ci = R1 @ C1[i] + t1
        for j in range(P2):
            cj = R2 @ C2[j] + t2
            dc = ci - cj
            lb[i * P2 + j] = np.sqrt(_dot(dc, dc)) - r1[i] - r2[j]
    order = np.argsort(lb, kind="mergesort")
    tf = np.empty(NF)
    ti = np.empty(NI, np.int64)
    best_sd = np.inf
    best_pair = npairs
    count = 0
    any_flags = 0
    for q in range(npairs):
        pid = order[q]
        if not exhaustive:
            if lb[pid] > best_sd or (lb[pid] == best_sd and pid > best_pair):
                break
        i = pid // P2
        j = pid % P2
        ti[:] = 0
        pair_kernel(V1, ps1[i], ps1[i + 1], C1[i], r1[i], R1, t1,
                    V2, ps2[j], ps2[j + 1], C2[j], r2[j], R2, t2, tf, ti)
        count += 1
        any_flags |= ti[0] & NOT_CONVERGED
        sd = tf[0]
        if sd < best_sd or (sd == best_sd and pid < best_pair):
            best_sd = sd
            best_pair = pid
            res_f[:] = tf
            res_i[:] = ti
            res_i[10] = i
            res_i[11] = j
    res_i[0] |= any_flags
    res_i[12] = count


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True, eq=False)
class WitnessResult:
    x1_world: np.ndarray
    x2_world: np.ndarray
    x1_local: np.ndarray
    x2_local: np.ndarray
    piece1: int
    piece2: int
    signed_distance: float
    normal: np.ndarray
    flags: int = 0
    simplex_ids1: tuple = ()
    simplex_ids2: tuple = ()
    simplex_weights: tuple = ()
    pairs_evaluated: int = 1

    @property
    def penetrating(self) -> bool:
        return self.signed_distance < 0.0

    @property
    def converged(self) -> bool:
        return not self.flags & NOT_CONVERGED

    def mirrored(self) -> "WitnessResult":
        return WitnessResult(self.x2_world, self.x1_world, self.x2_local, self.x1_local,
                             self.piece2, self.piece1, self.signed_distance, -self.normal, self.flags,
                             self.simplex_ids2, self.simplex_ids1, self.simplex_weights, self.pairs_evaluated)


@dataclass(frozen=True, eq=False)
class Intersecting:
    """GJK outcome when the shapes overlap; carries the seed simplex for EPA."""
    W: np.ndarray
    A: np.ndarray
    B: np.ndarray
    IA: np.ndarray
    IB: np.ndarray
    size: int


def _unpack(res_f, res_i, t1: Pose, t2: Pose, offset1=0, offset2=0) -> WitnessResult:
    x1 = res_f[1:4].copy()
    x2 = res_f[4:7].copy()
    k = int(res_i[1])
    w = tuple(float(x) for x in res_f[10:10 + k])
    return WitnessResult(
        x1, x2,
        t1.rotation.T @ (x1 - t1.translation),
        t2.rotation.T @ (x2 - t2.translation),
        int(res_i[10]), int(res_i[11]), float(res_f[0]), res_f[7:10].copy(), int(res_i[0]),
        tuple(int(i) - offset1 for i in res_i[2:2 + k]),
        tuple(int(i) - offset2 for i in res_i[6:6 + k]),
        w, int(res_i[12]),
    )


def support(piece: ConvexPiece, pose: Pose, direction) -> tuple[np.ndarray, int]:
    d = np.asarray(direction, dtype=np.float64)
    if not np.linalg.norm(d) > 0:
        raise ValueError("support direction must be nonzero")
    V = np.ascontiguousarray(piece.vertices)
    i = _support(V, 0, len(V), pose.rotation, pose.translation, d)
    return pose.rotation @ V[i] + pose.translation, int(i)


def gjk_distance(p1: ConvexPiece, t1: Pose, p2: ConvexPiece, t2: Pose) -> WitnessResult | Intersecting:
    V1, V2 = np.ascontiguousarray(p1.vertices), np.ascontiguousarray(p2.vertices)
    W, A, B = np.zeros((4, 3)), np.zeros((4, 3)), np.zeros((4, 3))
    IA, IB, lam, last = -np.ones(4, np.int64), -np.ones(4, np.int64), np.zeros(4), np.zeros(3)
    d0 = t1.act(p1.centroid) - t2.act(p2.centroid)
    if not np.any(d0):
        d0 = np.array([1.0, 0.0, 0.0])
    k, status, dist = gjk_kernel(V1, 0, len(V1), t1.R, t1.t, V2, 0, len(V2), t2.R, t2.t, d0,
                                 W, A, B, IA, IB, lam, last)
    if status == 1:
        return Intersecting(W.copy(), A.copy(), B.copy(), IA.copy(), IB.copy(), int(k))
    x1 = lam[:k] @ A[:k]
    x2 = lam[:k] @ B[:k]
    n = (x2 - x1) / dist if dist > TOUCH_EPS else -last / max(np.linalg.norm(last), 1e-300)
    return WitnessResult(x1, x2, t1.R.T @ (x1 - t1.t), t2.R.T @ (x2 - t2.t), 0, 0, float(dist), n,
                         NOT_CONVERGED if status == 2 else 0,
                         tuple(int(i) for i in IA[:k]), tuple(int(i) for i in IB[:k]),
                         tuple(float(x) for x in lam[:k]))


def epa_penetration(p1: ConvexPiece, t1: Pose, p2: ConvexPiece, t2: Pose, seed: Intersecting) -> WitnessResult:
    V1, V2 = np.ascontiguousarray(p1.vertices), np.ascontiguousarray(p2.vertices)
    res_f, res_i = np.zeros(NF), np.zeros(NI, np.int64)
    tol = 1e-9 * (p1.bounding_radius + p2.bounding_radius)
    W, A, B, IA, IB = (x.copy() for x in (seed.W, seed.A, seed.B, seed.IA, seed.IB))
    flags = epa_kernel(V1, 0, len(V1), t1.R, t1.t, V2, 0, len(V2), t2.R, t2.t, W, A, B, IA, IB,
                       seed.size, tol, res_f, res_i)
    res_i[0] = flags
    return _unpack(res_f, res_i, t1, t2)


def composite_witness(s1, t1: Pose, s2, t2: Pose, exhaustive: bool = False) -> WitnessResult:
    """Witness pair between two composite shapes.

    ``s1``/``s2`` may be :class:`CompositeShape` or :class:`PackedShape`.
    With ``exhaustive`` every piece pair goes through the narrow phase.
    """
    a = s1 if isinstance(s1, PackedShape) else pack(s1)
    b = s2 if isinstance(s2, PackedShape) else pack(s2)
    res_f, res_i = np.zeros(NF), np.zeros(NI, np.int64)
    composite_kernel(a.verts, a.pstart, a.centers, a.radii, t1.R, t1.t,
                     b.verts, b.pstart, b.centers, b.radii, t2.R, t2.t, res_f, res_i, exhaustive)
    return _unpack(res_f, res_i, t1, t2)
