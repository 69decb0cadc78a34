"""Brute-force reference implementations used only by the tests."""
import numpy as np
from scipy.spatial import ConvexHull


def point_segment(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def point_triangle(p, a, b, c):
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n)
    q = p - np.dot(p - a, n) * n
    # barycentric coordinates of the projection
    T = np.column_stack([b - a, c - a])
    uv = np.linalg.lstsq(T, q - a, rcond=None)[0]
    if uv[0] >= 0 and uv[1] >= 0 and uv.sum() <= 1:
        return abs(np.dot(p - a, n))
    return min(point_segment(p, a, b), point_segment(p, b, c), point_segment(p, c, a))


def segment_segment(a0, a1, b0, b1):
    best = min(point_segment(a0, b0, b1), point_segment(a1, b0, b1),
               point_segment(b0, a0, a1), point_segment(b1, a0, a1))
    d1, d2, r = a1 - a0, b1 - b0, a0 - b0
    M = np.array([[d1 @ d1, -d1 @ d2], [-d1 @ d2, d2 @ d2]])
    if abs(np.linalg.det(M)) > 1e-14 * (d1 @ d1) * (d2 @ d2):
        s, t = np.linalg.solve(M, [-d1 @ r, d2 @ r])
        if 0 <= s <= 1 and 0 <= t <= 1:
            best = min(best, np.linalg.norm(a0 + s * d1 - b0 - t * d2))
    return best


def _edges(faces):
    e = set()
    for f in faces:
        for i in range(3):
            e.add(tuple(sorted((f[i], f[(i + 1) % 3]))))
    return np.array(sorted(e))


def _point_segment_many(p, a, b):
    ab = b - a
    t = np.clip(np.einsum("...i,...i", p - a, ab) / np.maximum(np.einsum("...i,...i", ab, ab), 1e-300), 0, 1)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _points_triangles(P, T):
    """Distances from every point in P (n,3) to every triangle in T (m,3,3); shape (n, m)."""
    p = P[:, None, :]
    a, b, c = T[None, :, 0], T[None, :, 1], T[None, :, 2]
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    h = np.einsum("...i,...i", p - a, n)
    q = p - h[..., None] * n
    inside = np.ones(h.shape, bool)
    for u, v in ((a, b), (b, c), (c, a)):
        inside &= np.einsum("...i,...i", np.cross(v - u, q - u), n) >= 0
    edge = np.minimum(np.minimum(_point_segment_many(p, a, b), _point_segment_many(p, b, c)),
                      _point_segment_many(p, c, a))
    return np.where(inside, np.abs(h), edge)


def _segments_segments(A0, A1, B0, B1):
    a0, a1, b0, b1 = A0[:, None], A1[:, None], B0[None], B1[None]
    best = np.minimum.reduce([_point_segment_many(a0, b0, b1), _point_segment_many(a1, b0, b1),
                              _point_segment_many(b0, a0, a1), _point_segment_many(b1, a0, a1)])
    d1, d2, r = a1 - a0, b1 - b0, a0 - b0
    m11 = np.einsum("...i,...i", d1, d1)
    m22 = np.einsum("...i,...i", d2, d2)
    m12 = -np.einsum("...i,...i", d1, d2)
    r1, r2 = -np.einsum("...i,...i", d1, r), np.einsum("...i,...i", d2, r)
    det = m11 * m22 - m12 * m12
    ok = np.abs(det) > 1e-14 * m11 * m22
    det = np.where(ok, det, 1.0)
    s = (r1 * m22 - m12 * r2) / det
    t = (m11 * r2 - m12 * r1) / det
    ok &= (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
    inner = np.linalg.norm(a0 + s[..., None] * d1 - b0 - t[..., None] * d2, axis=-1)
    return np.where(ok, np.minimum(best, inner), best)


def polytope_distance(V1, F1, V2, F2):
    """Exhaustive closest-feature distance between two disjoint convex polytopes:
    vertex-face both ways and every edge-edge pair."""
    best = min(_points_triangles(V1, V2[F2]).min(), _points_triangles(V2, V1[F1]).min())
    E1, E2 = _edges(F1), _edges(F2)
    ee = _segments_segments(V1[E1[:, 0]], V1[E1[:, 1]], V2[E2[:, 0]], V2[E2[:, 1]])
    return float(min(best, ee.min()))


def penetration_depth(V1, V2):
    """Depth of the origin inside the Minkowski difference, from qhull facet planes."""
    M = (V1[:, None, :] - V2[None, :, :]).reshape(-1, 3)
    eq = ConvexHull(M).equations
    return float(np.min(-eq[:, 3]))


def world(piece, pose):
    return piece.vertices @ pose.R.T + pose.t
