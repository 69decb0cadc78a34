"""Softmax surrogate of witness points.

A witness point ``x1`` is the maximiser of a score over the surface of
object 1.  Replacing the argmax by a softmax over a handful of candidate
points ``v_i`` gives a smooth point ``x1* = sum_i w_i v_i`` whose derivative
with respect to the pose of either object is available in closed form.

Two scores are provided:

* distance score  ``u_i = -|v_i - x2|^2`` (works for any shape),
* direction score ``u_i = <v_i, y>`` with ``y`` the separation direction
  (the support-function view, only meaningful for convex shapes).

The temperature is ``tau = std(u)`` (population std, floored at 1e-12).

The heavy lifting happens in numba kernels (``gather_ball``,
``gather_neighbor``, ``smooth_kernel``) that the optimisation loop calls
directly; the dataclass API below wraps them for single evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .geom import SurfacePointBank, TriMesh
from .se3 import Pose

TAU_FLOOR = 1e-12
DUPLICATE_TOL2 = 1e-24      # squared distance under which a bank point equals the witness
DEGENERATE_GAP = 1e-12

SCORE_DISTANCE = 0
SCORE_DIRECTION = 1

NEIGHBOR = 0
FIXED = 1
ADAPTIVE = 2
STRATEGIES = {"neighbor": NEIGHBOR, "fixed": FIXED, "adaptive": ADAPTIVE}
SCORES = {"distance": SCORE_DISTANCE, "direction": SCORE_DIRECTION}


@dataclass(frozen=True)
class SamplingConfig:
    """Candidate selection settings.

    ``alpha`` is used by the fixed strategy; ``None`` means ``0.05 * diag`` of
    the object being smoothed.  ``epsilon`` is the lower bound of the adaptive
    radius.  ``k_ring`` and ``subsample`` only matter for the neighbor
    strategy.
    """

    strategy: str = "adaptive"
    alpha: float | None = None
    epsilon: float = 1e-3
    max_candidates: int = 16
    k_ring: int = 5
    subsample: int = 16
    cross_piece: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_candidates < 2:
            raise ValueError("max_candidates must be >= 2")
        if self.k_ring < 0 or self.subsample < 1:
            raise ValueError("k_ring must be >= 0 and subsample >= 1")

    def radius(self, diag: float, target_world=None, witness_world=None) -> float:
        if self.strategy == "fixed":
            return self.alpha if self.alpha is not None else 0.05 * diag
        if self.strategy == "adaptive":
            gap = float(np.linalg.norm(np.asarray(target_world) - np.asarray(witness_world)))
            return max(gap, self.epsilon)
        return np.inf


@dataclass(frozen=True, eq=False)
class CandidateSet:
    points_local: np.ndarray
    points_world: np.ndarray
    piece: int
    strategy: str

    def __len__(self):
        return len(self.points_local)


@dataclass(frozen=True, eq=False)
class SmoothingState:
    """Result of one softmax evaluation.

    ``x_other`` is the reference point the scores were computed against
    (the forward witness on the other object); ``x_self`` and ``sign`` are
    only used by the direction score.
    """

    u: np.ndarray
    tau: float
    w: np.ndarray
    x_star: np.ndarray
    x_other: np.ndarray
    score: str = "distance"
    x_self: np.ndarray | None = None
    sign: float = 1.0


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def gather_ball(bank, bank_piece, centers, radii, x_local, piece, alpha, max_candidates, cross_piece, out):
    """Fill ``out`` with the witness followed by its nearest bank points within ``alpha``.

    Only points owned by ``piece`` (or, with ``cross_piece``, by pieces whose
    bounding sphere meets the alpha ball) are eligible.  At most
    ``max_candidates`` points are kept in total; returns that count.
    """
    n_pieces = centers.shape[0]
    ok = np.zeros(n_pieces, dtype=np.bool_)
    for p in range(n_pieces):
        if p == piece:
            ok[p] = True
        elif cross_piece:
            d = np.sqrt((centers[p, 0] - x_local[0]) ** 2 + (centers[p, 1] - x_local[1]) ** 2
                        + (centers[p, 2] - x_local[2]) ** 2)
            ok[p] = d <= radii[p] + alpha
    k_max = max_candidates - 1
    best_d = np.empty(k_max)
    best_i = np.empty(k_max, dtype=np.int64)
    cnt = 0
    a2 = alpha * alpha
    nearest_i = -1
    nearest_d = np.inf
    for i in range(bank.shape[0]):
        if not ok[bank_piece[i]]:
            continue
        d2 = (bank[i, 0] - x_local[0]) ** 2 + (bank[i, 1] - x_local[1]) ** 2 + (bank[i, 2] - x_local[2]) ** 2
        if d2 <= DUPLICATE_TOL2:
            continue
        if d2 < nearest_d:
            nearest_d = d2
            nearest_i = i
        if d2 > a2:
            continue
        if cnt < k_max:
            j = cnt
            cnt += 1
        elif d2 < best_d[k_max - 1]:
            j = k_max - 1
        else:
            continue
        # insertion keeps (distance, index) sorted, ties by lower index
        while j > 0 and best_d[j - 1] > d2:
            best_d[j] = best_d[j - 1]
            best_i[j] = best_i[j - 1]
            j -= 1
        best_d[j] = d2
        best_i[j] = i
    out[0, :] = x_local
    if cnt == 0:
        if nearest_i < 0:
            return 1
        out[1, :] = bank[nearest_i]
        return 2
    for j in range(cnt):
        out[j + 1, :] = bank[best_i[j]]
    return cnt + 1


@nb.njit(cache=True)
def nearest_vertex(verts, x):
    best = np.inf
    bi = 0
    for i in range(verts.shape[0]):
        d2 = (verts[i, 0] - x[0]) ** 2 + (verts[i, 1] - x[1]) ** 2 + (verts[i, 2] - x[2]) ** 2
        if d2 < best:
            best = d2
            bi = i
    return bi


@nb.njit(cache=True)
def ring_vertices(adj_ptr, adj_idx, root, k_ring):
    """Vertices within ``k_ring`` hops of ``root`` in BFS order (root first)."""
    n = adj_ptr.shape[0] - 1
    depth = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    queue[0] = root
    depth[root] = 0
    head, tail = 0, 1
    while head < tail:
        v = queue[head]
        head += 1
        if depth[v] >= k_ring:
            continue
        for e in range(adj_ptr[v], adj_ptr[v + 1]):
            u = adj_idx[e]
            if depth[u] < 0:
                depth[u] = depth[v] + 1
                queue[tail] = u
                tail += 1
    return queue[:tail].copy()


@nb.njit(cache=True)
def gather_neighbor(src_verts, adj_ptr, adj_idx, x_local, k_ring, subsample, out):
    """Witness, its snapped mesh vertex, and a random subsample of the k-ring.

    Uses numba's global RNG (seed it with ``np.random.seed`` inside a kernel).
    ``subsample`` counts the snapped vertex, so at most ``subsample + 1``
    points are written.
    """
    root = nearest_vertex(src_verts, x_local)
    ring = ring_vertices(adj_ptr, adj_idx, root, k_ring)
    out[0, :] = x_local
    n = 1
    d2 = ((src_verts[root, 0] - x_local[0]) ** 2 + (src_verts[root, 1] - x_local[1]) ** 2
           + (src_verts[root, 2] - x_local[2]) ** 2)
    if d2 > DUPLICATE_TOL2:
        out[n, :] = src_verts[root]
        n += 1
    m = ring.shape[0] - 1
    take = min(subsample - 1, m)
    others = ring[1:]
    for j in range(take):
        r = j + np.random.randint(0, m - j)
        tmp = others[j]
        others[j] = others[r]
        others[r] = tmp
        out[n, :] = src_verts[others[j]]
        n += 1
    return n


@nb.njit(cache=True)
def smooth_kernel(C, n, R, t, x_self, x_other, score_mode, sign, full_tau, V, u, w, x_star, J, M, tau_fixed=0.0):
    """Softmax surrogate and its first-order building blocks.

    ``C[:n]`` are candidate points in the object's local frame and ``(R, t)``
    its pose.  Writes world candidates ``V``, scores ``u``, weights ``w`` and
    the smoothed point ``x_star``.  ``J`` (3x6) receives the derivative of
    ``x_star`` with respect to a right perturbation of the pose with the
    reference point held fixed; ``M`` (3x3) receives the derivative of
    ``x_star`` with respect to the reference point ``x_other``.

    A positive ``tau_fixed`` replaces ``std(u)`` (a frozen temperature).
    Returns the temperature.
    """
    for i in range(n):
        for r in range(3):
            V[i, r] = R[r, 0] * C[i, 0] + R[r, 1] * C[i, 1] + R[r, 2] * C[i, 2] + t[r]
    y = np.zeros(3)
    degenerate = False
    if score_mode == SCORE_DIRECTION:
        gap = np.sqrt((x_other[0] - x_self[0]) ** 2 + (x_other[1] - x_self[1]) ** 2 + (x_other[2] - x_self[2]) ** 2)
        if gap < DEGENERATE_GAP:
            degenerate = True
        else:
            for r in range(3):
                y[r] = sign * (x_other[r] - x_self[r])
    mean = 0.0
    for i in range(n):
        if score_mode == SCORE_DISTANCE:
            u[i] = -((V[i, 0] - x_other[0]) ** 2 + (V[i, 1] - x_other[1]) ** 2 + (V[i, 2] - x_other[2]) ** 2)
        else:
            u[i] = V[i, 0] * y[0] + V[i, 1] * y[1] + V[i, 2] * y[2]
        mean += u[i]
    mean /= n
    var = 0.0
    umax = -np.inf
    for i in range(n):
        var += (u[i] - mean) ** 2
        umax = max(umax, u[i])
    std = np.sqrt(var / n)
    tau = max(std, TAU_FLOOR)
    if tau_fixed > 0.0:
        tau = tau_fixed
        std = max(std, TAU_FLOOR)
        full_tau = False
    total = 0.0
    for i in range(n):
        w[i] = np.exp((u[i] - umax) / tau)
        total += w[i]
    x_star[:] = 0.0
    pbar = np.zeros(3)
    for i in range(n):
        w[i] /= total
        for r in range(3):
            x_star[r] += w[i] * V[i, r]
            pbar[r] += w[i] * C[i, r]
    # rigid part: sum_i w_i [-R [p_i]x | R] = [-R [pbar]x | R]
    for r in range(3):
        J[r, 0] = R[r, 2] * pbar[1] - R[r, 1] * pbar[2]
        J[r, 1] = R[r, 0] * pbar[2] - R[r, 2] * pbar[0]
        J[r, 2] = R[r, 1] * pbar[0] - R[r, 0] * pbar[1]
        for c in range(3):
            J[r, 3 + c] = R[r, c]
            M[r, c] = 0.0
    if std < TAU_FLOOR or degenerate or n == 1:
        return tau
    # softmax part: sum_i (v_i - x*) w_i (du_i)/tau
    row = np.empty(6)
    gx = np.empty(3)
    crow = np.zeros(6)
    cgx = np.zeros(3)
    A = np.zeros(3)
    for i in range(n):
        if score_mode == SCORE_DISTANCE:
            g0 = -2.0 * (V[i, 0] - x_other[0])
            g1 = -2.0 * (V[i, 1] - x_other[1])
            g2 = -2.0 * (V[i, 2] - x_other[2])
            for r in range(3):
                gx[r] = 2.0 * (V[i, r] - x_other[r])
        else:
            g0, g1, g2 = y[0], y[1], y[2]
            for r in range(3):
                gx[r] = sign * V[i, r]
        # a = R^T g ; row = [p x a, a]
        a0 = R[0, 0] * g0 + R[1, 0] * g1 + R[2, 0] * g2
        a1 = R[0, 1] * g0 + R[1, 1] * g1 + R[2, 1] * g2
        a2 = R[0, 2] * g0 + R[1, 2] * g1 + R[2, 2] * g2
        row[0] = C[i, 1] * a2 - C[i, 2] * a1
        row[1] = C[i, 2] * a0 - C[i, 0] * a2
        row[2] = C[i, 0] * a1 - C[i, 1] * a0
        row[3] = a0
        row[4] = a1
        row[5] = a2
        s = w[i] / tau
        for r in range(3):
            d = (V[i, r] - x_star[r]) * s
            for c in range(6):
                J[r, c] += d * row[c]
            for c in range(3):
                M[r, c] += d * gx[c]
        if full_tau:
            ck = (u[i] - mean) / (n * tau)
            for c in range(6):
                crow[c] += ck * row[c]
            for c in range(3):
                cgx[c] += ck * gx[c]
            for r in range(3):
                A[r] += (V[i, r] - x_star[r]) * w[i] * u[i] / (tau * tau)
    if full_tau:
        for r in range(3):
            for c in range(6):
                J[r, c] -= A[r] * crow[c]
            for c in range(3):
                M[r, c] -= A[r] * cgx[c]
    return tau


# ---------------------------------------------------------------------------
# dataclass API


def _as3(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(3)


def select_candidates(bank: SurfacePointBank, witness_local, target_world, witness_world,
                      cfg: SamplingConfig, pose: Pose | None = None, piece: int = 0,
                      centers=None, radii=None, diag: float | None = None) -> CandidateSet:
    """Distance-filtered candidate set around the witness (fixed or adaptive radius).

    ``centers``/``radii`` describe the bounding spheres of the composite's
    pieces; when omitted every bank point is treated as belonging to
    ``piece``.
    """
    if len(bank) == 0:
        raise ValueError("empty candidate bank")
    if cfg.strategy == "neighbor":
        raise ValueError("use select_candidates_neighbor for the neighbor strategy")
    pose = pose or Pose.identity()
    x_local = _as3(witness_local)
    if diag is None:
        pts = bank.points
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    alpha = cfg.radius(diag, target_world, witness_world)
    if centers is None:
        centers = np.zeros((1, 3))
        radii = np.array([np.inf])
        bank_piece = np.zeros(len(bank), dtype=np.int64)
        piece = 0
    else:
        bank_piece = np.asarray(bank.piece, dtype=np.int64)
    out = np.empty((cfg.max_candidates, 3))
    n = gather_ball(np.ascontiguousarray(bank.points), bank_piece, np.asarray(centers, float),
                    np.asarray(radii, float), x_local, piece, float(min(alpha, 1e300)),
                    cfg.max_candidates, cfg.cross_piece, out)
    local = out[:n].copy()
    return CandidateSet(local, pose.act(local), piece, cfg.strategy)


def select_candidates_neighbor(mesh: TriMesh, witness_vertex: int, k_ring: int, subsample: int,
                               seed: int, pose: Pose | None = None) -> CandidateSet:
    """k-ring neighbourhood of a mesh vertex, uniformly subsampled.

    The witness vertex is element 0 and always kept; ``subsample`` counts it.
    """
    pose = pose or Pose.identity()
    ptr, idx = mesh.adjacency_csr()
    ring = ring_vertices(ptr, idx, int(witness_vertex), int(k_ring))
    rest = ring[1:]
    if len(rest) > subsample - 1:
        rng = np.random.default_rng(seed)
        rest = rng.choice(rest, size=subsample - 1, replace=False)
    ids = np.concatenate([[witness_vertex], rest]).astype(np.int64)
    local = mesh.vertices[ids].copy()
    return CandidateSet(local, pose.act(local), 0, "neighbor")


def score_distance(candidates: CandidateSet, other_witness_world) -> np.ndarray:
    d = candidates.points_world - _as3(other_witness_world)
    return -np.einsum("ij,ij->i", d, d)


def direction_vector(x1_world, x2_world, penetrating: bool) -> np.ndarray:
    x1, x2 = _as3(x1_world), _as3(x2_world)
    if np.linalg.norm(x2 - x1) < DEGENERATE_GAP:
        return np.zeros(3)
    return x1 - x2 if penetrating else x2 - x1


def score_direction(candidates: CandidateSet, x1_world, x2_world, penetrating: bool) -> np.ndarray:
    """``<v_i, y>`` with ``y`` pointing from object 1 to object 2 when separated."""
    return candidates.points_world @ direction_vector(x1_world, x2_world, penetrating)


def softmax_weights(u) -> tuple[np.ndarray, float]:
    u = np.asarray(u, dtype=np.float64)
    tau = max(float(np.std(u)), TAU_FLOOR)
    e = np.exp((u - u.max()) / tau)
    return e / e.sum(), tau


def softmax_smooth(candidates: CandidateSet, u, x_other=None, score: str = "distance",
                   x_self=None, sign: float = 1.0) -> SmoothingState:
    w, tau = softmax_weights(u)
    x_star = w @ candidates.points_world
    x_other = np.zeros(3) if x_other is None else _as3(x_other)
    return SmoothingState(np.asarray(u, float), tau, w, x_star, x_other, score,
                          None if x_self is None else _as3(x_self), sign)


def smooth(candidates: CandidateSet, pose: Pose, x_other, score: str = "distance",
           x_self=None, sign: float = 1.0, full_tau: bool = False, tau: float = 0.0):
    """Run the kernel once; returns ``(state, J_self, M_cross)``.

    A positive ``tau`` freezes the temperature instead of using ``std(u)``.
    """
    n = len(candidates)
    C = np.ascontiguousarray(candidates.points_local)
    V, u, w = np.empty((n, 3)), np.empty(n), np.empty(n)
    xs, J, M = np.empty(3), np.empty((3, 6)), np.empty((3, 3))
    x_self_arr = _as3(x_self) if x_self is not None else np.zeros(3)
    tau = smooth_kernel(C, n, pose.R, pose.t, x_self_arr, _as3(x_other), SCORES[score],
                        float(sign), bool(full_tau), V, u, w, xs, J, M, float(tau))
    state = SmoothingState(u, tau, w, xs, _as3(x_other), score, x_self_arr, float(sign))
    return state, J, M


def smoothed_witness(s1, t1: Pose, s2, t2: Pose, forward, banks, cfg: SamplingConfig,
                     targets_world, score: str = "distance"):
    """Smoothed witnesses of both objects around a forward result.

    ``s1``/``s2`` are composite shapes, ``banks`` the pair of surface banks and
    ``targets_world`` the pair of world targets (used by adaptive sampling).
    Object 1 is scored against the forward witness on object 2 and vice versa.
    Returns ``((state1, cand1), (state2, cand2))``.
    """
    out = []
    sign = -1.0 if forward.penetrating else 1.0
    for shape, pose, bank, x_loc, x_w, x_o, piece, target in (
        (s1, t1, banks[0], forward.x1_local, forward.x1_world, forward.x2_world, forward.piece1, targets_world[0]),
        (s2, t2, banks[1], forward.x2_local, forward.x2_world, forward.x1_world, forward.piece2, targets_world[1]),
    ):
        if cfg.strategy == "neighbor":
            mesh = shape.source_mesh
            ptr, idx = mesh.adjacency_csr()
            buf = np.empty((cfg.subsample + 1, 3))
            n = gather_neighbor(np.ascontiguousarray(mesh.vertices), ptr, idx, x_loc, cfg.k_ring, cfg.subsample, buf)
            local = buf[:n].copy()
            cand = CandidateSet(local, pose.act(local), piece, "neighbor")
        else:
            centers = np.array([p.centroid for p in shape.pieces])
            radii = np.array([p.bounding_radius for p in shape.pieces])
            cand = select_candidates(bank, x_loc, target, x_w, cfg, pose, piece, centers, radii, shape.diag)
        state, _, _ = smooth(cand, pose, x_o, score, x_w, sign)
        out.append((state, cand))
    return tuple(out)
