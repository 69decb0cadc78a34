"""Mesh ingestion, convex hulls, scale normalization and surface point banks.

Concave objects are represented as a union of convex pieces (a
:class:`CompositeShape`).  All pieces of a composite share the composite's
local frame, so a point expressed in "piece-local" coordinates is also in
shape-local coordinates.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VERTEX = 0
SURFACE_SAMPLE = 1
DEGENERATE_AREA = 1e-16
HULL_REL_EPS = 1e-9


class ObjParseError(ValueError):
    pass


class DegenerateHull(ValueError):
    pass


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _build_adjacency(n_vertices, triangles):
    nbrs = [set() for _ in range(n_vertices)]
    for a, b, c in triangles:
        nbrs[a].update((b, c))
        nbrs[b].update((a, c))
        nbrs[c].update((a, b))
    return tuple(tuple(sorted(s)) for s in nbrs)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    adjacency: tuple = field(init=False, repr=False)

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.triangles, np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "adjacency", _build_adjacency(len(v), f))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def adjacency_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Vertex adjacency as (offsets, indices) arrays."""
        counts = np.array([len(n) for n in self.adjacency], dtype=np.int64)
        ptr = np.zeros(len(counts) + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        idx = np.fromiter((j for n in self.adjacency for j in n), dtype=np.int64, count=int(ptr[-1]))
        return ptr, idx

    def transformed(self, scale: float, offset) -> "TriMesh":
        return TriMesh((self.vertices - np.asarray(offset)) * scale, self.triangles)


def bbox_diag(points) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))


@dataclass(frozen=True, eq=False)
class ConvexPiece:
    vertices: np.ndarray
    faces: np.ndarray
    centroid: np.ndarray = field(init=False)
    bounding_radius: float = field(init=False)

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64).reshape(-1, 3)
        f = _frozen(self.faces, np.int64).reshape(-1, 3)
        c = _frozen(v.mean(axis=0), np.float64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "centroid", c)
        object.__setattr__(self, "bounding_radius", float(np.linalg.norm(v - c, axis=1).max()))

    def as_mesh(self) -> TriMesh:
        return TriMesh(self.vertices, self.faces)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def volume(self) -> float:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


@dataclass(frozen=True, eq=False)
class CompositeShape:
    pieces: tuple
    source_mesh: TriMesh
    name: str = "shape"
    diag: float = field(init=False)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("composite shape needs at least one piece")
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "diag", bbox_diag(self.all_points()))

    def all_points(self) -> np.ndarray:
        return np.concatenate([p.vertices for p in self.pieces] + [self.source_mesh.vertices])

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.all_points()
        return p.min(axis=0), p.max(axis=0)

    @property
    def is_convex(self) -> bool:
        return len(self.pieces) == 1


@dataclass(frozen=True, eq=False)
class SurfacePointBank:
    points: np.ndarray
    piece: np.ndarray
    origin: np.ndarray
    triangle: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points, np.float64).reshape(-1, 3))
        object.__setattr__(self, "piece", _frozen(self.piece, np.int64))
        object.__setattr__(self, "origin", _frozen(self.origin, np.int64))
        object.__setattr__(self, "triangle", _frozen(self.triangle, np.int64))

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# OBJ I/O


def _parse_index(tok: str, n_vertices: int, lineno: int, path) -> int:
    head = tok.split("/")[0]
    try:
        i = int(head)
    except ValueError:
        raise ObjParseError(f"{path}:{lineno}: bad face index {tok!r}") from None
    i = i - 1 if i > 0 else n_vertices + i
    if i < 0 or i >= n_vertices or head == "0":
        raise ObjParseError(f"{path}:{lineno}: face index {head} out of range (have {n_vertices} vertices)")
    return i


def parse_obj(text: str, path="<string>") -> TriMesh:
    verts, tris = [], []
    face_lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v":
            if len(tok) < 4:
                raise ObjParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
            try:
                verts.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise ObjParseError(f"{path}:{lineno}: bad vertex coordinate") from None
        elif tok[0] == "f":
            if len(tok) < 4:
                raise ObjParseError(f"{path}:{lineno}: face needs at least 3 vertices")
            face_lines.append((lineno, tok[1:]))
    n = len(verts)
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(v)):
        raise ObjParseError(f"{path}: non-finite vertex coordinate")
    for lineno, toks in face_lines:
        idx = [_parse_index(t, n, lineno, path) for t in toks]
        for k in range(1, len(idx) - 1):
            tri = (idx[0], idx[k], idx[k + 1])
            a, b, c = v[list(tri)]
            if 0.5 * np.linalg.norm(np.cross(b - a, c - a)) < DEGENERATE_AREA:
                warnings.warn(f"{path}:{lineno}: dropping degenerate triangle {tri}", stacklevel=2)
                continue
            tris.append(tri)
    return TriMesh(v, np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_obj(path) -> TriMesh:
    path = Path(path)
    return parse_obj(path.read_text(), path=path)


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Quickhull


def _initial_simplex(pts, eps):
    i0 = int(np.argmin(pts[:, 0]))
    i1 = int(np.argmax(np.linalg.norm(pts - pts[i0], axis=1)))
    if np.linalg.norm(pts[i1] - pts[i0]) <= eps:
        raise DegenerateHull("all points coincide")
    d = pts[i1] - pts[i0]
    d /= np.linalg.norm(d)
    rel = pts - pts[i0]
    off_line = rel - np.outer(rel @ d, d)
    i2 = int(np.argmax(np.linalg.norm(off_line, axis=1)))
    if np.linalg.norm(off_line[i2]) <= eps:
        raise DegenerateHull("points are collinear")
    n = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    n /= np.linalg.norm(n)
    h = rel @ n
    i3 = int(np.argmax(np.abs(h)))
    if abs(h[i3]) <= eps:
        raise DegenerateHull("points are coplanar")
    return [i0, i1, i2, i3]


def quickhull(points, eps: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Convex hull of a 3-D point cloud.

    Returns ``(vertex_ids, faces)`` where ``faces`` index into ``points`` and
    are oriented counter-clockwise seen from outside.  Points within ``eps``
    of a hull plane are treated as coplanar and never become hull vertices.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateHull("need at least 4 points")
    if eps is None:
        eps = HULL_REL_EPS * max(bbox_diag(pts), 1e-300)

    simplex = _initial_simplex(pts, eps)
    interior = pts[simplex].mean(axis=0)

    faces = {}  # id -> [a, b, c, normal, offset, outside_ids]
    edge_face = {}
    next_id = [0]

    def add_face(a, b, c):
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        nn = np.linalg.norm(n)
        n = n / nn if nn > 0 else n
        off = float(n @ pts[a])
        if n @ interior - off > 0:
            a, b = b, a
            n, off = -n, -off
        fid = next_id[0]
        next_id[0] += 1
        faces[fid] = [a, b, c, n, off, []]
        for e in ((a, b), (b, c), (c, a)):
            edge_face[e] = fid
        return fid

    def remove_face(fid):
        a, b, c = faces[fid][:3]
        for e in ((a, b), (b, c), (c, a)):
            if edge_face.get(e) == fid:
                del edge_face[e]
        del faces[fid]

    i0, i1, i2, i3 = simplex
    initial = [add_face(i0, i1, i2), add_face(i0, i1, i3), add_face(i0, i2, i3), add_face(i1, i2, i3)]

    def assign(candidates, fids):
        if len(candidates) == 0 or not fids:
            return
        normals = np.array([faces[f][3] for f in fids])
        offs = np.array([faces[f][4] for f in fids])
        dist = pts[candidates] @ normals.T - offs
        best = np.argmax(dist, axis=1)
        for k, pid in enumerate(candidates):
            j = best[k]
            if dist[k, j] > eps:
                faces[fids[j]][5].append(int(pid))

    used = np.zeros(len(pts), dtype=bool)
    used[simplex] = True
    assign(np.flatnonzero(~used), initial)

    pending = [f for f in initial if faces[f][5]]
    while pending:
        fid = pending.pop()
        if fid not in faces or not faces[fid][5]:
            continue
        outside = faces[fid][5]
        n, off = faces[fid][3], faces[fid][4]
        far = max(outside, key=lambda p: (pts[p] @ n - off, -p))
        p = pts[far]

        visible = {fid}
        stack = [fid]
        while stack:
            f = stack.pop()
            a, b, c = faces[f][:3]
            for e in ((b, a), (c, b), (a, c)):
                g = edge_face.get(e)
                if g is not None and g not in visible and faces[g][3] @ p - faces[g][4] > eps:
                    visible.add(g)
                    stack.append(g)

        horizon = []
        orphans = []
        for f in visible:
            a, b, c = faces[f][:3]
            for e in ((a, b), (b, c), (c, a)):
                g = edge_face.get((e[1], e[0]))
                if g is not None and g not in visible:
                    horizon.append(e)
            orphans.extend(faces[f][5])
        for f in visible:
            remove_face(f)
        new = [add_face(a, b, far) for a, b in horizon]
        orphans = np.array(sorted(set(orphans) - {far}), dtype=np.int64)
        assign(orphans, new)
        pending.extend(f for f in new if faces[f][5])

    tris = np.array([faces[f][:3] for f in sorted(faces)], dtype=np.int64)
    ids = np.unique(tris)
    return ids, tris


def convex_hull(mesh_or_points) -> ConvexPiece:
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriMesh) else np.asarray(mesh_or_points, float)
    ids, tris = quickhull(pts)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[ids] = np.arange(len(ids))
    return ConvexPiece(pts[ids], remap[tris])


# ---------------------------------------------------------------------------
# Shapes


def composite_from_meshes(pieces, source: TriMesh | None = None, name: str = "shape") -> CompositeShape:
    """Hull-repair each piece mesh and bundle them with the source surface."""
    hulls = [convex_hull(m) for m in pieces]
    if source is None:
        source = merge_meshes([h.as_mesh() for h in hulls])
    return CompositeShape(tuple(hulls), source, name)


def convex_shape(mesh: TriMesh, name: str = "shape") -> CompositeShape:
    hull = convex_hull(mesh)
    return CompositeShape((hull,), hull.as_mesh(), name)


def merge_meshes(meshes) -> TriMesh:
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(tris))


def load_composite_dir(path, name: str | None = None) -> CompositeShape:
    path = Path(path)
    piece_files = sorted(path.glob("piece_*.obj"))
    if not piece_files:
        raise FileNotFoundError(f"no piece_*.obj files in {path}")
    source = path / "source.obj"
    src = load_obj(source) if source.exists() else None
    return composite_from_meshes([load_obj(p) for p in piece_files], src, name or path.name)


def save_composite_dir(shape: CompositeShape, path) -> None:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    for k, piece in enumerate(shape.pieces):
        write_obj(piece.as_mesh(), path / f"piece_{k:03d}.obj")
    write_obj(shape.source_mesh, path / "source.obj")


def normalize_scale(shape: CompositeShape, target_diag: float) -> CompositeShape:
    if not 0.01 <= target_diag <= 0.2:
        raise ValueError(f"target_diag {target_diag} outside [0.01, 0.2] m")
    lo, hi = shape.bbox()
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise ValueError("cannot normalize a zero-extent shape")
    s = target_diag / diag
    center = 0.5 * (lo + hi)
    pieces = tuple(ConvexPiece((p.vertices - center) * s, p.faces) for p in shape.pieces)
    return CompositeShape(pieces, shape.source_mesh.transformed(s, center), shape.name)


# ---------------------------------------------------------------------------
# Surface sampling


def owning_piece(shape: CompositeShape, points) -> np.ndarray:
    """Index of the piece each point lies on (or nearest to, by plane slack)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(shape.pieces) == 1:
        return np.zeros(len(pts), dtype=np.int64)
    slack = np.empty((len(pts), len(shape.pieces)))
    for k, piece in enumerate(shape.pieces):
        n = piece.face_normals()
        off = np.einsum("ij,ij->i", n, piece.vertices[piece.faces[:, 0]])
        slack[:, k] = (pts @ n.T - off).max(axis=1)
    return np.argmin(slack, axis=1).astype(np.int64)


def sample_triangles(mesh: TriMesh, n_samples: int, rng: np.random.Generator):
    """Area-weighted uniform samples; returns (points, triangle ids)."""
    if n_samples == 0 or len(mesh.triangles) == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    areas = mesh.triangle_areas()
    tri = rng.choice(len(areas), size=n_samples, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n_samples))
    r2 = rng.random(n_samples)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return pts, tri.astype(np.int64)


def sample_surface_bank(shape: CompositeShape | TriMesh, n_samples: int = 512, seed: int = 0) -> SurfacePointBank:
    """All source vertices plus ``n_samples`` area-weighted surface samples."""
    if n_samples < 0:
        raise ValueError("n_samples must be >= 0")
    mesh = shape.source_mesh if isinstance(shape, CompositeShape) else shape
    rng = np.random.default_rng(seed)
    samples, tri = sample_triangles(mesh, n_samples, rng)
    pts = np.concatenate([mesh.vertices, samples])
    origin = np.concatenate([np.full(mesh.n_vertices, VERTEX), np.full(len(samples), SURFACE_SAMPLE)])
    tri_ids = np.concatenate([np.full(mesh.n_vertices, -1), tri])
    if isinstance(shape, CompositeShape):
        piece = owning_piece(shape, pts)
    else:
        piece = np.zeros(len(pts), dtype=np.int64)
    return SurfacePointBank(pts, piece, origin, tri_ids)


def point_triangle_distance(p, a, b, c) -> np.ndarray:
    """Vectorized Euclidean distance from points ``p`` to triangles ``abc``.

    Broadcasts over leading dimensions.  Region classification follows the
    usual Voronoi-region construction for a triangle.
    """
    return np.linalg.norm(p - closest_point_on_triangle(p, a, b, c), axis=-1)


def closest_point_on_triangle(p, a, b, c) -> np.ndarray:
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        out = a + ab * v[..., None] + ac * w[..., None]

        # edge bc
        m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        t = np.where(m, (d4 - d3) / np.where(m, (d4 - d3) + (d5 - d6), 1.0), 0.0)
        out = np.where(m[..., None], b + (c - b) * t[..., None], out)
        # edge ac
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = np.where(m, d2 / np.where(m, d2 - d6, 1.0), 0.0)
        out = np.where(m[..., None], a + ac * t[..., None], out)
        # edge ab
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = np.where(m, d1 / np.where(m, d1 - d3, 1.0), 0.0)
        out = np.where(m[..., None], a + ab * t[..., None], out)
    # vertex regions override edges
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


def distance_to_mesh(points, mesh: TriMesh) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
    out = np.empty(len(pts))
    for s in range(0, len(pts), 256):
        d = point_triangle_distance(pts[s:s + 256, None, :], a[None], b[None], c[None])
        out[s:s + 256] = d.min(axis=1)
    return out
