"""Procedural shapes bundled with the library.

Shapes are built at a natural unit scale (the cube has half-extent 0.5);
benchmarks rescale them with :func:`diffwitness.geom.normalize_scale`.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .geom import CompositeShape, TriMesh, composite_from_meshes, convex_hull, convex_shape


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (k >> a) & 1 else lo)[a] for a in range(3)] for k in range(8)])
    tris = [
        (0, 2, 1), (1, 2, 3),  # z-
        (4, 5, 6), (5, 7, 6),  # z+
        (0, 1, 4), (1, 5, 4),  # y-
        (2, 6, 3), (3, 6, 7),  # y+
        (0, 4, 2), (2, 4, 6),  # x-
        (1, 3, 5), (3, 7, 5),  # x+
    ]
    return TriMesh(corners, np.array(tris))


def icosahedron_mesh() -> TriMesh:
    p = (1 + 5 ** 0.5) / 2
    v = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    v /= np.linalg.norm(v[0])
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return TriMesh(v, np.array(f))


def icosphere_mesh(subdivisions: int) -> TriMesh:
    """Unit sphere; 2 subdivisions give 162 vertices, 3 give 642."""
    mesh = icosahedron_mesh()
    verts = [tuple(x) for x in mesh.vertices]
    tris = [tuple(t) for t in mesh.triangles]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2
                verts.append(tuple(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new
    return TriMesh(np.array(verts), np.array(tris))


def revolution_mesh(xs, radii, n_around: int = 24) -> TriMesh:
    """Closed surface of revolution about the x axis.

    ``xs``/``radii`` describe the interior rings; the ends are closed with a
    pole vertex at ``xs[0]`` and ``xs[-1]`` where the radius must be zero.
    """
    xs, radii = np.asarray(xs, float), np.asarray(radii, float)
    th = 2 * np.pi * np.arange(n_around) / n_around
    verts = [(xs[0], 0.0, 0.0)]
    for x, r in zip(xs[1:-1], radii[1:-1]):
        verts += [(x, r * np.cos(t), r * np.sin(t)) for t in th]
    verts.append((xs[-1], 0.0, 0.0))
    n_rings = len(xs) - 2
    tris = []
    for k in range(n_around):
        k1 = (k + 1) % n_around
        tris.append((0, 1 + k1, 1 + k))
    for i in range(n_rings - 1):
        a, b = 1 + i * n_around, 1 + (i + 1) * n_around
        for k in range(n_around):
            k1 = (k + 1) % n_around
            tris += [(a + k, a + k1, b + k1), (a + k, b + k1, b + k)]
    last = len(verts) - 1
    base = 1 + (n_rings - 1) * n_around
    for k in range(n_around):
        k1 = (k + 1) % n_around
        tris.append((last, base + k, base + k1))
    return TriMesh(np.array(verts), np.array(tris))


def torus_mesh(major: float = 1.0, minor: float = 0.35, n_major: int = 48, n_minor: int = 16) -> TriMesh:
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    rr = major + minor * np.cos(vv)
    verts = np.stack([rr * np.cos(uu), rr * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(n_major):
        i1 = (i + 1) % n_major
        for j in range(n_minor):
            j1 = (j + 1) % n_minor
            a, b, c, d = i * n_minor + j, i1 * n_minor + j, i1 * n_minor + j1, i * n_minor + j1
            tris += [(a, b, c), (a, c, d)]
    return TriMesh(verts, np.array(tris))


def extruded_polygon(poly, triangles, z0: float, z1: float) -> TriMesh:
    """Prism over a simple polygon with a given triangulation of its cap."""
    poly = np.asarray(poly, float)
    n = len(poly)
    verts = np.concatenate([np.c_[poly, np.full(n, z0)], np.c_[poly, np.full(n, z1)]])
    tris = [(c, b, a) for a, b, c in triangles] + [(a + n, b + n, c + n) for a, b, c in triangles]
    for k in range(n):
        k1 = (k + 1) % n
        tris += [(k, k1, k1 + n), (k, k1 + n, k + n)]
    return TriMesh(verts, np.array(tris))


# ---------------------------------------------------------------------------
# Bundled catalogue


def make_cube() -> CompositeShape:
    return convex_shape(box_mesh(), "cube")


def make_icosahedron() -> CompositeShape:
    return convex_shape(icosahedron_mesh(), "icosahedron")


def make_sphere(subdivisions: int) -> CompositeShape:
    mesh = icosphere_mesh(subdivisions)
    return convex_shape(mesh, f"sphere{mesh.n_vertices}")


def make_ellipsoid() -> CompositeShape:
    m = icosphere_mesh(4)
    return convex_shape(TriMesh(m.vertices * [1.0, 0.6, 0.35], m.triangles), "ellipsoid")


def make_capsule() -> CompositeShape:
    # hemispherical caps joined by a straight section; the tessellation is
    # fine enough that facets stay well below the 1 mm convergence radius
    cap = np.linspace(0, np.pi / 2, 16)
    left_x = -0.6 - 0.4 * np.cos(cap)
    left_r = 0.4 * np.sin(cap)
    mid_x = np.linspace(-0.6, 0.6, 13)[1:-1]
    xs = np.concatenate([left_x, mid_x, -left_x[::-1]])
    rs = np.concatenate([left_r, np.full(len(mid_x), 0.4), left_r[::-1]])
    return convex_shape(revolution_mesh(xs, rs, n_around=48), "capsule")


def make_l_shape() -> CompositeShape:
    a = box_mesh((0, 0, 0), (2, 1, 1))
    b = box_mesh((0, 1, 0), (1, 2, 1))
    poly = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    cap = [(3, 4, 5), (3, 5, 0), (3, 0, 1), (3, 1, 2)]
    src = extruded_polygon(poly, cap, 0.0, 1.0)
    return composite_from_meshes([a, b], src, "L")


def make_torus(n_pieces: int = 48, n_minor: int = 32) -> CompositeShape:
    # One convex piece per ring segment: the quads between two consecutive
    # minor rings are planar hull faces, so the union of the pieces is
    # exactly the source surface and every surface target is reachable.
    src = torus_mesh(1.0, 0.35, n_pieces, n_minor)
    ring = np.arange(n_pieces * n_minor).reshape(n_pieces, n_minor)
    pieces = []
    for k in range(n_pieces):
        rows = [k, (k + 1) % n_pieces]
        pieces.append(convex_hull(src.vertices[ring[rows].ravel()]))
    return CompositeShape(tuple(pieces), src, "torus")


def _dumbbell_profile(x, ball: float = 0.5, center: float = 1.0, neck: float = 0.2):
    r_ball = np.sqrt(np.clip(ball ** 2 - (np.abs(x) - center) ** 2, 0.0, None))
    return np.maximum(r_ball, np.where(np.abs(x) <= center, neck, 0.0))


def make_dumbbell(n_around: int = 48, n_ball: int = 24) -> CompositeShape:
    ball, center, neck = 0.5, 1.0, 0.2
    xj = center - np.sqrt(ball ** 2 - neck ** 2)
    # even arc-length spacing over each ball, from the pole to the neck joint
    ang = np.linspace(0.0, np.arccos((xj - center) / ball), n_ball)
    outer = -(center + ball * np.cos(ang))
    inner = np.linspace(-xj, xj, 7)
    xs = np.concatenate([outer, inner[1:-1], -outer[::-1]])
    rs = _dumbbell_profile(xs, ball, center, neck)
    src = revolution_mesh(xs, rs, n_around)
    v = src.vertices
    tol = 1e-9
    left = v[v[:, 0] <= -xj + tol]
    right = v[v[:, 0] >= xj - tol]
    th = 2 * np.pi * np.arange(n_around) / n_around
    neck_pts = np.array([(x, neck * np.cos(t), neck * np.sin(t)) for x in (-xj, xj) for t in th])
    pieces = [convex_hull(left), convex_hull(neck_pts), convex_hull(right)]
    return CompositeShape(tuple(pieces), src, "dumbbell")


_FACTORIES = {
    "cube": make_cube,
    "icosahedron": make_icosahedron,
    "sphere162": lambda: make_sphere(2),
    "sphere642": lambda: make_sphere(3),
    "sphere2562": lambda: make_sphere(4),
    "ellipsoid": make_ellipsoid,
    "capsule": make_capsule,
    "L": make_l_shape,
    "torus": make_torus,
    "dumbbell": make_dumbbell,
}

# Benchmark bundles.  Flat-faced solids (cube, icosahedron, the coarse
# spheres) stay available by name but are left out of CONVEX_SET: targets
# inside two flat faces can only meet in patch contact, where the witness
# pair is not unique.
CONVEX_SET = ("sphere2562", "ellipsoid", "capsule")
CONCAVE_SET = ("torus", "dumbbell", "L")


def bundled_names() -> tuple:
    return tuple(_FACTORIES)


@lru_cache(maxsize=None)
def bundled(name: str) -> CompositeShape:
    try:
        return _FACTORIES[name]()
    except KeyError:
        raise KeyError(f"unknown bundled shape {name!r}; choose from {sorted(_FACTORIES)}") from None


def random_polytope(n_points: int, rng: np.random.Generator, scale: float = 1.0) -> CompositeShape:
    """Hull of ``n_points`` Gaussian points (a random convex polytope)."""
    while True:
        pts = rng.normal(size=(n_points, 3)) * scale
        try:
            return convex_shape(TriMesh(pts, np.zeros((0, 3), dtype=np.int64)), "polytope")
        except ValueError:
            continue
