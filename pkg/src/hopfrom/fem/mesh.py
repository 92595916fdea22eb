"""Triangulation of the cylinder-in-channel geometry.

Channel [0, 2.2] x [0, 0.41], cylinder centre (0.2, 0.2), diameter 0.1.
The built-in generator lays out graded point sets (rings around the
cylinder, a refined wake box, a coarse background grid), triangulates with
Delaunay, carves the cylinder hole and relaxes interior points by Laplacian
smoothing.  Meshes can also be read from / written to a line-oriented text
format ("msh2d v1").
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from ..exceptions import ConfigError, NumericalError

CHANNEL_LENGTH = 2.2
CHANNEL_HEIGHT = 0.41
CYLINDER_CENTER = np.array([0.2, 0.2])
CYLINDER_RADIUS = 0.05
CYLINDER_DIAMETER = 2.0 * CYLINDER_RADIUS

BOUNDARY_TAGS = ("inlet", "outlet", "wall", "cylinder")


@dataclass
class Mesh:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), CCW
    boundary_edges: np.ndarray    # (ne, 2) vertex pairs
    boundary_tags: list[str]      # one tag per boundary edge
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def element_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.abs(
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosv = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosv, -1, 1))))
        return float(np.min(angles))

    def hash(self) -> str:
        return hashlib.sha256(write_mesh_text(self).encode()).hexdigest()[:16]


# -- generation -------------------------------------------------------------

def _stagger_grid(x0, x1, y0, y1, h):
    """Hexagonal-ish staggered point lattice."""
    nx = max(2, int(round((x1 - x0) / h)))
    ny = max(2, int(round((y1 - y0) / (h * 0.866))))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    pts = []
    for j, y in enumerate(ys):
        shift = 0.5 * (xs[1] - xs[0]) if j % 2 else 0.0
        for x in xs:
            pts.append((x + shift, y))
    return np.array(pts)


def _ring_points(radius, spacing, phase=0.0):
    n = max(24, int(np.ceil(2.0 * np.pi * radius / spacing)))
    th = phase + 2.0 * np.pi * np.arange(n) / n
    return CYLINDER_CENTER + radius * np.column_stack([np.cos(th), np.sin(th)])


def build_mesh(resolution: float, smooth_iters: int = 3,
               min_angle: float = 5.0) -> Mesh:
    """Graded triangulation with target element size ``resolution`` far from
    the cylinder and roughly half of it near the cylinder and in the wake."""
    if resolution <= 0 or resolution > 0.2:
        raise ConfigError(f"resolution {resolution} out of range (0, 0.2]")
    h = resolution
    L, H = CHANNEL_LENGTH, CHANNEL_HEIGHT
    cx, cy = CYLINDER_CENTER
    R = CYLINDER_RADIUS

    # channel boundary points (fixed)
    nx = max(4, int(round(L / h)))
    ny = max(4, int(round(H / h)))
    xs = np.linspace(0, L, nx + 1)
    ys = np.linspace(0, H, ny + 1)
    boundary = [np.column_stack([xs, np.zeros_like(xs)]),
                np.column_stack([xs, np.full_like(xs, H)]),
                np.column_stack([np.zeros(ny - 1), ys[1:-1]]),
                np.column_stack([np.full(ny - 1, L), ys[1:-1]])]
    boundary = np.vstack(boundary)

    # rings around the cylinder, geometrically graded
    h_c = 0.5 * h
    rings = []
    r, spacing = R, h_c
    max_r = min(0.135, R + 4.5 * h)
    first = True
    while r <= max_r:
        rings.append((_ring_points(r, spacing, phase=0.0 if first else spacing / r * 0.5), r))
        first = False
        r += spacing
        spacing *= 1.35
    cyl_pts = rings[0][0]
    ring_pts = np.vstack([p for p, _ in rings[1:]]) if len(rings) > 1 else np.empty((0, 2))
    r_outer = rings[-1][1]
    h_outer = rings[-1][1] - (rings[-2][1] if len(rings) > 1 else R)

    # refined wake box + coarse background
    wake = _stagger_grid(max(0.05, cx - 0.1), min(L, cx + 0.95),
                         0.05, H - 0.05, 0.65 * h)
    near = _stagger_grid(0, 1.3, 0, H, h)
    far = _stagger_grid(1.3 + 0.7 * h, L, 0, H, 1.4 * h)
    coarse = np.vstack([near, far])
    in_box = ((coarse[:, 0] > cx - 0.1) & (coarse[:, 0] < cx + 0.95)
              & (coarse[:, 1] > 0.05) & (coarse[:, 1] < H - 0.05))
    coarse = coarse[~in_box]

    def keep(pts, clearance):
        d_cyl = np.linalg.norm(pts - CYLINDER_CENTER, axis=1)
        ok = d_cyl > r_outer + clearance
        ok &= (pts[:, 0] > 0.35 * h) & (pts[:, 0] < L - 0.35 * h)
        ok &= (pts[:, 1] > 0.35 * h) & (pts[:, 1] < H - 0.35 * h)
        return pts[ok]

    interior = np.vstack([keep(wake, 0.55 * h_outer), keep(coarse, 0.55 * h_outer)])
    fixed = np.vstack([boundary, cyl_pts])
    movable = np.vstack([ring_pts, interior])
    points = np.vstack([fixed, movable])
    n_fixed = len(fixed)

    def triangulate(pts):
        tri = Delaunay(pts)
        cells = tri.simplices
        centroids = pts[cells].mean(axis=1)
        outside_hole = np.linalg.norm(centroids - CYLINDER_CENTER, axis=1) > R * 0.999
        cells = cells[outside_hole]
        p = pts[cells]
        areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                       - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        flip = areas < 0
        cells[flip] = cells[flip][:, ::-1]
        return cells[np.abs(areas) > 1e-12]

    cells = triangulate(points)
    for _ in range(smooth_iters):
        # Laplacian relaxation of non-fixed points, then re-triangulate
        neigh_sum = np.zeros_like(points)
        neigh_cnt = np.zeros(len(points))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for i, j in ((a, b), (b, a)):
                np.add.at(neigh_sum, cells[:, i], points[cells[:, j]])
                np.add.at(neigh_cnt, cells[:, i], 1.0)
        upd = neigh_sum[n_fixed:] / np.maximum(neigh_cnt[n_fixed:, None], 1.0)
        points[n_fixed:] = upd
        cells = triangulate(points)

    mesh = _finalize(points, cells)
    mesh.meta["resolution"] = resolution
    if mesh.min_angle_deg() < min_angle:
        raise NumericalError(
            f"degenerate elements: min angle {mesh.min_angle_deg():.2f} deg "
            f"below {min_angle} deg at resolution {resolution}")
    return mesh


def _finalize(points: np.ndarray, cells: np.ndarray) -> Mesh:
    used = np.unique(cells)
    remap = -np.ones(len(points), dtype=int)
    remap[used] = np.arange(len(used))
    points = points[used]
    cells = remap[cells]

    edge_count: dict[tuple[int, int], int] = {}
    for tri in cells:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            edge_count[key] = edge_count.get(key, 0) + 1
    bedges = np.array([e for e, c in edge_count.items() if c == 1], dtype=int)
    tags = [_tag_edge(points[a], points[b]) for a, b in bedges]
    return Mesh(vertices=points, triangles=cells,
                boundary_edges=bedges, boundary_tags=tags)


def _tag_edge(pa: np.ndarray, pb: np.ndarray, tol: float = 1e-6) -> str:
    mid = 0.5 * (pa + pb)
    if abs(mid[0]) < tol:
        return "inlet"
    if abs(mid[0] - CHANNEL_LENGTH) < tol:
        return "outlet"
    if abs(mid[1]) < tol or abs(mid[1] - CHANNEL_HEIGHT) < tol:
        return "wall"
    d = np.linalg.norm(mid - CYLINDER_CENTER)
    if d < 2.5 * CYLINDER_RADIUS:
        return "cylinder"
    raise NumericalError(f"untaggable boundary edge at {mid}")


# -- text format ("msh2d v1") ----------------------------------------------

def write_mesh_text(mesh: Mesh) -> str:
    buf = io.StringIO()
    buf.write("msh2d v1\n")
    buf.write(f"nodes {mesh.n_vertices}\n")
    for x, y in mesh.vertices:
        buf.write(f"{x:.17g} {y:.17g}\n")
    buf.write(f"tris {mesh.n_triangles}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"{i} {j} {k}\n")
    buf.write(f"bedges {len(mesh.boundary_edges)}\n")
    for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        buf.write(f"{i} {j} {tag}\n")
    return buf.getvalue()


def save_mesh(mesh: Mesh, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(write_mesh_text(mesh))


def load_mesh(path: str) -> Mesh:
    with open(path) as fh:
        return parse_mesh_text(fh.read(), source=path)


def parse_mesh_text(text: str, source: str = "<string>") -> Mesh:
    path = source
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "msh2d v1":
        raise ConfigError(f"{path}: not a 'msh2d v1' mesh file")
    pos = 1

    def expect(kw):
        nonlocal pos
        parts = lines[pos].split()
        if parts[0] != kw:
            raise ConfigError(f"{path}: expected '{kw}' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    nv = expect("nodes")
    verts = np.array([[float(v) for v in lines[pos + i].split()]
                      for i in range(nv)])
    pos += nv
    nt = expect("tris")
    tris = np.array([[int(v) for v in lines[pos + i].split()]
                     for i in range(nt)], dtype=int)
    pos += nt
    ne = expect("bedges")
    bedges, tags = [], []
    for i in range(ne):
        a, b, tag = lines[pos + i].split()
        if tag not in BOUNDARY_TAGS:
            raise ConfigError(f"{path}: unknown boundary tag {tag!r}")
        bedges.append((int(a), int(b)))
        tags.append(tag)
    return Mesh(vertices=verts, triangles=tris,
                boundary_edges=np.array(bedges, dtype=int), boundary_tags=tags)


def inflow_profile(y: float | np.ndarray) -> np.ndarray:
    """Parabolic inlet velocity with unit mean: (6 y (H - y) / H^2, 0)."""
    y = np.asarray(y, dtype=float)
    H = CHANNEL_HEIGHT
    ux = 6.0 * y * (H - y) / H ** 2
    return np.stack([ux, np.zeros_like(ux)], axis=-1)
