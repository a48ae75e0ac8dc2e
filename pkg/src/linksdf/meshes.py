"""Collision geometry and the offline link-SDF build.

Provides exact point-to-surface distances for triangle meshes and analytic
primitives, and bakes them into dense :class:`~linksdf.grids.LinkSdf` grids.
The per-cell values are exact surface distances, so the only error left in
the query pipeline is discretization.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NonWatertightError, ValidationError
from .grids import LinkSdf

log = logging.getLogger(__name__)

_POINT_CHUNK = 65536


@dataclass(frozen=True, eq=False)
class Sphere:
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Capsule:
    """Capsule along ``axis`` through the origin: segment of ``half_length``
    each way, inflated by ``radius``."""

    radius: float
    half_length: float
    axis: np.ndarray = field(default_factory=lambda: np.float64([0.0, 0.0, 1.0]))

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValidationError("capsule axis must be nonzero")
        object.__setattr__(self, "axis", axis / n)


@dataclass(frozen=True, eq=False)
class Box:
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "half_extents", np.asarray(self.half_extents, dtype=np.float64)
        )


Primitive = Sphere | Capsule | Box


def primitive_sdf(shape: Primitive, points: np.ndarray) -> np.ndarray:
    """Analytic signed distance of points to a primitive, negative inside."""
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    p = pts.reshape(-1, 3)

    if isinstance(shape, Sphere):
        d = np.linalg.norm(p - shape.center, axis=-1) - shape.radius
    elif isinstance(shape, Capsule):
        t = np.clip(p @ shape.axis, -shape.half_length, shape.half_length)
        d = np.linalg.norm(p - t[:, None] * shape.axis, axis=-1) - shape.radius
    elif isinstance(shape, Box):
        q = np.abs(p) - shape.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        d = outside + inside
    else:
        raise ValidationError(f"unknown primitive {type(shape).__name__}")
    return d[0] if scalar else d.reshape(pts.shape[:-1])


class TriangleMesh:
    """Triangle soup with load-time cleanup of degenerate faces."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValidationError("triangle indices out of range")
        a = vertices[triangles[:, 0]]
        b = vertices[triangles[:, 1]]
        c = vertices[triangles[:, 2]]
        area2 = np.linalg.norm(np.cross(b - a, c - a), axis=-1)
        keep = area2 > 1e-14
        dropped = int((~keep).sum())
        if dropped:
            log.warning("dropped %d degenerate triangle(s)", dropped)
            triangles = triangles[keep]
        if len(triangles) == 0:
            raise ValidationError("mesh has no non-degenerate triangles")
        self.vertices = vertices
        self.triangles = triangles
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False
        self._watertight = None

    @property
    def is_watertight(self) -> bool:
        """Every undirected edge is used by exactly two triangles."""
        if self._watertight is None:
            tri = self.triangles
            edges = np.concatenate(
                [tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0
            )
            edges = np.sort(edges, axis=1)
            _, counts = np.unique(edges, axis=0, return_counts=True)
            self._watertight = bool(np.all(counts == 2))
        return self._watertight

    def triangle_corners(self):
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Area-weighted random points on the surface."""
        a, b, c = self.triangle_corners()
        areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)
        which = rng.choice(len(areas), size=n, p=areas / areas.sum())
        u = rng.random(n)
        v = rng.random(n)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        return (
            a[which]
            + u[:, None] * (b[which] - a[which])
            + v[:, None] * (c[which] - a[which])
        )


def _closest_point_sq(p: np.ndarray, a, b, c) -> np.ndarray:
    """Squared distance from each point to each triangle, (n, t).

    Vectorized Voronoi-region closest-point-on-triangle evaluation
    (vertex, edge and face regions handled exactly).
    """
    ab = b - a
    ac = c - a
    bc = c - b

    ap = p[:, None, :] - a[None, :, :]
    bp = p[:, None, :] - b[None, :, :]
    cp = p[:, None, :] - c[None, :, :]

    d1 = np.einsum("ntj,tj->nt", ap, ab)
    d2 = np.einsum("ntj,tj->nt", ap, ac)
    d3 = np.einsum("ntj,tj->nt", bp, ab)
    d4 = np.einsum("ntj,tj->nt", bp, ac)
    d5 = np.einsum("ntj,tj->nt", cp, ab)
    d6 = np.einsum("ntj,tj->nt", cp, ac)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(ap)
    done = np.zeros(d1.shape, dtype=bool)

    def assign(mask, value):
        nonlocal done
        mask = mask & ~done
        if np.any(mask):
            closest[mask] = value[mask]
        done |= mask

    broadcast = np.broadcast_to
    shape = closest.shape

    assign((d1 <= 0) & (d2 <= 0), broadcast(a[None], shape))
    assign((d3 >= 0) & (d4 <= d3), broadcast(b[None], shape))

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.nan_to_num(d1 / (d1 - d3))
        t_ac = np.nan_to_num(d2 / (d2 - d6))
        t_bc = np.nan_to_num((d4 - d3) / ((d4 - d3) + (d5 - d6)))

    assign(
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        a[None] + t_ab[..., None] * ab[None],
    )
    assign((d6 >= 0) & (d5 <= d6), broadcast(c[None], shape))
    assign(
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        a[None] + t_ac[..., None] * ac[None],
    )
    assign(
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
        b[None] + t_bc[..., None] * bc[None],
    )

    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    assign(
        np.ones(d1.shape, dtype=bool),
        a[None] + v[..., None] * ab[None] + w[..., None] * ac[None],
    )

    diff = p[:, None, :] - closest
    return np.einsum("ntj,ntj->nt", diff, diff)


def _point_triangle_distances(points: np.ndarray, a, b, c) -> np.ndarray:
    """Unsigned distance from each point to the nearest of the triangles.

    Chunked over points; a coarse centroid-radius prefilter drops triangles
    that cannot beat a chunk-level upper bound.
    """
    centroid = (a + b + c) / 3.0
    tri_radius = np.maximum(
        np.linalg.norm(a - centroid, axis=-1),
        np.maximum(
            np.linalg.norm(b - centroid, axis=-1),
            np.linalg.norm(c - centroid, axis=-1),
        ),
    )

    n_tri = len(a)
    chunk = max(1, min(_POINT_CHUNK, 2_000_000 // max(n_tri, 1)))
    best = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start : start + chunk]
        lo = p.min(axis=0)
        hi = p.max(axis=0)
        center = 0.5 * (lo + hi)
        p_radius = np.linalg.norm(hi - center)
        d_cent = np.linalg.norm(centroid - center, axis=-1)
        upper = np.min(d_cent + tri_radius) + p_radius
        keep = d_cent - tri_radius - p_radius <= upper
        d2 = _closest_point_sq(p, a[keep], b[keep], c[keep])
        best[start : start + chunk] = np.sqrt(d2.min(axis=1))
    return best


_RAY_DIRECTIONS = np.float64(
    [
        [0.577350269, 0.577350269, 0.577350269],
        [0.267261242, 0.534522484, 0.801783726],
        [-0.455842306, 0.569802882, 0.683763459],
        [0.816496581, -0.408248290, 0.408248290],
    ]
)


def _ray_crossings(points: np.ndarray, mesh: TriangleMesh, direction: np.ndarray):
    """Count ray-triangle crossings per point; returns (counts, suspect mask).

    Suspect points had a hit too close to a triangle edge or plane-parallel
    configuration to trust the parity; callers retry with another direction.
    """
    a, b, c = mesh.triangle_corners()
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = np.einsum("tj,tj->t", e1, h)
    parallel = np.abs(det) < 1e-12
    det_safe = np.where(parallel, 1.0, det)

    counts = np.zeros(len(points), dtype=np.int64)
    suspect = np.zeros(len(points), dtype=bool)
    eps = 1e-9
    for start in range(0, len(points), _POINT_CHUNK):
        p = points[start : start + _POINT_CHUNK]
        s = p[:, None, :] - a[None, :, :]
        u = np.einsum("ntj,tj->nt", s, h) / det_safe
        q = np.cross(s, e1[None, :, :])
        v = np.einsum("ntj,j->nt", q, direction) / det_safe
        t = np.einsum("ntj,tj->nt", q, e2) / det_safe
        hit = (~parallel) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
        counts[start : start + _POINT_CHUNK] = hit.sum(axis=1)
        near_edge = hit & (
            (u < eps) | (v < eps) | (u + v > 1 - eps) | (np.abs(t) < eps)
        )
        suspect[start : start + _POINT_CHUNK] = near_edge.any(axis=1)
    return counts, suspect


def _inside_mask(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Ray-crossing parity, retried along backup directions near edges."""
    remaining = np.arange(len(points))
    inside = np.zeros(len(points), dtype=bool)
    for direction in _RAY_DIRECTIONS:
        counts, suspect = _ray_crossings(points[remaining], mesh, direction)
        ok = ~suspect
        inside[remaining[ok]] = counts[ok] % 2 == 1
        remaining = remaining[suspect]
        if len(remaining) == 0:
            return inside
    # All directions were suspect (points essentially on the surface).
    inside[remaining] = False
    return inside


def exact_point_distance(
    mesh: TriangleMesh, points: np.ndarray, signed: bool = True
) -> np.ndarray:
    """Exact distance from points to the mesh surface, negative inside.

    The unsigned part is the true minimum over all triangles; the sign
    comes from ray-crossing parity and requires a watertight mesh.
    """
    pts = np.asarray(points, dtype=np.float64)
    scalar = pts.ndim == 1
    p = pts.reshape(-1, 3)

    a, b, c = mesh.triangle_corners()
    d = _point_triangle_distances(p, a, b, c)
    if signed:
        if not mesh.is_watertight:
            raise NonWatertightError(
                "signed distance requested on an open mesh; pass signed=False"
            )
        inside = _inside_mask(p, mesh)
        d = np.where(inside, -d, d)
    return float(d[0]) if scalar else d.reshape(pts.shape[:-1])


def build_link_sdf(
    geometry: TriangleMesh | Primitive,
    extent,
    resolution,
    link_id: int = 0,
) -> LinkSdf:
    """Bake a link's collision geometry into a dense signed distance grid.

    Every cell value is the exact signed distance at the cell center. Open
    meshes fall back to unsigned distance with a warning; the pipeline still
    works, distances just never go negative.
    """
    extent = np.broadcast_to(np.asarray(extent, dtype=np.float64), (3,))
    resolution = np.broadcast_to(np.asarray(resolution, dtype=np.float64), (3,))
    dims = np.rint(2.0 * extent / resolution).astype(np.int64)

    signed = True
    if isinstance(geometry, TriangleMesh):
        signed = geometry.is_watertight
        if not signed:
            log.warning(
                "link %d: mesh is not watertight, storing unsigned distances", link_id
            )

    axes = [
        -extent[a] + (np.arange(dims[a]) + 0.5) * resolution[a] for a in range(3)
    ]
    values = np.empty(tuple(dims), dtype=np.float32)
    # Evaluate in x-slabs to bound the temporary point buffers.
    slab = max(1, int(2_000_000 // max(dims[1] * dims[2], 1)))
    for x0 in range(0, int(dims[0]), slab):
        gx, gy, gz = np.meshgrid(axes[0][x0 : x0 + slab], axes[1], axes[2], indexing="ij")
        centers = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        if isinstance(geometry, TriangleMesh):
            d = exact_point_distance(geometry, centers, signed=signed)
        else:
            d = primitive_sdf(geometry, centers)
        values[x0 : x0 + slab] = d.reshape(gx.shape).astype(np.float32)

    return LinkSdf(extent=extent, resolution=resolution, values=values, link_id=link_id)


# ---------------------------------------------------------------------------
# Mesh constructors and file loading
# ---------------------------------------------------------------------------

def make_box_mesh(half_extents) -> TriangleMesh:
    """Axis-aligned box as 12 triangles, outward-facing."""
    h = np.asarray(half_extents, dtype=np.float64)
    corners = np.array(
        [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64
    ) * h
    # Faces as corner indices into the (x,y,z)-bit layout above.
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    tris = []
    for q in quads:
        tris.append((q[0], q[1], q[2]))
        tris.append((q[0], q[2], q[3]))
    return TriangleMesh(corners, np.int64(tris))


def make_icosphere(radius: float, subdivisions: int = 1) -> TriangleMesh:
    """Sphere mesh from a subdivided icosahedron (80 faces at 1 subdivision)."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.float64(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ]
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]

    def midpoint(cache, i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        cache: dict = {}
        new_faces = []
        for i, j, k in faces:
            ij = midpoint(cache, i, j)
            jk = midpoint(cache, j, k)
            ki = midpoint(cache, k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces

    return TriangleMesh(np.float64(verts) * radius, np.int64(faces))


def primitive_surface_points(shape: Primitive, n: int, rng: np.random.Generator):
    """Random points on a primitive's surface (for coverage validation)."""
    if isinstance(shape, Sphere):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return shape.center + shape.radius * d
    if isinstance(shape, Capsule):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        t = rng.uniform(-shape.half_length, shape.half_length, size=n)
        axial = d @ shape.axis
        radial = d - axial[:, None] * shape.axis
        # Push cylinder-side points onto the tube, endpoint points onto caps.
        on_cap = rng.random(n) < (
            2 * shape.radius / (2 * shape.radius + 2 * shape.half_length)
        )
        pts = np.where(
            on_cap[:, None],
            np.sign(axial)[:, None] * shape.half_length * shape.axis + shape.radius * d,
            t[:, None] * shape.axis
            + shape.radius
            * radial
            / np.maximum(np.linalg.norm(radial, axis=-1, keepdims=True), 1e-12),
        )
        return pts
    if isinstance(shape, Box):
        mesh = make_box_mesh(shape.half_extents)
        return mesh.sample_surface(n, rng)
    raise ValidationError(f"unknown primitive {type(shape).__name__}")


def load_stl(path) -> TriangleMesh:
    """Binary or ASCII STL loader (vertices are deduplicated)."""
    with open(path, "rb") as fh:
        head = fh.read(5)
        fh.seek(0)
        data = fh.read()
    if head == b"solid" and b"facet" in data[:2048]:
        return _load_stl_ascii(data.decode("ascii", errors="replace"))
    return _load_stl_binary(data, path)


def _load_stl_binary(data: bytes, path) -> TriangleMesh:
    if len(data) < 84:
        raise ValidationError(f"{path}: truncated STL")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + count * 50
    if len(data) < expected:
        raise ValidationError(f"{path}: STL facet data truncated")
    raw = np.frombuffer(data, dtype=np.uint8, count=count * 50, offset=84)
    raw = raw.reshape(count, 50)
    tris = raw[:, 12:48].copy().view("<f4").reshape(count, 3, 3).astype(np.float64)
    return _mesh_from_triangle_soup(tris)


def _load_stl_ascii(text: str) -> TriangleMesh:
    coords = []
    for line in text.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "vertex":
            coords.append([float(x) for x in parts[1:]])
    tris = np.float64(coords).reshape(-1, 3, 3)
    return _mesh_from_triangle_soup(tris)


def load_obj(path) -> TriangleMesh:
    """Minimal OBJ loader: v and (fan-triangulated) f records."""
    vertices = []
    faces = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for i in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[i], idx[i + 1]))
    return TriangleMesh(np.float64(vertices), np.int64(faces))


def load_mesh(path) -> TriangleMesh:
    p = str(path).lower()
    if p.endswith(".stl"):
        return load_stl(path)
    if p.endswith(".obj"):
        return load_obj(path)
    raise ValidationError(f"unsupported mesh format: {path}")


def _mesh_from_triangle_soup(tris: np.ndarray) -> TriangleMesh:
    flat = tris.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    return TriangleMesh(verts, inverse.reshape(-1, 3))
