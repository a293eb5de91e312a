"""Grid sampling of trained fields and triangle-mesh extraction.

Unsigned fields go through a dual-contouring scheme built on tangent planes at
projected grid nodes; signed fields go through marching cubes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from skimage.measure import marching_cubes as _skimage_marching_cubes

from .errors import ConfigError, EmptySurface, NotOpenShape
from .mesh import TriangleMesh, boundary_edges, orient_consistently
from .neuralfield import EPS_GRAD, EVAL_CHUNK, project_points
from .pointcloud import NormalizationTransform

GRID_PAD = 0.05
MIN_RESOLUTION, MAX_RESOLUTION = 16, 512


class AnalyticField:
    """Exact (value, gradient) evaluator for a synthetic shape, optionally rescaled."""

    def __init__(self, shape, signed: bool = False, scale: float = 1.0):
        self.shape, self.signed, self.scale = shape, signed, scale

    def evaluate(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        u, g = self.shape.sdf_and_grad(pts) if self.signed else self.shape.udf_and_grad(pts)
        return self.scale * u, self.scale * g


class TransformedField:
    """A field defined in world units viewed through a normalization transform."""

    def __init__(self, field, transform: NormalizationTransform):
        self.field, self.transform = field, transform

    def evaluate(self, points):
        world = self.transform.invert(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        u, g = self.field.evaluate(world)
        # d/dx_norm = (1/scale) d/dx_world, distances shrink by scale
        return u * self.transform.scale, g


@dataclass
class ScalarGrid:
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    resolution: int
    values: np.ndarray
    gradients: np.ndarray | None = None

    @property
    def spacing(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (self.resolution - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def axes(self):
        return [np.linspace(self.bbox_min[a], self.bbox_max[a], self.resolution) for a in range(3)]

    def nodes(self) -> np.ndarray:
        return grid_nodes(self.bbox_min, self.bbox_max, self.resolution)

    def interpolate(self, points) -> np.ndarray:
        """Trilinear interpolation of the node values."""
        interp = RegularGridInterpolator(self.axes(), self.values, method="linear")
        return interp(np.asarray(points, dtype=np.float64).reshape(-1, 3))


def grid_nodes(bbox_min, bbox_max, resolution: int) -> np.ndarray:
    axes = [np.linspace(bbox_min[a], bbox_max[a], resolution) for a in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)


def grid_bbox(points, pad: float = GRID_PAD) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box of the points, each side pushed out by ``pad`` x that axis' extent.

    Flat axes are padded by ``pad`` x the longest extent instead, so the box
    never collapses.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = hi - lo
    longest = float(ext.max()) if ext.max() > 0 else 1.0
    margin = pad * np.where(ext > 1e-9 * longest, ext, longest)
    return lo - margin, hi + margin


def _check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if not MIN_RESOLUTION <= resolution <= MAX_RESOLUTION:
        raise ValueError(f"resolution must be in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {resolution}")
    return resolution


def evaluate_points(field, points, threads: int = 1, chunk: int = EVAL_CHUNK):
    """(u, grad u) at points, split into fixed chunks so threading cannot change results."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0), np.zeros((0, 3))
    blocks = [pts[s:s + chunk] for s in range(0, len(pts), chunk)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(field.evaluate, blocks))
    else:
        parts = [field.evaluate(b) for b in blocks]
    u = np.concatenate([np.asarray(p[0], dtype=np.float64).reshape(-1) for p in parts])
    g = np.concatenate([np.asarray(p[1], dtype=np.float64).reshape(-1, 3) for p in parts])
    return u, g


def evaluate_grid(field, bbox, resolution: int, threads: int = 1) -> ScalarGrid:
    """Sample u and grad u at the R^3 nodes of ``bbox`` (a (min, max) pair)."""
    resolution = _check_resolution(resolution)
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    u, g = evaluate_points(field, grid_nodes(lo, hi, resolution), threads)
    shape = (resolution,) * 3
    return ScalarGrid(lo, hi, resolution, u.reshape(shape), g.reshape(shape + (3,)))


# ---------------------------------------------------------------- UDF dual contouring

@dataclass
class MeshingParams:
    resolution: int = 64
    active_factor: float = 1.5    # cell active if its smallest corner value < this x diagonal
    keep_factor: float = 0.3      # projection kept if |u| there < this x diagonal
    crossing_factor: float = 0.8  # edge crossing needs min endpoint value < this x diagonal
    mu: float = 1e-3              # pull toward the projection centroid in the vertex solve
    min_projections: int = 2

    @classmethod
    def from_dict(cls, d: dict) -> "MeshingParams":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown meshing keys: {sorted(bad)}")
        return cls(**d)


_CORNERS = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)])


def _cell_ids(shape_cells, idx):
    return np.ravel_multi_index(tuple(idx.T), shape_cells)


def _solve_vertices(p, n, mask, mu):
    """Per-cell minimiser of sum (n.(v - p))^2 + mu |v - c|^2 over masked samples."""
    w = mask[..., None].astype(np.float64)
    cnt = np.maximum(mask.sum(axis=1), 1)[:, None]
    c = (p * w).sum(axis=1) / cnt
    nn = np.einsum("cki,ckj->ckij", n * w, n)
    a = nn.sum(axis=1) + mu * np.eye(3)
    b = np.einsum("ckij,ckj->ci", nn, p) + mu * c
    return np.linalg.solve(a, b[..., None])[..., 0]


def extract_udf_mesh(field, resolution: int | None = None, bbox=None, params: MeshingParams | None = None,
                     transform: NormalizationTransform | None = None, threads: int = 1,
                     grid: ScalarGrid | None = None) -> TriangleMesh:
    """Dual-contour the zero level of an unsigned field.

    ``field`` works in normalized coordinates; ``transform`` maps the output
    vertices back to world units. Vertex provenance is the flat id of the
    source cell.
    """
    params = params or MeshingParams()
    if grid is None:
        if bbox is None:
            bbox = (np.full(3, -0.5 - GRID_PAD), np.full(3, 0.5 + GRID_PAD))
        grid = evaluate_grid(field, bbox, resolution or params.resolution, threads)
    r = grid.resolution
    h = grid.spacing
    diag = grid.cell_diagonal
    values, grads = grid.values, grid.gradients
    nc = r - 1

    # 1. active cells
    cmin = values[:-1, :-1, :-1]
    for di, dj, dk in _CORNERS[1:]:
        cmin = np.minimum(cmin, values[di:di + nc, dj:dj + nc, dk:dk + nc])
    active = np.argwhere(cmin < params.active_factor * diag)
    if len(active) == 0:
        raise EmptySurface("no grid cell comes close to the zero level")

    # 2. project each corner node of an active cell once
    corner_idx = active[:, None, :] + _CORNERS[None]                  # (A, 8, 3)
    corner_flat = np.ravel_multi_index(tuple(corner_idx.reshape(-1, 3).T), (r, r, r)).reshape(-1, 8)
    nodes_used = np.unique(corner_flat)
    flat_vals = values.reshape(-1)
    flat_grads = grads.reshape(-1, 3)
    step, ok = project_points(flat_vals[nodes_used], flat_grads[nodes_used])
    node_pos = grid.bbox_min + np.stack(np.unravel_index(nodes_used, (r, r, r)), axis=1) * h
    proj = node_pos - step
    pu, pg = evaluate_points(field, proj, threads)
    pg_norm = np.linalg.norm(pg, axis=1)
    ok &= (np.abs(pu) < params.keep_factor * diag) & (pg_norm >= EPS_GRAD)
    normals = pg / np.where(pg_norm > 0, pg_norm, 1.0)[:, None]

    lookup = np.searchsorted(nodes_used, corner_flat)                  # (A, 8)
    p = proj[lookup]
    n = normals[lookup]
    lo = grid.bbox_min + active * h - 0.5 * h
    hi = lo + 2 * h
    inside = np.all((p >= lo[:, None]) & (p <= hi[:, None]), axis=2)
    mask = ok[lookup] & inside

    # 3-4. tangent planes -> regularised least-squares vertex, clamped to the dilated cell
    has_vertex = mask.sum(axis=1) >= params.min_projections
    verts = _solve_vertices(p[has_vertex], n[has_vertex], mask[has_vertex], params.mu)
    verts = np.clip(verts, lo[has_vertex], hi[has_vertex])
    cell_vertex = np.full((nc, nc, nc), -1, dtype=np.int64)
    owners = active[has_vertex]
    cell_vertex[tuple(owners.T)] = np.arange(len(owners))

    # 5. one quad per crossing interior edge whose four cells all own vertices
    quads, qdirs = [], []
    for axis in range(3):
        a1, a2 = [b for b in range(3) if b != axis]
        sl_a = [slice(1, r - 1)] * 3
        sl_a[axis] = slice(0, r - 1)
        sl_b = list(sl_a)
        sl_b[axis] = slice(1, r)
        ua, ub = values[tuple(sl_a)], values[tuple(sl_b)]
        ga, gb = grads[tuple(sl_a)], grads[tuple(sl_b)]
        crossing = (np.minimum(ua, ub) < params.crossing_factor * diag) & ((ga * gb).sum(-1) < 0)
        e = np.argwhere(crossing)
        if len(e) == 0:
            continue
        e[:, a1] += 1
        e[:, a2] += 1
        ring = []
        for d1, d2 in ((1, 1), (0, 1), (0, 0), (1, 0)):
            c = e.copy()
            c[:, a1] -= d1
            c[:, a2] -= d2
            ring.append(cell_vertex[tuple(c.T)])
        ring = np.stack(ring, axis=1)
        full = np.all(ring >= 0, axis=1)
        if not full.any():
            continue
        ring = ring[full]
        e = e[full]
        ea = np.ravel_multi_index(tuple(e.T), (r, r, r))
        eb_idx = e.copy()
        eb_idx[:, axis] += 1
        eb = np.ravel_multi_index(tuple(eb_idx.T), (r, r, r))
        # gradients point away from the surface on both sides: their difference
        # points from the a side to the b side
        qdirs.append(flat_grads[eb] - flat_grads[ea])
        quads.append(ring)
    if not quads:
        raise EmptySurface("no grid edge crosses the zero level")
    quads = np.concatenate(quads)
    qdirs = np.concatenate(qdirs)
    tris = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    dirs = np.concatenate([qdirs, qdirs])
    normal = np.cross(verts[tris[:, 1]] - verts[tris[:, 0]], verts[tris[:, 2]] - verts[tris[:, 0]])
    flip = (normal * dirs).sum(axis=1) < 0
    tris[flip] = tris[flip][:, ::-1]
    tris = _clean_triangles(tris, verts)
    if len(tris) == 0:
        raise EmptySurface("all extracted triangles are degenerate")
    tris = orient_consistently(tris, verts)

    used = np.unique(tris)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    out_v = verts[used]
    provenance = _cell_ids((nc, nc, nc), owners[used])
    if transform is not None:
        out_v = transform.invert(out_v)
    return TriangleMesh(out_v, remap[tris], provenance)


def _clean_triangles(tris: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Drop triangles with repeated or coincident corners and exact duplicates."""
    t = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    v = verts[t]
    area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    t = t[area2 > 0]
    _, first = np.unique(np.sort(t, axis=1), axis=0, return_index=True)
    return t[np.sort(first)]


# ---------------------------------------------------------------- marching cubes

def marching_cubes(grid: ScalarGrid, iso: float = 0.0,
                   transform: NormalizationTransform | None = None) -> TriangleMesh:
    """Iso-surface of a signed grid; triangles face toward increasing values."""
    vals = np.asarray(grid.values, dtype=np.float64)
    if not (vals.min() < iso < vals.max()):
        raise EmptySurface(f"grid values never cross iso level {iso}")
    verts, faces, _, _ = _skimage_marching_cubes(vals, level=iso, spacing=tuple(grid.spacing),
                                                 gradient_direction="descent", method="lewiner")
    verts = verts.astype(np.float64) + grid.bbox_min
    faces = faces.astype(np.int64)
    nc = grid.resolution - 1
    cell = np.clip(np.floor((verts - grid.bbox_min) / grid.spacing).astype(np.int64), 0, nc - 1)
    provenance = _cell_ids((nc, nc, nc), cell)
    faces = _clean_triangles(faces, verts)
    if transform is not None:
        verts = transform.invert(verts)
    return TriangleMesh(verts, faces, provenance)


# ---------------------------------------------------------------- artifact detection

@dataclass
class ArtifactReport:
    hole_boundary_edges: int
    offside_triangle_fraction: float
    boundary_edges: int
    n_triangles: int

    def to_dict(self) -> dict:
        return dict(hole_boundary_edges=self.hole_boundary_edges,
                    offside_triangle_fraction=self.offside_triangle_fraction,
                    boundary_edges=self.boundary_edges, n_triangles=self.n_triangles)


def artifact_detector(mesh: TriangleMesh, shape, cell_diagonal: float) -> ArtifactReport:
    """Holes and inflation of ``mesh`` relative to an analytic reference surface.

    A hole edge is a mesh boundary edge lying on the true surface (within two
    cell diagonals) but away from the true surface's own boundary. An offside
    triangle has its centroid in the shape's known-empty region, more than two
    cell diagonals from the true surface. All quantities are in mesh units.
    """
    tol = 2.0 * cell_diagonal
    be = boundary_edges(mesh)
    holes = 0
    if len(be):
        mid = 0.5 * (mesh.vertices[be[:, 0]] + mesh.vertices[be[:, 1]])
        holes = int(np.sum((shape.udf(mid) <= tol) & (shape.boundary_distance(mid) > tol)))
    offside = 0.0
    if mesh.n_triangles:
        cen = mesh.centroids()
        try:
            empty = shape.known_empty_region(cen)
        except NotOpenShape:  # closed shapes have no empty region: nothing is offside
            empty = np.zeros(len(cen), dtype=bool)
        offside = float(np.mean(empty & (shape.udf(cen) > tol)))
    return ArtifactReport(holes, offside, int(len(be)), int(mesh.n_triangles))
