"""Indexed triangle mesh container and topology helpers."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    provenance: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.provenance is None:
            self.provenance = np.full(len(self.vertices), -1, dtype=np.int64)
        else:
            self.provenance = np.asarray(self.provenance, dtype=np.int64).reshape(len(self.vertices))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def transformed(self, fn) -> "TriangleMesh":
        return TriangleMesh(fn(self.vertices), self.triangles.copy(), self.provenance.copy())

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices.copy(), self.triangles[:, ::-1].copy(), self.provenance.copy())


def undirected_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique sorted edges (E, 2) and how many triangles use each."""
    t = np.asarray(triangles, dtype=np.int64)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    if mesh.n_triangles == 0:
        return np.zeros((0, 2), dtype=np.int64)
    edges, counts = undirected_edges(mesh.triangles)
    return edges[counts == 1]


def euler_characteristic(mesh: TriangleMesh) -> int:
    used = np.unique(mesh.triangles)
    edges, _ = undirected_edges(mesh.triangles)
    return int(len(used) - len(edges) + mesh.n_triangles)


def connected_components(mesh: TriangleMesh) -> np.ndarray:
    """Component label per triangle (triangles sharing an edge are connected)."""
    adj = _edge_adjacency(mesh.triangles)
    labels = np.full(mesh.n_triangles, -1, dtype=np.int64)
    current = 0
    for start in range(mesh.n_triangles):
        if labels[start] >= 0:
            continue
        labels[start] = current
        stack = [start]
        while stack:
            f = stack.pop()
            for g, _ in adj[f]:
                if labels[g] < 0:
                    labels[g] = current
                    stack.append(g)
        current += 1
    return labels


def _edge_adjacency(triangles):
    by_edge = defaultdict(list)
    for f, tri in enumerate(np.asarray(triangles).tolist()):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            by_edge[(min(a, b), max(a, b))].append((f, (a, b)))
    adj = [[] for _ in range(len(triangles))]
    for users in by_edge.values():
        if len(users) != 2:
            continue
        (f, ef), (g, eg) = users
        # same directed edge in both triangles means opposite orientation
        same = ef == eg
        adj[f].append((g, same))
        adj[g].append((f, same))
    return adj


def orient_consistently(triangles: np.ndarray, vertices: np.ndarray | None = None) -> np.ndarray:
    """Flip triangles so orientation agrees across shared manifold edges.

    Breadth-first from the lowest-index triangle of each component. When vertices
    are given, closed components are then flipped to enclose positive volume.
    """
    tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    adj = _edge_adjacency(tris)
    flip = np.zeros(len(tris), dtype=bool)
    seen = np.zeros(len(tris), dtype=bool)
    comps = []
    for start in range(len(tris)):
        if seen[start]:
            continue
        seen[start] = True
        comp = [start]
        queue = deque([start])
        while queue:
            f = queue.popleft()
            for g, same in adj[f]:
                if not seen[g]:
                    seen[g] = True
                    flip[g] = flip[f] ^ same
                    comp.append(g)
                    queue.append(g)
        comps.append(comp)
    tris[flip] = tris[flip][:, ::-1]
    if vertices is not None:
        for comp in comps:
            sub = tris[comp]
            edges, counts = undirected_edges(sub)
            if np.all(counts == 2):
                v = vertices[sub]
                vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum()
                if vol < 0:
                    tris[comp] = sub[:, ::-1]
    return tris


def signed_volume(mesh: TriangleMesh) -> float:
    v = mesh.vertices[mesh.triangles]
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)
