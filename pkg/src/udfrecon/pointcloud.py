"""Featured point clouds, exact nearest-neighbour index, query and anchor sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateExtent, EmptyInput, InvalidK

DEFAULT_WAVE_DIR = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class FeaturedPoint:
    position: np.ndarray
    intensity: float
    wave_dir: np.ndarray


@dataclass(frozen=True)
class FeaturedPointCloud:
    """Positions (N, 3) plus per-point intensity (N,) and unit wave direction (N, 3)."""

    positions: np.ndarray
    intensity: np.ndarray = None
    wave_dir: np.ndarray = None
    has_features: bool = True

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64).reshape(-1, 3))
        n = len(pos)
        if self.intensity is None:
            inten = np.zeros(n)
        else:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(n)
        if self.wave_dir is None:
            wd = np.tile(DEFAULT_WAVE_DIR, (n, 1))
        else:
            wd = _unit_rows(np.asarray(self.wave_dir, dtype=np.float64).reshape(n, 3))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "wave_dir", wd)
        for a in (pos, inten, wd):
            a.flags.writeable = False

    @classmethod
    def from_positions(cls, positions) -> "FeaturedPointCloud":
        """Coordinates-only cloud: zero intensity, wave_dir (0,0,1), has_features=False."""
        return cls(positions, has_features=False)

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> FeaturedPoint:
        return FeaturedPoint(self.positions[i].copy(), float(self.intensity[i]), self.wave_dir[i].copy())

    def subset(self, idx) -> "FeaturedPointCloud":
        return FeaturedPointCloud(
            self.positions[idx], self.intensity[idx], self.wave_dir[idx], self.has_features
        )

    def with_positions(self, positions) -> "FeaturedPointCloud":
        return FeaturedPointCloud(positions, self.intensity, self.wave_dir, self.has_features)

    def features(self) -> np.ndarray:
        """(N, 7) array [x, y, z, I, wx, wy, wz]; feature channels are zero without features."""
        out = np.zeros((len(self), 7))
        out[:, :3] = self.positions
        if self.has_features:
            out[:, 3] = self.intensity
            out[:, 4:] = self.wave_dir
        return out

    @staticmethod
    def concatenate(clouds) -> "FeaturedPointCloud":
        clouds = list(clouds)
        if not clouds:
            raise EmptyInput("nothing to concatenate")
        return FeaturedPointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.intensity for c in clouds]),
            np.concatenate([c.wave_dir for c in clouds]),
            all(c.has_features for c in clouds),
        )


def _unit_rows(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=1)
    bad = norm == 0
    v[bad] = DEFAULT_WAVE_DIR
    norm[bad] = 1.0
    return v / norm[:, None]


def _sqdist(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    # One fixed evaluation order so every exact comparison in the package agrees.
    d = q - p
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


class SpatialIndex:
    """Immutable k-d tree over a point set with exact, lowest-index tie breaking.

    The tree proposes candidates; distances are recomputed with a single fixed
    formula and near-ties are resolved by a ball query, so results agree
    bitwise with a brute-force argmin.
    """

    _TIE_RTOL = 1e-9

    def __init__(self, points):
        if isinstance(points, FeaturedPointCloud):
            points = points.positions
        pts = np.array(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyInput("cannot index an empty point set")
        pts.flags.writeable = False
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return len(self.points)

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, distances) of the nearest indexed point to each query."""
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = q.reshape(-1, 3)
        n = len(self.points)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        if n == 1:
            idx = np.zeros(len(q), dtype=np.int64)
        else:
            _, cand = self._tree.query(q, k=2)
            d0 = _sqdist(q, self.points[cand[:, 0]])
            d1 = _sqdist(q, self.points[cand[:, 1]])
            idx = np.where(d1 < d0, cand[:, 1], cand[:, 0]).astype(np.int64)
            dmin = np.minimum(d0, d1)
            dmax = np.maximum(d0, d1)
            ambiguous = np.nonzero(dmax <= dmin * (1 + 4 * self._TIE_RTOL) + 1e-300)[0]
            if len(ambiguous):
                radii = np.sqrt(dmin[ambiguous]) * (1 + self._TIE_RTOL) + 1e-150
                balls = self._tree.query_ball_point(q[ambiguous], radii)
                for j, members in zip(ambiguous, balls):
                    members = np.asarray(members, dtype=np.int64)
                    dd = _sqdist(q[j], self.points[members])
                    best = dd.min()
                    idx[j] = members[dd == best].min()
        dist = np.sqrt(_sqdist(q, self.points[idx]))
        if single:
            return idx[0], dist[0]
        return idx, dist

    def query_k(self, queries, k: int):
        return self._tree.query(np.asarray(queries, dtype=np.float64), k=k)


@dataclass(frozen=True)
class QuerySet:
    queries: np.ndarray
    static_targets: np.ndarray
    per_point_sigma: np.ndarray
    target_index: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.queries)


@dataclass(frozen=True)
class AnchorSet:
    anchors: np.ndarray
    anchor_targets: np.ndarray
    anchor_distances: np.ndarray

    def __len__(self):
        return len(self.anchors)


@dataclass(frozen=True)
class NormalizationTransform:
    """normalized = scale * (p - offset); offset is the original bbox centre."""

    scale: float
    offset: np.ndarray

    def apply(self, p) -> np.ndarray:
        return self.scale * (np.asarray(p, dtype=np.float64) - self.offset)

    def invert(self, q) -> np.ndarray:
        return np.asarray(q, dtype=np.float64) / self.scale + self.offset

    @classmethod
    def identity(cls) -> "NormalizationTransform":
        return cls(1.0, np.zeros(3))


def bbox(points) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return p.min(axis=0), p.max(axis=0)


def _bin_keys(positions: np.ndarray, voxel_size: float):
    keys = np.floor(positions / voxel_size).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return inverse.reshape(-1), counts


def count_voxels(positions: np.ndarray, voxel_size: float) -> int:
    keys = np.floor(np.asarray(positions) / voxel_size).astype(np.int64)
    return len(np.unique(keys, axis=0))


def voxel_centroids(cloud: FeaturedPointCloud, voxel_size: float) -> FeaturedPointCloud:
    """Average every occupied floor-anchored voxel into one featured point."""
    inverse, counts = _bin_keys(cloud.positions, voxel_size)
    m = len(counts)
    pos = np.zeros((m, 3))
    np.add.at(pos, inverse, cloud.positions)
    pos /= counts[:, None]
    inten = np.bincount(inverse, weights=cloud.intensity, minlength=m) / counts
    wd = np.zeros((m, 3))
    np.add.at(wd, inverse, cloud.wave_dir)
    return FeaturedPointCloud(pos, inten, _unit_rows(wd), cloud.has_features)


def dedupe_positions(cloud: FeaturedPointCloud) -> FeaturedPointCloud:
    _, first = np.unique(cloud.positions, axis=0, return_index=True)
    if len(first) == len(cloud):
        return cloud
    return cloud.subset(np.sort(first))


def voxel_downsample(cloud: FeaturedPointCloud, target_n: int, voxel_size: float | None = None,
                     seed: int = 0, bisection_steps: int = 60) -> FeaturedPointCloud:
    """Voxel-grid centroid downsampling to at most ``target_n`` points.

    The voxel size is bisected over [1e-4, 1] x bbox diagonal for the smallest size
    whose occupied-voxel count is <= target_n. If even the largest size leaves too
    many voxels, a seeded random subset of the centroids is kept.
    """
    if len(cloud) == 0:
        raise EmptyInput("voxel_downsample on empty cloud")
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    pos = cloud.positions
    if voxel_size is None:
        lo_b, hi_b = bbox(pos)
        diag = float(np.linalg.norm(hi_b - lo_b))
        if diag == 0.0:
            return voxel_centroids(cloud, 1.0)
        lo, hi = 1e-4 * diag, diag
        if count_voxels(pos, lo) <= target_n:
            voxel_size = lo
        else:
            for _ in range(bisection_steps):
                mid = 0.5 * (lo + hi)
                if count_voxels(pos, mid) <= target_n:
                    hi = mid
                else:
                    lo = mid
            voxel_size = hi
    out = dedupe_positions(voxel_centroids(cloud, voxel_size))
    if len(out) > target_n:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(out), size=target_n, replace=False))
        out = out.subset(keep)
    return out


def knn_distance(index: SpatialIndex, point_index, k: int):
    """Distance from point(s) ``point_index`` to their k-th nearest *other* indexed point."""
    n = len(index)
    if k < 1 or k >= n:
        raise InvalidK(f"k={k} must satisfy 1 <= k < {n}")
    idx = np.atleast_1d(np.asarray(point_index))
    kk = min(k + 2, n)
    _, nb = index.query_k(index.points[idx], kk)
    nb = np.asarray(nb).reshape(len(idx), kk)
    d = np.sqrt(_sqdist(index.points[idx][:, None, :], index.points[nb]))
    out = np.empty(len(idx))
    for row, i in enumerate(idx):
        others = np.sort(d[row][nb[row] != i])
        out[row] = others[k - 1]
    if np.ndim(point_index) == 0:
        return float(out[0])
    return out


def static_nearest(index: SpatialIndex, q) -> np.ndarray:
    """Nearest indexed point to ``q`` (ties to the lowest index)."""
    idx, _ = index.nearest(q)
    return index.points[idx]


def sample_queries(cloud: FeaturedPointCloud, index: SpatialIndex, m: int, k: int,
                   seed: int) -> QuerySet:
    """M Gaussian queries per point, per-coordinate std = distance to the k-th neighbour."""
    n = len(cloud)
    if n <= k:
        raise InvalidK(f"cloud of {n} points needs more than k={k} points")
    sigma = knn_distance(index, np.arange(n), k)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, m, 3)) * sigma[:, None, None]
    queries = (cloud.positions[:, None, :] + eps).reshape(-1, 3)
    tidx, _ = index.nearest(queries)
    return QuerySet(queries, index.points[tidx], sigma, tidx)


def sample_grid_anchors(cloud: FeaturedPointCloud, index: SpatialIndex, g: int,
                        seed: int) -> AnchorSet:
    """G anchors uniform in the cloud's bbox with their exact nearest cloud distance."""
    if g < 1:
        raise ValueError("g must be >= 1")
    lo, hi = bbox(cloud.positions)
    rng = np.random.default_rng(seed)
    anchors = lo + rng.random((g, 3)) * (hi - lo)
    anchors = np.clip(anchors, lo, hi)
    tidx, dist = index.nearest(anchors)
    return AnchorSet(anchors, index.points[tidx], dist)


def normalize(cloud: FeaturedPointCloud) -> tuple[FeaturedPointCloud, NormalizationTransform]:
    """Centre the bbox at the origin and scale its longest edge to 1."""
    if len(cloud) == 0:
        raise EmptyInput("normalize on empty cloud")
    lo, hi = bbox(cloud.positions)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise DegenerateExtent("cloud has zero extent")
    tf = NormalizationTransform(1.0 / extent, 0.5 * (lo + hi))
    return cloud.with_positions(tf.apply(cloud.positions)), tf
