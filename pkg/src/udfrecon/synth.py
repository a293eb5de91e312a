"""Analytic benchmark shapes with exact distance oracles, surface samplers and sweep simulation.

Every shape is described by an exact closest-point map; unsigned distance and its
gradient follow from it, so the oracles used across the test-suite share one
definition per shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptySweep, NotOpenShape
from .pointcloud import FeaturedPointCloud

DEFAULT_SCAN_DIR = (0.0, 0.0, -1.0)


def _norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def _radial(q, r):
    """Closest point on the sphere of radius r; the origin maps to (r, 0, 0)."""
    n = _norm(q)
    out = np.zeros_like(q)
    ok = n > 0
    out[ok] = q[ok] * (r / n[ok])[:, None]
    out[~ok] = (r, 0.0, 0.0)
    return out


def _rim(q, r):
    """Closest point on the circle {x = 0, y^2 + z^2 = r^2}."""
    rho = np.hypot(q[:, 1], q[:, 2])
    out = np.zeros_like(q)
    ok = rho > 0
    out[ok, 1] = r * q[ok, 1] / rho[ok]
    out[ok, 2] = r * q[ok, 2] / rho[ok]
    out[~ok, 1] = r
    return out


class AnalyticShape:
    kind = "shape"
    closed = False

    def closest_point(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(closest surface point, outward unit normal there) for each query row."""
        raise NotImplementedError

    def udf(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        flat = q.reshape(-1, 3)
        c, _ = self.closest_point(flat)
        return _norm(flat - c).reshape(q.shape[:-1])

    def udf_and_grad(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        c, n = self.closest_point(q)
        diff = q - c
        d = _norm(diff)
        g = n.copy()
        ok = d > 0
        g[ok] = diff[ok] / d[ok, None]
        return d, g

    def sdf(self, q):
        if not self.closed:
            raise NotOpenShape(f"{self.kind} has no signed distance")
        d = self.udf(q)
        return np.where(self.inside(q), -d, d)

    def sdf_and_grad(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        d, g = self.udf_and_grad(q)
        s = np.where(self.inside(q), -1.0, 1.0)
        return s * d, g * s[:, None]

    def inside(self, q) -> np.ndarray:
        raise NotOpenShape(f"{self.kind} is open")

    def normals_at(self, p) -> np.ndarray:
        return self.closest_point(np.asarray(p, dtype=np.float64).reshape(-1, 3))[1]

    def boundary_distance(self, q) -> np.ndarray:
        """Distance to the surface boundary curve (inf for closed surfaces)."""
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return np.full(len(q), np.inf)

    def known_empty_region(self, q) -> np.ndarray:
        raise NotOpenShape(f"{self.kind} is closed; it has no missing region")

    def sample_surface(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(AnalyticShape):
    r: float = 1.0
    kind = "sphere"
    closed = True

    def closest_point(self, q):
        c = _radial(q, self.r)
        return c, c / self.r

    def inside(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return _norm(q) < self.r

    def sample_surface(self, n, rng):
        v = rng.standard_normal((n, 3))
        v /= _norm(v)[:, None]
        return self.r * v, v

    def spec(self):
        return f"sphere:r={self.r!r}"


@dataclass(frozen=True)
class SemiSphere(AnalyticShape):
    """The x >= 0 half of a sphere shell; its rim is the circle x = 0, |(y, z)| = r."""

    r: float = 1.0
    kind = "semi_sphere"

    def closest_point(self, q):
        c = np.where((q[:, 0] >= 0)[:, None], _radial(q, self.r), _rim(q, self.r))
        return c, c / self.r

    def boundary_distance(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return np.hypot(q[:, 0], np.hypot(q[:, 1], q[:, 2]) - self.r)

    def known_empty_region(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return q[:, 0] < 0

    def sample_surface(self, n, rng):
        v = rng.standard_normal((n, 3))
        v /= _norm(v)[:, None]
        v[:, 0] = np.abs(v[:, 0])
        return self.r * v, v

    def spec(self):
        return f"semi_sphere:r={self.r!r}"


@dataclass(frozen=True)
class PlanePatch(AnalyticShape):
    """Square z = 0, |x| <= a, |y| <= a."""

    a: float = 1.0
    kind = "plane_patch"

    def closest_point(self, q):
        c = np.stack([np.clip(q[:, 0], -self.a, self.a), np.clip(q[:, 1], -self.a, self.a),
                      np.zeros(len(q))], axis=1)
        n = np.tile([0.0, 0.0, 1.0], (len(q), 1))
        return c, n

    def boundary_distance(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        ax, ay = np.abs(q[:, 0]), np.abs(q[:, 1])
        inside = np.minimum(self.a - ax, self.a - ay)
        outside = np.hypot(np.maximum(ax - self.a, 0), np.maximum(ay - self.a, 0))
        planar = np.where((ax <= self.a) & (ay <= self.a), inside, outside)
        return np.hypot(planar, q[:, 2])

    def known_empty_region(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return np.maximum(np.abs(q[:, 0]), np.abs(q[:, 1])) > self.a

    def sample_surface(self, n, rng):
        xy = (2 * rng.random((n, 2)) - 1) * self.a
        p = np.concatenate([xy, np.zeros((n, 1))], axis=1)
        return p, np.tile([0.0, 0.0, 1.0], (n, 1))

    def spec(self):
        return f"plane_patch:a={self.a!r}"


@dataclass(frozen=True)
class OpenCylinderShell(AnalyticShape):
    """Lateral surface of a z-axis cylinder, |z| <= h / 2, without caps."""

    r: float = 1.0
    h: float = 2.0
    kind = "open_cylinder_shell"

    def closest_point(self, q):
        rho = np.hypot(q[:, 0], q[:, 1])
        ok = rho > 0
        n = np.zeros_like(q)
        n[ok, 0] = q[ok, 0] / rho[ok]
        n[ok, 1] = q[ok, 1] / rho[ok]
        n[~ok, 0] = 1.0
        c = self.r * n
        c[:, 2] = np.clip(q[:, 2], -self.h / 2, self.h / 2)
        return c, n

    def boundary_distance(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        dr = np.hypot(q[:, 0], q[:, 1]) - self.r
        return np.minimum(np.hypot(dr, q[:, 2] - self.h / 2), np.hypot(dr, q[:, 2] + self.h / 2))

    def known_empty_region(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return np.abs(q[:, 2]) > self.h / 2

    def sample_surface(self, n, rng):
        th = 2 * np.pi * rng.random(n)
        z = (rng.random(n) - 0.5) * self.h
        nrm = np.stack([np.cos(th), np.sin(th), np.zeros(n)], axis=1)
        p = self.r * nrm
        p[:, 2] = z
        return p, nrm

    def spec(self):
        return f"open_cylinder_shell:r={self.r!r},h={self.h!r}"


@dataclass(frozen=True)
class ThickenedSemiSphere(AnalyticShape):
    """Solid shell {x >= 0, r - t/2 <= |q| <= r + t/2}: a semi-sphere given thickness t.

    Its boundary is closed (outer cap, inner cap and the annulus at x = 0), so it
    has a signed distance; its missing region is still the cut-away half x < 0.
    """

    r: float = 1.0
    t: float = 0.1
    kind = "thickened_semi_sphere"
    closed = True

    @property
    def r_in(self):
        return self.r - self.t / 2

    @property
    def r_out(self):
        return self.r + self.t / 2

    def _annulus(self, q):
        rim = _rim(q, 1.0)
        rho = np.clip(np.hypot(q[:, 1], q[:, 2]), self.r_in, self.r_out)
        return rim * rho[:, None]

    def closest_point(self, q):
        front = (q[:, 0] >= 0)[:, None]
        outer = np.where(front, _radial(q, self.r_out), _rim(q, self.r_out))
        inner = np.where(front, _radial(q, self.r_in), _rim(q, self.r_in))
        ann = self._annulus(q)
        cands = np.stack([outer, inner, ann])
        d = _norm(q[None] - cands)
        pick = np.argmin(d, axis=0)
        c = cands[pick, np.arange(len(q))]
        normals = np.stack([outer / self.r_out, -inner / self.r_in,
                            np.tile([-1.0, 0.0, 0.0], (len(q), 1))])
        return c, normals[pick, np.arange(len(q))]

    def inside(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        n = _norm(q)
        return (q[:, 0] > 0) & (n > self.r_in) & (n < self.r_out)

    def known_empty_region(self, q):
        q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
        return q[:, 0] < 0

    def sample_surface(self, n, rng):
        areas = np.array([2 * np.pi * self.r_out ** 2, 2 * np.pi * self.r_in ** 2,
                          np.pi * (self.r_out ** 2 - self.r_in ** 2)])
        piece = rng.choice(3, size=n, p=areas / areas.sum())
        v = rng.standard_normal((n, 3))
        v /= _norm(v)[:, None]
        v[:, 0] = np.abs(v[:, 0])
        p = np.empty((n, 3))
        nrm = np.empty((n, 3))
        p[piece == 0] = self.r_out * v[piece == 0]
        nrm[piece == 0] = v[piece == 0]
        p[piece == 1] = self.r_in * v[piece == 1]
        nrm[piece == 1] = -v[piece == 1]
        m = piece == 2
        # uniform on the annulus: radius via inverse CDF of r dr
        rad = np.sqrt(self.r_in ** 2 + rng.random(m.sum()) * (self.r_out ** 2 - self.r_in ** 2))
        th = 2 * np.pi * rng.random(m.sum())
        p[m] = np.stack([np.zeros(m.sum()), rad * np.cos(th), rad * np.sin(th)], axis=1)
        nrm[m] = (-1.0, 0.0, 0.0)
        return p, nrm

    def spec(self):
        return f"thickened_semi_sphere:r={self.r!r},t={self.t!r}"


SHAPES = {
    "sphere": (Sphere, {"r": "r"}),
    "semi_sphere": (SemiSphere, {"r": "r"}),
    "plane_patch": (PlanePatch, {"a": "a", "extent": "a"}),
    "open_cylinder_shell": (OpenCylinderShell, {"r": "r", "h": "h"}),
    "thickened_semi_sphere": (ThickenedSemiSphere, {"r": "r", "t": "t"}),
}


def parse_shape(spec: str) -> AnalyticShape:
    """Parse ``kind:key=value,...`` e.g. ``thickened_semi_sphere:r=1.0,t=0.5``."""
    kind, _, rest = spec.strip().partition(":")
    if kind not in SHAPES:
        raise ConfigError(f"unknown shape kind {kind!r}")
    cls, keys = SHAPES[kind]
    kwargs = {}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in keys:
            raise ConfigError(f"shape {kind!r} has no parameter {k!r}")
        kwargs[keys[k]] = float(v)
    shape = cls(**kwargs)
    for v in kwargs.values():
        if not v > 0:
            raise ConfigError(f"shape parameters must be positive: {spec!r}")
    return shape


def is_shape_spec(text: str) -> bool:
    return text.split(":", 1)[0] in SHAPES


def analytic_udf(shape: AnalyticShape, q) -> np.ndarray:
    return shape.udf(q)


def known_empty_region(shape: AnalyticShape, q) -> np.ndarray:
    return shape.known_empty_region(q)


def sample_shape(shape: AnalyticShape, n: int, noise_sigma: float = 0.0, seed: int = 0,
                 scan_dir=DEFAULT_SCAN_DIR) -> FeaturedPointCloud:
    """Area-uniform surface samples with Gaussian noise and synthetic echo features."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    p, nrm = shape.sample_surface(n, rng)
    d = np.asarray(scan_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    inten = np.maximum(0.0, -(nrm @ d))
    if noise_sigma > 0:
        p = p + rng.standard_normal(p.shape) * noise_sigma
    return FeaturedPointCloud(p, inten, np.tile(d, (n, 1)), True)


# ---------------------------------------------------------------- sweep simulation

def top_down_probe_path(shape: AnalyticShape, n_frames: int = 16, width: int = 64,
                        spacing=(0.05, 0.05), height_above: float = 0.5, extent: float | None = None):
    """Frames sweeping along +y, imaging the x-z plane with depth pointing to -z."""
    sx, sy = spacing
    span = extent if extent is not None else _shape_extent(shape)
    rot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
    poses = []
    for y in np.linspace(-0.9 * span, 0.9 * span, n_frames):
        pose = np.eye(4)
        pose[:3, :3] = rot
        pose[:3, 3] = (-0.5 * width * sx, y, span + height_above)
        poses.append(pose)
    return poses


def _shape_extent(shape):
    for attr in ("r", "a"):
        if hasattr(shape, attr):
            return float(getattr(shape, attr)) + float(getattr(shape, "t", 0.0))
    return 1.0


def simulate_sweep(shape: AnalyticShape, probe_path, spacing=(0.05, 0.05), seed: int = 0,
                   out_dir=None, width: int = 64, height: int = 64, name: str | None = None):
    """Ray-cast each frame's depth axis; first-hit pixels become the bone mask.

    Returns the SweepManifest and, when ``out_dir`` is given, writes the ingest
    directory layout there.
    """
    from .ingest import SweepFrame, SweepManifest, write_manifest

    sx, sy = spacing
    rng = np.random.default_rng(seed)
    frames = []
    uu, vv = np.meshgrid(np.arange(width), np.arange(height))
    local = np.stack([uu * sx, vv * sy, np.zeros_like(uu, dtype=float)], axis=-1).reshape(-1, 3)
    total = 0
    for pose in probe_path:
        pose = np.asarray(pose, dtype=np.float64)
        world = local @ pose[:3, :3].T + pose[:3, 3]
        d = shape.udf(world).reshape(height, width)
        hit = d <= 0.5 * sy
        first = np.argmax(hit, axis=0)
        has = hit.any(axis=0)
        mask = np.zeros((height, width), dtype=bool)
        mask[first[has], np.nonzero(has)[0]] = True
        wave = pose[:3, :3] @ np.array([0.0, 1.0, 0.0])
        inten = rng.integers(0, 40, size=(height, width)).astype(np.uint8)
        if mask.any():
            pts = world.reshape(height, width, 3)[mask]
            nrm = shape.normals_at(pts)
            echo = np.maximum(0.0, -(nrm @ wave))
            inten[mask] = np.round(255 * echo).astype(np.uint8)
        total += int(mask.sum())
        frames.append(SweepFrame(mask, inten, pose, (sx, sy)))
    if total == 0:
        raise EmptySweep("probe path never intersects the shape")
    manifest = SweepManifest(frames, name=name or shape.spec(), units="mm")
    if out_dir is not None:
        write_manifest(Path(out_dir), manifest)
    return manifest
