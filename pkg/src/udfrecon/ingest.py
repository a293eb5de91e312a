"""Tracked 2D sweep frames -> featured 3D point cloud.

Image convention: column u maps to +x * sx, row v to +y * sy, depth grows with v.
The acoustic wave direction of a frame is the world image of the +v axis.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyInput, InvalidPose, ReconError
from .io import read_pgm, read_pose, write_pgm, write_pose
from .pointcloud import FeaturedPointCloud

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

POSE_ORTHO_TOL = 1e-5


@dataclass
class SweepFrame:
    mask: np.ndarray
    intensity: np.ndarray
    pose: np.ndarray
    spacing: tuple[float, float]

    def validate(self) -> None:
        mask = np.asarray(self.mask)
        inten = np.asarray(self.intensity)
        if mask.shape != inten.shape or mask.ndim != 2:
            raise ReconError(f"mask {mask.shape} and intensity {inten.shape} rasters differ")
        if min(self.spacing) <= 0:
            raise ReconError(f"non-positive pixel spacing {self.spacing}")
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4) or not np.all(np.isfinite(pose)):
            raise InvalidPose("pose must be a finite 4x4 matrix")
        rot = pose[:3, :3]
        if np.abs(rot.T @ rot - np.eye(3)).max() > POSE_ORTHO_TOL or np.linalg.det(rot) <= 0:
            raise InvalidPose("pose rotation block is not a proper orthonormal rotation")
        if np.abs(pose[3] - (0, 0, 0, 1)).max() > POSE_ORTHO_TOL:
            raise InvalidPose("pose bottom row must be (0, 0, 0, 1)")


@dataclass
class SweepManifest:
    frames: list
    name: str = "sweep"
    units: str = "mm"
    meta: dict = field(default_factory=dict)


def project_frame(frame: SweepFrame) -> FeaturedPointCloud:
    frame.validate()
    pose = np.asarray(frame.pose, dtype=np.float64)
    sx, sy = frame.spacing
    v, u = np.nonzero(np.asarray(frame.mask))
    local = np.stack([u * sx, v * sy, np.zeros(len(u))], axis=1)
    pos = local @ pose[:3, :3].T + pose[:3, 3]
    wave = pose[:3, :3] @ np.array([0.0, 1.0, 0.0])
    wave = wave / np.linalg.norm(wave)
    inten = np.asarray(frame.intensity)[v, u].astype(np.float64) / 255.0
    return FeaturedPointCloud(pos, inten, np.tile(wave, (len(u), 1)), True)


def compound_sweep(manifest: SweepManifest, threads: int = 1) -> FeaturedPointCloud:
    if not manifest.frames:
        raise EmptyInput("manifest has no frames")

    def one(item):
        i, frame = item
        try:
            return project_frame(frame)
        except ReconError as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc

    items = list(enumerate(manifest.frames))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(one, items))
    else:
        parts = [one(it) for it in items]
    return FeaturedPointCloud.concatenate(parts)


def _toml_str(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_manifest(root: Path, manifest: SweepManifest) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    lines = ["[dataset]", f"name = {_toml_str(manifest.name)}", f"units = {_toml_str(manifest.units)}", ""]
    for i, fr in enumerate(manifest.frames):
        stem = f"frames/{i:04d}"
        write_pgm(root / f"{stem}.mask.pgm", np.asarray(fr.mask, dtype=np.uint8) * 255)
        write_pgm(root / f"{stem}.intensity.pgm", fr.intensity)
        write_pose(root / f"{stem}.pose.txt", fr.pose)
        lines += ["[[frames]]", f'mask = "{stem}.mask.pgm"', f'intensity = "{stem}.intensity.pgm"',
                  f'pose = "{stem}.pose.txt"',
                  f"spacing = [{float(fr.spacing[0])!r}, {float(fr.spacing[1])!r}]", ""]
    (root / "manifest.toml").write_text("\n".join(lines))


def read_manifest(root) -> SweepManifest:
    root = Path(root)
    try:
        doc = tomllib.loads((root / "manifest.toml").read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"no manifest.toml in {root}") from exc
    ds = doc.get("dataset", {})
    frames = []
    for i, entry in enumerate(doc.get("frames", [])):
        stem = f"frames/{i:04d}"
        mask = read_pgm(root / entry.get("mask", f"{stem}.mask.pgm")) > 0
        inten = read_pgm(root / entry.get("intensity", f"{stem}.intensity.pgm"))
        pose = read_pose(root / entry.get("pose", f"{stem}.pose.txt"))
        sp = entry.get("spacing", ds.get("spacing"))
        if sp is None:
            raise ConfigError(f"frame {i}: no pixel spacing in manifest")
        frames.append(SweepFrame(mask, inten, pose, (float(sp[0]), float(sp[1]))))
    if not frames:
        raise EmptyInput(f"{root}: manifest lists no frames")
    return SweepManifest(frames, ds.get("name", root.name), ds.get("units", "mm"))
