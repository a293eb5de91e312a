"""Scaled-down reproduction experiments on synthetic shapes.

Every experiment writes its meshes and a ``summary.json`` into an output
directory and returns the summary as a dict.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import write_mesh
from .mesh import TriangleMesh
from .meshing import (
    MeshingParams,
    artifact_detector,
    evaluate_grid,
    extract_udf_mesh,
    grid_bbox,
    marching_cubes,
)
from .metrics import evaluate_against_shape
from .neuralfield import Architecture
from .synth import AnalyticShape, SemiSphere, Sphere, ThickenedSemiSphere, sample_shape
from .training import TrainingConfig, TrainResult, oscillation_demo, train

# Narrower predictor for the multi-run comparisons so a full sweep fits a CPU budget.
BENCH_ARCH = Architecture(hidden_width=128, hidden_layers=4, skip_layers=(2,))
BENCH_ITERATIONS = 2000
CLOUD_SIZE = 10_000
EVAL_SAMPLES = 20_000
FIG3_THICKNESSES_MM = (0.5, 1.0, 1.5, 2.0)
FIG3_RADIUS_MM = 25.0


def bench_config(mode: str, seed: int, use_gfe: bool = True,
                 iterations: int = BENCH_ITERATIONS) -> TrainingConfig:
    return TrainingConfig.desk(mode=mode, seed=seed, use_gfe=use_gfe, iterations=iterations,
                               architecture=BENCH_ARCH.to_dict())


@dataclass
class Reconstruction:
    result: TrainResult
    mesh: TriangleMesh
    cell_diagonal: float  # in world units
    seconds: float


def reconstruct(cloud, config: TrainingConfig, params: MeshingParams | None = None,
                threads: int = 1) -> Reconstruction:
    """train -> grid -> marching cubes (signed mode) or UDF dual contouring."""
    params = params or MeshingParams()
    t0 = time.perf_counter()
    result = train(cloud, config)
    field = result.field(threads)
    grid = evaluate_grid(field, grid_bbox(result.data.cloud.positions), params.resolution, threads)
    if config.mode == "sdf_pull":
        mesh = marching_cubes(grid, 0.0, transform=result.transform)
    else:
        mesh = extract_udf_mesh(field, grid=grid, params=params, transform=result.transform,
                                threads=threads)
    diag = grid.cell_diagonal / result.transform.scale
    return Reconstruction(result, mesh, diag, time.perf_counter() - t0)


def assess(rec: Reconstruction, shape: AnalyticShape, reference: AnalyticShape | None = None,
           n: int = EVAL_SAMPLES, seed: int = 0) -> dict:
    """Distances to ``reference`` (default: ``shape``) plus artifacts relative to ``shape``."""
    report = evaluate_against_shape(rec.mesh, reference or shape, n=n, seed=seed)
    artifacts = artifact_detector(rec.mesh, shape, rec.cell_diagonal)
    return {"distances": report.to_dict(), "artifacts": artifacts.to_dict(),
            "cell_diagonal": rec.cell_diagonal, "n_vertices": rec.mesh.n_vertices,
            "config_hash": rec.result.config.config_hash()}


def _finish(out_dir, name: str, summary: dict) -> dict:
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps({"experiment": name, **summary}, indent=2,
                                                     sort_keys=True))
    return summary


def _save_mesh(out_dir, filename, rec: Reconstruction):
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_mesh(Path(out_dir) / filename, rec.mesh,
                   comments=[f"config_hash {rec.result.config.config_hash()}"])


def run_case(shape: AnalyticShape, mode: str, seed: int, use_gfe: bool = True, noise: float = 0.0,
             iterations: int = BENCH_ITERATIONS, reference: AnalyticShape | None = None,
             out_dir=None, tag: str = "") -> dict:
    cloud = sample_shape(shape, CLOUD_SIZE, noise_sigma=noise, seed=seed)
    rec = reconstruct(cloud, bench_config(mode, seed, use_gfe, iterations))
    _save_mesh(out_dir, f"{tag or shape.kind}_{mode}{'' if use_gfe else '_nogfe'}_s{seed}.obj", rec)
    return {"shape": shape.spec(), "mode": mode, "use_gfe": use_gfe, "seed": seed, "noise": noise,
            **assess(rec, shape, reference, seed=seed)}


FIG1_NOISE = 0.02


def fig1(seed: int = 0, out_dir=None, shapes=None, modes=("sdf_pull", "udf_tangent"),
         iterations: int = BENCH_ITERATIONS, noise: float = FIG1_NOISE) -> dict:
    """Closed vs open sphere, signed pull baseline vs unsigned tangent pipeline."""
    shapes = shapes or (Sphere(1.0), SemiSphere(1.0))
    runs = [run_case(s, m, seed, noise=noise, iterations=iterations, out_dir=out_dir)
            for s in shapes for m in modes]
    return _finish(out_dir, "fig1", {"seed": seed, "runs": runs})


def fig3(seed: int = 0, out_dir=None, thicknesses=FIG3_THICKNESSES_MM, radius: float = FIG3_RADIUS_MM,
         iterations: int = BENCH_ITERATIONS) -> dict:
    """Signed pull baseline on shells of increasing thickness.

    Holes are counted against the thick shell itself; distances are measured to
    its mid-surface, so a thicker reconstruction scores a larger distance.
    """
    runs = []
    for t in thicknesses:
        shape = ThickenedSemiSphere(radius, t)
        runs.append(run_case(shape, "sdf_pull", seed, iterations=iterations, reference=SemiSphere(radius),
                             out_dir=out_dir, tag=f"shell_t{t:g}"))
    return _finish(out_dir, "fig3", {"seed": seed, "runs": runs})


def fig6(seed: int = 0, out_dir=None) -> dict:
    return _finish(out_dir, "fig6", oscillation_demo(seed))


TABLE5_VARIANTS = (
    ("sdf_pull", False),
    ("udf_pull", False),
    ("udf_tangent", False),
    ("udf_tangent", True),
)
TABLE5_NOISE = 0.02


def table5(seed: int = 0, out_dir=None, variants=TABLE5_VARIANTS, iterations: int = BENCH_ITERATIONS,
           shape: AnalyticShape | None = None, noise: float = TABLE5_NOISE) -> dict:
    """Ablation over loss, target mode and global features on a noisy open shell."""
    shape = shape or SemiSphere(1.0)
    runs = [run_case(shape, mode, seed, use_gfe=gfe, noise=noise, iterations=iterations,
                     out_dir=out_dir, tag="table5")
            for mode, gfe in variants]
    return _finish(out_dir, "table5", {"seed": seed, "runs": runs})


EXPERIMENTS = {"fig1": fig1, "fig3": fig3, "fig6": fig6, "table5": table5}


def mean_metric(runs, key: str = "cd_bidirectional") -> float:
    return float(np.mean([r["distances"][key] for r in runs]))
