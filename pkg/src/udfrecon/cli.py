"""Command-line front end: ``udfrecon <command> ...``.

Exit codes: 0 success, 1 domain error (reported as JSON on stderr), 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .config import dump_config, load_config
from .errors import ConfigError, ReconError
from .experiments import EXPERIMENTS
from .ingest import compound_sweep, read_manifest
from .io import read_cloud, read_mesh, write_cloud, write_mesh
from .meshing import artifact_detector, evaluate_grid, extract_udf_mesh, marching_cubes
from .metrics import evaluate_against_shape, evaluate_reconstruction
from .neuralfield import NeuralField, load_checkpoint
from .synth import is_shape_spec, parse_shape, sample_shape, simulate_sweep, top_down_probe_path
from .training import train


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _write_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def cmd_synth(args) -> int:
    shape = parse_shape(args.shape)
    h = params_hash({"shape": shape.spec(), "n": args.n, "noise": args.noise, "seed": args.seed,
                     "sweep": bool(args.sweep), "frames": args.frames})
    if args.sweep:
        path = top_down_probe_path(shape, n_frames=args.frames)
        simulate_sweep(shape, path, seed=args.seed, out_dir=args.out)
        print(f"wrote sweep to {args.out} (config_hash {h})")
        return 0
    cloud = sample_shape(shape, args.n, noise_sigma=args.noise, seed=args.seed)
    write_cloud(args.out, cloud, comments=[f"config_hash {h}", f"shape {shape.spec()}"])
    print(f"wrote {len(cloud)} points to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    manifest = read_manifest(args.manifest)
    cloud = compound_sweep(manifest, threads=args.threads)
    h = params_hash({"manifest": manifest.name, "frames": len(manifest.frames)})
    write_cloud(args.out, cloud, comments=[f"config_hash {h}", f"manifest {manifest.name}"])
    print(f"wrote {len(cloud)} points from {len(manifest.frames)} frames to {args.out}")
    return 0


def _config(args):
    return load_config(args.config, overrides=args.set or (), preset_name=args.preset)


def cmd_train(args) -> int:
    cfg = _config(args)
    cloud = read_cloud(args.cloud)
    result = train(cloud, cfg.training, resume_from=args.resume, checkpoint_path=args.out)
    if args.log:
        result.log.write_csv(args.log, comments=[f"config_hash {cfg.config_hash()}"])
    done = len(result.log.records)
    print(f"ran {done} iterations ({cfg.training.mode}), checkpoint at step {result.state.step}")
    return 0


def cmd_extract(args) -> int:
    cfg = _config(args)
    params = cfg.meshing
    if args.resolution:
        params.resolution = args.resolution
    ck = load_checkpoint(args.checkpoint)
    field = NeuralField(ck.net, ck.gf, threads=args.threads)
    bbox = ck.meta.get("grid_bbox")
    if bbox is None:
        raise ConfigError(f"{args.checkpoint} carries no grid box; retrain with this version")
    grid = evaluate_grid(field, bbox, params.resolution, threads=args.threads)
    if ck.meta.get("mode") == "sdf_pull":
        mesh = marching_cubes(grid, 0.0, transform=ck.transform)
    else:
        mesh = extract_udf_mesh(field, grid=grid, params=params, transform=ck.transform,
                                threads=args.threads)
    h = params_hash({"checkpoint": ck.meta.get("config_hash"), "meshing": cfg.to_dict()["meshing"]})
    write_mesh(args.out, mesh, comments=[f"config_hash {h}",
                                         f"cell_diagonal {grid.cell_diagonal / ck.transform.scale!r}"])
    print(f"wrote {mesh.n_vertices} vertices, {mesh.n_triangles} triangles to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    m = cfg.metrics
    mode = args.mode or m.mode
    n = args.n or m.n_samples
    seed = m.seed if args.seed is None else args.seed
    recon = read_mesh(args.recon)
    extra = {}
    if is_shape_spec(args.reference):
        shape = parse_shape(args.reference)
        report = evaluate_against_shape(recon, shape, n=n, mode=mode, seed=seed)
        if args.cell_diagonal:
            extra["artifacts"] = artifact_detector(recon, shape, args.cell_diagonal).to_dict()
    else:
        report = evaluate_reconstruction(recon, read_mesh(args.reference), n=n, mode=mode, seed=seed)
    ref = args.reference if is_shape_spec(args.reference) else file_digest(args.reference)
    h = params_hash({"recon": file_digest(args.recon), "reference": ref, "n": n, "mode": mode,
                     "seed": seed, "cell_diagonal": args.cell_diagonal})
    _write_json(args.out, {"config_hash": h, **report.to_dict(), **extra})
    if args.csv:
        Path(args.csv).write_text(f"# config_hash {h}\n{report.csv_header()}\n{report.csv_row()}\n")
    return 0


def cmd_repro(args) -> int:
    out = Path(args.out_dir)
    EXPERIMENTS[args.experiment](seed=args.seed, out_dir=out)
    h = params_hash({"experiment": args.experiment, "seed": args.seed})
    path = out / "summary.json"
    payload = json.loads(path.read_text())
    payload["config_hash"] = h
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"wrote {path}")
    return 0


def cmd_config(args) -> int:
    cfg = _config(args)
    sys.stdout.write(dump_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="udfrecon", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for evaluation (results do not depend on it)")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--preset", choices=("paper", "desk"), default="paper",
                        help="defaults the config file overrides")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")

    s = sub.add_parser("synth", help="sample a synthetic shape to a cloud or a sweep directory")
    s.add_argument("shape", help='shape spec, e.g. "semi_sphere:r=1.0"')
    s.add_argument("--n", type=int, default=20_000)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sweep", action="store_true", help="write a tracked sweep directory instead")
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="compound a sweep directory into a featured cloud")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="fit a field to a cloud")
    s.add_argument("cloud")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="per-iteration CSV log")
    s.add_argument("--resume", help="continue from this checkpoint")
    with_config(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("extract", help="mesh a trained checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("--resolution", type=int)
    s.add_argument("--out", required=True)
    with_config(s)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("eval", help="compare a mesh to a reference mesh or analytic shape")
    s.add_argument("recon")
    s.add_argument("reference", help="mesh file or shape spec")
    s.add_argument("--mode", choices=("single", "bidirectional"))
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--cell-diagonal", type=float, help="also run the artifact detector (shape refs)")
    s.add_argument("--out", default="-")
    s.add_argument("--csv")
    with_config(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("repro", help="run a canned reproduction experiment")
    s.add_argument("experiment", choices=sorted(EXPERIMENTS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_repro)

    s = sub.add_parser("config", help="print the effective configuration as TOML")
    with_config(s)
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except (ReconError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
