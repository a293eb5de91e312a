"""Losses, the self-supervised training loop, and the oscillation experiment.

All losses take a ``field`` callable mapping a (K, 3) tensor to ``(u, grad_u)``
tensors. For the network this is autograd with ``create_graph=True``; tests
substitute exact analytic fields.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import torch

from .errors import ConfigError, DegenerateGradient, EmptyBatch, NumericalOverflow
from .meshing import grid_bbox
from .neuralfield import (
    Architecture,
    FieldNetwork,
    NeuralField,
    OptimizerState,
    adam_step,
    build_network,
    load_checkpoint,
    project_points,
    save_checkpoint,
    torch_threads,
    udf_and_grad,
)
from .pointcloud import (
    AnchorSet,
    FeaturedPointCloud,
    NormalizationTransform,
    QuerySet,
    SpatialIndex,
    normalize,
    sample_grid_anchors,
    sample_queries,
    voxel_downsample,
)

MODES = ("udf_tangent", "udf_pull", "sdf_pull")


@dataclass
class TrainingConfig:
    n_points: int = 40_000
    queries_per_point: int = 20
    knn_k: int = 50
    batch_size: int = 5000
    anchors: int = 1000
    lambda_gs: float = 0.001
    iterations: int = 30_000
    learning_rate: float = 0.001
    seed: int = 0
    mode: str = "udf_tangent"
    use_gfe: bool = True
    init_radius: float = 0.3
    architecture: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if isinstance(self.architecture, dict):
            self.architecture = Architecture(**self.architecture)
        self.architecture.use_gfe = bool(self.use_gfe)
        self.validate()

    def validate(self):
        for name in ("n_points", "queries_per_point", "knn_k", "batch_size", "anchors", "iterations"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lambda_gs < 0:
            raise ConfigError("lambda_gs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, not {self.mode!r}")

    @classmethod
    def desk(cls, **overrides) -> "TrainingConfig":
        """Scaled-down defaults for single-core CPU runs."""
        base = dict(n_points=4000, batch_size=1000, iterations=5000, anchors=500, lambda_gs=0.1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        d = dict(d)
        if "architecture" in d:
            arch_known = {f.name for f in fields(Architecture)}
            bad = set(d["architecture"]) - arch_known
            if bad:
                raise ConfigError(f"unknown architecture keys: {sorted(bad)}")
            d["architecture"] = Architecture(**d["architecture"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- losses

def _masked_mean(per_sample: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    if not bool(valid.any()):
        raise EmptyBatch("every sample in the batch has a vanishing gradient")
    return per_sample[valid].sum() / valid.sum()


def loss_pull(field_fn, q: torch.Tensor, t: torch.Tensor):
    """Mean squared distance between projected queries and their static targets."""
    u, g = field_fn(q)
    step, valid = project_points(u, g)
    q_proj = q - step
    per = ((q_proj - t) ** 2).sum(dim=-1)
    return _masked_mean(per, valid), int((~valid).sum())


def dynamic_targets(u: torch.Tensor, g: torch.Tensor, q: torch.Tensor, index: SpatialIndex):
    """Nearest cloud point to each projected query, as a constant (no gradient)."""
    with torch.no_grad():
        step, valid = project_points(u.detach(), g.detach())
        q_proj = (q.detach() - step).double().numpy()
    idx, _ = index.nearest(q_proj)
    targets = torch.as_tensor(index.points[idx], dtype=q.dtype)
    return targets, valid


def dynamic_nearest(field_fn, index: SpatialIndex, q) -> np.ndarray:
    """Target f(q') for query points q under the current field."""
    qt = torch.as_tensor(np.asarray(q, dtype=np.float64).reshape(-1, 3))
    u, g = field_fn(qt)
    targets, valid = dynamic_targets(u, g, qt, index)
    if not bool(valid.all()):
        raise DegenerateGradient("vanishing gradient at a query point")
    out = targets.double().numpy()
    return out[0] if np.ndim(q) == 1 else out


def tangent_residuals(u, g, q, targets):
    return (g * (q - targets)).sum(dim=-1) - u


def loss_tangent(field_fn, q: torch.Tensor, index: SpatialIndex):
    """Tangent-plane loss with targets re-queried from the projected points."""
    u, g = field_fn(q)
    targets, valid = dynamic_targets(u, g, q, index)
    per = tangent_residuals(u, g, q, targets) ** 2
    return _masked_mean(per, valid), int((~valid).sum())


def loss_tangent_fixed(field_fn, q: torch.Tensor, targets: torch.Tensor):
    u, g = field_fn(q)
    _, valid = project_points(u, g)
    per = tangent_residuals(u, g, q, targets) ** 2
    return _masked_mean(per, valid)


def loss_gs(value_fn, anchors: torch.Tensor, distances: torch.Tensor) -> torch.Tensor:
    """Mean squared error between predicted and exact nearest-cloud distances at anchors."""
    return ((value_fn(anchors) - distances) ** 2).mean()


def loss_total(l_tangent: torch.Tensor, l_gs: torch.Tensor, lambda_gs: float) -> torch.Tensor:
    return l_tangent + lambda_gs * l_gs


def network_field(net: FieldNetwork, gf, create_graph: bool = True):
    return lambda q: udf_and_grad(net, gf, q, create_graph=create_graph)


def loss_param_gradients(net: FieldNetwork, loss: torch.Tensor, context: str = "") -> list:
    """d(loss)/d(parameters); parameters the loss does not touch get zeros."""
    params = list(net.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    if not torch.isfinite(loss) or any(not bool(torch.isfinite(g).all()) for g in out):
        raise NumericalOverflow(f"non-finite loss or gradient {context}".strip())
    return out


# ---------------------------------------------------------------- data preparation

@dataclass
class PreparedData:
    cloud: FeaturedPointCloud  # normalized and downsampled
    transform: NormalizationTransform
    index: SpatialIndex
    queries: QuerySet
    anchors: AnchorSet


def prepare(cloud: FeaturedPointCloud, config: TrainingConfig) -> PreparedData:
    """normalize -> voxel downsample to N -> index -> queries -> anchors."""
    norm, tf = normalize(cloud)
    down = voxel_downsample(norm, config.n_points, seed=config.seed)
    index = SpatialIndex(down)
    k = min(config.knn_k, len(down) - 1)
    queries = sample_queries(down, index, config.queries_per_point, k, seed=config.seed + 1)
    anchors = sample_grid_anchors(down, index, config.anchors, seed=config.seed + 2)
    return PreparedData(down, tf, index, queries, anchors)


class BatchStream:
    """Shuffled without-replacement stream; batch i is a pure function of (seed, i)."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch, self.seed = n, batch, seed
        self._perms = {}

    def _perm(self, epoch):
        if epoch not in self._perms:
            if len(self._perms) > 4:
                self._perms.pop(min(self._perms))
            self._perms[epoch] = np.random.default_rng([self.seed, epoch]).permutation(self.n)
        return self._perms[epoch]

    def __call__(self, iteration: int) -> np.ndarray:
        start = iteration * self.batch
        out = []
        while len(out) < self.batch:
            epoch, off = divmod(start + len(out), self.n)
            take = min(self.batch - len(out), self.n - off)
            out.extend(self._perm(epoch)[off:off + take])
        return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    COLUMNS = ("iteration", "l_tangent", "l_gs", "total", "skipped", "millis")

    def append(self, **rec):
        self.records.append(rec)

    def losses(self) -> list:
        """Records without wall time: the deterministic part of the log."""
        return [tuple(r[c] for c in self.COLUMNS[:-1]) for r in self.records]

    def column(self, name) -> np.ndarray:
        return np.asarray([r[name] for r in self.records])

    def write_csv(self, path, comments=None):
        with open(path, "w", newline="") as fh:
            for c in comments or []:
                fh.write(f"# {c}\n")
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r["iteration"], repr(r["l_tangent"]), repr(r["l_gs"]), repr(r["total"]),
                            r["skipped"], r["millis"]])


@dataclass
class TrainResult:
    net: FieldNetwork
    transform: NormalizationTransform
    log: TrainingLog
    gf: torch.Tensor | None
    state: OptimizerState
    data: PreparedData
    config: TrainingConfig

    def field(self, threads: int = 1) -> NeuralField:
        return NeuralField(self.net, self.gf, threads=threads)

    def meta(self, **extra) -> dict:
        return checkpoint_meta(self.config, self.data, self.state.step, **extra)

    def save(self, path, **extra):
        save_checkpoint(path, self.net, self.state, self.gf, self.transform, meta=self.meta(**extra))


def checkpoint_meta(config: TrainingConfig, data: PreparedData, step: int, **extra) -> dict:
    lo, hi = grid_bbox(data.cloud.positions)
    return {"mode": config.mode, "config_hash": config.config_hash(), "iterations": step,
            "grid_bbox": [lo.tolist(), hi.tolist()], **extra}


def train(cloud: FeaturedPointCloud, config: TrainingConfig, resume_from=None,
          checkpoint_path=None, progress=None, data: PreparedData | None = None) -> TrainResult:
    """Fit a field to ``cloud`` according to ``config.mode``.

    ``resume_from`` may be a checkpoint path: its parameters, optimizer state and
    step counter are restored, and the batch stream continues where it stopped.
    """
    config.validate()
    with torch_threads(1):
        torch.manual_seed(config.seed)
        data = data or prepare(cloud, config)
        signed = config.mode == "sdf_pull"
        net = build_network(config.architecture, config.seed, config.init_radius, signed=signed)
        params = list(net.parameters())
        state = OptimizerState.zeros_like(params, lr=config.learning_rate)
        if resume_from is not None:
            ck = load_checkpoint(resume_from)
            with torch.no_grad():
                for p, src in zip(params, ck.net.parameters()):
                    p.copy_(src)
            if ck.state is not None:
                state = ck.state
        feats = torch.as_tensor(data.cloud.features(), dtype=net.dtype)
        queries = torch.as_tensor(data.queries.queries, dtype=net.dtype)
        static_t = torch.as_tensor(data.queries.static_targets, dtype=net.dtype)
        anchors = torch.as_tensor(data.anchors.anchors, dtype=net.dtype)
        anchor_d = torch.as_tensor(data.anchors.anchor_distances, dtype=net.dtype)
        stream = BatchStream(len(queries), min(config.batch_size, len(queries)), config.seed + 3)
        log = TrainingLog()
        gf = None
        for it in range(state.step, config.iterations):
            t0 = time.perf_counter()
            idx = torch.as_tensor(stream(it))
            q = queries[idx].clone().requires_grad_(True)
            try:
                gf = net.global_feature(feats)
                u, g = udf_and_grad(net, gf, q, create_graph=True)
                if not (torch.isfinite(u).all() and torch.isfinite(g).all()):
                    raise NumericalOverflow(f"non-finite field value at iteration {it}")
                l_gs = torch.zeros((), dtype=net.dtype)
                if config.mode == "udf_tangent":
                    targets, valid = dynamic_targets(u, g, q, data.index)
                    l_main = _masked_mean(tangent_residuals(u, g, q, targets) ** 2, valid)
                    if config.lambda_gs > 0:
                        l_gs = loss_gs(lambda x: net(x, gf), anchors, anchor_d)
                    total = loss_total(l_main, l_gs, config.lambda_gs)
                else:
                    step, valid = project_points(u, g)
                    l_main = _masked_mean(((q - step - static_t[idx]) ** 2).sum(dim=-1), valid)
                    total = l_main
                skipped = int((~valid).sum())
                grads = loss_param_gradients(net, total, context=f"at iteration {it}")
            except NumericalOverflow:
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, net, state, gf, data.transform,
                                    meta=checkpoint_meta(config, data, state.step, aborted=True))
                raise
            adam_step(params, grads, state)
            log.append(iteration=it, l_tangent=l_main.item(), l_gs=l_gs.item(), total=total.item(),
                       skipped=skipped, millis=int(round(1000 * (time.perf_counter() - t0))))
            if progress is not None:
                progress(it, log.records[-1])
        with torch.no_grad():
            gf = net.global_feature(feats)
        result = TrainResult(net, data.transform, log, gf, state, data, config)
        if checkpoint_path is not None:
            result.save(checkpoint_path)
        return result


def train_sdf_baseline(cloud: FeaturedPointCloud, config: TrainingConfig, **kw) -> TrainResult:
    return train(cloud, replace(config, mode="sdf_pull"), **kw)


# ---------------------------------------------------------------- oscillation experiment

# Two-dimensional layout embedded in the z = 0 plane. The surface is the line
# y = 0; t3 is an off-surface (noisy) sample. q3's static nearest point is t3,
# while its projection onto the surface lies nearest to t2.
OSC_TARGETS = np.array([[-0.2, 0.0, 0.0], [0.0, 0.0, 0.0], [0.18, 0.1, 0.0]])
OSC_QUERIES = np.array([[-0.12, 0.12, 0.0], [0.0, 0.12, 0.0], [0.09, 0.12, 0.0]])


def _pretrain_plane(net: FieldNetwork, seed: int, iterations: int, lr: float = 1e-2) -> None:
    """Regress the field onto |y|, the exact distance to the layout's surface line."""
    rng = np.random.default_rng([seed, 6])
    pts = rng.uniform((-0.3, -0.1, -0.05), (0.3, 0.3, 0.05), size=(512, 3))
    x = torch.as_tensor(pts, dtype=net.dtype)
    y = x[:, 1].abs()
    params = list(net.parameters())
    state = OptimizerState.zeros_like(params, lr=lr)
    for _ in range(iterations):
        loss = ((net(x) - y) ** 2).mean()
        adam_step(params, loss_param_gradients(net, loss), state)


def oscillation_demo(seed: int = 0, iterations: int = 2000, window: int = 200,
                     lr: float = 0.05, width: int = 16, layers: int = 2,
                     pretrain: int = 1000) -> dict:
    """Train one tiny field with static targets + pull loss and one with dynamic
    targets + tangent loss, alternating the batches {q1, q2} and {q2, q3}; report
    the spread of u(q3) over the last ``window`` iterations of each. Both runs
    start from the same field, pre-fit to the exact distance of the surface line."""
    index = SpatialIndex(OSC_TARGETS)
    static_idx, _ = index.nearest(OSC_QUERIES)
    batches = [np.array([0, 1]), np.array([1, 2])]
    arch = Architecture(hidden_width=width, hidden_layers=layers, skip_layers=(), use_gfe=False)
    q_all = torch.as_tensor(OSC_QUERIES)
    t_static = torch.as_tensor(OSC_TARGETS[static_idx])
    traces = {}
    with torch_threads(1):
        base = build_network(arch, seed, radius=0.3, dtype=torch.float64)
        _pretrain_plane(base, seed, pretrain)
        for mode in ("pull", "tangent"):
            net = copy.deepcopy(base)
            params = list(net.parameters())
            fld = network_field(net, None)
            trace = []
            for it in range(iterations):
                b = batches[it % 2]
                q = q_all[b].clone().requires_grad_(True)
                if mode == "pull":
                    loss, _ = loss_pull(fld, q, t_static[b])
                else:
                    loss, _ = loss_tangent(fld, q, index)
                with torch.no_grad():
                    for p, g in zip(params, loss_param_gradients(net, loss)):
                        p -= lr * g
                    trace.append(float(net(q_all[2:3])[0]))
            traces[mode] = np.asarray(trace)
        final_targets = dynamic_nearest(network_field(net, None, create_graph=False), index, OSC_QUERIES)
    tail = {m: tr[-window:] for m, tr in traces.items()}
    return {
        "seed": seed,
        "iterations": iterations,
        "window": window,
        "std_pull": float(np.std(tail["pull"])),
        "std_tangent": float(np.std(tail["tangent"])),
        "u_q3_pull_final": float(traces["pull"][-1]),
        "u_q3_tangent_final": float(traces["tangent"][-1]),
        "q3_static_target": OSC_TARGETS[static_idx[2]].tolist(),
        "q3_dynamic_target_tangent": final_targets[2].tolist(),
        "true_distance_q3": float(OSC_QUERIES[2, 1]),
        "optimizer": f"gradient descent, lr={lr}",
    }
