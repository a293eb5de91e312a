"""Global feature extractor + unsigned-distance predictor, Adam, checkpoints.

Derivatives come from torch autograd: the spatial gradient is taken with
``create_graph=True`` so losses containing it can be differentiated again
with respect to the parameters.
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import CorruptCheckpoint, DegenerateGradient, UnsupportedVersion
from .pointcloud import NormalizationTransform

EPS_GRAD = 1e-8
CHECKPOINT_MAGIC = b"UDF1"
CHECKPOINT_VERSION = 1
EVAL_CHUNK = 8192
READOUT_UNITS = 8


@dataclass
class Architecture:
    gfe_dims: tuple = (64, 128, 256)
    hidden_width: int = 256
    hidden_layers: int = 8
    skip_layers: tuple = (4,)
    softplus_beta: float = 100.0
    use_gfe: bool = True

    def __post_init__(self):
        self.gfe_dims = tuple(int(d) for d in self.gfe_dims)
        self.skip_layers = tuple(int(s) for s in self.skip_layers)

    @property
    def gf_dim(self) -> int:
        return self.gfe_dims[-1] if self.use_gfe else 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gfe_dims"] = list(self.gfe_dims)
        d["skip_layers"] = list(self.skip_layers)
        return d


class FieldNetwork(nn.Module):
    """PointNet-style encoder g (7 -> ... -> gf_dim, max-pooled) and MLP predictor u.

    The predictor sees [q, gf]. Because gf is shared by every query, the gf
    columns of the first and skip layers are applied once per call and broadcast.
    """

    def __init__(self, arch: Architecture | None = None, dtype=torch.float32):
        super().__init__()
        self.arch = arch = arch or Architecture()
        dims = (7,) + arch.gfe_dims
        self.gfe = nn.ModuleList(nn.Linear(a, b, dtype=dtype) for a, b in zip(dims[:-1], dims[1:]))
        self.in_dim = 3 + arch.gf_dim
        w = arch.hidden_width
        layers = []
        for l in range(arch.hidden_layers):
            fan_in = self.in_dim if l == 0 else w
            if l in arch.skip_layers and l > 0:
                fan_in = w + self.in_dim
            layers.append(nn.Linear(fan_in, w, dtype=dtype))
        layers.append(nn.Linear(w if arch.hidden_layers else self.in_dim, 1, dtype=dtype))
        self.predictor = nn.ModuleList(layers)

    @property
    def dtype(self):
        return self.predictor[0].weight.dtype

    def encode(self, feats: torch.Tensor) -> torch.Tensor:
        h = feats
        for i, lin in enumerate(self.gfe):
            h = lin(h)
            if i < len(self.gfe) - 1:
                h = F.relu(h)
        return h

    def global_feature(self, feats: torch.Tensor) -> torch.Tensor | None:
        if not self.arch.use_gfe:
            return None
        # torch.max returns the first maximal index, so ties go to the lowest point index
        return self.encode(feats).max(dim=0).values

    def _input_layer(self, lin, q, gf, h=None):
        w = self.arch.hidden_width
        W = lin.weight
        off = 0 if h is None else w
        out = q @ W[:, off:off + 3].T + lin.bias
        if h is not None:
            out = out + h @ W[:, :w].T
        if gf is not None:
            out = out + (gf @ W[:, off + 3:].T)
        return out

    def forward(self, q: torch.Tensor, gf: torch.Tensor | None = None) -> torch.Tensor:
        beta = self.arch.softplus_beta
        n_hidden = self.arch.hidden_layers
        h = None
        for l, lin in enumerate(self.predictor):
            if l == 0:
                h = self._input_layer(lin, q, gf)
            elif l in self.arch.skip_layers and l < n_hidden:
                h = self._input_layer(lin, q / math.sqrt(2), None if gf is None else gf / math.sqrt(2),
                                      h / math.sqrt(2))
            else:
                h = lin(h)
            if l < n_hidden:
                h = F.softplus(h, beta=beta)
        return h[..., 0]


def _as_tensor(x, dtype):
    if isinstance(x, torch.Tensor):
        return x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def cloud_tensor(net: FieldNetwork, cloud) -> torch.Tensor:
    return _as_tensor(cloud.features(), net.dtype)


def gfe_forward(net: FieldNetwork, cloud) -> torch.Tensor | None:
    """Global feature of a (normalized) featured cloud."""
    return net.global_feature(cloud_tensor(net, cloud))


def udf_forward(net: FieldNetwork, gf, q) -> np.ndarray:
    q = _as_tensor(q, net.dtype)
    single = q.ndim == 1
    with torch.no_grad():
        u = net(q.reshape(-1, 3), gf)
    u = u.numpy().astype(np.float64)
    return u[0] if single else u


def udf_and_grad(net: FieldNetwork, gf, q: torch.Tensor, create_graph: bool = False):
    """(u(q), du/dq) as tensors. With create_graph the gradient stays differentiable."""
    if not q.requires_grad:
        q = q.detach().requires_grad_(True)
    u = net(q, gf)
    (g,) = torch.autograd.grad(u.sum(), q, create_graph=create_graph)
    return u, g


def udf_spatial_gradient(net: FieldNetwork, gf, q) -> np.ndarray:
    qt = _as_tensor(q, net.dtype)
    single = qt.ndim == 1
    gf = None if gf is None else gf.detach()
    _, g = udf_and_grad(net, gf, qt.reshape(-1, 3))
    g = g.detach().numpy().astype(np.float64)
    return g[0] if single else g


def project_points(u, g, eps: float = EPS_GRAD):
    """Projection step u * g / |g| for arrays or tensors; returns (step, valid-mask)."""
    if isinstance(g, torch.Tensor):
        norm = g.norm(dim=-1)
        valid = norm >= eps
        safe = torch.where(valid, norm, torch.ones_like(norm))
        return u[..., None] * g / safe[..., None], valid
    norm = np.linalg.norm(g, axis=-1)
    valid = norm >= eps
    safe = np.where(valid, norm, 1.0)
    return u[..., None] * g / safe[..., None], valid


def project_point(field_fn, q):
    """Single-step projection q' = q - u(q) grad/|grad| for a value-and-gradient callable."""
    q = np.asarray(q, dtype=np.float64)
    u, g = field_fn(q.reshape(1, 3))
    step, valid = project_points(np.asarray(u).reshape(1), np.asarray(g).reshape(1, 3))
    if not valid[0]:
        raise DegenerateGradient(f"|grad u| < {EPS_GRAD} at {q}")
    return q - step[0]


# ---------------------------------------------------------------- initialisation

def _uniform_(t, bound, gen):
    with torch.no_grad():
        t.copy_((torch.rand(t.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)


def _normal_(t, mean, std, gen):
    with torch.no_grad():
        t.copy_(torch.randn(t.shape, generator=gen, dtype=torch.float64) * std + mean)


def _hidden_features(net: FieldNetwork, q: torch.Tensor, upto: int) -> torch.Tensor:
    """Hidden activations after predictor layers [0, upto), global feature ignored."""
    beta = net.arch.softplus_beta
    h = None
    for l in range(upto):
        lin = net.predictor[l]
        if l == 0:
            h = net._input_layer(lin, q, None)
        elif l in net.arch.skip_layers:
            h = net._input_layer(lin, q / math.sqrt(2), None, h / math.sqrt(2))
        else:
            h = lin(h)
        h = F.softplus(h, beta=beta)
    return h


def geometric_init(net: FieldNetwork, radius: float, seed: int, signed: bool = False,
                   n_calib: int = 4096, ridge: float = 1e-2) -> FieldNetwork:
    """Initialise so the predictor approximates distance to a centred sphere.

    Hidden layers get the geometric initialisation used for sign-agnostic
    learning (zero bias, N(0, 2/width) weights, global-feature columns zeroed),
    under which a constant read-out of the hidden features grows like |q|.
    The read-out vector is then fitted to |q| by ridge regression on random
    points of [-0.5, 0.5]^3 (softplus adds offsets a pure ReLU net lacks).
    signed=True then reads out |q| - radius. Otherwise the last hidden layer
    gets a few units computing softplus(+(|q| - r)) and as many computing
    softplus(-(|q| - r)); the output averages each group and adds them, giving
    ||q| - r|. Keeping the read-out on few units keeps the output weights large
    compared with the optimizer step, so early updates do not scramble it.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    gen = torch.Generator().manual_seed(int(seed))
    for lin in net.gfe:
        bound = 1.0 / math.sqrt(lin.in_features)
        _uniform_(lin.weight, bound, gen)
        _uniform_(lin.bias, bound, gen)
    w = net.arch.hidden_width
    n_hidden = net.arch.hidden_layers
    n_random = n_hidden if signed else n_hidden - 1
    with torch.no_grad():
        for l in range(n_random):
            lin = net.predictor[l]
            _normal_(lin.weight, 0.0, math.sqrt(2) / math.sqrt(w), gen)
            lin.bias.zero_()
            if l == 0:
                lin.weight[:, 3:] = 0.0
            elif l in net.arch.skip_layers:
                lin.weight[:, w + 3:] = 0.0
        q = (torch.rand((n_calib, 3), generator=gen, dtype=torch.float64) - 0.5).to(net.dtype)
        target = q.double().norm(dim=1)
        if n_random > 0:
            h = _hidden_features(net, q, n_random).double()
        else:
            h = q.double()
        # ridge read-out: h @ readout + offset ~ |q|
        design = torch.cat([h, torch.ones(n_calib, 1, dtype=torch.float64)], dim=1)
        reg = ridge * torch.eye(design.shape[1], dtype=torch.float64)
        reg[-1, -1] = 0.0
        sol = torch.linalg.solve(design.T @ design + reg, design.T @ target)
        readout, offset = sol[:-1], float(sol[-1])
        if signed:
            out = net.predictor[n_hidden]
            _normal_(out.weight, 0.0, 1e-4, gen)
            out.weight += readout.to(out.weight.dtype)
            out.bias.fill_(offset - radius)
            return net
        lin = net.predictor[n_hidden - 1]
        _normal_(lin.weight, 0.0, math.sqrt(2) / math.sqrt(w), gen)
        lin.bias.zero_()
        n_read = min(w // 2, READOUT_UNITS)
        cols = readout.shape[0]
        pos, neg = slice(0, n_read), slice(n_read, 2 * n_read)
        lin.weight[:2 * n_read, :cols] *= 0.01
        lin.weight[pos, :cols] += readout.to(lin.weight.dtype)
        lin.weight[neg, :cols] -= readout.to(lin.weight.dtype)
        lin.weight[:2 * n_read, cols:] = 0.0
        if cols < lin.weight.shape[1]:
            lin.weight[:, cols:] = 0.0
        lin.bias[pos] = offset - radius
        lin.bias[neg] = radius - offset
        out = net.predictor[n_hidden]
        _normal_(out.weight, 0.0, 1e-4, gen)
        out.weight[:, :2 * n_read] += 1.0 / n_read
        out.bias.zero_()
    return net


def build_network(arch: Architecture, seed: int, radius: float = 0.3, signed: bool = False,
                  dtype=torch.float32) -> FieldNetwork:
    net = FieldNetwork(arch, dtype=dtype)
    return geometric_init(net, radius, seed, signed=signed)


# ---------------------------------------------------------------- Adam

@dataclass
class OptimizerState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params],
                   0, lr, beta1, beta2, eps)


def adam_step(params, grads, state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            denom = (v / c2).sqrt_().add_(state.eps)
            p.addcdiv_(m / c1, denom, value=-state.lr)


# ---------------------------------------------------------------- checkpoints

def _pack_array(buf: list, t: torch.Tensor):
    a = t.detach().cpu().numpy().astype("<f4")
    buf.append(struct.pack("<I", a.ndim))
    buf.append(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.append(struct.pack("<Q", a.size))
    buf.append(a.tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self):
        (ndim,) = self.unpack("<I")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        (count,) = self.unpack("<Q")
        if count != int(np.prod(shape)):
            raise CorruptCheckpoint("array length does not match its shape")
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).copy()


@dataclass
class Checkpoint:
    net: FieldNetwork
    state: OptimizerState | None = None
    gf: torch.Tensor | None = None
    transform: NormalizationTransform = field(default_factory=NormalizationTransform.identity)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, net: FieldNetwork, state: OptimizerState | None = None, gf=None,
                    transform: NormalizationTransform | None = None, meta: dict | None = None) -> None:
    """Binary layout: magic, version, JSON header, float32 params, optimizer, global feature."""
    transform = transform or NormalizationTransform.identity()
    params = list(net.parameters())
    header = {
        "architecture": net.arch.to_dict(),
        "layer_shapes": [list(p.shape) for p in params],
        "transform": {"scale": float(transform.scale), "offset": [float(x) for x in transform.offset]},
        "meta": meta or {},
    }
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<I", len(hjson)), hjson,
           struct.pack("<I", len(params))]
    for p in params:
        _pack_array(buf, p)
    buf.append(struct.pack("<I", 1 if state is not None else 0))
    if state is not None:
        buf.append(struct.pack("<Q4d", state.step, state.lr, state.beta1, state.beta2, state.eps))
        for t in list(state.m) + list(state.v):
            _pack_array(buf, t)
    buf.append(struct.pack("<I", 1 if gf is not None else 0))
    if gf is not None:
        _pack_array(buf, gf)
    buf.append(b"END1")
    with open(path, "wb") as fh:
        fh.write(b"".join(buf))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (hlen,) = r.unpack("<I")
    try:
        header = json.loads(r.take(hlen).decode("utf-8"))
        arch = Architecture(**header["architecture"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    net = FieldNetwork(arch, dtype=torch.float32)
    params = list(net.parameters())
    (n,) = r.unpack("<I")
    if n != len(params):
        raise CorruptCheckpoint(f"{path}: {n} parameter arrays, architecture needs {len(params)}")
    with torch.no_grad():
        for p in params:
            a = r.array()
            if tuple(a.shape) != tuple(p.shape):
                raise CorruptCheckpoint(f"{path}: parameter shape {a.shape} != {tuple(p.shape)}")
            p.copy_(torch.from_numpy(a))
    state = None
    (has_state,) = r.unpack("<I")
    if has_state:
        step, lr, b1, b2, eps = r.unpack("<Q4d")
        m = [torch.from_numpy(r.array()) for _ in params]
        v = [torch.from_numpy(r.array()) for _ in params]
        state = OptimizerState(m, v, step, lr, b1, b2, eps)
    gf = None
    (has_gf,) = r.unpack("<I")
    if has_gf:
        gf = torch.from_numpy(r.array())
    if r.take(4) != b"END1":
        raise CorruptCheckpoint(f"{path}: missing end marker")
    tf = header["transform"]
    transform = NormalizationTransform(tf["scale"], np.asarray(tf["offset"], dtype=np.float64))
    return Checkpoint(net, state, gf, transform, header.get("meta", {}))


# ---------------------------------------------------------------- frozen-field evaluation

@contextlib.contextmanager
def torch_threads(n: int = 1):
    """Pin torch intra-op parallelism so reductions run in one fixed order."""
    prev = torch.get_num_threads()
    torch.set_num_threads(n)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


class NeuralField:
    """Read-only (value, gradient) evaluator over a trained network.

    Points are processed in fixed-size chunks so the result does not depend on
    how many worker threads share the work.
    """

    def __init__(self, net: FieldNetwork, gf=None, threads: int = 1, chunk: int = EVAL_CHUNK):
        self.net = net
        self.gf = None if gf is None else gf.detach().to(net.dtype)
        self.threads = max(1, int(threads))
        self.chunk = chunk
        for p in net.parameters():
            p.requires_grad_(False)

    def _chunk(self, pts: np.ndarray):
        q = torch.as_tensor(pts, dtype=self.net.dtype).requires_grad_(True)
        with torch.enable_grad():
            u = self.net(q, self.gf)
            (g,) = torch.autograd.grad(u.sum(), q)
        return u.detach().numpy().astype(np.float64), g.numpy().astype(np.float64)

    def evaluate(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return np.zeros(0), np.zeros((0, 3))
        starts = range(0, len(pts), self.chunk)
        blocks = [pts[s:s + self.chunk] for s in starts]
        with torch_threads(1):
            if self.threads > 1 and len(blocks) > 1:
                with ThreadPoolExecutor(self.threads) as pool:
                    parts = list(pool.map(self._chunk, blocks))
            else:
                parts = [self._chunk(b) for b in blocks]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def values(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = []
        with torch.no_grad(), torch_threads(1):
            for s in range(0, len(pts), self.chunk):
                q = torch.as_tensor(pts[s:s + self.chunk], dtype=self.net.dtype)
                out.append(self.net(q, self.gf).numpy().astype(np.float64))
        return np.concatenate(out) if out else np.zeros(0)
