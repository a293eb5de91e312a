"""Run configuration: one TOML file with [training], [meshing], [metrics], [paths]."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .meshing import MeshingParams
from .metrics import DEFAULT_SAMPLES
from .training import TrainingConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class MetricParams:
    n_samples: int = DEFAULT_SAMPLES
    mode: str = "bidirectional"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("single", "bidirectional"):
            raise ConfigError(f"metrics.mode must be 'single' or 'bidirectional', not {self.mode!r}")
        if self.n_samples < 1:
            raise ConfigError("metrics.n_samples must be >= 1")


@dataclass
class RunConfig:
    experiment: str = "run"
    training: TrainingConfig = field(default_factory=TrainingConfig)
    meshing: MeshingParams = field(default_factory=MeshingParams)
    metrics: MetricParams = field(default_factory=MetricParams)
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "training": self.training.to_dict(),
                "meshing": asdict(self.meshing), "metrics": asdict(self.metrics),
                "paths": dict(self.paths)}

    def config_hash(self) -> str:
        """Hash of everything that affects numerical results (paths excluded)."""
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        training = base.training.to_dict()
        arch = d.get("training", {}).get("architecture", {})
        training.update({k: v for k, v in d.get("training", {}).items() if k != "architecture"})
        training["architecture"] = {**training["architecture"], **arch}
        try:
            return cls(
                experiment=str(d.get("experiment", base.experiment)),
                training=TrainingConfig.from_dict(training),
                meshing=MeshingParams.from_dict({**asdict(base.meshing), **d.get("meshing", {})}),
                metrics=_metric_params({**asdict(base.metrics), **d.get("metrics", {})}),
                paths={**base.paths, **d.get("paths", {})},
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _metric_params(d: dict) -> MetricParams:
    bad = set(d) - {f.name for f in fields(MetricParams)}
    if bad:
        raise ConfigError(f"unknown metrics keys: {sorted(bad)}")
    return MetricParams(**d)


def preset(name: str) -> RunConfig:
    if name == "paper":
        return RunConfig(training=TrainingConfig(), meshing=MeshingParams(resolution=256))
    if name == "desk":
        return RunConfig(training=TrainingConfig.desk(), metrics=MetricParams(n_samples=10_000))
    raise ConfigError(f"unknown preset {name!r} (expected 'paper' or 'desk')")


def parse_override(text: str) -> tuple[list, object]:
    """'training.iterations=100' -> (['training', 'iterations'], 100); values are TOML literals."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip().split("."), value


def load_config(path=None, overrides=(), preset_name: str = "paper") -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = tomllib.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides:
        keys, value = parse_override(item)
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-table")
        node[keys[-1]] = value
    return RunConfig.from_dict(doc, base=preset(preset_name))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    lines = [f"experiment = {_toml_value(d['experiment'])}", ""]
    arch = d["training"].pop("architecture")
    for section in ("training", "meshing", "metrics", "paths"):
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in d[section].items()]
        lines.append("")
        if section == "training":
            lines.append("[training.architecture]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in arch.items()]
            lines.append("")
    return "\n".join(lines)
