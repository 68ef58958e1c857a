"""Configuration objects and the flat ``key=value`` run-config format.

A run config is a plain text file, one ``key = value`` pair per line, ``#``
starts a comment. Every key has a default, so an empty file is a valid
config describing the full-scale reference tracker. Unknown keys, bad values
and cross-field constraint violations are all collected and reported in one
:class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    """Raised with every problem found in a config, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class FoundationConfig:
    patch_size: int = 16
    embed_dim: int = 768
    num_blocks: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    template_size: tuple[int, int] = (128, 128)
    search_size: tuple[int, int] = (256, 256)
    head_hidden: int = 256

    @property
    def template_grid(self) -> tuple[int, int]:
        return (self.template_size[0] // self.patch_size, self.template_size[1] // self.patch_size)

    @property
    def search_grid(self) -> tuple[int, int]:
        return (self.search_size[0] // self.patch_size, self.search_size[1] // self.patch_size)

    @property
    def num_template_tokens(self) -> int:
        h, w = self.template_grid
        return h * w

    @property
    def num_search_tokens(self) -> int:
        h, w = self.search_grid
        return h * w

    @property
    def mlp_hidden(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def problems(self) -> list[str]:
        out = []
        for name in ("patch_size", "embed_dim", "num_blocks", "num_heads", "head_hidden"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.mlp_ratio <= 0:
            out.append(f"mlp_ratio must be > 0, got {self.mlp_ratio}")
        if self.num_heads >= 1 and self.embed_dim % self.num_heads:
            out.append(f"embed_dim={self.embed_dim} not divisible by num_heads={self.num_heads}")
        for name in ("template_size", "search_size"):
            for axis, v in zip("HW", getattr(self, name)):
                if v < 1 or (self.patch_size >= 1 and v % self.patch_size):
                    out.append(f"{name} {axis}={v} not a positive multiple of patch_size={self.patch_size}")
        return out


@dataclass(frozen=True)
class TrackerConfig:
    foundation: FoundationConfig = field(default_factory=FoundationConfig)
    first_stage_blocks: int = 10
    uep_layers: tuple[int, ...] = (2, 5, 8)
    prompt_tokens: int = 2
    uep_low_dim: int = 8
    ip_low_dim: int = 8
    mfp_low_dim: int = 16
    fep_low_dim: int = 8
    # one IP per layer shared by both directions, or one per direction
    ip_per_direction: bool = False

    @property
    def fusion_location(self) -> int:
        return self.first_stage_blocks

    @property
    def second_stage_blocks(self) -> int:
        return self.foundation.num_blocks - self.first_stage_blocks

    @property
    def num_tokens(self) -> int:
        f = self.foundation
        return self.prompt_tokens + f.num_template_tokens + f.num_search_tokens

    def with_fusion_location(self, n: int) -> "TrackerConfig":
        return dataclasses.replace(self, first_stage_blocks=n,
                                   uep_layers=tuple(i for i in self.uep_layers if i <= n))

    def problems(self) -> list[str]:
        out = self.foundation.problems()
        L = self.foundation.num_blocks
        N = self.first_stage_blocks
        if not 1 <= N <= L - 1:
            out.append(f"first_stage_blocks={N} must satisfy 1 <= N <= num_blocks-1={L - 1} "
                       f"(second stage needs M = L - N >= 1)")
        bad = [i for i in self.uep_layers if not 1 <= i <= N]
        if bad:
            out.append(f"uep_layers {bad} outside 1..first_stage_blocks={N}")
        if len(set(self.uep_layers)) != len(self.uep_layers):
            out.append(f"uep_layers has duplicates: {list(self.uep_layers)}")
        if self.prompt_tokens < 0:
            out.append(f"prompt_tokens must be >= 0, got {self.prompt_tokens}")
        for name in ("uep_low_dim", "ip_low_dim", "mfp_low_dim", "fep_low_dim"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        return out

    def validate(self) -> "TrackerConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


@dataclass(frozen=True)
class LossWeights:
    lambda_giou: float = 2.0
    lambda_l1: float = 5.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 60
    samples_per_epoch: int = 60000
    learning_rate: float = 4e-4
    weight_decay: float = 1e-4
    decay_epoch: int = 48
    decay_factor: float = 0.1
    seed: int = 0
    # 0 means the full schedule, epochs * samples_per_epoch / batch_size
    steps: int = 0
    synthetic_pairs: int = 20
    loss: LossWeights = field(default_factory=LossWeights)

    @property
    def total_steps(self) -> int:
        if self.steps:
            return self.steps
        return self.epochs * self.samples_per_epoch // self.batch_size

    def problems(self) -> list[str]:
        out = []
        for name in ("batch_size", "epochs", "samples_per_epoch", "synthetic_pairs"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0:
            out.append(f"steps must be >= 0, got {self.steps}")
        if not 0 <= self.decay_epoch < self.epochs:
            out.append(f"decay_epoch={self.decay_epoch} must be < epochs={self.epochs}")
        if self.learning_rate <= 0:
            out.append(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            out.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.loss.lambda_giou < 0 or self.loss.lambda_l1 < 0:
            out.append("loss weights lambda_giou and lambda_l1 must be >= 0")
        return out


@dataclass(frozen=True)
class EvalConfig:
    precision_max: float = 50.0
    precision_step: float = 1.0
    precision_at: float = 20.0
    norm_precision_max: float = 0.5
    norm_precision_step: float = 0.01
    norm_precision_at: float = 0.2
    success_step: float = 0.05
    attribute_schema: str = "lasher"
    # score PR/NPR/SR against the per-frame best of the two ground truths
    max_fusion: bool = False

    def problems(self) -> list[str]:
        from .evalkit.attributes import SCHEMAS

        out = []
        for name in ("precision_step", "norm_precision_step", "success_step"):
            if getattr(self, name) <= 0:
                out.append(f"{name} must be > 0")
        if self.attribute_schema not in SCHEMAS:
            out.append(f"attribute_schema {self.attribute_schema!r} not one of {sorted(SCHEMAS)}")
        return out


@dataclass(frozen=True)
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    # crop scale around the target, as multiples of sqrt(w*h)
    template_factor: float = 2.0
    search_factor: float = 4.0

    def to_text(self) -> str:
        lines = []
        for key, (getter, _, _) in _KEYS.items():
            v = getter(self)
            text = f"{v[0]}x{v[1]}" if key in _SIZE_KEYS else _format(v)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# flat key table


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_size(s: str) -> tuple[int, int]:
    parts = s.lower().replace("×", "x").split("x")
    if len(parts) == 1:
        v = int(parts[0])
        return (v, v)
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    raise ValueError(f"not a size: {s!r} (use N or HxW)")


def _parse_layers(s: str) -> tuple[int, ...]:
    s = s.strip()
    if not s or s in ("none", "-"):
        return ()
    return tuple(sorted(int(p) for p in s.replace(" ", "").split(",") if p))


def _parse_str(s: str) -> str:
    return s.strip()


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v) if v else "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _section(path: str) -> tuple[Callable[[RunConfig], Any], Callable[[dict, Any], None]]:
    parts = path.split(".")

    def get(cfg: RunConfig) -> Any:
        obj: Any = cfg
        for p in parts:
            obj = getattr(obj, p)
        return obj

    def put(tree: dict, value: Any) -> None:
        node = tree
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value

    return get, put


_FIELDS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "patch_size": ("tracker.foundation.patch_size", _parse_int),
    "embed_dim": ("tracker.foundation.embed_dim", _parse_int),
    "num_blocks": ("tracker.foundation.num_blocks", _parse_int),
    "num_heads": ("tracker.foundation.num_heads", _parse_int),
    "mlp_ratio": ("tracker.foundation.mlp_ratio", _parse_float),
    "template_size": ("tracker.foundation.template_size", _parse_size),
    "search_size": ("tracker.foundation.search_size", _parse_size),
    "head_hidden": ("tracker.foundation.head_hidden", _parse_int),
    "first_stage_blocks": ("tracker.first_stage_blocks", _parse_int),
    "uep_layers": ("tracker.uep_layers", _parse_layers),
    "prompt_tokens": ("tracker.prompt_tokens", _parse_int),
    "uep_low_dim": ("tracker.uep_low_dim", _parse_int),
    "ip_low_dim": ("tracker.ip_low_dim", _parse_int),
    "mfp_low_dim": ("tracker.mfp_low_dim", _parse_int),
    "fep_low_dim": ("tracker.fep_low_dim", _parse_int),
    "ip_per_direction": ("tracker.ip_per_direction", _parse_bool),
    "batch_size": ("train.batch_size", _parse_int),
    "epochs": ("train.epochs", _parse_int),
    "samples_per_epoch": ("train.samples_per_epoch", _parse_int),
    "learning_rate": ("train.learning_rate", _parse_float),
    "weight_decay": ("train.weight_decay", _parse_float),
    "decay_epoch": ("train.decay_epoch", _parse_int),
    "decay_factor": ("train.decay_factor", _parse_float),
    "seed": ("train.seed", _parse_int),
    "steps": ("train.steps", _parse_int),
    "synthetic_pairs": ("train.synthetic_pairs", _parse_int),
    "lambda_giou": ("train.loss.lambda_giou", _parse_float),
    "lambda_l1": ("train.loss.lambda_l1", _parse_float),
    "focal_alpha": ("train.loss.focal_alpha", _parse_float),
    "focal_beta": ("train.loss.focal_beta", _parse_float),
    "precision_max": ("eval.precision_max", _parse_float),
    "precision_step": ("eval.precision_step", _parse_float),
    "precision_at": ("eval.precision_at", _parse_float),
    "norm_precision_max": ("eval.norm_precision_max", _parse_float),
    "norm_precision_step": ("eval.norm_precision_step", _parse_float),
    "norm_precision_at": ("eval.norm_precision_at", _parse_float),
    "success_step": ("eval.success_step", _parse_float),
    "attribute_schema": ("eval.attribute_schema", _parse_str),
    "max_fusion": ("eval.max_fusion", _parse_bool),
    "template_factor": ("template_factor", _parse_float),
    "search_factor": ("search_factor", _parse_float),
}

_ALIASES = {"fusion_location": "first_stage_blocks"}

_KEYS = {key: (*_section(path), parse) for key, (path, parse) in _FIELDS.items()}
_SIZE_KEYS = {"template_size", "search_size"}


def _build(tree: dict) -> RunConfig:
    t_tree = dict(tree.get("tracker", {}))
    f = FoundationConfig(**t_tree.pop("foundation", {}))
    tracker = TrackerConfig(foundation=f, **t_tree)
    train_tree = dict(tree.get("train", {}))
    loss = LossWeights(**train_tree.pop("loss", {}))
    train = TrainConfig(loss=loss, **train_tree)
    ev = EvalConfig(**tree.get("eval", {}))
    rest = {k: v for k, v in tree.items() if k not in ("tracker", "train", "eval")}
    return RunConfig(tracker=tracker, train=train, eval=ev, **rest)


def parse_config_text(text: str, overrides: list[str] | None = None) -> RunConfig:
    """Parse and validate config text; ``overrides`` are extra ``key=value`` lines."""
    problems: list[str] = []
    tree: dict = {}
    seen: dict[str, int] = {}
    lines = [(i + 1, line) for i, line in enumerate(text.splitlines())]
    lines += [(f"--set {j + 1}", line) for j, line in enumerate(overrides or [])]
    for lineno, raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _KEYS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen and not str(lineno).startswith("--set"):
            problems.append(f"line {lineno}: duplicate key {key!r} (first at line {seen[key]})")
            continue
        seen.setdefault(key, lineno)  # type: ignore[arg-type]
        _, put, parse = _KEYS[key]
        try:
            put(tree, parse(value))
        except ValueError as exc:
            problems.append(f"line {lineno}: bad value for {key}: {exc}")
    # constraint checks run on whatever parsed, so one pass reports everything
    cfg = _build(tree)
    problems += cfg.tracker.problems() + cfg.train.problems() + cfg.eval.problems()
    if cfg.template_factor <= 0 or cfg.search_factor <= 0:
        problems.append("template_factor and search_factor must be > 0")
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config_text(text, overrides)


def default_config() -> RunConfig:
    return parse_config_text("")


def toy_tracker_config(**changes: Any) -> TrackerConfig:
    """Small config used by the test-suite; exact float64 checks stay fast."""
    foundation = FoundationConfig(patch_size=16, embed_dim=16, num_blocks=4, num_heads=2,
                                  mlp_ratio=2.0, template_size=(32, 32), search_size=(64, 64),
                                  head_hidden=16)
    base = dict(foundation=foundation, first_stage_blocks=2, uep_layers=(2,), prompt_tokens=2)
    base.update(changes)
    return TrackerConfig(**base).validate()
