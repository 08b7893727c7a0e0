"""Experiment configuration: flat ``key = value`` files with strict validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..mlr import CLIP_MODES, EMBEDDING_GRADS, ClipConfig

MODES = ("classify", "diagnose", "sweep-r", "sweep-dim", "attack", "ood", "embed")
DATASETS = ("mnist", "gaussians", "hier-gaussians")
MODELS = ("clipped", "vanilla", "euclidean")


class ConfigError(ValueError):
    """Bad configuration; the CLI maps this to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "classify"
    seed: int = 0
    out: str = "runs"

    # data
    dataset: str = "mnist"
    data_dir: str = ""
    train_limit: int = 0  # 0 = use all
    test_limit: int = 0
    classes: int = 10
    per_class: int = 100
    spread: float = 1.0
    input_dim: int = 10
    groups: int = 2
    test_fraction: float = 0.25

    # model
    hidden: str = "256,64"
    dim: int = 16
    activation: str = "relu"
    output_gain: float = 1.0
    models: str = "clipped,vanilla,euclidean"
    clip: str = "hard_clip"
    r: float = 1.0
    beta: float = 0.0
    T: float = 1.0
    c: float = 1.0

    # optimisation
    epochs: int = 10
    batch_size: int = 64
    lr_e: float = 0.1
    lr_h: float = 0.01
    momentum: float = 0.9
    embedding_grad: str = "riemannian"

    # gradient diagnostic
    steps: int = 6000
    tracked: int = 6
    diag_r: str = "15,1"

    # sweeps
    r_values: str = "0.1,0.5,1,2,5,15"
    dims: str = "2,4,8,16"

    # attacks
    eps: float = 0.2
    pgd_steps: int = 40
    pgd_step_size: float = 0.01
    attack_limit: int = 1000
    adv_train: bool = False
    adv_eps: float = 0.1

    # OOD
    score: str = "both"  # softmax | energy | both
    ood_T: float = 1.0
    ood_shift: float = 6.0

    # embeddings
    tree_depth: int = 3
    tree_branching: int = 5
    edges: str = ""
    embed_dim: int = 10
    embed_epochs: int = 300
    embed_lr: float = 1.0
    negatives: int = 10
    embed_batch: int = 10
    burn_in: int = 10
    embed_modes: str = "euclidean,hyperbolic,clipped"

    # -- derived views ---------------------------------------------------------

    def hidden_sizes(self) -> list[int]:
        return _int_list(self.hidden, "hidden") if self.hidden.strip() else []

    def model_list(self) -> list[str]:
        return _str_list(self.models)

    def clip_config(self) -> ClipConfig:
        return ClipConfig(mode=self.clip, r=self.r, beta=self.beta, T=self.T)

    def r_list(self) -> list[float]:
        return _float_list(self.r_values, "r_values")

    def diag_r_list(self) -> list[float]:
        return _float_list(self.diag_r, "diag_r")

    def dim_list(self) -> list[int]:
        return _int_list(self.dims, "dims")

    def embed_mode_list(self) -> list[str]:
        return _str_list(self.embed_modes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# Settings that differ by experiment unless the config file overrides them.
MODE_DEFAULTS: dict[str, dict] = {
    "classify": {},
    "diagnose": {"dim": 2, "lr_e": 0.6, "lr_h": 0.003, "output_gain": 0.1, "models": "vanilla"},
    "sweep-r": {"dataset": "gaussians", "dim": 2, "spread": 0.5, "per_class": 60, "epochs": 20,
                "batch_size": 32, "models": "clipped"},
    "sweep-dim": {"dataset": "hier-gaussians", "groups": 4, "classes": 4, "per_class": 50,
                  "spread": 0.3, "epochs": 60, "batch_size": 32, "lr_e": 0.03, "lr_h": 0.1,
                  "models": "clipped,euclidean"},
    "attack": {"models": "clipped,vanilla"},
    "ood": {"dataset": "gaussians", "per_class": 100, "spread": 1.0, "epochs": 10, "batch_size": 32,
            "models": "clipped,vanilla,euclidean"},
    "embed": {},
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _str_list(text: str) -> list[str]:
    return _split(text)


def _int_list(text: str, key: str) -> list[int]:
    try:
        return [int(t) for t in _split(text)]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str, key: str) -> list[float]:
    try:
        return [float(t) for t in _split(text)]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


def _coerce(key: str, raw: str):
    typ = _FIELDS[key].type
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw, 0) if raw.lower().startswith(("0x", "0o", "0b")) else int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from exc
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines. ``#`` starts a comment; duplicates and unknown keys are errors."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def build_config(mode: str, values: dict | None = None, **overrides) -> ExperimentConfig:
    """Mode defaults, then file values, then explicit overrides (e.g. CLI flags)."""
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    merged = dict(MODE_DEFAULTS[mode])
    merged.update(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if merged.get("mode", mode) != mode:
        raise ConfigError(f"config is for mode {merged['mode']!r}, not {mode!r}")
    merged["mode"] = mode
    unknown = set(merged) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**merged)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.mode in MODES, f"mode must be one of {MODES}")
    need(0 <= cfg.seed < 2**64, "seed must be an unsigned 64-bit integer")
    need(cfg.dataset in DATASETS, f"dataset must be one of {DATASETS}")
    need(cfg.clip in CLIP_MODES, f"clip must be one of {CLIP_MODES}")
    need(cfg.embedding_grad in EMBEDDING_GRADS, f"embedding_grad must be one of {EMBEDDING_GRADS}")
    need(cfg.activation in ("relu", "tanh"), "activation must be relu or tanh")
    need(cfg.score in ("softmax", "energy", "both"), "score must be softmax, energy or both")
    for m in cfg.model_list():
        need(m in MODELS, f"unknown model {m!r}; expected a subset of {MODELS}")
    need(cfg.model_list(), "models must name at least one model")
    for m in cfg.embed_mode_list():
        need(m in ("euclidean", "hyperbolic", "clipped"), f"unknown embedding mode {m!r}")
    need(all(h > 0 for h in cfg.hidden_sizes()), "hidden sizes must be positive")
    need(cfg.dim >= 1 and cfg.embed_dim >= 1, "dimensions must be >= 1")
    need(cfg.classes >= 2, "classes must be >= 2")
    need(cfg.per_class >= 1 and cfg.groups >= 1 and cfg.input_dim >= 1, "data sizes must be >= 1")
    need(cfg.spread >= 0, "spread must be >= 0")
    need(0 < cfg.test_fraction < 1, "test_fraction must lie in (0, 1)")
    need(cfg.train_limit >= 0 and cfg.test_limit >= 0 and cfg.attack_limit >= 0, "limits must be >= 0")
    need(cfg.epochs >= 0 and cfg.steps >= 0 and cfg.embed_epochs >= 0, "epochs/steps must be >= 0")
    need(cfg.batch_size >= 1 and cfg.embed_batch >= 1, "batch sizes must be >= 1")
    need(cfg.r > 0 and cfg.T > 0 and cfg.c > 0 and cfg.beta >= 0, "r, T, c must be > 0 and beta >= 0")
    need(cfg.lr_e > 0 and cfg.lr_h > 0 and cfg.embed_lr > 0, "learning rates must be positive")
    need(0 <= cfg.momentum < 1, "momentum must lie in [0, 1)")
    need(cfg.output_gain > 0, "output_gain must be positive")
    need(cfg.tracked >= 0, "tracked must be >= 0")
    need(all(r > 0 for r in cfg.r_list()) and all(r > 0 for r in cfg.diag_r_list()), "r values must be > 0")
    need(cfg.r_list() and cfg.diag_r_list(), "r lists must be non-empty")
    need(cfg.dim_list() and all(d >= 1 for d in cfg.dim_list()), "dims must be >= 1")
    need(cfg.eps >= 0 and cfg.adv_eps >= 0, "eps must be >= 0")
    need(cfg.pgd_steps >= 1 and cfg.pgd_step_size > 0, "pgd_steps >= 1 and pgd_step_size > 0")
    need(cfg.ood_T > 0, "ood_T must be positive")
    need(cfg.tree_depth >= 1 and cfg.tree_branching >= 1, "tree_depth and tree_branching must be >= 1")
    need(cfg.negatives >= 1 and cfg.burn_in >= 0, "negatives >= 1 and burn_in >= 0")
    if cfg.mode == "diagnose":
        need(cfg.dim == 2, "the gradient diagnostic needs dim = 2")
