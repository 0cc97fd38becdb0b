"""Flat ``key = value`` run configuration with dotted section prefixes.

Top-level keys cover inputs and run-wide settings; ``split.*``, ``train.*``,
``eval.*``, ``cold.*`` and ``synth.*`` map onto the matching dataclass fields.
Unknown keys are rejected. ``RunConfig.to_text`` writes the effective config,
which parses back to an identical object.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .corpus import SplitSpec
from .synth import SynthSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    task: str = "within_basket"     # within_basket | next_purchase | classification | cold_start | recovery
    negatives: int = 100
    ks: str = "5,10"
    mode: str = "complement"        # complement | user | two-stage
    recall_pool: int = 100
    basket: str = "order"           # order | window:N
    labels: str | None = None       # item_id<TAB>label, for classification
    label_fraction: float = 0.5
    truth: str | None = None        # truth.tsv from synth, for recovery

    def __post_init__(self):
        if self.task not in ("within_basket", "next_purchase", "classification", "cold_start", "recovery"):
            raise ConfigError(f"unknown eval task {self.task!r}")
        if self.mode not in ("complement", "user", "two-stage"):
            raise ConfigError(f"unknown ranking mode {self.mode!r}")
        if self.negatives < 1:
            raise ConfigError("eval.negatives must be >= 1")
        if any(k < 1 for k in self.k_values):
            raise ConfigError("eval.ks must be >= 1")
        if self.basket != "order" and not (self.basket.startswith("window:") and self.basket[7:].isdigit()):
            raise ConfigError(f"eval.basket must be 'order' or 'window:N', got {self.basket!r}")

    @property
    def k_values(self) -> tuple[int, ...]:
        try:
            return tuple(int(k) for k in self.ks.split(","))
        except ValueError:
            raise ConfigError(f"eval.ks must be comma-separated integers, got {self.ks!r}") from None


@dataclass(frozen=True)
class ColdConfig:
    holdout_fraction: float = 0.0   # items removed from training at prepare time
    steps: int = 200
    step_size: float = 0.05
    norm_cap: float | None = None

    def __post_init__(self):
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("cold.holdout_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    orders: str | None = None
    item_context: str | None = None
    user_context: str | None = None
    min_transactions: int = 10
    seed: int = 0
    threads: int = 1
    split: SplitSpec = field(default_factory=SplitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cold: ColdConfig = field(default_factory=ColdConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def train_config(self) -> TrainConfig:
        """Trainer settings with the run-wide seed and thread count."""
        return replace(self.train, seed=self.seed, threads=self.threads)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in fields(v):
                    if f"{f.name}.{g.name}" in _SHADOWED:
                        continue
                    lines.append(f"{f.name}.{g.name} = {_fmt(getattr(v, g.name))}")
            else:
                lines.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(lines) + "\n"


SECTIONS = {"split": SplitSpec, "train": TrainConfig, "eval": EvalConfig, "cold": ColdConfig,
            "synth": SynthSpec}
# run-wide values that would silently shadow the top-level keys
_SHADOWED = {"train.seed", "train.threads", "synth.seed"}


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw: str, hint):
    raw = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if raw.lower() in ("none", "null", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines, ``#`` comments and blank lines ignored."""
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def build(entries: dict[str, str]) -> RunConfig:
    top_hints = _hints(RunConfig)
    top, sections = {}, {name: {} for name in SECTIONS}
    for key, raw in entries.items():
        if key in _SHADOWED:
            raise ConfigError(f"{key}: use the top-level '{key.split('.')[1]}' key")
        head, dot, tail = key.partition(".")
        if dot:
            if head not in SECTIONS:
                raise ConfigError(f"unknown config section {head!r} in key {key!r}")
            hints = _hints(SECTIONS[head])
            if tail not in hints:
                raise ConfigError(f"unknown config key {key!r}")
            sections[head][tail] = _coerce(key, raw, hints[tail])
        else:
            if key not in top_hints or key in SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _coerce(key, raw, top_hints[key])
    try:
        built = {name: cls(**sections[name]) for name, cls in SECTIONS.items()}
        cfg = RunConfig(**top, **built)
        # the generator follows the run seed as well
        return replace(cfg, synth=replace(cfg.synth, seed=cfg.seed))
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load(path: str | Path | None = None, overrides=()) -> RunConfig:
    """Config file (optional) plus ``key=value`` overrides, later entries winning."""
    entries = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        entries.update(parse_lines(p.read_text(encoding="utf-8").splitlines(), str(p)))
    entries.update(parse_lines(overrides, "<override>"))
    return build(entries)


def from_text(text: str) -> RunConfig:
    return build(parse_lines(text.splitlines()))
