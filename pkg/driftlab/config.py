"""
Experiment configuration.

Configs are YAML (or JSON, which YAML also parses) mappings validated by
pydantic models that reject unknown keys:

    name: paper-shape
    seeds: [1, 2, 3, 4, 5]
    game:
      vocab_size: 20
    finetune:
      method: ssil
      alpha: 0.5
    sweep:
      method: [gumbel, s2p, sil, ssil]
"""

from __future__ import annotations

import itertools
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError

Method = Literal["gumbel", "s2p", "sil", "ssil", "mixdata"]
SIL_FAMILY = ("sil", "ssil", "mixdata")
PRESET_DIR = Path(__file__).parent / "presets"
OUTPUT_ENV = "DRIFTLAB_OUT"

# method-specific fields: which methods accept them, and their defaults
METHOD_FIELDS: dict[str, tuple[tuple[str, ...], dict[str, float]]] = {
    "alpha": (("s2p", "ssil"), {"s2p": 1.0, "ssil": 0.5}),
    "beta": (("mixdata",), {"mixdata": 0.2}),
    "k1": (SIL_FAMILY, {m: 3000 for m in SIL_FAMILY}),
    "k2": (SIL_FAMILY, {m: 200 for m in SIL_FAMILY}),
    "k2_prime": (SIL_FAMILY, {m: 300 for m in SIL_FAMILY}),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GameConfig(_Strict):
    vocab_size: int = Field(20, ge=2)
    length_min: int = Field(4, ge=1)
    length_max: int = Field(8, ge=1)
    zipf_exponent: float = Field(1.0, ge=0.0)
    shift: bool = True
    shift_seed: int = 17
    reverse_target: bool = True
    seed: int = 0
    pretrain_pairs: int = Field(10000, ge=1)
    task_pairs: int = Field(3000, ge=1)
    valid_pairs: int = Field(500, ge=1)
    eval_pairs: int = Field(500, ge=1)
    # None: the language model trains on the pivot side of the pretraining corpus
    lm_pairs: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check_lengths(self) -> "GameConfig":
        if self.length_max < self.length_min:
            raise ValueError(f"length_max {self.length_max} < length_min {self.length_min}")
        return self


class PretrainConfig(_Strict):
    epochs: int = Field(20, ge=0)
    lm_epochs: int = Field(3, ge=0)
    lr: float = Field(3e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    hidden_size: int = Field(32, ge=1)
    grad_clip: Optional[float] = 5.0


class FinetuneConfig(_Strict):
    """
    Interactive finetuning settings.

    ``alpha``, ``beta``, ``k1``, ``k2`` and ``k2_prime`` are method specific;
    leaving them unset selects the method default (see ``resolved``).
    """
    method: Method = "ssil"
    alpha: Optional[float] = Field(None, ge=0.0)
    beta: Optional[float] = Field(None, ge=0.0, le=1.0)
    k1: Optional[int] = Field(None, ge=1)
    k2: Optional[int] = Field(None, ge=0)
    k2_prime: Optional[int] = Field(None, ge=0)
    tau: float = Field(0.5, gt=0.0)
    lr: float = Field(1e-3, gt=0.0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(32, ge=1)
    total_steps: int = Field(12000, ge=0)
    eval_interval: int = Field(500, ge=1)
    probe_interval: int = Field(50, ge=1)
    grad_cos_window: int = Field(100, ge=1)
    teacher_dataset_size: int = Field(1024, ge=1)
    receiver_target: Literal["teacher", "gold"] = "teacher"
    teacher_sampling: Literal["greedy", "sample"] = "greedy"
    allow_zero_imitation: bool = False
    gumbel_noise: bool = True
    grad_clip: Optional[float] = 5.0
    seed: int = 0
    progress: bool = False

    @model_validator(mode="after")
    def _check_method_fields(self) -> "FinetuneConfig":
        for name, (methods, _) in METHOD_FIELDS.items():
            if getattr(self, name) is not None and self.method not in methods:
                raise ValueError(f"'{name}' does not apply to method '{self.method}'")
        for name in ("k2", "k2_prime"):
            if getattr(self, name) == 0 and not self.allow_zero_imitation:
                raise ValueError(f"{name} must be positive (set allow_zero_imitation to bypass)")
        return self

    @property
    def is_iterated(self) -> bool:
        return self.method in SIL_FAMILY

    def resolved(self) -> "FinetuneConfig":
        """Copy with every applicable method-specific field filled in."""
        update = {}
        for name, (methods, defaults) in METHOD_FIELDS.items():
            if self.method in methods and getattr(self, name) is None:
                update[name] = defaults[self.method]
        return self.model_copy(update=update) if update else self

    def for_method(self, method: str, **overrides) -> "FinetuneConfig":
        """Rebase on ``method``: fields that do not apply to it are dropped."""
        data = self.model_dump()
        data.update(overrides, method=method)
        for name, (methods, _) in METHOD_FIELDS.items():
            if method not in methods:
                data[name] = None
        return FinetuneConfig.model_validate(data).resolved()


class SweepConfig(_Strict):
    method: Optional[list[Method]] = None
    alpha: Optional[list[float]] = None
    beta: Optional[list[float]] = None
    k1: Optional[list[int]] = None
    k2: Optional[list[int]] = None
    k2_prime: Optional[list[int]] = None
    tau: Optional[list[float]] = None


class ExperimentConfig(_Strict):
    name: str = "driftlab"
    game: GameConfig = Field(default_factory=GameConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    sweep: Optional[SweepConfig] = None
    seeds: list[int] = Field(default_factory=lambda: [1], min_length=1)
    output_dir: str = "runs"
    checkpoint_every: int = Field(10, ge=0)
    workers: int = Field(1, ge=1)


class RunSpec(BaseModel):
    """One (configuration, seed) cell of an experiment."""
    tag: str
    seed: int
    finetune: FinetuneConfig


def _format_value(value) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


def expand_runs(config: ExperimentConfig) -> list[RunSpec]:
    """
    Cartesian product of the sweep lists × seeds.

    Swept values that do not apply to a swept method are dropped, and
    duplicate cells collapse into one run.
    """
    sweep = config.sweep.model_dump(exclude_none=True) if config.sweep else {}
    methods = sweep.pop("method", [config.finetune.method])
    names = list(sweep)
    runs: dict[tuple[str, int], RunSpec] = {}
    for method in methods:
        for values in itertools.product(*(sweep[n] for n in names)):
            overrides = {}
            for name, value in zip(names, values):
                applies = name not in METHOD_FIELDS or method in METHOD_FIELDS[name][0]
                if applies:
                    overrides[name] = value
            finetune = config.finetune.for_method(method, **overrides)
            suffix = "_".join(f"{n}{_format_value(v)}" for n, v in overrides.items())
            tag = f"{method}__{suffix}" if suffix else method
            for seed in config.seeds:
                runs.setdefault((tag, seed), RunSpec(
                    tag=tag, seed=seed, finetune=finetune.model_copy(update={"seed": seed}),
                ))
    return list(runs.values())


def single_run_config(config: ExperimentConfig, run: RunSpec) -> ExperimentConfig:
    """The resolved config archived beside one run's outputs."""
    return config.model_copy(update={"finetune": run.finetune, "sweep": None, "seeds": [run.seed]})


def load_config(file_path: str | Path) -> ExperimentConfig:
    """
    Load an experiment config from a YAML or JSON file.

    Raises:
        FileNotFoundError: the file does not exist
        ConfigError: the file is not a mapping or not valid YAML
        pydantic.ValidationError: unknown keys or out-of-range values
    """
    file_path = Path(file_path)
    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {file_path}")
    try:
        data = yaml.safe_load(file_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {file_path}: {e}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{file_path}: config must be a mapping")
    return ExperimentConfig.model_validate(data)


def available_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_preset(name: str) -> ExperimentConfig:
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"Unknown preset '{name}'. Available: {', '.join(available_presets())}")
    return load_config(path)


def save_config(config: ExperimentConfig, file_path: str | Path) -> Path:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return file_path


def output_root(config: ExperimentConfig, override: Optional[str | Path] = None) -> Path:
    """Explicit override, then $DRIFTLAB_OUT, then the config's output_dir."""
    if override:
        return Path(override)
    return Path(os.environ.get(OUTPUT_ENV) or config.output_dir)
