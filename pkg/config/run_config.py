"""
Rarefy — Run Configuration
JSON config files with command-line overrides. The resolved config (every
default included) is written next to each run's outputs.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Tuple

from config.settings import (
    DEFAULT_BATCH,
    DEFAULT_BUDGET,
    DEFAULT_CANDIDATE_POOL,
    DEFAULT_EVAL_SAMPLES,
    DEFAULT_HIDDEN,
    DEFAULT_ITERATIONS,
    DEFAULT_LATENT_DIM,
    DEFAULT_NORMALIZATION,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEEDS,
    DEFAULT_STAGES,
    DEFAULT_WEIGHT,
    MAX_EVAL_SAMPLES,
    AlphaSource,
    Baseline,
    Lipschitz,
    LossFamily,
    SelectionPolicy,
)
from pipeline.losses import LossConfig
from pipeline.trainer import TrainerConfig


@dataclass
class RunConfig:
    schema: str = "toy-12"
    target: str = "synthetic-amp"
    threshold: float = 10.0
    budget: int = DEFAULT_BUDGET
    stages: int = DEFAULT_STAGES
    weight: float = DEFAULT_WEIGHT
    normalization: float = DEFAULT_NORMALIZATION
    loss: str = LossFamily.WASSERSTEIN
    lipschitz: str = Lipschitz.CLIP
    n_critic: int = 0
    policy: str = SelectionPolicy.LEAST_CONFIDENT
    iterations: int = DEFAULT_ITERATIONS
    batch: int = DEFAULT_BATCH
    latent_dim: int = DEFAULT_LATENT_DIM
    hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    candidate_pool: int = DEFAULT_CANDIDATE_POOL
    use_unlabeled: bool = True
    active_learning: bool = True
    weighted_loss: bool = True
    baseline: str = Baseline.NONE
    alpha_source: str = AlphaSource.FIRST_STAGE
    condition_weighting: bool = False
    gumbel: bool = False
    cls_weight: float = 1.0
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    eval_n: int = DEFAULT_EVAL_SAMPLES
    output_dir: str = str(DEFAULT_OUTPUT_DIR)

    # target parameters
    gate: int = 7
    gain: float = 20.0
    plateau: int = 2
    base_latency: float = 0.01

    def validate(self) -> "RunConfig":
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 1 <= self.eval_n <= MAX_EVAL_SAMPLES:
            raise ValueError(f"eval n must be in [1, {MAX_EVAL_SAMPLES}], got {self.eval_n}")
        self.to_trainer_config(self.seeds[0]).validate()
        return self

    def to_trainer_config(self, seed: Optional[int] = None) -> TrainerConfig:
        return TrainerConfig(
            budget=self.budget,
            stages=self.stages,
            iterations=self.iterations,
            batch=self.batch,
            latent_dim=self.latent_dim,
            hidden=tuple(self.hidden),
            policy=self.policy,
            candidate_pool=self.candidate_pool,
            seed=self.seeds[0] if seed is None else seed,
            loss=LossConfig(
                family=self.loss,
                weight=self.weight,
                normalization=self.normalization,
                lipschitz=self.lipschitz,
                n_critic=self.n_critic,
            ),
            use_unlabeled=self.use_unlabeled,
            active_learning=self.active_learning,
            weighted_loss=self.weighted_loss,
            baseline=self.baseline,
            alpha_source=self.alpha_source,
            condition_weighting=self.condition_weighting,
            gumbel=self.gumbel,
            cls_weight=self.cls_weight,
        )

    def target_params(self) -> dict:
        if self.target == "synthetic-latency":
            return {"plateau": self.plateau, "base": self.base_latency}
        return {"k": self.gate, "gain": self.gain}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path


def _known_fields() -> set:
    return {f.name for f in fields(RunConfig)}


def run_config_from_dict(payload: dict) -> RunConfig:
    unknown = set(payload) - _known_fields()
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    payload = dict(payload)
    if "hidden" in payload:
        payload["hidden"] = tuple(payload["hidden"])
    return RunConfig(**payload)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})")
    return run_config_from_dict(payload)


def merge_overrides(config: RunConfig, overrides: dict) -> RunConfig:
    """Apply explicitly given values (None means "not given")."""
    given = {k: v for k, v in overrides.items() if v is not None}
    merged = {**config.to_dict(), **given}
    return run_config_from_dict(merged)
