"""
Rarefy — Trainer
Staged, budgeted training of the conditional GAN.

Each stage labels its share of the budget (random picks in the first stage,
the configured policy afterwards), re-estimates α̂, then runs the configured
iterations: n_critic discriminator/classifier updates followed by one
generator update.
"""

import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

# ── Ensure project root is on sys.path for standalone execution ──
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import (
    ADAM_LR,
    DEFAULT_BATCH,
    DEFAULT_BUDGET,
    DEFAULT_CANDIDATE_POOL,
    DEFAULT_HIDDEN,
    DEFAULT_ITERATIONS,
    DEFAULT_LATENT_DIM,
    DEFAULT_STAGES,
    GP_FD_STEP,
    GUMBEL_TEMPERATURE,
    VERBOSE,
    AlphaSource,
    Baseline,
    Lipschitz,
    LossFamily,
    SelectionPolicy,
)
from engine.adam import AdamState, adam_step
from engine.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from engine.dense_net import clip_weights
from pipeline.acgan import (
    ACGANNets,
    build_nets,
    classify,
    critic_backward,
    critic_forward,
    draw_conditions,
    generate,
    generator_objective,
    gradient_penalty,
    sum_grads,
    surrogate_is_rare,
)
from pipeline.active_learning import SelectionError, select_for_labeling
from pipeline.losses import (
    COMMON_INDEX,
    RARE_INDEX,
    LossConfig,
    compute_weights,
    effective_weight,
    gan_loss,
    nll_loss,
)
from pipeline.oracle import BudgetedOracle
from pipeline.schema import (
    PacketSchema,
    decode_batch,
    encode_batch,
    sample_uniform_batch,
    schema_from_dict,
    schema_to_dict,
    search_space_size,
)
from pipeline.train_state import TrainState


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainerConfig:
    budget: int = DEFAULT_BUDGET
    stages: int = DEFAULT_STAGES
    iterations: int = DEFAULT_ITERATIONS
    batch: int = DEFAULT_BATCH
    latent_dim: int = DEFAULT_LATENT_DIM
    hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    hidden_activation: str = "relu"
    policy: str = SelectionPolicy.LEAST_CONFIDENT
    candidate_pool: int = DEFAULT_CANDIDATE_POOL
    seed: int = 1
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = ADAM_LR

    # Component switches: U, A, W
    use_unlabeled: bool = True
    active_learning: bool = True
    weighted_loss: bool = True

    baseline: str = Baseline.NONE
    alpha_source: str = AlphaSource.FIRST_STAGE
    condition_weighting: bool = False
    gumbel: bool = False
    gumbel_temperature: float = GUMBEL_TEMPERATURE
    # weight of −E[log C(G(z, c), c)] in the generator objective
    cls_weight: float = 1.0

    def validate(self) -> "TrainerConfig":
        if self.budget < 1:
            raise ValueError("budget B must be positive")
        if self.stages < 1:
            raise ValueError("stages S must be positive")
        if self.budget < self.stages:
            raise ValueError(f"budget B={self.budget} cannot cover S={self.stages} labeling stages")
        if self.candidate_pool < max(stage_budgets(self.budget, self.stages)):
            raise ValueError(
                f"candidate pool {self.candidate_pool} is smaller than a stage's labels "
                f"({max(stage_budgets(self.budget, self.stages))})"
            )
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch < 1 or self.latent_dim < 1:
            raise ValueError("batch and latent dim must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if self.policy not in (SelectionPolicy.LEAST_CONFIDENT, SelectionPolicy.MOST_CONFIDENT, SelectionPolicy.RANDOM):
            raise SelectionError(f"unknown selection policy '{self.policy}'")
        if self.baseline not in (Baseline.NONE, Baseline.RARE_ONLY):
            raise ValueError(f"unknown baseline '{self.baseline}'")
        if self.baseline == Baseline.RARE_ONLY and self.use_unlabeled:
            raise ValueError("the rare-only baseline trains on labeled packets only; turn use_unlabeled off")
        if self.alpha_source not in (AlphaSource.FIRST_STAGE, AlphaSource.ALL_LABELS):
            raise ValueError(f"unknown alpha source '{self.alpha_source}'")
        if self.lr <= 0 or self.gumbel_temperature <= 0:
            raise ValueError("learning rate and Gumbel temperature must be positive")
        if self.cls_weight < 0:
            raise ValueError(f"generator classification weight must be >= 0, got {self.cls_weight}")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainerConfig":
        payload = dict(payload)
        loss = LossConfig(**payload.pop("loss", {}))
        if "hidden" in payload:
            payload["hidden"] = tuple(payload["hidden"])
        return cls(loss=loss, **payload)


def run_fingerprint(config: TrainerConfig, schema: PacketSchema) -> str:
    """Run id derived from (config, schema); the seed is part of the config."""
    payload = json.dumps({"config": config.to_dict(), "schema": schema_to_dict(schema)}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def baseline_config(config: TrainerConfig) -> TrainerConfig:
    """The rare-only comparison run for ``config``: same budget, random labels, one stage."""
    return replace(
        config,
        baseline=Baseline.RARE_ONLY,
        stages=1,
        use_unlabeled=False,
        active_learning=False,
        weighted_loss=False,
        policy=SelectionPolicy.RANDOM,
    )


def stage_budgets(budget: int, stages: int) -> List[int]:
    """B//S labels per stage; the last stage absorbs the remainder."""
    share = budget // stages
    out = [share] * stages
    out[-1] += budget - share * stages
    return out


def stage_policy(config: TrainerConfig, stage: int) -> str:
    if stage == 0 or not config.active_learning:
        return SelectionPolicy.RANDOM
    return config.policy


@dataclass
class _StageData:
    labeled_x: np.ndarray
    labeled_c: np.ndarray
    rare_x: np.ndarray
    weight: float
    alpha_hat: float
    p_rare: float


class _Log:
    def __init__(self):
        self._start = time.time()

    def __call__(self, msg: str):
        if VERBOSE:
            print(f"[Trainer {time.time() - self._start:.1f}s] {msg}")


# ─────────────────────────────────────────────────────────────
# Labeling
# ─────────────────────────────────────────────────────────────

def draw_candidates(
    state: TrainState,
    oracle: BudgetedOracle,
    size: int,
    k: int,
    rng: np.random.Generator,
    max_draws: int = 50,
) -> np.ndarray:
    """
    Fresh uniform candidates, deduplicated in draw order, skipping packets the
    oracle has already labeled (so every selected packet costs one label).
    """
    schema = state.schema
    taken = set(oracle.cached())
    size = min(size, search_space_size(schema) - len(taken))
    if size < k:
        raise SelectionError(f"only {size} unlabeled packets remain in '{schema.name}', stage needs {k}")

    seen = set()
    rows = []
    for _ in range(max_draws):
        for row in sample_uniform_batch(schema, rng, size).tolist():
            key = tuple(row)
            if key in seen or key in taken:
                continue
            seen.add(key)
            rows.append(key)
            if len(rows) == size:
                break
        if len(rows) == size:
            break
    if len(rows) < k:
        raise SelectionError(f"drew only {len(rows)} fresh candidates, stage needs {k}")
    return np.asarray(rows, dtype=np.int64)


def _label_stage(
    state: TrainState,
    config: TrainerConfig,
    oracle: BudgetedOracle,
    stage: int,
    k: int,
    rng: np.random.Generator,
) -> str:
    policy = stage_policy(config, stage)
    candidates = draw_candidates(state, oracle, config.candidate_pool, k, rng)
    classifier = lambda packets: classify(state.nets, encode_batch(state.schema, packets))
    chosen = select_for_labeling(classifier, candidates, k, policy, rng)
    scores, labels = oracle.label_batch(chosen)
    state.add_labels([tuple(row) for row in chosen.tolist()], scores, labels, stage)
    return policy


def _prepare_stage(state: TrainState, config: TrainerConfig, log: _Log) -> _StageData:
    stages = [0] if config.alpha_source == AlphaSource.FIRST_STAGE else None
    alpha_hat = state.update_alpha(stages)

    weight = 1.0
    if config.weighted_loss and config.baseline == Baseline.NONE:
        weight = effective_weight(config.loss.weight, alpha_hat)
        if weight != config.loss.weight:
            log(f"weighting disabled for stage {state.stage}: w={config.loss.weight}, α̂={alpha_hat:.6g}")
    state.weight = weight

    p_rare = min(weight * alpha_hat, 0.5) if config.condition_weighting else alpha_hat
    is_rare = state.labeled_is_rare()
    return _StageData(
        labeled_x=encode_batch(state.schema, state.labeled_packets()),
        labeled_c=np.where(is_rare, RARE_INDEX, COMMON_INDEX),
        rare_x=encode_batch(state.schema, state.rare_packets()),
        weight=weight,
        alpha_hat=alpha_hat,
        p_rare=p_rare,
    )


# ─────────────────────────────────────────────────────────────
# Updates
# ─────────────────────────────────────────────────────────────

def _ensure_finite(what: str, value: float, grads: List[np.ndarray]):
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDiverged(f"{what} became non-finite (loss={value})")


def _conditions(config: TrainerConfig, data: _StageData, rng: np.random.Generator, n: int) -> np.ndarray:
    if config.baseline == Baseline.RARE_ONLY:
        return np.full(n, RARE_INDEX)
    return draw_conditions(rng, n, data.p_rare)


def _logit_noise(state: TrainState, config: TrainerConfig, rng: np.random.Generator, n: int) -> Optional[np.ndarray]:
    if not config.gumbel:
        return None
    return rng.gumbel(size=(n, state.schema.width))


def _critic_step(state: TrainState, config: TrainerConfig, data: _StageData, rng: np.random.Generator) -> Tuple[float, float]:
    nets, loss_cfg, n = state.nets, config.loss, config.batch
    rare_only = config.baseline == Baseline.RARE_ONLY

    z = rng.standard_normal((n, nets.latent_dim))
    cond = _conditions(config, data, rng, n)
    x_fake, _ = generate(nets, z, cond, _logit_noise(state, config, rng, n))

    if rare_only:
        x_real = data.rare_x[rng.integers(0, len(data.rare_x), n)]
        real_c = np.full(n, RARE_INDEX)
    elif config.use_unlabeled:
        packets = sample_uniform_batch(state.schema, rng, n)
        x_real = encode_batch(state.schema, packets)
        known = state.known_rare(packets)
    else:
        idx = rng.integers(0, len(data.labeled_x), n)
        x_real, real_c = data.labeled_x[idx], data.labeled_c[idx]

    cp_real = critic_forward(nets, x_real)
    cp_fake = critic_forward(nets, x_fake)
    if not (np.all(np.isfinite(cp_real.d)) and np.all(np.isfinite(cp_fake.d))):
        raise TrainingDiverged("discriminator outputs became non-finite")

    if config.use_unlabeled and not rare_only:
        # labeled packets keep their true labels; the classifier labels the rest
        real_rare = np.where(known >= 0, known == 1, surrogate_is_rare(cp_real.probs))
    else:
        real_rare = real_c == RARE_INDEX
    w_real = compute_weights(real_rare, data.weight, data.alpha_hat)
    w_fake = compute_weights(surrogate_is_rare(cp_fake.probs), data.weight, data.alpha_hat)
    gan = gan_loss(loss_cfg, cp_real.d, w_real, cp_fake.d, w_fake)
    d_loss = -gan.value

    c_loss = 0.0
    grad_probs_real = grad_probs_fake = None
    extra = []
    if not rare_only:
        fake_value, grad_probs_fake = nll_loss(cp_fake.probs, cond, "fake")
        if config.use_unlabeled:
            idx = rng.integers(0, len(data.labeled_x), n)
            cp_lab = critic_forward(nets, data.labeled_x[idx])
            real_value, grad_lab = nll_loss(cp_lab.probs, data.labeled_c[idx], "real")
            extra.append(critic_backward(nets, cp_lab, None, grad_lab)[0])
        else:
            real_value, grad_probs_real = nll_loss(cp_real.probs, real_c, "real")
        c_loss = real_value + fake_value

    # the critic maximizes the GAN loss
    grads = sum_grads(
        critic_backward(nets, cp_real, -gan.grad_real, grad_probs_real)[0],
        critic_backward(nets, cp_fake, -gan.grad_fake, grad_probs_fake)[0],
        *extra,
    )

    wasserstein = loss_cfg.family == LossFamily.WASSERSTEIN
    if wasserstein and loss_cfg.lipschitz == Lipschitz.GRADIENT_PENALTY:
        penalty, gp_grads = gradient_penalty(nets, x_real, x_fake, rng, loss_cfg.gp_lambda, GP_FD_STEP)
        grads = sum_grads(grads, gp_grads)
        d_loss += penalty

    _ensure_finite("critic update", d_loss + c_loss, grads)
    nets.set_critic_params(adam_step(state.critic_opt, nets.critic_params(), grads))
    if wasserstein and loss_cfg.lipschitz == Lipschitz.CLIP:
        nets.trunk = clip_weights(nets.trunk, loss_cfg.clip_value)
        nets.d_head = clip_weights(nets.d_head, loss_cfg.clip_value)
    return d_loss, c_loss


def _generator_step(state: TrainState, config: TrainerConfig, data: _StageData, rng: np.random.Generator) -> float:
    nets, n = state.nets, config.batch
    z = rng.standard_normal((n, nets.latent_dim))
    cond = _conditions(config, data, rng, n)
    weight_fn = lambda probs: compute_weights(surrogate_is_rare(probs), data.weight, data.alpha_hat)
    loss, grads = generator_objective(
        nets,
        config.loss,
        z,
        cond,
        weight_fn,
        cls_weight=0.0 if config.baseline == Baseline.RARE_ONLY else config.cls_weight,
        logit_noise=_logit_noise(state, config, rng, n),
    )
    _ensure_finite("generator update", loss, grads)
    nets.generator.set_params(adam_step(state.g_opt, nets.generator.params(), grads))
    return loss


def _run_iterations(
    state: TrainState,
    config: TrainerConfig,
    data: _StageData,
    rng: np.random.Generator,
) -> dict:
    d_losses, c_losses, g_losses = [], [], []
    for _ in range(config.iterations):
        for _ in range(config.loss.n_critic):
            d_loss, c_loss = _critic_step(state, config, data, rng)
            d_losses.append(d_loss)
            c_losses.append(c_loss)
        g_losses.append(_generator_step(state, config, data, rng))
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    return {"d_loss": mean(d_losses), "g_loss": mean(g_losses), "c_loss": mean(c_losses)}


def _rare_hit_rate(state: TrainState) -> float:
    """Share of labeled rare packets the classifier currently calls rare."""
    rare = state.rare_packets()
    if len(rare) == 0:
        return float("nan")
    probs = classify(state.nets, encode_batch(state.schema, rare))
    return float(np.mean(surrogate_is_rare(probs)))


# ─────────────────────────────────────────────────────────────
# Training run
# ─────────────────────────────────────────────────────────────

def train(
    config: TrainerConfig,
    schema: PacketSchema,
    oracle: BudgetedOracle,
    rng: Optional[np.random.Generator] = None,
    monitor=None,
    on_stage_complete: Optional[Callable] = None,
) -> Tuple[TrainState, List[dict]]:
    """
    Run every stage and return the trained state with one metrics row per stage.

    Spends exactly ``config.budget`` labels on ``oracle``. On failure the
    error is recorded on the state (attached to the exception as ``.state``).
    """
    config.validate()
    if oracle.schema != schema:
        raise ValueError(f"oracle is bound to schema '{oracle.schema.name}', not '{schema.name}'")
    if oracle.remaining < config.budget:
        raise ValueError(f"oracle has {oracle.remaining} labels left, run needs B={config.budget}")

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    log = _Log()
    temperature = config.gumbel_temperature if config.gumbel else 1.0
    nets = build_nets(schema, config.latent_dim, config.hidden, config.loss.family, rng,
                      config.hidden_activation, temperature)
    state = TrainState(
        schema,
        nets,
        g_opt=AdamState.for_params(nets.generator.params(), lr=config.lr),
        critic_opt=AdamState.for_params(nets.critic_params(), lr=config.lr),
        run_id=run_fingerprint(config, schema),
    )
    state.status = "RUNNING"
    start_spent = oracle.spent
    metrics: List[dict] = []

    for stage, k in enumerate(stage_budgets(config.budget, config.stages)):
        state.stage = stage
        phase = f"Stage_{stage}"
        try:
            policy = _label_stage(state, config, oracle, stage, k, rng)
            data = _prepare_stage(state, config, log)
            if config.baseline == Baseline.RARE_ONLY and len(data.rare_x) == 0:
                log(f"stage {stage}: no rare labels; generator left untrained")
                losses = {"d_loss": float("nan"), "g_loss": float("nan"), "c_loss": float("nan")}
            else:
                losses = _run_iterations(state, config, data, rng)
        except Exception as e:
            state.add_error(phase, e)
            state.status = "FAILED"
            e.state = state
            raise

        row = {
            "stage": stage,
            "policy": policy,
            "labels_stage": k,
            "labels_spent": oracle.spent - start_spent,
            "labeled_rare": int(state.labeled_is_rare().sum()),
            "alpha_hat": state.alpha_hat,
            "weight": state.weight,
            **losses,
            "rare_hit_rate": _rare_hit_rate(state),
        }
        metrics.append(row)
        log(f"stage {stage} done: spent={row['labels_spent']}/{config.budget} "
            f"α̂={state.alpha_hat:.5f} w={state.weight:g} d={losses['d_loss']:.4f} g={losses['g_loss']:.4f}")
        if monitor is not None:
            monitor.log_stage(row)
        state.mark_phase(phase)
        if on_stage_complete:
            on_stage_complete(phase)

    spent = oracle.spent - start_spent
    if spent != config.budget:
        state.add_error("Budget", f"spent {spent} labels, expected {config.budget}")
        state.status = "FAILED"
        raise RuntimeError(f"run spent {spent} labels instead of B={config.budget}")
    state.status = "COMPLETE"
    return state, metrics


# ─────────────────────────────────────────────────────────────
# Sampling
# ─────────────────────────────────────────────────────────────

def sample_conditioned(
    state: TrainState,
    n: int,
    cls: int,
    rng: np.random.Generator,
    chunk: int = 8192,
) -> np.ndarray:
    """n packets from G(z, c=cls), decoded by per-field argmax."""
    if n < 0:
        raise ValueError("n must be non-negative")
    nets = state.nets
    out = [np.zeros((0, len(state.schema)), dtype=np.int64)]
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        z = rng.standard_normal((m, nets.latent_dim))
        probs, _ = generate(nets, z, np.full(m, cls))
        out.append(decode_batch(state.schema, probs))
    return np.concatenate(out, axis=0)


def sample_rare(state: TrainState, n: int, rng: np.random.Generator) -> np.ndarray:
    return sample_conditioned(state, n, RARE_INDEX, rng)


# ─────────────────────────────────────────────────────────────
# Checkpoints
# ─────────────────────────────────────────────────────────────

def save_state(state: TrainState, path, config: Optional[TrainerConfig] = None) -> Path:
    meta = {
        "schema": schema_to_dict(state.schema),
        "alpha_hat": state.alpha_hat,
        "weight": state.weight,
        "run": state.to_dict(),
        "config": config.to_dict() if config else None,
    }
    return save_checkpoint(path, state.nets.as_dict(), meta)


def load_state(path, schema: Optional[PacketSchema] = None) -> TrainState:
    """Restore networks from a checkpoint; ``schema`` must match the one trained on."""
    nets, meta = load_checkpoint(path)
    if "schema" not in meta:
        raise CheckpointError(f"{path}: checkpoint carries no schema")
    if schema is not None and schema_to_dict(schema) != meta["schema"]:
        raise CheckpointError(
            f"{path}: trained on schema '{meta['schema'].get('name')}', not '{schema.name}'"
        )
    ckpt_schema = schema if schema is not None else schema_from_dict(meta["schema"])
    try:
        acgan = ACGANNets.from_dict(nets)
    except ValueError as e:
        raise CheckpointError(f"{path}: {e}")
    if acgan.generator.output_dim != ckpt_schema.width:
        raise CheckpointError(f"{path}: generator width {acgan.generator.output_dim} != schema width {ckpt_schema.width}")

    state = TrainState(ckpt_schema, acgan, run_id=meta.get("run", {}).get("run_id"))
    state.alpha_hat = float(meta.get("alpha_hat", 0.0))
    state.weight = float(meta.get("weight", 1.0))
    state.status = "LOADED"
    return state
