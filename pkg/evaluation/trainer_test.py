"""
Rarefy — Trainer Tests
Tiny networks and a handful of iterations: budget accounting, determinism,
gradient checks, checkpoints and every component switch.
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from audit.transcript_logger import transcript_stats
from config.schemas import toy_schema
from engine.checkpoint import CheckpointError
from evaluation.stage_monitor import TIMING_COLUMNS, StageMonitor
from pipeline.acgan import build_nets, critic_forward, generator_objective, gradient_penalty
from pipeline.active_learning import SelectionError
from pipeline.losses import LossConfig
from pipeline.oracle import BudgetedOracle, SyntheticAmplifier
from pipeline.trainer import (
    TrainerConfig,
    baseline_config,
    draw_candidates,
    load_state,
    run_fingerprint,
    sample_rare,
    save_state,
    stage_budgets,
    stage_policy,
    train,
)
from pipeline.train_state import TrainState
from pipeline.schema import encode_batch, sample_uniform_batch

SCHEMA = toy_schema(8)
AMP = SyntheticAmplifier(SCHEMA, k=3, gain=20.0)
THRESHOLD = 10.0


def tiny_config(**overrides) -> TrainerConfig:
    base = TrainerConfig(
        budget=40,
        stages=2,
        iterations=3,
        batch=16,
        latent_dim=4,
        hidden=(8,),
        candidate_pool=120,
        seed=7,
        loss=LossConfig(family="wasserstein", weight=2.0),
    )
    return replace(base, **overrides)


def run(config: TrainerConfig, **kwargs):
    oracle = BudgetedOracle(SCHEMA, AMP, THRESHOLD, config.budget, kwargs.pop("transcript", None))
    state, metrics = train(config, SCHEMA, oracle, **kwargs)
    return state, metrics, oracle


def _rel_error(a, b) -> float:
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


# ─────────────────────────────────────────────────────────────
# Stages & budget
# ─────────────────────────────────────────────────────────────

def test_stage_budgets():
    assert stage_budgets(2000, 2) == [1000, 1000]
    assert stage_budgets(2001, 2) == [1000, 1001]
    assert stage_budgets(7, 3) == [2, 2, 3]


def test_first_stage_is_random():
    config = tiny_config()
    assert stage_policy(config, 0) == "random"
    assert stage_policy(config, 1) == "least-confident"
    assert stage_policy(replace(config, active_learning=False), 1) == "random"


def test_run_spends_exactly_the_budget(tmp_path):
    log = tmp_path / "t.jsonl"
    state, metrics, oracle = run(tiny_config(), transcript=log)
    assert oracle.spent == 40
    assert [m["labels_spent"] for m in metrics] == [20, 40]
    assert len(state.labeled) == 40
    assert len({r.packet for r in state.labeled}) == 40
    stats = transcript_stats(log)
    assert stats["consistent"] and stats["charged"] == 40
    assert state.status == "COMPLETE"
    assert [p["phase"] for p in state.phases_completed] == ["Stage_0", "Stage_1"]


def test_labels_entire_small_space():
    schema = toy_schema(4)
    amp = SyntheticAmplifier(schema, k=2)
    config = tiny_config(budget=16, candidate_pool=16, iterations=1)
    oracle = BudgetedOracle(schema, amp, THRESHOLD, 16)
    state, _ = train(config, schema, oracle)
    assert oracle.spent == 16
    assert state.labeled_is_rare().sum() == 4


def test_exhausted_space_is_reported():
    schema = toy_schema(4)
    amp = SyntheticAmplifier(schema, k=2)
    config = tiny_config(budget=17, candidate_pool=17, iterations=1)
    oracle = BudgetedOracle(schema, amp, THRESHOLD, 17)
    with pytest.raises(SelectionError) as info:
        train(config, schema, oracle)
    assert info.value.state.status == "FAILED"
    assert info.value.state.errors[0]["phase"] == "Stage_1"


def test_candidates_skip_labeled_packets():
    config = tiny_config()
    oracle = BudgetedOracle(SCHEMA, AMP, THRESHOLD, 100)
    rng = np.random.default_rng(0)
    state = TrainState(SCHEMA, build_nets(SCHEMA, 4, (8,), "wasserstein", rng))
    oracle.label_batch(sample_uniform_batch(SCHEMA, rng, 50))
    candidates = draw_candidates(state, oracle, config.candidate_pool, 20, rng)
    cached = set(oracle.cached())
    assert not any(tuple(c) in cached for c in candidates.tolist())
    assert len({tuple(c) for c in candidates.tolist()}) == len(candidates)


def test_oracle_must_cover_budget():
    config = tiny_config()
    with pytest.raises(ValueError):
        train(config, SCHEMA, BudgetedOracle(SCHEMA, AMP, THRESHOLD, 10))
    with pytest.raises(ValueError):
        train(config, SCHEMA, BudgetedOracle(toy_schema(9), SyntheticAmplifier(toy_schema(9), 3), THRESHOLD, 40))


@pytest.mark.parametrize("overrides, error", [
    ({"budget": 1, "stages": 2}, ValueError),
    ({"candidate_pool": 5}, ValueError),
    ({"policy": "most-uncertain"}, SelectionError),
    ({"baseline": "rare-only"}, ValueError),
    ({"alpha_source": "oracle"}, ValueError),
    ({"cls_weight": -1.0}, ValueError),
])
def test_config_validation(overrides, error):
    with pytest.raises(error):
        tiny_config(**overrides).validate()


# ─────────────────────────────────────────────────────────────
# Determinism & weights
# ─────────────────────────────────────────────────────────────

def test_training_is_deterministic():
    a, ma, _ = run(tiny_config())
    b, mb, _ = run(tiny_config())
    for p, q in zip(a.nets.generator.params() + a.nets.critic_params(),
                    b.nets.generator.params() + b.nets.critic_params()):
        assert_array_equal(p, q)
    assert [m["d_loss"] for m in ma] == [m["d_loss"] for m in mb]
    assert a.to_dict() == b.to_dict()


def test_run_fingerprint_tracks_config():
    config = tiny_config()
    assert run_fingerprint(config, SCHEMA) == run_fingerprint(tiny_config(), SCHEMA)
    assert run_fingerprint(config, SCHEMA) != run_fingerprint(tiny_config(seed=8), SCHEMA)
    assert run_fingerprint(config, SCHEMA) != run_fingerprint(config, toy_schema(9))
    state, _, _ = run(config)
    assert state.run_id == run_fingerprint(config, SCHEMA)


def test_oversized_weight_is_demoted():
    with pytest.warns(RuntimeWarning):
        state, metrics, _ = run(tiny_config(loss=LossConfig(family="wasserstein", weight=25.0)))
    assert state.weight == 1.0
    assert all(m["weight"] == 1.0 for m in metrics)


def test_alpha_from_first_stage_only():
    state, metrics, _ = run(tiny_config())
    first = [r.is_rare for r in state.labeled if r.stage == 0]
    assert state.alpha_hat == pytest.approx(sum(first) / len(first))
    all_labels, _, _ = run(tiny_config(alpha_source="all-labels"))
    assert all_labels.alpha_hat == pytest.approx(all_labels.labeled_is_rare().mean())


# ─────────────────────────────────────────────────────────────
# Gradients
# ─────────────────────────────────────────────────────────────

def _numeric_generator_grad(nets, objective, h=1e-6):
    params = [p.copy() for p in nets.generator.params()]
    numeric = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = [q.copy() for q in params]
                bumped[i][idx] += sign * h
                nets.generator.set_params(bumped)
                vals.append(objective())
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        numeric.append(g)
    nets.generator.set_params(params)
    return numeric


@pytest.mark.parametrize("family", ["wasserstein", "js"])
def test_generator_gradient_matches_finite_differences(family):
    rng = np.random.default_rng(12)
    for _ in range(100):
        nets = build_nets(toy_schema(3), 3, (5,), family, rng, hidden_activation="tanh")
        config = LossConfig(
            family=family,
            weight=float(rng.uniform(1.0, 5.0)),
            normalization=float(rng.uniform(0.5, 2.0)),
        )
        batch = int(rng.integers(2, 9))
        z = rng.standard_normal((batch, 3))
        cond = rng.integers(0, 2, batch)
        weights = np.where(cond == 0, rng.uniform(1.0, 5.0), rng.uniform(0.2, 1.0))
        weight_fn = lambda probs: weights
        cls_weight = float(rng.uniform(0.0, 2.0))
        objective = lambda: generator_objective(nets, config, z, cond, weight_fn, cls_weight)[0]

        _, grads = generator_objective(nets, config, z, cond, weight_fn, cls_weight)
        assert _rel_error(grads, _numeric_generator_grad(nets, objective)) < 1e-4


def test_gradient_penalty_parameter_gradient():
    rng = np.random.default_rng(21)
    schema = toy_schema(3)
    nets = build_nets(schema, 2, (6,), "wasserstein", rng, hidden_activation="tanh")
    x_real = encode_batch(schema, sample_uniform_batch(schema, rng, 5))
    x_fake = rng.dirichlet(np.ones(2), size=(5, 3)).reshape(5, 6)

    penalty = lambda: gradient_penalty(nets, x_real, x_fake, np.random.default_rng(0), 10.0, 1e-4)
    _, grads = penalty()

    h = 1e-6
    params = [p.copy() for p in nets.critic_params()]
    numeric = []
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = [q.copy() for q in params]
                bumped[i][idx] += sign * h
                nets.set_critic_params(bumped)
                vals.append(penalty()[0])
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        numeric.append(g)
    nets.set_critic_params(params)
    assert _rel_error(grads, numeric) < 1e-4


# ─────────────────────────────────────────────────────────────
# Modes
# ─────────────────────────────────────────────────────────────

@pytest.mark.parametrize("overrides", [
    {"use_unlabeled": False, "active_learning": False, "weighted_loss": False},
    {"use_unlabeled": False, "active_learning": False, "weighted_loss": True},
    {"use_unlabeled": True, "active_learning": False, "weighted_loss": True},
    {"use_unlabeled": True, "active_learning": True, "weighted_loss": False},
    {"policy": "most-confident", "use_unlabeled": False},
    {"loss": LossConfig(family="js", weight=2.0)},
    {"loss": LossConfig(family="wasserstein", weight=2.0, lipschitz="gradient-penalty")},
    {"gumbel": True},
    {"condition_weighting": True},
    {"cls_weight": 0.0},
])
def test_training_modes_complete(overrides):
    state, metrics, oracle = run(tiny_config(**overrides))
    assert oracle.spent == 40
    assert state.status == "COMPLETE"
    for m in metrics:
        assert np.isfinite(m["d_loss"]) and np.isfinite(m["g_loss"])


def test_clipping_bounds_the_discriminator():
    state, _, _ = run(tiny_config())
    for net in (state.nets.trunk, state.nets.d_head):
        assert all(np.all(np.abs(p) <= 0.01) for p in net.params())


def test_rare_only_baseline():
    config = baseline_config(tiny_config())
    assert config.stages == 1 and not config.use_unlabeled
    state, metrics, oracle = run(config)
    assert oracle.spent == 40
    assert len(metrics) == 1
    assert metrics[0]["policy"] == "random"


def test_stage_monitor_and_callback(tmp_path):
    monitor = StageMonitor()
    phases = []
    run(tiny_config(), monitor=monitor, on_stage_complete=phases.append)
    assert phases == ["Stage_0", "Stage_1"]
    frame = monitor.frame()
    assert list(frame["stage"]) == [0, 1]
    assert {"alpha_hat", "rare_hit_rate"} <= set(frame.columns)
    assert not (set(TIMING_COLUMNS) - {"stage"}) & set(frame.columns)
    monitor.export_timing_csv(tmp_path / "timing.csv")
    timing = pd.read_csv(tmp_path / "timing.csv")
    assert list(timing.columns) == TIMING_COLUMNS
    assert list(timing["stage"]) == [0, 1]


# ─────────────────────────────────────────────────────────────
# Sampling & checkpoints
# ─────────────────────────────────────────────────────────────

def test_sample_rare():
    state, _, _ = run(tiny_config())
    assert sample_rare(state, 0, np.random.default_rng(0)).shape == (0, 8)
    a = sample_rare(state, 50, np.random.default_rng(1))
    b = sample_rare(state, 50, np.random.default_rng(1))
    assert_array_equal(a, b)
    assert a.shape == (50, 8)
    assert np.all((a >= 0) & (a < 2))


def test_checkpoint_roundtrip(tmp_path):
    state, _, _ = run(tiny_config())
    path = save_state(state, tmp_path / "ckpt.json", tiny_config())
    loaded = load_state(path, SCHEMA)
    assert loaded.status == "LOADED"
    assert loaded.alpha_hat == state.alpha_hat
    assert_array_equal(sample_rare(loaded, 20, np.random.default_rng(3)), sample_rare(state, 20, np.random.default_rng(3)))
    x = encode_batch(SCHEMA, sample_uniform_batch(SCHEMA, np.random.default_rng(4), 5))
    assert_array_equal(critic_forward(loaded.nets, x).d, critic_forward(state.nets, x).d)

    with pytest.raises(CheckpointError):
        load_state(path, toy_schema(9))
