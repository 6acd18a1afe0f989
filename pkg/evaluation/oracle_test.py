"""
Rarefy — Budgeted Oracle Tests
Budget accounting, caching, thresholds, transcripts, synthetic targets and ground truth.
"""

import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from numpy.testing import assert_array_equal

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from audit.transcript_logger import read_transcript, transcript_stats
from config.schemas import toy_schema
from pipeline.oracle import (
    BudgetExhausted,
    BudgetedOracle,
    EnumerationTooLarge,
    Label,
    SyntheticAmplifier,
    SyntheticLatency,
    build_ground_truth,
    enumerate_ground_truth,
    make_target,
    sample_ground_truth,
    score_packets,
    synthetic_score,
)
from pipeline.schema import SchemaError, enumerate_packets

TOY = toy_schema(12)
AMP = SyntheticAmplifier(TOY, k=7, gain=20.0)


def _packet(gate_bits, rest_bits):
    return tuple(gate_bits) + tuple(rest_bits)


# ─────────────────────────────────────────────────────────────
# Synthetic targets
# ─────────────────────────────────────────────────────────────

def test_amplifier_gate_closed():
    assert synthetic_score(AMP, _packet([1, 1, 1, 0, 1, 1, 1], [1] * 5)) == 1.0


def test_amplifier_gate_open():
    assert synthetic_score(AMP, _packet([1] * 7, [0] * 5)) == 21.0
    assert synthetic_score(AMP, _packet([1] * 7, [1] * 5)) == 41.0
    assert synthetic_score(AMP, _packet([1] * 7, [1, 0, 1, 0, 0])) == pytest.approx(1 + 20 * (1 + 2 / 5))


def test_amplifier_rejects_foreign_packets():
    with pytest.raises(SchemaError):
        synthetic_score(AMP, (1, 1, 1))


def test_batch_scoring_matches_single_scoring():
    packets = enumerate_packets(toy_schema(8))
    amp = SyntheticAmplifier(toy_schema(8), k=3, gain=5.0)
    single = np.array([amp(tuple(p)) for p in packets.tolist()])
    assert_array_equal(score_packets(amp, packets), single)
    assert_array_equal(score_packets(lambda p: amp(p), packets), single)


def test_latency_plateaus():
    schema = toy_schema(6)
    lat = SyntheticLatency(schema, plateau=2, base=0.01)
    assert lat((0, 1, 1, 1, 1, 1)) == pytest.approx(0.01)
    assert lat((1, 0, 1, 1, 1, 1)) == pytest.approx(0.01)
    assert lat((1, 1, 0, 1, 1, 1)) == pytest.approx(0.02)
    assert lat((1, 1, 1, 1, 0, 0)) == pytest.approx(0.03)
    assert lat((1, 1, 1, 1, 1, 1)) == pytest.approx(0.04)


def test_unknown_target():
    with pytest.raises(ValueError):
        make_target("real-dns", TOY)


# ─────────────────────────────────────────────────────────────
# Budget
# ─────────────────────────────────────────────────────────────

def test_budget_exhaustion_and_free_repeats():
    oracle = BudgetedOracle(TOY, AMP, threshold=10, budget=10)
    packets = enumerate_packets(TOY)[:11]
    for p in packets[:10]:
        oracle.label(p)
    assert oracle.spent == 10
    with pytest.raises(BudgetExhausted):
        oracle.label(packets[10])

    score, label = oracle.label(packets[3])
    assert oracle.spent == 10
    assert (score, label) == oracle.peek(packets[3])


def test_threshold_is_inclusive():
    oracle = BudgetedOracle(TOY, AMP, threshold=21.0, budget=5)
    assert oracle.label(_packet([1] * 7, [0] * 5)) == (21.0, Label.RARE)
    assert oracle.label(_packet([0] * 7, [0] * 5)) == (1.0, Label.COMMON)


def test_concurrent_labeling_charges_each_packet_once():
    packets = enumerate_packets(TOY)[:200]
    oracle = BudgetedOracle(TOY, AMP, threshold=10, budget=200)
    work = [p for p in packets.tolist() for _ in range(5)]
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(oracle.label, work))
    assert oracle.spent == 200
    assert len(oracle.cached()) == 200


def test_concurrent_overdraw_is_refused():
    packets = enumerate_packets(TOY)[:50].tolist()
    oracle = BudgetedOracle(TOY, AMP, threshold=10, budget=30)

    def attempt(p):
        try:
            oracle.label(p)
            return True
        except BudgetExhausted:
            return False

    with ThreadPoolExecutor(max_workers=8) as pool:
        granted = sum(pool.map(attempt, packets))
    assert granted == 30
    assert oracle.spent == 30


def test_transcript_is_consistent(tmp_path):
    log = tmp_path / "transcript.jsonl"
    oracle = BudgetedOracle(TOY, AMP, threshold=10, budget=5, transcript_path=log)
    packets = enumerate_packets(TOY)[:5].tolist()
    for p in packets + packets[:2]:
        oracle.label(p)

    records = read_transcript(log)
    assert len(records) == 7
    assert [r["charged"] for r in records] == [True] * 5 + [False] * 2
    assert [r["spent_after"] for r in records] == [1, 2, 3, 4, 5, 5, 5]
    stats = transcript_stats(log)
    assert stats["consistent"] and stats["final_spent"] == 5 and stats["free"] == 2


def test_labels_agree_with_threshold():
    oracle = BudgetedOracle(TOY, AMP, threshold=10, budget=4096)
    scores, labels = oracle.label_batch(enumerate_packets(TOY))
    assert all((lab == Label.RARE) == (s >= 10) for s, lab in zip(scores, labels))
    assert oracle.get_status()["rare_seen"] == 32


# ─────────────────────────────────────────────────────────────
# Ground truth
# ─────────────────────────────────────────────────────────────

def test_toy_ground_truth_alpha_is_exact():
    truth = enumerate_ground_truth(TOY, AMP, 10)
    assert truth.alpha == 2 ** -7
    assert truth.exact and truth.population == 4096
    assert len(truth.rare_packets) == 32
    assert truth.rare_scores.min() == 21.0 and truth.rare_scores.max() == 41.0


def test_ground_truth_extremes():
    assert enumerate_ground_truth(TOY, AMP, 1000).alpha == 0.0
    assert enumerate_ground_truth(TOY, AMP, 1.0).alpha == 1.0


def test_ground_truth_matches_oracle_labels():
    schema = toy_schema(9)
    amp = SyntheticAmplifier(schema, k=3, gain=4.0)
    truth = enumerate_ground_truth(schema, amp, 5.5)
    oracle = BudgetedOracle(schema, amp, 5.5, budget=512)
    _, labels = oracle.label_batch(enumerate_packets(schema))
    rare = {tuple(p) for p, lab in zip(enumerate_packets(schema).tolist(), labels) if lab == Label.RARE}
    assert rare == {tuple(p) for p in truth.rare_packets.tolist()}


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLarge):
        enumerate_ground_truth(toy_schema(25), SyntheticAmplifier(toy_schema(25), k=7), 10)


def test_sampled_ground_truth_fallback():
    schema = toy_schema(30)
    amp = SyntheticAmplifier(schema, k=4)
    truth = build_ground_truth(schema, amp, 10, np.random.default_rng(0), n_samples=200_000)
    assert not truth.exact
    assert truth.alpha == pytest.approx(1 / 16, abs=0.005)
    direct = sample_ground_truth(schema, amp, 10, 1000, np.random.default_rng(1))
    assert direct.population == 1000
