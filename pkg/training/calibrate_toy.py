"""
Rarefy — Toy-12 Calibration Run
Trains the full method and the rare-only baseline on the 12-bit synthetic
amplifier, then records the rare share, fidelity and diversity of 10,000
rare-conditioned samples from each. The recorded numbers are the reference
the end-to-end test thresholds are read against.

Usage:
    python training/calibrate_toy.py [--seed 1] [--iterations 2000] [--cls-weight 1.0]
"""

import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.schemas import toy_schema
from config.settings import CALIBRATION_DIR, REFERENCE_RESULTS
from evaluation.metrics import evaluate
from pipeline.losses import LossConfig
from pipeline.oracle import BudgetedOracle, SyntheticAmplifier, enumerate_ground_truth
from pipeline.trainer import TrainerConfig, baseline_config, train

# ── Config ──
N_BITS = 12
GATE = 7
GAIN = 20.0
THRESHOLD = 10.0
BUDGET = 2000
STAGES = 2
WEIGHT = 3.0
LIPSCHITZ = "gradient-penalty"
EVAL_N = 10_000
OUT_FILE = CALIBRATION_DIR / "toy12_calibration.json"


def run(config: TrainerConfig, schema, amp, truth, seed: int) -> dict:
    oracle = BudgetedOracle(schema, amp, THRESHOLD, config.budget)
    t0 = time.time()
    state, metrics = train(config, schema, oracle)
    report = evaluate(state, amp, THRESHOLD, truth, EVAL_N, seed)
    print(f"  trained and evaluated in {time.time() - t0:.1f}s")
    return {
        "rare_share": report.n_rare / report.n,
        "fidelity": report.fidelity,
        "diversity": report.diversity,
        "alpha_hat": state.alpha_hat,
        "weight": state.weight,
        "labeled_rare": metrics[-1]["labeled_rare"],
    }


def main():
    parser = argparse.ArgumentParser(description="toy-12 calibration run")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--cls-weight", type=float, default=1.0, help="generator classification term weight")
    args = parser.parse_args()

    schema = toy_schema(N_BITS)
    amp = SyntheticAmplifier(schema, k=GATE, gain=GAIN)
    truth = enumerate_ground_truth(schema, amp, THRESHOLD)
    print(f"toy-{N_BITS}: exact α = {truth.alpha} ({len(truth.rare_scores)} rare packets)")

    config = TrainerConfig(
        budget=BUDGET,
        stages=STAGES,
        iterations=args.iterations,
        seed=args.seed,
        loss=LossConfig(family="wasserstein", weight=WEIGHT, lipschitz=LIPSCHITZ),
        cls_weight=args.cls_weight,
    )
    proposed = run(config, schema, amp, truth, args.seed)
    print(f"proposed: {proposed}")
    baseline = run(baseline_config(config), schema, amp, truth, args.seed)
    print(f"rare-only baseline: {baseline}")

    ceiling = len(truth.rare_packets) / EVAL_N
    OUT_FILE.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "schema": schema.name,
        "gate": GATE,
        "gain": GAIN,
        "threshold": THRESHOLD,
        "alpha": truth.alpha,
        "budget": BUDGET,
        "stages": STAGES,
        "weight": WEIGHT,
        "lipschitz": LIPSCHITZ,
        "cls_weight": config.cls_weight,
        "iterations": args.iterations,
        "seed": args.seed,
        "eval_n": EVAL_N,
        "diversity_ceiling": ceiling,
        "proposed": proposed,
        "rare_only": baseline,
        "beats_baseline": bool(
            proposed["fidelity"] < baseline["fidelity"]
            and (proposed["diversity"] > baseline["diversity"] or baseline["diversity"] == ceiling)
        ),
        "reference": REFERENCE_RESULTS,
    }
    with open(OUT_FILE, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2, default=float)
    print(f"calibration written to {OUT_FILE}")


if __name__ == "__main__":
    main()
