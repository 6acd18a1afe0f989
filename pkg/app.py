"""
Rarefy — Command Line (app.py)
train · eval · ablate · ground-truth · verify

Exit codes: 0 success, 1 runtime failure, 2 usage / configuration error.

Usage:
    python app.py train --schema toy-12 --target synthetic-amp --T 10 --B 2000 --S 2 --w 3 --seed 1
    python app.py eval --outdir runs --n 50000 --seed 1
    python app.py ablate --seeds 1,2,3 --iterations 300
    python app.py ground-truth --schema toy-12 --T 10
    python app.py verify --instances 50
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

# ── Path setup ──
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, PROJECT_ROOT)

from config.run_config import RunConfig, load_run_config, merge_overrides
from config.schemas import resolve_schema
from config.settings import (
    ABLATION_CSV_NAME,
    APP_SUBTITLE,
    APP_TITLE,
    CHECKPOINT_NAME,
    EVAL_CSV_NAME,
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    GROUND_TRUTH_SAMPLES,
    RUN_CONFIG_NAME,
    STAGE_CHART_NAME,
    STAGE_METRICS_NAME,
    STAGE_TIMING_NAME,
    TRANSCRIPT_NAME,
)
from evaluation.ablation import AblationGrid, run_ablation, summarize_ablation
from evaluation.metrics import append_report_csv, evaluate, reports_frame
from evaluation.stage_monitor import StageMonitor
from pipeline.oracle import BudgetedOracle, build_ground_truth, enumerate_ground_truth, make_target
from pipeline.propositions import random_instance, verify_propositions
from pipeline.schema import write_packets
from pipeline.trainer import load_state, save_state, train

RARE_PACKETS_NAME = "rare_packets.txt"
GROUND_TRUTH_NAME = "ground_truth.json"
ABLATION_SUMMARY_NAME = "ablation_summary.csv"


# ═══════════════════════════════════════════════════════════════
# Argument parsing
# ═══════════════════════════════════════════════════════════════

def _int_list(text: str) -> List[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text: str) -> List[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _add_run_flags(p: argparse.ArgumentParser):
    """Flags shared by every command that builds a RunConfig; None = keep config value."""
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--schema", help="dns | fivetuple | toy-<n> | path to a schema JSON file")
    p.add_argument("--target", choices=["synthetic-amp", "synthetic-latency"])
    p.add_argument("--T", "--threshold", dest="threshold", type=float)
    p.add_argument("--B", "--budget", dest="budget", type=int)
    p.add_argument("--S", "--stages", dest="stages", type=int)
    p.add_argument("--w", "--weight", dest="weight", type=float)
    p.add_argument("--s", "--normalization", dest="normalization", type=float)
    p.add_argument("--loss", choices=["js", "wasserstein"])
    p.add_argument("--lipschitz", choices=["clip", "gradient-penalty"])
    p.add_argument("--n-critic", dest="n_critic", type=int)
    p.add_argument("--policy", choices=["least-confident", "most-confident", "random"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--latent-dim", dest="latent_dim", type=int)
    p.add_argument("--hidden", type=_int_list, help="comma-separated hidden widths")
    p.add_argument("--candidate-pool", dest="candidate_pool", type=int)
    p.add_argument("--unlabeled", dest="use_unlabeled", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--active", dest="active_learning", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--weighted", dest="weighted_loss", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--baseline", choices=["none", "rare-only"])
    p.add_argument("--alpha-source", dest="alpha_source", choices=["first-stage", "all-labels"])
    p.add_argument("--condition-weighting", dest="condition_weighting",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--gumbel", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cls-weight", dest="cls_weight", type=float,
                   help="weight of the classifier term in the generator objective")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=_int_list, help="comma-separated seed list")
    p.add_argument("--eval-n", dest="eval_n", type=int)
    p.add_argument("--outdir", dest="output_dir")
    p.add_argument("--k", "--gate", dest="gate", type=int, help="synthetic-amp gate length")
    p.add_argument("--gain", type=float)
    p.add_argument("--plateau", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rarefy", description=f"{APP_TITLE} — {APP_SUBTITLE}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a generator under a labeling budget")
    _add_run_flags(p_train)

    p_eval = sub.add_parser("eval", help="fidelity and diversity of a trained checkpoint")
    _add_run_flags(p_eval)
    p_eval.add_argument("--checkpoint", help=f"defaults to <outdir>/{CHECKPOINT_NAME}")
    p_eval.add_argument("--n", type=int, help="generated samples (>= 1)")

    p_ablate = sub.add_parser("ablate", help="U/A/W component grid across seeds")
    _add_run_flags(p_ablate)
    p_ablate.add_argument("--components", default="base,W,U,UW,UA,UAW")
    p_ablate.add_argument("--budgets", type=_int_list)
    p_ablate.add_argument("--alphas", type=_float_list, help="target rare fractions (threshold derived)")
    p_ablate.add_argument("--stages-list", dest="stages_list", type=_int_list)
    p_ablate.add_argument("--weights", type=_float_list)
    p_ablate.add_argument("--workers", type=int, default=1)

    p_truth = sub.add_parser("ground-truth", help="exact rare set and α by enumeration")
    _add_run_flags(p_truth)
    p_truth.add_argument("--sample", type=int, default=0,
                         help="estimate by uniform sampling with this many draws instead of enumerating")

    p_verify = sub.add_parser("verify", help="exact checks of the weighted-loss and unlabeled-optimum properties")
    p_verify.add_argument("--instances", type=int, default=50)
    p_verify.add_argument("--support", type=int, default=6)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--tolerance", type=float, default=1e-9)
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    base = load_run_config(args.config) if args.config else RunConfig()
    overrides = {
        key: getattr(args, key, None)
        for key in (
            "schema", "target", "threshold", "budget", "stages", "weight", "normalization", "loss",
            "lipschitz", "n_critic", "policy", "iterations", "batch", "latent_dim", "hidden",
            "candidate_pool", "use_unlabeled", "active_learning", "weighted_loss", "baseline",
            "alpha_source", "condition_weighting", "gumbel", "cls_weight", "seeds", "eval_n", "output_dir",
            "gate", "gain", "plateau",
        )
    }
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    return merge_overrides(base, overrides)


# ═══════════════════════════════════════════════════════════════
# Commands
# ═══════════════════════════════════════════════════════════════

def cmd_train(cfg: RunConfig) -> int:
    cfg.validate()
    schema = resolve_schema(cfg.schema)
    score_fn = make_target(cfg.target, schema, **cfg.target_params())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    transcript = out / TRANSCRIPT_NAME
    if transcript.exists():
        transcript.unlink()
    cfg.save(out / RUN_CONFIG_NAME)

    trainer_cfg = cfg.to_trainer_config()
    oracle = BudgetedOracle(schema, score_fn, cfg.threshold, cfg.budget, transcript)
    monitor = StageMonitor()
    state, metrics = train(trainer_cfg, schema, oracle, monitor=monitor)

    save_state(state, out / CHECKPOINT_NAME, trainer_cfg)
    monitor.export_csv(out / STAGE_METRICS_NAME)
    monitor.write_chart(out / STAGE_CHART_NAME)
    monitor.export_timing_csv(out / STAGE_TIMING_NAME)

    last = metrics[-1]
    print(f"trained {schema.name} seed={trainer_cfg.seed}: spent {oracle.spent}/{cfg.budget} labels, "
          f"α̂={state.alpha_hat:.5f}, w={state.weight:g}, labeled rare={last['labeled_rare']}")
    print(f"artifacts in {out} (peak RSS {monitor.peak_rss_mb:.0f} MB)")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, checkpoint: Optional[str], n: Optional[int]) -> int:
    n = cfg.eval_n if n is None else n
    if n < 1:
        raise ValueError(f"--n must be >= 1, got {n}")
    schema = resolve_schema(cfg.schema)
    out = Path(cfg.output_dir)
    checkpoint = Path(checkpoint) if checkpoint else out / CHECKPOINT_NAME
    state = load_state(checkpoint, schema)
    score_fn = make_target(cfg.target, schema, **cfg.target_params())

    seed = cfg.seeds[0]
    truth = build_ground_truth(schema, score_fn, cfg.threshold, np.random.default_rng(seed), GROUND_TRUTH_SAMPLES)
    report = evaluate(
        state, score_fn, cfg.threshold, truth, n, seed,
        config={"schema": schema.name, "target": cfg.target, "threshold": cfg.threshold,
                "checkpoint": str(checkpoint)},
    )
    append_report_csv(out / EVAL_CSV_NAME, [report])
    print(json.dumps(report.to_row()))
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace) -> int:
    cfg.validate()
    schema = resolve_schema(cfg.schema)
    score_fn = make_target(cfg.target, schema, **cfg.target_params())
    grid = AblationGrid(
        components=[c for c in args.components.split(",") if c.strip()] or ["base"],
        budgets=args.budgets or [cfg.budget],
        alphas=args.alphas or [None],
        stages=args.stages_list or [cfg.stages],
        weights=args.weights or [cfg.weight],
        seeds=cfg.seeds,
    )
    reports = run_ablation(grid, schema, score_fn, cfg.to_trainer_config(), cfg.threshold,
                           eval_n=cfg.eval_n, workers=args.workers)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / RUN_CONFIG_NAME)
    frame = reports_frame(reports)
    frame.to_csv(out / ABLATION_CSV_NAME, index=False)
    summary = summarize_ablation(frame)
    summary.to_csv(out / ABLATION_SUMMARY_NAME, index=False)
    print(summary.to_string(index=False))
    return EXIT_OK


def cmd_ground_truth(cfg: RunConfig, sample: int) -> int:
    schema = resolve_schema(cfg.schema)
    score_fn = make_target(cfg.target, schema, **cfg.target_params())
    if sample > 0:
        truth = build_ground_truth(schema, score_fn, cfg.threshold, np.random.default_rng(cfg.seeds[0]), sample, cap=0)
    else:
        truth = enumerate_ground_truth(schema, score_fn, cfg.threshold)

    out = Path(cfg.output_dir)
    write_packets(out / RARE_PACKETS_NAME, truth.rare_packets.tolist())
    with open(out / GROUND_TRUTH_NAME, "w", encoding="utf-8") as f:
        json.dump({"schema": schema.name, "target": cfg.target, "threshold": cfg.threshold, **truth.to_dict()},
                  f, indent=2)
    print(f"{schema.name}: α = {truth.alpha!r} ({len(truth.rare_scores)} rare of {truth.population}"
          f"{'' if truth.exact else ', sampled'})")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    if args.instances < 1 or not 2 <= args.support <= 64:
        raise ValueError("need at least one instance and a support of 2..64 points")
    rng = np.random.default_rng(args.seed)
    worst = {"js": 0.0, "wasserstein": 0.0}
    failures = 0
    for _ in range(args.instances):
        n_rare = int(rng.integers(1, args.support))
        instance = random_instance(rng, args.support, n_rare)
        w = float(rng.uniform(1.0, 1.0 / instance.alpha))
        report = verify_propositions(instance, w, rng, tolerance=args.tolerance)
        for family in worst:
            worst[family] = max(worst[family], report["weighted_equivalence"][family])
        failures += not report["ok"]

    print(f"weighted-loss equivalence: max |error| JS={worst['js']:.3e}  W={worst['wasserstein']:.3e}")
    print(f"{args.instances - failures}/{args.instances} instances passed")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


# ═══════════════════════════════════════════════════════════════
# Entry point
# ═══════════════════════════════════════════════════════════════

def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = resolve_run_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.n)
        if args.command == "ablate":
            return cmd_ablate(cfg, args)
        return cmd_ground_truth(cfg, args.sample)
    except (FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
