"""
Rarefy — Ablation Harness
Seeded grids over the component switches (U = unlabeled samples,
A = active learning, W = weighted loss) and the budget / rare fraction /
stage / weight axes. One EvalReport row per cell per seed.
"""

import itertools
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

# ── Ensure project root is on sys.path for standalone execution ──
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import (
    ABLATION_COMPONENTS,
    DEFAULT_EVAL_SAMPLES,
    ENUMERATION_CAP,
    GROUND_TRUTH_SAMPLES,
    VERBOSE,
)
from evaluation.metrics import EvalReport, evaluate
from pipeline.oracle import BudgetedOracle, GroundTruth, build_ground_truth, score_packets
from pipeline.schema import PacketSchema, iter_packet_chunks, sample_uniform_batch, search_space_size
from pipeline.trainer import TrainerConfig, train

COMPONENT_ORDER = list(ABLATION_COMPONENTS)
# No component switched on. Not "NULL": pandas reads that back as NaN.
BASE_COMPONENT = "base"


class AblationConfigError(ValueError):
    pass


def parse_component(name: str) -> str:
    """Normalize a U/A/W combination ("WAU" → "UAW"; "", "null" or "none" → "base")."""
    letters = name.strip().upper()
    if letters in ("", "BASE", "NULL", "NONE"):
        return BASE_COMPONENT
    if set(letters) - set("UAW") or len(set(letters)) != len(letters):
        raise AblationConfigError(f"component '{name}' must combine the letters U, A, W")
    if "A" in letters and "U" not in letters:
        raise AblationConfigError(f"component '{name}': active learning needs unlabeled samples (U)")
    return "".join(c for c in "UAW" if c in letters)


@dataclass
class AblationGrid:
    components: Sequence[str] = tuple(COMPONENT_ORDER)
    budgets: Sequence[int] = (2000,)
    alphas: Sequence[Optional[float]] = (None,)   # None → the base threshold
    stages: Sequence[int] = (2,)
    weights: Sequence[float] = (3.0,)
    seeds: Sequence[int] = (1, 2, 3)

    def __post_init__(self):
        self.components = tuple(parse_component(c) for c in self.components)
        for axis in ("components", "budgets", "alphas", "stages", "weights", "seeds"):
            if not getattr(self, axis):
                raise AblationConfigError(f"grid axis '{axis}' is empty")

    @property
    def n_cells(self) -> int:
        return (len(self.components) * len(self.budgets) * len(self.alphas)
                * len(self.stages) * len(self.weights) * len(self.seeds))


@dataclass(frozen=True)
class AblationCell:
    component: str
    budget: int
    threshold: float
    alpha: float
    stages: int
    weight: float
    seed: int

    def sort_key(self) -> tuple:
        return (COMPONENT_ORDER.index(self.component), self.budget, self.alpha,
                self.stages, self.weight, self.seed)


@dataclass
class AblationContext:
    schema: PacketSchema
    score_fn: Callable
    base: TrainerConfig
    truths: Dict[float, GroundTruth]
    eval_n: int


# ─────────────────────────────────────────────────────────────
# Thresholds
# ─────────────────────────────────────────────────────────────

def _all_scores(schema: PacketSchema, score_fn: Callable, rng: np.random.Generator,
                n_samples: int, cap: int) -> np.ndarray:
    if search_space_size(schema) <= cap:
        return np.concatenate([score_packets(score_fn, chunk) for chunk in iter_packet_chunks(schema)])
    return score_packets(score_fn, sample_uniform_batch(schema, rng, n_samples))


def threshold_for_alpha(
    schema: PacketSchema,
    score_fn: Callable,
    alpha: float,
    rng: Optional[np.random.Generator] = None,
    n_samples: int = GROUND_TRUTH_SAMPLES,
    cap: int = ENUMERATION_CAP,
) -> Tuple[float, float]:
    """
    The largest T whose rare fraction is at least ``alpha``, and that fraction.

    Scores are discrete, so the achieved fraction can exceed the target.
    """
    if not 0.0 < alpha <= 1.0:
        raise AblationConfigError(f"target rare fraction must be in (0, 1], got {alpha}")
    rng = rng if rng is not None else np.random.default_rng(0)
    scores = np.sort(_all_scores(schema, score_fn, rng, n_samples, cap))[::-1]
    k = max(1, math.ceil(alpha * scores.size))
    threshold = float(scores[k - 1])
    return threshold, float(np.mean(scores >= threshold))


# ─────────────────────────────────────────────────────────────
# Grid
# ─────────────────────────────────────────────────────────────

def cell_config(base: TrainerConfig, cell: AblationCell) -> TrainerConfig:
    return replace(
        base,
        budget=cell.budget,
        stages=cell.stages,
        seed=cell.seed,
        loss=replace(base.loss, weight=cell.weight),
        **ABLATION_COMPONENTS[cell.component],
    )


def run_cell(cell: AblationCell, ctx: AblationContext) -> EvalReport:
    config = cell_config(ctx.base, cell)
    oracle = BudgetedOracle(ctx.schema, ctx.score_fn, cell.threshold, cell.budget)
    state, _ = train(config, ctx.schema, oracle)
    return evaluate(
        state,
        ctx.score_fn,
        cell.threshold,
        ctx.truths[cell.threshold],
        ctx.eval_n,
        cell.seed,
        config={
            "component": cell.component,
            "budget": cell.budget,
            "threshold": cell.threshold,
            "alpha": cell.alpha,
            "stages": cell.stages,
            "weight": cell.weight,
        },
    )


def _run_cell_args(args) -> EvalReport:
    return run_cell(*args)


def run_ablation(
    grid: AblationGrid,
    schema: PacketSchema,
    score_fn: Callable,
    base: TrainerConfig,
    threshold: float,
    eval_n: int = DEFAULT_EVAL_SAMPLES,
    workers: int = 1,
    rng: Optional[np.random.Generator] = None,
) -> List[EvalReport]:
    """Train and evaluate every cell; rows come back sorted by (config, seed)."""
    start = time.time()
    rng = rng if rng is not None else np.random.default_rng(0)

    thresholds = []
    for alpha in grid.alphas:
        if alpha is None:
            thresholds.append(float(threshold))
        else:
            thresholds.append(threshold_for_alpha(schema, score_fn, alpha, rng)[0])
    truths = {t: build_ground_truth(schema, score_fn, t, rng, GROUND_TRUTH_SAMPLES) for t in set(thresholds)}

    cells = sorted(
        (
            AblationCell(comp, budget, t, truths[t].alpha, stages, weight, seed)
            for comp, budget, t, stages, weight, seed in itertools.product(
                grid.components, grid.budgets, thresholds, grid.stages, grid.weights, grid.seeds
            )
        ),
        key=AblationCell.sort_key,
    )
    ctx = AblationContext(schema, score_fn, base, truths, eval_n)
    if VERBOSE:
        print(f"[Ablation 0.0s] {len(cells)} cells, {workers} worker(s)")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell_args, [(cell, ctx) for cell in cells]))
    else:
        reports = []
        for i, cell in enumerate(cells, 1):
            reports.append(run_cell(cell, ctx))
            if VERBOSE:
                print(f"[Ablation {time.time() - start:.1f}s] {i}/{len(cells)} {cell.component} "
                      f"B={cell.budget} S={cell.stages} w={cell.weight:g} seed={cell.seed}")
    return reports


def summarize_ablation(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of fidelity and diversity per cell across seeds."""
    keys = [c for c in ("component", "budget", "threshold", "alpha", "stages", "weight") if c in frame.columns]
    stderr = lambda x: float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")
    summary = frame.groupby(keys, sort=False).agg(
        fidelity_mean=("fidelity", "mean"),
        fidelity_stderr=("fidelity", stderr),
        diversity_mean=("diversity", "mean"),
        diversity_stderr=("diversity", stderr),
        runs=("seed", "count"),
    )
    return summary.reset_index()
