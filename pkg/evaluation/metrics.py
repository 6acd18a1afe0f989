"""
Rarefy — Evaluation Metrics
Fidelity (Wasserstein-1 between rare-class score distributions) and
diversity (distinct truly-rare packets per generated packet).

Evaluation scores packets with the raw score function, never through a
budgeted oracle: the labeling budget constrains training only.

CSV columns (eval_reports.csv / ablation.csv), in order:
    config columns (sorted by name), fidelity, diversity, n, n_rare, no_rare, seed
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import wasserstein_distance

from pipeline.oracle import GroundTruth, score_packets
from pipeline.trainer import sample_rare

ScoreLike = Union["EmpiricalScoreDist", Sequence[float], np.ndarray]


@dataclass(frozen=True)
class EmpiricalScoreDist:
    scores: np.ndarray       # sorted ascending

    def __post_init__(self):
        values = np.sort(np.asarray(self.scores, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(values)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", values)

    def __len__(self):
        return self.scores.size

    @property
    def range(self) -> float:
        return float(self.scores[-1] - self.scores[0]) if self.scores.size else 0.0


def _scores(dist: ScoreLike) -> np.ndarray:
    if isinstance(dist, EmpiricalScoreDist):
        return dist.scores
    return EmpiricalScoreDist(dist).scores


def wasserstein1(a: ScoreLike, b: ScoreLike) -> float:
    """Exact 1-D W1 between two empirical distributions (sizes may differ)."""
    a, b = _scores(a), _scores(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 needs two non-empty score sets")
    return float(wasserstein_distance(a, b))


# ─────────────────────────────────────────────────────────────
# Sampling & scoring
# ─────────────────────────────────────────────────────────────

class GroundTruthSampler:
    """Uniform draws from the exact rare set: a perfect rare-class sampler."""

    def __init__(self, truth: GroundTruth):
        if len(truth.rare_packets) == 0:
            raise ValueError("ground truth holds no rare packets")
        self.truth = truth

    def __call__(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.truth.rare_packets[rng.integers(0, len(self.truth.rare_packets), n)]


def draw_rare(sampler, n: int, rng: np.random.Generator) -> np.ndarray:
    """A trained state (anything with ``nets``) or a ``(n, rng) -> packets`` callable."""
    if hasattr(sampler, "nets"):
        return sample_rare(sampler, n, rng)
    return np.asarray(sampler(n, rng), dtype=np.int64)


def score_parallel(score_fn: Callable, packets: np.ndarray, workers: int = 1, chunk: int = 8192) -> np.ndarray:
    """Score in chunks across threads; results keep input order."""
    packets = np.asarray(packets, dtype=np.int64)
    if workers <= 1 or len(packets) <= chunk:
        return score_packets(score_fn, packets)
    chunks = [packets[i:i + chunk] for i in range(0, len(packets), chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: score_packets(score_fn, c), chunks))
    return np.concatenate(parts)


# ─────────────────────────────────────────────────────────────
# Metrics
# ─────────────────────────────────────────────────────────────

@dataclass
class FidelityResult:
    value: float             # +inf when no generated packet is rare
    n_rare: int
    no_rare: bool


def fidelity_from_scores(scores: np.ndarray, threshold: float, truth: GroundTruth) -> FidelityResult:
    scores = np.asarray(scores, dtype=np.float64)
    rare = scores[scores >= threshold]
    if rare.size == 0:
        return FidelityResult(float("inf"), 0, True)
    if len(truth.rare_scores) == 0:
        raise ValueError("ground truth holds no rare scores")
    return FidelityResult(wasserstein1(rare, truth.rare_scores), int(rare.size), False)


def fidelity(
    sampler,
    score_fn: Callable,
    threshold: float,
    truth: GroundTruth,
    n: int,
    rng: np.random.Generator,
    workers: int = 1,
) -> FidelityResult:
    """W1 between scores of truly-rare generated packets and the ground-truth rare scores."""
    if n < 1:
        raise ValueError("n must be >= 1")
    packets = draw_rare(sampler, n, rng)
    return fidelity_from_scores(score_parallel(score_fn, packets, workers), threshold, truth)


def diversity_from_scores(packets: np.ndarray, scores: np.ndarray, threshold: float) -> float:
    packets = np.asarray(packets, dtype=np.int64)
    if len(packets) < 1:
        raise ValueError("diversity needs at least one sample")
    rare = packets[np.asarray(scores) >= threshold]
    if len(rare) == 0:
        return 0.0
    return float(len(np.unique(rare, axis=0)) / len(packets))


def diversity(samples: np.ndarray, score_fn: Callable, threshold: float, workers: int = 1) -> float:
    """(# distinct packets scoring ≥ T) / (# samples)."""
    samples = np.asarray(samples, dtype=np.int64)
    if len(samples) < 1:
        raise ValueError("diversity needs at least one sample")
    return diversity_from_scores(samples, score_parallel(score_fn, samples, workers), threshold)


# ─────────────────────────────────────────────────────────────
# Reports
# ─────────────────────────────────────────────────────────────

@dataclass
class EvalReport:
    fidelity: float
    diversity: float
    n: int
    n_rare: int
    seed: int
    no_rare: bool = False
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n >= 1 and self.diversity > self.n_rare / self.n + 1e-12:
            raise ValueError("diversity cannot exceed the rare share of the samples")

    def to_row(self) -> dict:
        row = {k: self.config[k] for k in sorted(self.config)}
        row.update({
            "fidelity": self.fidelity,
            "diversity": self.diversity,
            "n": self.n,
            "n_rare": self.n_rare,
            "no_rare": self.no_rare,
            "seed": self.seed,
        })
        return row


def evaluate(
    sampler,
    score_fn: Callable,
    threshold: float,
    truth: GroundTruth,
    n: int,
    seed: int,
    config: Optional[dict] = None,
    workers: int = 1,
) -> EvalReport:
    """Fidelity and diversity from one batch of n rare-conditioned samples."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    packets = draw_rare(sampler, n, rng)
    scores = score_parallel(score_fn, packets, workers)
    fid = fidelity_from_scores(scores, threshold, truth)
    return EvalReport(
        fidelity=fid.value,
        diversity=diversity_from_scores(packets, scores, threshold),
        n=n,
        n_rare=fid.n_rare,
        seed=seed,
        no_rare=fid.no_rare,
        config=dict(config or {}),
    )


def reports_frame(reports: List[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports])


def append_report_csv(path, reports: List[EvalReport]) -> Path:
    """Append rows, writing the header only when the file is new."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = reports_frame(reports)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
    return path
