"""
Rarefy — Black-box Oracle
Score functions standing in for the target system, budgeted rare/common
labeling, and exhaustive ground truth for small spaces.
"""

import os
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

# ── Ensure project root is on sys.path for standalone execution ──
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from audit.transcript_logger import log_label
from config.settings import ENUMERATION_CAP, VERBOSE
from pipeline.schema import (
    Packet,
    PacketSchema,
    iter_packet_chunks,
    sample_uniform_batch,
    search_space_size,
)


class Label:
    RARE = "rare"
    COMMON = "common"


class BudgetExhausted(RuntimeError):
    pass


class EnumerationTooLarge(ValueError):
    pass


# ─────────────────────────────────────────────────────────────
# Score functions
# ─────────────────────────────────────────────────────────────

def _max_index_mask(schema: PacketSchema, packets: np.ndarray) -> np.ndarray:
    """True where a field sits at its last category (bit = 1 for binary fields).

    ``packets`` may hold only the leading columns of the schema.
    """
    last = np.asarray(schema.cardinalities, dtype=np.int64)[: packets.shape[1]] - 1
    return packets == last


class SyntheticAmplifier:
    """
    Desk-scale stand-in for a DNS responder.

    The first ``k`` fields form a gate; when every one of them is set, the
    response is amplified by ``gain`` plus a bonus proportional to how many of
    the remaining fields are set:

        score = 1 + A·[gate open]·(1 + Σ_rest idx/(card−1) / m)

    For binary fields the sum is the popcount of the remaining bits.
    """

    def __init__(self, schema: PacketSchema, k: int, gain: float = 20.0):
        if not 1 <= k <= len(schema):
            raise ValueError(f"gate length k={k} must be in [1, {len(schema)}]")
        self.schema = schema
        self.k = int(k)
        self.gain = float(gain)
        self.m = len(schema) - self.k

    def score_batch(self, packets: np.ndarray) -> np.ndarray:
        packets = np.asarray(packets, dtype=np.int64).reshape(-1, len(self.schema))
        gate = np.all(_max_index_mask(self.schema, packets[:, :self.k]), axis=1)
        if self.m:
            rest_card = np.asarray(self.schema.cardinalities[self.k:], dtype=np.float64)
            bonus = np.sum(packets[:, self.k:] / (rest_card - 1.0), axis=1) / self.m
        else:
            bonus = np.zeros(packets.shape[0])
        return 1.0 + self.gain * gate * (1.0 + bonus)

    def __call__(self, packet: Sequence[int]) -> float:
        return float(self.score_batch(np.asarray([self.schema.validate(packet)]))[0])

    def describe(self) -> dict:
        return {"target": "synthetic-amp", "k": self.k, "gain": self.gain, "schema": self.schema.name}


class SyntheticLatency:
    """
    Multi-plateau "classification time" stand-in for a packet classifier.

    L counts the leading fields sitting at their last category; the latency
    jumps by one step every ``plateau`` fields:

        score = base·(1 + ⌊L / plateau⌋)

    Flat within a plateau, discontinuous across plateaus.
    """

    def __init__(self, schema: PacketSchema, plateau: int = 2, base: float = 0.01):
        if plateau < 1:
            raise ValueError("plateau width must be >= 1")
        self.schema = schema
        self.plateau = int(plateau)
        self.base = float(base)

    def score_batch(self, packets: np.ndarray) -> np.ndarray:
        packets = np.asarray(packets, dtype=np.int64).reshape(-1, len(self.schema))
        hits = _max_index_mask(self.schema, packets)
        # length of the leading run of hits
        leading = np.cumprod(hits, axis=1).sum(axis=1)
        return self.base * (1.0 + leading // self.plateau)

    def __call__(self, packet: Sequence[int]) -> float:
        return float(self.score_batch(np.asarray([self.schema.validate(packet)]))[0])

    def describe(self) -> dict:
        return {"target": "synthetic-latency", "plateau": self.plateau, "base": self.base,
                "schema": self.schema.name}


def synthetic_score(amp: SyntheticAmplifier, packet: Sequence[int]) -> float:
    """Score one packet; raises SchemaError when it does not fit the amplifier's schema."""
    return amp(packet)


def score_packets(score_fn: Callable, packets: np.ndarray) -> np.ndarray:
    """Vectorized scoring when the function supports it, row by row otherwise."""
    packets = np.asarray(packets, dtype=np.int64)
    if hasattr(score_fn, "score_batch"):
        return np.asarray(score_fn.score_batch(packets), dtype=np.float64)
    return np.asarray([float(score_fn(tuple(row))) for row in packets.tolist()], dtype=np.float64)


# ─────────────────────────────────────────────────────────────
# Budgeted oracle
# ─────────────────────────────────────────────────────────────

class BudgetedOracle:
    """
    The only way training code learns a label.

    Each distinct packet costs one unit of budget the first time it is
    labeled; repeats are served from the cache for free. label() is
    linearizable: spend and cache updates happen under one lock.

    Usage:
        oracle = BudgetedOracle(schema, amp, threshold=10, budget=2000)
        score, label = oracle.label(packet)
    """

    def __init__(
        self,
        schema: PacketSchema,
        score_fn: Callable,
        threshold: float,
        budget: int,
        transcript_path: Optional[Path] = None,
    ):
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self.schema = schema
        self.score_fn = score_fn
        self.threshold = float(threshold)
        self.budget = int(budget)
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._lock = threading.Lock()
        self._cache: Dict[Packet, Tuple[float, str]] = {}
        self._spent = 0
        self._start = time.time()

    @property
    def spent(self) -> int:
        return self._spent

    @property
    def remaining(self) -> int:
        return self.budget - self._spent

    def classify(self, score: float) -> str:
        return Label.RARE if score >= self.threshold else Label.COMMON

    def label(self, packet: Sequence[int]) -> Tuple[float, str]:
        packet = self.schema.validate(packet)
        with self._lock:
            cached = self._cache.get(packet)
            if cached is not None:
                charged = False
                score, label = cached
            else:
                if self._spent >= self.budget:
                    self._log(f"refused new packet {packet}: budget exhausted")
                    raise BudgetExhausted(
                        f"labeling budget of {self.budget} exhausted; new packet {packet} refused"
                    )
                score = float(self.score_fn(packet))
                label = self.classify(score)
                self._cache[packet] = (score, label)
                self._spent += 1
                charged = True
            if self.transcript_path:
                log_label(self.transcript_path, packet, score, label, charged, self._spent)
        return score, label

    def label_batch(self, packets: np.ndarray) -> Tuple[np.ndarray, list]:
        scores, labels = [], []
        for row in np.asarray(packets, dtype=np.int64).tolist():
            score, label = self.label(row)
            scores.append(score)
            labels.append(label)
        return np.asarray(scores), labels

    def peek(self, packet: Sequence[int]) -> Optional[Tuple[float, str]]:
        """Cached result for a packet, without charging or logging."""
        with self._lock:
            return self._cache.get(tuple(int(i) for i in packet))

    def cached(self) -> Dict[Packet, Tuple[float, str]]:
        with self._lock:
            return dict(self._cache)

    def get_status(self) -> dict:
        return {
            "budget": self.budget,
            "spent": self._spent,
            "remaining": self.remaining,
            "cached": len(self._cache),
            "rare_seen": sum(1 for _, lab in self._cache.values() if lab == Label.RARE),
        }

    def _log(self, msg: str):
        if VERBOSE:
            elapsed = time.time() - self._start
            print(f"[Oracle {elapsed:.1f}s] {msg} | spent={self._spent}/{self.budget}")


# ─────────────────────────────────────────────────────────────
# Ground truth
# ─────────────────────────────────────────────────────────────

@dataclass
class GroundTruth:
    rare_packets: np.ndarray     # (n_rare, n_fields)
    rare_scores: np.ndarray      # sorted ascending
    alpha: float
    population: int              # packets examined
    exact: bool

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "n_rare": int(len(self.rare_scores)),
            "population": self.population,
            "exact": self.exact,
        }


def enumerate_ground_truth(
    schema: PacketSchema,
    score_fn: Callable,
    threshold: float,
    cap: int = ENUMERATION_CAP,
) -> GroundTruth:
    """Exhaustive rare set and α; never touches any labeling budget."""
    size = search_space_size(schema)
    if size > cap:
        raise EnumerationTooLarge(f"search space of '{schema.name}' has {size:.3e} packets, cap is {cap}")

    rare_chunks, score_chunks = [], []
    for chunk in iter_packet_chunks(schema):
        scores = score_packets(score_fn, chunk)
        mask = scores >= threshold
        rare_chunks.append(chunk[mask])
        score_chunks.append(scores[mask])

    rare_packets = np.concatenate(rare_chunks, axis=0)
    rare_scores = np.sort(np.concatenate(score_chunks))
    return GroundTruth(rare_packets, rare_scores, len(rare_scores) / size, size, exact=True)


def sample_ground_truth(
    schema: PacketSchema,
    score_fn: Callable,
    threshold: float,
    n: int,
    rng: np.random.Generator,
) -> GroundTruth:
    """Uniform sampling + rare filtering, for spaces beyond the enumeration cap."""
    if n < 1:
        raise ValueError("need at least one sample")
    packets = sample_uniform_batch(schema, rng, n)
    scores = score_packets(score_fn, packets)
    mask = scores >= threshold
    return GroundTruth(packets[mask], np.sort(scores[mask]), float(mask.mean()), n, exact=False)


def build_ground_truth(
    schema: PacketSchema,
    score_fn: Callable,
    threshold: float,
    rng: np.random.Generator,
    n_samples: int,
    cap: int = ENUMERATION_CAP,
) -> GroundTruth:
    if search_space_size(schema) <= cap:
        return enumerate_ground_truth(schema, score_fn, threshold, cap)
    return sample_ground_truth(schema, score_fn, threshold, n_samples, rng)


def make_target(name: str, schema: PacketSchema, **params):
    """Build a score function by CLI name."""
    if name == "synthetic-amp":
        return SyntheticAmplifier(schema, k=params.get("k", 7), gain=params.get("gain", 20.0))
    if name == "synthetic-latency":
        return SyntheticLatency(schema, plateau=params.get("plateau", 2), base=params.get("base", 0.01))
    raise ValueError(f"unknown target '{name}' (expected synthetic-amp or synthetic-latency)")

