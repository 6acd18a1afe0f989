"""
Rarefy — Training State
Networks, optimizers, the labeled pool and run bookkeeping for one training run.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from engine.adam import AdamState
from pipeline.acgan import ACGANNets
from pipeline.losses import estimate_alpha
from pipeline.oracle import Label
from pipeline.schema import Packet, PacketSchema


@dataclass(frozen=True)
class LabeledRecord:
    packet: Packet
    label: str
    score: float
    stage: int

    @property
    def is_rare(self) -> bool:
        return self.label == Label.RARE


class TrainState:
    """
    Represents a single training run.

    ``to_dict`` goes into checkpoints, so it holds nothing that changes between
    identical runs (no wall-clock times, no random ids).
    """

    def __init__(
        self,
        schema: PacketSchema,
        nets: ACGANNets,
        g_opt: Optional[AdamState] = None,
        critic_opt: Optional[AdamState] = None,
        run_id: Optional[str] = None,
    ):
        self.run_id = run_id or "unnamed"
        self.schema = schema
        self.nets = nets
        self.g_opt = g_opt or AdamState.for_params(nets.generator.params())
        self.critic_opt = critic_opt or AdamState.for_params(nets.critic_params())
        self.status = "INITIALIZED"

        self.labeled: List[LabeledRecord] = []
        self._index: Dict[Packet, bool] = {}
        self.alpha_hat: float = 0.0
        self.weight: float = 1.0          # w actually in use after demotion checks
        self.stage: int = 0

        self.phases_completed: list = []
        self.errors: list = []

    # ── Labeled pool ────────────────────────────────────────

    def add_labels(self, packets: Sequence[Packet], scores: Sequence[float], labels: Sequence[str], stage: int):
        for packet, score, label in zip(packets, scores, labels):
            packet = tuple(int(i) for i in packet)
            self.labeled.append(LabeledRecord(packet, label, float(score), stage))
            self._index[packet] = label == Label.RARE

    def known_rare(self, packets: np.ndarray) -> np.ndarray:
        """Per-row label lookup: 1 rare, 0 common, -1 unlabeled."""
        out = np.full(len(packets), -1, dtype=np.int64)
        for i, row in enumerate(np.asarray(packets, dtype=np.int64).tolist()):
            hit = self._index.get(tuple(row))
            if hit is not None:
                out[i] = int(hit)
        return out

    def labeled_packets(self, stages: Optional[Sequence[int]] = None) -> np.ndarray:
        records = self._records(stages)
        if not records:
            return np.zeros((0, len(self.schema)), dtype=np.int64)
        return np.asarray([r.packet for r in records], dtype=np.int64)

    def labeled_is_rare(self, stages: Optional[Sequence[int]] = None) -> np.ndarray:
        return np.asarray([r.is_rare for r in self._records(stages)], dtype=bool)

    def rare_packets(self) -> np.ndarray:
        rare = [r.packet for r in self.labeled if r.is_rare]
        if not rare:
            return np.zeros((0, len(self.schema)), dtype=np.int64)
        return np.asarray(rare, dtype=np.int64)

    def update_alpha(self, stages: Optional[Sequence[int]] = None) -> float:
        self.alpha_hat = estimate_alpha(self.labeled_is_rare(stages))
        return self.alpha_hat

    def _records(self, stages: Optional[Sequence[int]]) -> List[LabeledRecord]:
        if stages is None:
            return self.labeled
        stages = set(stages)
        return [r for r in self.labeled if r.stage in stages]

    # ── Bookkeeping ─────────────────────────────────────────

    def mark_phase(self, phase: str, status: str = "DONE"):
        self.phases_completed.append({
            "phase": phase,
            "status": status,
        })

    def add_error(self, phase: str, error: str):
        self.errors.append({
            "phase": phase,
            "error": str(error),
        })

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "schema": self.schema.name,
            "status": self.status,
            "stage": self.stage,
            "labeled": len(self.labeled),
            "labeled_rare": int(sum(r.is_rare for r in self.labeled)),
            "alpha_hat": self.alpha_hat,
            "weight": self.weight,
            "phases_completed": self.phases_completed,
            "errors": self.errors,
        }

    def __repr__(self):
        return f"TrainState({self.run_id}, status={self.status}, labeled={len(self.labeled)})"
