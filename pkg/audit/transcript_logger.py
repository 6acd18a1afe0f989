"""
Rarefy — Oracle Transcript Logger
Append-only JSONL record of every label request made to a budgeted oracle.

One line per label() call, including free cache hits, so a run's spend can be
replayed and audited afterwards. Records carry no wall-clock time: two runs
with the same seed write identical transcripts.
"""

import json
from pathlib import Path
from typing import List, Sequence


def log_label(
    log_path: Path,
    packet: Sequence[int],
    score: float,
    label: str,
    charged: bool,
    spent_after: int,
) -> dict:
    """Append one label record and return it."""
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    record = {
        "packet": [int(i) for i in packet],
        "score": float(score),
        "label": label,
        "charged": bool(charged),
        "spent_after": int(spent_after),
    }
    with open(log_path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record) + "\n")
    return record


def read_transcript(log_path: Path) -> List[dict]:
    log_path = Path(log_path)
    if not log_path.exists():
        return []

    records = []
    with open(log_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                continue
    return records


def transcript_stats(log_path: Path) -> dict:
    """Request counts and a consistency check of the spend sequence."""
    records = read_transcript(log_path)
    charged = [r for r in records if r["charged"]]
    distinct = {tuple(r["packet"]) for r in charged}

    consistent = len(distinct) == len(charged)
    spent = 0
    for r in records:
        if r["charged"]:
            spent += 1
        if r["spent_after"] != spent:
            consistent = False
            break

    return {
        "requests": len(records),
        "charged": len(charged),
        "free": len(records) - len(charged),
        "rare": sum(1 for r in charged if r["label"] == "rare"),
        "final_spent": records[-1]["spent_after"] if records else 0,
        "consistent": consistent,
    }
