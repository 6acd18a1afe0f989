"""
Rarefy — Packet Schema
Ordered categorical fields, one-hot encoding, and uniform sampling.

A packet is a tuple of category indices, one per field. The network view of
a packet is the concatenation of one one-hot block per field; generator
outputs are per-field softmax blocks of the same layout.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

Packet = Tuple[int, ...]


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    cardinality: int
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if int(self.cardinality) < 2:
            raise SchemaError(f"field '{self.name}': cardinality must be >= 2, got {self.cardinality}")
        if self.labels is not None:
            labels = tuple(str(l) for l in self.labels)
            if len(labels) != self.cardinality:
                raise SchemaError(f"field '{self.name}': {len(labels)} labels for cardinality {self.cardinality}")
            if len(set(labels)) != len(labels):
                raise SchemaError(f"field '{self.name}': candidate labels must be distinct")
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class PacketSchema:
    name: str
    fields: Tuple[FieldSpec, ...]

    def __post_init__(self):
        if not self.fields:
            raise SchemaError("a schema needs at least one field")
        object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(f.cardinality for f in self.fields)

    @property
    def width(self) -> int:
        return sum(self.cardinalities)

    @property
    def offsets(self) -> Tuple[int, ...]:
        return tuple(np.concatenate(([0], np.cumsum(self.cardinalities)[:-1])).tolist())

    def __len__(self):
        return len(self.fields)

    def validate(self, packet: Sequence[int]) -> Packet:
        if len(packet) != len(self.fields):
            raise SchemaError(f"packet has {len(packet)} fields, schema '{self.name}' has {len(self.fields)}")
        out = tuple(int(i) for i in packet)
        for idx, field in zip(out, self.fields):
            if not 0 <= idx < field.cardinality:
                raise SchemaError(f"field '{field.name}': index {idx} outside [0, {field.cardinality})")
        return out

    def describe(self, packet: Sequence[int]) -> dict:
        """Human-readable field → value mapping (labels where available)."""
        return {
            f.name: (f.labels[i] if f.labels else i)
            for f, i in zip(self.fields, self.validate(packet))
        }


# ─────────────────────────────────────────────────────────────
# Encoding
# ─────────────────────────────────────────────────────────────

def encode(schema: PacketSchema, packet: Sequence[int]) -> np.ndarray:
    return encode_batch(schema, np.asarray([schema.validate(packet)]))[0]


def encode_batch(schema: PacketSchema, packets: np.ndarray) -> np.ndarray:
    """(n, n_fields) index array → (n, width) concatenated one-hots."""
    packets = np.asarray(packets, dtype=np.int64).reshape(-1, len(schema))
    card = np.asarray(schema.cardinalities)
    if np.any(packets < 0) or np.any(packets >= card):
        raise SchemaError(f"packet index out of range for schema '{schema.name}'")
    out = np.zeros((packets.shape[0], schema.width), dtype=np.float64)
    cols = packets + np.asarray(schema.offsets)
    out[np.arange(packets.shape[0])[:, None], cols] = 1.0
    return out


def decode(schema: PacketSchema, vector: np.ndarray) -> Packet:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1:
        raise SchemaError("decode expects a single vector; use decode_batch for batches")
    return tuple(decode_batch(schema, vector[None, :])[0].tolist())


def decode_batch(schema: PacketSchema, vectors: np.ndarray) -> np.ndarray:
    """Per-field argmax; ties go to the lowest index."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != schema.width:
        raise SchemaError(f"vector width {vectors.shape[-1]} != schema width {schema.width}")
    if not np.all(np.isfinite(vectors)):
        raise SchemaError("cannot decode non-finite entries")
    out = np.empty((vectors.shape[0], len(schema)), dtype=np.int64)
    for j, (start, card) in enumerate(zip(schema.offsets, schema.cardinalities)):
        out[:, j] = np.argmax(vectors[:, start:start + card], axis=1)
    return out


# ─────────────────────────────────────────────────────────────
# Sampling & size
# ─────────────────────────────────────────────────────────────

def sample_uniform(schema: PacketSchema, rng: np.random.Generator) -> Packet:
    return tuple(int(rng.integers(0, f.cardinality)) for f in schema.fields)


def sample_uniform_batch(schema: PacketSchema, rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, np.asarray(schema.cardinalities), size=(n, len(schema)), dtype=np.int64)


def search_space_size(schema: PacketSchema) -> int:
    return math.prod(schema.cardinalities)


def iter_packet_chunks(schema: PacketSchema, chunk_size: int = 1 << 16):
    """Yield the whole space in lexicographic order, ``chunk_size`` packets at a time."""
    total = search_space_size(schema)
    for start in range(0, total, chunk_size):
        flat = np.arange(start, min(start + chunk_size, total), dtype=np.int64)
        yield np.stack(np.unravel_index(flat, schema.cardinalities), axis=1).astype(np.int64)


def enumerate_packets(schema: PacketSchema) -> np.ndarray:
    """Every packet of the space as one (N, n_fields) array (small spaces only)."""
    return np.concatenate(list(iter_packet_chunks(schema)), axis=0)


# ─────────────────────────────────────────────────────────────
# Files
# ─────────────────────────────────────────────────────────────

def schema_from_dict(payload: dict) -> PacketSchema:
    try:
        fields = tuple(
            FieldSpec(
                name=str(f["name"]),
                cardinality=int(f["cardinality"]),
                labels=tuple(f["labels"]) if f.get("labels") is not None else None,
            )
            for f in payload["fields"]
        )
    except (KeyError, TypeError) as e:
        raise SchemaError(f"malformed schema entry: {e}")
    return PacketSchema(name=str(payload.get("name", "custom")), fields=fields)


def schema_to_dict(schema: PacketSchema) -> dict:
    return {
        "name": schema.name,
        "fields": [
            {"name": f.name, "cardinality": f.cardinality, **({"labels": list(f.labels)} if f.labels else {})}
            for f in schema.fields
        ],
    }


def load_schema(path) -> PacketSchema:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"schema file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return schema_from_dict(json.load(f))


def save_schema(schema: PacketSchema, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema_to_dict(schema), f, indent=2)
    return path


def write_packets(path, packets: Iterable[Sequence[int]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for packet in packets:
            f.write(",".join(str(int(i)) for i in packet) + "\n")
    return path


def read_packets(path, schema: Optional[PacketSchema] = None) -> List[Packet]:
    packets = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            packet = tuple(int(tok) for tok in line.split(","))
            packets.append(schema.validate(packet) if schema else packet)
    return packets
