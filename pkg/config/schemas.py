"""
Rarefy — Built-in Schema Registry
Packet search spaces shipped with the project: DNS requests, the packet
classifier 5-tuple, and toy all-binary spaces for exhaustive checks.
"""

import re
from pathlib import Path
from typing import Dict, List

from pipeline.schema import FieldSpec, PacketSchema, SchemaError, load_schema


def _bits(prefix: str, n: int) -> List[FieldSpec]:
    return [FieldSpec(f"{prefix}_{i}", 2) for i in range(n)]


# ─────────────────────────────────────────────────────────────────
# 1. DNS request (17 logical fields, bit-level fields expanded)
# ─────────────────────────────────────────────────────────────────
DNS_RDATATYPES = (
    1, 28, 18, 42, 257, 60, 59, 37, 5, 49, 32769, 39, 48, 43, 55, 45, 25, 36,
    29, 15, 35, 2, 47, 50, 51, 61, 12, 46, 17, 24, 6, 33, 44, 32768, 249, 52,
    250, 16, 256, 255, 252, 251, 41,
)
DNS_RDATACLASSES = (1, 3, 4, 255)
DNS_URLS = (
    "berkeley.edu", "energy.gov", "chase.com", "aetna.com", "google.com",
    "Nairaland.com", "Alibaba.com", "Cambridge.org", "Alarabiya.net", "Bnamericas.com",
)
# Six candidate opcodes; the size of the search space (≈3.6e17) pins this at 6.
DNS_OPCODES = (0, 1, 2, 3, 4, 5)


def dns_schema() -> PacketSchema:
    fields = (
        _bits("id", 16)
        + [FieldSpec("opcode", len(DNS_OPCODES), tuple(map(str, DNS_OPCODES)))]
        + [FieldSpec(flag, 2) for flag in ("aa", "tc", "rd", "ra", "z", "ad", "cd")]
        + _bits("rcode", 4)
        + [
            FieldSpec("rdatatype", len(DNS_RDATATYPES), tuple(map(str, DNS_RDATATYPES))),
            FieldSpec("rdataclass", len(DNS_RDATACLASSES), tuple(map(str, DNS_RDATACLASSES))),
            FieldSpec("edns", 2),
            FieldSpec("dnssec", 2),
        ]
        + _bits("payload", 16)
        + [FieldSpec("url", len(DNS_URLS), DNS_URLS)]
    )
    return PacketSchema("dns", tuple(fields))


# ─────────────────────────────────────────────────────────────────
# 2. Packet classifier 5-tuple (103 bits)
# ─────────────────────────────────────────────────────────────────
def fivetuple_schema() -> PacketSchema:
    fields = (
        _bits("src_ip", 32)
        + _bits("dst_ip", 32)
        + _bits("src_port", 16)
        + _bits("dst_port", 16)
        + _bits("protocol", 7)
    )
    return PacketSchema("fivetuple", tuple(fields))


# ─────────────────────────────────────────────────────────────────
# 3. Toy binary spaces (enumerable)
# ─────────────────────────────────────────────────────────────────
def toy_schema(n_bits: int) -> PacketSchema:
    return PacketSchema(f"toy-{n_bits}", tuple(_bits("bit", n_bits)))


BUILTIN_SCHEMAS: Dict[str, callable] = {
    "dns": dns_schema,
    "fivetuple": fivetuple_schema,
}

_TOY_PATTERN = re.compile(r"^toy-(\d+)$")


def resolve_schema(name_or_path: str) -> PacketSchema:
    """Built-in name (``dns``, ``fivetuple``, ``toy-<n>``) or a JSON schema file path."""
    if name_or_path in BUILTIN_SCHEMAS:
        return BUILTIN_SCHEMAS[name_or_path]()
    match = _TOY_PATTERN.match(name_or_path)
    if match:
        n_bits = int(match.group(1))
        if n_bits < 1:
            raise SchemaError("toy schema needs at least one bit")
        return toy_schema(n_bits)
    return load_schema(Path(name_or_path))
