"""
Rarefy — Packet Schema Tests
"""

import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal
from scipy.stats import chisquare

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.schemas import dns_schema, fivetuple_schema, resolve_schema, toy_schema
from config.settings import SCHEMA_DIR
from pipeline.schema import (
    FieldSpec,
    PacketSchema,
    SchemaError,
    decode,
    decode_batch,
    encode,
    encode_batch,
    enumerate_packets,
    load_schema,
    read_packets,
    sample_uniform,
    sample_uniform_batch,
    save_schema,
    search_space_size,
    write_packets,
)

BIT = PacketSchema("bit", (FieldSpec("b", 2),))


def test_single_binary_field_encoding():
    assert_array_equal(encode(BIT, (1,)), [0.0, 1.0])
    assert_array_equal(encode(BIT, (0,)), [1.0, 0.0])


def test_dns_id_block_is_sixteen_one_hots():
    schema = dns_schema()
    vec = encode(schema, sample_uniform(schema, np.random.default_rng(0)))
    id_block = vec[:32].reshape(16, 2)
    assert_array_equal(id_block.sum(axis=1), np.ones(16))
    assert vec.size == schema.width
    assert vec.sum() == len(schema)


def test_encode_rejects_out_of_range_index():
    with pytest.raises(SchemaError):
        encode(BIT, (2,))
    with pytest.raises(SchemaError):
        encode(BIT, (0, 1))


def test_decode_roundtrip_on_random_packets():
    schema = dns_schema()
    packets = sample_uniform_batch(schema, np.random.default_rng(1), 1000)
    assert_array_equal(decode_batch(schema, encode_batch(schema, packets)), packets)


def test_decode_argmax_and_lowest_index_tie():
    assert decode(BIT, np.array([0.9, 0.1])) == (0,)
    assert decode(BIT, np.array([0.5, 0.5])) == (0,)
    assert decode(BIT, np.array([0.2, 0.8])) == (1,)


def test_decode_rejects_bad_vectors():
    with pytest.raises(SchemaError):
        decode(BIT, np.array([0.1, 0.2, 0.7]))
    with pytest.raises(SchemaError):
        decode(BIT, np.array([np.nan, 0.2]))


@settings(max_examples=30, deadline=None)
@given(cards=st.lists(st.integers(2, 9), min_size=1, max_size=6), seed=st.integers(0, 2 ** 16))
def test_encode_decode_identity(cards, seed):
    schema = PacketSchema("h", tuple(FieldSpec(f"f{i}", c) for i, c in enumerate(cards)))
    packets = sample_uniform_batch(schema, np.random.default_rng(seed), 20)
    one_hot = encode_batch(schema, packets)
    assert_array_equal(decode_batch(schema, one_hot), packets)
    assert_array_equal(encode_batch(schema, decode_batch(schema, one_hot)), one_hot)


def test_uniform_binary_frequency():
    draws = sample_uniform_batch(BIT, np.random.default_rng(2), 100_000)
    assert 0.49 <= draws.mean() <= 0.51


def test_uniform_marginals_chi_square():
    field = FieldSpec("f", 7)
    schema = PacketSchema("seven", (field,))
    counts = np.bincount(sample_uniform_batch(schema, np.random.default_rng(3), 100_000)[:, 0], minlength=7)
    assert chisquare(counts).pvalue > 0.001


def test_sampling_is_seeded():
    schema = toy_schema(8)
    a = [sample_uniform(schema, np.random.default_rng(42)) for _ in range(3)]
    b = [sample_uniform(schema, np.random.default_rng(42)) for _ in range(3)]
    assert a == b


def test_field_invariants():
    with pytest.raises(SchemaError):
        FieldSpec("one", 1)
    with pytest.raises(SchemaError):
        FieldSpec("dup", 2, ("a", "a"))
    with pytest.raises(SchemaError):
        FieldSpec("short", 3, ("a", "b"))
    with pytest.raises(SchemaError):
        PacketSchema("empty", ())


def test_search_space_sizes():
    assert search_space_size(BIT) == 2
    assert search_space_size(fivetuple_schema()) == 2 ** 103
    dns = search_space_size(dns_schema())
    assert dns == 2 ** 45 * 6 * 43 * 4 * 10
    assert dns == 363_102_719_956_746_240
    assert round(dns / 1e17, 1) == 3.6


def test_dns_schema_fields():
    schema = dns_schema()
    by_name = {f.name: f for f in schema.fields}
    assert by_name["rdatatype"].cardinality == 43
    assert by_name["rdataclass"].cardinality == 4
    assert by_name["url"].cardinality == 10
    assert by_name["opcode"].cardinality == 6
    assert sum(1 for f in schema.fields if f.name.startswith("id_")) == 16
    assert sum(1 for f in schema.fields if f.name.startswith("payload_")) == 16


def test_enumeration_is_lexicographic_and_complete():
    packets = enumerate_packets(toy_schema(3))
    assert packets.shape == (8, 3)
    assert_array_equal(packets[1], [0, 0, 1])
    assert len({tuple(p) for p in packets.tolist()}) == 8


def test_schema_registry_and_files(tmp_path):
    assert resolve_schema("toy-12") == toy_schema(12)
    assert load_schema(SCHEMA_DIR / "toy12.json") == toy_schema(12)

    custom = PacketSchema("c", (FieldSpec("proto", 3, ("tcp", "udp", "icmp")), FieldSpec("flag", 2)))
    path = save_schema(custom, tmp_path / "c.json")
    assert resolve_schema(str(path)) == custom
    assert custom.describe((1, 0)) == {"proto": "udp", "flag": 0}

    with pytest.raises(FileNotFoundError, match="nope.json"):
        resolve_schema(str(tmp_path / "nope.json"))


def test_packet_files(tmp_path):
    packets = [(0, 1, 1), (1, 0, 0)]
    path = write_packets(tmp_path / "p.txt", packets)
    assert read_packets(path, toy_schema(3)) == packets
