import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attribmmf.errors import FormatError, IndexMismatch, MissingEmbedding, VocabOverflow
from attribmmf.features import (ATTR_DIM, FEATURE_DIM, MAT_SLICE, OAT_SLICE, SLOT_OFFSETS, SLOTS, TEXT_SLICE,
                                TOPO_SLICE, NodeFeatures, OrdinalVocab, TextEmbedderSpec, build_vocabs,
                                embed_text, encode_attack_id, encode_attribute_features, encode_cve, encode_ip,
                                fuse_features, hash_embed, index_path_for, load_features, make_vocab,
                                node_text, ordinal_encode, save_features)
from attribmmf.graph import ALL_KINDS, NodeType
from attribmmf.node2vec import Node2vecConfig
from attribmmf.config import RunConfig
from attribmmf.pipeline import run_encode

from conftest import MW_A


def digits(s):
    return np.array([int(c) for c in s], dtype=float)


@pytest.mark.parametrize("aid, tactic, expected", [
    ("TA0011", None, "00110000000"),
    ("T1071", "TA0011", "00111071000"),
    ("T1071.004", "TA0011", "00111071004"),
    ("T1071.004", None, "00001071004"),
])
def test_attack_digits(aid, tactic, expected):
    assert np.array_equal(encode_attack_id(aid, tactic), digits(expected))


def test_ip_and_cve_digits():
    assert np.array_equal(encode_ip("45.135.167.27"), digits("045135167027"))
    assert np.array_equal(encode_cve("CVE-2019-9670"), digits("201909670"))
    assert np.array_equal(encode_cve("CVE-2021-44228"), digits("202144228"))
    assert not encode_ip(None).any() and not encode_cve("").any()


@pytest.mark.parametrize("bad", ["1.2.3", "256.1.1.1", "a.b.c.d"])
def test_malformed_ip(bad):
    with pytest.raises(FormatError):
        encode_ip(bad)


def test_malformed_ids():
    with pytest.raises(FormatError):
        encode_attack_id("X1071")
    with pytest.raises(FormatError):
        encode_cve("CVE-19-1")


def test_slot_layout():
    assert sum(s.dims for s in SLOTS) == ATTR_DIM
    assert SLOT_OFFSETS["ip_address"] == (6, 18)
    assert SLOT_OFFSETS["attck_id"] == (18, 29)
    assert SLOT_OFFSETS["cve_id"] == (29, 38)
    assert (OAT_SLICE.start, OAT_SLICE.stop, MAT_SLICE.start, MAT_SLICE.stop) == (0, 38, 38, 64)
    assert (TEXT_SLICE.start, TEXT_SLICE.stop, TOPO_SLICE.start, TOPO_SLICE.stop) == (64, 128, 128, 256)


def test_ordinal_vocab():
    v = make_vocab("fam", ["zeus", "emotet", "zeus", "", None], 2)
    assert v.values == ("emotet", "zeus")
    assert np.array_equal(ordinal_encode(v, "zeus"), digits("02"))
    assert not ordinal_encode(v, "unseen").any()
    with pytest.raises(VocabOverflow):
        OrdinalVocab("x", tuple(str(i) for i in range(10)), 1)
    OrdinalVocab("x", tuple(str(i) for i in range(9)), 1)


def test_node_type_digits(small_graph):
    attr = encode_attribute_features(small_graph)
    ids = small_graph.node_ids()
    for i, nid in enumerate(ids):
        rank = [k for k in ALL_KINDS].index(small_graph.kind(nid)) + 1
        assert np.array_equal(attr[i, :2], digits(f"{rank:02d}"))


def test_attribute_rows_per_kind(small_graph):
    ids = small_graph.node_ids()
    attr = encode_attribute_features(small_graph, ids=ids)
    ip_row = attr[ids.index("ip:45.135.167.27")]
    assert np.array_equal(ip_row[6:18], digits("045135167027"))
    assert not ip_row[MAT_SLICE].any()
    tech = attr[ids.index("technique:T1071.004")]
    assert np.array_equal(tech[18:29], digits("00111071004"))
    mw = attr[ids.index(f"malware:{MW_A}")]
    assert mw[MAT_SLICE].any() and not mw[2:38].any()
    report = attr[ids.index("report:r1")]
    assert not report[2:].any()


def test_vocabs_are_per_kind(small_graph):
    vocabs = build_vocabs(small_graph)
    assert vocabs["avclass_FAM"].values == ("lazarus", "other")
    assert vocabs["ip_geolocation"].values == ("KP",)


def test_hash_embed_properties():
    v = hash_embed("evil.com", 256)
    assert v.shape == (256,) and abs(np.linalg.norm(v) - 1) < 1e-12
    assert np.array_equal(v, hash_embed("EVIL.com", 256))
    assert not hash_embed("", 256).any()


def test_report_nodes_have_no_text(small_graph):
    assert node_text(small_graph, "report:r1") == ""
    text = embed_text(small_graph, TextEmbedderSpec(), ["report:r1", "domain:evil-one.com"])
    assert text.shape == (2, 64)
    assert not text[0].any() and text[1].any()


def test_precomputed_backend_strict(small_graph, tmp_path):
    path = tmp_path / "emb.jsonl"
    path.write_text('{"id": "domain:evil-one.com", "vec": [1, 0, 0, 0]}\n')
    spec = TextEmbedderSpec("precomputed-file", native_dim=4, path=str(path))
    with pytest.raises(MissingEmbedding):
        embed_text(small_graph, spec)
    spec.strict = False
    out = embed_text(small_graph, spec)
    assert out.shape == (len(small_graph), 64)


def test_fuse_shapes():
    n = 3
    x = fuse_features(np.ones((n, 64)), np.zeros((n, 64)), np.full((n, 128), 2.0))
    assert x.shape == (n, FEATURE_DIM)
    with pytest.raises(IndexMismatch):
        fuse_features(np.ones((n, 64)), np.zeros((n, 63)), np.zeros((n, 128)))
    with pytest.raises(IndexMismatch):
        fuse_features(np.ones((n, 64)), np.zeros((n + 1, 64)), np.zeros((n, 128)))


def test_standardize_leaves_constant_columns():
    rng = np.random.default_rng(0)
    x = fuse_features(rng.random((5, 64)), np.zeros((5, 64)), rng.random((5, 128)), standardize=True)
    assert np.allclose(x[:, :64].mean(axis=0), 0, atol=1e-12)
    assert not x[:, 64:128].any()


def test_features_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    feats = NodeFeatures(["b", "a", "c"], rng.standard_normal((3, 256)).astype(np.float32))
    path = tmp_path / "features.bin"
    save_features(feats, path)
    assert index_path_for(path).name == "features.index.json"
    again = load_features(path)
    assert again.ids == feats.ids and np.array_equal(again.matrix, feats.matrix)


def test_features_bad_magic_and_truncation(tmp_path):
    feats = NodeFeatures(["a"], np.ones((1, 256), dtype=np.float32))
    path = tmp_path / "features.bin"
    save_features(feats, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_features(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_features(path)


def test_run_encode_dimensions(small_graph):
    cfg = RunConfig()
    cfg.node2vec = Node2vecConfig(walk_length=10, walks_per_node=2, epochs=1)
    feats = run_encode(small_graph, cfg)
    assert feats.matrix.shape == (len(small_graph), 256)
    assert feats.ids == small_graph.node_ids()
    r = feats.index["report:r1"]
    assert not feats.matrix[r, TEXT_SLICE].any()
    assert feats.matrix[r, TOPO_SLICE].any()


@settings(max_examples=100, deadline=None)
@given(st.tuples(*[st.integers(0, 255)] * 4))
def test_ip_digits_property(octets):
    ip = ".".join(map(str, octets))
    d = encode_ip(ip)
    back = [int("".join(str(int(c)) for c in d[i:i + 3])) for i in (0, 3, 6, 9)]
    assert tuple(back) == octets
