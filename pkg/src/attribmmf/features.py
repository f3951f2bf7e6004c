"""Multimodal node features: attribute digits (64) | text (64) | topology (128)."""
from __future__ import annotations

import bisect
import hashlib
import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, IndexMismatch, MissingEmbedding, VocabOverflow
from .graph import ALL_KINDS, HetGraph, NodeType

logger = logging.getLogger(__name__)

ATTR_DIM = 64
TEXT_DIM = 64
TOPO_DIM = 128
FEATURE_DIM = ATTR_DIM + TEXT_DIM + TOPO_DIM

ATTR_SLICE = slice(0, ATTR_DIM)
TEXT_SLICE = slice(ATTR_DIM, ATTR_DIM + TEXT_DIM)
TOPO_SLICE = slice(ATTR_DIM + TEXT_DIM, FEATURE_DIM)


@dataclass(frozen=True)
class Slot:
    name: str
    dims: int
    kinds: Tuple[NodeType, ...]
    attr: Optional[str]  # node attribute feeding an ordinal slot; None for id/node-type slots
    ordinal: bool


_ALL = tuple(ALL_KINDS)
_MW = (NodeType.MALWARE,)

# Attribute-type slots, in concatenation order.
SLOTS: Tuple[Slot, ...] = (
    Slot("node_type", 2, _ALL, None, True),
    Slot("domain_malicious_category", 2, (NodeType.DOMAIN,), "malicious_category", True),
    Slot("ip_geolocation", 2, (NodeType.IP,), "geolocation", True),
    Slot("ip_address", 12, (NodeType.IP,), "ip_address", False),
    Slot("attck_id", 11, (NodeType.TACTIC, NodeType.TECHNIQUE), "attck_id", False),
    Slot("cve_id", 9, (NodeType.VULNERABILITY,), "cve_id", False),
    Slot("hash", 4, _MW, "hash", True),
    Slot("avclass_BEH", 2, _MW, "avclass_BEH", True),
    Slot("avclass_CLASS", 2, _MW, "avclass_CLASS", True),
    Slot("avclass_FAM", 2, _MW, "avclass_FAM", True),
    Slot("avclass_FILE", 2, _MW, "avclass_FILE", True),
    Slot("imphash", 4, _MW, "imphash", True),
    Slot("pe_resource", 4, _MW, "pe_resource", True),
    Slot("pe_resource_lang", 2, _MW, "pe_resource_lang", True),
    Slot("tags", 4, _MW, "tags", True),
)


def slot_offsets() -> Dict[str, Tuple[int, int]]:
    out = {}
    pos = 0
    for s in SLOTS:
        out[s.name] = (pos, pos + s.dims)
        pos += s.dims
    return out


SLOT_OFFSETS = slot_offsets()
# Malware attribute columns ("MAT") versus the other attribute columns ("OAT").
MAT_SLICE = slice(SLOT_OFFSETS["hash"][0], ATTR_DIM)
OAT_SLICE = slice(0, SLOT_OFFSETS["hash"][0])


# ---------------------------------------------------------------------------
# ID-like encoders

def _digits(s: str) -> np.ndarray:
    return np.array([int(c) for c in s], dtype=np.float64)


_ATTACK_RE = re.compile(r"^(?:TA(\d{4})|T(\d{4})(?:\.(\d{3}))?)$")


def encode_attack_id(attck_id: Optional[str], associated_tactic: Optional[str] = None) -> np.ndarray:
    """11 digits: tactic number (4) | technique number (4) | sub-technique (3)."""
    if not attck_id:
        return np.zeros(11)
    m = _ATTACK_RE.match(attck_id.strip().upper())
    if not m:
        raise FormatError(f"malformed ATT&CK id {attck_id!r}")
    if m.group(1):
        return _digits(m.group(1) + "0000000")
    tactic = "0000"
    if associated_tactic:
        t = re.match(r"^TA(\d{4})$", associated_tactic.strip().upper())
        if not t:
            raise FormatError(f"malformed associated tactic {associated_tactic!r}")
        tactic = t.group(1)
    return _digits(tactic + m.group(2) + (m.group(3) or "000"))


def encode_ip(ip: Optional[str]) -> np.ndarray:
    """12 digits: four octets, each zero-padded at the front to 3 digits."""
    if not ip:
        return np.zeros(12)
    parts = ip.strip().split(".")
    if len(parts) != 4 or not all(p.isdigit() and len(p) <= 3 and int(p) <= 255 for p in parts):
        raise FormatError(f"malformed IPv4 address {ip!r}")
    if ip.strip() == "0.0.0.0":
        logger.warning("0.0.0.0 encodes identically to a missing address")
    return _digits("".join(p.zfill(3) for p in parts))


_CVE_RE = re.compile(r"^CVE-(\d{4})-(\d{1,5})$", re.IGNORECASE)


def encode_cve(cve: Optional[str]) -> np.ndarray:
    """9 digits: year (4) | sequence number zero-padded to 5."""
    if not cve:
        return np.zeros(9)
    m = _CVE_RE.match(cve.strip())
    if not m:
        raise FormatError(f"malformed CVE id {cve!r}")
    return _digits(m.group(1) + m.group(2).zfill(5))


# ---------------------------------------------------------------------------
# ordinal encoders

@dataclass(frozen=True)
class OrdinalVocab:
    attr: str
    values: Tuple[str, ...]
    dims: int

    def __post_init__(self):
        if len(self.values) > 10 ** self.dims - 1:
            raise VocabOverflow(
                f"{self.attr}: {len(self.values)} distinct values exceed {self.dims}-digit capacity")

    def index(self, value: Optional[str]) -> int:
        """1-based rank in the sorted vocabulary; 0 means missing/unknown."""
        if value is None:
            return 0
        lo = bisect.bisect_left(self.values, value)
        if lo < len(self.values) and self.values[lo] == value:
            return lo + 1
        return 0


def make_vocab(attr: str, values, dims: int) -> OrdinalVocab:
    return OrdinalVocab(attr, tuple(sorted(set(v for v in values if v))), dims)


def build_vocab(graph: HetGraph, attr: str, dims: int, kinds: Sequence[NodeType] = ()) -> OrdinalVocab:
    kinds = set(kinds)
    vals = [n.attrs.get(attr) for n in graph.nodes.values() if not kinds or n.kind in kinds]
    return make_vocab(attr, vals, dims)


def node_type_vocab() -> OrdinalVocab:
    return OrdinalVocab("node_type", tuple(k.value for k in ALL_KINDS), 2)


def ordinal_encode(vocab: OrdinalVocab, value: Optional[str]) -> np.ndarray:
    idx = vocab.index(value)
    if idx == 0:
        return np.zeros(vocab.dims)
    return _digits(str(idx).zfill(vocab.dims))


def build_vocabs(graph: HetGraph) -> Dict[str, OrdinalVocab]:
    vocabs = {"node_type": node_type_vocab()}
    for s in SLOTS:
        if s.ordinal and s.attr is not None:
            vocabs[s.name] = build_vocab(graph, s.attr, s.dims, s.kinds)
    return vocabs


def encode_node_attributes(graph: HetGraph, nid: str, vocabs: Dict[str, OrdinalVocab]) -> np.ndarray:
    node = graph.nodes[nid]
    parts = []
    for s in SLOTS:
        if node.kind not in s.kinds:
            parts.append(np.zeros(s.dims))
        elif s.name == "node_type":
            parts.append(ordinal_encode(vocabs["node_type"], node.kind.value))
        elif s.name == "ip_address":
            parts.append(encode_ip(node.attrs.get("ip_address")))
        elif s.name == "attck_id":
            parts.append(encode_attack_id(node.attrs.get("attck_id"), node.attrs.get("associated_tactic")))
        elif s.name == "cve_id":
            parts.append(encode_cve(node.attrs.get("cve_id")))
        else:
            parts.append(ordinal_encode(vocabs[s.name], node.attrs.get(s.attr)))
    vec = np.concatenate(parts)
    assert vec.shape == (ATTR_DIM,)
    return vec


def encode_attribute_features(graph: HetGraph, vocabs: Optional[Dict[str, OrdinalVocab]] = None,
                              ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """One 64-digit row per node (``graph.node_ids()`` order unless ``ids`` given)."""
    vocabs = vocabs or build_vocabs(graph)
    ids = list(ids) if ids is not None else graph.node_ids()
    out = np.zeros((len(ids), ATTR_DIM))
    for i, nid in enumerate(ids):
        out[i] = encode_node_attributes(graph, nid, vocabs)
    return out


# ---------------------------------------------------------------------------
# text features

TEXT_ATTRS: Dict[NodeType, Tuple[str, ...]] = {
    NodeType.MALWARE: ("avclass_BEH", "avclass_CLASS", "avclass_FAM", "avclass_FILE", "pe_resource_lang", "tags"),
    NodeType.TACTIC: ("name", "description"),
    NodeType.TECHNIQUE: ("name", "description"),
    NodeType.VULNERABILITY: ("description",),
    NodeType.DOMAIN: ("name", "malicious_category"),
    NodeType.IP: ("ip_address",),
    NodeType.REGISTRY: ("registry",),
    NodeType.FILENAME: ("filename",),
    NodeType.FILEPATH: ("filepath",),
    NodeType.EMAIL: ("email",),
    NodeType.URL: ("url",),
}


def node_text(graph: HetGraph, nid: str) -> str:
    node = graph.nodes[nid]
    keys = TEXT_ATTRS.get(node.kind, ())
    return "; ".join(node.attrs[k] for k in keys if node.attrs.get(k))


@dataclass
class TextEmbedderSpec:
    backend: str = "fallback-hash"  # or "precomputed-file"
    native_dim: int = 256
    projection_seed: int = 0
    path: Optional[str] = None
    strict: bool = True

    def __post_init__(self):
        if self.backend not in ("fallback-hash", "precomputed-file"):
            raise ValueError(f"unknown text backend {self.backend!r}")
        if self.native_dim <= 0:
            raise ValueError("native_dim must be positive")


def hash_embed(text: str, native_dim: int) -> np.ndarray:
    """Signed character-trigram feature hashing, L2-normalised."""
    vec = np.zeros(native_dim)
    if not text:
        return vec
    padded = f"#{text.lower()}#"
    for i in range(len(padded) - 2):
        digest = hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        vec[h % native_dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def projection_matrix(native_dim: int, seed: int, out_dim: int = TEXT_DIM) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((native_dim, out_dim)) / np.sqrt(out_dim)


def load_text_embeddings(path, native_dim: int) -> Dict[str, np.ndarray]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            vec = np.asarray(obj["vec"], dtype=np.float64)
            nid = obj["id"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad embedding line: {exc}", path, lineno) from None
        if vec.shape != (native_dim,):
            raise FormatError(f"embedding for {nid!r} has shape {vec.shape}, expected ({native_dim},)", path, lineno)
        out[nid] = vec
    return out


def embed_text(graph: HetGraph, spec: TextEmbedderSpec, ids: Optional[Sequence[str]] = None) -> np.ndarray:
    ids = list(ids) if ids is not None else graph.node_ids()
    native = np.zeros((len(ids), spec.native_dim))
    table = None
    if spec.backend == "precomputed-file":
        if not spec.path:
            raise MissingEmbedding("precomputed text backend needs an embeddings path")
        table = load_text_embeddings(spec.path, spec.native_dim)
    for i, nid in enumerate(ids):
        text = node_text(graph, nid)
        if not text:
            continue
        if table is None:
            native[i] = hash_embed(text, spec.native_dim)
        elif nid in table:
            native[i] = table[nid]
        elif spec.strict:
            raise MissingEmbedding(f"no precomputed embedding for {nid!r}")
    return native @ projection_matrix(spec.native_dim, spec.projection_seed)


# ---------------------------------------------------------------------------
# fusion and storage

@dataclass
class NodeFeatures:
    ids: List[str]
    matrix: np.ndarray
    index: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.ids):
            raise IndexMismatch(f"{self.matrix.shape[0]} rows for {len(self.ids)} ids")
        self.index = {nid: i for i, nid in enumerate(self.ids)}

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        return self.matrix[[self.index[i] for i in ids]]


def fuse_features(attr: np.ndarray, text: np.ndarray, topo: np.ndarray, standardize: bool = False) -> np.ndarray:
    if not (attr.shape[0] == text.shape[0] == topo.shape[0]):
        raise IndexMismatch(f"row counts differ: {attr.shape[0]}, {text.shape[0]}, {topo.shape[0]}")
    if attr.shape[1] != ATTR_DIM or text.shape[1] != TEXT_DIM or topo.shape[1] != TOPO_DIM:
        raise IndexMismatch(f"bad modality widths {attr.shape[1]}/{text.shape[1]}/{topo.shape[1]}")
    x = np.concatenate([attr, text, topo], axis=1)
    if standardize and x.shape[0] > 0:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        varying = sd > 0
        x[:, varying] = (x[:, varying] - mu[varying]) / sd[varying]
    return x


_FEAT_MAGIC = b"AMFF"
_FEAT_VERSION = 1


def index_path_for(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".index.json")


def save_features(feats: NodeFeatures, path) -> None:
    mat = np.ascontiguousarray(feats.matrix, dtype="<f4")
    rows, cols = mat.shape
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<HII", _FEAT_VERSION, rows, cols))
        fh.write(mat.tobytes())
    index_path_for(path).write_text(json.dumps(feats.index, sort_keys=True, indent=0) + "\n", "utf-8")


def load_features(path) -> NodeFeatures:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != _FEAT_MAGIC:
        raise FormatError("not a features file (bad magic)", path)
    version, rows, cols = struct.unpack("<HII", raw[4:14])
    if version != _FEAT_VERSION:
        raise FormatError(f"unsupported features version {version}", path)
    if len(raw) != 14 + rows * cols * 4:
        raise FormatError(f"payload is {len(raw) - 14} bytes, expected {rows * cols * 4}", path)
    mat = np.frombuffer(raw[14:], dtype="<f4").reshape(rows, cols).astype(np.float32)
    ipath = index_path_for(path)
    try:
        index = json.loads(ipath.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read index sidecar: {exc}", ipath) from None
    ids = [None] * rows
    for nid, r in index.items():
        if not 0 <= r < rows or ids[r] is not None:
            raise FormatError(f"bad row {r} for {nid!r}", ipath)
        ids[r] = nid
    if any(i is None for i in ids):
        raise FormatError("index sidecar does not cover every row", ipath)
    return NodeFeatures(ids, mat)
