"""Typed heterogeneous attributed graph: reports, IOCs and their relations."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple

from .errors import FormatError, IdConflict, MissingNode, SchemaViolation

logger = logging.getLogger(__name__)


class NodeType(str, Enum):
    REPORT = "report"
    MALWARE = "malware"
    TACTIC = "tactic"
    TECHNIQUE = "technique"
    VULNERABILITY = "vulnerability"
    IP = "ip"
    DOMAIN = "domain"
    URL = "url"
    FILENAME = "filename"
    FILEPATH = "filepath"
    REGISTRY = "registry"
    EMAIL = "email"

    def __str__(self):
        return self.value


class RelType(str, Enum):
    INCLUSION = "inclusion"
    RESOLUTION = "resolution"
    IP_MALWARE_ASSOC = "ip_malware_assoc"
    DOMAIN_MALWARE_ASSOC = "domain_malware_assoc"
    MALWARE_HOMOLOGY = "malware_homology"

    def __str__(self):
        return self.value


# Lexicographic by kind name; ordinal encoding and the IOC one-hot basis rely on it.
ALL_KINDS: Tuple[NodeType, ...] = tuple(sorted(NodeType, key=lambda k: k.value))
IOC_KINDS: Tuple[NodeType, ...] = tuple(k for k in ALL_KINDS if k is not NodeType.REPORT)

SCHEMA_ATTRS: Dict[NodeType, frozenset] = {
    NodeType.REPORT: frozenset({"group", "text"}),
    NodeType.MALWARE: frozenset({
        "hash", "avclass_BEH", "avclass_CLASS", "avclass_FAM", "avclass_FILE",
        "imphash", "pe_resource", "pe_resource_lang", "tags",
    }),
    NodeType.TACTIC: frozenset({"attck_id", "name", "description"}),
    NodeType.TECHNIQUE: frozenset({"attck_id", "name", "description", "associated_tactic"}),
    NodeType.VULNERABILITY: frozenset({"cve_id", "description"}),
    NodeType.IP: frozenset({"ip_address", "geolocation"}),
    NodeType.DOMAIN: frozenset({"name", "malicious_category"}),
    NodeType.URL: frozenset({"url"}),
    NodeType.FILENAME: frozenset({"filename"}),
    NodeType.FILEPATH: frozenset({"filepath"}),
    NodeType.REGISTRY: frozenset({"registry"}),
    NodeType.EMAIL: frozenset({"email"}),
}

# Allowed unordered kind pairs per relation.
REL_PAIRS: Dict[RelType, frozenset] = {
    RelType.INCLUSION: frozenset(frozenset({NodeType.REPORT, k}) for k in IOC_KINDS),
    RelType.RESOLUTION: frozenset({frozenset({NodeType.IP, NodeType.DOMAIN})}),
    RelType.IP_MALWARE_ASSOC: frozenset({frozenset({NodeType.IP, NodeType.MALWARE})}),
    RelType.DOMAIN_MALWARE_ASSOC: frozenset({frozenset({NodeType.DOMAIN, NodeType.MALWARE})}),
    RelType.MALWARE_HOMOLOGY: frozenset({frozenset({NodeType.MALWARE})}),
}


def rel_allowed(rel: RelType, a: NodeType, b: NodeType) -> bool:
    return frozenset({a, b}) in REL_PAIRS[rel]


def node_id(kind, value: str) -> str:
    """Canonical id for an IOC node, e.g. ``ip:45.135.167.27``."""
    return f"{NodeType(kind).value}:{value}"


@dataclass
class Node:
    id: str
    kind: NodeType
    attrs: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = NodeType(self.kind)


class HetGraph:
    """Undirected typed graph with string-valued node attributes.

    Mutable while being built; :meth:`freeze` makes it read-only so it can be
    shared by the encoders and the metapath engine.
    """

    def __init__(self):
        self.nodes: Dict[str, Node] = {}
        self.labels: Dict[str, str] = {}
        self._adj: Dict[str, Dict[str, RelType]] = {}
        self._frozen = False

    # -- construction -------------------------------------------------
    def _check_mutable(self):
        if self._frozen:
            raise RuntimeError("graph is frozen")

    def freeze(self) -> "HetGraph":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def add_node(self, node: Node) -> str:
        self._check_mutable()
        if not node.id:
            raise IdConflict("node id must be nonempty")
        kind = NodeType(node.kind)
        allowed = SCHEMA_ATTRS[kind]
        bad = sorted(set(node.attrs) - allowed)
        if bad:
            raise SchemaViolation(f"attribute(s) {bad} not allowed on {kind.value} node {node.id!r}")
        existing = self.nodes.get(node.id)
        if existing is None:
            self.nodes[node.id] = Node(node.id, kind, {k: str(v) for k, v in node.attrs.items()})
            self._adj[node.id] = {}
            return node.id
        if existing.kind is not kind:
            raise IdConflict(f"node {node.id!r} already exists as {existing.kind.value}, not {kind.value}")
        for key, value in node.attrs.items():
            old = existing.attrs.get(key)
            if old is not None and old != str(value):
                raise IdConflict(f"node {node.id!r}: conflicting {key}={old!r} vs {value!r}")
        for key, value in node.attrs.items():
            existing.attrs[key] = str(value)
        return node.id

    def add_edge(self, src: str, dst: str, rel) -> Tuple[str, str, RelType]:
        self._check_mutable()
        rel = RelType(rel)
        for end in (src, dst):
            if end not in self.nodes:
                raise MissingNode(f"edge endpoint {end!r} does not exist")
        if src == dst:
            raise SchemaViolation(f"self-loop on {src!r} rejected")
        a, b = self.nodes[src].kind, self.nodes[dst].kind
        if not rel_allowed(rel, a, b):
            raise SchemaViolation(f"{rel.value} not allowed between {a.value} and {b.value}")
        old = self._adj[src].get(dst)
        if old is not None and old is not rel:
            raise SchemaViolation(f"{src!r}-{dst!r} already linked by {old.value}")
        self._adj[src][dst] = rel
        self._adj[dst][src] = rel
        return edge_key(src, dst, rel)

    def set_label(self, report: str, group: str):
        self._check_mutable()
        node = self.nodes.get(report)
        if node is None:
            raise MissingNode(report)
        if node.kind is not NodeType.REPORT:
            raise SchemaViolation(f"label on non-report node {report!r}")
        self.labels[report] = group

    # -- queries ------------------------------------------------------
    def __contains__(self, nid: str) -> bool:
        return nid in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def kind(self, nid: str) -> NodeType:
        try:
            return self.nodes[nid].kind
        except KeyError:
            raise MissingNode(nid) from None

    def neighbors(self, nid: str, rel=None, kind=None) -> Set[str]:
        if nid not in self._adj:
            raise MissingNode(nid)
        rel = RelType(rel) if rel is not None else None
        kind = NodeType(kind) if kind is not None else None
        out = set()
        for other, r in self._adj[nid].items():
            if rel is not None and r is not rel:
                continue
            if kind is not None and self.nodes[other].kind is not kind:
                continue
            out.add(other)
        return out

    def degree(self, nid: str) -> int:
        return len(self._adj[nid])

    def node_ids(self, kind=None) -> List[str]:
        if kind is None:
            return sorted(self.nodes)
        kind = NodeType(kind)
        return sorted(n for n, node in self.nodes.items() if node.kind is kind)

    def reports(self) -> List[str]:
        return self.node_ids(NodeType.REPORT)

    def edges(self) -> Iterator[Tuple[str, str, RelType]]:
        """Each undirected edge once, as ``(smaller_id, larger_id, rel)``, sorted."""
        seen = []
        for a, nbrs in self._adj.items():
            for b, rel in nbrs.items():
                if a < b:
                    seen.append((a, b, rel))
        seen.sort(key=lambda e: (e[0], e[1], e[2].value))
        return iter(seen)

    def num_edges(self) -> int:
        return sum(len(n) for n in self._adj.values()) // 2

    def validate(self) -> None:
        for node in self.nodes.values():
            bad = set(node.attrs) - SCHEMA_ATTRS[node.kind]
            if bad:
                raise SchemaViolation(f"node {node.id!r} has attributes {sorted(bad)} outside its schema")
        for a, b, rel in self.edges():
            if not rel_allowed(rel, self.nodes[a].kind, self.nodes[b].kind):
                raise SchemaViolation(f"edge {a!r}-{b!r} violates {rel.value}")
        for rid in self.labels:
            if rid not in self.nodes or self.nodes[rid].kind is not NodeType.REPORT:
                raise SchemaViolation(f"label attached to non-report {rid!r}")

    def structurally_equal(self, other: "HetGraph") -> bool:
        if set(self.nodes) != set(other.nodes) or self.labels != other.labels:
            return False
        for nid, node in self.nodes.items():
            o = other.nodes[nid]
            if node.kind is not o.kind or node.attrs != o.attrs:
                return False
        return list(self.edges()) == list(other.edges())

    def copy(self) -> "HetGraph":
        g = HetGraph()
        for node in self.nodes.values():
            g.add_node(Node(node.id, node.kind, dict(node.attrs)))
        for a, b, rel in self.edges():
            g.add_edge(a, b, rel)
        for r, grp in self.labels.items():
            g.set_label(r, grp)
        return g


def edge_key(a: str, b: str, rel) -> Tuple[str, str, RelType]:
    return (a, b, RelType(rel)) if a <= b else (b, a, RelType(rel))


_TOP_KEYS = {"nodes", "edges", "labels"}


def graph_to_dict(graph: HetGraph) -> dict:
    return {
        "nodes": [
            {"id": n, "kind": graph.nodes[n].kind.value, "attrs": dict(sorted(graph.nodes[n].attrs.items()))}
            for n in graph.node_ids()
        ],
        "edges": [{"src": a, "dst": b, "rel": r.value} for a, b, r in graph.edges()],
        "labels": dict(sorted(graph.labels.items())),
    }


def save_graph(graph: HetGraph, path) -> None:
    data = graph_to_dict(graph)
    # one node/edge per line keeps diffs readable and error lines meaningful
    lines = ["{", '"nodes": [']
    lines.append(",\n".join(json.dumps(n, ensure_ascii=False, sort_keys=True) for n in data["nodes"]))
    lines.append("],")
    lines.append('"edges": [')
    lines.append(",\n".join(json.dumps(e, ensure_ascii=False, sort_keys=True) for e in data["edges"]))
    lines.append("],")
    lines.append('"labels": ' + json.dumps(data["labels"], ensure_ascii=False, sort_keys=True))
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path, freeze: bool = True) -> HetGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"not UTF-8: {exc}", path) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from None
    return graph_from_dict(data, path=path, text=text, freeze=freeze)


def _line_of(text: Optional[str], needle: str) -> Optional[int]:
    if not text:
        return None
    pos = text.find(needle)
    return None if pos < 0 else text.count("\n", 0, pos) + 1


def graph_from_dict(data, path=None, text=None, freeze: bool = True) -> HetGraph:
    if not isinstance(data, dict):
        raise FormatError("top level must be an object", path)
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise FormatError(f"unknown top-level keys {sorted(unknown)}", path)
    g = HetGraph()
    for i, raw in enumerate(data.get("nodes", [])):
        try:
            if set(raw) - {"id", "kind", "attrs"}:
                raise FormatError(f"nodes[{i}]: unknown keys {sorted(set(raw) - {'id', 'kind', 'attrs'})}")
            attrs = raw.get("attrs", {}) or {}
            if not all(isinstance(v, str) for v in attrs.values()):
                raise FormatError(f"nodes[{i}]: attribute values must be strings")
            g.add_node(Node(raw["id"], NodeType(raw["kind"]), dict(attrs)))
        except (KeyError, ValueError, TypeError, IdConflict, SchemaViolation) as exc:
            line = _line_of(text, json.dumps(raw.get("id", ""))) if isinstance(raw, dict) else None
            raise FormatError(f"nodes[{i}]: {exc}", path, line) from None
    for i, raw in enumerate(data.get("edges", [])):
        try:
            g.add_edge(raw["src"], raw["dst"], RelType(raw["rel"]))
        except (KeyError, ValueError, TypeError, MissingNode, SchemaViolation) as exc:
            line = None
            if isinstance(raw, dict):
                line = _line_of(text, '"src": ' + json.dumps(raw.get("src", "")))
            raise FormatError(f"edges[{i}]: {exc}", path, line) from None
    labels = data.get("labels", {}) or {}
    if not isinstance(labels, dict):
        raise FormatError("labels must be an object", path)
    for rid, grp in labels.items():
        try:
            g.set_label(rid, grp)
        except (MissingNode, SchemaViolation) as exc:
            raise FormatError(f"labels[{rid!r}]: {exc}", path) from None
    if freeze:
        g.freeze()
    return g
