"""Report-to-report metapath neighbours and report IOC neighbourhoods.

Neighbour sets are boolean products of typed biadjacency matrices. Paths whose
repeated intermediate kinds sit at mirrored positions (every built-in) are
evaluated from the centre outwards, zeroing the diagonal wherever the two
mirrored intermediates share a kind so they must be distinct nodes. Any other
path shape falls back to explicit enumeration.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, MissingNode, NotAReport
from .graph import HetGraph, NodeType, RelType

logger = logging.getLogger(__name__)

R, M, I, D = NodeType.REPORT, NodeType.MALWARE, NodeType.IP, NodeType.DOMAIN
INC = RelType.INCLUSION
IMA = RelType.IP_MALWARE_ASSOC
DMA = RelType.DOMAIN_MALWARE_ASSOC
RES = RelType.RESOLUTION
HOM = RelType.MALWARE_HOMOLOGY


@dataclass(frozen=True)
class MetapathDef:
    id: str
    kinds: Tuple[NodeType, ...]
    rels: Tuple[RelType, ...]

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(NodeType(k) for k in self.kinds))
        object.__setattr__(self, "rels", tuple(RelType(r) for r in self.rels))
        if len(self.rels) != len(self.kinds) - 1:
            raise ValueError(f"{self.id}: need {len(self.kinds) - 1} relations, got {len(self.rels)}")
        if self.kinds[0] is not R or self.kinds[-1] is not R:
            raise ValueError(f"{self.id}: metapaths must start and end at reports")
        if any(k is R for k in self.kinds[1:-1]):
            raise ValueError(f"{self.id}: intermediate nodes must be IOCs")
        if not 3 <= len(self.kinds) <= 6:
            raise ValueError(f"{self.id}: supported lengths are 3 to 6 node kinds")

    @property
    def order(self) -> int:
        return len(self.kinds) - 2

    @property
    def palindromic(self) -> bool:
        return self.kinds == self.kinds[::-1] and self.rels == self.rels[::-1]


def builtin_metapaths() -> List[MetapathDef]:
    first = [NodeType.FILENAME, M, NodeType.URL, NodeType.FILEPATH, D, NodeType.REGISTRY, I,
             NodeType.VULNERABILITY, NodeType.TACTIC, NodeType.EMAIL]
    defs = [MetapathDef(f"MP{i + 1}", (R, k, R), (INC, INC)) for i, k in enumerate(first)]
    defs += [
        MetapathDef("MP11", (R, I, M, R), (INC, IMA, INC)),
        MetapathDef("MP12", (R, D, M, R), (INC, DMA, INC)),
        MetapathDef("MP13", (R, M, M, R), (INC, HOM, INC)),
        MetapathDef("MP14", (R, I, M, I, R), (INC, IMA, IMA, INC)),
        MetapathDef("MP15", (R, I, D, I, R), (INC, RES, RES, INC)),
        MetapathDef("MP16", (R, D, I, D, R), (INC, RES, RES, INC)),
        MetapathDef("MP17", (R, M, D, M, R), (INC, DMA, DMA, INC)),
        MetapathDef("MP18", (R, M, I, M, R), (INC, IMA, IMA, INC)),
        MetapathDef("MP19", (R, I, M, M, I, R), (INC, IMA, HOM, IMA, INC)),
        MetapathDef("MP20", (R, D, M, M, D, R), (INC, DMA, HOM, DMA, INC)),
    ]
    return defs


def select_metapaths(defs: Sequence[MetapathDef], orders: Optional[Sequence[int]] = None,
                     ids: Optional[Sequence[str]] = None) -> List[MetapathDef]:
    out = list(defs)
    if orders is not None:
        out = [d for d in out if d.order in set(orders)]
    if ids is not None:
        wanted = set(ids)
        unknown = wanted - {d.id for d in defs}
        if unknown:
            raise ValueError(f"unknown metapath ids {sorted(unknown)}")
        out = [d for d in out if d.id in wanted]
    return out


def load_metapaths(path) -> List[MetapathDef]:
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
        return [MetapathDef(m["id"], tuple(m["kinds"]), tuple(m["rels"])) for m in raw]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad metapath definitions: {exc}", path) from None


# ---------------------------------------------------------------------------
# typed adjacency

class TypedAdjacency:
    """Per-kind node orderings and cached biadjacency matrices of a frozen graph."""

    def __init__(self, graph: HetGraph):
        self.graph = graph
        self.ids: Dict[NodeType, List[str]] = {k: graph.node_ids(k) for k in NodeType}
        self.pos: Dict[NodeType, Dict[str, int]] = {k: {n: i for i, n in enumerate(v)} for k, v in self.ids.items()}
        self._cache: Dict[Tuple[NodeType, NodeType, RelType], sp.csr_matrix] = {}

    def biadj(self, a: NodeType, b: NodeType, rel: RelType) -> sp.csr_matrix:
        key = (a, b, rel)
        if key in self._cache:
            return self._cache[key]
        if (b, a, rel) in self._cache:
            mat = self._cache[(b, a, rel)].T.tocsr()
            self._cache[key] = mat
            return mat
        rows, cols = [], []
        pa, pb = self.pos[a], self.pos[b]
        for nid in self.ids[a]:
            for other in self.graph.neighbors(nid, rel=rel, kind=b):
                rows.append(pa[nid])
                cols.append(pb[other])
        mat = sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)),
                            shape=(len(pa), len(pb)))
        self._cache[key] = mat
        return mat


def _binarize(m: sp.spmatrix) -> sp.csr_matrix:
    m = m.tocsr()
    m.eliminate_zeros()
    m.data = np.ones_like(m.data)
    return m


def _zero_diag(m: sp.csr_matrix) -> sp.csr_matrix:
    m = m.tocsr()
    return _binarize(m - sp.diags(m.diagonal(), format="csr"))


def _product_exact(d: MetapathDef) -> bool:
    """True when diagonal correction alone enforces distinct intermediates."""
    inter = d.kinds[1:-1]
    n = len(inter)
    for i in range(n):
        for j in range(i + 2, n):
            if inter[i] is inter[j] and (i + j != n - 1 or not d.palindromic):
                return False
    return True


def _product_matrix(adj: TypedAdjacency, d: MetapathDef) -> sp.csr_matrix:
    kinds, rels = d.kinds, d.rels
    inter = kinds[1:-1]
    n = len(inter)
    if d.palindromic:
        # centre level, then wrap symmetric layers around it
        if n % 2 == 1:
            c = n // 2
            t = sp.identity(len(adj.ids[inter[c]]), dtype=np.int64, format="csr")
            lo, hi = c, c
        else:
            c = n // 2 - 1
            t = adj.biadj(inter[c], inter[c + 1], rels[c + 1])
            lo, hi = c, c + 1
        while lo > 0:
            left = adj.biadj(inter[lo - 1], inter[lo], rels[lo])
            right = adj.biadj(inter[hi], inter[hi + 1], rels[hi + 1])
            t = _binarize(left @ t @ right)
            lo, hi = lo - 1, hi + 1
            if inter[lo] is inter[hi]:
                t = _zero_diag(t)
    else:
        t = sp.identity(len(adj.ids[inter[0]]), dtype=np.int64, format="csr")
        for k in range(n - 1):
            t = _binarize(t @ adj.biadj(inter[k], inter[k + 1], rels[k + 1]))
    start = adj.biadj(R, inter[0], rels[0])
    end = adj.biadj(inter[-1], R, rels[-1])
    return _binarize(start @ t @ end)


def _enumerate_matrix(adj: TypedAdjacency, d: MetapathDef) -> sp.csr_matrix:
    g = adj.graph
    reports = adj.ids[R]
    pos = adj.pos[R]
    rows, cols = [], []

    def walk(node, depth, used, origin):
        if depth == len(d.kinds) - 1:
            rows.append(pos[origin])
            cols.append(pos[node])
            return
        for nxt in sorted(g.neighbors(node, rel=d.rels[depth], kind=d.kinds[depth + 1])):
            if depth + 1 < len(d.kinds) - 1 and nxt in used:
                continue
            walk(nxt, depth + 1, used | {nxt}, origin)

    for r in reports:
        walk(r, 0, frozenset(), r)
    n = len(reports)
    return _binarize(sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n)))


def metapath_matrix(graph: HetGraph, d: MetapathDef, adj: Optional[TypedAdjacency] = None) -> sp.csr_matrix:
    """Symmetric boolean report x report matrix with a unit diagonal."""
    adj = adj or TypedAdjacency(graph)
    n = len(adj.ids[R])
    if n == 0:
        return sp.csr_matrix((0, 0), dtype=np.int64)
    m = _product_matrix(adj, d) if _product_exact(d) else _enumerate_matrix(adj, d)
    m = m + m.T + sp.identity(n, dtype=np.int64, format="csr")
    return _binarize(m)


def _matrix_to_lists(m: sp.csr_matrix, reports: Sequence[str]) -> Dict[str, List[str]]:
    m = m.tocsr()
    m.sort_indices()
    return {r: [reports[j] for j in m.indices[m.indptr[i]:m.indptr[i + 1]]] for i, r in enumerate(reports)}


def metapath_neighbors(graph: HetGraph, d: MetapathDef, adj: Optional[TypedAdjacency] = None) -> Dict[str, List[str]]:
    adj = adj or TypedAdjacency(graph)
    return _matrix_to_lists(metapath_matrix(graph, d, adj), adj.ids[R])


def ioc_neighborhood(graph: HetGraph, report: str) -> set:
    """IOC nodes within two hops of ``report``, never routing through another report."""
    if report not in graph:
        raise MissingNode(report)
    if graph.kind(report) is not R:
        raise NotAReport(report)
    first = {n for n in graph.neighbors(report) if graph.kind(n) is not R}
    second = set()
    for n in first:
        second |= {m for m in graph.neighbors(n) if graph.kind(m) is not R}
    return first | second


def ioc_neighborhood_pairs(graph: HetGraph, reports: Sequence[str], node_pos: Dict[str, int]):
    """All (report-row, ioc-node-row) pairs of N_v, sorted by report row then node row."""
    rows, cols = [], []
    for i, r in enumerate(reports):
        for n in sorted(ioc_neighborhood(graph, r), key=node_pos.__getitem__):
            rows.append(i)
            cols.append(node_pos[n])
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


@dataclass
class MetapathIndex:
    reports: List[str]
    matrices: Dict[str, sp.csr_matrix] = field(default_factory=dict)
    ioc: Dict[str, List[str]] = field(default_factory=dict)
    stats: List[dict] = field(default_factory=list)

    def neighbors(self, mp_id: str) -> Dict[str, List[str]]:
        return _matrix_to_lists(self.matrices[mp_id], self.reports)

    def pairs(self, mp_id: str) -> Tuple[np.ndarray, np.ndarray]:
        """(row, col) report positions, grouped by row, columns ascending."""
        m = self.matrices[mp_id].tocoo()
        order = np.lexsort((m.col, m.row))
        return m.row[order].astype(np.int64), m.col[order].astype(np.int64)

    def to_json(self) -> dict:
        return {mp: self.neighbors(mp) for mp in self.matrices}


def build_index(graph: HetGraph, defs: Sequence[MetapathDef]) -> MetapathIndex:
    adj = TypedAdjacency(graph)
    reports = adj.ids[R]
    index = MetapathIndex(list(reports))
    for d in defs:
        m = metapath_matrix(graph, d, adj)
        index.matrices[d.id] = m
        counts = np.diff(m.tocsr().indptr) if len(reports) else np.zeros(0)
        index.stats.append({
            "metapath": d.id,
            "order": d.order,
            "pairs": int(m.nnz),
            "mean_neighbors": float(counts.mean()) if counts.size else 0.0,
            "max_neighbors": int(counts.max()) if counts.size else 0,
            "self_only_reports": int((counts == 1).sum()),
        })
        logger.debug("metapath %s: %d pairs", d.id, m.nnz)
    for r in reports:
        index.ioc[r] = sorted(ioc_neighborhood(graph, r))
    return index


def save_index(index: MetapathIndex, path) -> None:
    Path(path).write_text(json.dumps(index.to_json(), sort_keys=True) + "\n", "utf-8")
