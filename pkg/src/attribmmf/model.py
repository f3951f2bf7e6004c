"""Triple-attention report classifier.

The network runs three attention levels over the report nodes:

* IOC-type attention completes each report's features from its first- and
  second-order IOC neighbours, weighting neighbours by a learned per-kind score;
* node-level attention aggregates report neighbours along every metapath with a
  shared projection and one attention vector per metapath;
* semantic attention fuses the per-metapath embeddings with learned weights.

A linear classifier on the fused embedding produces group logits.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tensor
from .errors import EmptyTrainSet, IndexMismatch, MissingNode, NotAReport
from .features import FEATURE_DIM, TEXT_SLICE, NodeFeatures
from .graph import IOC_KINDS, HetGraph, NodeType
from .metapath import MetapathIndex

logger = logging.getLogger(__name__)

N_IOC_TYPES = len(IOC_KINDS)
IOC_TYPE_POS = {k: i for i, k in enumerate(IOC_KINDS)}


@dataclass
class ModelConfig:
    heads: int = 8
    head_dim: int = 8
    semantic_dim: int = 128
    dropout: float = 0.6
    slope: float = 0.2
    ioc_type_attention: bool = True
    semantic_attention: bool = True
    trainable_text_projection: bool = False

    @property
    def out_dim(self) -> int:
        return self.heads * self.head_dim


@dataclass
class ModelInputs:
    """Everything the forward pass needs, precomputed from the stage artifacts."""

    reports: List[str]
    x: np.ndarray                    # (R, 256) report features
    type_means: np.ndarray           # (R, 11, 256) mean IOC feature per kind
    type_counts: np.ndarray          # (R, 11) neighbour counts per kind
    ioc_neighbors: List[List[Tuple[str, int]]]   # per report: (node id, kind position)
    metapaths: Dict[str, Tuple[np.ndarray, np.ndarray]]
    labels: np.ndarray               # (R,) class index, -1 when unlabeled
    groups: List[str]

    _segments: Dict[str, Tuple[ag.Segments, ag.Segments]] = field(default_factory=dict, repr=False)

    @property
    def num_reports(self) -> int:
        return len(self.reports)

    def segments(self, mp: str) -> Tuple[ag.Segments, ag.Segments]:
        """Cached row/column groupings of one metapath's pair list."""
        if mp not in self._segments:
            rows, cols = self.metapaths[mp]
            self._segments[mp] = (ag.Segments(rows, self.num_reports), ag.Segments(cols, self.num_reports))
        return self._segments[mp]

    def astype(self, dtype) -> "ModelInputs":
        return ModelInputs(self.reports, self.x.astype(dtype), self.type_means.astype(dtype),
                           self.type_counts, self.ioc_neighbors, self.metapaths, self.labels, self.groups)

    def permuted(self, perm: np.ndarray) -> "ModelInputs":
        """Reorder reports so that new row ``i`` is old row ``perm[i]``."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        mps = {}
        for mp, (rows, cols) in self.metapaths.items():
            r, c = inv[rows], inv[cols]
            order = np.lexsort((c, r))
            mps[mp] = (r[order], c[order])
        return ModelInputs([self.reports[i] for i in perm], self.x[perm], self.type_means[perm],
                           self.type_counts[perm], [self.ioc_neighbors[i] for i in perm], mps,
                           self.labels[perm], self.groups)


def build_inputs(graph: HetGraph, feats: NodeFeatures, index: MetapathIndex,
                 feature_mask: Optional[np.ndarray] = None, groups: Optional[Sequence[str]] = None,
                 dtype=np.float32) -> ModelInputs:
    """Assemble model inputs; ``feature_mask`` (256 bools) zeroes excluded feature columns."""
    reports = list(index.reports)
    missing = [n for n in reports if n not in feats.index]
    if missing:
        raise IndexMismatch(f"{len(missing)} reports have no feature row, e.g. {missing[0]}")
    if feats.matrix.shape[1] != FEATURE_DIM:
        raise IndexMismatch(f"features are {feats.matrix.shape[1]}-dim, expected {FEATURE_DIM}")
    mat = np.asarray(feats.matrix, dtype=np.float64)
    if feature_mask is not None:
        mat = mat * np.asarray(feature_mask, dtype=np.float64)[None, :]
    n_rep = len(reports)
    x = mat[[feats.index[r] for r in reports]]
    counts = np.zeros((n_rep, N_IOC_TYPES), dtype=np.int64)
    neigh: List[List[Tuple[str, int]]] = []
    rows, cols, types = [], [], []
    for i, r in enumerate(reports):
        lst = []
        for nid in index.ioc.get(r, []):
            if nid not in feats.index:
                raise IndexMismatch(f"IOC node {nid} has no feature row")
            t = IOC_TYPE_POS[graph.kind(nid)]
            lst.append((nid, t))
            counts[i, t] += 1
            rows.append(i)
            cols.append(feats.index[nid])
            types.append(t)
        neigh.append(lst)
    means = np.zeros((n_rep, N_IOC_TYPES, FEATURE_DIM))
    if rows:
        rows_a, cols_a, types_a = map(np.asarray, (rows, cols, types))
        for t in range(N_IOC_TYPES):
            sel = types_a == t
            if not sel.any():
                continue
            w = 1.0 / counts[rows_a[sel], t]
            s = sp.csr_matrix((w, (rows_a[sel], cols_a[sel])), shape=(n_rep, mat.shape[0]))
            means[:, t, :] = s @ mat
    labelled = {r: graph.labels.get(r) for r in reports}
    if groups is None:
        groups = sorted({g for g in labelled.values() if g is not None})
    gpos = {g: i for i, g in enumerate(groups)}
    labels = np.array([gpos.get(labelled[r], -1) if labelled[r] is not None else -1 for r in reports],
                      dtype=np.int64)
    return ModelInputs(reports, x.astype(dtype), means.astype(dtype), counts, neigh,
                       {mp: index.pairs(mp) for mp in index.matrices}, labels, list(groups))


# ---------------------------------------------------------------------------
# parameters

def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def param_shapes(cfg: ModelConfig, metapaths: Sequence[str], num_groups: int) -> Dict[str, Tuple[int, ...]]:
    k, dh, out, s = cfg.heads, cfg.head_dim, cfg.out_dim, cfg.semantic_dim
    shapes: Dict[str, Tuple[int, ...]] = {}
    if cfg.trainable_text_projection:
        n_text = TEXT_SLICE.stop - TEXT_SLICE.start
        shapes["text.P"] = (n_text, n_text)
    if cfg.ioc_type_attention:
        shapes["ioc_type.W"] = (k, N_IOC_TYPES)
    shapes["node.M"] = (FEATURE_DIM, out)
    for mp in metapaths:
        shapes[f"node.{mp}.a_left"] = (k, dh)
        shapes[f"node.{mp}.a_right"] = (k, dh)
    if cfg.semantic_attention:
        shapes["semantic.W"] = (out, s)
        shapes["semantic.b"] = (s,)
        shapes["semantic.q"] = (s,)
    shapes["classifier.C"] = (out, num_groups)
    shapes["classifier.b"] = (num_groups,)
    return shapes


def init_params(cfg: ModelConfig, metapaths: Sequence[str], num_groups: int, seed: int = 0,
                dtype=np.float32) -> Dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, identity text projection."""
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg, metapaths, num_groups).items():
        if name == "text.P":
            arr = np.eye(shape[0])
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        elif name == "ioc_type.W":
            arr = _glorot(rng, shape, N_IOC_TYPES, 1)
        elif name.endswith((".a_left", ".a_right")):
            arr = _glorot(rng, shape, 2 * cfg.head_dim, 1)
        elif name == "semantic.q":
            arr = _glorot(rng, shape, cfg.semantic_dim, 1)
        else:
            arr = _glorot(rng, shape, shape[0], shape[1])
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------------------
# forward

@dataclass
class AttentionTrace:
    type_mass: np.ndarray                          # (R, 11) head-averaged mass per IOC kind
    alpha: Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    beta: Dict[str, float] = field(default_factory=dict)

    def ioc_weights(self, inputs: ModelInputs, row: int) -> List[Tuple[str, float]]:
        """Per-neighbour a_vu for one report (mass of its kind split evenly)."""
        counts = inputs.type_counts[row]
        return [(nid, float(self.type_mass[row, t] / counts[t])) for nid, t in inputs.ioc_neighbors[row]]


def _text_project(t: Tensor, p: Tensor) -> Tensor:
    """Replace the text block of a constant feature tensor by ``text @ P``."""
    lo, hi = TEXT_SLICE.start, TEXT_SLICE.stop
    mid = t.data[..., lo:hi]
    flat = ag.matmul(Tensor(mid.reshape(-1, hi - lo)), p)
    proj = ag.reshape(flat, mid.shape)
    return ag.concat([Tensor(t.data[..., :lo]), proj, Tensor(t.data[..., hi:])], axis=-1)


class AttributionModel:
    """Holds configuration and parameters; forward builds a fresh tape each call."""

    def __init__(self, cfg: ModelConfig, metapaths: Sequence[str], groups: Sequence[str],
                 seed: int = 0, dtype=np.float32, params: Optional[Dict[str, Tensor]] = None):
        self.cfg = cfg
        self.metapaths = list(metapaths)
        self.groups = list(groups)
        self.dtype = dtype
        self.params = params if params is not None else init_params(cfg, self.metapaths, len(self.groups), seed, dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def ioc_type_attention(self, x: Tensor, type_means: Tensor, counts: np.ndarray) -> Tuple[Tensor, np.ndarray]:
        """Completed features ``z = x + sum_u a_vu x_u`` and the (R, 11) type masses.

        Scores depend only on a neighbour's kind, so the softmax over N_v equals a
        softmax over present kinds of ``score + ln(count)``, and the weighted sum
        equals the mass-weighted per-kind feature means.
        """
        cfg = self.cfg
        w = self.params["ioc_type.W"]
        e = ag.leaky_relu(w, cfg.slope)
        g = ag.leaky_relu(e, cfg.slope)
        mask = counts > 0
        logc = np.log(np.where(mask, counts, 1)).astype(self.dtype)
        logits = ag.add(ag.reshape(g, (1,) + g.shape), Tensor(logc[:, None, :]))
        mass = ag.masked_softmax(logits, mask[:, None, :], axis=-1)
        mbar = ag.mean(mass, axis=1)
        zc = ag.sum_(ag.mul(ag.reshape(mbar, mbar.shape + (1,)), type_means), axis=1)
        return ag.add(x, zc), mbar.data

    def node_level(self, h3: Tensor, mp: str, rows: ag.Segments, cols: ag.Segments,
                   rng, training: bool) -> Tuple[Tensor, np.ndarray]:
        cfg = self.cfg
        n = h3.shape[0]
        al = self.params[f"node.{mp}.a_left"]
        ar = self.params[f"node.{mp}.a_right"]
        sl = ag.sum_(ag.mul(h3, al), axis=2)
        sr = ag.sum_(ag.mul(h3, ar), axis=2)
        e = ag.leaky_relu(ag.add(ag.take_rows(sl, rows.idx, rows), ag.take_rows(sr, cols.idx, cols)), cfg.slope)
        alpha = ag.segment_softmax(e, rows)
        alpha_d = ag.dropout(alpha, cfg.dropout, rng, training)
        out = ag.elu(ag.attend(alpha_d, h3, rows, cols))
        return ag.reshape(out, (n, cfg.out_dim)), alpha.data

    def semantic(self, zs: List[Tensor]) -> Tuple[Tensor, np.ndarray]:
        n_mp = len(zs)
        stacked = ag.stack(zs, axis=0)
        if self.cfg.semantic_attention:
            ws, bs, q = self.params["semantic.W"], self.params["semantic.b"], self.params["semantic.q"]
            scores = []
            for z in zs:
                t = ag.tanh(ag.add(ag.matmul(z, ws), bs))
                scores.append(ag.mean(ag.matmul(t, q)))
            beta = ag.softmax(ag.stack(scores, axis=0), axis=0)
        else:
            beta = Tensor(np.full(n_mp, 1.0 / n_mp, dtype=self.dtype))
        fused = ag.sum_(ag.mul(stacked, ag.reshape(beta, (n_mp, 1, 1))), axis=0)
        return fused, beta.data

    def forward(self, inputs: ModelInputs, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tuple[Tensor, AttentionTrace]:
        cfg = self.cfg
        if not self.metapaths:
            raise IndexMismatch("model has no metapaths")
        x = Tensor(inputs.x)
        means = Tensor(inputs.type_means)
        if cfg.trainable_text_projection:
            x = _text_project(x, self.params["text.P"])
            means = _text_project(means, self.params["text.P"])
        if cfg.ioc_type_attention:
            z, mass = self.ioc_type_attention(x, means, inputs.type_counts)
        else:
            z = x
            mass = np.zeros((inputs.num_reports, N_IOC_TYPES))
        trace = AttentionTrace(type_mass=mass)
        zd = ag.dropout(z, cfg.dropout, rng, training)
        h = ag.matmul(zd, self.params["node.M"])
        h3 = ag.reshape(h, (inputs.num_reports, cfg.heads, cfg.head_dim))
        zs = []
        for mp in self.metapaths:
            if mp not in inputs.metapaths:
                raise IndexMismatch(f"metapath {mp} missing from inputs")
            rows, cols = inputs.metapaths[mp]
            rseg, cseg = inputs.segments(mp)
            zp, alpha = self.node_level(h3, mp, rseg, cseg, rng, training)
            zs.append(zp)
            trace.alpha[mp] = (rows, cols, alpha.mean(axis=1))
        fused, beta = self.semantic(zs)
        trace.beta = {mp: float(b) for mp, b in zip(self.metapaths, beta)}
        logits = ag.add(ag.matmul(fused, self.params["classifier.C"]), self.params["classifier.b"])
        return logits, trace

    def predict(self, inputs: ModelInputs) -> np.ndarray:
        logits, _ = self.forward(inputs, training=False)
        return logits.data.argmax(axis=1)


def loss(logits: Tensor, labels: np.ndarray, index: Sequence[int]) -> Tensor:
    """Mean cross-entropy over the training index."""
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise EmptyTrainSet("no training samples")
    y = np.asarray(labels)[index]
    if (y < 0).any():
        raise EmptyTrainSet("training index contains unlabeled reports")
    return ag.cross_entropy(logits, y, index)


def explain(model: AttributionModel, inputs: ModelInputs, report: str,
            graph: Optional[HetGraph] = None) -> dict:
    """Explanation record for one report: IOC-kind masses, metapath neighbours, metapath weights."""
    try:
        row = inputs.reports.index(report)
    except ValueError:
        if graph is not None and report in graph and graph.kind(report) is not NodeType.REPORT:
            raise NotAReport(f"{report!r} is a {graph.kind(report).value} node, not a report") from None
        raise MissingNode(f"unknown report id {report!r}") from None
    _, trace = model.forward(inputs, training=False)
    masses = {}
    for t, kind in enumerate(IOC_KINDS):
        if inputs.type_counts[row, t] > 0:
            masses[kind.value] = float(trace.type_mass[row, t])
    neigh = {}
    for mp, (rows, cols, alpha) in trace.alpha.items():
        sel = rows == row
        neigh[mp] = [{"report": inputs.reports[c], "weight": float(a)} for c, a in zip(cols[sel], alpha[sel])]
    return {
        "report": report,
        "ioc_type_attention": masses,
        "metapath_neighbors": neigh,
        "semantic_weights": dict(trace.beta),
    }
