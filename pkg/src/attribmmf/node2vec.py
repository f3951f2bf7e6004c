"""Node2vec topology embeddings: biased 2nd-order walks + skip-gram with negative sampling.

Both hot loops exist twice: a numba kernel (``_walks_nb``, ``_sgns_epoch_nb``)
and a vectorised numpy path. Randomness is counter-based (splitmix64 of
``(seed, walk, step)``), so walks are bit-identical between the two paths and
independent of evaluation order.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _accel
from ._accel import njit, prange
from .graph import HetGraph

logger = logging.getLogger(__name__)


@dataclass
class Node2vecConfig:
    dims: int = 128
    walk_length: int = 80
    walks_per_node: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    p: float = 1.0
    q: float = 1.0
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError("node2vec p and q must be positive")
        if self.dims <= 0 or self.walk_length < 1 or self.walks_per_node < 1 or self.window < 1:
            raise ValueError("node2vec sizes must be positive")


# ---------------------------------------------------------------------------
# counter-based randomness

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix(z):
    z = z + _GOLD
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _key(seed, a, b):
    return _mix(_mix(_mix(seed) ^ a) ^ b)


@njit(cache=True)
def _uniform(seed, a, b):
    return np.float64(_key(seed, a, b) >> _S11) * _INV53


def _key_np(seed, a, b):
    with np.errstate(over="ignore"):
        return _mix(_mix(_mix(np.uint64(seed)) ^ np.asarray(a, dtype=np.uint64)) ^ np.asarray(b, dtype=np.uint64))


def _uniform_np(seed, a, b):
    return (_key_np(seed, a, b) >> _S11).astype(np.float64) * _INV53


# stream tags keep walk / window / negative draws independent
_TAG_WALK = np.uint64(1)
_TAG_WINDOW = np.uint64(2)
_TAG_NEG = np.uint64(3)


def _stream(seed: int, tag) -> np.uint64:
    # compiled _mix hands back a Python int; keep the unsigned type so the
    # kernels are never typed as int64 (which overflows for half the seeds)
    with np.errstate(over="ignore"):
        return np.uint64(_mix(np.uint64(seed) ^ (np.uint64(tag) * _GOLD)))


# ---------------------------------------------------------------------------
# graph as CSR

def graph_csr(graph: HetGraph, ids: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Homogeneous, unweighted CSR view (``indptr``, sorted ``indices``)."""
    ids = list(ids) if ids is not None else graph.node_ids()
    pos = {nid: i for i, nid in enumerate(ids)}
    indptr = np.zeros(len(ids) + 1, dtype=np.int64)
    chunks = []
    for i, nid in enumerate(ids):
        nb = np.array(sorted(pos[n] for n in graph.neighbors(nid)), dtype=np.int64)
        chunks.append(nb)
        indptr[i + 1] = indptr[i] + len(nb)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return indptr, indices


def csr_from_edges(n: int, edges) -> Tuple[np.ndarray, np.ndarray]:
    nbrs = [set() for _ in range(n)]
    for a, b in edges:
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + len(nbrs[i])
    indices = np.array([j for i in range(n) for j in sorted(nbrs[i])], dtype=np.int64)
    return indptr, indices


# ---------------------------------------------------------------------------
# walks

@njit(cache=True)
def _has_edge(indptr, indices, a, b):
    lo = indptr[a]
    hi = indptr[a + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        v = indices[mid]
        if v == b:
            return True
        if v < b:
            lo = mid + 1
        else:
            hi = mid
    return False


@njit(cache=True)
def _walks_nb(indptr, indices, starts, walk_ids, walk_length, p, q, seed):
    n_walks = starts.shape[0]
    out = np.full((n_walks, walk_length), -1, dtype=np.int64)
    w_ret = 1.0 / p
    w_out = 1.0 / q
    for w in range(n_walks):
        cur = starts[w]
        out[w, 0] = cur
        wid = np.uint64(walk_ids[w])
        prev = -1
        for t in range(1, walk_length):
            lo = indptr[cur]
            deg = indptr[cur + 1] - lo
            if deg == 0:
                break
            u = _uniform(seed, wid, np.uint64(t))
            if prev < 0:
                k = int(u * deg)
                if k >= deg:
                    k = deg - 1
                nxt = indices[lo + k]
            else:
                n_ret = 0
                n_com = 0
                for e in range(lo, lo + deg):
                    x = indices[e]
                    if x == prev:
                        n_ret += 1
                    elif _has_edge(indptr, indices, prev, x):
                        n_com += 1
                n_out = deg - n_ret - n_com
                m_ret = n_ret * w_ret
                m_com = n_com * 1.0
                total = m_ret + m_com + n_out * w_out
                target = u * total
                if target < m_ret:
                    cat = 0
                    k = 0
                elif target < m_ret + m_com:
                    cat = 1
                    k = int((target - m_ret) / 1.0)
                    if k >= n_com:
                        k = n_com - 1
                else:
                    cat = 2
                    k = int((target - m_ret - m_com) / w_out)
                    if k >= n_out:
                        k = n_out - 1
                    if n_out == 0:
                        cat = 1
                        k = n_com - 1
                nxt = -1
                seen = 0
                for e in range(lo, lo + deg):
                    x = indices[e]
                    if x == prev:
                        c = 0
                    elif _has_edge(indptr, indices, prev, x):
                        c = 1
                    else:
                        c = 2
                    if c == cat:
                        if seen == k:
                            nxt = x
                            break
                        seen += 1
            out[w, t] = nxt
            prev = cur
            cur = nxt
    return out


def _walks_np(indptr, indices, starts, walk_ids, walk_length, p, q, seed):
    n = len(indptr) - 1
    n_walks = len(starts)
    out = np.full((n_walks, walk_length), -1, dtype=np.int64)
    out[:, 0] = starts
    cur = starts.astype(np.int64).copy()
    prev = np.full(n_walks, -1, dtype=np.int64)
    alive = np.arange(n_walks)
    deg_all = np.diff(indptr)
    edge_keys = np.repeat(np.arange(n, dtype=np.int64), deg_all) * n + indices  # sorted: CSR is row-major
    w_ret, w_out = 1.0 / p, 1.0 / q
    wid = np.asarray(walk_ids, dtype=np.uint64)
    for t in range(1, walk_length):
        alive = alive[deg_all[cur[alive]] > 0]
        if alive.size == 0:
            break
        c = cur[alive]
        pv = prev[alive]
        deg = deg_all[c]
        u = _uniform_np(seed, wid[alive], np.uint64(t))
        nxt = np.empty(alive.size, dtype=np.int64)

        first = pv < 0
        if first.any():
            k = np.minimum((u[first] * deg[first]).astype(np.int64), deg[first] - 1)
            nxt[first] = indices[indptr[c[first]] + k]
        rest = np.flatnonzero(~first)
        if rest.size:
            cr, pr, dr, ur = c[rest], pv[rest], deg[rest], u[rest]
            seg = np.repeat(np.arange(rest.size), dr)
            seg_start = np.cumsum(dr) - dr
            local = np.arange(seg.size) - seg_start[seg]
            x = indices[indptr[cr][seg] + local]
            keys = pr[seg] * n + x
            hit = np.searchsorted(edge_keys, keys)
            hit = np.minimum(hit, max(edge_keys.size - 1, 0))
            common = edge_keys[hit] == keys if edge_keys.size else np.zeros(seg.size, bool)
            cat = np.where(x == pr[seg], 0, np.where(common, 1, 2))
            n_ret = np.bincount(seg, weights=cat == 0, minlength=rest.size).astype(np.int64)
            n_com = np.bincount(seg, weights=cat == 1, minlength=rest.size).astype(np.int64)
            n_out = dr - n_ret - n_com
            m_ret = n_ret * w_ret
            m_com = n_com * 1.0
            total = m_ret + m_com + n_out * w_out
            target = ur * total
            chosen = np.where(target < m_ret, 0, np.where(target < m_ret + m_com, 1, 2))
            k = np.zeros(rest.size, dtype=np.int64)
            sel1 = chosen == 1
            k[sel1] = np.minimum(((target[sel1] - m_ret[sel1]) / 1.0).astype(np.int64), n_com[sel1] - 1)
            sel2 = chosen == 2
            k[sel2] = np.minimum(((target[sel2] - m_ret[sel2] - m_com[sel2]) / w_out).astype(np.int64),
                                 n_out[sel2] - 1)
            empty_out = sel2 & (n_out == 0)
            chosen[empty_out] = 1
            k[empty_out] = n_com[empty_out] - 1
            # rank of each candidate within its (segment, category)
            match = cat == chosen[seg]
            csum = np.cumsum(match)
            before = csum[seg_start] - match[seg_start]
            rank = csum - 1 - before[seg]
            pick = match & (rank == k[seg])
            nxt[rest[seg[pick]]] = x[pick]
        out[alive, t] = nxt
        prev[alive] = c
        cur[alive] = nxt
    return out


def generate_walks(indptr, indices, walk_length: int, walks_per_node: int, p: float = 1.0, q: float = 1.0,
                   seed: int = 0, use_numba: Optional[bool] = None) -> np.ndarray:
    """``walks_per_node * n`` walks, row ``r*n + v`` starting at node ``v``; ``-1`` pads short walks."""
    n = len(indptr) - 1
    starts = np.tile(np.arange(n, dtype=np.int64), walks_per_node)
    walk_ids = np.arange(n * walks_per_node, dtype=np.int64)
    s = _stream(seed, _TAG_WALK)
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    fn = _walks_nb if use_numba else _walks_np
    return fn(np.asarray(indptr, np.int64), np.asarray(indices, np.int64), starts, walk_ids,
              int(walk_length), float(p), float(q), s)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling

def negative_table(walks: np.ndarray, n: int, size: int = 100_000) -> np.ndarray:
    counts = np.bincount(walks[walks >= 0], minlength=n).astype(np.float64)
    weights = counts ** 0.75
    if weights.sum() == 0:
        return np.zeros(0, dtype=np.int64)
    cdf = np.cumsum(weights) / weights.sum()
    return np.minimum(np.searchsorted(cdf, (np.arange(size) + 0.5) / size), n - 1).astype(np.int64)


@njit(cache=True)
def _sigmoid(x):
    if x > 30.0:
        return 1.0
    if x < -30.0:
        return 0.0
    return 1.0 / (1.0 + np.exp(-x))


@njit(cache=True)
def _train_pair(syn0, syn1, center, ctx, table, negatives, lr, nseed, counter, work):
    dim = syn0.shape[1]
    for d in range(dim):
        work[d] = 0.0
    n_table = table.shape[0]
    for s in range(negatives + 1):
        if s == 0:
            target = ctx
            label = 1.0
        else:
            r = _key(nseed, np.uint64(counter), np.uint64(s))
            target = table[np.int64(r % np.uint64(n_table))]
            if target == ctx:
                continue
            label = 0.0
        f = 0.0
        for d in range(dim):
            f += syn0[center, d] * syn1[target, d]
        g = (label - _sigmoid(f)) * lr
        for d in range(dim):
            work[d] += g * syn1[target, d]
        for d in range(dim):
            syn1[target, d] += g * syn0[center, d]
    for d in range(dim):
        syn0[center, d] += work[d]


@njit(cache=True)
def _sgns_epoch_nb(walks, syn0, syn1, table, window, negatives, lr0, epoch, epochs, wseed, nseed):
    n_walks, length = walks.shape
    work = np.zeros(syn0.shape[1], dtype=syn0.dtype)
    total = n_walks * epochs
    for w in range(n_walks):
        lr = lr0 * max(1e-4, 1.0 - (epoch * n_walks + w) / total)
        wid = np.uint64(epoch * n_walks + w)
        for i in range(length):
            center = walks[w, i]
            if center < 0:
                break
            b = 1 + np.int64(_key(wseed, wid, np.uint64(i)) % np.uint64(window))
            for j in range(max(0, i - b), min(length, i + b + 1)):
                if j == i or walks[w, j] < 0:
                    continue
                counter = (wid * np.uint64(length) + np.uint64(i)) * np.uint64(2 * window + 1) + np.uint64(j - i + window)
                _train_pair(syn0, syn1, center, walks[w, j], table, negatives, lr, nseed, counter, work)


@njit(cache=True, parallel=True)
def _sgns_epoch_nb_parallel(walks, syn0, syn1, table, window, negatives, lr0, epoch, epochs, wseed, nseed):
    # lock-free (hogwild) updates; not reproducible across runs
    n_walks, length = walks.shape
    total = n_walks * epochs
    for w in prange(n_walks):
        work = np.zeros(syn0.shape[1], dtype=syn0.dtype)
        lr = lr0 * max(1e-4, 1.0 - (epoch * n_walks + w) / total)
        wid = np.uint64(epoch * n_walks + w)
        for i in range(length):
            center = walks[w, i]
            if center < 0:
                break
            b = 1 + np.int64(_key(wseed, wid, np.uint64(i)) % np.uint64(window))
            for j in range(max(0, i - b), min(length, i + b + 1)):
                if j == i or walks[w, j] < 0:
                    continue
                counter = (wid * np.uint64(length) + np.uint64(i)) * np.uint64(2 * window + 1) + np.uint64(j - i + window)
                _train_pair(syn0, syn1, center, walks[w, j], table, negatives, lr, nseed, counter, work)


def _epoch_pairs_np(walks, window, epoch, wseed):
    """All (center, context, lr-walk-index, counter) pairs of one epoch, in kernel order."""
    n_walks, length = walks.shape
    wid = (np.uint64(epoch * n_walks) + np.arange(n_walks, dtype=np.uint64))
    pos = np.arange(length, dtype=np.uint64)
    b = 1 + (_key_np(wseed, wid[:, None], pos[None, :]) % np.uint64(window)).astype(np.int64)
    centers, ctxs, walk_idx, counters = [], [], [], []
    for off in range(-window, window + 1):
        if off == 0:
            continue
        i = np.arange(length)
        j = i + off
        ok_pos = (j >= 0) & (j < length)
        ii, jj = i[ok_pos], j[ok_pos]
        c = walks[:, ii]
        x = walks[:, jj]
        valid = (c >= 0) & (x >= 0) & (abs(off) <= b[:, ii])
        wr, col = np.nonzero(valid)
        centers.append(c[wr, col])
        ctxs.append(x[wr, col])
        walk_idx.append(wr)
        cnt = (wid[wr] * np.uint64(length) + ii[col].astype(np.uint64)) * np.uint64(2 * window + 1) \
            + np.uint64(off + window)
        counters.append(cnt)
    centers = np.concatenate(centers)
    ctxs = np.concatenate(ctxs)
    walk_idx = np.concatenate(walk_idx)
    counters = np.concatenate(counters)
    order = np.argsort(counters, kind="stable")
    return centers[order], ctxs[order], walk_idx[order], counters[order]


def _sgns_epoch_np(walks, syn0, syn1, table, window, negatives, lr0, epoch, epochs, wseed, nseed,
                   batch: int = 2048):
    """Minibatched variant of the numba kernel (same pairs and negatives, batched updates)."""
    n_walks = walks.shape[0]
    centers, ctxs, walk_idx, counters = _epoch_pairs_np(walks, window, epoch, wseed)
    total = n_walks * epochs
    lr_all = lr0 * np.maximum(1e-4, 1.0 - (epoch * n_walks + walk_idx) / total)
    n_table = table.shape[0]
    for s in range(0, centers.size, batch):
        c = centers[s:s + batch]
        x = ctxs[s:s + batch]
        lr = lr_all[s:s + batch].astype(syn0.dtype)[:, None]
        cnt = counters[s:s + batch]
        v = syn0[c]
        grad_v = np.zeros_like(v)
        targets = [x]
        labels = [np.ones(len(c), dtype=syn0.dtype)]
        for k in range(1, negatives + 1):
            r = _key_np(nseed, cnt, np.uint64(k))
            t = table[(r % np.uint64(n_table)).astype(np.int64)]
            targets.append(t)
            labels.append(np.where(t == x, np.nan, 0.0).astype(syn0.dtype))
        for t, lab in zip(targets, labels):
            keep = ~np.isnan(lab)
            u = syn1[t]
            f = np.einsum("ij,ij->i", v, u)
            g = (np.nan_to_num(lab) - 1.0 / (1.0 + np.exp(-np.clip(f, -30, 30)))) * keep
            g = g[:, None] * lr
            grad_v += g * u
            np.add.at(syn1, t, g * v)
        np.add.at(syn0, c, grad_v)


def train_skipgram(walks: np.ndarray, n: int, cfg: Node2vecConfig, deterministic: bool = True,
                   use_numba: Optional[bool] = None) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    syn0 = ((rng.random((n, cfg.dims)) - 0.5) / cfg.dims).astype(np.float32)
    syn1 = np.zeros((n, cfg.dims), dtype=np.float32)
    table = negative_table(walks, n)
    if table.size == 0 or cfg.epochs <= 0:
        return syn0.astype(np.float64)
    wseed = _stream(cfg.seed, _TAG_WINDOW)
    nseed = _stream(cfg.seed, _TAG_NEG)
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    if use_numba:
        fn = _sgns_epoch_nb if deterministic else _sgns_epoch_nb_parallel
    else:
        fn = _sgns_epoch_np
    for epoch in range(cfg.epochs):
        fn(walks, syn0, syn1, table, int(cfg.window), int(cfg.negatives), float(cfg.learning_rate),
           epoch, int(cfg.epochs), wseed, nseed)
    return syn0.astype(np.float64)


def node2vec_embed(graph: HetGraph, cfg: Optional[Node2vecConfig] = None, ids: Optional[Sequence[str]] = None,
                   deterministic: bool = True, use_numba: Optional[bool] = None) -> np.ndarray:
    """128-dim (``cfg.dims``) embedding per node, rows in ``graph.node_ids()`` order."""
    cfg = cfg or Node2vecConfig()
    indptr, indices = graph_csr(graph, ids)
    n = len(indptr) - 1
    t0 = time.perf_counter()
    walks = generate_walks(indptr, indices, cfg.walk_length, cfg.walks_per_node, cfg.p, cfg.q, cfg.seed,
                           use_numba=use_numba)
    t1 = time.perf_counter()
    emb = train_skipgram(walks, n, cfg, deterministic=deterministic, use_numba=use_numba)
    logger.info("node2vec[%s]: %d nodes, walks %.2fs, skip-gram %.2fs",
                "numba" if (_accel.USE_NUMBA if use_numba is None else use_numba) else "numpy",
                n, t1 - t0, time.perf_counter() - t1)
    return emb
