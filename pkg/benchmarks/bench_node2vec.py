"""Compare the numba kernels with the numpy fallback on node2vec walks and skip-gram.

Usage::

    python benchmarks/bench_node2vec.py            # default synthetic corpus graph
    python benchmarks/bench_node2vec.py --repeat 5 --walks-per-node 10

Both backends run in the same process (the ``use_numba`` argument overrides
the ``ATTRIBMMF_DISABLE_NUMBA`` default). The first numba call includes JIT
compilation, so it is timed separately as a warm-up and left out of the
reported numbers. Walks must agree exactly between the two backends; the
skip-gram paths use different update orders, so only their timings are compared.
"""
import argparse
import logging
import statistics
import sys
import time

import numpy as np

from attribmmf import _accel
from attribmmf.ingest import Enrichment, RawReport, build_graph
from attribmmf.node2vec import Node2vecConfig, generate_walks, graph_csr, train_skipgram
from attribmmf.synth import SynthConfig, generate_synthetic

logger = logging.getLogger("bench_node2vec")


def corpus_csr(seed: int):
    records, enrichment = generate_synthetic(SynthConfig(seed=seed))
    graph = build_graph([RawReport(r["id"], r["text"], r["group"]) for r in records],
                        enrichment=Enrichment.from_dict(enrichment))
    return graph_csr(graph)


def timed(fn, repeat: int):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, times


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--walk-length", type=int, default=80)
    ap.add_argument("--walks-per-node", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=1, help="skip-gram epochs per timed run")
    ap.add_argument("--skip-numpy-sgns", action="store_true", help="skip the slow numpy skip-gram timing")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if not _accel.USE_NUMBA:
        logger.error("numba is disabled or missing; nothing to compare against")
        return 1

    indptr, indices = corpus_csr(args.seed)
    n = len(indptr) - 1
    logger.info("graph: %d nodes, %d undirected edges", n, len(indices) // 2)
    cfg = Node2vecConfig(walk_length=args.walk_length, walks_per_node=args.walks_per_node,
                         epochs=args.epochs, seed=args.seed)

    def walks(use_numba):
        return generate_walks(indptr, indices, cfg.walk_length, cfg.walks_per_node, cfg.p, cfg.q, cfg.seed,
                              use_numba=use_numba)

    t0 = time.perf_counter()
    walks(True)
    train_skipgram(walks(True)[:n], n, Node2vecConfig(epochs=1, seed=cfg.seed), use_numba=True)
    logger.info("numba warm-up (JIT compile): %.2fs", time.perf_counter() - t0)

    rows = []
    w_nb, t_nb = timed(lambda: walks(True), args.repeat)
    w_np, t_np = timed(lambda: walks(False), args.repeat)
    if not np.array_equal(w_nb, w_np):
        logger.error("walks differ between backends")
        return 1
    rows.append(("walks", t_nb, t_np))

    _, s_nb = timed(lambda: train_skipgram(w_nb, n, cfg, use_numba=True), args.repeat)
    if args.skip_numpy_sgns:
        s_np = [float("nan")]
    else:
        _, s_np = timed(lambda: train_skipgram(w_nb, n, cfg, use_numba=False), args.repeat)
    rows.append((f"skip-gram x{cfg.epochs} epoch", s_nb, s_np))

    print(f"{'stage':<22}{'numba (s)':>12}{'numpy (s)':>12}{'speed-up':>10}")
    for name, a, b in rows:
        ma, mb = statistics.median(a), statistics.median(b)
        print(f"{name:<22}{ma:>12.3f}{mb:>12.3f}{mb / ma:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
