"""Stage functions shared by the CLI, the ablation runner and the acceptance suite."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import RunConfig
from .errors import DataError
from .evaluation import Split, stratified_split
from .features import (FEATURE_DIM, TOPO_DIM, NodeFeatures, encode_attribute_features, embed_text,
                       fuse_features)
from .graph import HetGraph
from .ingest import Enrichment, Whitelist, build_graph, load_reports
from .metapath import MetapathDef, MetapathIndex, build_index, builtin_metapaths, load_metapaths, select_metapaths
from .model import AttributionModel, ModelInputs, build_inputs
from .node2vec import node2vec_embed
from .training import TrainResult, evaluate_split, train

logger = logging.getLogger(__name__)


def run_ingest(reports_path, enrichment_path=None, whitelist_path=None,
               cfg: Optional[RunConfig] = None) -> HetGraph:
    cfg = cfg or RunConfig()
    reports = load_reports(reports_path)
    enrichment = Enrichment.load(enrichment_path) if enrichment_path else Enrichment()
    whitelist = Whitelist.load(whitelist_path) if whitelist_path else Whitelist()
    return build_graph(reports, whitelist, enrichment, keep_unverified=cfg.features.keep_unverified,
                       match_names=cfg.features.match_names)


def run_encode(graph: HetGraph, cfg: Optional[RunConfig] = None) -> NodeFeatures:
    """Attribute, text and Node2vec blocks fused into one 256-dim row per node."""
    cfg = cfg or RunConfig()
    ids = graph.node_ids()
    t0 = time.perf_counter()
    attr = encode_attribute_features(graph, ids=ids)
    text = embed_text(graph, cfg.text_embedder, ids)
    topo = node2vec_embed(graph, cfg.node2vec, ids, deterministic=cfg.deterministic)
    if topo.shape[1] != TOPO_DIM:
        raise DataError(f"node2vec produced {topo.shape[1]} dims, the feature layout needs {TOPO_DIM}")
    x = fuse_features(attr, text, topo, standardize=cfg.features.standardize).astype(np.float32)
    assert x.shape[1] == FEATURE_DIM
    logger.info("encode: %d nodes in %.1fs", len(ids), time.perf_counter() - t0)
    return NodeFeatures(ids, x)


def metapath_defs(cfg: RunConfig) -> List[MetapathDef]:
    defs = load_metapaths(cfg.metapaths.path) if cfg.metapaths.path else builtin_metapaths()
    return select_metapaths(defs, cfg.metapaths.orders, cfg.metapaths.ids)


def labels_of(graph: HetGraph) -> Dict[str, str]:
    return {r: graph.labels[r] for r in graph.reports() if r in graph.labels}


def make_split(graph: HetGraph, cfg: RunConfig) -> Split:
    return stratified_split(labels_of(graph), cfg.split.ratios, cfg.split_seed)


@dataclass
class Prepared:
    index: MetapathIndex
    inputs: ModelInputs
    split: Split


def prepare(graph: HetGraph, feats: NodeFeatures, cfg: RunConfig,
            index: Optional[MetapathIndex] = None) -> Prepared:
    defs = metapath_defs(cfg)
    if index is None:
        index = build_index(graph, defs)
    else:
        missing = [d.id for d in defs if d.id not in index.matrices]
        if missing:
            index = build_index(graph, defs)
    index = MetapathIndex(index.reports, {d.id: index.matrices[d.id] for d in defs}, index.ioc, index.stats)
    inputs = build_inputs(graph, feats, index, feature_mask=cfg.features.mask())
    return Prepared(index, inputs, make_split(graph, cfg))


def new_model(cfg: RunConfig, prepared: Prepared) -> AttributionModel:
    return AttributionModel(cfg.model, list(prepared.index.matrices), prepared.inputs.groups, seed=cfg.seed)


def fit(prepared: Prepared, cfg: RunConfig, metrics_path=None) -> Tuple[AttributionModel, TrainResult]:
    model = new_model(cfg, prepared)
    result = train(model, prepared.inputs, prepared.split, cfg.train, metrics_path)
    return model, result


def score(model: AttributionModel, prepared: Prepared, which: str = "test") -> Dict[str, float]:
    ids: Sequence[str] = getattr(prepared.split, which)
    return evaluate_split(model, prepared.inputs, ids)


def run_all(reports_path, enrichment_path, cfg: RunConfig, whitelist_path=None,
            out_dir: Optional[Path] = None) -> Dict[str, float]:
    """Run every stage from raw reports to test-split metrics in one call."""
    graph = run_ingest(reports_path, enrichment_path, whitelist_path, cfg)
    feats = run_encode(graph, cfg)
    prepared = prepare(graph, feats, cfg)
    metrics_path = Path(out_dir) / "metrics.jsonl" if out_dir else None
    model, result = fit(prepared, cfg, metrics_path)
    out = score(model, prepared, "test")
    out["epochs"] = result.epochs_run
    out["seconds"] = result.seconds
    return out
