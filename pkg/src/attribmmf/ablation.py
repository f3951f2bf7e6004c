"""Cumulative ablation suites over feature modalities, attention levels and metapath orders."""
from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .config import RunConfig
from .features import NodeFeatures
from .graph import HetGraph
from .metapath import MetapathIndex, build_index, builtin_metapaths
from .pipeline import fit, prepare, score

logger = logging.getLogger(__name__)

CSV_HEADER = ("config", "micro_f1", "macro_f1", "epochs", "seconds")


def _features(mods: Sequence[str]) -> Callable[[RunConfig], None]:
    def apply(cfg: RunConfig):
        cfg.features.modalities = list(mods)
    return apply


def _attention(ioc_type: bool, semantic: bool) -> Callable[[RunConfig], None]:
    def apply(cfg: RunConfig):
        cfg.model.ioc_type_attention = ioc_type
        cfg.model.semantic_attention = semantic
    return apply


def _orders(orders: Sequence[int]) -> Callable[[RunConfig], None]:
    def apply(cfg: RunConfig):
        cfg.metapaths.orders = list(orders)
        cfg.metapaths.ids = None
    return apply


SUITES: Dict[str, List[Tuple[str, Callable[[RunConfig], None]]]] = {
    "features": [
        ("MAT", _features(["MAT"])),
        ("MAT+OAT", _features(["MAT", "OAT"])),
        ("MAT+OAT+NLT", _features(["MAT", "OAT", "NLT"])),
        ("MAT+OAT+NLT+TR", _features(["MAT", "OAT", "NLT", "TR"])),
    ],
    "attention": [
        ("node-level", _attention(False, False)),
        ("node-level+semantic", _attention(False, True)),
        ("node-level+semantic+ioc-type", _attention(True, True)),
    ],
    "metapaths": [
        ("first-order", _orders([1])),
        ("first+second-order", _orders([1, 2])),
        ("first+second+third-order", _orders([1, 2, 3])),
        ("first+second+third+fourth-order", _orders([1, 2, 3, 4])),
    ],
}


@dataclass
class AblationRow:
    config: str
    micro_f1: float
    macro_f1: float
    epochs: int
    seconds: float

    def as_tuple(self):
        return (self.config, f"{self.micro_f1:.4f}", f"{self.macro_f1:.4f}", self.epochs, f"{self.seconds:.1f}")


def run_row(graph: HetGraph, feats: NodeFeatures, base: RunConfig, name: str,
            change: Callable[[RunConfig], None], index: Optional[MetapathIndex] = None) -> AblationRow:
    cfg = copy.deepcopy(base)
    change(cfg)
    prepared = prepare(graph, feats, cfg, index)
    model, result = fit(prepared, cfg)
    m = score(model, prepared, "test")
    logger.info("ablation %s: micro %.4f macro %.4f", name, m["micro_f1"], m["macro_f1"])
    return AblationRow(name, m["micro_f1"], m["macro_f1"], result.epochs_run, result.seconds)


def run_ablation(suite: str, graph: HetGraph, feats: NodeFeatures, base: RunConfig,
                 rows: Optional[Sequence[str]] = None) -> List[AblationRow]:
    """Train and score every cumulative configuration of ``suite`` in suite order."""
    if suite not in SUITES:
        raise KeyError(f"unknown ablation suite {suite!r}; expected one of {sorted(SUITES)}")
    index = build_index(graph, builtin_metapaths())
    out = []
    for name, change in SUITES[suite]:
        if rows is not None and name not in rows:
            continue
        out.append(run_row(graph, feats, base, name, change, index))
    return out


def write_csv(rows: Sequence[AblationRow], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow(r.as_tuple())
