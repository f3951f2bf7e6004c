"""Stratified splits and Micro/Macro F1."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import EmptyInput, LengthMismatch


@dataclass
class Split:
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def stratified_split(labels: Mapping[str, str], ratios: Sequence[float] = (8, 1, 1), seed: int = 0) -> Split:
    """Per-group seeded split with floor allocation to validation and test.

    Groups of three or more reports get at least one validation and one test
    report; a group of two gives one train and one test report; a singleton
    stays in train.
    """
    total = float(sum(ratios))
    rv, rt = ratios[1] / total, ratios[2] / total
    rng = np.random.default_rng(seed)
    by_group: Dict[str, List[str]] = {}
    for rid in sorted(labels):
        by_group.setdefault(labels[rid], []).append(rid)
    split = Split()
    for group in sorted(by_group):
        ids = by_group[group]
        order = rng.permutation(len(ids))
        ids = [ids[i] for i in order]
        n = len(ids)
        n_val, n_test = int(np.floor(n * rv)), int(np.floor(n * rt))
        if n >= 3:
            n_val, n_test = max(n_val, 1), max(n_test, 1)
        elif n == 2:
            n_val, n_test = 0, 1
        split.test.extend(ids[:n_test])
        split.val.extend(ids[n_test:n_test + n_val])
        split.train.extend(ids[n_test + n_val:])
    split.train.sort()
    split.val.sort()
    split.test.sort()
    return split


# ---------------------------------------------------------------------------
# metrics

def confusion_counts(truth: Sequence[Hashable], pred: Sequence[Hashable]) -> Dict[Hashable, Tuple[int, int, int]]:
    """Per-label (TP, FP, FN) over the union of labels seen in truth or pred."""
    truth, pred = list(truth), list(pred)
    if len(truth) != len(pred):
        raise LengthMismatch(f"truth has {len(truth)} entries, pred has {len(pred)}")
    if not truth:
        raise EmptyInput("no samples to score")
    counts: Dict[Hashable, List[int]] = {}
    for t, p in zip(truth, pred):
        counts.setdefault(t, [0, 0, 0])
        counts.setdefault(p, [0, 0, 0])
        if t == p:
            counts[t][0] += 1
        else:
            counts[p][1] += 1
            counts[t][2] += 1
    return {k: tuple(v) for k, v in counts.items()}


def _f1(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def micro_f1(truth, pred) -> float:
    counts = confusion_counts(_plain(truth), _plain(pred))
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    return _f1(tp, fp, fn)


def macro_f1(truth, pred) -> float:
    """Mean per-label F1 over labels that occur in ``truth``."""
    truth, pred = _plain(truth), _plain(pred)
    counts = confusion_counts(truth, pred)
    labels = set(truth)
    return float(sum(_f1(*counts[t]) for t in sorted(labels, key=str)) / len(labels))


def _plain(seq) -> list:
    if isinstance(seq, np.ndarray):
        return seq.tolist()
    return list(seq)
