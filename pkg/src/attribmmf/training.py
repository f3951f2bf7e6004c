"""Full-graph training with Adam, early stopping and binary checkpoints."""
from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import EmptyTrainSet, FormatError, NonFinite, ShapeMismatch
from .evaluation import Split, macro_f1, micro_f1
from .model import AttributionModel, ModelInputs, loss

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-3
    weight_decay: float = 1e-3
    max_epochs: int = 500
    patience: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.wd = lr, weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.wd:
                g = g + self.wd * p.data
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            upd = (self.lr / c1) * self.m[k] / (np.sqrt(self.v[k] / c2) + self.eps)
            p.data -= upd.astype(p.data.dtype)


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    history: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    seconds: float = 0.0


def _index(inputs: ModelInputs, ids: Sequence[str]) -> np.ndarray:
    pos = {r: i for i, r in enumerate(inputs.reports)}
    return np.array([pos[r] for r in ids], dtype=np.int64)


def evaluate_split(model: AttributionModel, inputs: ModelInputs, ids: Sequence[str]) -> Dict[str, float]:
    idx = _index(inputs, ids)
    if idx.size == 0:
        return {"micro_f1": 0.0, "macro_f1": 0.0}
    pred = model.predict(inputs)[idx]
    truth = inputs.labels[idx]
    return {"micro_f1": micro_f1(truth, pred), "macro_f1": macro_f1(truth, pred)}


def train(model: AttributionModel, inputs: ModelInputs, split: Split, cfg: TrainConfig,
          metrics_path: Optional[Path] = None) -> TrainResult:
    """Optimise ``model`` in place; the best-validation parameters are restored at the end.

    Validation Micro-F1 drives early stopping; ties are broken by lower
    validation loss so a saturated metric still tracks the best epoch.
    """
    train_idx = _index(inputs, split.train)
    if train_idx.size == 0:
        raise EmptyTrainSet("split has no training reports")
    val_idx = _index(inputs, split.val)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    best = {k: p.data.copy() for k, p in model.params.items()}
    best_key = (-1.0, -np.inf)
    best_epoch, since = 0, 0
    history: List[dict] = []
    start = time.perf_counter()
    fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    epoch = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            try:
                model.zero_grad()
                logits, _ = model.forward(inputs, training=True, rng=rng)
                lval = loss(logits, inputs.labels, train_idx)
                lval.backward()
                opt.step()
                eval_logits, _ = model.forward(inputs, training=False)
            except NonFinite as exc:
                raise NonFinite(f"epoch {epoch}: {exc}") from None
            pred = eval_logits.data.argmax(axis=1)
            if val_idx.size:
                vt, vp = inputs.labels[val_idx], pred[val_idx]
                vmi, vma = micro_f1(vt, vp), macro_f1(vt, vp)
                vloss = float(loss(eval_logits, inputs.labels, val_idx).data)
            else:
                vmi = vma = 0.0
                vloss = float(lval.data)
            rec = {"epoch": epoch, "train_loss": float(lval.data), "val_micro_f1": vmi, "val_macro_f1": vma}
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            key = (vmi, -vloss)
            if key > best_key:
                best_key, best_epoch, since = key, epoch, 0
                best = {k: p.data.copy() for k, p in model.params.items()}
            else:
                since += 1
            if epoch % 50 == 0:
                logger.info("epoch %d loss %.4f val micro %.4f", epoch, rec["train_loss"], vmi)
            if since >= cfg.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    finally:
        if fh:
            fh.close()
    for k, p in model.params.items():
        p.data[...] = best[k]
    return TrainResult(best, history, best_epoch, epoch, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# checkpoints

_CK_MAGIC = b"AMCK"
_CK_VERSION = 1


def save_checkpoint(params: Mapping[str, object], path) -> None:
    """Write named tensors in insertion order as little-endian 32-bit floats."""
    chunks = [_CK_MAGIC, struct.pack("<HI", _CK_VERSION, len(params))]
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != _CK_MAGIC:
        raise FormatError("not a checkpoint (bad magic)", path)
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != _CK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path)
    off = 10
    out: Dict[str, np.ndarray] = {}

    def need(n: int, what: str):
        if off + n > len(raw):
            raise FormatError(f"truncated checkpoint while reading {what}", path)

    for _ in range(count):
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        need(nlen + 1, "tensor header")
        name = raw[off:off + nlen].decode("utf-8", errors="replace")
        off += nlen
        ndim = raw[off]
        off += 1
        need(4 * ndim, f"dims of {name}")
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * 4
        need(size, f"payload of {name}")
        out[name] = np.frombuffer(raw, dtype="<f4", count=size // 4, offset=off).reshape(shape).astype(np.float32)
        off += size
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes after last tensor", path)
    return out


def assign_params(model: AttributionModel, arrays: Mapping[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into ``model``, checking names and shapes."""
    for name, p in model.params.items():
        if name not in arrays:
            raise ShapeMismatch(f"tensor {name} missing from checkpoint")
        if tuple(arrays[name].shape) != tuple(p.shape):
            raise ShapeMismatch(f"tensor {name}: checkpoint shape {tuple(arrays[name].shape)}, model expects {tuple(p.shape)}")
    extra = sorted(set(arrays) - set(model.params))
    if extra:
        raise ShapeMismatch(f"tensor {extra[0]} in checkpoint is not part of this model")
    for name, p in model.params.items():
        p.data[...] = arrays[name]
