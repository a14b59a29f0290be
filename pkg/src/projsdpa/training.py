"""Loss, metrics, Adam, the epoch loop and the effective-rank probe."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import platform
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EncodedSplit, Vocabulary
from .model import PAD_ID, DataError, ModelConfig, TransformerParams, backward, forward, forward_with_cache, save_checkpoint
from .numerics import Parameter, RngState, ShapeError, rng_permutation

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "split", "loss", "accuracy", "seconds")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _token_nll_sum(logits: np.ndarray, targets: np.ndarray, pad_id: int) -> tuple[float, int, int]:
    """(summed NLL, correct count, token count) over non-pad positions."""
    keep = targets != pad_id
    logp = _log_softmax(logits)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    correct = (logits.argmax(axis=-1) == targets) & keep
    return float(nll[keep].sum()), int(correct.sum()), int(keep.sum())


def cross_entropy_loss(
    logits: np.ndarray, targets: np.ndarray, pad_id: int = PAD_ID
) -> tuple[float, np.ndarray]:
    """Mean token NLL over non-pad targets (nats/token) and its gradient wrt ``logits``."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} do not match targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[-1]):
        raise DataError("target id outside the logit range")
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise DataError("cross_entropy_loss: every target position is padding")
    logp = _log_softmax(logits)
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = float(nll[keep].sum() / n)
    grad = np.exp(logp)
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
    grad *= keep[..., None] / n
    return loss, grad


def token_accuracy(logits: np.ndarray, targets: np.ndarray, pad_id: int = PAD_ID) -> float:
    """Fraction of non-pad positions where the argmax equals the target."""
    targets = np.asarray(targets)
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        warnings.warn("token_accuracy: no non-pad positions; returning 0.0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(((logits.argmax(axis=-1) == targets) & keep).sum() / n)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: list[Parameter]) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(
    params: list[Parameter],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update using each parameter's ``grad``; advances ``state.t``."""
    if len(params) != len(state.m):
        raise ShapeError("optimizer state does not match the parameter list")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if g.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} != optimizer state shape {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    metrics_path: str | None = None
    record_timing: bool = True
    # evaluation batches run on this many threads; results are reduced in batch order
    eval_workers: int = 1
    max_steps: int | None = None

    def __post_init__(self):
        self.split = tuple(float(x) for x in self.split)
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {self.split}")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0 or self.eval_workers < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, lr > 0 and eval_workers >= 1 are required")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 when set")


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    seconds: float

    def row(self) -> list[str]:
        return [str(self.epoch), self.split, f"{self.loss:.6g}", f"{self.accuracy:.6g}", f"{self.seconds:.6g}"]


def hardware_string() -> str:
    return f"{platform.machine()} {platform.processor() or 'unknown-cpu'}; cpus={os.cpu_count()}; numpy={np.__version__}"


def write_metrics_csv(path, records: list[MetricsRecord], comments: list[str] = ()) -> None:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow(r.row())
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def evaluate(
    params: TransformerParams, config: ModelConfig, data: EncodedSplit, batch_size: int = 64, workers: int = 1
) -> tuple[float, float]:
    """Token-weighted loss and accuracy over a whole split (pads excluded)."""
    batches = list(data.batches(batch_size))
    if not batches:
        return float("nan"), 0.0

    def one(b):
        logits = forward(b.src_ids, b.tgt_in_ids, params, config)
        return _token_nll_sum(logits, b.tgt_out_ids, PAD_ID)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(one, batches))
    else:
        parts = [one(b) for b in batches]
    nll = sum(p[0] for p in parts)
    correct = sum(p[1] for p in parts)
    count = sum(p[2] for p in parts)
    if count == 0:
        return float("nan"), 0.0
    return nll / count, correct / count


def train(
    params: TransformerParams,
    config: ModelConfig,
    train_data: EncodedSplit,
    val_data: EncodedSplit | None,
    train_config: TrainConfig,
    test_data: EncodedSplit | None = None,
    checkpoint_path=None,
    vocabs: tuple[Vocabulary, Vocabulary] | None = None,
) -> list[MetricsRecord]:
    """Adam over shuffled mini-batches; one record per tracked split per epoch.

    ``seconds`` is the cumulative wall-clock time spent in training steps
    (evaluation excluded), or 0 when ``record_timing`` is off.
    """
    if len(train_data) == 0:
        raise DataError("training split is empty")
    plist = params.parameters()
    state = AdamState.zeros_like(plist)
    rng = RngState(train_config.seed)
    records: list[MetricsRecord] = []
    elapsed = 0.0
    steps = 0
    for epoch in range(1, train_config.epochs + 1):
        order = rng_permutation(rng, len(train_data))
        nll_sum, correct, count = 0.0, 0, 0
        t0 = time.monotonic()
        for batch in train_data.batches(train_config.batch_size, order):
            params.zero_grads()
            logits, cache = forward_with_cache(batch.src_ids, batch.tgt_in_ids, params, config)
            if (batch.tgt_out_ids != PAD_ID).sum() == 0:
                continue
            loss, grad = cross_entropy_loss(logits, batch.tgt_out_ids)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            backward(grad, cache, params, config)
            adam_step(plist, state, train_config.lr, train_config.beta1, train_config.beta2, train_config.adam_eps)
            s, c, n = _token_nll_sum(logits, batch.tgt_out_ids, PAD_ID)
            nll_sum, correct, count = nll_sum + s, correct + c, count + n
            steps += 1
            if train_config.max_steps is not None and steps >= train_config.max_steps:
                break
        elapsed += time.monotonic() - t0
        secs = elapsed if train_config.record_timing else 0.0
        records.append(MetricsRecord(epoch, "train", nll_sum / max(count, 1), correct / max(count, 1), secs))
        for name, split in (("val", val_data), ("test", test_data)):
            if split is not None and len(split):
                loss, acc = evaluate(params, config, split, max(train_config.batch_size, 64), train_config.eval_workers)
                records.append(MetricsRecord(epoch, name, loss, acc, secs))
        log.info(
            "epoch %d: %s", epoch, ", ".join(f"{r.split} loss={r.loss:.4f} acc={r.accuracy:.4f}" for r in records[-3:] if r.epoch == epoch)
        )
        if train_config.max_steps is not None and steps >= train_config.max_steps:
            break
    if train_config.metrics_path:
        comments = [f"variant: {config.variant.value}", f"seed: {train_config.seed}"]
        comments.append(f"hardware: {hardware_string()}" if train_config.record_timing else "hardware: timing disabled")
        write_metrics_csv(train_config.metrics_path, records, comments)
    if checkpoint_path is not None:
        extra = {}
        if vocabs is not None:
            extra = {"src_tokens": vocabs[0].tokens, "tgt_tokens": vocabs[1].tokens}
        save_checkpoint(checkpoint_path, params, config, extra)
    return records


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def effective_rank_probe(activations: np.ndarray) -> float:
    """``exp`` of the entropy of the normalized singular values of the row-centered matrix.

    Identical rows (nothing left after centering) give 1.0.
    """
    x = np.asarray(activations, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError(f"effective_rank_probe needs a [T x d] matrix with T >= 2, got {x.shape}")
    s = np.linalg.svd(x - x.mean(axis=0, keepdims=True), compute_uv=False)
    total = s.sum()
    if total <= 1e-12 * max(1.0, float(np.abs(x).max())):
        return 1.0
    p = s[s > 0] / total
    return float(np.exp(-(p * np.log(p)).sum()))
