"""AdamW optimization loop with per-epoch validation and metrics recording.

Every source of randomness (batch order, window offsets, dropout) derives
from the single TrainConfig seed, so identical (model seed, data, config)
reruns produce identical metric sequences in single-threaded mode.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import data as data_mod, tensor as tn
from .model import Model, save_checkpoint

__all__ = [
    "TrainConfig",
    "MetricsRecord",
    "DivergenceError",
    "AdamW",
    "adamw_step",
    "train",
    "validate",
    "accuracy_from_logits",
    "spearman",
    "write_metrics_csv",
    "append_metrics",
    "read_metrics_csv",
    "METRICS_FIELDS",
]

METRICS_FIELDS = ("epoch", "train_loss", "val_loss", "val_accuracy", "seconds")


class DivergenceError(RuntimeError):
    """Training produced non-finite values; the last epoch checkpoint on disk
    is still good."""


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.002
    dropout: float = 0.1
    epochs: int = 20
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    grad_clip: float | None = 1.0
    micro_batch: int = 32  # forward/backward chunk size; purely a memory knob

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.micro_batch < 1:
            raise ValueError("batch_size, epochs, micro_batch must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


def adamw_step(param, grad, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One AdamW update, in place: bias-corrected moments plus decoupled decay."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    if weight_decay:
        param *= 1.0 - lr * weight_decay
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Decoupled-weight-decay Adam over a model's named parameters.

    Decay is applied only where the model flags it (matrices; not biases or
    norm parameters).
    """

    def __init__(self, model: Model, lr=0.002, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = model.parameters()
        self.decay = model.decay_flags()
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params.items()}
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
            adamw_step(
                p.data, g, self.m[name], self.v[name], self.step_count,
                self.lr, self.beta1, self.beta2, self.eps,
                self.weight_decay if self.decay[name] else 0.0,
            )

    def clip_gradients(self, max_norm: float) -> float:
        norm = tn.global_grad_norm(self.params.values())
        if norm > max_norm and norm > 0:
            scale = max_norm / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def state_dict(self) -> dict:
        return {"step": self.step_count, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step"])
        for n in self.params:
            self.m[n] = np.ascontiguousarray(state["m"][n])
            self.v[n] = np.ascontiguousarray(state["v"][n])


def accuracy_from_logits(logits: np.ndarray, targets: np.ndarray) -> int:
    """Count positions whose argmax prediction equals the target. Ties go to
    the lowest index (np.argmax), and count as correct only if that lowest
    index is the target."""
    pred = np.argmax(logits, axis=-1)
    return int((pred == targets).sum())


def validate(model: Model, val_split: data_mod.Split, micro_batch: int = 32) -> tuple[float, float]:
    """Mean cross-entropy and argmax accuracy over every position of every
    validation window. Eval mode: no dropout, no gradient tape."""
    if not val_split.stories:
        raise data_mod.DataError("validate: empty validation split")
    context = model.config.context
    total_loss = 0.0
    total_pos = 0
    correct = 0
    with tn.no_grad():
        for batch in data_mod.batches(val_split, context, micro_batch, seed=0, epoch=0):
            logits = model.forward(batch.inputs, train_mode=False)
            flat = logits.reshape(batch.inputs.size, model.config.vocab)
            tgt = batch.targets.reshape(-1)
            loss = tn.cross_entropy(flat, tgt)
            n = tgt.size
            total_loss += float(loss.data) * n
            correct += accuracy_from_logits(flat.data, tgt)
            total_pos += n
    return total_loss / total_pos, correct / total_pos


def train(
    model: Model,
    train_split: data_mod.Split,
    val_split: data_mod.Split,
    cfg: TrainConfig,
    out_dir=None,
    start_epoch: int = 0,
    optimizer: AdamW | None = None,
    rng_state: dict | None = None,
    log=None,
) -> tuple[list[MetricsRecord], AdamW]:
    """Run ``cfg.epochs`` epochs; after each, validate and append a record.

    ``seconds`` in each record is the training pass only (validation time is
    excluded). With ``out_dir`` set, metrics are streamed to CSV/JSONL and a
    checkpoint is written each epoch (retention: last + best validation loss).
    """
    cfg.validate()
    opt = optimizer or AdamW(
        model, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay
    )
    drop_rng = np.random.default_rng([cfg.seed, 0xD120])
    if rng_state is not None:
        drop_rng.bit_generator.state = rng_state
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    records: list[MetricsRecord] = []
    best_val = np.inf
    context = model.config.context

    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        pos_sum = 0
        for batch in data_mod.batches(train_split, context, cfg.batch_size, cfg.seed, epoch):
            model.zero_grads()
            total = batch.inputs.size
            batch_loss = 0.0
            for lo in range(0, batch.inputs.shape[0], cfg.micro_batch):
                inp = batch.inputs[lo : lo + cfg.micro_batch]
                tgt = batch.targets[lo : lo + cfg.micro_batch]
                logits = model.forward(inp, train_mode=True, rng=drop_rng)
                flat = logits.reshape(inp.size, model.config.vocab)
                loss = tn.cross_entropy(flat, tgt.reshape(-1))
                frac = inp.size / total
                (loss * frac).backward()
                batch_loss += float(loss.data) * frac
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            if cfg.grad_clip is not None:
                opt.clip_gradients(cfg.grad_clip)
            opt.step()
            loss_sum += batch_loss * total
            pos_sum += total
        seconds = time.perf_counter() - t0
        train_loss = loss_sum / pos_sum
        val_loss, val_acc = validate(model, val_split, micro_batch=cfg.micro_batch)
        rec = MetricsRecord(epoch, train_loss, val_loss, val_acc, seconds)
        records.append(rec)
        if log:
            log(
                f"epoch {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} "
                f"val_accuracy={val_acc:.4f} seconds={seconds:.1f}"
            )
        if out is not None:
            append_metrics(out, rec)
            rng_snapshot = drop_rng.bit_generator.state
            save_checkpoint(
                model, out / "last.ckpt", epoch=epoch,
                optimizer_state=opt.state_dict(), rng_state=rng_snapshot,
            )
            if val_loss < best_val:
                save_checkpoint(
                    model, out / "best.ckpt", epoch=epoch,
                    optimizer_state=opt.state_dict(), rng_state=rng_snapshot,
                )
        if val_loss < best_val:
            best_val = val_loss
    return records, opt


# ----- metrics files --------------------------------------------------------------


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def append_metrics(out_dir, record: MetricsRecord) -> None:
    out = Path(out_dir)
    csv_path = out / "metrics.csv"
    new = not csv_path.exists()
    with open(csv_path, "a", encoding="utf-8", newline="\n") as f:
        if new:
            f.write(",".join(METRICS_FIELDS) + "\n")
        f.write(",".join(_fmt(getattr(record, k)) for k in METRICS_FIELDS) + "\n")
    with open(out / "metrics.jsonl", "a", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(asdict(record), sort_keys=True) + "\n")


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(METRICS_FIELDS) + "\n")
        for rec in records:
            f.write(",".join(_fmt(getattr(rec, k)) for k in METRICS_FIELDS) + "\n")


def read_metrics_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no metric rows")
    out = []
    for r in rows:
        out.append(
            {
                "epoch": int(r["epoch"]),
                "train_loss": float(r["train_loss"]),
                "val_loss": float(r["val_loss"]),
                "val_accuracy": float(r["val_accuracy"]),
                "seconds": float(r["seconds"]),
            }
        )
    return out


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank for ties
        i = j + 1
    return ranks


def spearman(xs, ys) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("spearman needs two equal-length sequences of size >= 2")
    rx = _ranks(x)
    ry = _ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)
