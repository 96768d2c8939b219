"""Corpus ingestion, filtering, train/validation splitting, and batching.

Stories stay separate end to end: training windows are drawn within a single
story, never across a boundary, so no separator token is needed. Stories
shorter than the context window are dropped before the split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tokenizer import Vocab

__all__ = [
    "DataError",
    "Corpus",
    "Split",
    "Batch",
    "load_corpus",
    "filter_and_split",
    "batches",
    "dataset_stats",
]


class DataError(ValueError):
    pass


@dataclass
class Corpus:
    stories: list[str]
    source: str = ""


@dataclass
class Split:
    """Tokenized stories ready for windowing."""

    stories: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.stories)


@dataclass
class Batch:
    """targets[i][t] is the token following inputs[i][t] in the source window."""

    inputs: np.ndarray
    targets: np.ndarray


def load_corpus(path, format: str = "plain") -> Corpus:
    """Read one story per record; ``format`` is "plain" (one story per line)
    or "jsonl" (objects with a "text" field). Empty records are dropped."""
    if format not in ("plain", "jsonl"):
        raise DataError(f"unknown corpus format {format!r} (use 'plain' or 'jsonl')")
    stories: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if format == "plain":
                stories.append(line)
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"{path}:{lineno}: malformed JSON line: {e}") from None
                if not isinstance(obj, dict) or "text" not in obj:
                    raise DataError(f"{path}:{lineno}: JSON record lacks a 'text' field")
                if obj["text"].strip():
                    stories.append(obj["text"])
    if not stories:
        raise DataError(f"{path}: corpus is empty")
    return Corpus(stories, source=str(path))


def filter_and_split(
    corpus: Corpus,
    vocab: Vocab,
    context: int,
    val_fraction: float = 0.10,
    seed: int = 0,
) -> tuple[Split, Split]:
    """Tokenize, drop stories strictly shorter than ``context`` tokens, then
    split by a seeded shuffle. Filtering happens before splitting, so the
    validation set never contains a sub-context story."""
    if not 0.0 < val_fraction < 1.0:
        raise DataError(f"val_fraction must be in (0, 1), got {val_fraction}")
    kept = []
    for story in corpus.stories:
        ids = np.asarray(vocab.encode(story), dtype=np.int32)
        if len(ids) >= context:
            kept.append(ids)
    if not kept:
        raise DataError(
            f"all {len(corpus.stories)} stories are shorter than the context window ({context})"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(kept))
    n_val = max(1, int(round(len(kept) * val_fraction)))
    if n_val >= len(kept):
        n_val = len(kept) - 1
    if n_val < 1:
        raise DataError("not enough stories to form both splits")
    val_idx = set(order[:n_val].tolist())
    train = [kept[i] for i in range(len(kept)) if i not in val_idx]
    val = [kept[i] for i in range(len(kept)) if i in val_idx]
    return Split(train), Split(val)


def batches(split: Split, context: int, batch_size: int, seed: int, epoch: int = 0):
    """Yield one window per story per epoch, in seeded-shuffled order.

    A story of length >= context+1 contributes a full window of context+1
    tokens at a fresh random offset each epoch. A story of exactly context
    tokens is kept but trimmed: its window yields context-1 positions.
    Batches are rectangular, so windows are grouped by width. The stream is
    fully determined by (split, seed, epoch).
    """
    if not split.stories:
        raise DataError("batches: empty split")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(split.stories))
    buffers: dict[int, list[np.ndarray]] = {}
    pending: list[Batch] = []
    for idx in order:
        ids = split.stories[idx]
        n = len(ids)
        if n >= context + 1:
            off = int(rng.integers(0, n - context))
            window = ids[off : off + context + 1]
        else:  # n == context exactly (shorter ones were filtered out)
            window = ids
        width = len(window) - 1
        buf = buffers.setdefault(width, [])
        buf.append(window)
        if len(buf) == batch_size:
            yield _make_batch(buf)
            buffers[width] = []
    for width in sorted(buffers):
        if buffers[width]:
            yield _make_batch(buffers[width])


def _make_batch(windows: list[np.ndarray]) -> Batch:
    arr = np.stack(windows).astype(np.int64)
    return Batch(inputs=arr[:, :-1], targets=arr[:, 1:])


def dataset_stats(corpus: Corpus, vocab: Vocab, context: int) -> dict:
    """Ingestion report: story/token counts and how many stories the context
    filter removed."""
    token_count = 0
    filtered = 0
    for story in corpus.stories:
        n = len(vocab.encode(story))
        token_count += n
        if n < context:
            filtered += 1
    return {
        "story_count": len(corpus.stories),
        "token_count": token_count,
        "filtered_count": filtered,
        "kept_count": len(corpus.stories) - filtered,
        "context": context,
    }
