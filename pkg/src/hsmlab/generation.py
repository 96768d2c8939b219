"""Autoregressive text generation with temperature-controlled sampling.

Each step recomputes a full-context forward pass (no KV cache; fine at a
128-token window) and, once the window fills, slides it to keep the most
recent ``context`` tokens.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .model import Model
from .tokenizer import Vocab

__all__ = ["sample_from_logits", "generate"]


def sample_from_logits(logits, temperature: float, rng: np.random.Generator) -> int:
    """Temperature 0 picks the argmax (lowest index on ties); otherwise sample
    from softmax(logits / temperature)."""
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    z = np.asarray(logits.data if isinstance(logits, tn.Tensor) else logits, dtype=np.float64)
    z = z.reshape(-1)
    if temperature == 0.0:
        return int(np.argmax(z))
    z = z / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def generate(
    model: Model,
    vocab: Vocab,
    prompt: str,
    max_new: int,
    temperature: float = 1.0,
    seed: int = 0,
) -> str:
    """Return prompt + completion, deterministic per seed."""
    ids = vocab.encode(prompt)
    if not ids:
        raise ValueError("prompt encodes to zero tokens")
    rng = np.random.default_rng(seed)
    context = model.config.context
    out = list(ids)
    with tn.no_grad():
        for _ in range(max_new):
            window = np.asarray(out[-context:], dtype=np.int64)
            logits = model.forward(window, train_mode=False)
            out.append(sample_from_logits(logits.data[-1], temperature, rng))
    return vocab.decode(out)
