"""Desk-scale decoder-only language-model laboratory.

A small GPT-style stack where the token-mixing layer is pluggable: dense
causal softmax attention, a family of linear-time hierarchical shift mixers,
or any per-layer hybrid of the two. Includes a from-scratch autodiff tensor
substrate with a finite-difference oracle, a byte-level BPE tokenizer, AdamW
training with metrics recording, temperature sampling, and a benchmark
harness for the linear-vs-quadratic scaling comparison.
"""

__version__ = "0.1.0"

from .mixers import MixerSpec, ShiftSchedule
from .model import ModelConfig, build_model, count_params, balance_ffn_dim
from .tensor import Tensor
from .tokenizer import Vocab, train_bpe

__all__ = [
    "__version__",
    "MixerSpec",
    "ShiftSchedule",
    "ModelConfig",
    "Tensor",
    "Vocab",
    "build_model",
    "count_params",
    "balance_ffn_dim",
    "train_bpe",
]
