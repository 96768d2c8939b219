"""Token-mixing layers.

Two families, both mapping a [T, dim] sequence to a [T, dim] sequence so they
are drop-in interchangeable per layer:

* dense causal multihead softmax attention (every position takes a
  content-weighted sum over all earlier positions), and
* hierarchical shift mixing: each layer combines every position with a single
  copy of the sequence delayed by that layer's shift, so work per layer is
  linear in T. Shifts double across layers so that composition covers all
  offsets. Seven variants: scalar/vector/matrix blends, single- and
  double-input gated blends, fusion, and per-head-shift multihead blends.

All mixers accept [T, dim] or [batch, T, dim] inputs and preserve causality:
output row t never depends on input rows > t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as tn
from .tensor import Tensor, make_op

__all__ = [
    "KINDS",
    "HSM_KINDS",
    "MULTIHEAD_HSM_KINDS",
    "MixerSpec",
    "ShiftSchedule",
    "default_shifts",
    "rotate_shift_schedule",
    "shift_sequence",
    "mix_scalar_ab",
    "mix_vector_ab",
    "mix_matrix_ab",
    "mix_gated_single",
    "mix_gated_double",
    "mix_fusion",
    "dense_attention",
    "build_mixer",
]

DENSE = "dense_attention"
KINDS = (
    DENSE,
    "scalar_ab",
    "vector_ab",
    "matrix_ab",
    "gated_single",
    "gated_double",
    "fusion",
)
HSM_KINDS = KINDS[1:]
# kinds that support per-head operation on feature slices
MULTIHEAD_HSM_KINDS = ("scalar_ab", "gated_double", "fusion")


@dataclass(frozen=True)
class MixerSpec:
    """Description of one layer's mixing function.

    ``shifts`` is empty for dense attention. For shift mixers it holds either
    one shift (applied to all heads) or one shift per head.
    """

    kind: str
    heads: int = 1
    shifts: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(int(s) for s in self.shifts))

    def validate(self, dim: int) -> list[str]:
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        if self.kind not in KINDS:
            problems.append(f"unknown mixer kind {self.kind!r} (choose from {KINDS})")
            return problems
        if self.heads < 1:
            problems.append(f"heads must be >= 1, got {self.heads}")
        if dim % max(self.heads, 1) != 0:
            problems.append(f"dim {dim} not divisible by heads {self.heads}")
        if self.kind == DENSE:
            if self.shifts:
                problems.append("dense_attention takes no shifts")
        else:
            if not self.shifts:
                problems.append(f"{self.kind} requires at least one shift")
            if any(s < 1 for s in self.shifts):
                problems.append(f"shifts must be >= 1, got {self.shifts}")
            if self.heads == 1 and len(self.shifts) != 1:
                problems.append(f"single-head {self.kind} takes exactly one shift")
            if self.heads > 1:
                if self.kind not in MULTIHEAD_HSM_KINDS:
                    problems.append(f"{self.kind} does not support multiple heads")
                if len(self.shifts) not in (1, self.heads):
                    problems.append(
                        f"multihead shifts must have length 1 or heads={self.heads}, "
                        f"got {len(self.shifts)}"
                    )
        return problems

    def per_head_shifts(self) -> tuple[int, ...]:
        if len(self.shifts) == self.heads:
            return self.shifts
        return self.shifts * self.heads

    def to_dict(self) -> dict:
        return {"kind": self.kind, "heads": self.heads, "shifts": list(self.shifts)}

    @classmethod
    def from_dict(cls, d: dict) -> "MixerSpec":
        return cls(kind=d["kind"], heads=int(d.get("heads", 1)), shifts=tuple(d.get("shifts", ())))


@dataclass(frozen=True)
class ShiftSchedule:
    """Per-layer mixer assignment for a full stack."""

    per_layer: tuple[MixerSpec, ...] = field(default_factory=tuple)

    @classmethod
    def doubling(cls, kind: str, layers: int, heads: int = 1) -> "ShiftSchedule":
        """The default hierarchy: layer l mixes at distance 2**l."""
        return cls(tuple(MixerSpec(kind, heads, (2**l,)) for l in range(layers)))


def default_shifts(layers: int) -> tuple[int, ...]:
    return tuple(2**l for l in range(layers))


def rotate_shift_schedule(base, layer: int) -> tuple[int, ...]:
    """Left-rotate a per-head shift list by the layer index."""
    if layer < 0:
        raise ValueError(f"layer index must be >= 0, got {layer}")
    base = tuple(base)
    k = layer % len(base)
    return base[k:] + base[:k]


# ----- core shift op ----------------------------------------------------------


def shift_sequence(x: Tensor, s: int) -> Tensor:
    """Delay the sequence by ``s`` positions along the time axis (axis -2).

    Output row t equals input row t-s for t >= s and the zero vector before
    that, so no future row is ever read. Shifts >= T yield all zeros.
    """
    if s < 1:
        raise ValueError(f"shift must be >= 1, got {s}")
    data = np.zeros_like(x.data)
    t_len = x.shape[-2]
    if s < t_len:
        data[..., s:, :] = x.data[..., : t_len - s, :]

    def bwd(g):
        gi = np.zeros_like(x.data)
        if s < t_len:
            gi[..., : t_len - s, :] = g[..., s:, :]
        x._accum(gi)

    return make_op(data, (x,), bwd)


# ----- functional mixing ops ----------------------------------------------------


def mix_scalar_ab(x: Tensor, x_shifted: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Blend with two learned scalars, shared across the layer: a*x + b*x_shifted."""
    return x * a + x_shifted * b


def mix_vector_ab(x: Tensor, x_shifted: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Per-feature blend with learned coefficient vectors."""
    return x * a + x_shifted * b


def mix_matrix_ab(x: Tensor, x_shifted: Tensor, a_map: Tensor, b_map: Tensor, bias: Tensor) -> Tensor:
    """The most general linear combination: A x + B x_shifted + bias per row."""
    if a_map.shape[0] != a_map.shape[1] or b_map.shape[0] != b_map.shape[1]:
        raise tn.ShapeError(f"matrix mix maps must be square, got {a_map.shape}, {b_map.shape}")
    return x @ a_map.transpose() + x_shifted @ b_map.transpose() + bias


def mix_gated_single(x: Tensor, x_shifted: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Content-dependent blend gated by the current token only.

    gate = tanh(mlp(x)) lies strictly in (-1, 1); y = gate*x + (1-gate)*x_shifted.
    """
    gate = tn.tanh(tn.relu(x @ w1 + b1) @ w2 + b2)
    return gate * x + (1.0 - gate) * x_shifted


def mix_gated_double(x: Tensor, x_shifted: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Blend gated by both inputs: gate = tanh(L(concat(x, x_shifted)))."""
    gate = tn.tanh(tn.concat([x, x_shifted], axis=-1) @ w + b)
    return gate * x + (1.0 - gate) * x_shifted


def mix_fusion(x: Tensor, x_shifted: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Learned network maps concat(x, x_shifted) directly to new features."""
    h = tn.relu(tn.concat([x, x_shifted], axis=-1) @ w1 + b1)
    return h @ w2 + b2


@lru_cache(maxsize=None)
def causal_mask(t_len: int) -> np.ndarray:
    """Boolean [T, T] mask: position t may attend to positions <= t."""
    return np.tril(np.ones((t_len, t_len), dtype=bool))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _join_heads(x: Tensor) -> Tensor:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def dense_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    bq: Tensor | None = None,
    bk: Tensor | None = None,
    bv: Tensor | None = None,
    bo: Tensor | None = None,
) -> Tensor:
    """Dense causal multihead softmax attention over a [.., T, dim] sequence.

    Scores are scaled by 1/sqrt(head_dim); each row's weights are nonnegative,
    sum to 1, and cover only positions <= t.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    dim = x.shape[-1]
    if dim % heads != 0:
        raise ValueError(f"dim {dim} not divisible by heads {heads}")
    head_dim = dim // heads
    q = x @ wq
    k = x @ wk
    v = x @ wv
    if bq is not None:
        q = q + bq
    if bk is not None:
        k = k + bk
    if bv is not None:
        v = v + bv
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    # python-float scale so float32 activations stay float32
    scores = qh @ kh.transpose(0, 1, 3, 2) * float(1.0 / np.sqrt(head_dim))
    weights = tn.softmax_rows(scores, mask=causal_mask(x.shape[-2]))
    out = _join_heads(weights @ vh) @ wo
    if bo is not None:
        out = out + bo
    if squeeze:
        out = out[0]
    return out


# ----- parameterized mixer layers ---------------------------------------------


class DenseAttentionMixer:
    def __init__(self, dim: int, spec: MixerSpec, add_param, rng, dtype):
        self.heads = spec.heads
        self.wq = add_param("wq", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.bq = add_param("bq", np.zeros(dim, dtype=dtype))
        self.wk = add_param("wk", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.bk = add_param("bk", np.zeros(dim, dtype=dtype))
        self.wv = add_param("wv", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.bv = add_param("bv", np.zeros(dim, dtype=dtype))
        self.wo = add_param("wo", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.bo = add_param("bo", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return dense_attention(
            x, self.wq, self.wk, self.wv, self.wo, self.heads,
            self.bq, self.bk, self.bv, self.bo,
        )


class ScalarMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.a = add_param("a", np.asarray(0.5, dtype=dtype))
        self.b = add_param("b", np.asarray(0.5, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_scalar_ab(x, shift_sequence(x, self.shift), self.a, self.b)


class VectorMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.a = add_param("a", np.full(dim, 0.5, dtype=dtype))
        self.b = add_param("b", np.full(dim, 0.5, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_vector_ab(x, shift_sequence(x, self.shift), self.a, self.b)


class MatrixMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.a_map = add_param("A", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.b_map = add_param("B", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.bias = add_param("bias", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_matrix_ab(x, shift_sequence(x, self.shift), self.a_map, self.b_map, self.bias)


class GatedSingleMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.w1 = add_param("w1", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.b1 = add_param("b1", np.zeros(dim, dtype=dtype))
        self.w2 = add_param("w2", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.b2 = add_param("b2", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_gated_single(x, shift_sequence(x, self.shift), self.w1, self.b1, self.w2, self.b2)


class GatedDoubleMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.w = add_param("w", rng.normal(0, 0.02, (2 * dim, dim)).astype(dtype))
        self.b = add_param("b", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_gated_double(x, shift_sequence(x, self.shift), self.w, self.b)


class FusionMixer:
    def __init__(self, dim: int, shift: int, add_param, rng, dtype):
        self.shift = shift
        self.w1 = add_param("w1", rng.normal(0, 0.02, (2 * dim, dim)).astype(dtype))
        self.b1 = add_param("b1", np.zeros(dim, dtype=dtype))
        self.w2 = add_param("w2", rng.normal(0, 0.02, (dim, dim)).astype(dtype))
        self.b2 = add_param("b2", np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return mix_fusion(x, shift_sequence(x, self.shift), self.w1, self.b1, self.w2, self.b2)


_SINGLE_HEAD = {
    "scalar_ab": ScalarMixer,
    "vector_ab": VectorMixer,
    "matrix_ab": MatrixMixer,
    "gated_single": GatedSingleMixer,
    "gated_double": GatedDoubleMixer,
    "fusion": FusionMixer,
}


class MultiheadShiftMixer:
    """Feature dimension split into contiguous head slices; head i mixes its
    slice with its own shift, results concatenated in order."""

    def __init__(self, dim: int, spec: MixerSpec, add_param, rng, dtype):
        self.heads = spec.heads
        self.head_dim = dim // spec.heads
        self.sub = []
        for i, s in enumerate(spec.per_head_shifts()):
            def scoped_add(name, arr, _i=i):
                return add_param(f"head{_i}.{name}", arr)

            self.sub.append(_SINGLE_HEAD[spec.kind](self.head_dim, s, scoped_add, rng, dtype))

    def forward(self, x: Tensor) -> Tensor:
        hd = self.head_dim
        outs = [m.forward(x[..., i * hd : (i + 1) * hd]) for i, m in enumerate(self.sub)]
        return tn.concat(outs, axis=-1)


def build_mixer(dim: int, spec: MixerSpec, add_param, rng, dtype=np.float64):
    """Instantiate the mixer a MixerSpec describes.

    ``add_param(name, array) -> Tensor`` registers each parameter with the
    caller (the model owns naming and bookkeeping).
    """
    problems = spec.validate(dim)
    if problems:
        raise ValueError("invalid mixer spec: " + "; ".join(problems))
    if spec.kind == DENSE:
        return DenseAttentionMixer(dim, spec, add_param, rng, dtype)
    if spec.heads > 1:
        return MultiheadShiftMixer(dim, spec, add_param, rng, dtype)
    return _SINGLE_HEAD[spec.kind](dim, spec.shifts[0], add_param, rng, dtype)
