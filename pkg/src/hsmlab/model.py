"""Decoder stack assembly and persistence.

Pipeline: token embedding + learned positional encoding, then pre-norm blocks
(h += Mixer(LN(h)); h += FFN(LN(h))), a final layer norm, and a tied
unembedding (logits = h @ embedding^T, no extra bias). Each block's mixer is
pluggable per layer, so dense-attention, shift-mixing, and hybrid stacks are
all just configurations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import mixers, tensor as tn
from .mixers import MixerSpec
from .tensor import Tensor

__all__ = [
    "ConfigError",
    "ModelConfig",
    "Model",
    "build_model",
    "count_params",
    "balance_ffn_dim",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointShapeError",
    "CheckpointTruncatedError",
    "CheckpointConfigError",
]


class ConfigError(ValueError):
    """Invalid model configuration; message lists every violation."""


@dataclass(frozen=True)
class ModelConfig:
    """Complete architecture description."""

    dim: int = 256
    context: int = 128
    vocab: int = 5000
    ffn_hidden: int = 512
    dropout: float = 0.1
    layers: tuple[MixerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def validate(self) -> None:
        problems = []
        if self.dim < 1:
            problems.append(f"dim must be >= 1, got {self.dim}")
        if self.context < 1:
            problems.append(f"context must be >= 1, got {self.context}")
        if self.vocab < 1:
            problems.append(f"vocab must be >= 1, got {self.vocab}")
        if self.ffn_hidden < 1:
            problems.append(f"ffn_hidden must be >= 1, got {self.ffn_hidden}")
        if not 0.0 <= self.dropout < 1.0:
            problems.append(f"dropout must be in [0, 1), got {self.dropout}")
        for i, spec in enumerate(self.layers):
            for p in spec.validate(self.dim):
                problems.append(f"layer {i}: {p}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "context": self.context,
            "vocab": self.vocab,
            "ffn_hidden": self.ffn_hidden,
            "dropout": self.dropout,
            "layers": [s.to_dict() for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            dim=int(d["dim"]),
            context=int(d["context"]),
            vocab=int(d["vocab"]),
            ffn_hidden=int(d["ffn_hidden"]),
            dropout=float(d.get("dropout", 0.1)),
            layers=tuple(MixerSpec.from_dict(s) for s in d.get("layers", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls.from_dict(json.loads(text))

    def with_ffn(self, ffn_hidden: int) -> "ModelConfig":
        return replace(self, ffn_hidden=ffn_hidden)

    def with_vocab(self, vocab: int) -> "ModelConfig":
        return replace(self, vocab=vocab)


class _LayerNormParams:
    def __init__(self, dim, add_param, dtype):
        self.g = add_param("g", np.ones(dim, dtype=dtype))
        self.b = add_param("b", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.g, self.b)


class _FeedForward:
    def __init__(self, dim, hidden, add_param, rng, dtype):
        self.w1 = add_param("w1", rng.normal(0, 0.02, (dim, hidden)).astype(dtype))
        self.b1 = add_param("b1", np.zeros(hidden, dtype=dtype))
        self.w2 = add_param("w2", rng.normal(0, 0.02, (hidden, dim)).astype(dtype))
        self.b2 = add_param("b2", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return tn.gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2


class _Block:
    def __init__(self, i, cfg, spec, add_param, rng, dtype):
        def scoped(prefix):
            return lambda name, arr: add_param(f"layers.{i}.{prefix}.{name}", arr)

        self.ln1 = _LayerNormParams(cfg.dim, scoped("ln1"), dtype)
        self.mixer = mixers.build_mixer(cfg.dim, spec, scoped("mixer"), rng, dtype)
        self.ln2 = _LayerNormParams(cfg.dim, scoped("ln2"), dtype)
        self.ffn = _FeedForward(cfg.dim, cfg.ffn_hidden, scoped("ffn"), rng, dtype)


class Model:
    """Decoder-only language model with per-layer pluggable mixers.

    Parameters are immutable during forward; the optimizer is the single
    writer. The embedding table is tied: the same tensor embeds tokens and
    projects the final hidden states to logits.
    """

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float64):
        try:
            config.validate()
        except ConfigError:
            raise
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)

        def add_param(name: str, arr: np.ndarray) -> Tensor:
            if name in self._params:
                raise ValueError(f"duplicate parameter name {name}")
            t = Tensor(np.ascontiguousarray(arr, dtype=self.dtype), requires_grad=True, name=name)
            self._params[name] = t
            return t

        self.wte = add_param("wte", rng.normal(0, 0.02, (config.vocab, config.dim)))
        self.wpe = add_param("wpe", rng.normal(0, 0.02, (config.context, config.dim)))
        self.blocks = [
            _Block(i, config, spec, add_param, rng, self.dtype)
            for i, spec in enumerate(config.layers)
        ]
        self.ln_f = _LayerNormParams(config.dim, lambda n, a: add_param(f"ln_f.{n}", a), self.dtype)

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def decay_flags(self) -> dict[str, bool]:
        # weight decay applies to matrices only; biases, norm params, and the
        # scalar/vector blend weights are excluded
        return {name: t.data.ndim >= 2 for name, t in self._params.items()}

    def zero_grads(self) -> None:
        tn.zero_grads(self._params.values())

    def forward(self, tokens, train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Logits for each position: [T, vocab] for a 1-d token sequence,
        [batch, T, vocab] for a batch. Dropout is active only in train mode."""
        ids = np.asarray(tokens, dtype=np.int64)
        single = ids.ndim == 1
        if single:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise ValueError(f"tokens must be 1-d or 2-d, got shape {ids.shape}")
        t_len = ids.shape[1]
        if t_len < 1 or t_len > self.config.context:
            raise ValueError(
                f"sequence length {t_len} outside [1, context={self.config.context}]"
            )
        p = self.config.dropout
        h = tn.embedding(self.wte, ids) + self.wpe[:t_len]
        h = tn.dropout(h, p, rng, train_mode)
        for block in self.blocks:
            h = h + tn.dropout(block.mixer.forward(block.ln1(h)), p, rng, train_mode)
            h = h + tn.dropout(block.ffn(block.ln2(h)), p, rng, train_mode)
        h = self.ln_f(h)
        logits = h @ self.wte.transpose()
        return logits[0] if single else logits


def build_model(config: ModelConfig, seed: int, dtype=np.float64) -> Model:
    """Deterministic model construction: same (config, seed, dtype) gives
    bit-identical parameters."""
    return Model(config, seed, dtype)


def count_params(model: Model) -> int:
    """Element count over unique trainable tensors (tied embedding counted once)."""
    seen: set[int] = set()
    total = 0
    for t in model.parameters().values():
        if id(t) not in seen:
            seen.add(id(t))
            total += t.size
    return total


def _count_at_ffn(cfg: ModelConfig, ffn_hidden: int) -> int:
    return count_params(build_model(cfg.with_ffn(ffn_hidden), seed=0))


def balance_ffn_dim(cfg: ModelConfig, target_params: int) -> int:
    """FFN width whose total parameter count lands closest to the target.

    The count is linear in ffn_hidden, so solve, then scan +-2 around the
    solution; ties pick the smaller width.
    """
    if not cfg.layers:
        raise ConfigError("balance_ffn_dim: config has no layers, so no FFN to size")
    c1 = _count_at_ffn(cfg, 1)
    c2 = _count_at_ffn(cfg, 2)
    per_unit = c2 - c1
    if target_params < c1:
        raise ConfigError(
            f"target {target_params} unreachable: minimum is {c1} at ffn_hidden=1 "
            f"(+{per_unit} per extra hidden unit)"
        )
    guess = int(round((target_params - c1) / per_unit)) + 1
    best = None
    for f in range(max(1, guess - 2), guess + 3):
        count = c1 + (f - 1) * per_unit
        err = abs(count - target_params)
        if best is None or err < best[0] or (err == best[0] and f < best[1]):
            best = (err, f)
    return best[1]


# ----- checkpoints --------------------------------------------------------------


class CheckpointError(RuntimeError):
    """Base class for checkpoint read/write problems."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


_CKPT_MAGIC = b"HSMLCKPT"
_CKPT_VERSION = 1
_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(
    model: Model,
    path,
    epoch: int = 0,
    optimizer_state: dict | None = None,
    rng_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Versioned binary checkpoint: JSON header + little-endian raw tensors."""
    names = list(model.parameters())
    dtype_name = model.dtype.name
    entries = [{"name": n, "role": "param", "shape": list(model.parameters()[n].shape)} for n in names]
    blobs = [model.parameters()[n].data.astype(_DTYPE_TAGS[dtype_name]).tobytes() for n in names]
    opt_header = None
    if optimizer_state is not None:
        opt_header = {"step": optimizer_state["step"]}
        for role in ("m", "v"):
            for n in names:
                arr = optimizer_state[role][n]
                entries.append({"name": n, "role": f"adam_{role}", "shape": list(arr.shape)})
                blobs.append(np.asarray(arr).astype(_DTYPE_TAGS[dtype_name]).tobytes())
    header = {
        "version": _CKPT_VERSION,
        "config": model.config.to_dict(),
        "dtype": dtype_name,
        "seed": model.seed,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "optimizer": opt_header,
        "extra": extra or {},
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(_CKPT_VERSION.to_bytes(4, "little"))
        f.write(len(hbytes).to_bytes(8, "little"))
        f.write(hbytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(path, config: ModelConfig | None = None, dtype=None) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint.

    If ``config`` is given it must match the stored one exactly. Returns the
    model and a metadata dict with epoch, rng_state, optimizer_state, extra.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(_CKPT_MAGIC) + 12 or raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(_CKPT_MAGIC)
    version = int.from_bytes(raw[off : off + 4], "little")
    if version != _CKPT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {_CKPT_VERSION}")
    off += 4
    hlen = int.from_bytes(raw[off : off + 8], "little")
    off += 8
    if off + hlen > len(raw):
        raise CheckpointTruncatedError(f"{path}: header extends past end of file")
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen

    stored_cfg = ModelConfig.from_dict(header["config"])
    if config is not None and config.to_dict() != stored_cfg.to_dict():
        diffs = _config_diff(config.to_dict(), stored_cfg.to_dict())
        raise CheckpointConfigError(f"{path}: checkpoint config differs from expected: {diffs}")
    stored_dtype = header["dtype"]
    np_tag = _DTYPE_TAGS[stored_dtype]
    model = Model(stored_cfg, seed=header.get("seed", 0), dtype=dtype or stored_dtype)
    params = model.parameters()

    arrays: dict[tuple[str, str], np.ndarray] = {}
    itemsize = np.dtype(np_tag).itemsize
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if off + count * itemsize > len(raw):
            raise CheckpointTruncatedError(f"{path}: data for {entry['name']} truncated")
        arr = np.frombuffer(raw, dtype=np_tag, count=count, offset=off).reshape(shape).copy()
        off += count * itemsize
        arrays[(entry["role"], entry["name"])] = arr

    for name, t in params.items():
        key = ("param", name)
        if key not in arrays:
            raise CheckpointShapeError(f"{path}: missing tensor {name}")
        arr = arrays[key]
        if arr.shape != t.shape:
            raise CheckpointShapeError(
                f"{path}: tensor {name} has shape {arr.shape}, model expects {t.shape}"
            )
        t.data = np.ascontiguousarray(arr, dtype=model.dtype)

    optimizer_state = None
    if header.get("optimizer") is not None:
        optimizer_state = {
            "step": int(header["optimizer"]["step"]),
            "m": {n: arrays[("adam_m", n)].astype(model.dtype) for n in params},
            "v": {n: arrays[("adam_v", n)].astype(model.dtype) for n in params},
        }
    meta = {
        "epoch": int(header.get("epoch", 0)),
        "rng_state": header.get("rng_state"),
        "optimizer_state": optimizer_state,
        "extra": header.get("extra", {}),
    }
    return model, meta


def _config_diff(a: dict, b: dict) -> str:
    keys = sorted(set(a) | set(b))
    diffs = [f"{k}: {a.get(k)!r} != {b.get(k)!r}" for k in keys if a.get(k) != b.get(k)]
    return "; ".join(diffs)
