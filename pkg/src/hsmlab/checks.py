"""Structural verification suites: finite-difference gradient checks,
causality perturbation tests, and receptive-field coverage.

These run at float64 on small shapes; the finite-difference oracle is
independent of the tape-based backward pass it certifies.
"""

from __future__ import annotations

import numpy as np

from . import mixers, tensor as tn
from .mixers import MixerSpec
from .model import ModelConfig, build_model
from .tensor import Tensor, finite_difference_check

__all__ = [
    "GRADCHECK_TOLERANCE",
    "check_configs",
    "gradcheck_mixer",
    "gradcheck_model",
    "gradcheck_report",
    "causality_mixer",
    "causality_model",
    "causality_report",
    "influence_mask",
]

GRADCHECK_TOLERANCE = 1e-4

# one spec per checkable mixer configuration: the 6 single-head shift mixers,
# the per-head-shift multihead variants, and dense attention
_CHECK_SPECS: dict[str, MixerSpec] = {
    "dense_attention": MixerSpec("dense_attention", heads=2),
    "scalar_ab": MixerSpec("scalar_ab", shifts=(1,)),
    "vector_ab": MixerSpec("vector_ab", shifts=(2,)),
    "matrix_ab": MixerSpec("matrix_ab", shifts=(1,)),
    "gated_single": MixerSpec("gated_single", shifts=(2,)),
    "gated_double": MixerSpec("gated_double", shifts=(1,)),
    "fusion": MixerSpec("fusion", shifts=(2,)),
    "multihead_scalar_ab": MixerSpec("scalar_ab", heads=2, shifts=(1, 2)),
    "multihead_gated_double": MixerSpec("gated_double", heads=2, shifts=(1, 2)),
    "multihead_fusion": MixerSpec("fusion", heads=2, shifts=(2,)),
}


def check_configs(which: str = "all") -> dict[str, MixerSpec]:
    if which == "all":
        return dict(_CHECK_SPECS)
    if which == "multihead":
        return {k: v for k, v in _CHECK_SPECS.items() if k.startswith("multihead")}
    if which in _CHECK_SPECS:
        return {which: _CHECK_SPECS[which]}
    raise ValueError(f"unknown mixer config {which!r} (choose from {sorted(_CHECK_SPECS)} or 'all')")


def _build_bare_mixer(spec: MixerSpec, dim: int, rng):
    params: dict[str, Tensor] = {}

    def add_param(name, arr):
        t = Tensor(arr, requires_grad=True, name=name)
        params[name] = t
        return t

    mixer = mixers.build_mixer(dim, spec, add_param, rng, dtype=np.float64)
    return mixer, params


def gradcheck_mixer(name: str, t_len: int = 6, dim: int = 8, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative gradient error over the mixer's input and every parameter.

    The loss is a fixed random weighting of the output so every output element
    influences the scalar being differentiated.
    """
    spec = _CHECK_SPECS[name]
    rng = np.random.default_rng([seed, 1])
    mixer, params = _build_bare_mixer(spec, dim, rng)
    x = Tensor(rng.standard_normal((t_len, dim)), requires_grad=True)
    weights = rng.standard_normal((t_len, dim))

    def loss_fn(_):
        return (mixer.forward(x) * weights).sum()

    worst = 0.0
    for leaf in [x, *params.values()]:
        tn.zero_grads([x, *params.values()])
        worst = max(worst, finite_difference_check(loss_fn, leaf, h=h))
    return worst


def _micro_config(spec_name: str) -> ModelConfig:
    spec = _CHECK_SPECS[spec_name]
    return ModelConfig(dim=8, context=8, vocab=11, ffn_hidden=12, dropout=0.0, layers=(spec, spec))


def gradcheck_model(spec_name: str, h: float = 1e-5, seed: int = 0) -> float:
    """Full-stack check on a micro model (dim 8, context 8, vocab 11, 2 layers):
    cross-entropy loss against every parameter."""
    cfg = _micro_config(spec_name)
    model = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 2])
    tokens = rng.integers(0, cfg.vocab, size=cfg.context)
    targets = rng.integers(0, cfg.vocab, size=cfg.context)

    def loss_fn(_):
        return tn.cross_entropy(model.forward(tokens), targets)

    worst = 0.0
    for leaf in model.parameters().values():
        model.zero_grads()
        worst = max(worst, finite_difference_check(loss_fn, leaf, h=h))
    return worst


def gradcheck_report(which: str = "all", seed: int = 0) -> list[dict]:
    """Run mixer-level and full-model gradient checks; one row per check."""
    rows = []
    for name in check_configs(which):
        err = gradcheck_mixer(name, seed=seed)
        rows.append(
            {
                "check": f"mixer/{name}",
                "max_rel_err": err,
                "tolerance": GRADCHECK_TOLERANCE,
                "passed": err < GRADCHECK_TOLERANCE,
            }
        )
        err = gradcheck_model(name, seed=seed)
        rows.append(
            {
                "check": f"model/{name}",
                "max_rel_err": err,
                "tolerance": GRADCHECK_TOLERANCE,
                "passed": err < GRADCHECK_TOLERANCE,
            }
        )
    return rows


# ----- causality ------------------------------------------------------------------


def causality_mixer(name: str, cases: int = 100, t_len: int = 10, dim: int = 8, seed: int = 0) -> int:
    """Perturb row j of the input; rows before j must be bit-unchanged.
    Returns the number of violations over ``cases`` random (input, j) pairs."""
    spec = _CHECK_SPECS[name]
    rng = np.random.default_rng([seed, 3])
    mixer, _ = _build_bare_mixer(spec, dim, rng)
    violations = 0
    with tn.no_grad():
        for _ in range(cases):
            x = rng.standard_normal((t_len, dim))
            j = int(rng.integers(1, t_len))
            base = mixer.forward(Tensor(x)).data
            x2 = x.copy()
            x2[j] += rng.standard_normal(dim)
            pert = mixer.forward(Tensor(x2)).data
            if not np.array_equal(base[:j], pert[:j]):
                violations += 1
    return violations


def causality_model(spec_name: str, cases: int = 100, seed: int = 0) -> int:
    """Replace token j; logits at positions before j must be bit-unchanged
    (eval mode). Returns the violation count."""
    cfg = _micro_config(spec_name)
    model = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 4])
    violations = 0
    with tn.no_grad():
        for _ in range(cases):
            tokens = rng.integers(0, cfg.vocab, size=cfg.context)
            j = int(rng.integers(1, cfg.context))
            base = model.forward(tokens).data
            mutated = tokens.copy()
            mutated[j] = (mutated[j] + 1 + rng.integers(0, cfg.vocab - 1)) % cfg.vocab
            pert = model.forward(mutated).data
            if not np.array_equal(base[:j], pert[:j]):
                violations += 1
    return violations


def causality_report(which: str = "all", cases: int = 100, seed: int = 0) -> list[dict]:
    rows = []
    for name in check_configs(which):
        v = causality_mixer(name, cases=cases, seed=seed)
        rows.append({"check": f"mixer/{name}", "cases": cases, "violations": v, "passed": v == 0})
        v = causality_model(name, cases=cases, seed=seed)
        rows.append({"check": f"model/{name}", "cases": cases, "violations": v, "passed": v == 0})
    return rows


# ----- receptive field ---------------------------------------------------------------


def influence_mask(shifts, t_len: int) -> np.ndarray:
    """Boolean [T, T]: entry (t, j) true when input position j can influence
    output position t through a stack with the given per-layer shifts.

    Brute-force jacobian oracle in a linear proxy: each layer is a scalar
    blend with a=b=1 (y = x + x_shifted), so influence is exactly the nonzero
    pattern under basis inputs.
    """
    one = Tensor(np.asarray(1.0))
    mask = np.zeros((t_len, t_len), dtype=bool)
    with tn.no_grad():
        for j in range(t_len):
            x = np.zeros((t_len, 1))
            x[j, 0] = 1.0
            h = Tensor(x)
            for s in shifts:
                h = mixers.mix_scalar_ab(h, mixers.shift_sequence(h, s), one, one)
            mask[:, j] = h.data[:, 0] != 0.0
    return mask
