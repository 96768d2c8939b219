"""Timing harness for the complexity claims.

Per mixer kind, the forward mixing work is timed over a grid of sequence
lengths and a log-log slope is fit: shift mixing should scale ~linearly in T,
the dense-attention score computation ~quadratically. For dense attention a
separate "scores" component isolates the QK^T/softmax/weighted-sum part from
the linear projections, which are themselves linear in T and would otherwise
dilute the quadratic signal at small T.
"""

from __future__ import annotations

import time

import numpy as np

from . import mixers, tensor as tn
from .mixers import MixerSpec
from .tensor import Tensor

__all__ = ["BENCH_CSV_FIELDS", "bench_batch_size", "run_bench", "fit_slopes", "loglog_slope"]

BENCH_CSV_FIELDS = ("mixer", "component", "T", "dim", "heads", "batch", "repeats", "median_seconds")

# elementwise mixers need a bigger batch so measured time is compute, not
# call overhead; matmul-heavy mixers reach that with a small one
_HEAVY = ("matrix_ab", "gated_single", "gated_double", "fusion", mixers.DENSE)


def bench_batch_size(kind: str) -> int:
    return 16 if kind in _HEAVY else 128


def _median_time(fn, repeats: int) -> float:
    fn()
    fn()  # warmup twice: allocator and cache state settle
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _repeats_for(t_len: int, lengths, repeats: int) -> int:
    # equalize sampling effort across the grid: short sequences run more
    # often so their medians are as stable as the long ones
    return repeats * max(1, min(16, max(lengths) // t_len))


_BENCH_DTYPE = np.float32  # training-speed dtype; keeps big-T arrays cache-friendly


def _build(kind: str, t_len: int, dim: int, heads: int, rng) -> tuple:
    params = {}

    def add_param(name, arr):
        t = Tensor(arr.astype(_BENCH_DTYPE))
        params[name] = t
        return t

    if kind == mixers.DENSE:
        spec = MixerSpec(mixers.DENSE, heads=heads)
    else:
        spec = MixerSpec(kind, heads=1, shifts=(min(4, t_len),))
    mixer = mixers.build_mixer(dim, spec, add_param, rng, dtype=_BENCH_DTYPE)
    x = Tensor(rng.standard_normal((bench_batch_size(kind), t_len, dim)).astype(_BENCH_DTYPE))
    return mixer, x


def _score_component_fn(t_len: int, dim: int, heads: int, batch: int, rng):
    head_dim = dim // heads
    q = Tensor(rng.standard_normal((batch, heads, t_len, head_dim)).astype(_BENCH_DTYPE))
    k = Tensor(rng.standard_normal((batch, heads, t_len, head_dim)).astype(_BENCH_DTYPE))
    v = Tensor(rng.standard_normal((batch, heads, t_len, head_dim)).astype(_BENCH_DTYPE))
    mask = mixers.causal_mask(t_len)
    scale = float(1.0 / np.sqrt(head_dim))

    def fn():
        with tn.no_grad():
            weights = tn.softmax_rows(q @ k.transpose(0, 1, 3, 2) * scale, mask=mask)
            return weights @ v

    return fn


def run_bench(
    kinds,
    lengths,
    repeats: int = 5,
    dim: int = 256,
    heads: int = 8,
    include_backward: bool = False,
    seed: int = 0,
) -> list[dict]:
    """Median forward (optionally +backward) time per mixer per length."""
    rows = []
    for kind in kinds:
        if kind not in mixers.KINDS:
            raise ValueError(f"unknown mixer kind {kind!r}")
        batch = bench_batch_size(kind)
        for t_len in lengths:
            rng = np.random.default_rng([seed, t_len])
            mixer, x = _build(kind, t_len, dim, heads, rng)

            if include_backward:
                x.requires_grad = True

                def fn():
                    x.grad = None
                    out = mixer.forward(x)
                    out.sum().backward()

            else:

                def fn():
                    with tn.no_grad():
                        mixer.forward(x)

            n_rep = _repeats_for(t_len, lengths, repeats)
            rows.append(
                {
                    "mixer": kind,
                    "component": "mixing",
                    "T": t_len,
                    "dim": dim,
                    "heads": heads if kind == mixers.DENSE else 1,
                    "batch": batch,
                    "repeats": n_rep,
                    "median_seconds": _median_time(fn, n_rep),
                }
            )
            if kind == mixers.DENSE and not include_backward:
                fn_scores = _score_component_fn(t_len, dim, heads, 16, rng)
                rows.append(
                    {
                        "mixer": kind,
                        "component": "scores",
                        "T": t_len,
                        "dim": dim,
                        "heads": heads,
                        "batch": 16,
                        "repeats": n_rep,
                        "median_seconds": _median_time(fn_scores, n_rep),
                    }
                )
    return rows


def loglog_slope(lengths, times) -> float:
    """Least-squares slope of log(time) against log(T)."""
    lt = np.log(np.asarray(lengths, dtype=np.float64))
    ly = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(lt, ly, 1)[0])


def fit_slopes(rows: list[dict]) -> dict[tuple[str, str], float]:
    """Per (mixer, component) scaling exponent from the timing rows."""
    grouped: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for r in rows:
        grouped.setdefault((r["mixer"], r["component"]), []).append((r["T"], r["median_seconds"]))
    slopes = {}
    for key, pts in grouped.items():
        pts.sort()
        if len(pts) >= 2:
            slopes[key] = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
    return slopes
