"""Acceptance suite: one test per release criterion, each printing a
[PASS]/[FAIL] line with the measured value next to its bound.

The training-based criteria share one pair of toy runs (the dense-attention
reference and the scalar shift-mix preset, trained for 5 epochs on a
1000-story synthetic corpus at matched parameter budgets).

Run with: pytest tests/test_acceptance.py -v -s
"""

import time
from pathlib import Path

import numpy as np
import pytest

from hsmlab import bench, checks, tensor as tn
from hsmlab.data import Corpus, Split, filter_and_split
from hsmlab.mixers import MixerSpec, mix_scalar_ab, mix_vector_ab, shift_sequence
from hsmlab.model import build_model, count_params, balance_ffn_dim
from hsmlab.presets import PARAM_BUDGET, PRESET_NAMES, load_preset
from hsmlab.tensor import Tensor
from hsmlab.tokenizer import train_bpe
from hsmlab.toycorpus import generate_stories
from hsmlab.training import (
    TrainConfig,
    append_metrics,
    read_metrics_csv,
    spearman,
    train,
    validate,
)

TOY_STORIES = 1000
TOY_VOCAB = 400
TOY_EPOCHS = 5
TOY_BATCH = 64
CONTEXT = 128


def _criterion(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def toy_data():
    stories = generate_stories(TOY_STORIES, seed=11, body_sentences=20)
    vocab = train_bpe(stories[:300], TOY_VOCAB)
    train_split, val_split = filter_and_split(Corpus(stories), vocab, CONTEXT,
                                              val_fraction=0.10, seed=5)
    return vocab, train_split, val_split


@pytest.fixture(scope="module")
def toy_runs(toy_data):
    """Train gpt_reference and hsm_ab presets at equal parameter budget on the
    toy corpus; returns per-preset initial metrics, records, and timings."""
    vocab, train_split, val_split = toy_data
    gpt_cfg = load_preset("gpt_reference").with_vocab(vocab.size)
    budget = count_params(build_model(gpt_cfg, seed=0, dtype="float32"))
    hsm_cfg = load_preset("hsm_ab").with_vocab(vocab.size)
    hsm_cfg = hsm_cfg.with_ffn(balance_ffn_dim(hsm_cfg, budget))

    results = {}
    t0 = time.perf_counter()
    for name, cfg in (("gpt_reference", gpt_cfg), ("hsm_ab", hsm_cfg)):
        model = build_model(cfg, seed=1, dtype="float32")
        initial_loss, initial_acc = validate(model, val_split)
        tcfg = TrainConfig(batch_size=TOY_BATCH, epochs=TOY_EPOCHS, seed=3, micro_batch=32)
        records, _ = train(model, train_split, val_split, tcfg)
        results[name] = {
            "params": count_params(model),
            "initial_loss": initial_loss,
            "initial_acc": initial_acc,
            "records": records,
        }
    results["elapsed"] = time.perf_counter() - t0
    results["vocab_size"] = vocab.size
    return results


class TestGradientCorrectness:
    def test_every_mixer_and_micro_model_match_finite_differences(self):
        t0 = time.perf_counter()
        rows = checks.gradcheck_report("all")
        elapsed = time.perf_counter() - t0
        worst = max(r["max_rel_err"] for r in rows)
        for r in rows:
            print(f"    {r['check']}: max rel err {r['max_rel_err']:.3e}")
        _criterion(
            "gradient correctness",
            all(r["passed"] for r in rows) and elapsed < 60,
            f"{len(rows)} checks, worst rel err {worst:.3e} < 1e-4, {elapsed:.1f}s < 60s",
        )


class TestCausality:
    def test_perturbing_token_j_never_changes_earlier_logits(self):
        t0 = time.perf_counter()
        rows = checks.causality_report("all", cases=100)
        elapsed = time.perf_counter() - t0
        violations = sum(r["violations"] for r in rows)
        _criterion(
            "causality suite",
            violations == 0 and elapsed < 60,
            f"{len(rows)} configs x 100 cases, {violations} violations, {elapsed:.1f}s < 60s",
        )


class TestReceptiveField:
    def test_doubling_schedule_covers_full_lower_triangle(self):
        mask = checks.influence_mask((1, 2, 4, 8), 16)
        full = np.tril(np.ones((16, 16), dtype=bool))
        _criterion(
            "receptive-field coverage",
            np.array_equal(mask, full),
            "shifts [1,2,4,8] over 4 layers at T=16 give a full lower-triangular influence mask",
        )


class TestConvolutionEquivalence:
    def test_blend_layer_equals_two_tap_causal_depthwise_conv(self):
        rng = np.random.default_rng(0)
        t_len, d, s = 12, 6, 4
        x = rng.standard_normal((t_len, d))
        a_vec, b_vec = rng.standard_normal(d), rng.standard_normal(d)
        a_sc, b_sc = -0.7, 1.3

        def conv2tap(x, a, b):
            out = np.zeros_like(x)
            for t in range(t_len):
                for c in range(d):
                    out[t, c] = a[c] * x[t, c] + (b[c] * x[t - s, c] if t >= s else 0.0)
            return out

        got_v = mix_vector_ab(Tensor(x), shift_sequence(Tensor(x), s),
                              Tensor(a_vec), Tensor(b_vec)).data
        got_s = mix_scalar_ab(Tensor(x), shift_sequence(Tensor(x), s),
                              Tensor(a_sc), Tensor(b_sc)).data
        err_v = np.max(np.abs(got_v - conv2tap(x, a_vec, b_vec)))
        err_s = np.max(np.abs(got_s - conv2tap(x, np.full(d, a_sc), np.full(d, b_sc))))
        _criterion(
            "convolution equivalence",
            err_v <= 1e-12 and err_s <= 1e-12,
            f"scalar/vector blends vs 2-tap causal conv oracle: max |diff| {max(err_v, err_s):.2e} <= 1e-12",
        )


class TestParameterParity:
    def test_all_presets_balance_to_budget_within_half_percent(self):
        worst = 0.0
        for name in PRESET_NAMES:
            cfg = load_preset(name)
            balanced = cfg.with_ffn(balance_ffn_dim(cfg, PARAM_BUDGET))
            n = count_params(build_model(balanced, seed=0, dtype="float32"))
            dev = abs(n - PARAM_BUDGET) / PARAM_BUDGET
            worst = max(worst, dev)
            print(f"    {name}: ffn_hidden={balanced.ffn_hidden} params={n:,} ({dev * 100:.4f}% off)")
        _criterion(
            "parameter parity",
            worst < 0.005,
            f"all {len(PRESET_NAMES)} presets within {worst * 100:.4f}% of {PARAM_BUDGET:,} (< 0.5%)",
        )


class TestComplexityScaling:
    def test_loglog_slopes(self):
        lengths = [32, 64, 128, 256, 512]
        t0 = time.perf_counter()
        rows = bench.run_bench(["scalar_ab", "matrix_ab", "dense_attention"], lengths,
                               repeats=7)
        elapsed = time.perf_counter() - t0
        slopes = bench.fit_slopes(rows)
        hsm_slope = slopes[("scalar_ab", "mixing")]
        hsm_slope2 = slopes[("matrix_ab", "mixing")]
        dense_slope = slopes[("dense_attention", "scores")]
        print(f"    scalar_ab mixing slope {hsm_slope:.2f}, matrix_ab {hsm_slope2:.2f}, "
              f"dense scores slope {dense_slope:.2f}")
        _criterion(
            "complexity scaling",
            0.7 <= hsm_slope <= 1.4 and 0.7 <= hsm_slope2 <= 1.4
            and 1.6 <= dense_slope <= 2.4 and elapsed < 300,
            f"shift-mix slopes {hsm_slope:.2f}/{hsm_slope2:.2f} in [0.7,1.4], "
            f"dense scores {dense_slope:.2f} in [1.6,2.4], {elapsed:.0f}s < 300s",
        )

    def test_doubling_ratios(self):
        rows = bench.run_bench(["scalar_ab", "dense_attention"], [256, 512], repeats=7)
        by = {(r["mixer"], r["component"], r["T"]): r["median_seconds"] for r in rows}
        hsm_ratio = by[("scalar_ab", "mixing", 512)] / by[("scalar_ab", "mixing", 256)]
        dense_ratio = by[("dense_attention", "scores", 512)] / by[("dense_attention", "scores", 256)]
        _criterion(
            "doubling-time ratios",
            1.5 <= hsm_ratio <= 3.0 and 3.0 <= dense_ratio <= 6.0,
            f"T 256->512: shift-mix x{hsm_ratio:.2f} in [1.5,3], dense scores x{dense_ratio:.2f} in [3,6]",
        )


class TestTrainingSanity:
    def test_both_presets_learn_on_toy_corpus(self, toy_runs):
        ok = True
        details = []
        for name in ("gpt_reference", "hsm_ab"):
            r = toy_runs[name]
            ln_v = np.log(toy_runs["vocab_size"])
            init_ok = abs(r["initial_loss"] - ln_v) / ln_v < 0.05
            drop = (r["initial_loss"] - r["records"][-1].val_loss) / r["initial_loss"]
            accs = [r["initial_acc"]] + [rec.val_accuracy for rec in r["records"]]
            rises = sum(b > a for a, b in zip(accs, accs[1:]))
            details.append(f"{name}: drop {drop * 100:.1f}% (>= 30%), accuracy rises {rises}/5")
            ok = ok and init_ok and drop >= 0.30 and rises >= 4
        elapsed = toy_runs["elapsed"]
        ok = ok and elapsed < 900
        _criterion("training sanity", ok, "; ".join(details) + f"; {elapsed:.0f}s < 900s")


class TestAccuracyLossAnticorrelation:
    def test_pooled_spearman_strongly_negative(self, toy_runs):
        losses, accs = [], []
        for name in ("gpt_reference", "hsm_ab"):
            r = toy_runs[name]
            losses.append(r["initial_loss"])
            accs.append(r["initial_acc"])
            for rec in r["records"]:
                losses.append(rec.val_loss)
                accs.append(rec.val_accuracy)
        rho = spearman(losses, accs)
        _criterion(
            "accuracy-loss anticorrelation",
            rho < -0.8,
            f"Spearman over {len(losses)} pooled (val_loss, val_accuracy) pairs: {rho:.3f} < -0.8",
        )


class TestRelativeEpochSpeed:
    def test_shift_mix_trains_faster_per_epoch_than_dense(self, toy_runs):
        gpt = np.median([r.seconds for r in toy_runs["gpt_reference"]["records"]])
        hsm = np.median([r.seconds for r in toy_runs["hsm_ab"]["records"]])
        params_close = (
            abs(toy_runs["hsm_ab"]["params"] - toy_runs["gpt_reference"]["params"])
            / toy_runs["gpt_reference"]["params"] < 0.005
        )
        _criterion(
            "relative epoch speed",
            hsm < gpt and params_close,
            f"median epoch seconds: shift-mix {hsm:.1f} < dense {gpt:.1f} "
            f"({(1 - hsm / gpt) * 100:.0f}% faster; reported, not asserted) at matched "
            f"parameter counts ({toy_runs['hsm_ab']['params']:,} vs {toy_runs['gpt_reference']['params']:,})",
        )


class TestFullScaleScopeStatement:
    def test_presets_ship_and_long_run_procedure_documented(self):
        for name in PRESET_NAMES:
            load_preset(name).validate()
        readme = (Path(__file__).resolve().parent.parent / "README.md").read_text(encoding="utf-8")
        documented = "Full-scale runs" in readme
        _criterion(
            "full-scale results out of desk scope",
            len(PRESET_NAMES) == 11 and documented,
            "all 11 experiment presets ship and README documents the multi-hour "
            "full-corpus procedure; acceptance rests on the property suite",
        )


class TestDeterminism:
    def test_rerunning_preset_reproduces_metrics_bit_identically(self, toy_data, tmp_path):
        vocab, train_split, _ = toy_data
        small_train = Split(train_split.stories[:108])
        small_val = Split(train_split.stories[108:120])
        cfg = load_preset("hsm_ab").with_vocab(vocab.size)
        outs = []
        for run in range(2):
            out_dir = tmp_path / f"run{run}"
            model = build_model(cfg, seed=9, dtype="float32")
            tcfg = TrainConfig(batch_size=TOY_BATCH, epochs=2, seed=4, micro_batch=32)
            records, _ = train(model, small_train, small_val, tcfg, out_dir=out_dir)
            outs.append(out_dir)

        def stripped(path):
            lines = (path / "metrics.csv").read_text().split("\n")
            return ["".join(line.split(",")[:-1]) for line in lines]  # drop wall-clock column

        identical = stripped(outs[0]) == stripped(outs[1])
        r0 = read_metrics_csv(outs[0] / "metrics.csv")
        r1 = read_metrics_csv(outs[1] / "metrics.csv")
        same_vals = all(
            a["train_loss"] == b["train_loss"]
            and a["val_loss"] == b["val_loss"]
            and a["val_accuracy"] == b["val_accuracy"]
            for a, b in zip(r0, r1)
        )
        _criterion(
            "determinism",
            identical and same_vals,
            "two runs of the hsm_ab preset with one seed produce bit-identical metrics "
            "CSVs (wall-clock seconds column excluded)",
        )
