"""Evaluation modes, metrics, recitation/reorder probes, and the timing
and curve-fitting harness, checked against closed-form oracles."""

import itertools
import math

import numpy as np
import pytest

from helpers import params_equal, params_snapshot, zero_output_projection
from liftlab import evalbench as eb
from liftlab.evalbench import (
    ALL_MODES,
    EvalMode,
    TimingRecord,
    aggregate_records,
    assemble_prompt,
    bench_time,
    eval_recitation,
    eval_reorder,
    exact_match,
    fit_scaling,
    normalize_answer,
    parse_predicted_order,
    pairwise_order_score,
    run_eval,
    token_f1,
)
from liftlab.lift import LiftConfig
from liftlab.model import Model, ModelConfig, decode_text, encode
from liftlab.numcore import OptimHyper
from liftlab.segmenter import plan_overlap
from liftlab.synth import gen_event_doc, gen_fact_doc, make_fact_eval_qas

SMALL = ModelConfig(context_window=64, n_layers=1, n_heads=2, embed_dim=16, seed=0)

FAST = LiftConfig(seg_len=32, stride=12, epochs=1, qa_count=4,
                  optimizer=OptimHyper(learning_rate=1e-2), seed=0)


# --- modes -------------------------------------------------------------------


def test_mode_property_table():
    expect = {
        "ICL":             (True, False, False, False),
        "LIFT_only":       (False, True, False, False),
        "LIFT+ICL":        (True, True, False, False),
        "LIFT+AT+ICL":     (True, True, True, False),
        "SFT+ICL":         (True, False, False, True),
        "SFT+LIFT+ICL":    (True, True, False, True),
        "SFT+LIFT+AT+ICL": (True, True, True, True),
    }
    assert {m.value for m in ALL_MODES} == set(expect)
    for mode in ALL_MODES:
        icl, lift, at, sft = expect[mode.value]
        assert (mode.uses_icl, mode.uses_lift, mode.uses_at,
                mode.requires_sft) == (icl, lift, at, sft), mode.value


def test_mode_parse():
    for mode in ALL_MODES:
        assert EvalMode.parse(mode.value) is mode
    with pytest.raises(ValueError, match="LIFT\\+ICL"):
        EvalMode.parse("LIFT")  # error names the valid modes


# --- metrics -----------------------------------------------------------------


def test_normalize_answer():
    assert normalize_answer(" The  Quick, Brown fox! ") == "quick brown fox"
    assert normalize_answer("A 7Q2X9.") == "7q2x9"
    assert normalize_answer("") == ""


def test_exact_match():
    assert exact_match(" 7Q2X9.\n", "7q2x9") == 1.0
    assert exact_match("the cat", "cat") == 1.0
    assert exact_match("dog", "cat") == 0.0


def test_token_f1():
    assert token_f1("", "") == 1.0
    assert token_f1("x", "") == 0.0
    assert token_f1("", "x") == 0.0
    assert token_f1("p q r", "q r s") == pytest.approx(2 / 3)
    assert token_f1("b b", "b") == pytest.approx(2 / 3)  # counted overlap
    assert token_f1("w x", "y z") == 0.0


# --- prompt assembly ----------------------------------------------------------


def test_assemble_prompt_bare_question():
    q = encode("\nThe code of alpha is")
    assert assemble_prompt([1] * 500, q, 64, use_icl=False) == q
    with pytest.raises(ValueError):
        assemble_prompt([1], list(range(60)), 64, use_icl=False)


def test_assemble_prompt_respects_window():
    doc = list(range(500))
    q = encode("\nQ?")
    for reserve in (8, 16, 32):
        prompt = assemble_prompt(doc, q, 64, True, answer_reserve=reserve)
        assert len(prompt) + reserve <= 64
        assert prompt[-len(q):] == q


def test_assemble_prompt_truncation_guarantee():
    head = "The code of alpha is 7Q2X9.\n"
    middle = "The code of bravo is 3M8R4.\n"
    filler = "river stone garden window harvest meadow lantern copper.\n"
    text = head + filler * 20 + middle + filler * 20
    doc = encode(text)
    q = encode("\nThe code of alpha is")
    prompt = assemble_prompt(doc, q, 128, True, answer_reserve=16)
    rendered = decode_text(prompt)
    assert "7Q2X9" in rendered       # head fact survives truncation
    assert "3M8R4" not in rendered   # middle fact is cut out
    with pytest.raises(ValueError):
        assemble_prompt(doc, encode("x" * 50), 64, True, answer_reserve=16)


def test_assemble_prompt_budget_cap():
    doc = list(range(500))
    q = encode("\nQ?")
    capped = assemble_prompt(doc, q, 64, True, icl_budget=10, answer_reserve=8)
    assert len(capped) == 10 + len(q)
    uncapped = assemble_prompt(doc, q, 64, True, answer_reserve=8)
    assert len(uncapped) == (64 - len(q) - 8) + len(q)


# --- run_eval -----------------------------------------------------------------


def _eval_setup():
    model = Model(SMALL)
    doc = gen_fact_doc(6, 700, seed=3)
    qas = make_fact_eval_qas(doc, 3, seed=1, region="any")
    return model, doc, qas


def test_run_eval_icl_records_and_aggregates():
    model, doc, qas = _eval_setup()
    report = run_eval(model, doc, qas, EvalMode.ICL, FAST)
    assert report.mode == "ICL" and len(report.records) == 3
    for r in report.records:
        assert r.exact_match in (0.0, 1.0)
        assert 0.0 <= r.token_f1 <= 1.0
        assert r.region in ("middle", "edge")
    assert report.aggregates == aggregate_records(report.records)
    assert report.train_report is None  # no adaptation in ICL mode


def test_run_eval_never_mutates_the_model():
    model, doc, qas = _eval_setup()
    before = params_snapshot(model)
    run_eval(model, doc, qas, EvalMode.ICL, FAST)
    run_eval(model, doc, qas, EvalMode.LIFT_ICL, FAST)
    assert params_equal(model.params, before)


def test_run_eval_lift_modes_train_first():
    model, doc, qas = _eval_setup()
    report = run_eval(model, doc, qas, EvalMode.LIFT_ONLY, FAST)
    assert report.train_report is not None
    assert report.train_report.qa_pair_count == 0
    at_report = run_eval(model, doc, qas, EvalMode.LIFT_AT_ICL, FAST)
    assert at_report.train_report.qa_pair_count > 0  # AT pairs joined in


def test_run_eval_sft_modes_require_sft_model():
    model, doc, qas = _eval_setup()
    with pytest.raises(ValueError, match="SFT"):
        run_eval(model, doc, qas, EvalMode.SFT_ICL, FAST, model_kind="base")
    report = run_eval(model, doc, qas, EvalMode.SFT_ICL, FAST, model_kind="sft")
    assert report.mode == "SFT+ICL"


def test_aggregate_records_empty_regions():
    agg = aggregate_records([])
    assert agg["n_questions"] == 0
    assert agg["exact_match"] is None and agg["token_f1"] is None
    assert agg["n_middle"] == 0 and agg["exact_match_middle"] is None


# --- recitation ----------------------------------------------------------------


def test_recitation_uniform_model_scores_log_vocab():
    model = Model(SMALL)
    zero_output_projection(model)
    tokens = list(np.random.default_rng(0).integers(0, 256, size=400))
    plan = plan_overlap(400, 32, 12)
    rep = eval_recitation(model, tokens, plan, boundary_count=5, gap=8, seed=1)
    assert len(rep.nlls) == 5
    assert rep.mean_nll == pytest.approx(math.log(256), abs=1e-5)
    assert rep.ctx_len == min(64 - 8, 32 - 12)


def test_recitation_zero_boundaries_and_determinism():
    model = Model(SMALL)
    tokens = list(range(200)) + list(range(200))
    plan = plan_overlap(400, 32, 12)
    empty = eval_recitation(model, tokens, plan, boundary_count=0)
    assert empty.nlls == [] and empty.mean_nll is None
    a = eval_recitation(model, tokens, plan, boundary_count=4, gap=8, seed=5)
    b = eval_recitation(model, tokens, plan, boundary_count=4, gap=8, seed=5)
    assert a.boundaries == b.boundaries and a.nlls == b.nlls
    ends = {end for _, end in plan.ranges}
    assert all(b_ in ends for b_ in a.boundaries)


def test_recitation_validation():
    model = Model(SMALL)
    plan = plan_overlap(400, 32, 12)
    tokens = list(range(400))
    with pytest.raises(ValueError):
        eval_recitation(model, tokens, plan, boundary_count=2, gap=64)  # W-gap=0
    with pytest.raises(ValueError):
        eval_recitation(model, tokens, plan, boundary_count=-1)
    with pytest.raises(ValueError):
        eval_recitation(model, tokens, plan, boundary_count=2, gap=0)


# --- reorder -------------------------------------------------------------------


def _brute_force_score(pred, gold):
    n = len(gold)
    pairs = 0
    hits = 0
    for a, b in itertools.combinations(gold, 2):
        pairs += 1
        if (pred.index(a) < pred.index(b)) == (gold.index(a) < gold.index(b)):
            hits += 1
    return hits / pairs


def test_pairwise_order_score_examples():
    gold = ["a", "b", "c", "d"]
    assert pairwise_order_score(gold, gold) == 1.0
    assert pairwise_order_score(gold[::-1], gold) == 0.0
    assert pairwise_order_score(["a", "c", "b", "d"], gold) == pytest.approx(5 / 6)


def test_pairwise_order_score_all_permutations():
    gold = ["w", "x", "y", "z"]
    for perm in itertools.permutations(gold):
        want = _brute_force_score(list(perm), gold)
        assert pairwise_order_score(list(perm), gold) == pytest.approx(want)


def test_pairwise_order_score_validation():
    assert pairwise_order_score(["solo"], ["solo"]) == 1.0
    with pytest.raises(ValueError):
        pairwise_order_score(["a", "b"], ["a", "c"])
    with pytest.raises(ValueError):
        pairwise_order_score(["a", "a"], ["a", "a"])


def test_parse_predicted_order():
    labels = ["comet", "drought", "aurora"]
    assert parse_predicted_order("Aurora, then comet, then drought",
                                 labels) == ["aurora", "comet", "drought"]
    # unmentioned labels fall back to narrative order, appended at the end
    assert parse_predicted_order("drought happened", labels) == \
        ["drought", "comet", "aurora"]
    assert parse_predicted_order("", labels) == labels
    # first occurrence wins on repeats
    assert parse_predicted_order("comet comet drought comet",
                                 labels) == ["comet", "drought", "aurora"]


def test_eval_reorder_end_to_end():
    model = Model(ModelConfig(context_window=128, n_layers=1, n_heads=2,
                              embed_dim=16, seed=1))
    doc = gen_event_doc(4, 1200, seed=5)
    rec = eval_reorder(model, doc, EvalMode.ICL, FAST)
    assert rec["record"] == "reorder" and rec["mode"] == "ICL"
    assert 0.0 <= rec["pairwise_order_score"] <= 1.0
    assert sorted(rec["predicted_order"]) == sorted(rec["true_order"])
    with pytest.raises(ValueError):
        eval_reorder(model, doc, EvalMode.SFT_ICL, FAST, model_kind="base")


# --- timing harness --------------------------------------------------------------


def test_bench_time_produces_paired_records():
    cfg = ModelConfig(context_window=16, n_layers=1, n_heads=2, embed_dim=8)
    records = bench_time(cfg, [16, 32], repeats=1, seed=0)
    assert [(r.input_length, r.mode) for r in records] == [
        (16, "lift_adapt"), (16, "icl_full_forward"),
        (32, "lift_adapt"), (32, "icl_full_forward")]
    for r in records:
        assert r.wall_time > 0 and not r.oom
        assert r.mem_bytes_est > 0
    with pytest.raises(ValueError):
        bench_time(cfg, [16], repeats=0)
    with pytest.raises(ValueError):
        bench_time(cfg, [1], repeats=1)


def test_bench_time_records_oom_marker(monkeypatch):
    cfg = ModelConfig(context_window=16, n_layers=1, n_heads=2, embed_dim=8)

    def explode(model, tokens):
        raise MemoryError("attention buffer too large")

    monkeypatch.setattr(eb, "forward_logits", explode)
    records = bench_time(cfg, [16], repeats=1, seed=0)
    lift_rec, icl_rec = records
    assert lift_rec.mode == "lift_adapt" and not lift_rec.oom
    assert icl_rec.oom and math.isnan(icl_rec.wall_time)
    assert icl_rec.to_record()["oom"] is True


# --- scaling fits -----------------------------------------------------------------


LENGTHS = [64, 128, 256, 512, 1024, 2048, 4096]


def _records(mode, fn):
    return [TimingRecord(L, mode, fn(L), 0) for L in LENGTHS]


def test_fit_scaling_linear_oracle():
    records = _records("lift_adapt", lambda L: 2.0 * L) + \
        _records("icl_full_forward", lambda L: 2.0 * L)
    fit = fit_scaling(records)
    for mode_fit in fit.fits.values():
        assert mode_fit.loglog_slope == pytest.approx(1.0, abs=1e-6)
        assert mode_fit.loglog_r2 == pytest.approx(1.0, abs=1e-9)
        assert mode_fit.linear_coeffs[1] == pytest.approx(2.0, rel=1e-9)
        assert not mode_fit.quad_significant
    assert fit.crossover_length is None  # identical curves never cross


def test_fit_scaling_crossover_oracle():
    # icl = 3 L^2, lift = 1e6 L: curves cross where 3 L^2 = 1e6 L
    records = _records("lift_adapt", lambda L: 1e6 * L) + \
        _records("icl_full_forward", lambda L: 3.0 * L * L)
    fit = fit_scaling(records)
    assert fit.fits["lift_adapt"].loglog_slope == pytest.approx(1.0, abs=1e-6)
    assert fit.fits["icl_full_forward"].loglog_slope == pytest.approx(2.0, abs=1e-6)
    assert fit.fits["icl_full_forward"].quad_significant
    assert not fit.fits["lift_adapt"].quad_significant
    assert fit.crossover_length == pytest.approx(1e6 / 3, rel=1e-6)


def test_fit_scaling_noisy_quadratic_significance():
    rng = np.random.default_rng(0)
    records = [TimingRecord(L, "icl_full_forward",
                            3e-6 * L * L * float(rng.uniform(0.95, 1.05)), 0)
               for L in LENGTHS]
    fit = fit_scaling(records)
    f = fit.fits["icl_full_forward"]
    assert 1.8 <= f.loglog_slope <= 2.2
    assert f.quad_significant and f.quad_p_value < 0.01
    assert fit.crossover_length is None  # only one mode present


def test_fit_scaling_input_validation():
    with pytest.raises(ValueError):
        fit_scaling(_records("lift_adapt", lambda L: L)[:5])  # < 6 points
    narrow = [TimingRecord(L, "lift_adapt", float(L), 0)
              for L in [100, 110, 120, 130, 140, 150]]
    with pytest.raises(ValueError):
        fit_scaling(narrow)  # span < 16x
    with pytest.raises(ValueError):
        fit_scaling([])
    bad = _records("lift_adapt", lambda L: 0.0)
    with pytest.raises(ValueError):
        fit_scaling(bad)  # nonpositive times


def test_fit_scaling_excludes_oom_markers():
    records = _records("lift_adapt", lambda L: 1e6 * L) + \
        _records("icl_full_forward", lambda L: 3.0 * L * L)
    records.append(TimingRecord(8192, "icl_full_forward", float("nan"), 0, oom=True))
    fit = fit_scaling(records)
    assert fit.fits["icl_full_forward"].n_points == len(LENGTHS)
    assert fit.crossover_length == pytest.approx(1e6 / 3, rel=1e-6)
