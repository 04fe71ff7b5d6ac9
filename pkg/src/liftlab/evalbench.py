"""Evaluation modes, task metrics, and the time-vs-length scaling harness.

Seven evaluation modes combine three ingredients: in-context prompting
with the (truncated) document, test-time adaptation of the model to the
document, and auxiliary QA pairs joined into that adaptation. Metrics are
byte-level-tokenizer-friendly: SQuAD-style normalized exact match and
token F1, cross-boundary continuation NLL, and a pairwise-order score for
chronology questions.

The timing harness measures wall time of (a) one-epoch adaptation plus a
short generation and (b) a single full-attention forward pass over the
whole input on a measurement-only model whose positional table is widened
to the input length. fit_scaling turns those records into log-log slopes,
linear/quadratic fits with a significance test on the quadratic term, and
a fitted crossover length.
"""

from __future__ import annotations

import enum
import math
import string
import time
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sstats

from . import numcore as nc
from .lift import LiftConfig, TrainReport, lift_adapt
from .model import (Model, ModelConfig, decode_text, encode, forward_logits,
                    generate, param_count, qa_loss)
from .seeding import derive_seed
from .segmenter import SegmentationPlan, truncate_icl
from .synth import EventDoc, FactDoc, QAPair, QASet, synth_qa_from_segments

NEWLINE = 10  # byte value terminating every answer template


class EvalMode(enum.Enum):
    ICL = "ICL"
    LIFT_ONLY = "LIFT_only"
    LIFT_ICL = "LIFT+ICL"
    LIFT_AT_ICL = "LIFT+AT+ICL"
    SFT_ICL = "SFT+ICL"
    SFT_LIFT_ICL = "SFT+LIFT+ICL"
    SFT_LIFT_AT_ICL = "SFT+LIFT+AT+ICL"

    @property
    def uses_icl(self) -> bool:
        return self is not EvalMode.LIFT_ONLY

    @property
    def uses_lift(self) -> bool:
        return "LIFT" in self.value

    @property
    def uses_at(self) -> bool:
        return "+AT" in self.value

    @property
    def requires_sft(self) -> bool:
        return self.value.startswith("SFT")

    @classmethod
    def parse(cls, name: str) -> "EvalMode":
        for mode in cls:
            if mode.value == name:
                return mode
        known = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown eval mode {name!r}; expected one of: {known}")


ALL_MODES = tuple(EvalMode)


# --- answer scoring ---------------------------------------------------------


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    lowered = text.lower()
    cleaned = "".join(" " if ch in string.punctuation else ch for ch in lowered)
    return " ".join(t for t in cleaned.split() if t not in ("a", "an", "the"))


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_answer(prediction) == normalize_answer(gold))


def token_f1(prediction: str, gold: str) -> float:
    p = normalize_answer(prediction).split()
    g = normalize_answer(gold).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(p)
    recall = overlap / len(g)
    return 2 * precision * recall / (precision + recall)


# --- prompt assembly --------------------------------------------------------


def assemble_prompt(doc_tokens, question, context_window: int, use_icl: bool,
                    icl_budget: int | None = None, head_fraction: float = 0.5,
                    answer_reserve: int = 32) -> list[int]:
    """Question tokens, optionally preceded by the truncated document.

    The context budget is capped so prompt + reserved answer room fits the
    window: len(prompt) <= W - answer_reserve always holds.
    """
    q = list(question)
    allowed = context_window - len(q) - answer_reserve
    if use_icl:
        if allowed < 2:
            raise ValueError(
                f"question ({len(q)} tokens) + answer_reserve ({answer_reserve}) "
                f"leave no room for context in a {context_window}-token window")
        budget = allowed if icl_budget is None else min(icl_budget, allowed)
        prompt = truncate_icl(list(doc_tokens), budget, head_fraction) + q
    else:
        if allowed < 0:
            raise ValueError("question + answer_reserve exceed the window")
        prompt = q
    assert len(prompt) + answer_reserve <= context_window
    return prompt


# --- eval reports -----------------------------------------------------------


@dataclass
class QuestionRecord:
    qid: int
    question: str
    gold: str
    prediction: str
    exact_match: float
    token_f1: float
    region: str  # "middle" or "edge" relative to the document's thirds

    def to_record(self) -> dict:
        return {
            "record": "question", "qid": self.qid, "question": self.question,
            "gold": self.gold, "prediction": self.prediction,
            "exact_match": self.exact_match, "token_f1": self.token_f1,
            "region": self.region,
        }


def aggregate_records(records: list[QuestionRecord]) -> dict:
    """Aggregates are a pure function of the per-question records."""
    def mean(vals):
        return float(np.mean(vals)) if vals else None

    out = {"n_questions": len(records),
           "exact_match": mean([r.exact_match for r in records]),
           "token_f1": mean([r.token_f1 for r in records])}
    for region in ("middle", "edge"):
        sub = [r for r in records if r.region == region]
        out[f"n_{region}"] = len(sub)
        out[f"exact_match_{region}"] = mean([r.exact_match for r in sub])
        out[f"token_f1_{region}"] = mean([r.token_f1 for r in sub])
    return out


@dataclass
class EvalReport:
    mode: str
    records: list[QuestionRecord]
    aggregates: dict
    seed: int
    wall_time: float
    train_report: TrainReport | None = None

    def to_records(self) -> list[dict]:
        recs = [r.to_record() for r in self.records]
        summary = {"record": "summary", "mode": self.mode, "seed": self.seed,
                   "wall_time": self.wall_time}
        summary.update(self.aggregates)
        recs.append(summary)
        return recs


def _region_of(span: tuple[int, int], doc_text_len: int) -> str:
    lo, hi = doc_text_len // 3, 2 * doc_text_len // 3
    return "middle" if span[0] >= lo and span[1] <= hi else "edge"


def prepare_training_qas(doc, config: LiftConfig, context_window: int) -> QASet:
    """Synthesize auxiliary training QAs for the AT modes.

    Pairs that cannot fit in the window alongside their question are
    dropped with a warning; eval QAs never enter this set (separate seed
    label and the caller keeps them disjoint).
    """
    qa_span = max(8, min(48, config.resolved_seg_len(context_window)))
    qas = synth_qa_from_segments(doc, config.qa_count, qa_span,
                                 derive_seed(config.seed, "at/train"))
    kept = [p for p in qas if len(p.question) + len(p.answer) <= context_window]
    dropped = len(qas) - len(kept)
    if dropped:
        qas.warnings.append(f"dropped {dropped} oversized training QA pairs")
    qas.pairs = kept
    return qas


def run_eval(model: Model, doc, qas_eval: QASet, mode: EvalMode,
             config: LiftConfig, model_kind: str = "base") -> EvalReport:
    """Answer every eval question under one mode; return the scored report.

    For adaptation-bearing modes a copy of `model` is trained on the
    document first (with auxiliary QAs when the mode says so); the passed
    model itself is never mutated. ICL-bearing modes put the truncated
    document in front of each question.
    """
    if mode.requires_sft and model_kind != "sft":
        raise ValueError(f"mode {mode.value} requires an SFT checkpoint "
                         f"(got model_kind={model_kind!r})")
    t0 = time.perf_counter()
    W = model.config.context_window
    doc_tokens = doc.tokens()

    eval_model = model
    train_report = None
    if mode.uses_lift:
        train_qas = None
        cfg = replace(config, use_auxiliary=mode.uses_at)
        if mode.uses_at:
            train_qas = prepare_training_qas(doc, config, W)
        eval_model, train_report = lift_adapt(model, doc_tokens, train_qas, cfg)

    records = []
    text_len = len(doc.text)
    for qid, pair in enumerate(qas_eval):
        prompt = assemble_prompt(
            doc_tokens, pair.question, W, mode.uses_icl,
            icl_budget=config.icl_budget, head_fraction=config.head_fraction,
            answer_reserve=config.answer_reserve)
        out = generate(eval_model, prompt, config.answer_reserve, stop_token=NEWLINE)
        prediction = decode_text(out)
        gold = pair.answer_text
        records.append(QuestionRecord(
            qid=qid, question=pair.question_text, gold=gold, prediction=prediction,
            exact_match=exact_match(prediction, gold),
            token_f1=token_f1(prediction, gold),
            region=_region_of(pair.source_span, text_len),
        ))

    return EvalReport(mode=mode.value, records=records,
                      aggregates=aggregate_records(records), seed=config.seed,
                      wall_time=time.perf_counter() - t0,
                      train_report=train_report)


# --- recitation probe -------------------------------------------------------


@dataclass
class RecitationReport:
    boundaries: list[int]
    nlls: list[float]
    gap: int
    ctx_len: int

    @property
    def mean_nll(self) -> float | None:
        return float(np.mean(self.nlls)) if self.nlls else None


def eval_recitation(model: Model, tokens, plan: SegmentationPlan,
                    boundary_count: int, gap: int = 32, seed: int = 0) -> RecitationReport:
    """Continuation NLL across segment boundaries.

    For each sampled boundary b (the end of a non-final segment) the model
    conditions on the ctx = min(W - gap, seg_len - stride) tokens before b
    and is scored on the gap tokens after b: low NLL means it can carry a
    segment's tail into the next segment.
    """
    if gap < 1:
        raise ValueError("gap must be positive")
    if boundary_count < 0:
        raise ValueError("boundary_count must be non-negative")
    tokens = list(tokens)
    W = model.config.context_window
    ctx = min(W - gap, plan.seg_len - plan.stride)
    if boundary_count == 0:
        return RecitationReport([], [], gap, ctx)
    if ctx < 1:
        raise ValueError("no conditioning room: need gap < W and stride < seg_len")
    ends = sorted({end for _, end in plan.ranges} - {len(tokens)})
    candidates = [b for b in ends if b - ctx >= 0 and b + gap <= len(tokens)]
    if not candidates:
        return RecitationReport([], [], gap, ctx)
    rng = np.random.default_rng(seed)
    if len(candidates) > boundary_count:
        picks = sorted(rng.choice(len(candidates), size=boundary_count,
                                  replace=False).tolist())
        chosen = [candidates[i] for i in picks]
    else:
        chosen = candidates
    nlls = []
    with nc.no_grad():
        for b in chosen:
            loss = qa_loss(model, tokens[b - ctx:b], tokens[b:b + gap])
            nlls.append(loss.item())
    return RecitationReport(chosen, nlls, gap, ctx)


# --- event reordering -------------------------------------------------------

REORDER_QUESTION = "\nQ: List the events in chronological order.\nA:"


def pairwise_order_score(predicted, true) -> float:
    """Fraction of element pairs whose relative order matches `true`.

    1.0 for identical order, 0.0 for exact reversal, 0.5 expected for a
    random permutation. Both sequences must hold the same distinct items.
    """
    pred = list(predicted)
    gold = list(true)
    if sorted(map(str, pred)) != sorted(map(str, gold)):
        raise ValueError("predicted and true orders must contain the same items")
    if len(gold) != len(set(map(str, gold))):
        raise ValueError("order items must be distinct")
    n = len(gold)
    if n < 2:
        return 1.0
    pred_rank = {item: i for i, item in enumerate(pred)}
    gold_rank = {item: i for i, item in enumerate(gold)}
    concordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            a, b = gold[i], gold[j]
            if (pred_rank[a] < pred_rank[b]) == (gold_rank[a] < gold_rank[b]):
                concordant += 1
    return concordant / (n * (n - 1) // 2)


def parse_predicted_order(prediction: str, narrative_labels: list[str]) -> list[str]:
    """Recover an event ordering from free-form model output.

    Labels are ranked by first occurrence (case-insensitive); labels the
    prediction never mentions are appended in narrative order, so a fully
    unparseable output degrades to the document's presentation order.
    """
    lowered = prediction.lower()
    found = []
    for label in narrative_labels:
        pos = lowered.find(label.lower())
        if pos >= 0:
            found.append((pos, label))
    found.sort()
    mentioned = [label for _, label in found]
    missing = [l for l in narrative_labels if l not in mentioned]
    return mentioned + missing


def eval_reorder(model: Model, doc: EventDoc, mode: EvalMode,
                 config: LiftConfig, model_kind: str = "base") -> dict:
    """Ask for the chronological event order; score concordant pairs."""
    if mode.requires_sft and model_kind != "sft":
        raise ValueError(f"mode {mode.value} requires an SFT checkpoint")
    W = model.config.context_window
    doc_tokens = doc.tokens()
    eval_model = model
    if mode.uses_lift:
        train_qas = None
        cfg = replace(config, use_auxiliary=mode.uses_at)
        if mode.uses_at:
            train_qas = prepare_training_qas(doc, config, W)
        eval_model, _ = lift_adapt(model, doc_tokens, train_qas, cfg)

    question = encode(REORDER_QUESTION)
    narrative = [label for label, _ in doc.events]
    # enough room to list every label, bounded by the window
    reserve = min(W - len(question) - 2,
                  max(config.answer_reserve, sum(len(l) + 2 for l in narrative) + 2))
    if reserve < 1:
        raise ValueError("window too small for the reorder question")
    prompt = assemble_prompt(doc_tokens, question, W, mode.uses_icl,
                             icl_budget=config.icl_budget,
                             head_fraction=config.head_fraction,
                             answer_reserve=reserve)
    out = generate(eval_model, prompt, reserve, stop_token=NEWLINE)
    prediction = decode_text(out)
    predicted = parse_predicted_order(prediction, narrative)
    score = pairwise_order_score(predicted, doc.chronological_labels())
    return {"record": "reorder", "mode": mode.value, "prediction": prediction,
            "predicted_order": predicted,
            "true_order": doc.chronological_labels(),
            "pairwise_order_score": score}


# --- timing harness ---------------------------------------------------------


@dataclass
class TimingRecord:
    input_length: int
    mode: str  # "lift_adapt" or "icl_full_forward"
    wall_time: float  # mean seconds over repeats (warmup discarded); NaN if oom
    mem_bytes_est: int
    oom: bool = False

    def to_record(self) -> dict:
        return {"record": "timing", "input_length": self.input_length,
                "mode": self.mode, "wall_time": self.wall_time,
                "mem_bytes_est": self.mem_bytes_est, "oom": self.oom}


def _mem_estimate(config: ModelConfig, seq_len: int) -> int:
    """Rough peak-resident estimate: attention score/prob buffers dominate,
    plus activations and parameters (float32 bytes)."""
    d = config.embed_dim
    att = 2 * config.n_heads * seq_len * seq_len
    acts = 16 * seq_len * d * config.n_layers
    return 4 * (att * config.n_layers + acts + param_count(config))


def _timed(fn, repeats: int) -> float:
    """Mean wall seconds over `repeats` calls after one discarded warmup."""
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def bench_time(model_config: ModelConfig, lengths, repeats: int = 3,
               seed: int = 0) -> list[TimingRecord]:
    """Time adaptation vs a full-attention forward pass at each length.

    lift_adapt mode: one-epoch adaptation (no auxiliary tasks) of a fresh
    copy plus one 8-token generation from a short prompt. icl_full_forward
    mode: a single forward pass over all L tokens through a variant of the
    same architecture whose positional table is widened to L (a measurement
    harness, not a usable model). Out-of-memory in the icl mode is recorded
    as a marker record instead of raising.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    lengths = [int(L) for L in lengths]
    if any(L < 2 for L in lengths):
        raise ValueError("benchmark lengths must be at least 2")
    base = Model(model_config)
    lift_cfg = LiftConfig(epochs=1, aux_weight=0.0, seed=seed)
    seg_len = lift_cfg.resolved_seg_len(model_config.context_window)
    records = []
    for L in lengths:
        rng = np.random.default_rng(derive_seed(seed, f"bench/{L}"))
        tokens = rng.integers(0, model_config.vocab_size, size=L).tolist()

        def lift_once():
            adapted, _ = lift_adapt(base, tokens, None, lift_cfg)
            generate(adapted, tokens[:8], 8)

        records.append(TimingRecord(
            input_length=L, mode="lift_adapt",
            wall_time=_timed(lift_once, repeats),
            mem_bytes_est=_mem_estimate(model_config, seg_len)))

        est = _mem_estimate(replace(model_config, context_window=L), L)
        try:
            wide = Model(replace(model_config, context_window=L))

            def icl_once():
                forward_logits(wide, tokens)

            wall = _timed(icl_once, repeats)
            records.append(TimingRecord(L, "icl_full_forward", wall, est))
        except MemoryError:
            records.append(TimingRecord(L, "icl_full_forward", float("nan"),
                                        est, oom=True))
    return records


# --- scaling fits -----------------------------------------------------------


@dataclass
class ModeFit:
    mode: str
    n_points: int
    loglog_slope: float
    loglog_intercept: float
    loglog_r2: float
    linear_coeffs: tuple[float, float]  # (a, b) of a + b*L
    quad_coeffs: tuple[float, float, float]  # (a, b, c) of a + b*L + c*L^2
    quad_t_stat: float
    quad_p_value: float
    quad_significant: bool


@dataclass
class ScalingFit:
    fits: dict[str, ModeFit] = field(default_factory=dict)
    crossover_length: float | None = None
    alpha: float = 0.01

    def to_records(self) -> list[dict]:
        recs = []
        for f in self.fits.values():
            recs.append({"record": "fit", "mode": f.mode, "n_points": f.n_points,
                         "loglog_slope": f.loglog_slope,
                         "loglog_intercept": f.loglog_intercept,
                         "loglog_r2": f.loglog_r2,
                         "linear_coeffs": list(f.linear_coeffs),
                         "quad_coeffs": list(f.quad_coeffs),
                         "quad_t_stat": f.quad_t_stat,
                         "quad_p_value": f.quad_p_value,
                         "quad_significant": f.quad_significant})
        recs.append({"record": "crossover", "crossover_length": self.crossover_length,
                     "alpha": self.alpha})
        return recs


MIN_FIT_POINTS = 6
MIN_FIT_SPAN = 16.0


def _fit_mode(mode: str, lengths: np.ndarray, times: np.ndarray,
              alpha: float) -> ModeFit:
    n = len(lengths)
    if n < MIN_FIT_POINTS:
        raise ValueError(f"mode {mode!r}: need at least {MIN_FIT_POINTS} "
                         f"length points, got {n}")
    span = lengths.max() / lengths.min()
    if span < MIN_FIT_SPAN - 1e-9:
        raise ValueError(f"mode {mode!r}: lengths span {span:.1f}x, "
                         f"need at least {MIN_FIT_SPAN:.0f}x")
    if np.any(times <= 0):
        raise ValueError(f"mode {mode!r}: nonpositive times cannot be fit")

    logL, logt = np.log(lengths), np.log(times)
    slope, intercept = np.polyfit(logL, logt, 1)
    resid = logt - (slope * logL + intercept)
    ss_tot = float(np.sum((logt - logt.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot

    b_lin, a_lin = np.polyfit(lengths, times, 1)

    X = np.column_stack([np.ones(n), lengths, lengths ** 2])
    beta, _, _, _ = np.linalg.lstsq(X, times, rcond=None)
    a_q, b_q, c_q = (float(v) for v in beta)
    resid_q = times - X @ beta
    rss = float(resid_q @ resid_q)
    dof = n - 3
    # t-statistic of the quadratic coefficient; an exact fit (rss ~ 0)
    # makes any nonzero c infinitely significant
    scale_t = float(np.mean(np.abs(times)))
    cov = np.linalg.inv(X.T @ X)
    se = math.sqrt(max(rss / dof, 0.0) * cov[2, 2]) if dof > 0 else 0.0
    if se <= scale_t * 1e-300 or rss <= (scale_t ** 2) * 1e-24:
        meaningful = abs(c_q) * float(lengths.max()) ** 2 > 1e-9 * scale_t
        t_stat = math.inf if meaningful else 0.0
        p_value = 0.0 if meaningful else 1.0
    else:
        t_stat = c_q / se
        p_value = 2.0 * float(sstats.t.sf(abs(t_stat), dof))
    return ModeFit(mode=mode, n_points=n,
                   loglog_slope=float(slope), loglog_intercept=float(intercept),
                   loglog_r2=r2, linear_coeffs=(float(a_lin), float(b_lin)),
                   quad_coeffs=(a_q, b_q, c_q), quad_t_stat=float(t_stat),
                   quad_p_value=float(p_value),
                   quad_significant=bool(p_value < alpha))


def _crossover(lift: ModeFit, icl: ModeFit, l_max: float) -> float | None:
    """Smallest L > 0 beyond which fitted lift time < fitted icl time.

    Uses lift's linear fit and icl's quadratic fit. Roots of the fitted
    difference are screened for a - to + sign change; indistinguishable
    curves report none.
    """
    a1, b1 = lift.linear_coeffs
    a2, b2, c2 = icl.quad_coeffs
    da, db, dc = a2 - a1, b2 - b1, c2
    t_scale = max(abs(a1) + abs(b1) * l_max, abs(a2) + abs(b2) * l_max
                  + abs(c2) * l_max ** 2, 1e-300)
    if max(abs(da), abs(db) * l_max, abs(dc) * l_max ** 2) < 1e-7 * t_scale:
        return None  # fits indistinguishable at this scale

    def diff(L):
        return da + db * L + dc * L * L

    if abs(dc) * l_max ** 2 < 1e-12 * t_scale:
        roots = [] if db == 0 else [-da / db]
    else:
        disc = db * db - 4 * dc * da
        if disc < 0:
            roots = []
        else:
            sq = math.sqrt(disc)
            roots = [(-db - sq) / (2 * dc), (-db + sq) / (2 * dc)]
    for r in sorted(roots):
        if r <= 0:
            continue
        delta = max(r * 1e-3, 1e-9)
        if diff(r - delta) < 0 < diff(r + delta):
            return float(r)
    return None


def fit_scaling(records: list[TimingRecord], alpha: float = 0.01) -> ScalingFit:
    """Per-mode log-log and polynomial fits plus the fitted crossover.

    Out-of-memory marker records are excluded from fitting; each remaining
    mode needs >= 6 points spanning >= 16x in length.
    """
    by_mode: dict[str, list[TimingRecord]] = {}
    for r in records:
        if not r.oom:
            by_mode.setdefault(r.mode, []).append(r)
    if not by_mode:
        raise ValueError("no usable timing records")
    fit = ScalingFit(alpha=alpha)
    for mode, recs in sorted(by_mode.items()):
        lengths = np.array([r.input_length for r in recs], dtype=np.float64)
        times = np.array([r.wall_time for r in recs], dtype=np.float64)
        order = np.argsort(lengths)
        fit.fits[mode] = _fit_mode(mode, lengths[order], times[order], alpha)
    if "lift_adapt" in fit.fits and "icl_full_forward" in fit.fits:
        l_max = max(r.input_length for rs in by_mode.values() for r in rs)
        fit.crossover_length = _crossover(fit.fits["lift_adapt"],
                                          fit.fits["icl_full_forward"],
                                          float(l_max))
    return fit
