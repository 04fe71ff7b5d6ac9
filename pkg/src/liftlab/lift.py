"""Adapting a model to one long input by training on its segments.

The input is sliced into overlapping windows, optionally joined by QA
pairs, and the whole shuffled sample set is pushed through gradient
accumulation into exactly one clipped AdamW step per epoch (one effective
batch per epoch). The base model is never touched; adaptation happens on
a copy, and optimizer state persists across epochs.

Losses are per-token means at both levels: a segment's loss is the mean
NLL of its tokens, the input loss is the mean over segments, and the
auxiliary loss is the mean over QA pairs of per-answer-token means. The
joint objective is input_loss + aux_weight * at_loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import numcore as nc
from .model import Model, lm_loss, qa_loss
from .seeding import derive_seed
from .segmenter import SegmentationPlan, default_stride, extract, plan_overlap, plan_trivial
from .synth import QAPair, QASet

DEFAULT_SEG_LEN_CAP = 2048  # reference segment length; toy runs use W // 2


@dataclass
class LiftConfig:
    """Knobs for one adaptation run.

    seg_len=None resolves to min(W // 2, 2048) for the model at hand;
    stride=None resolves to floor(3/8 * seg_len). icl_budget, head_fraction
    and answer_reserve describe prompt assembly for downstream evaluation
    and are carried here so one config object describes a whole run.
    """
    seg_len: int | None = None
    stride: int | None = None
    aux_weight: float = 1.0
    epochs: int = 8
    use_auxiliary: bool = False
    qa_count: int = 16
    micro_batch: int = 4
    optimizer: nc.OptimHyper = field(default_factory=nc.OptimHyper)
    icl_budget: int | None = None
    head_fraction: float = 0.5
    answer_reserve: int = 32
    plan: str = "overlap"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.micro_batch < 1:
            raise ValueError("micro_batch must be at least 1")
        if self.aux_weight < 0:
            raise ValueError("aux_weight must be non-negative")
        if self.qa_count < 0:
            raise ValueError("qa_count must be non-negative")
        if not 0.0 <= self.head_fraction <= 1.0:
            raise ValueError("head_fraction must lie in [0, 1]")
        if self.answer_reserve < 1:
            raise ValueError("answer_reserve must be positive")
        if self.plan not in ("overlap", "trivial"):
            raise ValueError(f"unknown plan kind {self.plan!r}")

    def resolved_seg_len(self, context_window: int) -> int:
        if self.seg_len is not None:
            return self.seg_len
        return max(2, min(DEFAULT_SEG_LEN_CAP, context_window // 2))

    def resolved_stride(self, seg_len: int) -> int:
        if self.stride is not None:
            return self.stride
        return max(1, default_stride(seg_len))


@dataclass
class EpochStats:
    epoch: int
    input_loss: float
    at_loss: float | None
    total_loss: float
    grad_norm_pre_clip: float
    segment_tokens: int
    qa_tokens: int
    wall_time: float

    def to_record(self) -> dict:
        return {
            "record": "epoch",
            "epoch": self.epoch,
            "input_loss": self.input_loss,
            "at_loss": self.at_loss,
            "total_loss": self.total_loss,
            "grad_norm_pre_clip": self.grad_norm_pre_clip,
            "segment_tokens": self.segment_tokens,
            "qa_tokens": self.qa_tokens,
            "wall_time": self.wall_time,
        }


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    segment_count: int
    qa_pair_count: int
    plan_kind: str
    seg_len: int
    stride: int
    total_wall_time: float

    @property
    def initial_input_loss(self) -> float:
        return self.epochs[0].input_loss

    @property
    def final_input_loss(self) -> float:
        return self.epochs[-1].input_loss

    def to_records(self) -> list[dict]:
        recs = [e.to_record() for e in self.epochs]
        recs.append({
            "record": "summary",
            "segment_count": self.segment_count,
            "qa_pair_count": self.qa_pair_count,
            "plan_kind": self.plan_kind,
            "seg_len": self.seg_len,
            "stride": self.stride,
            "initial_input_loss": self.initial_input_loss,
            "final_input_loss": self.final_input_loss,
            "total_wall_time": self.total_wall_time,
        })
        return recs


# --- objectives -----------------------------------------------------------------


def loss_input(model: Model, segments: list[list[int]]) -> nc.Tensor:
    """Mean over segments of per-token segment NLL (differentiable)."""
    if not segments:
        raise ValueError("loss_input needs at least one segment")
    W = model.config.context_window
    for s in segments:
        if not 2 <= len(s) <= W:
            raise ValueError(f"segment length {len(s)} outside [2, {W}]")
    total: nc.Tensor | None = None
    for s in segments:
        term = nc.scale(lm_loss(model, s), 1.0 / len(segments))
        total = term if total is None else nc.add(total, term)
    return total


def loss_auxiliary(model: Model, qas: QASet | list[QAPair]) -> nc.Tensor:
    """Mean over QA pairs of per-answer-token NLL (differentiable)."""
    pairs = list(qas)
    if not pairs:
        raise ValueError("loss_auxiliary needs at least one QA pair")
    total: nc.Tensor | None = None
    for p in pairs:
        term = nc.scale(qa_loss(model, p.question, p.answer), 1.0 / len(pairs))
        total = term if total is None else nc.add(total, term)
    return total


def joint_loss(model: Model, segments: list[list[int]], qas, aux_weight: float) -> nc.Tensor:
    """loss_input + aux_weight * loss_auxiliary.

    With aux_weight == 0 or no QA pairs this IS loss_input (same graph,
    bit-identical value), not loss_input plus a zero term.
    """
    pairs = list(qas) if qas is not None else []
    base = loss_input(model, segments)
    if aux_weight == 0.0 or not pairs:
        return base
    return nc.add(base, nc.scale(loss_auxiliary(model, pairs), aux_weight))


# --- adaptation -----------------------------------------------------------------

# a training sample: ("segment", tokens, weight) or ("qa", QAPair, weight)
Sample = tuple[str, object, float]


def build_samples(segments: list[list[int]], qa_pairs: list[QAPair],
                  aux_weight: float, outer_scale: float = 1.0) -> list[Sample]:
    """Weight samples so that summing weight*loss over all of them equals
    outer_scale * (mean segment loss + aux_weight * mean QA loss)."""
    samples: list[Sample] = [
        ("segment", s, outer_scale / len(segments)) for s in segments
    ]
    if qa_pairs and aux_weight != 0.0:
        w = outer_scale * aux_weight / len(qa_pairs)
        samples.extend(("qa", p, w) for p in qa_pairs)
    return samples


def accumulate_gradients(model: Model, samples: list[Sample], micro_batch: int) -> dict:
    """Backward of sum(weight * loss) in micro-batches; grads accumulate
    into the model's parameter tensors. Returns unweighted loss sums."""
    seg_sum = qa_sum = 0.0
    seg_n = qa_n = 0
    seg_tokens = qa_tokens = 0
    for i in range(0, len(samples), micro_batch):
        chunk = samples[i:i + micro_batch]
        total: nc.Tensor | None = None
        for kind, payload, weight in chunk:
            if kind == "segment":
                loss = lm_loss(model, payload)
                seg_sum += loss.item()
                seg_n += 1
                seg_tokens += len(payload)
            else:
                loss = qa_loss(model, payload.question, payload.answer)
                qa_sum += loss.item()
                qa_n += 1
                qa_tokens += len(payload.question) + len(payload.answer)
            term = nc.scale(loss, weight)
            total = term if total is None else nc.add(total, term)
        nc.backward(total)
    return {"seg_sum": seg_sum, "seg_n": seg_n, "qa_sum": qa_sum, "qa_n": qa_n,
            "seg_tokens": seg_tokens, "qa_tokens": qa_tokens}


def plan_for(config: LiftConfig, length: int, context_window: int) -> SegmentationPlan:
    seg_len = config.resolved_seg_len(context_window)
    if seg_len > context_window:
        raise ValueError(f"seg_len {seg_len} exceeds context window {context_window}")
    if config.plan == "overlap":
        return plan_overlap(length, seg_len, config.resolved_stride(seg_len))
    return plan_trivial(length, seg_len)


def lift_adapt(base_model: Model, input_tokens, qas: QASet | None,
               config: LiftConfig) -> tuple[Model, TrainReport]:
    """Fine-tune a copy of base_model on one long input.

    Per epoch: shuffle segments and QA pairs together with the epoch seed,
    accumulate the joint gradient over micro-batches across the entire
    sample set, then apply exactly one clipped AdamW step. Reported epoch
    losses are measured during accumulation, i.e. under the parameters
    before that epoch's step.
    """
    tokens = list(input_tokens)
    if len(tokens) < 2:
        raise ValueError("input must have at least 2 tokens")
    W = base_model.config.context_window
    plan = plan_for(config, len(tokens), W)
    segments = [s for s in extract(tokens, plan) if len(s) >= 2]
    if not segments:
        raise ValueError("no trainable segments (all shorter than 2 tokens)")

    qa_pairs: list[QAPair] = []
    if config.use_auxiliary and qas is not None:
        qa_pairs = list(qas)
        for p in qa_pairs:
            if len(p.question) + len(p.answer) > W:
                raise ValueError("QA pair longer than the context window")

    model = base_model.copy()
    opt = nc.AdamW(model.params, config.optimizer)
    samples = build_samples(segments, qa_pairs, config.aux_weight)

    epoch_stats: list[EpochStats] = []
    t_start = time.perf_counter()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng(derive_seed(config.seed, f"epoch/{epoch}/doc/0"))
        order = rng.permutation(len(samples))
        opt.zero_grad()
        stats = accumulate_gradients(model, [samples[i] for i in order],
                                     config.micro_batch)
        grad_norm = nc.clip_grad_norm_(model.params.values(),
                                       config.optimizer.max_grad_norm)
        opt.step()
        input_loss = stats["seg_sum"] / stats["seg_n"]
        at_loss = stats["qa_sum"] / stats["qa_n"] if stats["qa_n"] else None
        total = input_loss + config.aux_weight * at_loss if at_loss is not None else input_loss
        epoch_stats.append(EpochStats(
            epoch=epoch,
            input_loss=input_loss,
            at_loss=at_loss,
            total_loss=total,
            grad_norm_pre_clip=grad_norm,
            segment_tokens=stats["seg_tokens"],
            qa_tokens=stats["qa_tokens"],
            wall_time=time.perf_counter() - t0,
        ))

    report = TrainReport(
        epochs=epoch_stats,
        segment_count=len(segments),
        qa_pair_count=len(qa_pairs),
        plan_kind=config.plan,
        seg_len=plan.seg_len,
        stride=plan.stride,
        total_wall_time=time.perf_counter() - t_start,
    )
    return model, report


def lift_config_for_window(context_window: int, **overrides) -> LiftConfig:
    """Convenience: a LiftConfig with seg_len resolved for a window size."""
    cfg = LiftConfig(**overrides)
    return replace(cfg, seg_len=cfg.resolved_seg_len(context_window))
