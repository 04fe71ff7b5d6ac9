"""Pre-adaptation supervised fine-tuning on a corpus of (document, QA) pairs.

Trains with the same joint objective as single-document adaptation, but
averaged over documents: (1/N) * sum_i (input_loss_i + aux_weight * at_loss_i).
One optimizer step per outer epoch over the whole corpus, mirroring the
single-batch accumulation convention.

With a one-document corpus and matching seeds/config this reduces
bit-for-bit to lift.lift_adapt on that document: the document's samples
are shuffled with the same "epoch/{e}/doc/{position}" seed label (the
single document sits at position 0) and the 1/1 scaling is a no-op.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .lift import (EpochStats, LiftConfig, Sample, TrainReport,
                   accumulate_gradients, build_samples, plan_for)
from .model import Model
from .seeding import derive_seed
from .segmenter import extract
from .synth import QASet


@dataclass
class SftConfig:
    """Corpus-level knobs; per-document behavior comes from lift_config."""
    lift_config: LiftConfig = field(default_factory=LiftConfig)
    n_docs: int = 8
    qa_per_doc: int = 16
    outer_epochs: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_docs < 1:
            raise ValueError("n_docs must be at least 1")
        if self.qa_per_doc < 0:
            raise ValueError("qa_per_doc must be non-negative")
        if self.outer_epochs < 1:
            raise ValueError("outer_epochs must be at least 1")


def _doc_samples(model: Model, tokens: list[int], qas: QASet | None,
                 config: SftConfig) -> list[Sample]:
    """One document's weighted samples under the 1/N corpus scaling."""
    lc = config.lift_config
    W = model.config.context_window
    plan = plan_for(lc, len(tokens), W)
    segments = [s for s in extract(tokens, plan) if len(s) >= 2]
    if not segments:
        raise ValueError("document yields no trainable segments")
    qa_pairs = list(qas) if qas is not None else []
    for p in qa_pairs:
        if len(p.question) + len(p.answer) > W:
            raise ValueError("QA pair longer than the context window")
    return build_samples(segments, qa_pairs, lc.aux_weight,
                         outer_scale=1.0 / config.n_docs)


def accumulate_corpus_gradients(model: Model, corpus, config: SftConfig,
                                epoch: int) -> dict:
    """Zero grads, then accumulate the epoch's corpus gradient in place.

    Documents are visited in an epoch-seeded shuffled order; each
    document's samples are shuffled with a seed labeled by the document's
    position in that order, so a one-document corpus replays the exact
    permutation sequence lift_adapt would use. Returns pooled loss sums.
    """
    lc = config.lift_config
    doc_rng = np.random.default_rng(derive_seed(config.seed, f"sft/epoch/{epoch}"))
    doc_order = doc_rng.permutation(len(corpus))
    for t in model.params.values():
        t.zero_grad()
    totals = {"seg_sum": 0.0, "seg_n": 0, "qa_sum": 0.0, "qa_n": 0,
              "seg_tokens": 0, "qa_tokens": 0}
    for position, doc_idx in enumerate(doc_order):
        tokens, qas = corpus[doc_idx]
        samples = _doc_samples(model, list(tokens), qas, config)
        rng = np.random.default_rng(
            derive_seed(config.seed, f"epoch/{epoch}/doc/{position}"))
        order = rng.permutation(len(samples))
        stats = accumulate_gradients(model, [samples[i] for i in order],
                                     lc.micro_batch)
        for k in totals:
            totals[k] += stats[k]
    return totals


def sft_train(base_model: Model, corpus, config: SftConfig) -> tuple[Model, TrainReport]:
    """Fine-tune a copy of base_model on a corpus of (tokens, QASet) pairs.

    Per outer epoch: one pass over the shuffled corpus accumulating the
    1/N-scaled joint gradient, then one clipped AdamW step.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    if len(corpus) != config.n_docs:
        raise ValueError(f"corpus has {len(corpus)} documents, "
                         f"config says n_docs={config.n_docs}")
    lc = config.lift_config

    model = base_model.copy()
    opt = nc.AdamW(model.params, lc.optimizer)

    epoch_stats: list[EpochStats] = []
    t_start = time.perf_counter()
    for epoch in range(config.outer_epochs):
        t0 = time.perf_counter()
        stats = accumulate_corpus_gradients(model, corpus, config, epoch)
        grad_norm = nc.clip_grad_norm_(model.params.values(),
                                       lc.optimizer.max_grad_norm)
        opt.step()
        input_loss = stats["seg_sum"] / stats["seg_n"]
        at_loss = stats["qa_sum"] / stats["qa_n"] if stats["qa_n"] else None
        total = input_loss + lc.aux_weight * at_loss if at_loss is not None else input_loss
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

    # seg_len/stride in the report reflect the config, resolved against W
    seg_len = lc.resolved_seg_len(model.config.context_window)
    report = TrainReport(
        epochs=epoch_stats,
        segment_count=stats["seg_n"],
        qa_pair_count=stats["qa_n"],
        plan_kind=lc.plan,
        seg_len=seg_len,
        stride=lc.resolved_stride(seg_len),
        total_wall_time=time.perf_counter() - t_start,
    )
    return model, report
