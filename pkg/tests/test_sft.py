"""Corpus fine-tuning: reduction to single-document adaptation, the 1/N
scaling identity, determinism, and the loss trend on a toy corpus."""

import numpy as np
import pytest

from helpers import params_equal
from liftlab import numcore as nc
from liftlab.lift import LiftConfig, lift_adapt, loss_auxiliary, loss_input, plan_for
from liftlab.model import Model, ModelConfig, encode
from liftlab.segmenter import extract
from liftlab.sft import SftConfig, accumulate_corpus_gradients, sft_train
from liftlab.synth import QAPair, QASet, gen_sft_corpus

TINY = ModelConfig(context_window=16, n_layers=1, n_heads=2, embed_dim=16, seed=0)

FAST_OPT = nc.OptimHyper(learning_rate=1e-2)


def _lift_cfg(**overrides):
    base = dict(seg_len=8, stride=3, optimizer=FAST_OPT, seed=4)
    base.update(overrides)
    return LiftConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        SftConfig(n_docs=0)
    with pytest.raises(ValueError):
        SftConfig(qa_per_doc=-1)
    with pytest.raises(ValueError):
        SftConfig(outer_epochs=0)


def test_single_doc_reduces_to_lift_one_epoch():
    # N=1, no QAs, one outer epoch: bit-identical to a one-epoch lift_adapt
    base = Model(TINY)
    tokens = encode("a quiet harbor town kept its oldest maps in the attic.")
    lc = _lift_cfg(epochs=1, aux_weight=0.0)
    sft_model, sft_report = sft_train(
        base, [(tokens, QASet())], SftConfig(lift_config=lc, n_docs=1,
                                             outer_epochs=1, seed=lc.seed))
    lift_model, lift_report = lift_adapt(base, tokens, None, lc)
    assert params_equal(sft_model.params, lift_model.params)
    assert sft_report.epochs[0].input_loss == lift_report.epochs[0].input_loss


def test_single_doc_reduces_to_lift_multi_epoch():
    base = Model(TINY)
    tokens = encode("the archivist numbered every crate twice for luck.")
    lc = _lift_cfg(epochs=3, aux_weight=0.0)
    sft_model, _ = sft_train(
        base, [(tokens, QASet())], SftConfig(lift_config=lc, n_docs=1,
                                             outer_epochs=3, seed=lc.seed))
    lift_model, _ = lift_adapt(base, tokens, None, lc)
    assert params_equal(sft_model.params, lift_model.params)


def test_duplicating_corpus_keeps_gradient():
    # 1/N scaling: training on corpus + corpus gives the same per-epoch
    # gradient as the corpus alone (checked in float64)
    cfg64 = ModelConfig(vocab_size=64, context_window=16, n_layers=1,
                        n_heads=2, embed_dim=16, dtype="float64")
    docs = [[3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5], [2, 7, 1, 8, 2, 8, 1, 8, 2, 8]]
    qas = [QASet(pairs=[QAPair((1, 2), (3,), (0, 0))]), QASet()]
    corpus = list(zip(docs, qas))

    def epoch_grad(corpus, n_docs):
        m = Model(cfg64)
        cfg = SftConfig(lift_config=_lift_cfg(seg_len=6, stride=2, aux_weight=1.0),
                        n_docs=n_docs, seed=0)
        accumulate_corpus_gradients(m, corpus, cfg, epoch=0)
        return {k: t.grad for k, t in m.params.items() if t.grad is not None}

    g = epoch_grad(corpus, 2)
    g2 = epoch_grad(corpus + corpus, 4)
    assert set(g) == set(g2)
    for k in g:
        np.testing.assert_allclose(g2[k], g[k], atol=1e-6)


def test_sft_train_deterministic():
    base = Model(TINY)
    corpus = [(encode("one two three four five six."), QASet()),
              (encode("seven eight nine ten eleven."), QASet())]
    cfg = SftConfig(lift_config=_lift_cfg(aux_weight=0.0), n_docs=2,
                    outer_epochs=2, seed=7)
    m1, _ = sft_train(base, corpus, cfg)
    m2, _ = sft_train(base, corpus, cfg)
    assert params_equal(m1.params, m2.params)
    assert not params_equal(m1.params, base.params)


def test_sft_train_validation():
    base = Model(TINY)
    cfg = SftConfig(lift_config=_lift_cfg(), n_docs=2)
    with pytest.raises(ValueError):
        sft_train(base, [], SftConfig(lift_config=_lift_cfg(), n_docs=1))
    with pytest.raises(ValueError):
        sft_train(base, [(encode("abcd"), QASet())], cfg)  # 1 doc, n_docs=2
    long_qa = QASet(pairs=[QAPair(tuple(range(14)), (1, 2, 3), (0, 0))])
    with pytest.raises(ValueError):
        sft_train(base, [(encode("abcdefgh"), long_qa)],
                  SftConfig(lift_config=_lift_cfg(), n_docs=1))


def test_corpus_loss_trend():
    # N=8 toy corpus, 4 outer epochs: mean joint loss decreases in >= 3 of
    # 4 transitions (4 pre-step epoch losses plus a final evaluation)
    window = 64
    model_cfg = ModelConfig(context_window=window, n_layers=1, n_heads=2,
                            embed_dim=16, seed=2)
    base = Model(model_cfg)
    corpus_raw = gen_sft_corpus(n_docs=8, qa_per_doc=2, target_len=300, seed=1)
    corpus = [(doc.tokens(), qas) for doc, qas in corpus_raw]
    lc = _lift_cfg(seg_len=32, stride=12, aux_weight=1.0)
    cfg = SftConfig(lift_config=lc, n_docs=8, qa_per_doc=2, outer_epochs=4, seed=3)
    model, report = sft_train(base, corpus, cfg)

    losses = [e.total_loss for e in report.epochs]
    with nc.no_grad():
        final = 0.0
        for tokens, qas in corpus:
            plan = plan_for(lc, len(tokens), window)
            segs = [s for s in extract(tokens, plan) if len(s) >= 2]
            doc_loss = loss_input(model, segs).item()
            if len(qas):
                doc_loss += lc.aux_weight * loss_auxiliary(model, qas).item()
            final += doc_loss / len(corpus)
    losses.append(final)

    drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
    assert drops >= 3, f"loss sequence {losses}"


def test_report_counts_match_corpus():
    base = Model(TINY)
    corpus = [(encode("one two three four five six."), QASet()),
              (encode("seven eight nine ten eleven."), QASet())]
    cfg = SftConfig(lift_config=_lift_cfg(aux_weight=0.0), n_docs=2,
                    outer_epochs=2, seed=7)
    _, report = sft_train(base, corpus, cfg)
    assert len(report.epochs) == 2
    per_doc = [len([s for s in extract(t, plan_for(cfg.lift_config, len(t), 16))
                    if len(s) >= 2]) for t, _ in corpus]
    assert report.segment_count == sum(per_doc)
    assert report.qa_pair_count == 0
