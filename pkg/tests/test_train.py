import pytest
import torch

from mder.corpus import AnnotatedSentence, Corpus, SplitSpec, generate_synthetic
from mder.errors import ConfigurationError, CorpusSizeError, TrainingDivergedError
from mder.model import AblationFlags, MethodDatasetTagger, ModelConfig
from mder.rules import RuleLexicon
from mder.train import (
    TrainConfig,
    aggregate_reports,
    evaluate,
    grid,
    predict_spans,
    train,
)

from util import tiny_grammar

TINY_MODEL = dict(d_r=4, d_c=12, d_h=12, k=4, d_q=8, m_max=80, dropout=0.0)
LEX = RuleLexicon(["svm", "lstm"], ["wiki"], ["the"])


def small_corpora(n=24, seed=0):
    corpus = generate_synthetic(tiny_grammar(), n, seed=seed, name="small")
    k = max(2, n // 6)
    return (
        Corpus("train", corpus.sentences[: n - k]),
        Corpus("val", corpus.sentences[n - k :]),
    )


def quick_config(**overrides):
    base = dict(
        batch_size=8,
        learning_rate=0.01,
        dropout=0.0,
        max_epochs=3,
        patience=3,
        seed=0,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_deterministic_given_seed(self):
        tr, va = small_corpora()
        mc = ModelConfig(**TINY_MODEL)
        one = train(tr, va, mc, quick_config(), LEX)
        two = train(tr, va, mc, quick_config(), LEX)
        assert one.report.losses == two.report.losses
        assert [e.val_f1 for e in one.report.epochs] == [
            e.val_f1 for e in two.report.epochs
        ]
        for a, b in zip(one.model.parameters(), two.model.parameters()):
            assert torch.equal(a, b)

    def test_different_seed_changes_losses(self):
        tr, va = small_corpora()
        mc = ModelConfig(**TINY_MODEL)
        one = train(tr, va, mc, quick_config(seed=0), LEX)
        two = train(tr, va, mc, quick_config(seed=1), LEX)
        assert one.report.losses != two.report.losses

    def test_zero_learning_rate_freezes_parameters(self):
        tr, va = small_corpora()
        mc = ModelConfig(**TINY_MODEL)
        result = train(
            tr, va, mc, quick_config(learning_rate=0.0, max_epochs=3), LEX
        )
        torch.manual_seed(0)
        fresh = MethodDatasetTagger(
            ModelConfig(**TINY_MODEL), len(result.vocab), AblationFlags()
        )
        for (name, trained), (_, init) in zip(
            result.model.state_dict().items(), fresh.state_dict().items()
        ):
            assert torch.equal(trained, init), name
        losses = result.report.losses
        assert max(losses) - min(losses) < 1e-12

    def test_loss_decreases_on_learnable_data(self):
        tr, va = small_corpora(n=40)
        mc = ModelConfig(**TINY_MODEL)
        result = train(tr, va, mc, quick_config(max_epochs=6, patience=6), LEX)
        assert result.report.losses[-1] < result.report.losses[0]

    def test_selected_epoch_is_best_and_earliest(self):
        tr, va = small_corpora(n=30)
        mc = ModelConfig(**TINY_MODEL)
        result = train(tr, va, mc, quick_config(max_epochs=5, patience=5), LEX)
        f1s = [e.val_f1 for e in result.report.epochs]
        best = result.report.selected_epoch
        assert f1s[best] == max(f1s)
        assert best == f1s.index(max(f1s))

    def test_early_stopping_on_flat_validation(self):
        tr, va = small_corpora()
        mc = ModelConfig(**TINY_MODEL)
        result = train(
            tr,
            va,
            mc,
            quick_config(learning_rate=0.0, max_epochs=20, patience=2),
            LEX,
        )
        # epoch 0 sets the best; epochs 1-2 cannot improve; stop after 2
        assert len(result.report.epochs) == 3

    def test_divergence_detected(self):
        tr, va = small_corpora()
        mc = ModelConfig(**TINY_MODEL)
        with pytest.raises(TrainingDivergedError):
            train(tr, va, mc, quick_config(learning_rate=1e30, max_epochs=4), LEX)

    def test_empty_corpus_rejected(self):
        tr, va = small_corpora()
        with pytest.raises(CorpusSizeError):
            train(Corpus("x", []), va, ModelConfig(**TINY_MODEL), quick_config(), LEX)

    def test_bad_train_config_rejected(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)

    def test_progress_callback_sees_every_epoch(self):
        tr, va = small_corpora()
        seen = []
        train(
            tr,
            va,
            ModelConfig(**TINY_MODEL),
            quick_config(max_epochs=2),
            LEX,
            progress=seen.append,
        )
        assert [e.epoch for e in seen] == [0, 1]

    def test_wallclock_recorded(self):
        tr, va = small_corpora()
        result = train(tr, va, ModelConfig(**TINY_MODEL), quick_config(), LEX)
        assert all(e.seconds > 0 for e in result.report.epochs)


class TestEvaluate:
    def test_no_entities_no_predictions_gives_zeroes(self):
        corpus = Corpus("empty", [AnnotatedSentence("plain words only here")])
        torch.manual_seed(0)
        from mder.model import CharVocabulary

        vocab = CharVocabulary.build(corpus)
        model = MethodDatasetTagger(ModelConfig(**TINY_MODEL), len(vocab))
        with torch.no_grad():  # force every emission toward O
            model.W_a.zero_()
            model.b_a.copy_(torch.tensor([-5.0, -5.0, -5.0, -5.0, 5.0, -5.0]))
            model.transitions.data.zero_()
        report = evaluate(model, vocab, corpus, LEX)
        assert (report.precision, report.recall, report.f1) == (0.0, 0.0, 0.0)

    def test_unknown_characters_map_to_unk(self):
        tr, va = small_corpora()
        result = train(tr, va, ModelConfig(**TINY_MODEL), quick_config(), LEX)
        exotic = Corpus("x", [AnnotatedSentence("ΩΩΩ unseen glyphs")])
        report = evaluate(result.model, result.vocab, exotic, LEX)
        assert report.annotated == 0

    def test_overfit_then_evaluate_on_train(self):
        corpus = generate_synthetic(tiny_grammar(), 30, seed=2, name="memorize")
        mc = ModelConfig(**TINY_MODEL)
        tc = quick_config(max_epochs=60, patience=60, learning_rate=0.01)
        result = train(corpus, corpus, mc, tc, LEX)
        report = evaluate(result.model, result.vocab, corpus, LEX)
        assert report.f1 >= 0.9
        # an overfit model must recover a trained-on surface via predict
        sent = next(s for s in corpus if s.entities)
        found = predict_spans(result.model, result.vocab, [sent.text], LEX)[0]
        assert any(
            (f.start, f.end, f.kind) == (g.start, g.end, g.kind)
            for f in found
            for g in sent.entities
        )

    def test_predict_spans_runs(self):
        tr, va = small_corpora()
        result = train(tr, va, ModelConfig(**TINY_MODEL), quick_config(), LEX)
        spans = predict_spans(result.model, result.vocab, ["We evaluate SVM on Wiki ."], LEX)
        assert len(spans) == 1
        for s in spans[0]:
            assert 0 <= s.start < s.end <= 25


class TestGrid:
    def test_shape_and_report(self):
        corpora = [
            generate_synthetic(tiny_grammar(), 30, seed=s, name=f"c{s}")
            for s in (0, 1)
        ]
        mc = ModelConfig(**TINY_MODEL)
        tc = quick_config(max_epochs=2)
        report = grid(corpora, mc, tc, split_spec=SplitSpec(seed=0), lexicon=LEX)
        assert report.names == ["c0", "c1"]
        assert len(report.f1) == 2 and all(len(r) == 2 for r in report.f1)
        d = report.to_dict()
        assert len(d["mean"]) == 2 and len(d["std"]) == 2
        mean0 = sum(report.f1[0]) / 2
        assert d["mean"][0] == pytest.approx(mean0)


class TestAggregate:
    def test_mean_std_and_both_f1_conventions(self):
        from mder.metrics import MetricsReport

        reports = [
            MetricsReport(0.8, 0.6, 2 * 0.8 * 0.6 / 1.4, 10, 8, 13),
            MetricsReport(0.6, 0.8, 2 * 0.6 * 0.8 / 1.4, 10, 6, 8),
        ]
        agg = aggregate_reports(reports)
        assert agg["runs"] == 2
        assert agg["precision_mean"] == pytest.approx(0.7)
        assert agg["recall_mean"] == pytest.approx(0.7)
        assert agg["f1_mean"] == pytest.approx(2 * 0.8 * 0.6 / 1.4)
        assert agg["f1_of_mean_pr"] == pytest.approx(0.7)
