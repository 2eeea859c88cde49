"""Mini-batch training with Adam, validation-based model selection, the
cross-corpus grid, and span-level evaluation.

Everything is deterministic given the seed in TrainConfig: parameter
initialization, batch order, and dropout all derive from it.
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import tagscheme
from .corpus import Corpus, SplitSpec, split_corpus
from .errors import ConfigurationError, CorpusSizeError, TrainingDivergedError
from .metrics import MetricsReport, evaluate_spans
from .model import (
    AblationFlags,
    CharVocabulary,
    MethodDatasetTagger,
    ModelConfig,
    encode_sentence,
    pad_batch,
)
from .rules import RuleLexicon, default_lexicon


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.001
    dropout: float = 0.5
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    ablation: AblationFlags = field(default_factory=AblationFlags)
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError(
                "batch_size, max_epochs and patience must be >= 1"
            )

    def to_dict(self) -> dict:
        d = {
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
            "ablation": self.ablation.to_dict(),
        }
        return d


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_f1: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats]
    selected_epoch: int
    best_val_f1: float

    @property
    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def to_dict(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "val_f1": e.val_f1,
                    "seconds": e.seconds,
                }
                for e in self.epochs
            ],
            "selected_epoch": self.selected_epoch,
            "best_val_f1": self.best_val_f1,
        }


@dataclass
class TrainResult:
    model: MethodDatasetTagger
    vocab: CharVocabulary
    report: TrainReport


def _encode_corpus(corpus, vocab, lexicon, m_max):
    """(encoded sequence, gold tag ids truncated to m_max) per sentence."""
    out = []
    for sent in corpus:
        seq = encode_sentence(sent.text, vocab, lexicon, m_max)
        gold = tagscheme.encode_tag_ids(sent)[: len(seq)]
        out.append((seq, gold))
    return out


def _length_buckets(items, batch_size):
    """Group indices into batches of near-equal length to keep padding low."""
    order = sorted(range(len(items)), key=lambda i: len(items[i][0]))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def train(
    train_corpus: Corpus,
    val_corpus: Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    lexicon: RuleLexicon | None = None,
    progress=None,
) -> TrainResult:
    """Minimize the mean per-character NLL with Adam; keep the parameters
    from the epoch with the best validation entity-F1 (ties -> earliest),
    stopping early after `patience` epochs without improvement.

    `progress`, if given, is called with each EpochStats as it is produced.
    """
    if len(train_corpus) == 0 or len(val_corpus) == 0:
        raise CorpusSizeError("training and validation corpora must be non-empty")
    lexicon = lexicon or default_lexicon()
    config = replace(model_config, dropout=train_config.dropout)

    torch.manual_seed(train_config.seed)
    rng = np.random.default_rng(train_config.seed)

    vocab = CharVocabulary.build(train_corpus)
    train_data = _encode_corpus(train_corpus, vocab, lexicon, config.m_max)
    val_data = _encode_corpus(val_corpus, vocab, lexicon, config.m_max)

    model = MethodDatasetTagger(config, len(vocab), train_config.ablation)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    batches = _length_buckets(train_data, train_config.batch_size)

    best_state = copy.deepcopy(model.state_dict())
    best_f1 = -1.0
    selected_epoch = -1
    stats: list[EpochStats] = []

    for epoch in range(train_config.max_epochs):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(len(batches))
        total_nll = 0.0
        total_chars = 0
        for b in order:
            idx = batches[b]
            seqs = [train_data[i][0] for i in idx]
            tags = [train_data[i][1] for i in idx]
            chars, rtags, mask, gold = pad_batch(seqs, tags)
            n_real = int(mask.sum())
            loss = model.sequence_nll(chars, rtags, mask, gold).sum() / n_real
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(
                    f"non-finite loss {loss.item()} at epoch {epoch}"
                )
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_config.clip_norm)
            optimizer.step()
            total_nll += loss.item() * n_real
            total_chars += n_real

        val_f1 = _evaluate_encoded(
            model, val_data, val_corpus, train_config.batch_size
        ).f1
        entry = EpochStats(
            epoch, total_nll / total_chars, val_f1, time.perf_counter() - t0
        )
        stats.append(entry)
        if progress is not None:
            progress(entry)

        if val_f1 > best_f1:
            best_f1 = val_f1
            selected_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - selected_epoch >= train_config.patience:
            break

    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, vocab, TrainReport(stats, selected_epoch, best_f1))


@torch.no_grad()
def _evaluate_encoded(model, data, corpus, batch_size) -> MetricsReport:
    pairs = []
    order = _length_buckets(data, batch_size)
    for idx in order:
        seqs = [data[i][0] for i in idx]
        chars, rtags, mask = pad_batch(seqs)
        paths = model.decode(chars, rtags, mask)
        for i, path in zip(idx, paths):
            sent = corpus.sentences[i]
            text = sent.text[: len(path)]
            pred = tagscheme.decode_predicted_ids(text, path)
            pairs.append((pred, sent.entities))
    return evaluate_spans(pairs)


def evaluate(
    model: MethodDatasetTagger,
    vocab: CharVocabulary,
    corpus: Corpus,
    lexicon: RuleLexicon | None = None,
    batch_size: int = 32,
) -> MetricsReport:
    """Entity-level P/R/F1 of the model on a corpus; characters unseen in
    training map to UNK."""
    lexicon = lexicon or default_lexicon()
    data = _encode_corpus(corpus, vocab, lexicon, model.config.m_max)
    return _evaluate_encoded(model, data, corpus, batch_size)


def predict_spans(
    model: MethodDatasetTagger,
    vocab: CharVocabulary,
    texts: list[str],
    lexicon: RuleLexicon | None = None,
    batch_size: int = 32,
):
    """Decode entity spans for raw sentences."""
    lexicon = lexicon or default_lexicon()
    data = [
        (encode_sentence(t, vocab, lexicon, model.config.m_max), None) for t in texts
    ]
    out: list = [None] * len(texts)
    for idx in _length_buckets(data, batch_size):
        seqs = [data[i][0] for i in idx]
        chars, rtags, mask = pad_batch(seqs)
        paths = model.decode(chars, rtags, mask)
        for i, path in zip(idx, paths):
            out[i] = tagscheme.decode_predicted_ids(texts[i][: len(path)], path)
    return out


# --------------------------------------------------------------------------
# Cross-corpus grid and repeated-run aggregation
# --------------------------------------------------------------------------


@dataclass
class GridReport:
    names: list[str]
    f1: list[list[float]]  # row = training corpus, column = test corpus

    def row_mean_std(self) -> list[tuple[float, float]]:
        return [
            (float(np.mean(row)), float(np.std(row))) for row in self.f1
        ]

    def to_dict(self) -> dict:
        stats = self.row_mean_std()
        return {
            "rows": self.names,
            "cols": self.names,
            "f1": self.f1,
            "mean": [m for m, _ in stats],
            "std": [s for _, s in stats],
        }


def grid(
    corpora: list[Corpus],
    model_config: ModelConfig,
    train_config: TrainConfig,
    split_spec: SplitSpec | None = None,
    lexicon: RuleLexicon | None = None,
) -> GridReport:
    """Train one model per corpus (on its train/val folds) and test every
    model on every corpus's frozen test fold."""
    lexicon = lexicon or default_lexicon()
    split_spec = split_spec or SplitSpec(seed=train_config.seed)
    folds = [split_corpus(c, split_spec) for c in corpora]
    matrix = []
    for train_fold, val_fold, _ in folds:
        result = train(train_fold, val_fold, model_config, train_config, lexicon)
        row = [
            evaluate(result.model, result.vocab, test_fold, lexicon).f1
            for _, _, test_fold in folds
        ]
        matrix.append(row)
    return GridReport([c.name for c in corpora], matrix)


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """Mean/std of P, R and F1 over repeated runs. Reports both the mean of
    per-run F1 values and the F1 recomputed from mean P and mean R; the two
    differ whenever runs vary."""
    ps = [r.precision for r in reports]
    rs = [r.recall for r in reports]
    f1s = [r.f1 for r in reports]
    mean_p, mean_r = float(np.mean(ps)), float(np.mean(rs))
    f1_of_means = 2 * mean_p * mean_r / (mean_p + mean_r) if mean_p + mean_r else 0.0
    return {
        "runs": len(reports),
        "precision_mean": mean_p,
        "precision_std": float(np.std(ps)),
        "recall_mean": mean_r,
        "recall_std": float(np.std(rs)),
        "f1_mean": float(np.mean(f1s)),
        "f1_std": float(np.std(f1s)),
        "f1_of_mean_pr": f1_of_means,
    }
