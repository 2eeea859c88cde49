"""Data augmentation by same-type entity substitution.

Synthetic sentences are copies of uniformly chosen originals with every
entity span independently replaced by a term drawn from the matching
glossary; span offsets are recomputed after each splice. By default a span
may draw its own surface form again (--no-self flips that).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import AnnotatedSentence, Corpus, EntitySpan
from .errors import ConfigurationError


@dataclass(frozen=True)
class Glossary:
    """Distinct gold surface forms per entity kind, sampled uniformly."""

    methods: tuple[str, ...]
    datasets: tuple[str, ...]

    def terms(self, kind: str) -> tuple[str, ...]:
        return self.methods if kind == "M" else self.datasets


def build_glossaries(corpus: Corpus) -> Glossary:
    methods, datasets = set(), set()
    for sent in corpus:
        for span in sent.entities:
            (methods if span.kind == "M" else datasets).add(span.text_of(sent.text))
    return Glossary(tuple(sorted(methods)), tuple(sorted(datasets)))


def _substitute(sent: AnnotatedSentence, glossary: Glossary, rng, allow_self: bool):
    text = sent.text
    pieces = []
    spans = []
    cursor = 0
    offset = 0
    for span in sent.entities:
        pool = glossary.terms(span.kind)
        if not pool:
            raise ConfigurationError(
                f"cannot substitute a {span.kind} span: glossary is empty"
            )
        surface = span.text_of(text)
        if allow_self:
            term = pool[rng.integers(len(pool))]
        else:
            candidates = [t for t in pool if t != surface]
            if not candidates:
                raise ConfigurationError(
                    f"--no-self needs a second {span.kind} glossary term "
                    f"besides {surface!r}"
                )
            term = candidates[rng.integers(len(candidates))]
        pieces.append(text[cursor : span.start])
        offset += span.start - cursor
        spans.append(EntitySpan(offset, offset + len(term), span.kind))
        pieces.append(term)
        offset += len(term)
        cursor = span.end
    pieces.append(text[cursor:])
    return AnnotatedSentence("".join(pieces), spans)


def augment(
    corpus: Corpus,
    multiplier: float,
    glossary: Glossary,
    seed: int,
    allow_self: bool = True,
) -> Corpus:
    """Grow a corpus to round(multiplier * size): the originals first,
    followed by substituted copies. Deterministic given the seed."""
    if multiplier < 1:
        raise ConfigurationError(f"multiplier must be >= 1, got {multiplier}")
    n = len(corpus)
    target = math.floor(multiplier * n + 0.5)
    rng = np.random.default_rng(seed)
    sentences = list(corpus.sentences)
    for _ in range(target - n):
        source = corpus.sentences[rng.integers(n)]
        sentences.append(_substitute(source, glossary, rng, allow_self))
    return Corpus(corpus.name, sentences)
