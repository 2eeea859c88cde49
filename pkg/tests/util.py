"""Shared helpers for the test suite."""

import itertools
from collections import deque

import numpy as np

from mder.corpus import (
    AnnotatedSentence,
    Corpus,
    EntitySpan,
    SentenceTemplate,
    SyntheticSpec,
)

WORD_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-"


def random_sentence(rng: np.random.Generator) -> AnnotatedSentence:
    """A random valid annotated sentence: 3-12 words, some single- or
    multi-word entity spans (multi-word spans keep their internal spaces)."""
    n_words = int(rng.integers(3, 13))
    words = []
    for _ in range(n_words):
        length = int(rng.integers(1, 9))
        words.append("".join(rng.choice(list(WORD_CHARS), size=length)))
    text = " ".join(words)

    starts = []
    pos = 0
    for w in words:
        starts.append(pos)
        pos += len(w) + 1

    spans = []
    i = 0
    while i < n_words:
        if rng.random() < 0.35:
            width = int(rng.integers(1, min(3, n_words - i) + 1))
            start = starts[i]
            end = starts[i + width - 1] + len(words[i + width - 1])
            kind = "M" if rng.random() < 0.6 else "D"
            spans.append(EntitySpan(start, end, kind))
            i += width
        else:
            i += 1
    return AnnotatedSentence(text, spans)


def random_corpus(rng: np.random.Generator, n: int, name: str = "random") -> Corpus:
    return Corpus(name, [random_sentence(rng) for _ in range(n)])


def tiny_grammar() -> SyntheticSpec:
    return SyntheticSpec(
        templates=[
            SentenceTemplate("We evaluate {M} on {D} ."),
            SentenceTemplate("{M} beats {M} on {D} ."),
            SentenceTemplate("Results of {M} on {D} are strong ."),
        ],
        pools={
            "M": ["SVM", "LSTM", "GRU", "CRF", "ResNet", "XGBoost"],
            "D": ["Wiki", "MNIST", "COCO", "SQuAD", "UCI"],
        },
    )


def brute_force_betweenness(g):
    """Independent oracle: enumerate every shortest path between every pair
    via BFS-layered DFS; interior nodes of each path share credit equally."""
    nodes = list(g.nodes)
    scores = {v: 0.0 for v in nodes}
    for s, t in itertools.combinations(nodes, 2):
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for w in g.neighbors(u):
                if w not in dist:
                    dist[w] = dist[u] + 1
                    q.append(w)
        if t not in dist:
            continue
        paths = []

        def extend(path):
            u = path[-1]
            if u == t:
                paths.append(list(path))
                return
            for w in g.neighbors(u):
                if dist.get(w) == dist[u] + 1 and dist[w] <= dist[t]:
                    extend(path + [w])

        extend([s])
        for path in paths:
            for interior in path[1:-1]:
                scores[interior] += 1.0 / len(paths)
    return scores
