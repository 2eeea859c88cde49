"""Annotated sentence corpora: segmentation, JSONL I/O, splits, mixing, synthesis.

Corpus files are JSON Lines, one object per sentence:

    {"text": "...", "entities": [{"start": 0, "end": 3, "kind": "M"}, ...]}

Offsets are Unicode code-point offsets into ``text``; ``end`` is exclusive.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import AnnotationError, ConfigurationError, CorpusSizeError

ENTITY_KINDS = ("M", "D")


@dataclass(frozen=True)
class EntitySpan:
    """Character span [start, end) of one entity; kind is "M" or "D"."""

    start: int
    end: int
    kind: str

    def text_of(self, text: str) -> str:
        return text[self.start : self.end]


@dataclass
class AnnotatedSentence:
    text: str
    entities: list[EntitySpan] = field(default_factory=list)

    def __post_init__(self):
        if not self.text:
            raise AnnotationError("sentence text is empty")
        self.entities = sorted(self.entities, key=lambda s: (s.start, s.end))
        last_end = 0
        for span in self.entities:
            if span.kind not in ENTITY_KINDS:
                raise AnnotationError(f"unknown entity kind {span.kind!r}")
            if not (0 <= span.start < span.end <= len(self.text)):
                raise AnnotationError(
                    f"span ({span.start}, {span.end}) out of bounds for text of "
                    f"length {len(self.text)}"
                )
            if span.start < last_end:
                raise AnnotationError(
                    f"overlapping spans at offset {span.start} in {self.text!r}"
                )
            surface = span.text_of(self.text)
            if surface != surface.strip():
                raise AnnotationError(
                    f"span {surface!r} has leading/trailing whitespace"
                )
            last_end = span.end


@dataclass
class Corpus:
    name: str
    sentences: list[AnnotatedSentence]

    def __post_init__(self):
        if not self.name:
            raise AnnotationError("corpus name is empty")

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


# --------------------------------------------------------------------------
# Sentence segmentation
# --------------------------------------------------------------------------

# Periods ending these tokens never terminate a sentence. Fixed small set;
# matched case-insensitively with a word boundary on the left.
ABBREVIATIONS = ("e.g", "i.e", "et al", "fig", "eq", "vs")

_ABBREV_RE = re.compile(
    r"(?:^|[^A-Za-z])(?:%s)$" % "|".join(re.escape(a) for a in ABBREVIATIONS),
    re.IGNORECASE,
)

_TERMINATORS = ".?!"


def _is_boundary(text: str, i: int) -> bool:
    """True if the terminator at text[i] ends a sentence."""
    if i + 1 < len(text) and not text[i + 1].isspace():
        return False
    if text[i] != ".":
        return True
    # decimal-number guard (a period flanked by digits never splits)
    if 0 < i < len(text) - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
        return False
    return not _ABBREV_RE.search(text, 0, i)


def segment_sentences(text: str) -> list[str]:
    """Split plain text into sentences on '.', '?', '!' followed by
    whitespace or end of input, guarding abbreviations and decimals.
    """
    sentences: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in _TERMINATORS and _is_boundary(text, i):
            piece = text[start : i + 1].strip()
            if piece:
                sentences.append(piece)
            start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def paragraph_blocks(text: str) -> list[str]:
    """Split an ingestion file into paragraphs (blocks separated by blank lines)."""
    blocks = re.split(r"\n\s*\n", text)
    return [" ".join(b.split()) for b in blocks if b.strip()]


def corpus_from_text(text: str, name: str) -> Corpus:
    """Segment raw paragraphs into an unannotated corpus."""
    sentences = []
    for block in paragraph_blocks(text):
        for sent in segment_sentences(block):
            sentences.append(AnnotatedSentence(sent, []))
    return Corpus(name, sentences)


# --------------------------------------------------------------------------
# JSONL I/O
# --------------------------------------------------------------------------


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    path = Path(path)
    sentences = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{path}:{lineno}: invalid JSON: {exc}")
            try:
                spans = [
                    EntitySpan(int(e["start"]), int(e["end"]), str(e["kind"]))
                    for e in obj.get("entities", [])
                ]
                sentences.append(AnnotatedSentence(str(obj["text"]), spans))
            except (KeyError, TypeError) as exc:
                raise ConfigurationError(f"{path}:{lineno}: malformed record: {exc}")
            except AnnotationError as exc:
                raise AnnotationError(f"{path}:{lineno}: {exc}")
    return Corpus(name or path.stem, sentences)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            obj = {
                "text": sent.text,
                "entities": [
                    {"start": s.start, "end": s.end, "kind": s.kind}
                    for s in sent.entities
                ],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    tmp.replace(path)


# --------------------------------------------------------------------------
# Splitting and mixing
# --------------------------------------------------------------------------


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    raise ConfigurationError(f"not a usable fraction: {value!r}")


@dataclass
class SplitSpec:
    """Train/validation/test fractions (must sum to exactly 1) plus a seed."""

    train_fraction: Fraction = Fraction(7, 10)
    val_fraction: Fraction = Fraction(1, 10)
    test_fraction: Fraction = Fraction(2, 10)
    seed: int = 0

    def __post_init__(self):
        self.train_fraction = _as_fraction(self.train_fraction)
        self.val_fraction = _as_fraction(self.val_fraction)
        self.test_fraction = _as_fraction(self.test_fraction)
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f <= 0 for f in fracs):
            raise ConfigurationError(f"split fractions must be positive: {fracs}")
        if sum(fracs) != 1:
            raise ConfigurationError(f"split fractions must sum to 1: {fracs}")


def split_corpus(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus, Corpus]:
    """Deterministically partition a corpus into train/val/test.

    Validation and test sizes are floor-allocated; the remainder goes to
    the training fold. 2800 sentences at 7:1:2 give exactly 1960/280/560.
    """
    n = len(corpus)
    if n == 0:
        raise CorpusSizeError(f"corpus {corpus.name!r} is empty")
    n_val = math.floor(spec.val_fraction * n)
    n_test = math.floor(spec.test_fraction * n)
    n_train = n - n_val - n_test
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    pick = lambda idx: [corpus.sentences[i] for i in idx]
    return (
        Corpus(f"{corpus.name}-train", pick(order[:n_train])),
        Corpus(f"{corpus.name}-val", pick(order[n_train : n_train + n_val])),
        Corpus(f"{corpus.name}-test", pick(order[n_train + n_val :])),
    )


def build_mixed(corpora: list[Corpus], per_area: int, seed: int) -> Corpus:
    """Sample `per_area` sentences without replacement from each corpus and
    shuffle the union (e.g. 700 from each of 4 areas -> 2800 sentences)."""
    if per_area <= 0:
        raise ConfigurationError(f"per_area must be positive, got {per_area}")
    rng = np.random.default_rng(seed)
    combined: list[AnnotatedSentence] = []
    for corpus in corpora:
        if len(corpus) < per_area:
            raise CorpusSizeError(
                f"corpus {corpus.name!r} has {len(corpus)} sentences, "
                f"need {per_area}"
            )
        idx = rng.choice(len(corpus), size=per_area, replace=False)
        combined.extend(corpus.sentences[i] for i in idx)
    order = rng.permutation(len(combined))
    return Corpus("mixed", [combined[i] for i in order])


# --------------------------------------------------------------------------
# Synthetic corpora
# --------------------------------------------------------------------------

_SLOT_RE = re.compile(r"\{([MD])\}")


@dataclass
class SentenceTemplate:
    text: str
    weight: float = 1.0

    def slot_kinds(self) -> list[str]:
        return _SLOT_RE.findall(self.text)


@dataclass
class SyntheticSpec:
    """Declarative grammar: weighted sentence templates with {M}/{D} slots
    plus per-kind term pools."""

    templates: list[SentenceTemplate]
    pools: dict[str, list[str]]

    def __post_init__(self):
        if not self.templates:
            raise ConfigurationError("grammar has no templates")
        for tmpl in self.templates:
            if tmpl.weight <= 0:
                raise ConfigurationError(f"non-positive weight on {tmpl.text!r}")
            for kind in tmpl.slot_kinds():
                if not self.pools.get(kind):
                    raise ConfigurationError(
                        f"template {tmpl.text!r} uses slot {{{kind}}} but the "
                        f"{kind} term pool is empty"
                    )

    @classmethod
    def from_file(cls, path: str | Path) -> "SyntheticSpec":
        with Path(path).open(encoding="utf-8") as fh:
            obj = json.load(fh)
        templates = [
            SentenceTemplate(t["text"], float(t.get("weight", 1.0)))
            for t in obj["templates"]
        ]
        pools = {k: list(v) for k, v in obj.get("pools", {}).items()}
        return cls(templates, pools)

    def to_dict(self) -> dict:
        return {
            "templates": [{"text": t.text, "weight": t.weight} for t in self.templates],
            "pools": self.pools,
        }


def fill_template(template: SentenceTemplate, terms: list[str]) -> AnnotatedSentence:
    """Substitute `terms` into the template's slots, computing gold spans."""
    parts: list[str] = []
    spans: list[EntitySpan] = []
    pos = 0
    offset = 0
    for k, match in enumerate(_SLOT_RE.finditer(template.text)):
        parts.append(template.text[pos : match.start()])
        offset += match.start() - pos
        term = terms[k]
        spans.append(EntitySpan(offset, offset + len(term), match.group(1)))
        parts.append(term)
        offset += len(term)
        pos = match.end()
    parts.append(template.text[pos:])
    return AnnotatedSentence("".join(parts), spans)


def generate_synthetic(
    grammar: SyntheticSpec, n: int, seed: int, name: str = "synthetic"
) -> Corpus:
    """Draw n sentences from the grammar; reproducible from the seed."""
    rng = np.random.default_rng(seed)
    weights = np.array([t.weight for t in grammar.templates], dtype=float)
    weights /= weights.sum()
    sentences = []
    for _ in range(n):
        tmpl = grammar.templates[rng.choice(len(grammar.templates), p=weights)]
        terms = [
            grammar.pools[kind][rng.integers(len(grammar.pools[kind]))]
            for kind in tmpl.slot_kinds()
        ]
        sentences.append(fill_template(tmpl, terms))
    return Corpus(name, sentences)


# --------------------------------------------------------------------------
# Built-in grammars (replaceable defaults for `synth` and the grid harness)
# --------------------------------------------------------------------------

_SHARED_TEMPLATES = [
    ("We evaluate {M} on {D} .", 2.0),
    ("{M} outperforms {M} on the {D} benchmark .", 1.0),
    ("Results on {D} show that {M} is competitive .", 1.0),
    ("All models are trained on {D} .", 0.5),
    ("The baseline system uses {M} .", 0.5),
    ("Table 3 reports accuracy for {M} .", 0.5),
]

_AREA_GRAMMARS = {
    "nlp": {
        "templates": [
            ("We fine-tune {M} for sequence labeling on {D} .", 1.0),
            ("Perplexity of {M} drops sharply on {D} .", 1.0),
        ],
        "M": [
            "BERT", "ELMo", "GloVe", "word2vec", "BiLSTM", "CharCNN",
            "Transformer-XL", "GPT-2", "RoBERTa", "fastText", "seq2seq",
            "CopyNet", "CoVe", "ULMFiT", "StructBERT", "SpanBERT",
        ],
        "D": [
            "CoNLL-2003", "SQuAD", "WikiText-2", "Penn Treebank", "SNLI",
            "OntoNotes", "GLUE", "TriviaQA", "XNLI", "WMT14",
        ],
    },
    "cv": {
        "templates": [
            ("Detection accuracy of {M} improves on {D} .", 1.0),
            ("We pretrain {M} with augmented crops of {D} .", 1.0),
        ],
        "M": [
            "ResNet-50", "VGG-16", "YOLOv3", "Faster R-CNN", "U-Net",
            "MobileNet", "DenseNet", "Mask R-CNN", "HRNet", "EfficientNet",
            "AlexNet", "SqueezeNet", "RetinaNet", "DeepLab", "PointNet",
            "StyleGAN",
        ],
        "D": [
            "ImageNet", "COCO", "CIFAR-10", "Cityscapes", "PASCAL VOC",
            "KITTI", "CelebA", "LSUN", "ADE20K", "Places365",
        ],
    },
    "dm": {
        "templates": [
            ("Clustering quality of {M} is measured on {D} .", 1.0),
            ("{M} scales to the full {D} transaction log .", 1.0),
        ],
        "M": [
            "XGBoost", "LightGBM", "DBSCAN", "k-means", "random forest",
            "AdaBoost", "FP-growth", "PageRank", "LDA", "node2vec",
            "DeepWalk", "GBDT", "isolation forest", "Apriori", "HDBSCAN",
            "CatBoost",
        ],
        "D": [
            "UCI", "MovieLens", "Netflix", "KDD Cup 99", "Amazon Reviews",
            "Yelp", "Criteo", "Avazu", "Last.fm", "DBLP",
        ],
    },
    "ai": {
        "templates": [
            ("Cumulative reward of {M} rises steadily in {D} .", 1.0),
            ("We benchmark {M} against scripted agents in {D} .", 1.0),
        ],
        "M": [
            "DQN", "PPO", "A3C", "AlphaZero", "MCTS", "Q-learning",
            "SARSA", "DDPG", "TRPO", "REINFORCE", "TD3", "SAC",
            "MuZero", "CFR", "minimax search", "value iteration",
        ],
        "D": [
            "Atari", "MuJoCo", "OpenAI Gym", "StarCraft II", "DeepMind Lab",
            "Procgen", "Hanabi", "Sokoban", "GridWorld", "CartPole",
        ],
    },
}


def builtin_grammar(area: str = "generic") -> SyntheticSpec:
    """A small ready-made grammar. Areas: nlp, cv, dm, ai, generic."""
    if area == "generic":
        pools = {"M": [], "D": []}
        for spec in _AREA_GRAMMARS.values():
            pools["M"].extend(spec["M"][:4])
            pools["D"].extend(spec["D"][:3])
        templates = [SentenceTemplate(t, w) for t, w in _SHARED_TEMPLATES]
        return SyntheticSpec(templates, pools)
    if area not in _AREA_GRAMMARS:
        raise ConfigurationError(
            f"unknown grammar area {area!r}; choose from "
            f"{sorted(_AREA_GRAMMARS) + ['generic']}"
        )
    spec = _AREA_GRAMMARS[area]
    templates = [SentenceTemplate(t, w) for t, w in _SHARED_TEMPLATES]
    templates += [SentenceTemplate(t, w) for t, w in spec["templates"]]
    return SyntheticSpec(templates, {"M": list(spec["M"]), "D": list(spec["D"])})
