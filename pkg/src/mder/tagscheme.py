"""Character-level BIO tags: span <-> tag-sequence conversion.

Tag names are serialized exactly as "B-M", "I-M", "B-D", "I-D", "O", "PAD"
everywhere (reports, checkpoints, logs).
"""

from __future__ import annotations

from .corpus import AnnotatedSentence, EntitySpan
from .errors import AnnotationError, ShapeError

TAGS = ("B-M", "I-M", "B-D", "I-D", "O", "PAD")
TAG_TO_INDEX = {t: i for i, t in enumerate(TAGS)}
O_INDEX = TAG_TO_INDEX["O"]
PAD_INDEX = TAG_TO_INDEX["PAD"]
NUM_TAGS = len(TAGS)

ENTITY_KINDS = ("M", "D")


def begin_tag(kind: str) -> str:
    return f"B-{kind}"


def inside_tag(kind: str) -> str:
    return f"I-{kind}"


def encode_tags(sentence: AnnotatedSentence) -> list[str]:
    """Map a sentence's entity spans to one BIO tag per character.

    The first character of a span gets B-<kind>, the rest I-<kind>
    (including any internal whitespace); everything else gets O.
    """
    tags = ["O"] * len(sentence.text)
    last_end = 0
    for span in sorted(sentence.entities, key=lambda s: s.start):
        if span.start < last_end:
            raise AnnotationError(
                f"overlapping spans at offset {span.start} in {sentence.text!r}"
            )
        if span.end > len(sentence.text):
            raise AnnotationError(
                f"span ({span.start}, {span.end}) exceeds text length "
                f"{len(sentence.text)}"
            )
        tags[span.start] = begin_tag(span.kind)
        for i in range(span.start + 1, span.end):
            tags[i] = inside_tag(span.kind)
        last_end = span.end
    return tags


def encode_tag_ids(sentence: AnnotatedSentence) -> list[int]:
    return [TAG_TO_INDEX[t] for t in encode_tags(sentence)]


def decode_entities(text: str, tags: list[str]) -> list[EntitySpan]:
    """Extract spans from a (possibly malformed) decoded tag sequence.

    Maximal runs B-X (I-X)* become spans. A stray I-X not preceded by a
    same-type B-X/I-X opens a new span rather than being dropped, so a
    CRF that emits malformed sequences still yields usable predictions.
    """
    if len(tags) != len(text):
        raise ShapeError(f"{len(tags)} tags for {len(text)} characters")
    spans: list[EntitySpan] = []
    open_start = -1
    open_kind = ""

    def close(end: int) -> None:
        nonlocal open_start
        if open_start >= 0:
            spans.append(EntitySpan(open_start, end, open_kind))
            open_start = -1

    for i, tag in enumerate(tags):
        if tag == "PAD":
            raise AnnotationError(f"PAD tag inside sequence at position {i}")
        if tag == "O":
            close(i)
        elif tag.startswith("B-"):
            close(i)
            open_start, open_kind = i, tag[2:]
        elif tag.startswith("I-"):
            kind = tag[2:]
            if open_start < 0 or kind != open_kind:
                close(i)  # stray I-X: treat as a span start
                open_start, open_kind = i, kind
        else:
            raise AnnotationError(f"unknown tag {tag!r} at position {i}")
    close(len(tags))
    return spans


def decode_entity_ids(text: str, tag_ids: list[int]) -> list[EntitySpan]:
    return decode_entities(text, [TAGS[i] for i in tag_ids])


def decode_predicted_ids(text: str, tag_ids: list[int]) -> list[EntitySpan]:
    """Span extraction for model output: nothing stops a decoder from
    emitting PAD at a real position, and a predicted PAD marks no entity,
    so it reads as O here."""
    return decode_entities(
        text, ["O" if i == PAD_INDEX else TAGS[i] for i in tag_ids]
    )
