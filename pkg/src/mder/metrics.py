"""Entity-level precision/recall/F1.

A predicted entity counts as correct only on an exact (start, end, kind)
match, i.e. every character of the entity carries the right label.
All-type scores are micro-averaged from summed counts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .corpus import EntitySpan
from .errors import AnnotationError, CountError


def _check_disjoint(spans: list[EntitySpan], label: str) -> None:
    last_end = -1
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        if span.start < last_end:
            raise AnnotationError(f"overlapping {label} spans at {span.start}")
        last_end = span.end


def match_entities(pred: list[EntitySpan], gold: list[EntitySpan]) -> int:
    """Number of exact-boundary, exact-type matches; each gold span is
    matched at most once."""
    _check_disjoint(pred, "predicted")
    _check_disjoint(gold, "gold")
    pred_keys = Counter((s.start, s.end, s.kind) for s in pred)
    gold_keys = Counter((s.start, s.end, s.kind) for s in gold)
    return sum((pred_keys & gold_keys).values())


def prf(identified: int, correct: int, annotated: int) -> tuple[float, float, float]:
    """Precision, recall and F1 from entity counts; 0/0 is defined as 0."""
    if identified < 0 or correct < 0 or annotated < 0:
        raise CountError("negative entity count")
    if correct > identified or correct > annotated:
        raise CountError(
            f"correct={correct} exceeds identified={identified} "
            f"or annotated={annotated}"
        )
    precision = correct / identified if identified else 0.0
    recall = correct / annotated if annotated else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    identified: int
    correct: int
    annotated: int
    per_type: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "identified": self.identified,
            "correct": self.correct,
            "annotated": self.annotated,
            "per_type": self.per_type,
        }


def evaluate_spans(
    pairs: list[tuple[list[EntitySpan], list[EntitySpan]]],
) -> MetricsReport:
    """Score (predicted, gold) span lists over a corpus: micro-averaged
    overall plus a per-kind breakdown."""
    totals = {"identified": 0, "correct": 0, "annotated": 0}
    by_kind = {
        kind: {"identified": 0, "correct": 0, "annotated": 0} for kind in ("M", "D")
    }
    for pred, gold in pairs:
        totals["identified"] += len(pred)
        totals["annotated"] += len(gold)
        totals["correct"] += match_entities(pred, gold)
        for kind in by_kind:
            pred_k = [s for s in pred if s.kind == kind]
            gold_k = [s for s in gold if s.kind == kind]
            by_kind[kind]["identified"] += len(pred_k)
            by_kind[kind]["annotated"] += len(gold_k)
            by_kind[kind]["correct"] += match_entities(pred_k, gold_k)

    p, r, f1 = prf(totals["identified"], totals["correct"], totals["annotated"])
    per_type = {}
    for kind, counts in by_kind.items():
        kp, kr, kf = prf(counts["identified"], counts["correct"], counts["annotated"])
        per_type[kind] = {"precision": kp, "recall": kr, "f1": kf, **counts}
    return MetricsReport(
        p, r, f1, totals["identified"], totals["correct"], totals["annotated"], per_type
    )
