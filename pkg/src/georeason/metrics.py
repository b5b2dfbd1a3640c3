"""Evaluation metrics: token/entity P-R-F1, recall@k, per-class and micro F1."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence


@dataclass(frozen=True)
class PrfReport:
    precision: float
    recall: float
    f1: float
    tp: int
    n_pred: int
    n_gold: int

    @classmethod
    def from_counts(cls, tp: int, n_pred: int, n_gold: int) -> "PrfReport":
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        return cls(precision=p, recall=r, f1=f1, tp=tp, n_pred=n_pred, n_gold=n_gold)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "n_pred": self.n_pred,
            "n_gold": self.n_gold,
        }


def token_prf(pred_tags: Sequence, gold_tags: Sequence, target) -> PrfReport:
    """Per-position precision/recall/F1 of one target tag class."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError(
            f"sequence lengths differ: {len(pred_tags)} vs {len(gold_tags)}"
        )
    tp = sum(1 for p, g in zip(pred_tags, gold_tags) if p == target and g == target)
    n_pred = sum(1 for p in pred_tags if p == target)
    n_gold = sum(1 for g in gold_tags if g == target)
    return PrfReport.from_counts(tp, n_pred, n_gold)


def entity_prf(
    pred_spans: Sequence[set | frozenset | list],
    gold_spans: Sequence[set | frozenset | list],
) -> PrfReport:
    """Exact-match entity P/R/F1 over per-document span sets.

    A predicted (start, end) counts only when the gold set of the same
    document contains exactly that span; partial overlap scores nothing.
    """
    if len(pred_spans) != len(gold_spans):
        raise ValueError("pred and gold must cover the same documents")
    tp = n_pred = n_gold = 0
    for pred, gold in zip(pred_spans, gold_spans):
        pred = set(map(tuple, pred))
        gold = set(map(tuple, gold))
        tp += len(pred & gold)
        n_pred += len(pred)
        n_gold += len(gold)
    return PrfReport.from_counts(tp, n_pred, n_gold)


def recall_at_k(
    ranked: Sequence[Sequence[Hashable]], gold: Sequence[Hashable], k: int
) -> float:
    """Fraction of queries whose gold id appears in the first k candidates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked) != len(gold):
        raise ValueError("one gold id per ranked list required")
    if not ranked:
        raise ValueError("recall@k over an empty query set is undefined")
    hits = sum(1 for cands, g in zip(ranked, gold) if g in list(cands)[:k])
    return hits / len(ranked)


def micro_f1(
    pred: Sequence[Hashable], gold: Sequence[Hashable], classes: Sequence[Hashable]
) -> tuple[list[float], float]:
    """(per-class one-vs-rest F1, pooled micro F1).

    Micro F1 pools tp/fp/fn over all classes; for single-label predictions
    it coincides with plain accuracy.
    """
    if len(pred) != len(gold):
        raise ValueError("pred and gold must have equal length")
    class_set = set(classes)
    for label in list(pred) + list(gold):
        if label not in class_set:
            raise ValueError(f"unknown label {label!r}")
    per_class = []
    pooled_tp = pooled_fp = pooled_fn = 0
    for c in classes:
        tp = sum(1 for p, g in zip(pred, gold) if p == c and g == c)
        fp = sum(1 for p, g in zip(pred, gold) if p == c and g != c)
        fn = sum(1 for p, g in zip(pred, gold) if p != c and g == c)
        per_class.append(PrfReport.from_counts(tp, tp + fp, tp + fn).f1)
        pooled_tp += tp
        pooled_fp += fp
        pooled_fn += fn
    micro = PrfReport.from_counts(pooled_tp, pooled_tp + pooled_fp, pooled_tp + pooled_fn).f1
    return per_class, micro
