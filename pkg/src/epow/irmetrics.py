"""Precision, recall and precision/recall curves over a four-way split of a
document collection (relevant vs not, retrieved vs not).

Undefined ratios raise instead of defaulting to 0 or 1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import FrozenSet, Hashable, Iterable, List, Sequence


class MetricsError(ValueError):
    pass


class NotInCorpus(MetricsError):
    pass


class EmptyRetrieval(MetricsError):
    pass


class NoRelevantItems(MetricsError):
    pass


class DuplicateInRanking(MetricsError):
    pass


class BadShape(MetricsError):
    pass


@dataclass(frozen=True)
class SegmentPartition:
    relevant_retrieved: FrozenSet
    nonrelevant_retrieved: FrozenSet
    relevant_not_retrieved: FrozenSet
    nonrelevant_not_retrieved: FrozenSet

    @property
    def n_retrieved(self) -> int:
        return len(self.relevant_retrieved) + len(self.nonrelevant_retrieved)

    @property
    def n_relevant(self) -> int:
        return len(self.relevant_retrieved) + len(self.relevant_not_retrieved)

    @property
    def corpus(self) -> FrozenSet:
        return (self.relevant_retrieved | self.nonrelevant_retrieved
                | self.relevant_not_retrieved | self.nonrelevant_not_retrieved)


def partition(retrieved: Iterable[Hashable], relevant: Iterable[Hashable],
              corpus: Iterable[Hashable]) -> SegmentPartition:
    retrieved, relevant, corpus = frozenset(retrieved), frozenset(relevant), frozenset(corpus)
    stray = (retrieved | relevant) - corpus
    if stray:
        raise NotInCorpus(f"{len(stray)} ids outside the corpus, e.g. {sorted(map(str, stray))[:3]}")
    return SegmentPartition(
        relevant_retrieved=retrieved & relevant,
        nonrelevant_retrieved=retrieved - relevant,
        relevant_not_retrieved=relevant - retrieved,
        nonrelevant_not_retrieved=corpus - retrieved - relevant,
    )


def precision_fraction(p: SegmentPartition) -> Fraction:
    if p.n_retrieved == 0:
        raise EmptyRetrieval("precision is undefined when nothing was retrieved")
    return Fraction(len(p.relevant_retrieved), p.n_retrieved)


def recall_fraction(p: SegmentPartition) -> Fraction:
    if p.n_relevant == 0:
        raise NoRelevantItems("recall is undefined without relevant items")
    return Fraction(len(p.relevant_retrieved), p.n_relevant)


def precision(p: SegmentPartition) -> float:
    return float(precision_fraction(p))


def recall(p: SegmentPartition) -> float:
    return float(recall_fraction(p))


def overhead(p: SegmentPartition) -> float:
    """Share of reviewed items that were not relevant (1 - precision)."""
    return float(1 - precision_fraction(p))


@dataclass(frozen=True)
class PrPoint:
    rank: int
    recall: float
    precision: float


class PrCurve(tuple):
    """Tuple of :class:`PrPoint`, one per rank."""

    @property
    def precisions(self) -> List[float]:
        return [pt.precision for pt in self]

    @property
    def recalls(self) -> List[float]:
        return [pt.recall for pt in self]


def pr_curve(ranking: Sequence[Hashable], relevant: Iterable[Hashable]) -> PrCurve:
    relevant = frozenset(relevant)
    if len(set(ranking)) != len(ranking):
        raise DuplicateInRanking("ranking lists a document more than once")
    if not relevant:
        raise NoRelevantItems("recall is undefined without relevant items")
    points, hits = [], 0
    for k, doc in enumerate(ranking, start=1):
        hits += doc in relevant
        points.append(PrPoint(k, float(Fraction(hits, len(relevant))), float(Fraction(hits, k))))
    return PrCurve(points)


def ideal_pr_curve(n_relevant: int, n_total: int) -> PrCurve:
    """Every relevant item ranked first: precision 1 until all N are found."""
    if n_relevant <= 0 or n_relevant > n_total:
        raise BadShape(f"need 0 < N <= M, got N={n_relevant}, M={n_total}")
    return PrCurve(
        PrPoint(k, float(Fraction(min(k, n_relevant), n_relevant)), float(Fraction(min(k, n_relevant), k)))
        for k in range(1, n_total + 1)
    )


def summary_lines(p: SegmentPartition) -> List[str]:
    prec = precision(p)
    lines = [f"retrieved: {p.n_retrieved}", f"relevant: {p.n_relevant}",
             f"relevant retrieved: {len(p.relevant_retrieved)}",
             f"precision: {prec:.4f}"]
    try:
        lines.append(f"recall: {recall(p):.4f}")
    except NoRelevantItems:
        lines.append("recall: undefined (no relevant items)")
    lines.append(f"overhead: {overhead(p) * 100:.4g}% of review effort spent on non-relevant items")
    return lines


def read_id_file(path) -> List[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.lstrip().startswith("#")]


def evaluation_report(ranking: Sequence[str], relevant: Iterable[str]) -> str:
    """Comma-separated report: a ``k,recall,precision`` row per rank, then a
    summary block for the whole run."""
    relevant = frozenset(relevant)
    curve = pr_curve(ranking, relevant)
    p = partition(ranking, relevant, set(ranking) | relevant)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "recall", "precision"])
    for pt in curve:
        w.writerow([pt.rank, f"{pt.recall:.6f}", f"{pt.precision:.6f}"])
    w.writerow([])
    w.writerow(["metric", "value"])
    w.writerow(["retrieved", p.n_retrieved])
    w.writerow(["relevant", p.n_relevant])
    w.writerow(["relevant_retrieved", len(p.relevant_retrieved)])
    w.writerow(["precision", f"{precision(p):.6f}"])
    w.writerow(["recall", f"{recall(p):.6f}"])
    w.writerow(["overhead_percent", f"{overhead(p) * 100:.4f}"])
    return buf.getvalue()
