"""Labeled/unlabeled example set management.

Gold labels come from a majority vote over three designated raters,
classes are balanced to the median class size, and the train/validation
split is stratified.  Unlabeled examples carry the ``UNK_UNK`` sentinel
so the supervised loss can mask them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

UNLABELED_SENTINEL = "UNK_UNK"


class SentimentLabel(enum.Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    NEUTRAL = "NEUTRAL"
    UNLABELED = UNLABELED_SENTINEL

    def __str__(self) -> str:
        return self.value


#: Fixed class order used everywhere (logit positions, tie breaking, reports).
REAL_CLASSES = (SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL)


def parse_label(text: str) -> SentimentLabel:
    try:
        return SentimentLabel(text)
    except ValueError:
        raise ValueError(f"unknown sentiment label: {text!r}") from None


@dataclass(frozen=True)
class RaterAnnotation:
    rater_id: str
    pmid: str
    label: SentimentLabel

    def __post_init__(self):
        if self.label is SentimentLabel.UNLABELED:
            raise ValueError("rater annotations must use a real class")


@dataclass
class GoldLabel:
    pmid: str
    label: Optional[SentimentLabel]
    vote_counts: dict
    resolved: bool


@dataclass
class DatasetSplit:
    train: list
    validation: list
    seed: int


@dataclass
class TrainingCorpus:
    """Combined labeled + unlabeled examples with provenance."""

    examples: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    is_labeled: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def n_labeled(self) -> int:
        return sum(self.is_labeled)

    @property
    def n_unlabeled(self) -> int:
        return len(self.examples) - self.n_labeled


def majority_label(annotations: Sequence[RaterAnnotation]) -> GoldLabel:
    """Aggregate exactly three independent ratings into a gold label.

    A strict plurality (2 or 3 votes) resolves the label; a three-way
    tie is marked unresolved for manual adjudication.
    """
    if len(annotations) != 3:
        raise ValueError(f"expected exactly 3 annotations, got {len(annotations)}")
    pmids = {a.pmid for a in annotations}
    if len(pmids) != 1:
        raise ValueError(f"annotations span multiple pmids: {sorted(pmids)}")
    raters = {a.rater_id for a in annotations}
    if len(raters) != 3:
        raise ValueError("duplicate rater in annotation triple")

    pmid = annotations[0].pmid
    counts: dict = {}
    for a in annotations:
        counts[a.label] = counts.get(a.label, 0) + 1
    vote_counts = {lbl.value: counts.get(lbl, 0) for lbl in REAL_CLASSES}
    best = max(counts.values())
    if best >= 2:
        winner = next(lbl for lbl in REAL_CLASSES if counts.get(lbl, 0) == best)
        return GoldLabel(pmid=pmid, label=winner, vote_counts=vote_counts, resolved=True)
    return GoldLabel(pmid=pmid, label=None, vote_counts=vote_counts, resolved=False)


def balance_classes(labeled: Sequence[tuple], seed: int) -> list:
    """Resample so every class count equals the median class count.

    The smallest class keeps all its members and is padded by sampling
    with replacement; the largest is reduced by sampling without
    replacement; the median class passes through unchanged.
    """
    by_class: dict = {lbl: [] for lbl in REAL_CLASSES}
    for example, label in labeled:
        if label is SentimentLabel.UNLABELED:
            raise ValueError("balance_classes does not accept unlabeled examples")
        by_class[label].append((example, label))
    counts = [len(by_class[lbl]) for lbl in REAL_CLASSES]
    if any(c == 0 for c in counts):
        missing = [lbl.value for lbl, c in zip(REAL_CLASSES, counts) if c == 0]
        raise ValueError(f"cannot balance: empty class(es) {missing}")

    median = int(np.median(counts))
    rng = np.random.default_rng(seed)
    out: list = []
    for lbl in REAL_CLASSES:
        members = by_class[lbl]
        n = len(members)
        if n == median:
            out.extend(members)
        elif n < median:
            out.extend(members)
            extra = rng.integers(0, n, size=median - n)
            out.extend(members[i] for i in extra)
        else:
            keep = rng.choice(n, size=median, replace=False)
            out.extend(members[i] for i in sorted(keep))
    return out


def split(examples: Sequence[tuple], holdout_fraction: float, seed: int) -> DatasetSplit:
    """Class-stratified train/validation partition.

    Validation size is ceil(fraction * N); per-class holdout counts are
    equal when the total divides evenly, otherwise classes with the
    largest fractional remainder absorb the leftovers.
    """
    if not examples:
        raise ValueError("cannot split an empty example list")
    if not (0.0 < holdout_fraction < 1.0):
        raise ValueError(f"holdout_fraction must be in (0,1), got {holdout_fraction}")

    n_total = len(examples)
    n_val = math.ceil(holdout_fraction * n_total)

    by_class: dict = {}
    for idx, (example, label) in enumerate(examples):
        by_class.setdefault(label, []).append(idx)
    class_order = sorted(by_class, key=lambda l: l.value)

    quotas = {}
    remainders = []
    for lbl in class_order:
        exact = holdout_fraction * len(by_class[lbl])
        quotas[lbl] = math.floor(exact)
        remainders.append((exact - quotas[lbl], lbl))
    leftover = n_val - sum(quotas.values())
    for _, lbl in sorted(remainders, key=lambda t: -t[0])[:leftover]:
        quotas[lbl] += 1

    rng = np.random.default_rng(seed)
    val_idx: set = set()
    for lbl in class_order:
        idxs = by_class[lbl]
        chosen = rng.choice(len(idxs), size=quotas[lbl], replace=False)
        val_idx.update(idxs[i] for i in chosen)

    train = [examples[i] for i in range(n_total) if i not in val_idx]
    validation = [examples[i] for i in range(n_total) if i in val_idx]
    return DatasetSplit(train=train, validation=validation, seed=seed)


def assemble_training_corpus(labeled: Sequence[tuple], unlabeled: Sequence,
                             pmid_of=None) -> TrainingCorpus:
    """Attach the unlabeled sentinel and merge the two example pools.

    ``pmid_of`` extracts an identifier for the disjointness check; it
    defaults to ``ex["pmid"]`` for dict-like examples and is skipped when
    it returns None.
    """
    if pmid_of is None:
        def pmid_of(ex):
            try:
                return ex.get("pmid")
            except AttributeError:
                return getattr(ex, "pmid", None)

    labeled_ids = {p for p in (pmid_of(ex) for ex, _ in labeled) if p is not None}
    unlabeled_ids = {p for p in (pmid_of(ex) for ex in unlabeled) if p is not None}
    overlap = labeled_ids & unlabeled_ids
    if overlap:
        raise ValueError(f"labeled/unlabeled pmid overlap: {sorted(overlap)}")

    corpus = TrainingCorpus()
    for example, label in labeled:
        corpus.examples.append(example)
        corpus.labels.append(label)
        corpus.is_labeled.append(True)
    for example in unlabeled:
        corpus.examples.append(example)
        corpus.labels.append(SentimentLabel.UNLABELED)
        corpus.is_labeled.append(False)
    return corpus
