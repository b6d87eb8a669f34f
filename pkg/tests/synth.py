"""Synthetic 3-class token corpus used by the training tests.

Each class has a block of signal tokens; every position carries a signal
token with probability ``signal_prob``, otherwise a token drawn from the
shared pool, so small labeled sets underdetermine the class boundaries.
"""

import numpy as np

from trialsent.corpus import REAL_CLASSES, SentimentLabel, TrainingCorpus
from trialsent.preprocess import TokenSequence

VOCAB_SIZE = 64
SEQ_LEN = 16
PAD, UNK, CLS, SEP = 0, 1, 2, 3
CONTENT_LO = 4
_BLOCK = (VOCAB_SIZE - CONTENT_LO) // 3  # 20 signal tokens per class


def _sequence(rng, class_idx, signal_prob):
    n_content = SEQ_LEN - 2
    lo = CONTENT_LO + class_idx * _BLOCK
    tokens = []
    for _ in range(n_content):
        if rng.random() < signal_prob:
            tokens.append(int(rng.integers(lo, lo + _BLOCK)))
        else:
            tokens.append(int(rng.integers(CONTENT_LO, VOCAB_SIZE)))
    ids = [CLS] + tokens + [SEP]
    return TokenSequence(ids=ids, attention_mask=[1] * SEQ_LEN, length=SEQ_LEN)


def make_examples(n_per_class, seed, signal_prob=0.6):
    rng = np.random.default_rng(seed)
    examples, labels = [], []
    for c, lbl in enumerate(REAL_CLASSES):
        for _ in range(n_per_class):
            examples.append(_sequence(rng, c, signal_prob))
            labels.append(lbl)
    return examples, labels


def make_corpus(n_labeled_per_class, n_unlabeled, seed, signal_prob=0.6):
    """TrainingCorpus with labeled + unlabeled rows (unlabeled drawn evenly
    from the three classes, labels discarded)."""
    rng = np.random.default_rng(seed)
    corpus = TrainingCorpus()
    lab_ex, lab_lbl = make_examples(n_labeled_per_class, seed + 1, signal_prob)
    for ex, lbl in zip(lab_ex, lab_lbl):
        corpus.examples.append(ex)
        corpus.labels.append(lbl)
        corpus.is_labeled.append(True)
    for i in range(n_unlabeled):
        corpus.examples.append(_sequence(rng, i % 3, signal_prob))
        corpus.labels.append(SentimentLabel.UNLABELED)
        corpus.is_labeled.append(False)
    return corpus
