"""Conclusion extraction and subword tokenization.

Structured abstracts yield the text under a conclusion-family heading;
unstructured abstracts fall back to the trailing-fraction rule
n = max(1, ceil(0.125 * S_t)) over the segmented sentences.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass
from typing import Sequence

from .ingest import AbstractRecord

log = logging.getLogger(__name__)

TRAILING_FRACTION = 0.125

#: Headings whose section carries the authors' verdict.
DEFAULT_CONCLUSION_HEADINGS = (
    "CONCLUSION",
    "CONCLUSIONS",
    "INTERPRETATION",
    "CONCLUSIONS AND RELEVANCE",
)

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"


@dataclass
class SentenceList:
    sentences: list

    @property
    def total(self) -> int:
        return len(self.sentences)


class ConclusionSource(enum.Enum):
    STRUCTURED_HEADING = "STRUCTURED_HEADING"
    TRAILING_FRACTION = "TRAILING_FRACTION"


@dataclass
class ConclusionText:
    text: str
    n_sentences: int
    source_rule: ConclusionSource

    def __post_init__(self):
        if not self.text or self.n_sentences < 1:
            raise ValueError("conclusion must contain at least one sentence")


@dataclass
class TokenSequence:
    ids: list
    attention_mask: list
    length: int


# Tokens that end with "." but do not terminate a sentence.
_ABBREVIATIONS = {
    "e.g.", "i.e.", "vs.", "etc.", "cf.", "al.", "fig.", "figs.", "no.",
    "dr.", "mr.", "mrs.", "ms.", "st.", "approx.", "ca.", "resp.",
}

_SENT_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[\"'(\[]?[A-Z0-9])")


def _is_boundary(prev_token: str) -> bool:
    stripped = prev_token.lstrip("(\"'[")
    if stripped.lower() in _ABBREVIATIONS:
        return False
    # single-letter initials like "J."
    if re.fullmatch(r"[A-Za-z]\.", stripped):
        return False
    return True


def segment_sentences(text: str) -> SentenceList:
    """Split text into sentences, guarding decimals, abbreviations and initials."""
    if not text or not text.strip():
        raise ValueError("cannot segment empty text")
    normalized = re.sub(r"\s+", " ", text.strip())

    pieces = []
    start = 0
    for m in _SENT_BOUNDARY.finditer(normalized):
        candidate = normalized[start:m.start()]
        prev_token = candidate.rsplit(None, 1)[-1] if candidate.strip() else ""
        if _is_boundary(prev_token):
            pieces.append(candidate.strip())
            start = m.end()
    tail = normalized[start:].strip()
    if tail:
        pieces.append(tail)
    if not pieces:
        pieces = [normalized]
    return SentenceList(sentences=pieces)


def _find_conclusion_section(record: AbstractRecord,
                             headings: Sequence[str]) -> str | None:
    wanted = {h.upper() for h in headings}
    for heading, body in record.sections:
        if heading.upper() in wanted and body.strip():
            return body.strip()
    return None


def extract_conclusion(record: AbstractRecord,
                       headings: Sequence[str] = DEFAULT_CONCLUSION_HEADINGS) -> ConclusionText:
    """Pull the conclusion text out of an abstract.

    Structured abstracts use the conclusion-family heading; everything
    else (including structured abstracts lacking such a heading) takes
    the last n = max(1, ceil(0.125 * S_t)) sentences.
    """
    if not record.abstract_text.strip():
        raise ValueError(f"record {record.pmid} has an empty abstract")

    if record.is_structured:
        section = _find_conclusion_section(record, headings)
        if section is not None:
            n = segment_sentences(section).total
            return ConclusionText(text=section, n_sentences=n,
                                  source_rule=ConclusionSource.STRUCTURED_HEADING)
        log.warning("structured abstract %s has no conclusion heading; "
                    "falling back to trailing-fraction rule", record.pmid)

    sentences = segment_sentences(record.abstract_text).sentences
    n = trailing_sentence_count(len(sentences))
    tail = sentences[-n:]
    return ConclusionText(text=" ".join(tail), n_sentences=n,
                          source_rule=ConclusionSource.TRAILING_FRACTION)


def trailing_sentence_count(total_sentences: int) -> int:
    """How many trailing sentences count as the conclusion of an unstructured abstract."""
    if total_sentences < 1:
        raise ValueError("sentence count must be >= 1")
    return max(1, math.ceil(TRAILING_FRACTION * total_sentences))


class WordPieceVocab:
    """Subword vocabulary in the standard one-token-per-line layout."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        for special in (CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, UNK_TOKEN):
            if special not in self.index:
                raise ValueError(f"vocabulary is missing required token {special}")
        self.cls_id = self.index[CLS_TOKEN]
        self.sep_id = self.index[SEP_TOKEN]
        self.pad_id = self.index[PAD_TOKEN]
        self.unk_id = self.index[UNK_TOKEN]

    @classmethod
    def load(cls, path) -> "WordPieceVocab":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])

    def __len__(self) -> int:
        return len(self.tokens)


_WORD_SPLIT = re.compile(r"\w+|[^\w\s]")


def _wordpiece(word: str, vocab: WordPieceVocab) -> list:
    """Greedy longest-match segmentation; the whole word becomes UNK if any
    piece fails to match."""
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            if sub in vocab.index:
                piece = vocab.index[sub]
                break
            end -= 1
        if piece is None:
            return [vocab.unk_id]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(conclusion: ConclusionText, vocab: WordPieceVocab,
             max_length: int = 128, lowercase: bool = True) -> TokenSequence:
    """Convert conclusion text to a fixed-length padded ID sequence.

    The sequence starts with [CLS] and ends its content with [SEP]; on
    truncation the [SEP] is retained as the last content token.
    """
    if max_length < 3:
        raise ValueError("max_length must be >= 3 ([CLS] + content + [SEP])")

    text = conclusion.text.lower() if lowercase else conclusion.text
    content = []
    for word in _WORD_SPLIT.findall(text):
        content.extend(_wordpiece(word, vocab))

    ids = [vocab.cls_id] + content[:max_length - 2] + [vocab.sep_id]
    n_content = len(ids)
    ids = ids + [vocab.pad_id] * (max_length - n_content)
    mask = [1] * n_content + [0] * (max_length - n_content)
    return TokenSequence(ids=ids, attention_mask=mask, length=max_length)


def detokenize(seq: TokenSequence, vocab: WordPieceVocab) -> str:
    """Best-effort inverse of tokenize: joins subwords, drops specials."""
    words = []
    for tid, m in zip(seq.ids, seq.attention_mask):
        if not m:
            break
        tok = vocab.tokens[tid]
        if tok in (CLS_TOKEN, SEP_TOKEN, PAD_TOKEN):
            continue
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)
