import json
import math

import pytest

from trialsent.ingest import FixtureEntrezClient, parse_all
from trialsent.preprocess import (
    ConclusionSource,
    ConclusionText,
    TokenSequence,
    WordPieceVocab,
    detokenize,
    extract_conclusion,
    segment_sentences,
    tokenize,
    trailing_sentence_count,
)


class TestSegmentSentences:
    def test_two_simple_sentences(self):
        assert segment_sentences("It worked. It was safe.").sentences == \
            ["It worked.", "It was safe."]

    def test_decimal_and_abbreviation_guard(self):
        result = segment_sentences("Pain fell 3.5 points vs. placebo.")
        assert result.total == 1

    def test_eg_guard(self):
        result = segment_sentences("Events were rare, e.g. nausea. None were serious.")
        assert result.total == 2

    def test_initial_guard(self):
        result = segment_sentences("J. Doe enrolled patients. The trial ended.")
        assert result.total == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            segment_sentences("   ")

    def test_worst_case_single_sentence(self):
        assert segment_sentences("no terminal punctuation at all").total == 1

    def test_golden_sentence_counts(self, fixtures_dir):
        rows = json.loads((fixtures_dir / "abstracts_sentences.json").read_text())
        assert len(rows) == 25
        for row in rows:
            assert segment_sentences(row["text"]).total == row["n"], row["text"]


class TestTrailingFraction:
    def test_sixteen_sentences_give_two(self):
        assert trailing_sentence_count(16) == 2

    def test_three_sentences_give_one(self):
        assert trailing_sentence_count(3) == 1

    def test_matches_bruteforce_1_to_1000(self):
        for s_t in range(1, 1001):
            expected = max(1, math.ceil(0.125 * s_t))
            n = trailing_sentence_count(s_t)
            assert n == expected
            assert 1 <= n <= s_t


@pytest.fixture(scope="module")
def fixture_records(fixtures_dir):
    client = FixtureEntrezClient(fixtures_dir)
    return {r.pmid: r for r in parse_all(client.records)}


class TestExtractConclusion:
    def test_structured_uses_heading(self, fixture_records):
        rec = fixture_records["30000001"]
        assert rec.is_structured
        concl = extract_conclusion(rec)
        assert concl.source_rule is ConclusionSource.STRUCTURED_HEADING
        assert concl.text.startswith("Intravenous acetaminophen")

    def test_unstructured_uses_trailing_rule(self, fixture_records):
        rec = fixture_records["30000002"]
        assert not rec.is_structured
        concl = extract_conclusion(rec)
        assert concl.source_rule is ConclusionSource.TRAILING_FRACTION
        assert concl.n_sentences == 1
        assert concl.text.startswith("Neither approach")

    def test_interpretation_heading_counts(self, fixture_records):
        concl = extract_conclusion(fixture_records["30000005"])
        assert concl.source_rule is ConclusionSource.STRUCTURED_HEADING
        assert "Mindfulness" in concl.text

    def test_structured_without_conclusion_falls_back(self, fixture_records):
        rec = fixture_records["30000001"]
        concl = extract_conclusion(rec, headings=("SUMMARY",))
        assert concl.source_rule is ConclusionSource.TRAILING_FRACTION

    def test_invariants(self):
        with pytest.raises(ValueError):
            ConclusionText(text="", n_sentences=1,
                           source_rule=ConclusionSource.TRAILING_FRACTION)


def toy_vocab():
    return WordPieceVocab(["[CLS]", "[SEP]", "[PAD]", "[UNK]", "drug", "works"])


class TestTokenize:
    def test_spec_toy_example(self):
        concl = ConclusionText(text="drug works", n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        seq = tokenize(concl, toy_vocab(), max_length=6)
        assert seq.ids == [0, 4, 5, 1, 2, 2]
        assert seq.attention_mask == [1, 1, 1, 1, 0, 0]

    def test_unknown_word_maps_to_unk(self):
        concl = ConclusionText(text="drug zzz", n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        seq = tokenize(concl, toy_vocab(), max_length=6)
        assert seq.ids[:4] == [0, 4, 3, 1]

    def test_shape_contract(self, fixtures_dir):
        vocab = WordPieceVocab.load(fixtures_dir / "vocab.txt")
        for text in ("the drug was safe", "treatment improved outcomes significantly"):
            concl = ConclusionText(text=text, n_sentences=1,
                                   source_rule=ConclusionSource.TRAILING_FRACTION)
            seq = tokenize(concl, vocab, max_length=16)
            assert len(seq.ids) == len(seq.attention_mask) == 16

    def test_truncation_keeps_cls_and_sep(self):
        vocab = toy_vocab()
        concl = ConclusionText(text="drug works " * 20, n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        seq = tokenize(concl, vocab, max_length=8)
        assert seq.ids[0] == vocab.cls_id
        content = [i for i, m in zip(seq.ids, seq.attention_mask) if m]
        assert content[-1] == vocab.sep_id
        assert len(content) == 8

    def test_max_length_too_small(self):
        concl = ConclusionText(text="drug", n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        with pytest.raises(ValueError):
            tokenize(concl, toy_vocab(), max_length=2)

    def test_roundtrip_in_vocab_text(self, fixtures_dir):
        vocab = WordPieceVocab.load(fixtures_dir / "vocab.txt")
        text = "the drug was safe and effective"
        concl = ConclusionText(text=text, n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        seq = tokenize(concl, vocab, max_length=32)
        assert detokenize(seq, vocab) == text

    def test_subword_pieces_rejoin(self, fixtures_dir):
        vocab = WordPieceVocab.load(fixtures_dir / "vocab.txt")
        concl = ConclusionText(text="significantly improved", n_sentences=1,
                               source_rule=ConclusionSource.TRAILING_FRACTION)
        seq = tokenize(concl, vocab, max_length=16)
        assert detokenize(seq, vocab) == "significantly improved"
