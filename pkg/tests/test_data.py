import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phtsum.data import (BOS, COMMA, EOS, PAD, RESERVED, UNK, LoadStats,
                         Sample, Vocabulary, build_vocab, gen_toy_corpus,
                         load_dataset, load_generation_records,
                         save_dataset, save_generation_records,
                         toy_corpus_text)


class TestVocabulary:
    def test_reserved_ids(self):
        assert (PAD, BOS, EOS, UNK, COMMA) == (0, 1, 2, 3, 4)
        vocab = build_vocab(["ab"], 10)
        assert vocab.tokens[:5] == RESERVED
        assert vocab.token_to_id[","] == COMMA

    def test_reserved_prefix_enforced(self):
        with pytest.raises(ValueError, match="reserved"):
            Vocabulary(["a", "b"], [])

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            Vocabulary(RESERVED + ["a", "a"], [])

    def test_round_trip_exact(self):
        corpus = ["the cat sat on the mat", "a cat , a mat"]
        vocab = build_vocab(corpus, 40)
        for line in corpus:
            assert vocab.decode(vocab.encode(line)) == line

    def test_round_trip_includes_spaces(self):
        vocab = build_vocab(["a b  c"], 20)
        assert vocab.decode(vocab.encode("a b  c")) == "a b  c"

    def test_comma_never_merged(self):
        vocab = build_vocab(["a,b " * 50], 60)
        assert all("," not in x and "," not in y for x, y in vocab.merges)
        ids = vocab.encode("a,b")
        assert ids.count(COMMA) == 1

    def test_unknown_char_maps_to_unk(self):
        vocab = build_vocab(["abc"], 10)
        assert vocab.encode("z") == [UNK]

    def test_decode_strips_structural_tokens(self):
        vocab = build_vocab(["ab"], 10)
        ids = [BOS] + vocab.encode("ab") + [EOS, PAD]
        assert vocab.decode(ids) == "ab"

    def test_merges_reduce_sequence_length(self):
        corpus = ["banana banana banana"]
        small = build_vocab(corpus, 10)
        large = build_vocab(corpus, 30)
        text = "banana"
        assert len(large.encode(text)) < len(small.encode(text))

    def test_deterministic(self):
        corpus = ["some repeated text here", "more repeated text there"]
        a = build_vocab(corpus, 50)
        b = build_vocab(corpus, 50)
        assert a.tokens == b.tokens and a.merges == b.merges

    def test_target_size_too_small(self):
        with pytest.raises(ValueError, match="below alphabet"):
            build_vocab(["abcdefgh"], 5)

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="nonempty"):
            build_vocab([], 10)

    def test_stops_when_no_pair_repeats(self):
        vocab = build_vocab(["abcd"], 1000)
        # every pair occurs once; no merges learned
        assert vocab.merges == []

    def test_save_load_roundtrip(self, tmp_path):
        vocab = build_vocab(["the cat sat on the mat"], 40)
        path = tmp_path / "vocab.json"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.tokens == vocab.tokens
        assert loaded.merges == vocab.merges
        assert loaded.content_hash() == vocab.content_hash()

    def test_content_hash_changes(self):
        a = build_vocab(["aaaa bbbb"], 20)
        b = build_vocab(["cccc dddd"], 20)
        assert a.content_hash() != b.content_hash()

    @given(st.text(alphabet="ab ,", max_size=30))
    @settings(max_examples=80, deadline=None)
    def test_round_trip_property(self, text):
        vocab = build_vocab(["ab ab , ba"], 20)
        assert vocab.decode(vocab.encode(text)) == text


class TestSample:
    def test_title_is_rank_zero(self):
        s = Sample(id="x", title=[5], paragraphs=[[6], [7]])
        assert s.source_paragraphs(prepend_title=True) == [[5], [6], [7]]
        assert s.source_paragraphs(prepend_title=False) == [[6], [7]]

    def test_empty_title_not_prepended(self):
        s = Sample(id="x", title=[], paragraphs=[[6]])
        assert s.source_paragraphs(prepend_title=True) == [[6]]


class TestDatasetIO:
    def write(self, tmp_path, lines):
        path = tmp_path / "data.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path

    def record(self, i=0, paragraphs=("a b", "c d"), summary="a b"):
        return json.dumps({"id": f"r{i}", "title": "t",
                           "paragraphs": list(paragraphs), "summary": summary})

    def test_load(self, tmp_path, toy_vocab):
        path = self.write(tmp_path, [self.record(0), self.record(1)])
        stats = LoadStats()
        samples = load_dataset(path, toy_vocab, stats=stats)
        assert [s.id for s in samples] == ["r0", "r1"]
        assert stats.samples == 2 and stats.skipped == 0

    def test_blank_lines_ignored(self, tmp_path, toy_vocab):
        path = self.write(tmp_path, [self.record(0), "", self.record(1)])
        assert len(load_dataset(path, toy_vocab)) == 2

    def test_malformed_record_skipped_with_warning(self, tmp_path, toy_vocab):
        path = self.write(tmp_path, [self.record(0), '{"id": "bad"}'])
        stats = LoadStats()
        with pytest.warns(RuntimeWarning, match="malformed"):
            samples = load_dataset(path, toy_vocab, stats=stats)
        assert len(samples) == 1 and stats.skipped == 1

    def test_truncation_counted(self, tmp_path, toy_vocab):
        long_para = "a " * 100
        path = self.write(tmp_path, [self.record(paragraphs=[long_para] * 5)])
        stats = LoadStats()
        samples = load_dataset(path, toy_vocab, max_paragraphs=3,
                               max_paragraph_len=10, stats=stats)
        assert len(samples[0].paragraphs) == 3
        assert all(len(p) <= 10 for p in samples[0].paragraphs)
        assert stats.truncated_paragraph_lists == 1
        assert stats.truncated_tokens > 0

    def test_missing_file(self, toy_vocab):
        with pytest.raises(RuntimeError, match="cannot read"):
            load_dataset("/nonexistent/data.jsonl", toy_vocab)

    def test_save_dataset_roundtrip(self, tmp_path):
        records = gen_toy_corpus(3, seed=0)
        path = tmp_path / "out.jsonl"
        save_dataset(path, records)
        loaded = [json.loads(l) for l in path.read_text().splitlines()]
        assert loaded == records

    def test_generation_records_roundtrip(self, tmp_path):
        records = [{"id": "a", "summary": "x", "eta_y": [0.5, 0.5]}]
        path = tmp_path / "gen.jsonl"
        save_generation_records(path, records)
        assert load_generation_records(path) == records


class TestToyCorpus:
    def test_deterministic(self):
        assert gen_toy_corpus(5, seed=3) == gen_toy_corpus(5, seed=3)
        assert gen_toy_corpus(5, seed=3) != gen_toy_corpus(5, seed=4)

    def test_shape(self):
        records = gen_toy_corpus(4, seed=0, n_paragraphs=5, n_salient=2)
        for rec in records:
            assert len(rec["paragraphs"]) == 5
            assert len(rec["salient"]) == 2
            assert all(0 <= j < 5 for j in rec["salient"])

    def test_summary_copies_salient_facts(self):
        for rec in gen_toy_corpus(6, seed=1):
            parts = rec["summary"].split(" , ")
            assert len(parts) == len(rec["salient"])
            for part, j in zip(parts, rec["salient"]):
                assert rec["paragraphs"][j].startswith(part)

    def test_salient_sorted_unique(self):
        for rec in gen_toy_corpus(10, seed=2):
            assert rec["salient"] == sorted(set(rec["salient"]))

    def test_salient_exceeds_paragraphs(self):
        with pytest.raises(ValueError, match="n_salient"):
            gen_toy_corpus(1, n_paragraphs=2, n_salient=3)

    def test_corpus_text_covers_all_fields(self):
        records = gen_toy_corpus(2, seed=0, n_paragraphs=3)
        lines = toy_corpus_text(records)
        assert len(lines) == 2 * (1 + 3 + 1)
        assert records[0]["title"] in lines
        assert records[0]["summary"] in lines
