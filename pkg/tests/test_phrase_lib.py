import numpy as np
import pytest

from phrasedec.harness import planted_phrase_corpus
from phrasedec.phrase_lib import (
    EmptyCorpus,
    InvalidToken,
    MergeRule,
    Phrase,
    PhraseLibrary,
    UnknownSymbol,
    UnsupportedLibraryFormat,
    build_library,
    cooccurrence_stats,
    expand_symbol,
    load_library,
    match_prefix,
    read_corpus,
    save_library,
    write_corpus,
)


def naive_replace(seq, pair):
    """Reference left-to-right pair replacement used as the merge oracle."""
    out, i = [], 0
    while i < len(seq):
        if i < len(seq) - 1 and (seq[i], seq[i + 1]) == pair:
            out.append(None)  # merged marker; only lengths matter
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def replace_count(seqs, pair):
    return sum(len(s) - len(naive_replace(s, pair)) for s in seqs)


class TestBuildLibrary:
    def test_single_merge(self):
        lib = build_library([[1, 2, 1, 2, 3]], merges=1)
        assert lib.vocab_size == 4
        assert lib.rules == (MergeRule(1, 2, 4, 1),)
        assert lib.phrases == (Phrase((1, 2), 1, 2),)

    def test_no_adjacent_pairs(self):
        lib = build_library([[5], [3], [1]], merges=4)
        assert lib.rules == ()
        assert lib.index == {}

    def test_two_step_recount_early_stop(self):
        # after merging (1,2)->4 the rewritten corpus is [4,4,3]; every
        # remaining pair occurs once, so the second iteration stops early
        lib = build_library([[1, 2, 1, 2, 3]], merges=2)
        assert len(lib.rules) == 1

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            build_library([], merges=1)

    def test_invalid_token(self):
        with pytest.raises(InvalidToken):
            build_library([[1, -2]], merges=1)
        with pytest.raises(InvalidToken):
            build_library([[1, 9]], merges=1, vocab_size=4)

    def test_max_phrase_len_discards_from_index_keeps_rules(self):
        corpus = [[0, 1, 2, 3] * 6]
        lib = build_library(corpus, merges=8, max_phrase_len=2, vocab_size=4)
        assert all(len(p) <= 2 for p in lib.phrases)
        assert any(
            len(expand_symbol(lib.rules, rule.result)) > 2 for rule in lib.rules
        )

    def test_rules_match_replacement_count_oracle(self):
        rng = np.random.default_rng(17)
        corpus = [list(rng.integers(0, 6, size=40)) for _ in range(5)]
        lib = build_library(corpus, merges=10, vocab_size=6)

        seqs = [list(s) for s in corpus]
        for rule in lib.rules:
            pairs = {
                (s[i], s[i + 1]) for s in seqs for i in range(len(s) - 1)
            }
            counts = {pair: replace_count(seqs, pair) for pair in pairs}
            best = max(counts.values())
            assert best >= 2
            assert counts[(rule.left, rule.right)] == best
            assert (rule.left, rule.right) == min(
                p for p, c in counts.items() if c == best
            )
            before = sum(len(s) for s in seqs)
            new = []
            for s in seqs:
                out, i = [], 0
                while i < len(s):
                    if i < len(s) - 1 and (s[i], s[i + 1]) == (rule.left, rule.right):
                        out.append(rule.result)
                        i += 2
                    else:
                        out.append(s[i])
                        i += 1
                new.append(out)
            seqs = new
            # total symbol count drops by exactly the merged pair's count
            assert before - sum(len(s) for s in seqs) == best

        # expanding every symbol of the rewritten corpus restores the original
        restored = [
            [t for sym in s for t in expand_symbol(lib.rules, sym)] for s in seqs
        ]
        assert restored == corpus

    def test_every_phrase_occurs_in_raw_corpus(self):
        rng = np.random.default_rng(3)
        corpus, _ = planted_phrase_corpus(16, 3, 4, 20, 64, 0.9, rng)
        lib = build_library(corpus, merges=64, vocab_size=16)
        joined = [tuple(s) for s in corpus]
        for phrase in lib.phrases:
            found = any(
                seq[i : i + len(phrase)] == phrase.tokens
                for seq in joined
                for i in range(len(seq) - len(phrase) + 1)
            )
            assert found

    def test_deterministic_bytes(self, tmp_path):
        rng = np.random.default_rng(5)
        corpus = [list(rng.integers(0, 8, size=50)) for _ in range(10)]
        a, b = tmp_path / "a.psdl", tmp_path / "b.psdl"
        save_library(build_library(corpus, merges=32, vocab_size=8), a)
        save_library(build_library(corpus, merges=32, vocab_size=8), b)
        assert a.read_bytes() == b.read_bytes()


class TestExpandSymbol:
    RULES = (MergeRule(1, 2, 8, 1), MergeRule(8, 3, 9, 2))

    def test_raw_token(self):
        assert expand_symbol(self.RULES, 5) == (5,)

    def test_recursive(self):
        assert expand_symbol(self.RULES, 9) == (1, 2, 3)

    def test_length_identity(self):
        for rule in self.RULES:
            assert len(expand_symbol(self.RULES, rule.result)) == len(
                expand_symbol(self.RULES, rule.left)
            ) + len(expand_symbol(self.RULES, rule.right))

    def test_unknown_symbol(self):
        with pytest.raises(UnknownSymbol):
            expand_symbol(self.RULES, 10)
        with pytest.raises(UnknownSymbol):
            expand_symbol(self.RULES, -1)


class TestMatchPrefix:
    def test_direct_hit(self):
        lib = build_library([[1, 2, 1, 2, 3]], merges=1)
        assert [p.tokens for p in match_prefix(lib, 1)] == [(1, 2)]

    def test_miss(self):
        lib = build_library([[1, 2, 1, 2, 3]], merges=1)
        assert match_prefix(lib, 3) == ()

    def test_ordering_rule(self):
        phrases = (
            Phrase((1, 2), source_rank=1, corpus_count=9),
            Phrase((1, 2, 3), source_rank=2, corpus_count=5),
        )
        lib = PhraseLibrary(4, (), phrases)
        assert [p.tokens for p in match_prefix(lib, 1)] == [(1, 2, 3), (1, 2)]

    def test_bucket_keyed_by_first_token(self):
        rng = np.random.default_rng(1)
        corpus = [list(rng.integers(0, 6, size=60)) for _ in range(6)]
        lib = build_library(corpus, merges=16, vocab_size=6)
        for start, bucket in lib.index.items():
            assert all(p.tokens[0] == start for p in bucket)


class TestCooccurrenceStats:
    def test_hand_count(self):
        assert cooccurrence_stats([[1, 2, 1, 2]], top_n=1) == [((1, 2), 2)]

    def test_self_pair_overlapping(self):
        assert cooccurrence_stats([[7, 7, 7]], top_n=5) == [((7, 7), 2)]

    def test_top_n_zero(self):
        assert cooccurrence_stats([[1, 2]], top_n=0) == []

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            cooccurrence_stats([], top_n=3)


class TestSerialization:
    def test_round_trip_structural_equality(self, tmp_path):
        rng = np.random.default_rng(9)
        corpus = [list(rng.integers(0, 10, size=80)) for _ in range(8)]
        lib = build_library(corpus, merges=40, vocab_size=10)
        path = tmp_path / "lib.psdl"
        save_library(lib, path)
        loaded = load_library(path)
        assert loaded == lib
        assert loaded.index == lib.index

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"XXXX" + b"\0" * 10)
        with pytest.raises(UnsupportedLibraryFormat):
            load_library(path)

    def test_unknown_version(self, tmp_path):
        lib = build_library([[1, 2, 1, 2]], merges=1)
        path = tmp_path / "lib.psdl"
        save_library(lib, path)
        data = bytearray(path.read_bytes())
        data[4] = 42
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedLibraryFormat):
            load_library(path)


class TestCorpusIO:
    def test_round_trip_with_comments(self, tmp_path):
        path = tmp_path / "corpus.txt"
        path.write_text("# header\n1 2 3\n\n4 5\n", encoding="utf-8")
        assert read_corpus(path) == [(1, 2, 3), (4, 5)]

    def test_write_then_read(self, tmp_path):
        corpus = [(0, 1, 2), (3, 3)]
        path = tmp_path / "c.txt"
        write_corpus(corpus, path)
        assert read_corpus(path) == list(corpus)

    def test_bad_token(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("1 two 3\n", encoding="utf-8")
        with pytest.raises(InvalidToken):
            read_corpus(path)
