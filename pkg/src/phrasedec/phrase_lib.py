"""Offline phrase-library construction by iterative pair merging.

A library is built from a token corpus in three steps: repeatedly merge the
globally most frequent adjacent symbol pair into a new symbol, recursively
expand every merged symbol back to raw tokens, and index the resulting
phrases by their starting token for O(1) lookup during decoding.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass

from .core import TokenId, TokenSequence

SymbolId = int

LIBRARY_MAGIC = b"PSDL"
LIBRARY_FORMAT_VERSION = 1

DEFAULT_MAX_PHRASE_LEN = 8


class EmptyCorpus(ValueError):
    """The corpus contains no sequences."""


class InvalidToken(ValueError):
    """A corpus token is negative, non-integral, or out of vocabulary."""


class UnknownSymbol(ValueError):
    """Symbol id is neither a raw token nor the result of any merge rule."""


class UnsupportedLibraryFormat(ValueError):
    """Library file has a bad magic or an unknown format version."""


@dataclass(frozen=True)
class MergeRule:
    """One merge step: (left, right) -> result, learned at iteration `rank`."""

    left: SymbolId
    right: SymbolId
    result: SymbolId
    rank: int


@dataclass(frozen=True)
class Phrase:
    """A merged symbol expanded back to raw tokens.

    corpus_count is the number of occurrences of the source symbol in the
    fully rewritten corpus; it serves as the secondary index sort key.
    """

    tokens: TokenSequence
    source_rank: int
    corpus_count: int

    def __len__(self) -> int:
        return len(self.tokens)


class PhraseLibrary:
    """Merge rules, expanded phrases, and the start-token prefix index.

    Index buckets hold every phrase sharing a first token, ordered longest
    first, then by corpus_count descending, then by merge rank.  Immutable
    after construction.
    """

    def __init__(
        self,
        vocab_size: int,
        rules: tuple[MergeRule, ...],
        phrases: tuple[Phrase, ...],
    ) -> None:
        self.vocab_size = vocab_size
        self.rules = tuple(rules)
        self.phrases = tuple(phrases)
        self.index = _build_index(self.phrases)

    @property
    def merge_count(self) -> int:
        return len(self.rules)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhraseLibrary):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.rules == other.rules
            and self.phrases == other.phrases
            and self.index == other.index
        )


def _build_index(phrases: tuple[Phrase, ...]) -> dict[TokenId, tuple[Phrase, ...]]:
    buckets: dict[TokenId, list[Phrase]] = {}
    for phrase in phrases:
        buckets.setdefault(phrase.tokens[0], []).append(phrase)
    return {
        start: tuple(
            sorted(bucket, key=lambda p: (-len(p), -p.corpus_count, p.source_rank))
        )
        for start, bucket in buckets.items()
    }


def _pair_counts(seqs: list[list[SymbolId]]) -> Counter:
    """Adjacent-pair counts, never crossing sequence boundaries.

    Equal-symbol runs are counted non-overlapping (floor(run/2)) so that the
    count of the chosen pair always equals the number of replacements a merge
    performs.
    """
    counts: Counter = Counter()
    for seq in seqs:
        i, n = 0, len(seq)
        while i < n - 1:
            a, b = seq[i], seq[i + 1]
            if a == b:
                j = i
                while j < n and seq[j] == a:
                    j += 1
                counts[(a, a)] += (j - i) // 2
                i = j - 1
            else:
                counts[(a, b)] += 1
                i += 1
    return counts


def _replace_pair(
    seq: list[SymbolId], pair: tuple[SymbolId, SymbolId], new_symbol: SymbolId
) -> list[SymbolId]:
    out: list[SymbolId] = []
    a, b = pair
    i, n = 0, len(seq)
    while i < n:
        if i < n - 1 and seq[i] == a and seq[i + 1] == b:
            out.append(new_symbol)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def _validate_corpus(corpus, vocab_size: int | None) -> tuple[list[list[int]], int]:
    if not corpus:
        raise EmptyCorpus("corpus contains no sequences")
    seqs: list[list[int]] = []
    max_token = -1
    for seq in corpus:
        row = []
        for tok in seq:
            t = int(tok)
            if t != tok or t < 0:
                raise InvalidToken(f"token {tok!r} is not a non-negative integer")
            if vocab_size is not None and t >= vocab_size:
                raise InvalidToken(f"token {t} out of vocabulary (V={vocab_size})")
            max_token = max(max_token, t)
            row.append(t)
        seqs.append(row)
    if vocab_size is None:
        vocab_size = max_token + 1 if max_token >= 0 else 1
    return seqs, vocab_size


def expand_symbol(rules, symbol: SymbolId) -> TokenSequence:
    """Recursively expand a symbol to raw tokens.

    Raw tokens expand to themselves; merged symbols expand to the
    concatenation of their parts.
    """
    by_result = {rule.result: rule for rule in rules}
    min_result = min(by_result) if by_result else None

    def rec(s: SymbolId) -> tuple[int, ...]:
        rule = by_result.get(s)
        if rule is not None:
            return rec(rule.left) + rec(rule.right)
        if s < 0 or (min_result is not None and s >= min_result):
            raise UnknownSymbol(f"symbol {s} is neither raw nor merged")
        return (s,)

    return rec(symbol)


def build_library(
    corpus,
    merges: int,
    max_phrase_len: int = DEFAULT_MAX_PHRASE_LEN,
    vocab_size: int | None = None,
) -> PhraseLibrary:
    """Learn a phrase library from a corpus of raw token sequences.

    Performs up to `merges` merge iterations, each replacing the globally
    most frequent adjacent pair (ties broken by smaller (left, right) ids),
    stopping early once the best pair occurs fewer than twice.  Phrases
    longer than max_phrase_len are dropped from the index; their rules are
    retained for provenance.
    """
    if merges < 1:
        raise ValueError("merges must be >= 1")
    if max_phrase_len < 2:
        raise ValueError("max_phrase_len must be >= 2")
    seqs, vocab_size = _validate_corpus(corpus, vocab_size)

    rules: list[MergeRule] = []
    for rank in range(1, merges + 1):
        counts = _pair_counts(seqs)
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best_pair = min(pair for pair, c in counts.items() if c == best_count)
        new_symbol = vocab_size + len(rules)
        rules.append(MergeRule(best_pair[0], best_pair[1], new_symbol, rank))
        seqs = [_replace_pair(seq, best_pair, new_symbol) for seq in seqs]

    symbol_counts: Counter = Counter()
    for seq in seqs:
        symbol_counts.update(seq)

    phrases = tuple(
        Phrase(tokens, rule.rank, symbol_counts[rule.result])
        for rule in rules
        for tokens in (expand_symbol(rules, rule.result),)
        if len(tokens) <= max_phrase_len
    )
    return PhraseLibrary(vocab_size, tuple(rules), phrases)


def match_prefix(lib: PhraseLibrary, start: TokenId) -> tuple[Phrase, ...]:
    """All library phrases beginning with `start`, in canonical trial order."""
    return lib.index.get(start, ())


def cooccurrence_stats(corpus, top_n: int):
    """Most frequent adjacent token pairs, descending, truncated to top_n.

    Unlike merge counting this counts every adjacent position, including
    overlapping occurrences in equal-token runs.
    """
    if not corpus:
        raise EmptyCorpus("corpus contains no sequences")
    counts: Counter = Counter()
    for seq in corpus:
        for a, b in zip(seq, seq[1:]):
            counts[(int(a), int(b))] += 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ranked[: max(top_n, 0)]


def save_library(lib: PhraseLibrary, path) -> None:
    """Write a library in the versioned PSDL binary format (deterministic bytes)."""
    parts = [
        LIBRARY_MAGIC,
        struct.pack("<HII", LIBRARY_FORMAT_VERSION, lib.vocab_size, len(lib.rules)),
    ]
    for rule in lib.rules:
        parts.append(struct.pack("<III", rule.left, rule.right, rule.result))
    parts.append(struct.pack("<I", len(lib.phrases)))
    for phrase in lib.phrases:
        parts.append(struct.pack("<H", len(phrase.tokens)))
        parts.append(struct.pack(f"<{len(phrase.tokens)}I", *phrase.tokens))
        parts.append(struct.pack("<IQ", phrase.source_rank, phrase.corpus_count))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_library(path) -> PhraseLibrary:
    """Read a PSDL library file; the index is rebuilt with canonical ordering."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != LIBRARY_MAGIC:
        raise UnsupportedLibraryFormat("not a PSDL library file")
    version, vocab_size, rule_count = struct.unpack_from("<HII", data, 4)
    if version != LIBRARY_FORMAT_VERSION:
        raise UnsupportedLibraryFormat(f"unknown library format version {version}")
    offset = 4 + struct.calcsize("<HII")
    rules = []
    for rank in range(1, rule_count + 1):
        left, right, result = struct.unpack_from("<III", data, offset)
        offset += 12
        rules.append(MergeRule(left, right, result, rank))
    (phrase_count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    phrases = []
    for _ in range(phrase_count):
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        tokens = struct.unpack_from(f"<{length}I", data, offset)
        offset += 4 * length
        source_rank, corpus_count = struct.unpack_from("<IQ", data, offset)
        offset += 12
        phrases.append(Phrase(tokens, source_rank, corpus_count))
    if offset != len(data):
        raise UnsupportedLibraryFormat("library file has trailing or missing bytes")
    return PhraseLibrary(vocab_size, tuple(rules), tuple(phrases))


def read_corpus(path) -> list[TokenSequence]:
    """Read a corpus file: one sequence per line, whitespace-separated decimal
    token ids, '#'-prefixed comment lines ignored."""
    corpus: list[TokenSequence] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                corpus.append(tuple(int(tok) for tok in line.split()))
            except ValueError as exc:
                raise InvalidToken(f"bad token in corpus line {line!r}") from exc
    return corpus


def write_corpus(corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for seq in corpus:
            f.write(" ".join(str(int(t)) for t in seq))
            f.write("\n")
