"""Joint byte-pair encoding over whitespace-split text.

A word is split into characters behind a word-start marker ``▁``, so
``"cat"`` starts as ``("▁", "c", "a", "t")``. Merges are learned greedily by
pair frequency with lexicographic tie-breaking.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

MARKER = "▁"
HEADER = "bpe-v1"


def normalize(sentence: str) -> str:
    return " ".join(unicodedata.normalize("NFC", sentence).split())


def split_word(word: str) -> tuple:
    return (MARKER,) + tuple(word)


@dataclass(frozen=True)
class BpeModel:
    alphabet: tuple
    merges: tuple
    _ranks: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_ranks", {m: i for i, m in enumerate(self.merges)})
        object.__setattr__(self, "_cache", lru_cache(maxsize=65536)(self._segment))

    def segment_word(self, word: str) -> tuple:
        return self._cache(word)

    def _segment(self, word):
        symbols = list(split_word(word))
        ranks = self._ranks
        while len(symbols) > 1:
            best = None
            for pair in zip(symbols, symbols[1:]):
                r = ranks.get(pair)
                if r is not None and (best is None or r < best[0]):
                    best = (r, pair)
            if best is None:
                break
            a, b = best[1]
            merged = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return tuple(symbols)

    def segment(self, sentence: str) -> list:
        out = []
        for word in normalize(sentence).split(" "):
            if word:
                out.extend(self.segment_word(word))
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{HEADER} {len(self.alphabet)}\n")
            for sym in self.alphabet:
                fh.write(sym + "\n")
            for a, b in self.merges:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        head = lines[0].split()
        if len(head) != 2 or head[0] != HEADER:
            raise ValueError(f"{path}: not a {HEADER} file")
        n = int(head[1])
        alphabet = tuple(lines[1:1 + n])
        merges = []
        for lineno, line in enumerate(lines[1 + n:], start=2 + n):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: malformed merge line {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(alphabet, tuple(merges))


def minimum_vocab_size(alphabet_size: int, n_tags: int) -> int:
    from .vocab import RESERVED

    return alphabet_size + len(RESERVED) + n_tags


def learn_bpe(corpora, vocab_size: int) -> BpeModel:
    """Learn joint merges on both sides of every corpus.

    The vocabulary budget covers reserved ids, one tag per target language,
    the character alphabet and the merged symbols.
    """
    if not corpora:
        raise ValueError("learn_bpe needs at least one corpus")
    words = Counter()
    for corpus in corpora:
        for s, t in corpus.pairs:
            words.update(w for w in normalize(s).split(" ") if w)
            words.update(w for w in normalize(t).split(" ") if w)
    alphabet = sorted({ch for w in words for ch in w} | {MARKER})
    tags = {c.tgt_lang for c in corpora}
    minimum = minimum_vocab_size(len(alphabet), len(tags))
    if vocab_size < minimum:
        raise ValueError(f"vocab_size {vocab_size} too small; minimum is {minimum} "
                         f"({len(alphabet)} symbols + reserved + {len(tags)} tags)")

    seqs = {w: list(split_word(w)) for w in words}
    known = set(alphabet)
    merges = []
    budget = vocab_size - minimum
    while len(known) - len(alphabet) < budget:
        pairs = Counter()
        for w, syms in seqs.items():
            c = words[w]
            for pair in zip(syms, syms[1:]):
                pairs[pair] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        a, b = best
        known.add(a + b)
        for w, syms in seqs.items():
            if len(syms) < 2:
                continue
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            seqs[w] = out
    return BpeModel(tuple(alphabet), tuple(merges))
