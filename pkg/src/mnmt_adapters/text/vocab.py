from __future__ import annotations

import numpy as np

from .bpe import MARKER, BpeModel, normalize

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")


def tag_token(lang: str) -> str:
    return f"<2{lang}>"


class Vocabulary:
    """Token/id bijection: reserved ids, target-language tags, alphabet, merges."""

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if tuple(self.tokens[:4]) != RESERVED:
            raise ValueError("reserved tokens must occupy ids 0..3")

    @classmethod
    def build(cls, bpe: BpeModel, target_langs) -> "Vocabulary":
        tokens = list(RESERVED)
        tokens += [tag_token(lang) for lang in sorted(set(target_langs))]
        seen = set(tokens)
        for sym in list(bpe.alphabet) + [a + b for a, b in bpe.merges]:
            if sym not in seen:
                seen.add(sym)
                tokens.append(sym)
        return cls(tokens)

    def __len__(self):
        return len(self.tokens)

    @property
    def langs(self):
        return sorted(t[2:-1] for t in self.tokens if t.startswith("<2") and t.endswith(">"))

    def tag_id(self, lang: str) -> int:
        try:
            return self.index[tag_token(lang)]
        except KeyError:
            raise KeyError(f"no tag token for target language {lang!r}") from None

    def special_ids(self):
        return set(range(len(RESERVED))) | {self.index[tag_token(lang)] for lang in self.langs}

    def ids(self, symbols) -> list:
        return [self.index.get(s, UNK) for s in symbols]

    def token_id(self, symbol):
        return self.index.get(symbol)


def encode_source(sentence: str, tgt_lang: str, vocab: Vocabulary, bpe: BpeModel) -> list:
    """``[<2tgt>] + subword ids + [EOS]``; unknown symbols become UNK."""
    return [vocab.tag_id(tgt_lang)] + vocab.ids(bpe.segment(sentence)) + [EOS]


def encode_target(sentence: str, vocab: Vocabulary, bpe: BpeModel) -> list:
    return vocab.ids(bpe.segment(sentence))


def decode(ids, vocab: Vocabulary) -> str:
    """Drop reserved and tag ids, undo subword splitting."""
    special = vocab.special_ids()
    pieces = []
    for i in np.asarray(ids, dtype=np.int64).tolist():
        if i == EOS:
            break
        if i in special:
            continue
        pieces.append(vocab.tokens[i])
    return normalize("".join(pieces).replace(MARKER, " "))
