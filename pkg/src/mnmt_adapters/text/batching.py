"""Token-budget batching of encoded parallel data."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .vocab import BOS, EOS, PAD, encode_source, encode_target

log = logging.getLogger(__name__)


@dataclass
class Batch:
    src: np.ndarray       # (B, S) int64, PAD-padded
    tgt_in: np.ndarray    # (B, T) BOS + target
    tgt_out: np.ndarray   # (B, T) target + EOS
    pairs: list           # (src_lang, tgt_lang) per row

    @property
    def src_pad(self):
        return self.src == PAD

    @property
    def tgt_pad(self):
        return self.tgt_out == PAD

    @property
    def n_tokens(self):
        return int((self.tgt_out != PAD).sum())

    def __len__(self):
        return self.src.shape[0]


def pad(seqs, width=None):
    width = width or max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def make_batch(examples) -> Batch:
    """``examples``: list of (src_ids, tgt_ids, pair) with tgt_ids excluding BOS/EOS."""
    src = pad([e[0] for e in examples])
    tgt_in = pad([[BOS] + list(e[1]) for e in examples])
    tgt_out = pad([list(e[1]) + [EOS] for e in examples])
    return Batch(src, tgt_in, tgt_out, [e[2] for e in examples])


def encode_corpus(corpus, vocab, bpe):
    pair = corpus.key
    return [(encode_source(s, corpus.tgt_lang, vocab, bpe), encode_target(t, vocab, bpe), pair)
            for s, t in corpus.pairs]


class BatchStream:
    """Deterministic epochs of token-bucketed batches over one or more corpora.

    Every example of every corpus appears once per epoch, so each language
    pair is represented in proportion to its corpus size.
    """

    def __init__(self, examples, max_tokens, seed=0):
        self.max_tokens = int(max_tokens)
        self.seed = seed
        self.examples = []
        self.skipped = 0
        for ex in examples:
            if self._cost(ex) > self.max_tokens:
                self.skipped += 1
            else:
                self.examples.append(ex)
        if self.skipped:
            log.warning("skipped %d sentence pairs longer than max_tokens=%d", self.skipped, self.max_tokens)
        if not self.examples:
            raise ValueError("no examples fit within max_tokens")

    @staticmethod
    def _cost(ex):
        return max(len(ex[0]), len(ex[1]) + 1)

    def epoch(self, index=0):
        rng = np.random.default_rng([self.seed, index])
        order = rng.permutation(len(self.examples))
        order = sorted(order, key=lambda i: self._cost(self.examples[i]))
        batches, cur, width = [], [], 0
        for i in order:
            c = self._cost(self.examples[i])
            if cur and max(width, c) * (len(cur) + 1) > self.max_tokens:
                batches.append(cur)
                cur, width = [], 0
            cur.append(i)
            width = max(width, c)
        if cur:
            batches.append(cur)
        for j in rng.permutation(len(batches)):
            yield make_batch([self.examples[i] for i in batches[j]])

    def __iter__(self):
        return self.epoch(0)

    def forever(self):
        k = 0
        while True:
            yield from self.epoch(k)
            k += 1


def build_batches(corpora, vocab, bpe, max_tokens, seed=0) -> BatchStream:
    if not isinstance(corpora, (list, tuple)):
        corpora = [corpora]
    examples = []
    for corpus in corpora:
        examples.extend(encode_corpus(corpus, vocab, bpe))
    return BatchStream(examples, max_tokens, seed)
