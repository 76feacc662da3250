"""Toy corpora for exercising multilingual interference.

Two source languages share one surface vocabulary but disagree on what some
words mean ("false friends"); both translate into the same target language,
so the target tag cannot tell them apart. A single multilingual model can at
best hedge on the false friends, while a per-pair adapter can resolve them.
"""

from __future__ import annotations

import itertools

import numpy as np

from .text.corpus import ParallelCorpus

_CONS = "bdfgklmnprstvz"
_VOWS = "aeiou"


def syllables(n, rng, exclude=()):
    pool = [c + v for c, v in itertools.product(_CONS, _VOWS) if c + v not in exclude]
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def conflict_lexicons(n_words=12, n_conflicts=6, seed=0):
    """Return (source words, lexicon_a, lexicon_b) where lexicon_b permutes the conflicting words."""
    rng = np.random.default_rng(seed)
    src = syllables(n_words, rng)
    tgt = [w.upper() for w in syllables(n_words, rng, exclude=src)]
    lex_a = dict(zip(src, tgt))
    conflicts = list(rng.choice(n_words, size=n_conflicts, replace=False))
    rotated = conflicts[1:] + conflicts[:1]
    lex_b = dict(lex_a)
    for i, j in zip(conflicts, rotated):
        lex_b[src[i]] = tgt[j]
    return src, lex_a, lex_b


def _sentences(words, lexicon, n, rng, min_len=3, max_len=6):
    out = []
    for _ in range(n):
        k = int(rng.integers(min_len, max_len + 1))
        s = [words[i] for i in rng.integers(0, len(words), size=k)]
        out.append((" ".join(s), " ".join(lexicon[w] for w in s)))
    return out


def interference_task(n_train=400, n_dev=60, n_words=12, n_conflicts=6, seed=0,
                      langs=("xa", "xb"), tgt_lang="en"):
    """Two pairs ``xa->en`` and ``xb->en`` with conflicting lexicons.

    Returns ``(train_corpora, dev_corpora)`` as lists of :class:`ParallelCorpus`.
    """
    words, lex_a, lex_b = conflict_lexicons(n_words, n_conflicts, seed)
    rng = np.random.default_rng([seed, 7])
    train, dev = [], []
    for lang, lex in zip(langs, (lex_a, lex_b)):
        train.append(ParallelCorpus(lang, tgt_lang, _sentences(words, lex, n_train, rng)))
        dev.append(ParallelCorpus(lang, tgt_lang, _sentences(words, lex, n_dev, rng)))
    return train, dev


def copy_task(n=200, n_words=10, seed=0, src_lang="xa", tgt_lang="en"):
    """Target equals source word-for-word (upper-cased)."""
    rng = np.random.default_rng(seed)
    words = syllables(n_words, rng)
    lex = {w: w.upper() for w in words}
    return ParallelCorpus(src_lang, tgt_lang, _sentences(words, lex, n, rng))
