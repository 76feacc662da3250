"""Beam search with GNMT length penalty, and sentence-level translation."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .text.vocab import BOS, EOS, decode, encode_source

log = logging.getLogger(__name__)


def length_penalty(length, alpha):
    """``((5 + length) / 6) ** alpha``."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class BeamHypothesis:
    tokens: tuple        # BOS-prefixed
    logp: float
    finished: bool = False

    @property
    def length(self):
        return len(self.tokens) - 1

    def score(self, alpha):
        return self.logp / length_penalty(max(self.length, 1), alpha)


def _best(hyps, alpha):
    return min(hyps, key=lambda h: (-h.score(alpha), h.tokens))


def beam_search(step_fn, beam=4, alpha=0.6, max_len=64, bos=BOS, eos=EOS):
    """Search over sequences scored by ``logP / length_penalty``.

    ``step_fn(prefixes)`` maps a list of BOS-started token tuples (all the
    same length) to an ``(n, V)`` array of next-token log-probabilities;
    ``-inf`` entries are never expanded. ``max_len`` counts generated tokens,
    EOS included. Candidates are ranked by cumulative log-prob with ties
    broken by lexicographic token order; the ``beam`` best survive and those
    ending in EOS move to the finished pool. Returns the best finished
    :class:`BeamHypothesis` (or the best unfinished one, with a warning).
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    alive = [BeamHypothesis((bos,), 0.0)]
    pool = []
    cap = length_penalty(max_len, alpha)
    for t in range(1, max_len + 1):
        logp = np.asarray(step_fn([h.tokens for h in alive]), dtype=np.float64)
        base = np.array([h.logp for h in alive])[:, None]
        total = base + logp
        flat = total.ravel()
        finite = np.isfinite(flat)
        if not finite.any():
            break
        k = min(beam, int(finite.sum()))
        threshold = np.partition(flat[finite], -k)[-k]
        idx = np.nonzero(finite & (flat >= threshold))[0]
        v = logp.shape[1]
        cands = [(float(flat[i]), alive[i // v].tokens + (int(i % v),)) for i in idx]
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, toks in cands[:beam]:
            if toks[-1] == eos:
                pool.append(BeamHypothesis(toks, score, True))
            else:
                alive.append(BeamHypothesis(toks, score))
        if not alive:
            break
        if pool:
            best = max(h.score(alpha) for h in pool)
            bound = max(h.logp / cap if h.logp < 0 else h.logp for h in alive)
            if bound < best:
                break
    if pool:
        return _best(pool, alpha)
    warnings.warn(f"no hypothesis finished within max_len={max_len}; returning best unfinished")
    return _best(alive, alpha)


def greedy_decode(step_fn, max_len=64, bos=BOS, eos=EOS):
    toks = (bos,)
    logp = 0.0
    for _ in range(max_len):
        row = np.asarray(step_fn([toks]), dtype=np.float64)[0]
        nxt = int(np.argmax(row))
        logp += float(row[nxt])
        toks += (nxt,)
        if nxt == eos:
            return BeamHypothesis(toks, logp, True)
    return BeamHypothesis(toks, logp, False)


def log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def model_step_fn(model, src_ids, banned=()):
    """Step function over ``model`` for a single source sentence."""
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    states = model.encode(src)
    banned = np.array(sorted(set(banned)), dtype=np.int64)

    def step(prefixes):
        n = len(prefixes)
        prefix = np.array(prefixes, dtype=np.int64)
        st = states if n == 1 else type(states)(np.repeat(states.data, n, axis=0))
        logits = model.decode_step(st, np.repeat(src, n, axis=0), prefix).astype(np.float64)
        out = log_softmax(logits)
        if banned.size:
            out[:, banned] = -np.inf
        return out

    return step


def default_max_len(model, src_len):
    return max(1, min(model.config.max_len - 1, 2 * src_len + 10))


def translate_ids(model, src_ids, beam=4, alpha=0.6, max_len=None, banned=()):
    max_len = max_len or default_max_len(model, len(src_ids))
    step = model_step_fn(model, src_ids, banned)
    return beam_search(step, beam, alpha, max_len)


class PairMismatch(ValueError):
    pass


def translate(model, sentences, src_lang, tgt_lang, vocab, bpe, bank=None, beam=4, alpha=0.6,
              max_len=None, strict=True, threads=1):
    """Translate ``sentences`` into ``tgt_lang``; output order follows input order."""
    vocab.tag_id(tgt_lang)
    view = model.view()
    if bank is not None:
        if bank.key != (src_lang, tgt_lang):
            msg = f"bank {bank.key_str} plugged for pair {src_lang}-{tgt_lang}"
            if strict:
                raise PairMismatch(msg)
            warnings.warn(msg)
        view.plug(bank)
    banned = vocab.special_ids() - {EOS}

    def one(sentence):
        ids = encode_source(sentence, tgt_lang, vocab, bpe)
        hyp = translate_ids(view, ids, beam, alpha, max_len, banned)
        return decode(hyp.tokens[1:], vocab)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, sentences))
    return [one(s) for s in sentences]
