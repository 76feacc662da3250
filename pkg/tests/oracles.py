"""Independent reference implementations used as test oracles.

These deliberately avoid the package code paths they check: plain loops,
Python floats and ``math`` instead of numpy vectorization.
"""

import itertools
import math
from collections import Counter


def exhaustive_best(step_fn, vocab_size, max_len, alpha, bos=1, eos=2):
    """Best EOS-terminated sequence by ``logp / ((5 + len) / 6) ** alpha``.

    Every sequence of up to ``max_len`` tokens is scored by querying
    ``step_fn`` one prefix at a time. Ties go to the lexicographically
    smaller token tuple. Returns ``(tokens, score)`` with tokens BOS-prefixed.
    """
    best = None
    for length in range(1, max_len + 1):
        for body in itertools.product(range(vocab_size), repeat=length - 1):
            if eos in body:
                continue
            toks = (bos,) + body + (eos,)
            logp = 0.0
            for i in range(1, len(toks)):
                logp += float(step_fn([toks[:i]])[0][toks[i]])
            if logp == -math.inf:
                continue
            score = logp / ((5.0 + length) / 6.0) ** alpha
            key = (-score, toks)
            if best is None or key < best[0]:
                best = (key, toks, score)
    return best[1], best[2]


def brute_bleu(hyps, refs, max_n=4):
    """Corpus BLEU with clipped counts and brevity penalty, written longhand."""
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        ht, rt = h.split(), r.split()
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hc = Counter(tuple(ht[i:i + n]) for i in range(len(ht) - n + 1))
            rc = Counter(tuple(rt[i:i + n]) for i in range(len(rt) - n + 1))
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def brute_cosine_mean(rows_a, rows_b):
    total = 0.0
    for a, b in zip(rows_a, rows_b):
        dot = sum(float(x) * float(y) for x, y in zip(a, b))
        na = math.sqrt(sum(float(x) ** 2 for x in a))
        nb = math.sqrt(sum(float(y) ** 2 for y in b))
        total += dot / (na * nb)
    return total / len(rows_a)


# Constructed corpora with BLEU worked out by hand: (hyps, refs, score).
HAND_BLEU_CASES = [
    # identical sentence: every precision 1, no brevity penalty
    (["a b c d"], ["a b c d"], 100.0),
    # short hypothesis: bp = exp(1 - 6/4)
    (["a b c d"], ["a b c d e f"], 100.0 * math.exp(-0.5)),
    # one substitution at the end: 4/5, 3/4, 2/3, 1/2
    (["a b c d e"], ["a b c d f"], 100.0 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25),
    # two sentences pooled: 7/8, 5/6, 3/4, 1/2
    (["a b c d", "e f g h"], ["a b c d", "e f g x"], 100.0 * (7 / 8 * 5 / 6 * 3 / 4 * 1 / 2) ** 0.25),
    # reversed words: no bigram matches
    (["d c b a"], ["a b c d"], 0.0),
    # repeated unigram matched twice since the reference has two: 5/5, 3/4, 2/3, 1/2
    (["a a b c d"], ["a b c d a"], 100.0 * (3 / 4 * 2 / 3 * 1 / 2) ** 0.25),
    # long hypothesis, no penalty: 4/6, 3/5, 2/4, 1/3
    (["a b c d e f"], ["a b c d"], 100.0 * (4 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25),
    # an empty hypothesis line still counts toward the reference length
    (["", "a b c d"], ["x y", "a b c d"], 100.0 * math.exp(-0.5)),
    # every hypothesis empty
    (["", ""], ["a b", "c d"], 0.0),
    # the clipping example: "the" counts once, p1 = 1/5, no bigram match
    (["the the the the the"], ["the cat sat"], 0.0),
]
