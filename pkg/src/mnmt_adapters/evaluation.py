"""Corpus BLEU, cross-lingual embedding similarity, and adapter analyses."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .inference import translate
from .text.batching import build_batches
from .text.vocab import PAD

# ---------------------------------------------------------------- BLEU


@dataclass
class BleuReport:
    score: float
    precisions: list
    brevity_penalty: float
    hyp_len: int
    ref_len: int
    smoothed: bool = False

    def __str__(self):
        p = "/".join(f"{100 * x:.1f}" for x in self.precisions)
        flag = " (smoothed)" if self.smoothed else ""
        return (f"BLEU = {self.score:.2f}, {p} (BP={self.brevity_penalty:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len}){flag}")


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n=4, smooth=False, epsilon=0.1):
    """Corpus-level BLEU on whitespace tokens, multi-bleu style.

    Without ``smooth`` any zero n-gram precision gives a score of 0. With it,
    a zero matched count is replaced by ``epsilon``.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for lineno, (h, r) in enumerate(zip(hypotheses, references), start=1):
        ht, rt = h.split(), r.split()
        if not rt:
            raise ValueError(f"empty reference at line {lineno}")
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            matched[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            total[n - 1] += max(len(ht) - n + 1, 0)
    precisions = [m / t if t else 0.0 for m, t in zip(matched, total)]
    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, 0, ref_len, smooth)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    logs = []
    for m, t in zip(matched, total):
        if t == 0:
            return BleuReport(0.0, precisions, bp, hyp_len, ref_len, smooth)
        if m == 0:
            if not smooth:
                return BleuReport(0.0, precisions, bp, hyp_len, ref_len, smooth)
            m = epsilon
        logs.append(math.log(m / t))
    score = 100.0 * bp * math.exp(sum(logs) / max_n)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, smooth)


# ---------------------------------------------------------------- ACS


@dataclass
class AcsReport:
    mean: float
    retained: int
    skipped: int


def cosine_mean(src_vecs, tgt_vecs):
    a = np.asarray(src_vecs, dtype=np.float64)
    b = np.asarray(tgt_vecs, dtype=np.float64)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return float(np.mean(num / den))


def acs(embedding, dictionary, vocab, bpe, top_k=1000):
    """Mean cosine of dictionary pairs whose words are single vocabulary tokens.

    ``embedding`` is a (vocab, d) matrix: the raw table or an adapter-adjusted
    view (see :func:`adapted_embedding`). The first ``top_k`` dictionary
    entries are considered.
    """
    emb = np.asarray(getattr(embedding, "data", embedding), dtype=np.float64)
    src_rows, tgt_rows = [], []
    skipped = 0
    for sw, tw in dictionary[:top_k]:
        ids = []
        for w in (sw, tw):
            pieces = bpe.segment_word(w)
            ids.append(vocab.token_id(pieces[0]) if len(pieces) == 1 else None)
        if None in ids:
            skipped += 1
            continue
        src_rows.append(ids[0])
        tgt_rows.append(ids[1])
    if not src_rows:
        raise ValueError("no dictionary pair maps to single vocabulary tokens")
    return AcsReport(cosine_mean(emb[src_rows], emb[tgt_rows]), len(src_rows), skipped)


def adapted_embedding(model, bank=None, side="enc"):
    """``E - G(E)`` for ``side`` under ``bank``; the raw table without a bank."""
    view = model.view()
    if bank is not None:
        view.plug(bank, strict=False)
    return view.embedding_matrix(side).data


# ---------------------------------------------------------------- layer-adapter norm profile


@dataclass
class NormProfile:
    sites: list                 # site names in model order
    ratios: list                # mean ||adapter|| / ||base|| per site
    layers: list = field(default_factory=list)        # "enc.0", ... in model order
    layer_ratios: list = field(default_factory=list)  # per-block mean over its units

    def rows(self):
        return [{"site": s, "ratio": r} for s, r in zip(self.sites, self.ratios)]


def position_ratios(adapter_out, base_out, mask):
    """Per-position L2 ratio at unmasked positions."""
    a = np.linalg.norm(np.asarray(adapter_out, dtype=np.float64), axis=-1)
    b = np.linalg.norm(np.asarray(base_out, dtype=np.float64), axis=-1)
    return (a / b)[mask]


def norm_ratio_profile(model, bank, corpus, vocab, bpe, max_tokens=4096):
    """Mean per-position ``||G(x_i)|| / ||F(x_i)||`` at every adapter site."""
    if bank.composition != "parallel":
        raise ValueError("norm ratio profile is defined for parallel adapters only")
    from .model import Trace

    view = model.view()
    view.plug(bank, strict=False)
    sums, counts = {}, {}
    order = []
    for batch in build_batches([corpus], vocab, bpe, max_tokens, seed=0).epoch(0):
        view.trace = Trace()
        states = view.encode(batch.src)
        view.decode(states, batch.src, batch.tgt_in)
        masks = {"enc": batch.src != PAD, "dec": batch.tgt_in != PAD}
        for rec in view.trace:
            if rec.adapter_out is None:
                continue
            r = position_ratios(rec.adapter_out, rec.base_out, masks[rec.site.side])
            if rec.site not in sums:
                order.append(rec.site)
                sums[rec.site], counts[rec.site] = 0.0, 0
            sums[rec.site] += float(r.sum())
            counts[rec.site] += int(r.size)
    view.trace = None
    ratios = [sums[s] / max(counts[s], 1) for s in order]
    layers, layer_ratios = [], []
    for s, r in zip(order, ratios):
        key = f"{s.side}.{s.layer}"
        if not layers or layers[-1] != key:
            layers.append(key)
            layer_ratios.append([])
        layer_ratios[-1].append(r)
    return NormProfile([s.name for s in order], ratios, layers, [float(np.mean(v)) for v in layer_ratios])


# ---------------------------------------------------------------- span ablation


@dataclass
class AblationGrid:
    side: str
    n_layers: int
    full: float
    scores: dict                # (first, last) 1-based inclusive -> BLEU

    def drop(self, a, b):
        return self.full - self.scores[(a, b)]

    def matrix(self):
        m = np.full((self.n_layers, self.n_layers), np.nan)
        for (a, b), s in self.scores.items():
            m[a - 1, b - 1] = s
        return m

    def to_csv(self, path, relative=False):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["first\\last"] + [str(b) for b in range(1, self.n_layers + 1)])
            for a in range(1, self.n_layers + 1):
                row = []
                for b in range(1, self.n_layers + 1):
                    if (a, b) not in self.scores:
                        row.append("")
                    elif relative:
                        row.append(f"{self.drop(a, b) / self.full if self.full else 0.0:.6f}")
                    else:
                        row.append(f"{self.scores[(a, b)]:.4f}")
                w.writerow([str(a)] + row)


def _score(model, bank, corpus, vocab, bpe, beam, alpha):
    hyps = translate(model, corpus.sources, corpus.src_lang, corpus.tgt_lang, vocab, bpe,
                     bank=bank, beam=beam, alpha=alpha, strict=False)
    return bleu(hyps, corpus.targets).score


def ablated_bank(bank, spans, embeddings=False):
    """``spans``: {side: (first, last)} 1-based inclusive layer spans to disable."""
    out = bank
    for side, (a, b) in spans.items():
        out = out.without(side, range(a - 1, b))
    if embeddings:
        out = out.without(embeddings=True)
    return out


def span_ablation(model, bank, corpus, vocab, bpe, side, beam=4, alpha=0.6):
    """BLEU with adapter units of every contiguous layer span on ``side`` disabled."""
    if not len(corpus):
        raise ValueError("empty evaluation set")
    if side not in ("enc", "dec"):
        raise ValueError("side must be 'enc' or 'dec'")
    n = model.config.enc_layers if side == "enc" else model.config.dec_layers
    full = _score(model, bank, corpus, vocab, bpe, beam, alpha)
    scores = {}
    for a in range(1, n + 1):
        for b in range(a, n + 1):
            scores[(a, b)] = _score(model, ablated_bank(bank, {side: (a, b)}), corpus, vocab, bpe, beam, alpha)
    return AblationGrid(side, n, full, scores)


# ---------------------------------------------------------------- win ratio


def win_ratio(results, baselines, threshold=0.5):
    """Percent of pairs where ``results`` beats every baseline by >= ``threshold``.

    ``results``: {pair: score}; ``baselines``: {name: {pair: score}}. Margins
    are compared with a 1e-9 tolerance so that decimal inputs like 30.5 vs
    30.0 count as exactly 0.5.
    """
    pairs = set(results)
    if not pairs:
        raise ValueError("no pairs")
    for name, res in baselines.items():
        if set(res) != pairs:
            raise ValueError(f"baseline {name!r} covers a different pair set")
    wins = 0
    for p in pairs:
        best = max(res[p] for res in baselines.values())
        if results[p] - best >= threshold - 1e-9:
            wins += 1
    return 100.0 * wins / len(pairs)


# ---------------------------------------------------------------- report files


def write_tsv(path, rows):
    rows = [r if isinstance(r, dict) else asdict(r) for r in rows]
    keys = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(keys) + "\n")
        for r in rows:
            fh.write("\t".join(str(r[k]) for k in keys) + "\n")


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r if isinstance(r, dict) else asdict(r), sort_keys=True) + "\n")
