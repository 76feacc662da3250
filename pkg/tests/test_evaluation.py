import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnmt_adapters.adapters import AdapterBank, AdapterConfig
from mnmt_adapters.evaluation import (
    acs, adapted_embedding, ablated_bank, bleu, cosine_mean, norm_ratio_profile, span_ablation, win_ratio,
    write_jsonl, write_tsv,
)
from mnmt_adapters.inference import translate
from mnmt_adapters.model import Trace
from mnmt_adapters.text import PAD, ParallelCorpus, build_batches

from conftest import randomize
from oracles import HAND_BLEU_CASES, brute_bleu, brute_cosine_mean

pytestmark = pytest.mark.filterwarnings("ignore:no hypothesis finished")

# ---------------------------------------------------------------- BLEU


@pytest.mark.parametrize("hyps,refs,expected", HAND_BLEU_CASES)
def test_bleu_hand_computed(hyps, refs, expected):
    assert bleu(hyps, refs).score == pytest.approx(expected, abs=1e-6)


def test_clipping_example_precision_and_smoothing():
    report = bleu(["the the the the the"], ["the cat sat"])
    assert report.precisions[0] == pytest.approx(1 / 5)
    smoothed = bleu(["the the the the the"], ["the cat sat"], smooth=True)
    expected = 100.0 * math.exp((math.log(1 / 5) + math.log(0.1 / 4) + math.log(0.1 / 3) + math.log(0.1 / 2)) / 4)
    assert smoothed.score == pytest.approx(expected, abs=1e-9) and smoothed.smoothed
    assert "smoothed" in str(smoothed)


def test_bleu_errors():
    with pytest.raises(ValueError, match="hypotheses"):
        bleu(["a"], ["a", "b"])
    with pytest.raises(ValueError, match="empty reference at line 2"):
        bleu(["a", "b"], ["a", ""])


SENT = st.lists(st.sampled_from("abcde"), min_size=1, max_size=9).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(pairs=st.lists(st.tuples(SENT, SENT), min_size=1, max_size=5), seed=st.integers(0, 100))
def test_bleu_against_oracle_and_order(pairs, seed):
    hyps, refs = [p[0] for p in pairs], [p[1] for p in pairs]
    score = bleu(hyps, refs).score
    assert score == pytest.approx(brute_bleu(hyps, refs), abs=1e-9)
    assert 0.0 <= score <= 100.0 + 1e-9
    perm = np.random.default_rng(seed).permutation(len(pairs))
    assert bleu([hyps[i] for i in perm], [refs[i] for i in perm]).score == pytest.approx(score, abs=1e-9)
    assert bleu(refs, refs).score == pytest.approx(100.0) or min(len(r.split()) for r in refs) < 4


def test_self_comparison_is_100():
    refs = ["a b c d e", "f g h i j k"]
    assert bleu(refs, refs).score == pytest.approx(100.0)


# ---------------------------------------------------------------- ACS

SINGLE = [("da", "KO"), ("ki", "LO"), ("fu", "VU"), ("ma", "TA")]


def test_cosine_mean_examples():
    assert cosine_mean([[1.0, 2.0]], [[2.0, 4.0]]) == pytest.approx(1.0)
    assert cosine_mean([[1.0, 0.0]], [[0.0, 3.0]]) == pytest.approx(0.0)
    a = [[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]]
    b = [[1.0, 1.0], [-1.0, -1.0], [0.0, 1.0]]
    # cosines: 1/sqrt(2), -1, 1
    assert cosine_mean(a, b) == pytest.approx((1 / math.sqrt(2) - 1 + 1) / 3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(0.1, 10.0))
def test_cosine_mean_invariances(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    base = cosine_mean(a, b)
    assert base == pytest.approx(brute_cosine_mean(a.tolist(), b.tolist()), abs=1e-12)
    assert cosine_mean(a @ q, b @ q) == pytest.approx(base, abs=1e-12)
    assert cosine_mean(scale * a, b) == pytest.approx(base, abs=1e-12)


def test_acs_uses_single_token_pairs(toy_text):
    _, _, bpe, vocab = toy_text
    emb = np.random.default_rng(0).normal(size=(len(vocab), 6))
    report = acs(emb, SINGLE + [("dano", "KOSA")], vocab, bpe)
    assert (report.retained, report.skipped) == (4, 1)
    rows = lambda words: [emb[vocab.token_id(bpe.segment_word(w)[0])] for w in words]
    expected = brute_cosine_mean(rows([s for s, _ in SINGLE]), rows([t for _, t in SINGLE]))
    assert report.mean == pytest.approx(expected, abs=1e-12)
    assert acs(emb, SINGLE, vocab, bpe, top_k=2).retained == 2
    with pytest.raises(ValueError, match="no dictionary pair"):
        acs(emb, [("dano", "KOSA")], vocab, bpe)


def test_zero_embedding_adapter_leaves_acs_unchanged(toy_text, toy_model):
    _, _, bpe, vocab = toy_text
    raw = acs(toy_model.params["enc.embed"], SINGLE, vocab, bpe).mean
    bank = AdapterBank.create(("xa", "en"), AdapterConfig("ciat"), toy_model.config, dtype=np.float64)
    assert acs(adapted_embedding(toy_model, bank), SINGLE, vocab, bpe).mean == raw
    randomize(bank, scale=1.0)
    assert acs(adapted_embedding(toy_model, bank), SINGLE, vocab, bpe).mean != raw


# ---------------------------------------------------------------- norm profile


def test_zero_bank_profile_is_zero(toy_text, toy_model):
    train, _, bpe, vocab = toy_text
    bank = AdapterBank.create(("xa", "en"), AdapterConfig("ciat"), toy_model.config, dtype=np.float64)
    prof = norm_ratio_profile(toy_model, bank, train[0], vocab, bpe)
    assert len(prof.sites) == 8 and all(r == 0.0 for r in prof.ratios)
    assert prof.layers == ["enc.0", "enc.1", "dec.0", "dec.1"]


def test_profile_matches_direct_recomputation(toy_text, toy_model):
    train, _, bpe, vocab = toy_text
    corpus = train[0]
    bank = randomize(AdapterBank.create(("xa", "en"), AdapterConfig("ciat_layer"), toy_model.config,
                                        dtype=np.float64))
    prof = norm_ratio_profile(toy_model, bank, corpus, vocab, bpe, max_tokens=10**6)
    (batch,) = list(build_batches([corpus], vocab, bpe, 10**6).epoch(0))
    view = toy_model.view()
    view.plug(bank)
    view.trace = Trace()
    view.decode(view.encode(batch.src), batch.src, batch.tgt_in)
    masks = {"enc": batch.src != PAD, "dec": batch.tgt_in != PAD}
    checked = 0
    for rec in view.trace:
        if rec.adapter_out is None:
            continue
        checked += 1
        vals = []
        for idx in zip(*np.nonzero(masks[rec.site.side])):
            a, b = rec.adapter_out[idx], rec.base_out[idx]
            vals.append(math.sqrt(float(a @ a)) / math.sqrt(float(b @ b)))
        assert prof.ratios[prof.sites.index(rec.site.name)] == pytest.approx(sum(vals) / len(vals), rel=1e-9)
    assert checked == len(prof.sites) == 8
    assert prof.layer_ratios[0] == pytest.approx(np.mean(prof.ratios[:2]))


def test_profile_rejects_serial(toy_text, toy_model):
    train, _, bpe, vocab = toy_text
    bank = AdapterBank.create(("xa", "en"), AdapterConfig("serial"), toy_model.config)
    with pytest.raises(ValueError, match="parallel"):
        norm_ratio_profile(toy_model, bank, train[0], vocab, bpe)


# ---------------------------------------------------------------- ablation


def small_eval(toy_text, n=4):
    c = toy_text[1][0]
    return ParallelCorpus(c.src_lang, c.tgt_lang, c.pairs[:n])


def test_ablation_grid_shape_and_files(toy_text, toy_model, tmp_path):
    _, _, bpe, vocab = toy_text
    bank = randomize(AdapterBank.create(("xa", "en"), AdapterConfig("ciat"), toy_model.config,
                                        dtype=np.float64))
    grid = span_ablation(toy_model, bank, small_eval(toy_text), vocab, bpe, "dec", beam=2)
    assert sorted(grid.scores) == [(1, 1), (1, 2), (2, 2)]
    m = grid.matrix()
    assert np.isnan(m[1, 0]) and m[0, 1] == grid.scores[(1, 2)]
    grid.to_csv(tmp_path / "g.csv")
    grid.to_csv(tmp_path / "r.csv", relative=True)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "first\\last,1,2" and lines[2].startswith("2,,")
    with pytest.raises(ValueError):
        span_ablation(toy_model, bank, small_eval(toy_text), vocab, bpe, "mid")


def test_removing_every_unit_recovers_bare_model(toy_text, toy_model):
    _, _, bpe, vocab = toy_text
    ev = small_eval(toy_text)
    bank = randomize(AdapterBank.create(("xa", "en"), AdapterConfig("ciat"), toy_model.config,
                                        dtype=np.float64), scale=1.0)
    empty = ablated_bank(bank, {"enc": (1, 2), "dec": (1, 2)}, embeddings=True)
    assert not empty.units and not empty.emb_units
    bare = translate(toy_model, ev.sources, "xa", "en", vocab, bpe, beam=2)
    assert translate(toy_model, ev.sources, "xa", "en", vocab, bpe, bank=empty, beam=2) == bare


# ---------------------------------------------------------------- win ratio and files


def test_win_ratio_examples():
    results = {"a": 30.6, "b": 30.4, "c": 31.0}
    baselines = {"m1": {"a": 30.0, "b": 30.0, "c": 30.5}, "m2": {"a": 29.0, "b": 30.1, "c": 29.0}}
    assert win_ratio(results, baselines) == pytest.approx(200 / 3)
    assert win_ratio(results, baselines, threshold=0.0) == pytest.approx(100.0)
    with pytest.raises(ValueError, match="different pair set"):
        win_ratio(results, {"m": {"a": 1.0}})
    with pytest.raises(ValueError):
        win_ratio({}, {})


def test_report_writers(tmp_path):
    rows = [{"site": "enc.0.ffn", "ratio": 0.5}, {"site": "dec.0.ffn", "ratio": 0.25}]
    write_tsv(tmp_path / "p.tsv", rows)
    assert (tmp_path / "p.tsv").read_text().splitlines() == ["site\tratio", "enc.0.ffn\t0.5", "dec.0.ffn\t0.25"]
    write_jsonl(tmp_path / "p.jsonl", rows)
    assert [json.loads(x) for x in (tmp_path / "p.jsonl").read_text().splitlines()] == rows
