import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mnmt_adapters.adapters import (
    MODES, AdapterBank, AdapterConfig, AdapterUnit, PlugError, adapt_embedding, compose_parallel, compose_serial,
    count_params, layer_adapter_forward,
)
from mnmt_adapters.model import ModelConfig, Site, Trace, TransformerModel
from mnmt_adapters.numerics import GradTape, Tensor, grad_check, layer_norm
from mnmt_adapters.text import make_batch

from conftest import randomize, tiny_config

V = 20


def setup(mode, seed=0, **kw):
    cfg = tiny_config(V, **kw)
    model = TransformerModel(cfg, seed=seed, dtype=np.float64)
    ac = AdapterConfig(mode)
    if not ac.mono:
        return model, AdapterBank.create(("xa", "en"), ac, cfg, seed=seed, dtype=np.float64)
    src = AdapterBank.create("xa", ac, cfg, seed=seed, dtype=np.float64)
    tgt = AdapterBank.create("en", ac, cfg, seed=seed + 1, dtype=np.float64)
    return model, AdapterBank.mono_pair(src, tgt)


def batch(seed=0):
    rng = np.random.default_rng(seed)
    return make_batch([(list(rng.integers(4, V, 5)), list(rng.integers(4, V, 3)), ("xa", "en")) for _ in range(2)])


def hand_unit(d, m, weights, with_ln=False):
    params = {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in weights.items()}
    return AdapterUnit("u", d, m, with_ln, params=params)


def randomize_unit(unit, seed=5):
    rng = np.random.default_rng(seed)
    for p in unit.params.values():
        p.data = rng.normal(0.0, 0.5, size=p.shape)


# ---------------------------------------------------------------- placement

PLACEMENT = {
    # mode: (kinds, composition, unit LN, embedding adapter)
    "ciat": (("self_attn", "ffn"), "parallel", False, True),
    "ciat_layer": (("self_attn", "ffn"), "parallel", False, False),
    "ciat_basic": (("ffn",), "parallel", False, False),
    "serial": (("ffn",), "serial", True, False),
    "mono_parallel": (("ffn",), "parallel", False, False),
    "mono_serial": (("ffn",), "serial", True, False),
}


@pytest.mark.parametrize("mode", MODES)
def test_placement_per_mode(mode):
    kinds, comp, ln, emb = PLACEMENT[mode]
    cfg = AdapterConfig(mode)
    assert cfg.kinds() == kinds and cfg.composition == comp
    assert cfg.unit_has_ln == ln and cfg.embedding_adapter == emb
    sites = cfg.sites(tiny_config(V))
    assert all(s.kind != "cross_attn" for s in sites)
    assert len(sites) == len(kinds) * 4


def test_config_validation():
    with pytest.raises(ValueError):
        AdapterConfig("houlsby")
    with pytest.raises(ValueError):
        AdapterConfig("ciat", bottleneck=8).dims(tiny_config(V))
    assert AdapterConfig("ciat").dims(tiny_config(V)) == (4, 4)
    assert AdapterConfig("ciat", 2, 3).dims(tiny_config(V)) == (2, 3)
    cfg = AdapterConfig("serial", 3)
    assert AdapterConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()}) == cfg


# ---------------------------------------------------------------- units

def test_bottleneck_hand_example():
    unit = hand_unit(2, 1, {"down.weight": [[1.0], [0.5]], "down.bias": [-1.0],
                            "up.weight": [[2.0, -1.0]], "up.bias": [0.1, 0.2]})
    # relu(2*1 + 3*0.5 - 1) = 2.5, then [2.5*2 + 0.1, 2.5*-1 + 0.2]
    np.testing.assert_allclose(unit.core(Tensor(np.array([[2.0, 3.0]]))).data, [[5.1, -2.3]])


def test_embedding_adapter_subtracts():
    # LN([1, 0]) = [1, -1]; relu(1) = 1; up gives [0.5, -0.5]
    unit = hand_unit(2, 1, {"down.weight": [[1.0], [0.0]], "down.bias": [0.0],
                            "up.weight": [[0.5, -0.5]], "up.bias": [0.0, 0.0],
                            "ln.gain": [1.0, 1.0], "ln.bias": [0.0, 0.0]}, with_ln=True)
    np.testing.assert_allclose(adapt_embedding(np.array([[1.0, 0.0]]), unit).data, [[0.5, 0.5]], atol=1e-5)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(2, 12), m=st.integers(1, 11), seed=st.integers(0, 100))
def test_fresh_unit_outputs_zero_of_width_d(d, m, seed):
    m = min(m, d - 1) if d > 1 else 1
    unit = AdapterUnit("u", d, m, True, np.random.default_rng(seed), np.float64)
    x = Tensor(np.random.default_rng(seed).normal(size=(3, d)))
    out = unit(x).data
    assert out.shape == (3, d)
    assert np.all(out == 0)
    emb = np.random.default_rng(seed + 1).normal(size=(5, d))
    np.testing.assert_array_equal(adapt_embedding(emb, unit).data, emb)


def test_parallel_output_is_sum_and_reads_site_input():
    rng = np.random.default_rng(0)
    unit = AdapterUnit("u", 6, 3, False, rng, np.float64)
    randomize_unit(unit)
    x = Tensor(rng.normal(size=(1, 4, 6)))
    g, b = np.ones(6), np.zeros(6)
    ln = layer_norm(x, g, b)
    base = Tensor(rng.normal(size=(1, 4, 6)))
    out, a = compose_parallel(base, ln, unit)
    np.testing.assert_array_equal(out.data, base.data + a.data)
    np.testing.assert_array_equal(a.data, layer_adapter_forward(unit, x, lambda h: layer_norm(h, g, b)).data)
    # feeding F(x) instead gives a different answer
    wrong = unit.core(layer_norm(base, g, b)).data
    assert not np.allclose(wrong, a.data)


def test_serial_reads_sublayer_output():
    rng = np.random.default_rng(1)
    unit = AdapterUnit("u", 6, 3, True, rng, np.float64)
    randomize_unit(unit)
    base = Tensor(rng.normal(size=(1, 4, 6)))
    out, a = compose_serial(base, unit)
    np.testing.assert_array_equal(a.data, unit(base).data)
    np.testing.assert_array_equal(out.data, base.data + a.data)


# ---------------------------------------------------------------- banks and plugging

@pytest.mark.parametrize("mode", MODES)
def test_zero_bank_is_bitwise_identity(mode):
    model, bank = setup(mode)
    b = batch()
    ref = model.decode(model.encode(b.src), b.src, b.tgt_in).data
    view = model.view()
    view.plug(bank)
    got = view.decode(view.encode(b.src), b.src, b.tgt_in).data
    np.testing.assert_array_equal(got, ref)


@pytest.mark.parametrize("mode", ["ciat", "serial", "mono_parallel"])
def test_adapter_input_matches_composition(mode):
    model, bank = setup(mode)
    randomize(bank)
    view = model.view()
    view.plug(bank)
    view.trace = Trace()
    b = batch()
    view.decode(view.encode(b.src), b.src, b.tgt_in)
    hit = 0
    for rec in view.trace:
        if rec.adapter_in is None:
            continue
        hit += 1
        expect = rec.x_in if bank.composition == "parallel" else rec.base_out
        np.testing.assert_array_equal(rec.adapter_in, expect)
        np.testing.assert_array_equal(rec.out, rec.base_out + rec.adapter_out)
    assert hit == len(bank.units)


def test_plug_rules():
    model, bank = setup("ciat")
    view = model.view()
    view.plug(bank)
    with pytest.raises(PlugError, match="already plugged"):
        view.plug(bank)
    with pytest.raises(PlugError):
        view.unplug(("xb", "en"))
    view.unplug(("xa", "en"))
    with pytest.raises(PlugError, match="no bank"):
        view.unplug()
    other = AdapterBank.create(("xa", "en"), AdapterConfig("ciat"), tiny_config(V, d_model=12, heads=2))
    with pytest.raises(PlugError, match="different model"):
        model.view().plug(other)
    mono = AdapterBank.create("xa", AdapterConfig("mono_serial"), tiny_config(V))
    with pytest.raises(PlugError, match="mono_pair"):
        model.view().plug(mono)
    assert model.bank is None


def test_plugging_a_view_leaves_base_untouched():
    model, bank = setup("ciat")
    randomize(bank)
    view = model.view()
    view.plug(bank)
    assert model.bank is None
    assert view.params is model.params


def test_mono_pair_takes_encoder_from_source_bank():
    cfg = tiny_config(V)
    src = AdapterBank.create("xa", AdapterConfig("mono_serial"), cfg, seed=0)
    tgt = AdapterBank.create("en", AdapterConfig("mono_serial"), cfg, seed=1)
    pair = AdapterBank.mono_pair(src, tgt)
    assert pair.key == ("xa", "en")
    for site, unit in pair.units.items():
        assert unit is (src if site.side == "enc" else tgt).units[site]
    with pytest.raises(ValueError):
        AdapterBank.mono_pair(src, AdapterBank.create(("xa", "en"), AdapterConfig("serial"), cfg))
    with pytest.raises(ValueError):
        AdapterBank.create(("xa", "en"), AdapterConfig("mono_serial"), cfg)


def test_without_removes_units():
    _, bank = setup("ciat")
    cut = bank.without("dec", [0])
    assert Site("dec", 0, "ffn") not in cut.units and Site("dec", 1, "ffn") in cut.units
    assert Site("enc", 0, "ffn") in cut.units
    assert cut.emb_units and not bank.without(embeddings=True).emb_units
    assert len(bank.units) == 8


@pytest.mark.parametrize("mode", MODES)
def test_instantiated_sizes_match_closed_form(mode):
    mc = ModelConfig.iwslt(vocab_size=1000)
    ac = AdapterConfig(mode)
    key = "xa" if ac.mono else ("xa", "en")
    bank = AdapterBank.create(key, ac, mc)
    assert bank.num_params() == count_params(mc, ac)["per_bank"]


# ---------------------------------------------------------------- gradients

def test_embedding_adapter_gradient():
    rng = np.random.default_rng(0)
    unit = AdapterUnit("e", 8, 4, True, rng, np.float64)
    randomize_unit(unit)
    table = Tensor(rng.normal(size=(6, 8)))
    w = Tensor(rng.normal(size=(6, 8)))
    report = grad_check(lambda: (adapt_embedding(table, unit) * w).sum(), list(unit.named_parameters().items()))
    assert report.max_rel_err < 1e-6


def test_base_gradients_absent_when_frozen():
    model, bank = setup("ciat")
    randomize(bank, scale=0.2)
    model.freeze()
    view = model.view()
    view.plug(bank)
    b = batch(1)
    with GradTape() as tape:
        loss = view.forward_loss(b)
    reached = tape.gradient(loss)
    names = {t.name for t in reached}
    assert names == set(bank.parameters())
    with pytest.raises(ValueError, match="frozen"):
        tape.gradient(loss, [model.params["enc.embed"]])
    report = grad_check(lambda: view.forward_loss(b), list(bank.parameters().items()), max_elements=5)
    assert report.max_rel_err < 1e-4
