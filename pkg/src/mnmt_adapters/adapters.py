"""Bottleneck adapters: embedding, parallel layer, serial, and per-language (mono).

Placement per mode (``S`` = self-attention site, ``F`` = feed-forward site,
every layer of both stacks; decoder cross-attention never carries a unit):

============== =========== ===== ============= ===========
mode           sites       comp  unit owns LN  emb adapter
============== =========== ===== ============= ===========
ciat           S, F        par   no            enc + dec
ciat_layer     S, F        par   no            --
ciat_basic     F           par   no            --
serial         F           ser   yes           --
mono_parallel  F           par   no            --
mono_serial    F           ser   yes           --
============== =========== ===== ============= ===========

Up-projections start at zero, so a freshly created bank leaves the base
model's outputs bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .model import ModelConfig, Site, enumerate_sites
from .numerics import Tensor

MODES = ("ciat", "ciat_layer", "ciat_basic", "serial", "mono_serial", "mono_parallel")


class PlugError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    mode: str = "ciat"
    bottleneck: int | None = None       # default d_model // 2
    emb_bottleneck: int | None = None   # default = bottleneck

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown adapter mode {self.mode!r}; choose from {MODES}")

    @property
    def composition(self):
        return "serial" if self.mode in ("serial", "mono_serial") else "parallel"

    @property
    def embedding_adapter(self):
        return self.mode == "ciat"

    @property
    def mono(self):
        return self.mode.startswith("mono")

    @property
    def unit_has_ln(self):
        return self.composition == "serial"

    def kinds(self):
        return ("self_attn", "ffn") if self.mode in ("ciat", "ciat_layer") else ("ffn",)

    def sites(self, model_config: ModelConfig):
        kinds = self.kinds()
        return [s for s in enumerate_sites(model_config) if s.kind in kinds]

    def dims(self, model_config: ModelConfig):
        d = model_config.d_model
        m = self.bottleneck or d // 2
        me = self.emb_bottleneck or m
        if not 1 <= m < d or not 1 <= me < d:
            raise ValueError(f"bottleneck must satisfy 1 <= m < d_model={d}")
        return m, me

    def to_dict(self):
        return {"mode": self.mode, "bottleneck": self.bottleneck or 0, "emb_bottleneck": self.emb_bottleneck or 0}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("mode", "ciat"), int(d.get("bottleneck") or 0) or None,
                   int(d.get("emb_bottleneck") or 0) or None)


class AdapterUnit:
    """``up(ReLU(down(LN?(x))))`` with no output activation."""

    def __init__(self, prefix, d_model, m, with_ln, rng=None, dtype=np.float32, params=None):
        self.prefix = prefix
        self.d_model = d_model
        self.m = m
        self.with_ln = with_ln
        if params is None:
            rng = rng or np.random.default_rng(0)
            params = {
                "down.weight": rng.normal(0.0, d_model ** -0.5, size=(d_model, m)),
                "down.bias": np.zeros(m),
                "up.weight": np.zeros((m, d_model)),
                "up.bias": np.zeros(d_model),
            }
            if with_ln:
                params["ln.gain"] = np.ones(d_model)
                params["ln.bias"] = np.zeros(d_model)
            params = {k: Tensor(v.astype(dtype), requires_grad=True) for k, v in params.items()}
        self.params = {}
        for k, v in params.items():
            v.name = f"{prefix}.{k}"
            self.params[k] = v

    def core(self, h):
        p = self.params
        z = nx.relu(h @ p["down.weight"] + p["down.bias"])
        return z @ p["up.weight"] + p["up.bias"]

    def __call__(self, x):
        if self.with_ln:
            x = nx.layer_norm(x, self.params["ln.gain"], self.params["ln.bias"])
        return self.core(x)

    def named_parameters(self):
        return {v.name: v for v in self.params.values()}

    def num_params(self):
        return sum(v.size for v in self.params.values())


# ---------------------------------------------------------------- composition rules

def adapt_embedding(rows, unit):
    """``E - G(E)`` row-wise; accepts a single row or a matrix of rows."""
    rows = nx.as_tensor(rows)
    if rows.shape[-1] != unit.d_model:
        raise ValueError(f"embedding width {rows.shape[-1]} != adapter width {unit.d_model}")
    return rows - unit(rows)


def layer_adapter_forward(unit, x, site_ln=None):
    """Layer adapter output; parallel units normalize with the site's own LN."""
    if unit.with_ln:
        return unit(x)
    if site_ln is None:
        raise ValueError("layer adapter without its own LN needs the site's layer norm")
    return unit.core(site_ln(x))


def compose_parallel(base_out, ln_out, unit):
    """``F(x_i) + G(x_i)``: the unit reads the site input through the site LN."""
    if ln_out is None:
        raise ValueError("parallel composition needs the site's normalized input")
    a = unit.core(ln_out)
    return base_out + a, a


def compose_serial(base_out, unit):
    """``F(x_i) + G(F(x_i))`` with the unit's own LN."""
    a = unit(base_out)
    return base_out + a, a


# ---------------------------------------------------------------- banks

def _key_str(key):
    return "-".join(key)


class AdapterBank:
    """All adapter units for one language pair (or one language in mono modes)."""

    def __init__(self, key, config: AdapterConfig, model_config: ModelConfig, units, emb_units=None):
        self.key = tuple(key)
        self.config = config
        self.model_config = model_config
        self.units = dict(units)
        self.emb_units = dict(emb_units or {})
        valid = set(enumerate_sites(model_config))
        for site in self.units:
            if site not in valid:
                raise ValueError(f"adapter site {site.name} does not exist in the base model")

    @classmethod
    def create(cls, key, config: AdapterConfig, model_config: ModelConfig, seed=0, dtype=np.float32):
        key = (key,) if isinstance(key, str) else tuple(key)
        if config.mono and len(key) != 1:
            raise ValueError("mono banks are keyed by a single language")
        if not config.mono and len(key) != 2:
            raise ValueError("pair banks are keyed by (src, tgt)")
        m, me = config.dims(model_config)
        d = model_config.d_model
        rng = np.random.default_rng(seed)
        units = {s: AdapterUnit(f"{s.name}.adapter", d, m, config.unit_has_ln, rng, dtype)
                 for s in config.sites(model_config)}
        emb = {}
        if config.embedding_adapter:
            emb = {side: AdapterUnit(f"{side}.embed.adapter", d, me, True, rng, dtype) for side in ("enc", "dec")}
        return cls(key, config, model_config, units, emb)

    @classmethod
    def mono_pair(cls, src_bank, tgt_bank):
        """Encoder units from the source-language bank, decoder units from the target's."""
        if not (src_bank.config.mono and tgt_bank.config.mono):
            raise ValueError("mono_pair needs two mono banks")
        if src_bank.config != tgt_bank.config:
            raise ValueError("mono banks disagree on configuration")
        units = {s: u for s, u in src_bank.units.items() if s.side == "enc"}
        units.update({s: u for s, u in tgt_bank.units.items() if s.side == "dec"})
        return cls(src_bank.key + tgt_bank.key, src_bank.config, src_bank.model_config, units)

    @property
    def composition(self):
        return self.config.composition

    @property
    def key_str(self):
        return _key_str(self.key)

    def unit_at(self, site):
        return self.units.get(site)

    def embedding_unit(self, side):
        return self.emb_units.get(side)

    def adjust_embedding(self, side, table):
        unit = self.emb_units.get(side)
        return table if unit is None else adapt_embedding(table, unit)

    def apply(self, site, x, ln_out, base_out):
        """Returns (output, adapter input, adapter output) at ``site``."""
        unit = self.units[site]
        if self.composition == "parallel":
            out, a = compose_parallel(base_out, ln_out, unit)
            return out, x, a
        out, a = compose_serial(base_out, unit)
        return out, base_out, a

    def parameters(self):
        out = {}
        for unit in list(self.units.values()) + list(self.emb_units.values()):
            out.update(unit.named_parameters())
        return dict(sorted(out.items()))

    def num_params(self):
        return sum(p.size for p in self.parameters().values())

    def without(self, side=None, layers=(), embeddings=False):
        """A view with units removed: ``side``'s units in ``layers`` (0-based) and optionally the embedding adapters."""
        layers = set(layers)
        units = {s: u for s, u in self.units.items() if not (s.side == side and s.layer in layers)}
        emb = {} if embeddings else self.emb_units
        return AdapterBank(self.key, self.config, self.model_config, units, emb)

    def cast(self, dtype):
        def cp(u):
            return AdapterUnit(u.prefix, u.d_model, u.m, u.with_ln,
                               params={k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad)
                                       for k, v in u.params.items()})

        return AdapterBank(self.key, self.config, self.model_config,
                           {s: cp(u) for s, u in self.units.items()},
                           {s: cp(u) for s, u in self.emb_units.items()})

    def state_arrays(self):
        return {n: p.data for n, p in self.parameters().items()}

    @classmethod
    def from_arrays(cls, key, config, model_config, arrays):
        m, me = config.dims(model_config)
        d = model_config.d_model
        units, emb = {}, {}
        for s in config.sites(model_config):
            prefix = f"{s.name}.adapter"
            params = {k[len(prefix) + 1:]: Tensor(v, requires_grad=True)
                      for k, v in arrays.items() if k.startswith(prefix + ".")}
            if params:
                units[s] = AdapterUnit(prefix, d, m, config.unit_has_ln, params=params)
        if config.embedding_adapter:
            for side in ("enc", "dec"):
                prefix = f"{side}.embed.adapter"
                params = {k[len(prefix) + 1:]: Tensor(v, requires_grad=True)
                          for k, v in arrays.items() if k.startswith(prefix + ".")}
                emb[side] = AdapterUnit(prefix, d, me, True, params=params)
        return cls(key, config, model_config, units, emb)


def plug(model, bank: AdapterBank, strict=True):
    """Activate ``bank`` on ``model``. Base tensors are neither copied nor touched."""
    if model.bank is not None:
        raise PlugError(f"bank {model.bank.key_str} already plugged; unplug it first")
    mc, bc = model.config, bank.model_config
    if (mc.d_model, mc.enc_layers, mc.dec_layers) != (bc.d_model, bc.enc_layers, bc.dec_layers):
        raise PlugError("bank was built for a different model configuration")
    if bank.config.mono and len(bank.key) == 1:
        raise PlugError("plug a mono bank via AdapterBank.mono_pair(src_bank, tgt_bank)")
    model.bank = bank
    return model


def unplug(model, key=None):
    if model.bank is None:
        raise PlugError("no bank plugged")
    if key is not None and tuple(key) != model.bank.key:
        raise PlugError(f"plugged bank is {model.bank.key_str}, not {_key_str(key)}")
    model.bank = None
    return model


# ---------------------------------------------------------------- parameter accounting

def _unit_params(d, m, with_ln):
    return 2 * d * m + m + d + (2 * d if with_ln else 0)


def base_param_count(cfg: ModelConfig):
    d, f, v = cfg.d_model, cfg.d_ffn, cfg.vocab_size
    ln = 2 * d
    attn = 4 * d * d + 4 * d + ln
    ffn = 2 * d * f + f + d + ln
    emb = 2 * v * d   # encoder table + tied decoder input/output table
    return emb + cfg.enc_layers * (attn + ffn) + cfg.dec_layers * (2 * attn + ffn) + 2 * ln


def count_params(model_config: ModelConfig, adapter_config: AdapterConfig):
    """Closed-form parameter counts: ``{"base", "per_bank", "units", "embedding"}``.

    In mono modes ``per_bank`` is per language (encoder + decoder units).
    """
    d = model_config.d_model
    m, me = adapter_config.dims(model_config)
    n_units = len(adapter_config.sites(model_config))
    units = n_units * _unit_params(d, m, adapter_config.unit_has_ln)
    emb = 2 * _unit_params(d, me, True) if adapter_config.embedding_adapter else 0
    return {"base": base_param_count(model_config), "per_bank": units + emb,
            "units": units, "embedding": emb, "n_units": n_units}
