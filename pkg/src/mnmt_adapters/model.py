"""Pre-norm Transformer encoder-decoder with addressable sub-layer sites.

Every sub-layer computes ``x + sublayer(LN(x))``. If an adapter bank is
plugged, the bank decides how (and whether) to modify that output; the
model itself never mutates base parameters when a bank is present.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import numerics as nx
from .numerics import Tensor
from .text.vocab import PAD

KINDS = ("self_attn", "cross_attn", "ffn")
NEG_INF = -1e9


@dataclass
class ModelConfig:
    enc_layers: int = 6
    dec_layers: int = 6
    d_model: int = 512
    d_ffn: int = 2048
    heads: int = 8
    vocab_size: int = 32000
    max_len: int = 256
    dropout: float = 0.1
    label_smoothing: float = 0.1

    def __post_init__(self):
        for name in ("enc_layers", "dec_layers", "d_model", "d_ffn", "heads", "vocab_size", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")

    @classmethod
    def big(cls, vocab_size=32000):
        return cls(6, 6, 1024, 4096, 16, vocab_size)

    @classmethod
    def iwslt(cls, vocab_size=32000):
        return cls(2, 2, 256, 1024, 4, vocab_size)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in fields(cls):
            if f.name in d:
                kw[f.name] = type(f.default)(d[f.name])
        return cls(**kw)


class Site(NamedTuple):
    side: str       # "enc" | "dec"
    layer: int      # 0-based
    kind: str       # one of KINDS

    @property
    def name(self):
        return f"{self.side}.{self.layer}.{self.kind}"


def enumerate_sites(config: ModelConfig):
    """Encoder first, then decoder; by layer, then kind."""
    sites = [Site("enc", l, k) for l in range(config.enc_layers) for k in ("self_attn", "ffn")]
    sites += [Site("dec", l, k) for l in range(config.dec_layers) for k in KINDS]
    return sites


@dataclass
class SiteRecord:
    site: Site
    x_in: np.ndarray
    ln_out: np.ndarray
    sub_out: np.ndarray
    base_out: np.ndarray
    out: np.ndarray
    adapter_in: np.ndarray | None = None
    adapter_out: np.ndarray | None = None
    composition: str | None = None


class Trace:
    """Collects one :class:`SiteRecord` per executed site."""

    def __init__(self):
        self.records: list[SiteRecord] = []

    def add(self, rec):
        self.records.append(rec)

    def __iter__(self):
        return iter(self.records)

    def by_site(self):
        return {r.site: r for r in self.records}


def sinusoidal_positions(max_len, d, dtype):
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


def _param_shapes(cfg: ModelConfig):
    d, f, v = cfg.d_model, cfg.d_ffn, cfg.vocab_size
    shapes = {"enc.embed": (v, d), "dec.embed": (v, d)}

    def ln(prefix):
        shapes[f"{prefix}.ln.gain"] = (d,)
        shapes[f"{prefix}.ln.bias"] = (d,)

    def attn(prefix):
        ln(prefix)
        for p in "qkvo":
            shapes[f"{prefix}.{p}.weight"] = (d, d)
            shapes[f"{prefix}.{p}.bias"] = (d,)

    def ffn(prefix):
        ln(prefix)
        shapes[f"{prefix}.fc1.weight"] = (d, f)
        shapes[f"{prefix}.fc1.bias"] = (f,)
        shapes[f"{prefix}.fc2.weight"] = (f, d)
        shapes[f"{prefix}.fc2.bias"] = (d,)

    for s in enumerate_sites(cfg):
        (ffn if s.kind == "ffn" else attn)(s.name)
    for side in ("enc", "dec"):
        shapes[f"{side}.final.ln.gain"] = (d,)
        shapes[f"{side}.final.ln.bias"] = (d,)
    return shapes


class TransformerModel:
    def __init__(self, config: ModelConfig, seed=0, dtype=nx.DEFAULT_DTYPE, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.bank = None
        self.trace = None
        shapes = _param_shapes(config)
        if params is None:
            params = self._init_params(shapes, seed)
        else:
            missing = set(shapes) - set(params)
            extra = set(params) - set(shapes)
            if missing or extra:
                raise ValueError(f"parameter mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
            for name, shape in shapes.items():
                if tuple(params[name].shape) != shape:
                    raise ValueError(f"{name}: shape {params[name].shape} != {shape}")
        self.params = {name: (p if isinstance(p, Tensor) else Tensor(p, requires_grad=True, name=name))
                       for name, p in sorted(params.items())}
        for name, p in self.params.items():
            p.name = name
        self._pe = sinusoidal_positions(config.max_len, config.d_model, self.dtype)

    def _init_params(self, shapes, seed):
        rng = np.random.default_rng(seed)
        d = self.config.d_model
        out = {}
        for name in sorted(shapes):
            shape = shapes[name]
            if name.endswith("embed"):
                data = rng.normal(0.0, d ** -0.5, size=shape)
            elif name.endswith("gain"):
                data = np.ones(shape)
            elif name.endswith("weight"):
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                data = rng.uniform(-limit, limit, size=shape)
            else:
                data = np.zeros(shape)
            out[name] = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        return out

    # ------------------------------------------------------------ bookkeeping

    def parameters(self):
        return self.params

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
        return self

    def unfreeze(self):
        for p in self.params.values():
            p.requires_grad = True
        return self

    def view(self):
        """Shallow copy sharing base tensors, with its own plug slot."""
        other = copy.copy(self)
        other.bank = None
        other.trace = None
        return other

    def cast(self, dtype):
        params = {n: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=n)
                  for n, p in self.params.items()}
        return TransformerModel(self.config, dtype=dtype, params=params)

    def plug(self, bank, strict=True):
        from .adapters import plug

        return plug(self, bank, strict=strict)

    def unplug(self, key=None):
        from .adapters import unplug

        return unplug(self, key)

    # ------------------------------------------------------------ building blocks

    def _p(self, name):
        return self.params[name]

    def embedding_matrix(self, side):
        """The (possibly adapter-adjusted) embedding table of one side."""
        table = self.params[f"{side}.embed"]
        if self.bank is None:
            return table
        return self.bank.adjust_embedding(side, table)

    def _embed(self, table, ids, rng):
        t = ids.shape[1]
        if t > self.config.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len={self.config.max_len}")
        x = nx.take_rows(table, ids) * math.sqrt(self.config.d_model)
        x = x + self._pe[:t]
        return nx.dropout(x, self.config.dropout, rng)

    def _ln(self, prefix, x):
        return nx.layer_norm(x, self._p(f"{prefix}.ln.gain"), self._p(f"{prefix}.ln.bias"))

    def _linear(self, prefix, x):
        return x @ self._p(f"{prefix}.weight") + self._p(f"{prefix}.bias")

    def _attention(self, prefix, q_in, kv_in, bias):
        b, tq, d = q_in.shape
        tk = kv_in.shape[1]
        h = self.config.heads
        dh = d // h
        q = self._linear(f"{prefix}.q", q_in).reshape(b, tq, h, dh).transpose(0, 2, 1, 3)
        k = self._linear(f"{prefix}.k", kv_in).reshape(b, tk, h, dh).transpose(0, 2, 3, 1)
        v = self._linear(f"{prefix}.v", kv_in).reshape(b, tk, h, dh).transpose(0, 2, 1, 3)
        scores = (q @ k) * (1.0 / math.sqrt(dh)) + bias
        ctx = (nx.softmax(scores, axis=-1) @ v).transpose(0, 2, 1, 3).reshape(b, tq, d)
        return self._linear(f"{prefix}.o", ctx)

    def _ffn(self, prefix, x):
        return self._linear(f"{prefix}.fc2", nx.relu(self._linear(f"{prefix}.fc1", x)))

    def sublayer_forward(self, site: Site, x, fn=None, rng=None):
        """``x + sublayer(LN(x))``, then any plugged adapter at this site."""
        if x.ndim != 3 or x.shape[-1] != self.config.d_model:
            raise ValueError(f"site input must be (batch, seq, {self.config.d_model}), got {x.shape}")
        if fn is None:
            if site.kind != "ffn":
                raise ValueError("attention sites need an explicit sub-layer function")
            fn = lambda h: self._ffn(site.name, h)  # noqa: E731
        h = self._ln(site.name, x)
        sub = nx.dropout(fn(h), self.config.dropout, rng)
        base = sub + x
        out, a_in, a_out = base, None, None
        comp = None
        if self.bank is not None:
            unit = self.bank.unit_at(site)
            if unit is not None:
                comp = self.bank.composition
                out, a_in, a_out = self.bank.apply(site, x, h, base)
        if self.trace is not None:
            self.trace.add(SiteRecord(site, x.data, h.data, sub.data, base.data, out.data,
                                      None if a_in is None else a_in.data,
                                      None if a_out is None else a_out.data, comp))
        return out

    # ------------------------------------------------------------ encoder/decoder

    def _pad_bias(self, ids):
        return np.where(ids == PAD, NEG_INF, 0.0).astype(self.dtype)[:, None, None, :]

    def encode(self, src_ids, rng=None):
        src_ids = np.asarray(src_ids, dtype=np.int64)
        cfg = self.config
        if src_ids.size and (src_ids.min() < 0 or src_ids.max() >= cfg.vocab_size):
            raise IndexError("source id out of vocabulary range")
        bias = self._pad_bias(src_ids)
        x = self._embed(self.embedding_matrix("enc"), src_ids, rng)
        for l in range(cfg.enc_layers):
            x = self.sublayer_forward(Site("enc", l, "self_attn"), x,
                                      lambda h, l=l: self._attention(f"enc.{l}.self_attn", h, h, bias), rng)
            x = self.sublayer_forward(Site("enc", l, "ffn"), x, None, rng)
        return self._ln("enc.final", x)

    def decode(self, states, src_ids, tgt_in, rng=None):
        """Teacher-forced decoder pass; returns logits (batch, tgt_len, vocab)."""
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        cfg = self.config
        t = tgt_in.shape[1]
        if t > cfg.max_len:
            raise ValueError(f"prefix length {t} exceeds max_len={cfg.max_len}")
        if tgt_in.size and (tgt_in.min() < 0 or tgt_in.max() >= cfg.vocab_size):
            raise IndexError("target id out of vocabulary range")
        causal = np.triu(np.full((t, t), NEG_INF, dtype=self.dtype), k=1)[None, None]
        src_bias = self._pad_bias(np.asarray(src_ids))
        table = self.embedding_matrix("dec")
        y = self._embed(table, tgt_in, rng)
        for l in range(cfg.dec_layers):
            y = self.sublayer_forward(Site("dec", l, "self_attn"), y,
                                      lambda h, l=l: self._attention(f"dec.{l}.self_attn", h, h, causal), rng)
            y = self.sublayer_forward(Site("dec", l, "cross_attn"), y,
                                      lambda h, l=l: self._attention(f"dec.{l}.cross_attn", h, states, src_bias), rng)
            y = self.sublayer_forward(Site("dec", l, "ffn"), y, None, rng)
        y = self._ln("dec.final", y)
        return y @ table.transpose(1, 0)

    def decode_step(self, states, src_ids, prefix_ids):
        """Next-token logits (batch, vocab) for BOS-started prefixes."""
        prefix_ids = np.asarray(prefix_ids, dtype=np.int64)
        if prefix_ids.ndim != 2 or prefix_ids.shape[1] == 0:
            raise ValueError("prefix must be a nonempty (batch, length) array")
        return self.decode(states, src_ids, prefix_ids).data[:, -1, :]

    def forward_loss(self, batch, rng=None, smoothing=None):
        """Mean label-smoothed token cross-entropy over non-PAD targets."""
        smoothing = self.config.label_smoothing if smoothing is None else smoothing
        states = self.encode(batch.src, rng)
        logits = self.decode(states, batch.src, batch.tgt_in, rng)
        return nx.cross_entropy(logits, batch.tgt_out, batch.tgt_out != PAD, smoothing)

    def token_losses(self, batch):
        """Summed unsmoothed NLL and token count (no tape, no dropout)."""
        states = self.encode(batch.src)
        logits = self.decode(states, batch.src, batch.tgt_in).data
        mask = batch.tgt_out != PAD
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        nll = -np.take_along_axis(logp, batch.tgt_out[..., None], axis=-1)[..., 0]
        return float((nll * mask).sum()), int(mask.sum())
