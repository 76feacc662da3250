"""Two-phase training: multilingual base, then frozen-base adapter fine-tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .adapters import AdapterBank, AdapterConfig
from .checkpoint import param_digests
from .model import ModelConfig, TransformerModel
from .numerics import GradTape
from .text.batching import build_batches

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good_step=0):
        super().__init__(msg)
        self.last_good_step = last_good_step


class FrozenBaseModified(RuntimeError):
    pass


def noam_lr(step, d_model, warmup, scale=1.0):
    """``scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""
    if step < 1:
        raise ValueError("noam_lr is defined for step >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


def adam_step(params, grads, state: AdamState, lr, clip_norm=0.0):
    """One bias-corrected Adam update, in place on ``params[name].data``.

    ``params`` and ``grads`` are dicts keyed by name. Frozen tensors are
    skipped. Returns the pre-clipping global gradient norm.
    """
    trainable = [n for n, p in params.items() if p.requires_grad]
    for n in trainable:
        g = grads[n]
        if not np.all(np.isfinite(g)):
            bad = int((~np.isfinite(g)).sum())
            raise FloatingPointError(f"non-finite gradient in {n} ({bad} entries) at step {state.step + 1}")
    norm = math.sqrt(sum(float(np.vdot(grads[n], grads[n])) for n in trainable))
    factor = 1.0
    if clip_norm and norm > clip_norm:
        factor = clip_norm / (norm + 1e-6)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for n in trainable:
        p = params[n]
        g = grads[n] * factor if factor != 1.0 else grads[n]
        m = state.m.get(n)
        if m is None:
            m = state.m[n] = np.zeros_like(p.data)
            state.v[n] = np.zeros_like(p.data)
        v = state.v[n]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
        p.data = p.data - update
    return norm


@dataclass
class TrainRun:
    phase: str = "base"            # "base" | "adapter"
    seed: int = 0
    steps: int = 1000
    warmup: int = 4000
    lr_scale: float = 1.0
    max_tokens: int = 4096
    eval_every: int = 100
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 1.0
    log_path: str | None = None

    @classmethod
    def from_dict(cls, d, **overrides):
        kw = {}
        for f in fields(cls):
            if f.name in d and d[f.name] not in (None, ""):
                typ = str if f.default is None else type(f.default)
                kw[f.name] = typ(d[f.name])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def evaluate_loss(model, stream):
    """Per-token NLL (unsmoothed, dropout off) over one epoch of ``stream``."""
    total, count = 0.0, 0
    for batch in stream.epoch(0):
        s, c = model.token_losses(batch)
        total += s
        count += c
    return total / max(count, 1)


class _Log:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8") if path else None
        if self.fh:
            self.fh.write("step\tlr\tloss\tdev_loss\n")

    def write(self, row):
        if self.fh:
            dev = "" if row.get("dev_loss") is None else f"{row['dev_loss']:.6f}"
            self.fh.write(f"{row['step']}\t{row['lr']:.6e}\t{row['loss']:.6f}\t{dev}\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _fit(model, trainable, train_stream, dev_stream, run: TrainRun, d_model):
    """Shared optimisation loop. Returns the history list."""
    state = AdamState(beta1=run.beta1, beta2=run.beta2, eps=run.eps)
    rng = np.random.default_rng([run.seed, 1]) if model.config.dropout > 0 else None
    params = {p.name: p for p in trainable}
    history = []
    best, stale = math.inf, 0
    good = {n: p.data for n, p in params.items()}
    good_step = 0
    logfile = _Log(run.log_path)
    batches = train_stream.forever()
    try:
        for step in range(1, run.steps + 1):
            batch = next(batches)
            lr = noam_lr(step, d_model, run.warmup, run.lr_scale)
            with GradTape() as tape:
                loss = model.forward_loss(batch, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                for n, p in params.items():
                    p.data = good[n]
                raise TrainingDiverged(f"loss became {value} at step {step}", good_step)
            grads = tape.gradient(loss, trainable)
            adam_step(params, {p.name: g for p, g in grads.items()}, state, lr, run.clip_norm)
            row = {"step": step, "lr": lr, "loss": value, "dev_loss": None}
            if dev_stream is not None and (step % run.eval_every == 0 or step == run.steps):
                row["dev_loss"] = evaluate_loss(model, dev_stream)
                good = {n: p.data for n, p in params.items()}
                good_step = step
                if row["dev_loss"] < best - 1e-9:
                    best, stale = row["dev_loss"], 0
                else:
                    stale += 1
            history.append(row)
            logfile.write(row)
            if dev_stream is not None and run.patience and stale >= run.patience:
                log.info("dev loss flat for %d evaluations; stopping at step %d", stale, step)
                break
    finally:
        logfile.close()
    return history


def train_base(corpora, config: ModelConfig, run: TrainRun, vocab, bpe, dev_corpora=None, model=None):
    """Train every parameter on the union of ``corpora``; returns ``(model, history)``.

    A single corpus gives the bilingual baseline.
    """
    if not corpora:
        raise ValueError("train_base needs at least one corpus")
    if run.phase != "base":
        raise ValueError("train_base requires run.phase == 'base'")
    if config.vocab_size != len(vocab):
        raise ValueError(f"config.vocab_size={config.vocab_size} but vocabulary has {len(vocab)} entries")
    model = model or TransformerModel(config, seed=run.seed)
    model.unfreeze()
    stream = build_batches(list(corpora), vocab, bpe, run.max_tokens, seed=run.seed)
    dev = build_batches(list(dev_corpora), vocab, bpe, run.max_tokens, seed=run.seed) if dev_corpora else None
    history = _fit(model, list(model.params.values()), stream, dev, run, config.d_model)
    return model, history


def train_adapter(base_model: TransformerModel, corpus, adapter_config: AdapterConfig, run: TrainRun,
                  vocab, bpe, dev_corpus=None, bank=None):
    """Fine-tune one bank on one pair with the base frozen; returns ``(bank, history)``.

    The base tensors are hashed before and after; any change raises
    :class:`FrozenBaseModified`.
    """
    if run.phase != "adapter":
        raise ValueError("train_adapter requires run.phase == 'adapter'")
    if bank is None:
        if adapter_config.mono:
            src = AdapterBank.create((corpus.src_lang,), adapter_config, base_model.config, seed=run.seed,
                                     dtype=base_model.dtype)
            tgt = AdapterBank.create((corpus.tgt_lang,), adapter_config, base_model.config, seed=run.seed + 1,
                                     dtype=base_model.dtype)
            bank = AdapterBank.mono_pair(src, tgt)
        else:
            bank = AdapterBank.create(corpus.key, adapter_config, base_model.config, seed=run.seed,
                                      dtype=base_model.dtype)
    if bank.key != corpus.key:
        raise ValueError(f"bank {bank.key_str} does not match corpus pair {'-'.join(corpus.key)}")
    view = base_model.view()
    flags = {n: p.requires_grad for n, p in base_model.params.items()}
    before = param_digests(base_model.params)
    view.freeze()
    view.plug(bank)
    try:
        stream = build_batches([corpus], vocab, bpe, run.max_tokens, seed=run.seed)
        dev = build_batches([dev_corpus], vocab, bpe, run.max_tokens, seed=run.seed) if dev_corpus else None
        trainable = list(bank.parameters().values())
        for p in trainable:
            p.requires_grad = True
        history = _fit(view, trainable, stream, dev, run, base_model.config.d_model) if run.steps > 0 else []
    finally:
        view.unplug()
        for n, p in base_model.params.items():
            p.requires_grad = flags[n]
    if param_digests(base_model.params) != before:
        raise FrozenBaseModified("base parameters changed during adapter training")
    return bank, history
