"""Command-line entry point: ``mnmt <verb> [flags]``.

Settings come from ``--config`` (``key = value`` lines, ``#`` comments) and
are overridden by flags. Corpus locations are given as ``PAIR=PREFIX``
(``xa-en=data/train`` reads ``data/train.xa`` and ``data/train.en``); in a
config file the same is written ``train.xa-en = data/train``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("mnmt")

MODEL_KEYS = {"enc_layers": int, "dec_layers": int, "d_model": int, "d_ffn": int, "heads": int,
              "max_len": int, "dropout": float, "label_smoothing": float}
RUN_KEYS = {"steps": int, "warmup": int, "lr_scale": float, "max_tokens": int, "eval_every": int,
            "patience": int, "clip_norm": float}
CORPUS_KEYS = ("train", "dev", "eval")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config handling

def read_config(path):
    """Parse ``key = value`` lines into a dict of strings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_") if "." not in key else key.strip()] = value.strip()
    return out


def _pair(text):
    src, sep, tgt = text.partition("-")
    if not sep or not src or not tgt:
        raise UsageError(f"bad language pair {text!r}; expected SRC-TGT")
    return src, tgt


def _corpus_specs(args, file_cfg, kind):
    """``[(src, tgt, prefix)]`` from flags, or else from ``<kind>.<pair>`` config keys."""
    given = getattr(args, kind, None)
    if given:
        specs = []
        for item in given:
            pair, sep, prefix = item.partition("=")
            if not sep:
                raise UsageError(f"--{kind} expects PAIR=PREFIX, got {item!r}")
            specs.append((*_pair(pair), prefix))
        return specs
    return [(*_pair(k.split(".", 1)[1]), v) for k, v in sorted(file_cfg.items()) if k.startswith(kind + ".")]


def _resolve(args, file_cfg, defaults):
    """Fill every unset flag from the config file, then from ``defaults``."""
    for dest, (typ, default) in defaults.items():
        if getattr(args, dest, None) is None:
            raw = file_cfg.get(dest)
            if raw is None:
                setattr(args, dest, default)
            elif typ is bool:
                setattr(args, dest, raw.lower() in ("1", "true", "yes", "on"))
            else:
                try:
                    setattr(args, dest, typ(raw))
                except ValueError as exc:
                    raise UsageError(f"config key {dest!r}: {exc}") from None


COMMON = {"seed": (int, 0), "threads": (int, 1), "out": (str, None)}

VERB_DEFAULTS = {
    "bpe-learn": {"vocab_size": (int, 8000)},
    "train-base": {"bpe": (str, None), "preset": (str, None), "init": (str, None),
                   **{k: (t, None) for k, t in MODEL_KEYS.items()},
                   **{k: (t, None) for k, t in RUN_KEYS.items()}},
    "train-adapter": {"model": (str, None), "mode": (str, "ciat"), "bottleneck": (int, 0),
                      "emb_bottleneck": (int, 0),
                      **{k: (t, None) for k, t in RUN_KEYS.items()}},
    "translate": {"model": (str, None), "bank": (str, None), "input": (str, None), "src": (str, None),
                  "tgt": (str, None), "beam": (int, 4), "alpha": (float, 0.6), "max_len": (int, 0)},
    "bleu": {"hyp": (str, None), "ref": (str, None), "smooth": (bool, False), "epsilon": (float, 0.1)},
    "acs": {"model": (str, None), "bank": (str, None), "dict": (str, None), "side": (str, "enc"),
            "top_k": (int, 1000)},
    "norm-profile": {"model": (str, None), "bank": (str, None), "max_tokens": (int, 4096)},
    "ablate": {"model": (str, None), "bank": (str, None), "side": (str, "enc"), "beam": (int, 4),
               "alpha": (float, 0.6)},
    "params": {"preset": (str, None), "mode": (str, "ciat"), "vocab_size": (int, None),
               "bottleneck": (int, 0), "emb_bottleneck": (int, 0), "banks": (int, 1),
               **{k: (t, None) for k, t in MODEL_KEYS.items()}},
}


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"missing required flag --{name.replace('_', '-')}")


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="key = value settings file; flags override it")
    g.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
    g.add_argument("--out", help="output path; a manifest is written beside it")
    g.add_argument("--threads", type=int, help="worker cap for sentence-parallel work")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mnmt", description="Multilingual NMT with pluggable per-pair adapter banks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    def verb(name, help_):
        return sub.add_parser(name, parents=[common], help=help_, description=help_)

    def model_flags(p):
        for k, t in MODEL_KEYS.items():
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=t)

    def run_flags(p):
        for k, t in RUN_KEYS.items():
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=t)

    p = verb("bpe-learn", "learn a joint BPE model from parallel corpora")
    p.add_argument("--train", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)

    p = verb("train-base", "train the shared multilingual model (one pair gives a bilingual baseline)")
    p.add_argument("--train", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--dev", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--bpe")
    p.add_argument("--preset", choices=("big", "iwslt"))
    p.add_argument("--init", help="continue from this model checkpoint")
    model_flags(p)
    run_flags(p)

    p = verb("train-adapter", "train one adapter bank on one pair with the base frozen")
    p.add_argument("--model")
    p.add_argument("--train", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--dev", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--mode", choices=_modes())
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--emb-bottleneck", dest="emb_bottleneck", type=int)
    run_flags(p)

    p = verb("translate", "beam-search translation of a text file")
    p.add_argument("--model")
    p.add_argument("--bank")
    p.add_argument("--input")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--max-len", dest="max_len", type=int)

    p = verb("bleu", "corpus BLEU of tokenized hypotheses against references")
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--smooth", action="store_const", const=True)
    p.add_argument("--epsilon", type=float)

    p = verb("acs", "average cosine similarity of dictionary pairs in an embedding table")
    p.add_argument("--model")
    p.add_argument("--bank")
    p.add_argument("--dict")
    p.add_argument("--side", choices=("enc", "dec"))
    p.add_argument("--top-k", dest="top_k", type=int)

    p = verb("norm-profile", "per-site adapter/base output norm ratios")
    p.add_argument("--model")
    p.add_argument("--bank")
    p.add_argument("--eval", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--max-tokens", dest="max_tokens", type=int)

    p = verb("ablate", "BLEU with contiguous spans of adapter layers removed")
    p.add_argument("--model")
    p.add_argument("--bank")
    p.add_argument("--eval", action="append", metavar="PAIR=PREFIX")
    p.add_argument("--side", choices=("enc", "dec"))
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)

    p = verb("params", "parameter counts of the base model and one adapter bank")
    p.add_argument("--preset", choices=("big", "iwslt"))
    p.add_argument("--mode", choices=_modes())
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--bottleneck", type=int)
    p.add_argument("--emb-bottleneck", dest="emb_bottleneck", type=int)
    p.add_argument("--banks", type=int, help="bank count for the total (pairs, or languages in mono modes)")
    model_flags(p)
    return parser


def _modes():
    from .adapters import MODES

    return MODES


# ---------------------------------------------------------------- shared loaders

def _load_text_setup(header):
    """BPE model and vocabulary recorded in a model checkpoint header."""
    from .text import BpeModel, Vocabulary

    bpe_path = header.get("bpe")
    if not bpe_path or not os.path.exists(bpe_path):
        raise FileNotFoundError(f"BPE model {bpe_path!r} recorded in the checkpoint is missing")
    bpe = BpeModel.load(bpe_path)
    langs = [x for x in header.get("langs", "").split(",") if x]
    return bpe, Vocabulary.build(bpe, langs)


def _load_model(path):
    from .checkpoint import load_model

    model, header = load_model(path)
    bpe, vocab = _load_text_setup(header)
    if len(vocab) != model.config.vocab_size:
        raise ValueError(f"vocabulary rebuilt from {header.get('bpe')} has {len(vocab)} entries, "
                         f"model expects {model.config.vocab_size}")
    return model, bpe, vocab, header


def _load_bank(path):
    from .checkpoint import load_bank

    return load_bank(path)[0] if path else None


def _read_corpora(specs):
    from .text import read_parallel

    return [read_parallel(prefix, src, tgt) for src, tgt, prefix in specs]


def _one_corpus(args, file_cfg, kind):
    specs = _corpus_specs(args, file_cfg, kind)
    if len(specs) != 1:
        raise UsageError(f"expected exactly one --{kind} PAIR=PREFIX, got {len(specs)}")
    return _read_corpora(specs)[0]


def _emit(args, lines):
    text = "\n".join(lines)
    print(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------- verbs

def cmd_bpe_learn(args, cfg):
    from .text import learn_bpe

    _require(args, "out")
    corpora = _read_corpora(_corpus_specs(args, cfg, "train"))
    if not corpora:
        raise UsageError("missing required flag --train")
    bpe = learn_bpe(corpora, args.vocab_size)
    bpe.save(args.out)
    print(f"{len(bpe.alphabet)} symbols, {len(bpe.merges)} merges -> {args.out}")


def _model_config(args, vocab_size):
    from .model import ModelConfig

    base = {"big": ModelConfig.big, "iwslt": ModelConfig.iwslt}.get(args.preset or "", ModelConfig)(vocab_size=vocab_size)
    kw = base.to_dict()
    kw.update({k: getattr(args, k) for k in MODEL_KEYS if getattr(args, k, None) is not None})
    kw["vocab_size"] = vocab_size
    return ModelConfig(**kw)


def _train_run(args, phase):
    from .training import TrainRun

    over = {k: getattr(args, k) for k in RUN_KEYS if getattr(args, k, None) is not None}
    log_path = f"{args.out}.log.tsv" if args.out else None
    run = TrainRun(phase=phase, seed=args.seed, log_path=log_path, **over)
    for k in RUN_KEYS:
        setattr(args, k, getattr(run, k))   # record resolved values in the manifest
    return run


def _last_loss(history):
    return f"final loss {history[-1]['loss']:.4f}" if history else "no updates"


def cmd_train_base(args, cfg):
    from .checkpoint import load_model, save_model
    from .text import BpeModel, Vocabulary
    from .training import train_base

    _require(args, "out", "bpe")
    corpora = _read_corpora(_corpus_specs(args, cfg, "train"))
    if not corpora:
        raise UsageError("missing required flag --train")
    dev = _read_corpora(_corpus_specs(args, cfg, "dev")) or None
    bpe = BpeModel.load(args.bpe)
    langs = sorted({c.tgt_lang for c in corpora})
    vocab = Vocabulary.build(bpe, langs)
    init = load_model(args.init)[0] if args.init else None
    config = init.config if init else _model_config(args, len(vocab))
    run = _train_run(args, "base")
    model, history = train_base(corpora, config, run, vocab, bpe, dev_corpora=dev, model=init)
    save_model(args.out, model, {"langs": ",".join(langs), "bpe": os.path.abspath(args.bpe), "steps": len(history)})
    print(f"trained {len(history)} steps, {_last_loss(history)} -> {args.out}")


def cmd_train_adapter(args, cfg):
    from .adapters import AdapterConfig
    from .checkpoint import save_bank
    from .training import train_adapter

    _require(args, "out", "model")
    model, bpe, vocab, header = _load_model(args.model)
    corpus = _one_corpus(args, cfg, "train")
    dev_specs = _corpus_specs(args, cfg, "dev")
    dev = _read_corpora(dev_specs)[0] if dev_specs else None
    acfg = AdapterConfig(args.mode, args.bottleneck or None, args.emb_bottleneck or None)
    run = _train_run(args, "adapter")
    bank, history = train_adapter(model, corpus, acfg, run, vocab, bpe, dev_corpus=dev)
    save_bank(args.out, bank, {"base": os.path.abspath(args.model)})
    print(f"{acfg.mode} bank {bank.key_str}: {bank.num_params()} params, {len(history)} steps, "
          f"{_last_loss(history)} -> {args.out}")


def cmd_translate(args, cfg):
    from .inference import translate
    from .text import read_lines, write_lines

    _require(args, "model", "input", "src", "tgt")
    model, bpe, vocab, _ = _load_model(args.model)
    bank = _load_bank(args.bank)
    sentences = read_lines(args.input)
    hyps = translate(model, sentences, args.src, args.tgt, vocab, bpe, bank=bank, beam=args.beam,
                     alpha=args.alpha, max_len=args.max_len or None, threads=args.threads)
    if not args.out:
        print("\n".join(hyps))
        return {"sentences": len(hyps)}
    write_lines(args.out, hyps)
    print(f"{len(hyps)} sentences -> {args.out}")
    return {"sentences": len(hyps)}


def cmd_bleu(args, cfg):
    from .evaluation import bleu
    from .text import read_lines

    _require(args, "hyp", "ref")
    report = bleu(read_lines(args.hyp), read_lines(args.ref), smooth=args.smooth, epsilon=args.epsilon)
    _emit(args, [str(report)])
    return {"score": report.score}


def cmd_acs(args, cfg):
    from .evaluation import acs, adapted_embedding
    from .text import load_dictionary

    _require(args, "model", "dict")
    model, bpe, vocab, _ = _load_model(args.model)
    table = adapted_embedding(model, _load_bank(args.bank), args.side)
    report = acs(table, load_dictionary(args.dict), vocab, bpe, args.top_k)
    _emit(args, [f"ACS = {report.mean:.6f} (retained={report.retained}, skipped={report.skipped})"])
    return {"acs": report.mean, "retained": report.retained, "skipped": report.skipped}


def cmd_norm_profile(args, cfg):
    from .evaluation import norm_ratio_profile, write_tsv

    _require(args, "model", "bank", "out")
    model, bpe, vocab, _ = _load_model(args.model)
    corpus = _one_corpus(args, cfg, "eval")
    profile = norm_ratio_profile(model, _load_bank(args.bank), corpus, vocab, bpe, args.max_tokens)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_tsv(args.out, profile.rows())
    for s, r in zip(profile.sites, profile.ratios):
        print(f"{s}\t{r:.6f}")


def cmd_ablate(args, cfg):
    from .evaluation import span_ablation

    _require(args, "model", "bank", "out")
    model, bpe, vocab, _ = _load_model(args.model)
    corpus = _one_corpus(args, cfg, "eval")
    grid = span_ablation(model, _load_bank(args.bank), corpus, vocab, bpe, args.side, args.beam, args.alpha)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(args.out)
    grid.to_csv(f"{args.out}.relative.csv", relative=True)
    print(f"full BLEU {grid.full:.2f}; {len(grid.scores)} spans -> {args.out}")


def cmd_params(args, cfg):
    from .adapters import AdapterConfig, count_params

    vocab_size = args.vocab_size or 32000
    mc = _model_config(args, vocab_size)
    ac = AdapterConfig(args.mode, args.bottleneck or None, args.emb_bottleneck or None)
    c = count_params(mc, ac)
    unit = "per language" if ac.mono else "per pair"
    lines = [
        f"base\t{c['base']}\t{c['base'] / 1e6:.1f}M",
        f"bank ({ac.mode}, {unit})\t{c['per_bank']}\t{c['per_bank'] / 1e6:.3f}M",
        f"  layer units x{c['n_units']}\t{c['units']}",
        f"  embedding adapters\t{c['embedding']}",
        *([f"  one side of a language bank\t{c['units'] // 2}"] if ac.mono else []),
        f"total with {args.banks} bank(s)\t{c['base'] + c['per_bank'] * args.banks}",
    ]
    _emit(args, lines)
    return c


COMMANDS = {
    "bpe-learn": cmd_bpe_learn, "train-base": cmd_train_base, "train-adapter": cmd_train_adapter,
    "translate": cmd_translate, "bleu": cmd_bleu, "acs": cmd_acs, "norm-profile": cmd_norm_profile,
    "ablate": cmd_ablate, "params": cmd_params,
}


# ---------------------------------------------------------------- manifest and dispatch

def _manifest_path(args):
    if args.out:
        return f"{args.out}.manifest.json"
    return f"mnmt-{args.verb}.manifest.json"


def _replay_argv(args, specs):
    """A flag list that reruns the command without any config file."""
    argv = [args.verb]
    for dest, value in sorted(vars(args).items()):
        if dest in ("verb", "config", "verbose") or dest in CORPUS_KEYS or value is None or value is False:
            continue
        flag = "--" + dest.replace("_", "-")
        argv += [flag] if value is True else [flag, str(value)]
    for kind, items in specs.items():
        for src, tgt, prefix in items:
            argv += [f"--{kind}", f"{src}-{tgt}={prefix}"]
    return argv


def write_manifest(args, specs, result=None):
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in CORPUS_KEYS}
    manifest = {
        "tool": "mnmt",
        "version": __version__,
        "verb": args.verb,
        "settings": settings,
        "corpora": {k: [f"{s}-{t}={p}" for s, t, p in v] for k, v in specs.items()},
        "argv": _replay_argv(args, specs),
        "numpy": np.__version__,
    }
    if result is not None:
        manifest["result"] = result
    path = _manifest_path(args)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return path


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_cfg = read_config(args.config) if args.config else {}
        _resolve(args, file_cfg, {**COMMON, **VERB_DEFAULTS[args.verb]})
        specs = {k: _corpus_specs(args, file_cfg, k) for k in CORPUS_KEYS if hasattr(args, k)}
    except UsageError as exc:
        print(f"mnmt {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mnmt {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.verb](args, file_cfg)
        write_manifest(args, specs, result)
    except UsageError as exc:
        print(f"mnmt {args.verb}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("failure", exc_info=True)
        print(f"mnmt {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
