from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .bpe import normalize


@dataclass
class ParallelCorpus:
    src_lang: str
    tgt_lang: str
    pairs: list

    def __post_init__(self):
        if not self.src_lang or not self.tgt_lang:
            raise ValueError("language codes must be nonempty")

    @property
    def key(self):
        return (self.src_lang, self.tgt_lang)

    def __len__(self):
        return len(self.pairs)

    @property
    def sources(self):
        return [s for s, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [normalize(line.rstrip("\n")) for line in fh]


def read_parallel(prefix, src_lang, tgt_lang) -> ParallelCorpus:
    """Read ``<prefix>.<src>`` / ``<prefix>.<tgt>`` (one sentence per line)."""
    src = _read_lines(f"{prefix}.{src_lang}")
    tgt = _read_lines(f"{prefix}.{tgt_lang}")
    if len(src) != len(tgt):
        raise ValueError(f"{prefix}: {len(src)} source lines vs {len(tgt)} target lines")
    return ParallelCorpus(src_lang, tgt_lang, list(zip(src, tgt)))


def write_parallel(corpus: ParallelCorpus, prefix):
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    for lang, side in ((corpus.src_lang, corpus.sources), (corpus.tgt_lang, corpus.targets)):
        with open(f"{prefix}.{lang}", "w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in side)


def read_lines(path):
    return _read_lines(path)


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in lines)


def load_dictionary(path):
    """MUSE-style dictionary: two whitespace-separated columns per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            out.append((parts[0], parts[1]))
    return out
