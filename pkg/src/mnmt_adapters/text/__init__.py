from .batching import Batch, BatchStream, build_batches, encode_corpus, make_batch, pad
from .bpe import MARKER, BpeModel, learn_bpe, normalize
from .corpus import ParallelCorpus, load_dictionary, read_lines, read_parallel, write_lines, write_parallel
from .vocab import BOS, EOS, PAD, RESERVED, UNK, Vocabulary, decode, encode_source, encode_target, tag_token

__all__ = [
    "BOS", "EOS", "MARKER", "PAD", "RESERVED", "UNK",
    "Batch", "BatchStream", "BpeModel", "ParallelCorpus", "Vocabulary",
    "build_batches", "decode", "encode_corpus", "encode_source", "encode_target", "learn_bpe",
    "load_dictionary", "make_batch", "normalize", "pad", "read_lines", "read_parallel",
    "tag_token", "write_lines", "write_parallel",
]
