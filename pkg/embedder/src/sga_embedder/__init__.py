"""Batch-encode debate corpora into binary embedding files."""

from .corpus_reader import corpus_sentences, normalize_text
from .encode import EncoderUnavailable, embed_corpus
from .sgae import EmbeddingManifest, read_embedding_file, verify_embedding_file, write_embedding_file

__version__ = "0.1.0"
