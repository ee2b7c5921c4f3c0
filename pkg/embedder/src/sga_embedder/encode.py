"""Batch encoding of corpus sentences into an embedding file."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .corpus_reader import corpus_sentences
from .sgae import EmbeddingManifest, corpus_digest, read_manifest, write_embedding_file

DEFAULT_MODEL = "all-MiniLM-L6-v2"


class EncoderUnavailable(RuntimeError):
    pass


def _load_encoder(model_name: str):
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as e:
        raise EncoderUnavailable(
            "sentence-transformers is not installed; `pip install sentence-transformers` "
            "or pass a prebuilt encoder"
        ) from e
    try:
        return SentenceTransformer(model_name)
    except Exception as e:
        raise EncoderUnavailable(
            f"could not load model {model_name!r}: {e}. Download it once on a machine with "
            "network access (it is cached under ~/.cache) or point --model at a local path."
        ) from e


def embed_corpus(
    corpus_path: str | Path,
    out_path: str | Path,
    model_name: str = DEFAULT_MODEL,
    batch_size: int = 64,
    force: bool = False,
    raw_text: bool = False,
    encoder=None,
) -> EmbeddingManifest:
    """Encode every corpus sentence, in corpus order, into an embedding file.

    Vectors are the encoder's outputs, unmodified (no normalization here;
    similarity computations normalize at use time). The output appears
    atomically via a rename. Re-running against a changed corpus refuses to
    overwrite the stale file unless `force` is set.

    `encoder` may be any object with an `encode(list[str], batch_size=...)`
    method returning an array; by default the named sentence-transformer
    model is loaded.
    """
    corpus_path = Path(corpus_path)
    out_path = Path(out_path)
    sentences = corpus_sentences(corpus_path, raw_text=raw_text)
    if not sentences:
        raise ValueError(f"{corpus_path}: corpus has no sentences, nothing to encode")
    digest = corpus_digest(corpus_path)

    if out_path.exists() and not force:
        try:
            existing = read_manifest(out_path)
        except Exception:
            existing = None
        if existing is not None and existing.corpus_digest != digest:
            raise FileExistsError(
                f"{out_path} was built for a different corpus "
                f"(digest {existing.corpus_digest[:12]}... vs {digest[:12]}...); "
                "pass --force to replace it"
            )

    if encoder is None:
        encoder = _load_encoder(model_name)
    vectors = np.asarray(
        encoder.encode(
            sentences,
            batch_size=batch_size,
            convert_to_numpy=True,
            show_progress_bar=False,
        ),
        dtype=np.float32,
    )
    if vectors.shape[0] != len(sentences):
        raise RuntimeError(
            f"encoder returned {vectors.shape[0]} vectors for {len(sentences)} sentences"
        )

    tmp = out_path.with_name(out_path.name + ".partial")
    manifest = write_embedding_file(tmp, vectors, digest, model_name)
    os.replace(tmp, out_path)
    return manifest
