"""Sentence-embedding files and the deterministic hash-embedder fallback.

The binary format carries a digest of the corpus file it was built from so a
stale embedding file cannot silently pair with an edited corpus.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Debate

MAGIC = b"SGAE"
FORMAT_VERSION = 1
_HEADER_FIXED = struct.Struct("<4sIIQ32sH")


class EmbeddingFileError(ValueError):
    """Raised for malformed or mismatched embedding files."""


@dataclass(frozen=True)
class EmbeddingManifest:
    version: int
    dim: int
    count: int
    model_name: str
    corpus_digest: str  # hex sha256 of the corpus file bytes


def corpus_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_embedding_file(
    path: str | Path,
    vectors: np.ndarray,
    corpus_digest_hex: str,
    model_name: str,
) -> EmbeddingManifest:
    """Write vectors as little-endian f32 rows after a fixed header.

    Rows must be in corpus order (debate order, then sentence global index);
    the order is the contract, there are no per-row keys.
    """
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise EmbeddingFileError(f"expected a 2-d vector matrix, got shape {vectors.shape}")
    count, dim = vectors.shape
    name_bytes = model_name.encode("utf-8")
    header = _HEADER_FIXED.pack(
        MAGIC, FORMAT_VERSION, dim, count, bytes.fromhex(corpus_digest_hex), len(name_bytes)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name_bytes)
        fh.write(vectors.tobytes())
    return EmbeddingManifest(FORMAT_VERSION, dim, count, model_name, corpus_digest_hex)


def read_embedding_file(path: str | Path) -> tuple[EmbeddingManifest, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_FIXED.size:
        raise EmbeddingFileError(f"{path}: truncated header")
    magic, version, dim, count, digest, name_len = _HEADER_FIXED.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise EmbeddingFileError(f"{path}: unsupported version {version}")
    offset = _HEADER_FIXED.size
    model_name = raw[offset : offset + name_len].decode("utf-8")
    offset += name_len
    expected = offset + count * dim * 4
    if len(raw) != expected:
        raise EmbeddingFileError(
            f"{path}: payload length mismatch (expected {expected} bytes, found {len(raw)})"
        )
    vectors = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(count, dim)
    manifest = EmbeddingManifest(version, dim, count, model_name, digest.hex())
    return manifest, vectors.copy()


def hash_embed(texts: Sequence[str], dim: int = 384) -> np.ndarray:
    """Deterministic stand-in encoder: a seeded unit vector per distinct text.

    Identical sentences map to identical vectors, so similarity-based edge
    construction behaves sensibly without any model download.
    """
    out = np.empty((len(texts), dim), dtype=np.float32)
    for i, text in enumerate(texts):
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        v = np.random.default_rng(seed).standard_normal(dim)
        out[i] = v / np.linalg.norm(v)
    return out


class EmbeddingStore:
    """Per-debate views into one corpus-ordered vector matrix."""

    def __init__(self, debates: Sequence[Debate], vectors: np.ndarray, model_name: str = ""):
        total = sum(d.num_sentences for d in debates)
        if total != len(vectors):
            raise EmbeddingFileError(
                f"corpus has {total} sentences but embedding file has {len(vectors)} vectors"
            )
        self.dim = int(vectors.shape[1])
        self.model_name = model_name
        self._slices: dict[str, np.ndarray] = {}
        start = 0
        for d in debates:
            end = start + d.num_sentences
            self._slices[d.id] = vectors[start:end]
            start = end

    def for_debate(self, debate_id: str) -> np.ndarray:
        try:
            return self._slices[debate_id]
        except KeyError:
            raise EmbeddingFileError(f"no embeddings stored for debate {debate_id!r}") from None


def load_store(
    debates: Sequence[Debate],
    embedding_path: str | Path | None,
    corpus_path: str | Path | None = None,
    hash_dim: int = 384,
    verify_digest: bool = True,
) -> EmbeddingStore:
    """Open an embedding file for a corpus, or fall back to the hash embedder."""
    if embedding_path is None:
        texts = [s.normalized_text for d in debates for s in d.sentences()]
        return EmbeddingStore(debates, hash_embed(texts, hash_dim), model_name="hash")
    manifest, vectors = read_embedding_file(embedding_path)
    if verify_digest and corpus_path is not None:
        actual = corpus_digest(corpus_path)
        if actual != manifest.corpus_digest:
            raise EmbeddingFileError(
                f"{embedding_path}: built for corpus digest {manifest.corpus_digest[:12]}..., "
                f"but {corpus_path} has digest {actual[:12]}..."
            )
    return EmbeddingStore(debates, vectors, model_name=manifest.model_name)
