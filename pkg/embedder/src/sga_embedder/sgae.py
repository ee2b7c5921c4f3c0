"""The binary embedding file format.

Layout (little-endian): magic "SGAE", u32 version=1, u32 dim, u64 count,
32 bytes of corpus sha256, u16 model-name length, the UTF-8 name, then
count*dim float32 vectors in corpus order. Order is the contract; there are
no per-row keys, so file byte length is exactly header + count*dim*4.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SGAE"
FORMAT_VERSION = 1
_HEADER_FIXED = struct.Struct("<4sIIQ32sH")


class EmbeddingFileError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingManifest:
    version: int
    dim: int
    count: int
    model_name: str
    corpus_digest: str

    def header_length(self) -> int:
        return _HEADER_FIXED.size + len(self.model_name.encode("utf-8"))


def corpus_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_embedding_file(
    path: str | Path, vectors: np.ndarray, corpus_digest_hex: str, model_name: str
) -> EmbeddingManifest:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[1] == 0:
        raise EmbeddingFileError(f"expected (count, dim) vectors with dim > 0, got {vectors.shape}")
    count, dim = vectors.shape
    name_bytes = model_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER_FIXED.pack(
                MAGIC, FORMAT_VERSION, dim, count, bytes.fromhex(corpus_digest_hex), len(name_bytes)
            )
        )
        fh.write(name_bytes)
        fh.write(vectors.tobytes())
    return EmbeddingManifest(FORMAT_VERSION, dim, count, model_name, corpus_digest_hex)


def read_manifest(path: str | Path) -> EmbeddingManifest:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_FIXED.size:
        raise EmbeddingFileError(f"{path}: truncated header")
    magic, version, dim, count, digest, name_len = _HEADER_FIXED.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
    name = raw[_HEADER_FIXED.size : _HEADER_FIXED.size + name_len].decode("utf-8")
    return EmbeddingManifest(version, dim, count, name, digest.hex())


def read_embedding_file(path: str | Path) -> tuple[EmbeddingManifest, np.ndarray]:
    manifest = read_manifest(path)
    raw = Path(path).read_bytes()
    offset = manifest.header_length()
    expected = offset + manifest.count * manifest.dim * 4
    if len(raw) != expected:
        raise EmbeddingFileError(
            f"{path}: expected {expected} bytes for {manifest.count} x {manifest.dim} vectors, "
            f"found {len(raw)}"
        )
    vectors = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(manifest.count, manifest.dim)
    return manifest, vectors.copy()


@dataclass
class VerifyReport:
    ok: bool
    problems: list[str]
    manifest: EmbeddingManifest | None = None

    def __str__(self) -> str:
        if self.ok:
            m = self.manifest
            return f"ok: {m.count} x {m.dim} vectors, model {m.model_name!r}"
        return "failed:\n" + "\n".join(f"  - {p}" for p in self.problems)


def verify_embedding_file(corpus_path: str | Path, emb_path: str | Path) -> VerifyReport:
    """Check count, dim, digest, byte-length arithmetic, and vector sanity."""
    problems: list[str] = []
    try:
        manifest = read_manifest(emb_path)
    except (EmbeddingFileError, OSError) as e:
        return VerifyReport(False, [str(e)])
    if manifest.version != FORMAT_VERSION:
        problems.append(f"unsupported version {manifest.version}")
    if manifest.dim <= 0:
        problems.append(f"non-positive dim {manifest.dim}")

    actual_len = Path(emb_path).stat().st_size
    expected_len = manifest.header_length() + manifest.count * manifest.dim * 4
    if actual_len != expected_len:
        problems.append(
            f"byte length {actual_len} does not match header + count*dim*4 = {expected_len}"
        )

    from .corpus_reader import corpus_sentences

    try:
        sentence_count = len(corpus_sentences(corpus_path))
    except Exception as e:
        problems.append(f"cannot read corpus: {e}")
        sentence_count = None
    if sentence_count is not None and manifest.count != sentence_count:
        problems.append(f"vector count {manifest.count} != corpus sentence count {sentence_count}")

    digest = corpus_digest(corpus_path)
    if digest != manifest.corpus_digest:
        problems.append(
            f"corpus digest {digest[:12]}... does not match manifest {manifest.corpus_digest[:12]}..."
        )

    if not problems:
        _, vectors = read_embedding_file(emb_path)
        sample = vectors[:: max(1, len(vectors) // 256)] if len(vectors) else vectors
        if not np.all(np.isfinite(sample)):
            problems.append("sampled vectors contain NaN or Inf")
    return VerifyReport(not problems, problems, manifest if not problems else None)
