"""Minimal reader for the line-delimited debate corpus format.

Only what encoding needs: the sentence strings in corpus order (debate order,
then sentence order within the debate). Text normalization mirrors the
documented corpus rules (URLs -> "website", digit runs -> "number",
lowercase, collapsed whitespace) so embeddings match the analysis pipeline;
it is idempotent, so pre-normalized corpora pass through unchanged.
"""

from __future__ import annotations

import json
import re
from pathlib import Path


class CorpusReadError(ValueError):
    pass


_URL_RE = re.compile(r"(?:https?://\S+|www\.\S+)", re.IGNORECASE)
_NUMBER_RE = re.compile(r"\d+(?:[.,]\d+)*")
_WS_RE = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    text = _URL_RE.sub("website", raw)
    text = _NUMBER_RE.sub("number", text)
    return _WS_RE.sub(" ", text.lower()).strip()


def corpus_sentences(path: str | Path, raw_text: bool = False) -> list[str]:
    """All sentence strings in corpus order, normalized unless `raw_text`."""
    sentences: list[str] = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusReadError(f"{path}:{i}: invalid JSON ({e.msg})") from None
        if "turns" not in rec:
            raise CorpusReadError(f"{path}:{i}: record has no 'turns' field")
        for turn in rec["turns"]:
            for sentence in turn.get("sentences", []):
                sentences.append(sentence if raw_text else normalize_text(sentence))
    return sentences
