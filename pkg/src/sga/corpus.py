"""Debate corpus handling.

Loading/saving the line-delimited corpus format, text normalization and
sentence segmentation, vote/round/length filtering, last-rounds augmentation,
seeded train/val/test splits, synthetic planted-signal corpora, and per-side
edge statistics.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .graph import DebateGraph


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid corpus operations."""


class Side(str, enum.Enum):
    PROS = "pros"
    CONS = "cons"

    @property
    def opponent(self) -> "Side":
        return Side.CONS if self is Side.PROS else Side.PROS


def side_for_turn(turn_index: int) -> Side:
    """Turns alternate; the first speaker supports the claim."""
    return Side.PROS if turn_index % 2 == 0 else Side.CONS


@dataclass(frozen=True)
class Sentence:
    global_index: int
    turn_index: int
    position_in_turn: int
    raw_text: str
    normalized_text: str


@dataclass(frozen=True)
class Turn:
    turn_index: int
    side: Side
    sentences: tuple[Sentence, ...]

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class Debate:
    id: str
    topic: str
    turns: tuple[Turn, ...]
    winner: Side
    votes_pros: int
    votes_cons: int
    total_voters: int

    @property
    def num_rounds(self) -> int:
        """Complete rounds only; a trailing unanswered turn does not count."""
        return len(self.turns) // 2

    @property
    def num_sentences(self) -> int:
        return sum(len(t) for t in self.turns)

    @property
    def vote_margin(self) -> int:
        return abs(self.votes_pros - self.votes_cons)

    def sentences(self) -> list[Sentence]:
        return [s for t in self.turns for s in t.sentences]


# ---------------------------------------------------------------------------
# Text normalization and segmentation
# ---------------------------------------------------------------------------

_URL_RE = re.compile(r"(?:https?://\S+|www\.\S+)", re.IGNORECASE)
_NUMBER_RE = re.compile(r"\d+(?:[.,]\d+)*")
_WS_RE = re.compile(r"\s+")

# Words that keep a following period from ending a sentence.
_ABBREVIATIONS = frozenset(
    "dr mr mrs ms prof gen rep sen sr jr st vs etc inc ltd co corp dept "
    "fig al approx mt ps".split()
)
_TERMINAL_CHUNK_RE = re.compile(r"[^.!?]*[.!?]+(?:\s+|$)")
_FINAL_WORD_RE = re.compile(r"([a-z]+)[.!?]+$")


def normalize_text(raw: str) -> str:
    """Lowercase text with URLs and digit runs replaced by placeholder words.

    URLs (http/https schemes or www-prefixed hosts) become "website"; each
    maximal digit run, including decimals and comma-grouped numbers, becomes
    "number". Whitespace collapses to single spaces. Idempotent and total.
    """
    text = _URL_RE.sub("website", raw)
    text = _NUMBER_RE.sub("number", text)
    text = text.lower()
    return _WS_RE.sub(" ", text).strip()


def segment_sentences(normalized: str) -> list[str]:
    """Split normalized text on terminal punctuation (. ! ?).

    A period after a known abbreviation does not end a sentence. Text with no
    terminator is a single sentence. Corpora that arrive pre-segmented bypass
    this function entirely (the corpus format stores sentence lists).
    """
    if not normalized.strip():
        return []
    chunks: list[str] = []
    consumed = 0
    for m in _TERMINAL_CHUNK_RE.finditer(normalized):
        chunks.append(m.group(0).strip())
        consumed = m.end()
    tail = normalized[consumed:].strip()
    if tail:
        chunks.append(tail)

    sentences: list[str] = []
    carry = ""
    for chunk in chunks:
        carry = f"{carry} {chunk}".strip() if carry else chunk
        word = _FINAL_WORD_RE.search(carry)
        if word is not None and word.group(1) in _ABBREVIATIONS:
            continue
        sentences.append(carry)
        carry = ""
    if carry:
        sentences.append(carry)
    return sentences


# ---------------------------------------------------------------------------
# Debate construction
# ---------------------------------------------------------------------------

def make_debate(
    debate_id: str,
    topic: str,
    winner: Side,
    votes_pros: int,
    votes_cons: int,
    turn_texts: Sequence[Sequence[str]],
    total_voters: int | None = None,
) -> Debate:
    """Build a Debate from per-turn sentence lists, computing all indices.

    Turn sides are implied by position (even = Pros). Sentence normalization
    happens here, once.
    """
    turns: list[Turn] = []
    global_index = 0
    for t, texts in enumerate(turn_texts):
        sentences = []
        for j, raw in enumerate(texts):
            sentences.append(
                Sentence(
                    global_index=global_index,
                    turn_index=t,
                    position_in_turn=j,
                    raw_text=raw,
                    normalized_text=normalize_text(raw),
                )
            )
            global_index += 1
        turns.append(Turn(turn_index=t, side=side_for_turn(t), sentences=tuple(sentences)))
    if total_voters is None:
        total_voters = votes_pros + votes_cons
    return Debate(
        id=debate_id,
        topic=topic,
        turns=tuple(turns),
        winner=winner,
        votes_pros=votes_pros,
        votes_cons=votes_cons,
        total_voters=total_voters,
    )


def _rebuild(debate: Debate, turns_texts: list[list[str]], new_id: str | None = None) -> Debate:
    return make_debate(
        new_id or debate.id,
        debate.topic,
        debate.winner,
        debate.votes_pros,
        debate.votes_cons,
        turns_texts,
        total_voters=debate.total_voters,
    )


def _turn_raw_texts(debate: Debate, lo: int, hi: int) -> list[list[str]]:
    return [[s.raw_text for s in t.sentences] for t in debate.turns[lo:hi]]


# ---------------------------------------------------------------------------
# Filtering and augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterRules:
    min_voters: int = 5
    min_margin: int = 2
    min_rounds: int = 3
    min_sentences: int = 5

    @property
    def analysis_turns(self) -> int:
        return 2 * self.min_rounds


@dataclass
class FilterResult:
    debates: list[Debate]
    rejected_voters: int = 0
    rejected_margin: int = 0
    rejected_rounds: int = 0
    rejected_sentences: int = 0

    @property
    def rejected_total(self) -> int:
        return (
            self.rejected_voters
            + self.rejected_margin
            + self.rejected_rounds
            + self.rejected_sentences
        )

    def counts(self) -> dict[str, int]:
        return {
            "kept": len(self.debates),
            "rejected_voters": self.rejected_voters,
            "rejected_margin": self.rejected_margin,
            "rejected_rounds": self.rejected_rounds,
            "rejected_sentences": self.rejected_sentences,
        }


def filter_corpus(
    debates: Iterable[Debate],
    rules: FilterRules = FilterRules(),
    truncate: bool = True,
) -> FilterResult:
    """Apply the voter/margin/round/length rules, cheapest first.

    Keeps debates with enough voters, a winning margin of at least two votes
    (one-vote leads count as ties), at least `min_rounds` complete rounds, and
    at least `min_sentences` sentences in each analysis turn. With `truncate`,
    kept debates are cut to their first `min_rounds` rounds and reindexed.
    Inputs are never mutated; idempotent on its own output.
    """
    result = FilterResult(debates=[])
    span = rules.analysis_turns
    for d in debates:
        if d.total_voters < rules.min_voters:
            result.rejected_voters += 1
            continue
        if d.vote_margin < rules.min_margin:
            result.rejected_margin += 1
            continue
        if d.num_rounds < rules.min_rounds:
            result.rejected_rounds += 1
            continue
        if any(len(t) < rules.min_sentences for t in d.turns[:span]):
            result.rejected_sentences += 1
            continue
        if truncate and len(d.turns) > span:
            result.debates.append(_rebuild(d, _turn_raw_texts(d, 0, span)))
        else:
            result.debates.append(d)
    return result


def augment_corpus(
    debates: Sequence[Debate], rules: FilterRules = FilterRules()
) -> list[Debate]:
    """Rebalance by adding the final rounds of long debates the Pros side won.

    Each Pros-winning debate with more than `min_rounds` complete rounds
    contributes one extra debate built from its last `min_rounds` rounds
    (trailing incomplete turns dropped, turn indices rebased to start at 0,
    id suffixed "-aug"). Originals pass through unchanged.
    """
    out = list(debates)
    span = rules.analysis_turns
    for d in debates:
        if d.winner is not Side.PROS or d.num_rounds <= rules.min_rounds:
            continue
        complete = 2 * d.num_rounds
        out.append(_rebuild(d, _turn_raw_texts(d, complete - span, complete), d.id + "-aug"))
    return out


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def fold(self, name: str) -> tuple[str, ...]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise CorpusError(f"unknown fold {name!r}") from None


def _base_id(debate_id: str) -> str:
    return debate_id[:-4] if debate_id.endswith("-aug") else debate_id


def split_corpus(debates: Sequence[Debate], seed: int) -> CorpusSplit:
    """Seeded 60/20/20 split over debate ids.

    A debate and its "-aug" twin always land in the same fold so the test set
    never sees rounds of a training debate. Deterministic in (ids, seed).
    """
    if len(debates) < 5:
        raise CorpusError(f"need at least 5 debates to split, got {len(debates)}")
    groups: dict[str, list[str]] = {}
    for d in debates:
        groups.setdefault(_base_id(d.id), []).append(d.id)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(keys)

    n = len(debates)
    targets = [math.floor(0.6 * n + 0.5), math.floor(0.2 * n + 0.5), 0]
    targets[2] = n - targets[0] - targets[1]
    folds: list[list[str]] = [[], [], []]
    remaining = list(targets)
    for key in keys:
        ids = sorted(groups[key])
        dest = max(range(3), key=lambda i: (remaining[i], -i))
        folds[dest].extend(ids)
        remaining[dest] -= len(ids)
    return CorpusSplit(
        train=tuple(folds[0]), val=tuple(folds[1]), test=tuple(folds[2]), seed=seed
    )


# ---------------------------------------------------------------------------
# Synthetic planted-signal corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    debates: int = 200
    turns: int = 6
    sentences_per_turn: int = 5
    dim: int = 32
    signal: float = 1.0
    topic: str = "synthetic benchmark"


_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def _tag(i: int) -> str:
    """Digit-free index tag so synthetic text survives normalization intact."""
    out = _LETTERS[i % 26]
    while i >= 26:
        i //= 26
        out = _LETTERS[i % 26] + out
    return out


def _unit_noise(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def generate_synthetic(
    config: SynthConfig, seed: int
) -> tuple[list[Debate], np.ndarray]:
    """Generate debates whose winner is recoverable from graph structure.

    The planted winner's sentences blend a side-specific centroid with, from
    turn 1 on, a randomly chosen opponent sentence from the previous turn;
    the blend weight is the signal strength, so at signal 1 every winner
    sentence nearly copies an opponent sentence (guaranteeing a counter edge
    at the usual threshold) while at signal 0 both sides are isotropic noise.
    Losers are always isotropic noise. Returns the debates plus the embedding
    matrix in corpus order (one row per sentence).
    """
    s = config.signal
    if not 0.0 <= s <= 1.0:
        raise CorpusError(f"signal strength must be in [0, 1], got {s}")
    if config.turns % 2 != 0:
        raise CorpusError("synthetic debates need an even number of turns")
    rng = np.random.default_rng(seed)
    debates: list[Debate] = []
    all_vectors: list[np.ndarray] = []
    m = config.sentences_per_turn
    for i in range(config.debates):
        winner = Side.PROS if i % 2 == 0 else Side.CONS
        centroid = _unit_noise(rng, config.dim)
        turn_vectors: list[np.ndarray] = []
        turn_texts: list[list[str]] = []
        for t in range(config.turns):
            side = side_for_turn(t)
            rows = np.empty((m, config.dim), dtype=np.float64)
            for j in range(m):
                noise = _unit_noise(rng, config.dim)
                if side is not winner:
                    rows[j] = noise
                    continue
                if t == 0:
                    anchor = centroid
                else:
                    base = turn_vectors[t - 1][rng.integers(m)]
                    anchor = 0.8 * base + 0.2 * centroid
                v = s * anchor + (1.0 - s) * noise
                norm = np.linalg.norm(v)
                rows[j] = v / norm if norm > 1e-9 else noise
            turn_vectors.append(rows)
            turn_texts.append(
                [f"{side.value} point {_tag(t)} {_tag(j)} of case {_tag(i)}" for j in range(m)]
            )
        votes = (7, 2) if winner is Side.PROS else (2, 7)
        debates.append(
            make_debate(
                f"synth-{i:04d}",
                config.topic,
                winner,
                votes_pros=votes[0],
                votes_cons=votes[1],
                turn_texts=turn_texts,
                total_voters=9,
            )
        )
        all_vectors.append(np.concatenate(turn_vectors, axis=0))
    vectors = np.concatenate(all_vectors, axis=0).astype(np.float32)
    return debates, vectors


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatsRow:
    sentences_per_turn: float
    counter_per_turn: float
    support_per_turn: float


@dataclass(frozen=True)
class StatsReport:
    winner: StatsRow
    loser: StatsRow
    debates: int
    graph_config: str

    def to_records(self) -> list[dict]:
        rows = []
        for label, row in (("winner", self.winner), ("loser", self.loser)):
            rows.append(
                {
                    "role": label,
                    "sentences_per_turn": row.sentences_per_turn,
                    "counter_per_turn": row.counter_per_turn,
                    "support_per_turn": row.support_per_turn,
                }
            )
        return rows

    def to_text(self) -> str:
        lines = [
            f"debates: {self.debates}   graph: {self.graph_config}",
            f"{'':8s} {'sentences':>10s} {'countering':>11s} {'supporting':>11s}",
        ]
        for label, row in (("winner", self.winner), ("loser", self.loser)):
            lines.append(
                f"{label:8s} {row.sentences_per_turn:10.2f} "
                f"{row.counter_per_turn:11.2f} {row.support_per_turn:11.2f}"
            )
        return "\n".join(lines)


def compute_stats(
    debates: Sequence[Debate], graphs: Sequence["DebateGraph"]
) -> StatsReport:
    """Per-turn sentence and cross-edge counts, split by winner/loser side.

    A cross edge is attributed to the side that made it: the speaker of the
    edge's target turn. Means are per side per turn, averaged over debates.
    """
    if not debates:
        raise CorpusError("cannot compute statistics for an empty corpus")
    if len(debates) != len(graphs):
        raise CorpusError("debates and graphs must pair up one-to-one")
    totals = {role: np.zeros(3) for role in ("winner", "loser")}
    turn_counts = {"winner": 0, "loser": 0}
    for d, g in zip(debates, graphs):
        dst_side_counter = g.side[g.edges_counter[:, 1]] if len(g.edges_counter) else np.empty(0)
        dst_side_support = g.side[g.edges_support[:, 1]] if len(g.edges_support) else np.empty(0)
        for side in (Side.PROS, Side.CONS):
            role = "winner" if side is d.winner else "loser"
            code = 0 if side is Side.PROS else 1
            sentences = sum(len(t) for t in d.turns if t.side is side)
            counters = int(np.sum(dst_side_counter == code))
            supports = int(np.sum(dst_side_support == code))
            totals[role] += (sentences, counters, supports)
            turn_counts[role] += sum(1 for t in d.turns if t.side is side)
    rows = {}
    for role in ("winner", "loser"):
        per_turn = totals[role] / max(turn_counts[role], 1)
        rows[role] = StatsRow(*per_turn.tolist())
    cfg = graphs[0].config_used.describe() if graphs else "n/a"
    return StatsReport(winner=rows["winner"], loser=rows["loser"], debates=len(debates), graph_config=cfg)


# ---------------------------------------------------------------------------
# Corpus file I/O
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("id", "topic", "winner", "votes_pros", "votes_cons", "turns")


def _debate_to_record(debate: Debate) -> dict:
    return {
        "id": debate.id,
        "topic": debate.topic,
        "winner": debate.winner.value,
        "votes_pros": debate.votes_pros,
        "votes_cons": debate.votes_cons,
        "total_voters": debate.total_voters,
        "turns": [
            {"side": t.side.value, "sentences": [s.raw_text for s in t.sentences]}
            for t in debate.turns
        ],
    }


def _debate_from_record(rec: dict, where: str) -> Debate:
    for f in _REQUIRED_FIELDS:
        if f not in rec:
            raise CorpusError(f"{where}: missing field {f!r}")
    winner_raw = rec["winner"]
    try:
        winner = Side(winner_raw)
    except ValueError:
        raise CorpusError(f"{where}: unknown winner value {winner_raw!r}") from None
    turn_texts = []
    for t, turn in enumerate(rec["turns"]):
        if "side" not in turn or "sentences" not in turn:
            raise CorpusError(f"{where}: turn {t} missing side/sentences")
        try:
            side = Side(turn["side"])
        except ValueError:
            raise CorpusError(f"{where}: turn {t} has unknown side {turn['side']!r}") from None
        if side is not side_for_turn(t):
            raise CorpusError(
                f"{where}: turn {t} is {side.value} but turns must alternate starting with pros"
            )
        turn_texts.append(list(turn["sentences"]))
    return make_debate(
        str(rec["id"]),
        str(rec["topic"]),
        winner,
        int(rec["votes_pros"]),
        int(rec["votes_cons"]),
        turn_texts,
        total_voters=int(rec.get("total_voters", int(rec["votes_pros"]) + int(rec["votes_cons"]))),
    )


def save_corpus(path: str | Path, debates: Iterable[Debate]) -> None:
    """Write one JSON record per line, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for d in debates:
            fh.write(json.dumps(_debate_to_record(d)))
            fh.write("\n")


def load_corpus(path: str | Path) -> list[Debate]:
    """Load a corpus file: native line-delimited records or a debate.org export.

    Detection is structural: native records carry a "turns" field; the export
    is a single JSON document whose debates carry "rounds" and vote maps.
    """
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith(("{", "[")):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            doc = None
        if isinstance(doc, dict) and "turns" not in doc:
            return _load_debateorg(doc)
        if isinstance(doc, list):
            return _load_debateorg({str(i): rec for i, rec in enumerate(doc)})
    debates = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"line {i}: invalid JSON ({e.msg})") from None
        debates.append(_debate_from_record(rec, f"line {i}"))
    return debates


_CONVINCING = "Made more convincing arguments"


def _load_debateorg(doc: dict) -> list[Debate]:
    """Map the debate.org export schema onto Debate records.

    Debates keyed by name, each with "rounds" (lists of {side, text}) and
    "votes" whose vote maps assign the convincing-arguments criterion per
    participant. Ties and debates that do not start with the Pro side are
    skipped (they cannot carry a winner label / violate turn alternation).
    """
    debates = []
    for key in sorted(doc):
        rec = doc[key]
        if not isinstance(rec, dict) or "rounds" not in rec:
            raise CorpusError(f"debate {key!r}: missing field 'rounds'")
        p1 = rec.get("participant_1_name")
        pos1 = rec.get("participant_1_position")
        p2 = rec.get("participant_2_name")
        if pos1 == "Pro":
            pro_name, con_name = p1, p2
        else:
            pro_name, con_name = p2, p1
        votes_pros = votes_cons = 0
        votes = rec.get("votes", [])
        for vote in votes:
            vmap = vote.get("votes_map", {})
            pro_flag = bool(vmap.get(pro_name, {}).get(_CONVINCING, False))
            con_flag = bool(vmap.get(con_name, {}).get(_CONVINCING, False))
            votes_pros += pro_flag and not con_flag
            votes_cons += con_flag and not pro_flag
        if votes_pros == votes_cons:
            continue
        utterances = [u for rnd in rec["rounds"] for u in rnd]
        if not utterances or utterances[0].get("side") != "Pro":
            continue
        turn_texts = []
        ok = True
        for t, u in enumerate(utterances):
            expected = "Pro" if t % 2 == 0 else "Con"
            if u.get("side") != expected:
                ok = False
                break
            turn_texts.append(segment_sentences(normalize_text(u.get("text", ""))))
        if not ok:
            continue
        debates.append(
            make_debate(
                str(key),
                str(rec.get("title", key)),
                Side.PROS if votes_pros > votes_cons else Side.CONS,
                votes_pros,
                votes_cons,
                turn_texts,
                total_voters=len(votes),
            )
        )
    return debates
