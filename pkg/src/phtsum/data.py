"""Tokenization, vocabulary, dataset I/O and the synthetic toy corpus.

The vocabulary is a character-level byte-pair vocabulary: merges are learned
greedily by pair frequency over whole lines (spaces are ordinary symbols),
so encode/decode round-trips any corpus string exactly. The comma is a
reserved token and never participates in merges, keeping the decoding-time
comma exemption well-defined.
"""

from __future__ import annotations

import json
import hashlib
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, BOS, EOS, UNK, COMMA = 0, 1, 2, 3, 4
RESERVED = ["<pad>", "<s>", "</s>", "<unk>", ","]


class Vocabulary:
    """Token <-> id bijection with reserved ids and learned BPE merges."""

    def __init__(self, tokens: list[str], merges: list[tuple[str, str]]):
        if tokens[: len(RESERVED)] != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.merges = [tuple(m) for m in merges]
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        self._merge_rank = {m: i for i, m in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def content_hash(self) -> str:
        payload = json.dumps({"tokens": self.tokens, "merges": self.merges})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    # -- coding --------------------------------------------------------------

    def _apply_merges(self, symbols: list[str]) -> list[str]:
        while len(symbols) > 1:
            best_rank, best_idx = None, None
            for i in range(len(symbols) - 1):
                rank = self._merge_rank.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_idx = rank, i
            if best_idx is None:
                break
            merged = symbols[best_idx] + symbols[best_idx + 1]
            symbols = symbols[:best_idx] + [merged] + symbols[best_idx + 2:]
        return symbols

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        # commas are reserved: split around them so merges never cross
        for chunk, is_comma in _split_commas(text):
            if is_comma:
                ids.append(COMMA)
                continue
            symbols = self._apply_merges(list(chunk))
            ids.extend(self.token_to_id.get(s, UNK) for s in symbols)
        return ids

    def decode(self, ids) -> str:
        return "".join(self.tokens[int(i)] for i in ids
                       if int(i) not in (PAD, BOS, EOS))

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"tokens": self.tokens, "merges": self.merges}, f)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path) as f:
            obj = json.load(f)
        return cls(obj["tokens"], [tuple(m) for m in obj["merges"]])


def _split_commas(text: str):
    chunk = []
    for ch in text:
        if ch == ",":
            if chunk:
                yield "".join(chunk), False
                chunk = []
            yield ",", True
        else:
            chunk.append(ch)
    if chunk:
        yield "".join(chunk), False


def build_vocab(corpus: list[str], target_size: int) -> Vocabulary:
    """Learn byte-pair merges greedily by pair frequency until `target_size`.

    Deterministic given corpus order: frequency ties break lexicographically.
    """
    if not corpus:
        raise ValueError("build_vocab requires a nonempty corpus")
    alphabet = sorted({ch for line in corpus for ch in line if ch != ","})
    base = len(RESERVED) + len(alphabet)
    if target_size < base:
        raise ValueError(
            f"target size {target_size} below alphabet + reserved ({base})")

    sequences: list[list[str]] = []
    for line in corpus:
        for chunk, is_comma in _split_commas(line):
            if not is_comma:
                sequences.append(list(chunk))

    tokens = RESERVED + alphabet
    merges: list[tuple[str, str]] = []
    while len(tokens) < target_size:
        counts: Counter = Counter()
        for seq in sequences:
            for i in range(len(seq) - 1):
                counts[(seq[i], seq[i + 1])] += 1
        if not counts:
            break
        best_count = max(counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in counts.items() if c == best_count)
        merges.append(best)
        merged = best[0] + best[1]
        tokens.append(merged)
        for seq in sequences:
            i = 0
            while i < len(seq) - 1:
                if seq[i] == best[0] and seq[i + 1] == best[1]:
                    seq[i: i + 2] = [merged]
                else:
                    i += 1
    return Vocabulary(tokens, merges)


# -- samples -------------------------------------------------------------------


@dataclass
class Sample:
    id: str
    title: list[int]
    paragraphs: list[list[int]] = field(default_factory=list)
    summary: list[int] = field(default_factory=list)

    def source_paragraphs(self, prepend_title: bool = True) -> list[list[int]]:
        """Ranked source paragraphs; the title joins as rank 0 when enabled."""
        if prepend_title and self.title:
            return [self.title] + self.paragraphs
        return list(self.paragraphs)


@dataclass
class LoadStats:
    samples: int = 0
    skipped: int = 0
    truncated_paragraph_lists: int = 0
    truncated_tokens: int = 0


def load_dataset(path, vocab: Vocabulary, max_paragraphs: int = 30,
                 max_paragraph_len: int = 100,
                 stats: LoadStats | None = None) -> list[Sample]:
    """Read line-delimited JSON records {id, title, paragraphs, summary}."""
    stats = stats if stats is not None else LoadStats()
    samples: list[Sample] = []
    try:
        f = open(path)
    except OSError as exc:
        raise RuntimeError(f"cannot read dataset {path}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                sid = str(rec["id"])
                title = vocab.encode(rec.get("title", ""))
                paragraphs = [vocab.encode(p) for p in rec["paragraphs"]]
                summary = vocab.encode(rec["summary"])
            except (KeyError, ValueError, TypeError):
                stats.skipped += 1
                warnings.warn(f"{path}:{lineno}: malformed record skipped",
                              RuntimeWarning, stacklevel=2)
                continue
            if len(paragraphs) > max_paragraphs:
                paragraphs = paragraphs[:max_paragraphs]
                stats.truncated_paragraph_lists += 1
            clipped = []
            for p in paragraphs:
                if len(p) > max_paragraph_len:
                    stats.truncated_tokens += len(p) - max_paragraph_len
                    p = p[:max_paragraph_len]
                clipped.append(p)
            samples.append(Sample(id=sid, title=title, paragraphs=clipped,
                                  summary=summary))
            stats.samples += 1
    return samples


def save_dataset(path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def save_generation_records(path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def load_generation_records(path) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


# -- toy corpus ------------------------------------------------------------------

_SUBJECTS = ["the river", "a comet", "the market", "an engine", "the forest",
             "a glacier", "the harbor", "an orchard", "the canyon", "a turbine"]
_VERBS = ["carries", "reaches", "shapes", "feeds", "crosses", "splits",
          "warms", "drains", "guards", "turns"]
_OBJECTS = ["its northern valley", "the old town", "three quiet villages",
            "a narrow delta", "the open plain", "every trade route",
            "the stone bridge", "its deepest basin", "the winter camp",
            "a chain of islands"]
_FILLERS = ["records from that season stay incomplete",
            "observers kept only partial notes",
            "maps of the region disagree on details",
            "travellers described the area in passing",
            "later surveys revised the early figures"]


def gen_toy_corpus(n_samples: int, seed: int = 0, n_paragraphs: int = 3,
                   n_salient: int = 2) -> list[dict]:
    """Synthetic samples whose summary copies sentences from salient paragraphs.

    Each paragraph holds one distinctive fact sentence plus filler; the
    summary concatenates the facts of `n_salient` randomly chosen paragraphs
    (comma-separated), so attention on those paragraphs is measurable.
    """
    if n_salient > n_paragraphs:
        raise ValueError("n_salient cannot exceed n_paragraphs")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_samples):
        facts = []
        paragraphs = []
        for _ in range(n_paragraphs):
            fact = (f"{_SUBJECTS[rng.integers(len(_SUBJECTS))]} "
                    f"{_VERBS[rng.integers(len(_VERBS))]} "
                    f"{_OBJECTS[rng.integers(len(_OBJECTS))]}")
            filler = _FILLERS[rng.integers(len(_FILLERS))]
            facts.append(fact)
            paragraphs.append(f"{fact} , {filler}")
        salient = sorted(rng.choice(n_paragraphs, size=n_salient, replace=False))
        summary = " , ".join(facts[j] for j in salient)
        records.append({
            "id": f"toy-{i:04d}",
            "title": f"report {i:04d}",
            "paragraphs": paragraphs,
            "summary": summary,
            "salient": [int(j) for j in salient],
        })
    return records


def toy_corpus_text(records: list[dict]) -> list[str]:
    """All text lines of a toy corpus, for vocabulary building."""
    lines = []
    for rec in records:
        lines.append(rec["title"])
        lines.extend(rec["paragraphs"])
        lines.append(rec["summary"])
    return lines
