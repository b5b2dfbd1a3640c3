"""Word-level vocabulary with fixed reserved token ids."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
RESERVED = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = 0, 1, 2, 3, 4

# A token is a run of word characters or a single non-space symbol.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace+punctuation tokens."""
    return [m.group(0).lower() for m in _TOKEN_RE.finditer(text)]


def tokenize_with_offsets(text: str) -> list[tuple[str, int, int]]:
    """Tokens with their [start, end) character offsets in `text`."""
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


@dataclass
class Vocab:
    """token -> id map; ids 0..4 are the reserved [PAD]/[CLS]/[SEP]/[MASK]/[UNK]."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.token_to_id:
            for i, tok in enumerate(RESERVED):
                self.token_to_id[tok] = i
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        for i, tok in enumerate(RESERVED):
            if self.token_to_id.get(tok) != i:
                raise ValueError(f"reserved token {tok} must have id {i}")
        if len(self.id_to_token) != len(self.token_to_id):
            raise ValueError("token ids must be unique")

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def save(self, path) -> None:
        from ..ioutil import atomic_write_text

        lines = [
            json.dumps({"token": tok, "id": i}, ensure_ascii=False)
            for tok, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        ]
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        mapping: dict[str, int] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    mapping[rec["token"]] = int(rec["id"])
        return cls(token_to_id=mapping)


def build_vocab(texts: Iterable[str], max_size: int = 10000) -> Vocab:
    """Frequency-ranked word vocabulary over `texts`, truncated to max_size.

    Ties in frequency break lexicographically. Reserved tokens always occupy
    ids 0..4, so at most max_size - 5 corpus tokens are kept.
    """
    if max_size <= len(RESERVED):
        raise ValueError(f"max_size must exceed {len(RESERVED)}")
    counts: Counter[str] = Counter()
    saw_text = False
    for text in texts:
        saw_text = True
        counts.update(tokenize(text))
    if not saw_text:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    mapping = {tok: i for i, tok in enumerate(RESERVED)}
    for tok, _ in ranked[: max_size - len(RESERVED)]:
        mapping[tok] = len(mapping)
    return Vocab(token_to_id=mapping)
