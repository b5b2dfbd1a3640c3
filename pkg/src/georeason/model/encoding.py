"""Encoding of anchor-level and neighbor-level inputs into parallel id lanes.

Every model input carries five aligned lanes: token ids, position ids
(restarting at 0 per input), segment ids (0 = anchor-level text, 1 =
neighbor-level pseudo-sentence), and X/Y coordinate lanes. Tokens without
geocoordinates (all anchor-level tokens, plus [CLS]/[SEP] everywhere) carry
the DSEP filler in the coordinate lanes; tokens inside one entity name all
share that entity's coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..linearizer import PseudoSentence
from ..summarizer import LocationDescription
from .vocab import CLS_ID, PAD_ID, SEP_ID, Vocab, tokenize, tokenize_with_offsets

# Coordinate-lane filler for tokens that have no geocoordinates. NaN is safe
# as a sentinel because real coordinates are finite by construction.
DSEP = float("nan")


def is_dsep(value: float) -> bool:
    return math.isnan(value)


class TruncationError(ValueError):
    """Truncating to max_seq_len would cut through an entity name span."""


@dataclass
class EncodedInput:
    """Aligned input lanes for one sequence."""

    token_ids: list[int]
    position_ids: list[int]
    segment_ids: list[int]
    x_coords: list[float]
    y_coords: list[float]
    attention_mask: list[int]
    entity_span: tuple[int, int] | None = None

    def __len__(self) -> int:
        return len(self.token_ids)

    def check(self) -> None:
        n = len(self.token_ids)
        for name in ("position_ids", "segment_ids", "x_coords", "y_coords", "attention_mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"lane {name} has wrong length")
        if any(m not in (0, 1) for m in self.attention_mask):
            raise ValueError("attention_mask entries must be 0 or 1")
        if any(s not in (0, 1) for s in self.segment_ids):
            raise ValueError("segment_ids entries must be 0 or 1")
        if self.entity_span is not None:
            s, e = self.entity_span
            if not 0 <= s < e <= n:
                raise ValueError(f"entity_span ({s}, {e}) out of range")


def _frame(word_ids: list[int]) -> list[int]:
    return [CLS_ID] + word_ids + [SEP_ID]


def encode_anchor(
    desc: LocationDescription, vocab: Vocab, max_seq_len: int = 128
) -> EncodedInput:
    """Encode a location description as anchor-level input.

    Layout is [CLS] words [SEP] with segment 0 and DSEP coordinate lanes.
    Raises TruncationError when truncation to max_seq_len would drop any
    token of the anchor name.
    """
    toks = tokenize_with_offsets(desc.text)
    a_start, a_end = desc.anchor_span
    hit = [i for i, (_, s, e) in enumerate(toks) if s < a_end and e > a_start]
    if not hit:
        raise ValueError(f"{desc.anchor_id}: anchor span covers no tokens")
    keep = max_seq_len - 2
    if hit[-1] >= keep:
        raise TruncationError(
            f"{desc.anchor_id}: anchor name does not fit in max_seq_len={max_seq_len}"
        )
    words = [t for t, _, _ in toks[:keep]]
    token_ids = _frame(vocab.encode(words))
    n = len(token_ids)
    enc = EncodedInput(
        token_ids=token_ids,
        position_ids=list(range(n)),
        segment_ids=[0] * n,
        x_coords=[DSEP] * n,
        y_coords=[DSEP] * n,
        attention_mask=[1] * n,
        entity_span=(1 + hit[0], 1 + hit[-1] + 1),
    )
    enc.check()
    return enc


def encode_plain_text(text: str, vocab: Vocab, max_seq_len: int = 128) -> EncodedInput:
    """Anchor-level encoding of raw text with no entity span (tagging input)."""
    words = tokenize(text)[: max_seq_len - 2]
    token_ids = _frame(vocab.encode(words))
    n = len(token_ids)
    return EncodedInput(
        token_ids=token_ids,
        position_ids=list(range(n)),
        segment_ids=[0] * n,
        x_coords=[DSEP] * n,
        y_coords=[DSEP] * n,
        attention_mask=[1] * n,
        entity_span=None,
    )


def encode_neighbor(
    pseudo: PseudoSentence, vocab: Vocab, max_seq_len: int = 128
) -> EncodedInput:
    """Encode a pseudo-sentence as neighbor-level input.

    Layout is [CLS] anchor-name words, then each neighbor's name words in
    distance order, then [SEP]; segment 1 throughout. All tokens of one
    name share that entity's (x, y); the anchor's own tokens carry (0, 0)
    and the frame tokens carry DSEP. Trailing neighbors that do not fit
    whole are dropped.
    """
    anchor_words = tokenize(pseudo.anchor_name)
    budget = max_seq_len - 2
    if len(anchor_words) > budget:
        raise TruncationError(
            f"{pseudo.anchor_id}: anchor name does not fit in max_seq_len={max_seq_len}"
        )
    words = list(anchor_words)
    xs = [0.0] * len(anchor_words)
    ys = [0.0] * len(anchor_words)
    for name, coord in zip(pseudo.neighbor_names, pseudo.neighbor_coords):
        nw = tokenize(name)
        if len(words) + len(nw) > budget:
            break
        words.extend(nw)
        xs.extend([coord.x] * len(nw))
        ys.extend([coord.y] * len(nw))
    token_ids = _frame(vocab.encode(words))
    n = len(token_ids)
    enc = EncodedInput(
        token_ids=token_ids,
        position_ids=list(range(n)),
        segment_ids=[1] * n,
        x_coords=[DSEP] + xs + [DSEP],
        y_coords=[DSEP] + ys + [DSEP],
        attention_mask=[1] * n,
        entity_span=(1, 1 + len(anchor_words)),
    )
    enc.check()
    return enc


@dataclass
class Batch:
    """Padded tensor view of a list of EncodedInputs."""

    token_ids: torch.Tensor       # [B, L] long
    position_ids: torch.Tensor    # [B, L] long
    segment_ids: torch.Tensor     # [B, L] long
    x_coords: torch.Tensor        # [B, L] float (NaN where DSEP)
    y_coords: torch.Tensor        # [B, L] float
    attention_mask: torch.Tensor  # [B, L] bool
    entity_spans: list[tuple[int, int] | None] = field(default_factory=list)

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def collate(
    inputs: list[EncodedInput],
    pad_to: int | None = None,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    """Right-pad inputs to a common length and stack into tensors.

    Padding positions use [PAD] with attention mask 0, position and segment
    0, and DSEP coordinates.
    """
    if not inputs:
        raise ValueError("cannot collate an empty batch")
    length = pad_to if pad_to is not None else max(len(e) for e in inputs)
    if any(len(e) > length for e in inputs):
        raise ValueError("an input is longer than the padded length")

    def lane(values, pad_value):
        return [list(values) + [pad_value] * (length - len(values))]

    tok, pos, seg, xs, ys, mask = [], [], [], [], [], []
    for e in inputs:
        tok += lane(e.token_ids, PAD_ID)
        pos += lane(e.position_ids, 0)
        seg += lane(e.segment_ids, 0)
        xs += lane(e.x_coords, DSEP)
        ys += lane(e.y_coords, DSEP)
        mask += lane(e.attention_mask, 0)
    return Batch(
        token_ids=torch.tensor(tok, dtype=torch.long),
        position_ids=torch.tensor(pos, dtype=torch.long),
        segment_ids=torch.tensor(seg, dtype=torch.long),
        x_coords=torch.tensor(xs, dtype=dtype),
        y_coords=torch.tensor(ys, dtype=dtype),
        attention_mask=torch.tensor(mask, dtype=torch.bool),
        entity_spans=[e.entity_span for e in inputs],
    )
