"""Four-lane input encoding: anchor-level, neighbor-level, batching, concat."""

import math

import pytest
import torch

from georeason.linearizer import NormalizedCoord, PseudoSentence
from georeason.model.encoding import (
    DSEP,
    TruncationError,
    collate,
    encode_anchor,
    encode_neighbor,
    encode_plain_text,
    is_dsep,
)
from georeason.model.vocab import CLS_ID, SEP_ID, build_vocab
from georeason.pretrain import concat_pair
from georeason.summarizer import LocationDescription


@pytest.fixture
def vocab():
    return build_vocab(
        ["tech museum is here plaza chavez art gallery one two three four five six"],
        max_size=50,
    )


def desc_fixture(text="Tech Museum is here", anchor="Tech Museum"):
    idx = text.lower().find(anchor.lower())
    return LocationDescription(anchor_id="e1", text=text, anchor_span=(idx, idx + len(anchor)))


def pseudo_fixture(n_neighbors=2):
    names = ["Plaza Chavez", "Art Gallery"][:n_neighbors]
    return PseudoSentence(
        anchor_id="e1",
        anchor_name="Tech Museum",
        neighbor_names=names,
        neighbor_coords=[NormalizedCoord(0.3, -0.1), NormalizedCoord(0.5, 0.2)][:n_neighbors],
        distances_km=[0.3, 0.5][:n_neighbors],
    )


class TestEncodeAnchor:
    def test_entity_span_after_cls(self, vocab):
        enc = encode_anchor(desc_fixture(), vocab, max_seq_len=16)
        assert enc.entity_span == (1, 3)
        assert enc.token_ids[0] == CLS_ID
        assert enc.token_ids[-1] == SEP_ID
        assert enc.token_ids[1] == vocab.id("tech")
        assert enc.token_ids[2] == vocab.id("museum")

    def test_lane_rules(self, vocab):
        enc = encode_anchor(desc_fixture(), vocab, max_seq_len=16)
        assert all(s == 0 for s in enc.segment_ids)
        assert all(is_dsep(x) for x in enc.x_coords)
        assert all(is_dsep(y) for y in enc.y_coords)
        assert enc.position_ids == list(range(len(enc)))
        assert all(m == 1 for m in enc.attention_mask)

    def test_truncation_to_max_len(self, vocab):
        text = "Tech Museum " + " ".join(["one two three four five six"] * 10)
        enc = encode_anchor(desc_fixture(text=text), vocab, max_seq_len=12)
        assert len(enc) == 12
        assert enc.entity_span == (1, 3)

    def test_anchor_truncated_away_is_error(self, vocab):
        text = " ".join(["one two three four five six"] * 10) + " Tech Museum"
        with pytest.raises(TruncationError):
            encode_anchor(desc_fixture(text=text), vocab, max_seq_len=12)


class TestEncodeNeighbor:
    def test_anchor_only(self, vocab):
        enc = encode_neighbor(pseudo_fixture(0), vocab, max_seq_len=16)
        assert len(enc) == 4  # [CLS] tech museum [SEP]
        assert all(s == 1 for s in enc.segment_ids)
        assert enc.entity_span == (1, 3)

    def test_coord_lanes_constant_per_name(self, vocab):
        enc = encode_neighbor(pseudo_fixture(), vocab, max_seq_len=32)
        # layout: [CLS] tech museum plaza chavez art gallery [SEP]
        assert is_dsep(enc.x_coords[0]) and is_dsep(enc.x_coords[-1])
        assert enc.x_coords[1] == enc.x_coords[2] == 0.0  # anchor at origin
        assert enc.y_coords[1] == enc.y_coords[2] == 0.0
        assert enc.x_coords[3] == enc.x_coords[4] == 0.3
        assert enc.y_coords[3] == enc.y_coords[4] == -0.1
        assert enc.x_coords[5] == enc.x_coords[6] == 0.5
        assert enc.y_coords[5] == enc.y_coords[6] == 0.2

    def test_position_ids_restart_at_zero(self, vocab):
        enc = encode_neighbor(pseudo_fixture(), vocab, max_seq_len=32)
        assert enc.position_ids[0] == 0
        assert enc.position_ids == list(range(len(enc)))

    def test_whole_neighbors_dropped_when_overlong(self, vocab):
        enc = encode_neighbor(pseudo_fixture(), vocab, max_seq_len=7)
        # budget 5 content tokens: anchor (2) + first neighbor (2) fit; second dropped whole
        assert len(enc) == 6
        assert enc.x_coords[3] == 0.3
        assert enc.x_coords[4] == 0.3
        assert enc.token_ids[-1] == SEP_ID

    def test_anchor_must_fit(self, vocab):
        with pytest.raises(TruncationError):
            encode_neighbor(pseudo_fixture(), vocab, max_seq_len=3)


class TestCollate:
    def test_padding_lanes(self, vocab):
        a = encode_plain_text("one two three", vocab, 16)
        b = encode_plain_text("one", vocab, 16)
        batch = collate([a, b])
        assert batch.token_ids.shape == (2, 5)
        assert batch.attention_mask[1].tolist() == [True, True, True, False, False]
        assert batch.token_ids[1, 3].item() == 0  # [PAD]
        assert torch.isnan(batch.x_coords).all()  # plain text: everything DSEP

    def test_empty_batch_rejected(self, vocab):
        with pytest.raises(ValueError):
            collate([])

    def test_pad_to_too_short_rejected(self, vocab):
        a = encode_plain_text("one two three", vocab, 16)
        with pytest.raises(ValueError):
            collate([a], pad_to=3)


class TestConcatPair:
    def test_segments_and_length(self, vocab):
        loc = encode_anchor(desc_fixture(text="Tech Museum is here"), vocab, 16)   # 7 tokens
        geo = encode_neighbor(pseudo_fixture(0), vocab, 16)                        # 4 tokens
        joint = concat_pair(loc, geo, max_seq_len=32)
        assert len(joint) == len(loc) + len(geo) - 1  # one [CLS] dropped
        loc_len = len(loc)
        assert joint.segment_ids == [0] * loc_len + [1] * (len(geo) - 1)
        assert joint.token_ids[0] == CLS_ID
        assert joint.token_ids[loc_len - 1] == SEP_ID
        assert joint.token_ids[-1] == SEP_ID

    def test_five_plus_four_makes_eight(self, vocab):
        loc = encode_anchor(desc_fixture(text="Tech Museum is"), vocab, 16)  # CLS t m is SEP
        geo = encode_neighbor(pseudo_fixture(0), vocab, 16)                  # CLS t m SEP
        assert len(loc) == 5 and len(geo) == 4
        joint = concat_pair(loc, geo, max_seq_len=32)
        assert len(joint) == 8
        assert joint.segment_ids == [0, 0, 0, 0, 0, 1, 1, 1]

    def test_geo_coords_preserved_loc_all_dsep(self, vocab):
        loc = encode_anchor(desc_fixture(), vocab, 16)
        geo = encode_neighbor(pseudo_fixture(), vocab, 16)
        joint = concat_pair(loc, geo, max_seq_len=32)
        loc_len = len(loc)
        assert all(is_dsep(x) for x in joint.x_coords[:loc_len])
        assert joint.x_coords[loc_len : loc_len + len(geo) - 2] == geo.x_coords[1:-1]
        assert is_dsep(joint.x_coords[-1])

    def test_position_ids_restart_for_geo_portion(self, vocab):
        loc = encode_anchor(desc_fixture(), vocab, 16)
        geo = encode_neighbor(pseudo_fixture(), vocab, 16)
        joint = concat_pair(loc, geo, max_seq_len=32)
        loc_len = len(loc)
        assert joint.position_ids[:loc_len] == list(range(loc_len))
        assert joint.position_ids[loc_len:] == list(range(len(joint) - loc_len))

    def test_truncation_keeps_both_spans(self, vocab):
        text = "Tech Museum " + " ".join(["one two three four"] * 6)
        loc = encode_anchor(desc_fixture(text=text), vocab, 64)
        geo = encode_neighbor(pseudo_fixture(), vocab, 64)
        joint = concat_pair(loc, geo, max_seq_len=16)
        assert len(joint) <= 16
        s, e = joint.entity_span
        assert joint.token_ids[s:e] == [vocab.id("tech"), vocab.id("museum")]
        joint.check()

    def test_impossible_truncation_raises(self, vocab):
        # spans fill nearly everything: nothing can be dropped
        loc = encode_anchor(desc_fixture(text="Tech Museum"), vocab, 16)
        geo = encode_neighbor(pseudo_fixture(0), vocab, 16)
        with pytest.raises(TruncationError):
            concat_pair(loc, geo, max_seq_len=5)


def test_dsep_constant_is_nan():
    assert math.isnan(DSEP)
    assert is_dsep(DSEP)
    assert not is_dsep(0.0)
