"""Contrastive loss, MLM masking, hard negatives, and the training step."""

import copy
import math

import numpy as np
import pytest
import torch

from georeason.geodata import Gazetteer, GeoEntity
from georeason.linearizer import EARTH_RADIUS_KM, NormalizedCoord, PseudoSentence
from georeason.model.encoder import EncoderConfig, GroundedEncoder
from georeason.model.encoding import encode_anchor, encode_neighbor, is_dsep
from georeason.model.vocab import CLS_ID, MASK_ID, PAD_ID, SEP_ID, build_vocab
from georeason.pretrain import (
    Ablations,
    ContrastiveConfig,
    IGNORE_INDEX,
    MlmConfig,
    MlmHead,
    PairBatch,
    TrainingPair,
    assemble_pair_batch,
    contrastive_loss,
    mine_hard_negative,
    mlm_mask,
    pretrain_step,
)
from georeason.summarizer import LocationDescription


# ---------------------------------------------------------------------------
# contrastive loss


def scalar_contrastive_oracle(h_loc, h_geo, temperature, mode):
    """Direct per-sample evaluation of the loss with plain Python loops."""

    def cos(u, v):
        nu = math.sqrt(sum(x * x for x in u))
        nv = math.sqrt(sum(x * x for x in v))
        return sum(a * b for a, b in zip(u, v)) / (nu * nv)

    n = len(h_loc)
    cands = list(h_geo) + list(h_loc)  # index i is the positive of sample i
    losses = []
    for i in range(n):
        numer = math.exp(cos(h_loc[i], h_geo[i]) / temperature)
        skip = i if mode == "paper_exact" else n + i
        denom = sum(
            math.exp(cos(h_loc[i], cands[j]) / temperature)
            for j in range(2 * n)
            if j != skip
        )
        losses.append(-math.log(numer / denom))
    return losses


class TestContrastiveLoss:
    @pytest.mark.parametrize("n", [2, 4, 8])
    @pytest.mark.parametrize("tau", [0.07, 1.0])
    def test_all_equal_gives_log_2n_minus_1(self, n, tau):
        h = torch.ones(n, 6, dtype=torch.float64)
        cfg = ContrastiveConfig(temperature=tau, candidate_mode="paper_exact")
        loss, per_sample = contrastive_loss(h, h.clone(), cfg)
        expected = math.log(2 * n - 1)
        assert abs(loss.item() - expected) < 1e-9
        assert torch.allclose(per_sample, torch.full((n,), expected, dtype=torch.float64),
                              atol=1e-9)

    @pytest.mark.parametrize("mode", ["paper_exact", "simclr"])
    def test_matches_scalar_oracle(self, mode):
        rng = np.random.default_rng(17)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            d = int(rng.integers(2, 9))
            h_loc = rng.normal(size=(n, d))
            h_geo = rng.normal(size=(n, d))
            cfg = ContrastiveConfig(temperature=float(rng.uniform(0.05, 2.0)),
                                    candidate_mode=mode)
            _, per_sample = contrastive_loss(
                torch.from_numpy(h_loc), torch.from_numpy(h_geo), cfg
            )
            oracle = scalar_contrastive_oracle(
                h_loc.tolist(), h_geo.tolist(), cfg.temperature, mode
            )
            np.testing.assert_allclose(per_sample.numpy(), oracle, atol=1e-9)

    def test_simclr_orthogonal_pairs_closed_form(self):
        # h_i^loc == h_i^geo, pairs orthogonal across samples, tau = 1:
        # denominator = e^1 (positive) + 2 e^0 (the other pair, both views)
        h = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        cfg = ContrastiveConfig(temperature=1.0, candidate_mode="simclr")
        _, per_sample = contrastive_loss(h, h.clone(), cfg)
        expected = -math.log(math.e / (math.e + 2.0))
        assert torch.allclose(per_sample,
                              torch.full((2,), expected, dtype=torch.float64), atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        h_loc = torch.from_numpy(rng.normal(size=(4, 8)))
        h_geo = torch.from_numpy(rng.normal(size=(4, 8)))
        cfg = ContrastiveConfig()
        a, _ = contrastive_loss(h_loc, h_geo, cfg)
        b, _ = contrastive_loss(5.0 * h_loc, 5.0 * h_geo, cfg)
        assert abs(a.item() - b.item()) < 1e-9

    def test_pair_permutation_invariance(self):
        rng = np.random.default_rng(4)
        h_loc = torch.from_numpy(rng.normal(size=(5, 8)))
        h_geo = torch.from_numpy(rng.normal(size=(5, 8)))
        cfg = ContrastiveConfig(candidate_mode="paper_exact")
        perm = torch.tensor([3, 0, 4, 1, 2])
        a, _ = contrastive_loss(h_loc, h_geo, cfg)
        b, _ = contrastive_loss(h_loc[perm], h_geo[perm], cfg)
        assert abs(a.item() - b.item()) < 1e-9

    def test_zero_norm_row_rejected(self):
        h = torch.ones(2, 4)
        bad = h.clone()
        bad[1] = 0.0
        with pytest.raises(ValueError, match="zero-norm"):
            contrastive_loss(h, bad, ContrastiveConfig())

    def test_needs_two_pairs(self):
        h = torch.ones(1, 4)
        with pytest.raises(ValueError):
            contrastive_loss(h, h, ContrastiveConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ContrastiveConfig(temperature=0.0)
        with pytest.raises(ValueError):
            ContrastiveConfig(candidate_mode="nonsense")


# ---------------------------------------------------------------------------
# masking


@pytest.fixture(scope="module")
def vocab():
    return build_vocab(
        [" ".join(f"w{i}" for i in range(40)) + " tech museum plaza chavez"],
        max_size=60,
    )


def anchor_input(vocab, n_words=20):
    text = "Tech Museum " + " ".join(f"w{i}" for i in range(n_words))
    desc = LocationDescription(anchor_id="e", text=text, anchor_span=(0, 11))
    return encode_anchor(desc, vocab, 64)


class TestMlmMask:
    def test_rate_zero_is_identity(self, vocab):
        enc = anchor_input(vocab)
        rng = np.random.default_rng(0)
        masked, labels = mlm_mask(enc, MlmConfig(mask_rate=0.0), rng, len(vocab))
        assert masked.token_ids == enc.token_ids
        assert all(l == IGNORE_INDEX for l in labels)

    def test_rate_one_all_mask(self, vocab):
        enc = anchor_input(vocab)
        rng = np.random.default_rng(0)
        cfg = MlmConfig(mask_rate=1.0, replace_mask=1.0, replace_random=0.0, keep=0.0)
        masked, labels = mlm_mask(enc, cfg, rng, len(vocab))
        for i, tok in enumerate(enc.token_ids):
            if tok in (PAD_ID, CLS_ID, SEP_ID):
                assert masked.token_ids[i] == tok
                assert labels[i] == IGNORE_INDEX
            else:
                assert masked.token_ids[i] == MASK_ID
                assert labels[i] == tok

    def test_specials_never_selected(self, vocab):
        enc = anchor_input(vocab)
        rng = np.random.default_rng(5)
        cfg = MlmConfig(mask_rate=1.0)
        masked, labels = mlm_mask(enc, cfg, rng, len(vocab))
        assert masked.token_ids[0] == CLS_ID
        assert masked.token_ids[-1] == SEP_ID
        assert labels[0] == IGNORE_INDEX and labels[-1] == IGNORE_INDEX

    def test_seeded_statistics_and_reproducibility(self, vocab):
        enc = anchor_input(vocab, n_words=48)
        cfg = MlmConfig(mask_rate=0.15)
        selected = 0
        total = 0
        runs = []
        for trial in range(250):
            rng = np.random.default_rng(1000 + trial)
            _, labels = mlm_mask(enc, cfg, rng, len(vocab))
            selected += sum(1 for l in labels if l != IGNORE_INDEX)
            total += sum(1 for t in enc.token_ids if t not in (PAD_ID, CLS_ID, SEP_ID))
            runs.append(labels)
        fraction = selected / total
        assert 0.13 <= fraction <= 0.17
        # same seed, same positions
        rng_a = np.random.default_rng(1000)
        rng_b = np.random.default_rng(1000)
        _, la = mlm_mask(enc, cfg, rng_a, len(vocab))
        _, lb = mlm_mask(enc, cfg, rng_b, len(vocab))
        assert la == lb == runs[0]

    def test_lanes_untouched(self, vocab):
        enc = anchor_input(vocab)
        masked, _ = mlm_mask(enc, MlmConfig(mask_rate=0.5), np.random.default_rng(0), len(vocab))
        assert masked.position_ids == enc.position_ids
        assert masked.segment_ids == enc.segment_ids
        assert masked.attention_mask == enc.attention_mask
        assert all(
            (is_dsep(a) and is_dsep(b)) or a == b
            for a, b in zip(masked.x_coords, enc.x_coords)
        )

    def test_probability_validation(self):
        with pytest.raises(ValueError):
            MlmConfig(mask_rate=1.5)
        with pytest.raises(ValueError):
            MlmConfig(replace_mask=0.9, replace_random=0.2, keep=0.1)


# ---------------------------------------------------------------------------
# hard negatives and batches


def _entity(i, name, lat, lon):
    return GeoEntity(id=f"e{i}", name=name, lat=lat, lon=lon)


class TestMineHardNegative:
    def test_shared_name_token_rule(self):
        gaz = Gazetteer.from_entities(
            [
                _entity(1, "San Jose", 37.3, -121.9),
                _entity(2, "San Jose", 9.9, -84.1),
                _entity(3, "Faraway Harbor", -33.9, 151.2),
            ]
        )
        rng = np.random.default_rng(0)
        for _ in range(10):
            got = mine_hard_negative(gaz.by_id["e1"], gaz, rng)
            assert got.id == "e2"

    def test_distance_rule(self):
        deg = 1.0 / EARTH_RADIUS_KM * 180.0 / math.pi
        gaz = Gazetteer.from_entities(
            [
                _entity(1, "Alpha Spot", 10.0, 10.0),
                _entity(2, "Beta Place", 10.0 + 5 * deg, 10.0),       # 5 km
                _entity(3, "Gamma Corner", 10.0 + 500 * deg, 10.0),   # 500 km
                _entity(4, "Delta Yard", 10.0, 10.0 + 600 * deg),     # far
            ]
        )
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert mine_hard_negative(gaz.by_id["e1"], gaz, rng).id == "e2"

    def test_uniform_fallback_is_seeded(self):
        gaz = Gazetteer.from_entities(
            [
                _entity(1, "Alpha Spot", 0.0, 0.0),
                _entity(2, "Beta Place", 40.0, 40.0),
                _entity(3, "Gamma Corner", -40.0, -40.0),
            ]
        )
        picks_a = [mine_hard_negative(gaz.by_id["e1"], gaz, np.random.default_rng(s)).id
                   for s in range(8)]
        picks_b = [mine_hard_negative(gaz.by_id["e1"], gaz, np.random.default_rng(s)).id
                   for s in range(8)]
        assert picks_a == picks_b
        assert set(picks_a) <= {"e2", "e3"}
        assert len(set(picks_a)) == 2  # both fallback candidates reachable

    def test_singleton_rejected(self):
        gaz = Gazetteer.from_entities([_entity(1, "Alone", 0.0, 0.0)])
        with pytest.raises(ValueError):
            mine_hard_negative(gaz.by_id["e1"], gaz, np.random.default_rng(0))


def _tiny_pairs(vocab, n=6):
    pairs = []
    for i in range(n):
        name = f"w{i} museum"
        text = f"W{i} Museum sits near plaza"
        desc = LocationDescription(anchor_id=f"e{i}", text=text,
                                   anchor_span=(0, len(f"W{i} Museum")))
        loc = encode_anchor(desc, vocab, 48)
        ps = PseudoSentence(
            anchor_id=f"e{i}", anchor_name=name,
            neighbor_names=["plaza chavez"],
            neighbor_coords=[NormalizedCoord(0.2 + i, -0.4)],
            distances_km=[0.5],
        )
        pairs.append(TrainingPair(loc=loc, geo=encode_neighbor(ps, vocab, 48),
                                  entity_id=f"e{i}"))
    return pairs


class TestPairBatch:
    def test_tag_split_validated(self):
        vocab_local = build_vocab(["w0 w1 museum plaza chavez sits near"], max_size=40)
        pairs = _tiny_pairs(vocab_local, 4)
        with pytest.raises(ValueError):
            PairBatch(pairs=pairs, negative_kind=["random"] * 4)
        PairBatch(pairs=pairs, negative_kind=["random", "random", "hard", "hard"])

    def test_assemble_tags_and_size(self, vocab):
        pairs = _tiny_pairs(vocab, 6)
        rng = np.random.default_rng(0)
        batch = assemble_pair_batch(pairs, 4, rng)
        assert len(batch.pairs) == 4
        assert sorted(batch.negative_kind) == ["hard", "hard", "random", "random"]
        assert len({p.entity_id for p in batch.pairs}) == 4

    def test_assemble_uses_gazetteer_hard_negatives(self, vocab):
        pairs = _tiny_pairs(vocab, 6)
        # e0 and e1 are within 10 km; others far away
        deg = 1.0 / EARTH_RADIUS_KM * 180.0 / math.pi
        gaz = Gazetteer.from_entities(
            [_entity(0, "w0 museum", 0.0, 0.0), _entity(1, "w1 museum", 2 * deg, 0.0)]
            + [_entity(i, f"w{i} museum", 30.0 + i, 30.0) for i in range(2, 6)]
        )
        rng = np.random.default_rng(1)
        batch = assemble_pair_batch(pairs, 2, rng, gazetteer=gaz)
        assert len(batch.pairs) == 2
        assert batch.negative_kind == ["random", "hard"]


# ---------------------------------------------------------------------------
# the optimization step


def _step_setup(vocab, seed=0):
    torch.manual_seed(seed)
    cfg = EncoderConfig(vocab_size=len(vocab), d_model=16, n_heads=2, n_layers=1,
                        ff_dim=32, max_seq_len=48)
    encoder = GroundedEncoder(cfg)
    head = MlmHead(16, len(vocab))
    opt = torch.optim.Adam(list(encoder.parameters()) + list(head.parameters()), lr=1e-3)
    pairs = _tiny_pairs(vocab, 4)
    batch = PairBatch(pairs=pairs[:4], negative_kind=["random", "random", "hard", "hard"])
    return encoder, head, opt, batch


class TestPretrainStep:
    def test_both_ablated_leaves_params_unchanged(self, vocab):
        encoder, head, opt, batch = _step_setup(vocab)
        before = copy.deepcopy(encoder.state_dict())
        report = pretrain_step(
            encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
            np.random.default_rng(0), ablations=Ablations(contrastive=True, mlm=True),
        )
        assert report == {"contrastive": 0.0, "mlm": 0.0, "total": 0.0}
        after = encoder.state_dict()
        for k in before:
            assert torch.equal(before[k], after[k])

    def test_fixed_batch_training_reduces_loss(self, vocab):
        encoder, head, opt, batch = _step_setup(vocab)
        rng = np.random.default_rng(0)
        first = pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                              rng)
        last = first
        for _ in range(49):
            last = pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                                 rng)
        assert last["total"] < first["total"]

    def test_identical_seeds_identical_trajectories(self, vocab):
        def trajectory():
            encoder, head, opt, batch = _step_setup(vocab, seed=7)
            rng = np.random.default_rng(7)
            return [
                pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                              rng)["total"]
                for _ in range(10)
            ]

        a = trajectory()
        b = trajectory()
        assert all(abs(x - y) <= 1e-10 for x, y in zip(a, b))

    def test_spatial_ablation_invariant_to_coordinates(self, vocab):
        def run(coord_shift):
            encoder, head, opt, batch = _step_setup(vocab, seed=3)
            shifted_pairs = []
            for p in batch.pairs:
                geo = copy.deepcopy(p.geo)
                geo.x_coords = [x + coord_shift if not is_dsep(x) else x for x in geo.x_coords]
                shifted_pairs.append(TrainingPair(loc=p.loc, geo=geo, entity_id=p.entity_id))
            shifted = PairBatch(pairs=shifted_pairs, negative_kind=batch.negative_kind)
            rng = np.random.default_rng(3)
            for _ in range(3):
                pretrain_step(encoder, head, opt, shifted, ContrastiveConfig(), MlmConfig(),
                              rng, ablations=Ablations(spatial=True))
            return encoder.state_dict()

        a = run(0.0)
        b = run(5.0)
        for k in a:
            assert torch.equal(a[k], b[k]), k

    def test_report_terms_compose(self, vocab):
        encoder, head, opt, batch = _step_setup(vocab)
        report = pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                               np.random.default_rng(0), mlm_weight=2.0)
        assert abs(report["total"] - (report["contrastive"] + 2.0 * report["mlm"])) < 1e-5

    def test_contrastive_only_and_mlm_only(self, vocab):
        encoder, head, opt, batch = _step_setup(vocab)
        r1 = pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                           np.random.default_rng(0), ablations=Ablations(mlm=True))
        assert r1["mlm"] == 0.0 and r1["contrastive"] > 0.0
        r2 = pretrain_step(encoder, head, opt, batch, ContrastiveConfig(), MlmConfig(),
                           np.random.default_rng(0), ablations=Ablations(contrastive=True))
        assert r2["contrastive"] == 0.0 and r2["mlm"] > 0.0


class TestAblationsParsing:
    def test_from_names(self):
        ab = Ablations.from_names(["mlm", "spatial"])
        assert ab.mlm and ab.spatial and not ab.contrastive and not ab.summarizer

    def test_unknown_rejected(self):
        with pytest.raises(ValueError, match="unknown ablation"):
            Ablations.from_names(["dropout"])
