"""Contrastive + masked-language-model pretraining on paired inputs.

Each training pair holds two views of one geo-entity: the anchor-level
location description and the neighbor-level pseudo-sentence. Pretraining
aligns the two views with an InfoNCE-style contrastive objective over
in-batch negatives (batches mix 50% random and 50% hard negatives) and, in
parallel, runs masked language modeling on the concatenation of the two
views. The total objective is `contrastive + mlm_weight * mlm`.

The contrastive candidate set supports two readings of the objective. The
candidates for pair i are the 2N pooled embeddings [geo_1..geo_N,
loc_1..loc_N]; the two modes differ in which single candidate the
denominator drops:

* ``paper_exact`` drops the positive (geo_i) and keeps the sample's own
  anchor view, whose similarity is always 1. The loss floor is therefore
  above zero no matter how well the views align; when every similarity is
  equal the per-sample loss is exactly log(2N-1).
* ``simclr`` drops the self term and keeps the positive: the conventional
  cross-entropy form, which can approach zero. This is the training
  default.
"""

from __future__ import annotations

import json
import logging
from copy import deepcopy
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from .geodata import Gazetteer, GeoEntity, fold
from .linearizer import PseudoSentence, geodesic_distance, linearize, neighbors_of
from .model.encoder import EncoderConfig, GroundedEncoder, pool_entity_batch
from .model.encoding import (
    DSEP,
    EncodedInput,
    TruncationError,
    collate,
    encode_anchor,
    encode_neighbor,
)
from .model.vocab import CLS_ID, MASK_ID, PAD_ID, SEP_ID, Vocab, tokenize
from .summarizer import (
    LocationDescription,
    RemoteConfig,
    SummaryContext,
    SummaryError,
    find_anchor_span,
    split_sentences,
    summarize_remote,
    summarize_template,
)
from .validation import check_probability

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100

_SPECIAL_IDS = frozenset({PAD_ID, CLS_ID, SEP_ID})


@dataclass
class TrainingPair:
    """Anchor-level and neighbor-level encodings of the same entity."""

    loc: EncodedInput
    geo: EncodedInput
    entity_id: str


@dataclass
class PairBatch:
    """N training pairs plus the negative-sampling kind of each slot."""

    pairs: list[TrainingPair]
    negative_kind: list[str]

    def __post_init__(self) -> None:
        n = len(self.pairs)
        if n < 2:
            raise ValueError("a pair batch needs at least 2 pairs")
        if len(self.negative_kind) != n:
            raise ValueError("negative_kind must tag every pair")
        n_hard = sum(1 for k in self.negative_kind if k == "hard")
        if abs(n_hard - (n - n_hard)) > 1:
            raise ValueError("negative kinds must split 50/50 (within 1 for odd N)")


@dataclass
class ContrastiveConfig:
    temperature: float = 0.07
    candidate_mode: str = "simclr"

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.candidate_mode not in ("paper_exact", "simclr"):
            raise ValueError(f"unknown candidate_mode {self.candidate_mode!r}")


@dataclass
class MlmConfig:
    mask_rate: float = 0.15
    replace_mask: float = 0.8
    replace_random: float = 0.1
    keep: float = 0.1
    seed: int | None = None

    def __post_init__(self) -> None:
        check_probability(self.mask_rate, "mask_rate")
        for name in ("replace_mask", "replace_random", "keep"):
            check_probability(getattr(self, name), name)
        total = self.replace_mask + self.replace_random + self.keep
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"replacement probabilities sum to {total}, expected 1")


@dataclass(frozen=True)
class Ablations:
    """Training-time switches; True disables the named component."""

    contrastive: bool = False
    mlm: bool = False
    spatial: bool = False
    summarizer: bool = False

    @classmethod
    def from_names(cls, names) -> "Ablations":
        valid = {"contrastive", "mlm", "spatial", "summarizer"}
        names = set(names)
        unknown = names - valid
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        return cls(**{n: True for n in names})


def mine_hard_negative(
    anchor: GeoEntity,
    gazetteer: Gazetteer,
    rng: np.random.Generator,
    radius_km: float = 10.0,
) -> GeoEntity:
    """A deliberately confusable negative for the anchor.

    Qualifying entities share a name token with the anchor or lie within
    `radius_km`; when none qualifies, falls back to a uniform random
    different entity. Seeded rng makes the choice reproducible.
    """
    others = [e for e in gazetteer.entities if e.id != anchor.id]
    if not others:
        raise ValueError("hard-negative mining needs at least 2 entities")
    anchor_tokens = set(tokenize(anchor.name))
    a = (anchor.lat, anchor.lon)
    pool = [
        e
        for e in others
        if (set(tokenize(e.name)) & anchor_tokens)
        or geodesic_distance(a, (e.lat, e.lon)) <= radius_km
    ]
    if not pool:
        pool = others
    return pool[int(rng.integers(len(pool)))]


def contrastive_loss(
    h_loc: torch.Tensor, h_geo: torch.Tensor, cfg: ContrastiveConfig
) -> tuple[torch.Tensor, torch.Tensor]:
    """(batch loss, per-sample losses) for aligned view embeddings.

    Row i of both inputs must embed the same entity. Similarity is cosine;
    candidates are the 2N pooled embeddings [geo_1..geo_N, loc_1..loc_N].
    See the module docstring for the two candidate modes.
    """
    if h_loc.shape != h_geo.shape:
        raise ValueError("view embedding matrices must have identical shapes")
    n = h_loc.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least 2 pairs")
    norm_l = h_loc.norm(dim=1)
    norm_g = h_geo.norm(dim=1)
    if (norm_l == 0).any() or (norm_g == 0).any():
        raise ValueError("zero-norm embedding row: cosine similarity undefined")
    zl = h_loc / norm_l[:, None]
    zg = h_geo / norm_g[:, None]
    cands = torch.cat([zg, zl], dim=0)                      # [2N, d]
    sims = (zl @ cands.T) / cfg.temperature                 # [N, 2N]
    pos = torch.diagonal(sims[:, :n])                       # sim(loc_i, geo_i)/tau
    excluded = torch.zeros_like(sims, dtype=torch.bool)
    idx = torch.arange(n)
    if cfg.candidate_mode == "paper_exact":
        excluded[idx, idx] = True          # drop the positive, keep self
    else:
        excluded[idx, n + idx] = True      # drop self, keep the positive
    denom = sims.masked_fill(excluded, float("-inf")).logsumexp(dim=1)
    per_sample = denom - pos
    return per_sample.mean(), per_sample


def mlm_mask(
    enc: EncodedInput,
    cfg: MlmConfig,
    rng: np.random.Generator,
    vocab_size: int,
) -> tuple[EncodedInput, list[int]]:
    """BERT-style masking of one encoded input.

    Each non-special token is selected independently with `mask_rate`;
    selected tokens become [MASK] / a random non-special token / stay as-is
    with the configured split. Labels hold the original id at selected
    positions and IGNORE_INDEX elsewhere. [CLS], [SEP] and [PAD] are never
    selected.
    """
    token_ids = list(enc.token_ids)
    labels = [IGNORE_INDEX] * len(token_ids)
    for i, tok in enumerate(token_ids):
        if tok in _SPECIAL_IDS:
            continue
        if rng.random() >= cfg.mask_rate:
            continue
        labels[i] = tok
        r = rng.random()
        if r < cfg.replace_mask:
            token_ids[i] = MASK_ID
        elif r < cfg.replace_mask + cfg.replace_random and vocab_size > 5:
            token_ids[i] = int(rng.integers(5, vocab_size))
        # else: keep the original token
    return replace(enc, token_ids=token_ids), labels


def concat_pair(loc: EncodedInput, geo: EncodedInput, max_seq_len: int = 128) -> EncodedInput:
    """Concatenate a pair for MLM: loc tokens, then geo tokens minus [CLS].

    The geo portion keeps segment 1 and its coordinate lanes; its position
    ids restart at 0. When the pair is longer than max_seq_len, content
    tokens are dropped from the end of the currently longer portion, never
    cutting into either entity-name span; raises TruncationError when that
    is impossible.
    """
    if loc.entity_span is None or geo.entity_span is None:
        raise ValueError("both inputs must carry entity spans")
    loc_content = list(loc.token_ids[1:-1])
    geo_content = list(geo.token_ids[1:-1])
    geo_x = list(geo.x_coords[1:-1])
    geo_y = list(geo.y_coords[1:-1])
    loc_span = (loc.entity_span[0] - 1, loc.entity_span[1] - 1)
    geo_span = (geo.entity_span[0] - 1, geo.entity_span[1] - 1)

    def total() -> int:
        return len(loc_content) + len(geo_content) + 3  # [CLS] + 2x[SEP]

    while total() > max_seq_len:
        drop_from_loc = len(loc_content) >= len(geo_content)
        if drop_from_loc and len(loc_content) > loc_span[1]:
            loc_content.pop()
        elif len(geo_content) > geo_span[1]:
            geo_content.pop()
            geo_x.pop()
            geo_y.pop()
        elif len(loc_content) > loc_span[1]:
            loc_content.pop()
        else:
            raise TruncationError(
                f"pair does not fit in max_seq_len={max_seq_len} without "
                "cutting an entity span"
            )

    loc_len = len(loc_content) + 2
    geo_len = len(geo_content) + 1
    enc = EncodedInput(
        token_ids=[CLS_ID] + loc_content + [SEP_ID] + geo_content + [SEP_ID],
        position_ids=list(range(loc_len)) + list(range(geo_len)),
        segment_ids=[0] * loc_len + [1] * geo_len,
        x_coords=[DSEP] * loc_len + geo_x + [DSEP],
        y_coords=[DSEP] * loc_len + geo_y + [DSEP],
        attention_mask=[1] * (loc_len + geo_len),
        entity_span=(1 + loc_span[0], 1 + loc_span[1]),
    )
    enc.check()
    return enc


def assemble_pair_batch(
    pairs: list[TrainingPair],
    batch_size: int,
    rng: np.random.Generator,
    gazetteer: Gazetteer | None = None,
    radius_km: float = 10.0,
) -> PairBatch:
    """Sample a batch: half random pairs, half hard-negative pairs.

    Hard slots pick an anchor already in the batch and mine a confusable
    entity for it; when the mined entity has no training pair (or is already
    present) the slot falls back to a uniform random unused pair.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 training pairs")
    n = min(batch_size, len(pairs))
    n_hard = n // 2
    n_rand = n - n_hard
    by_entity = {p.entity_id: i for i, p in enumerate(pairs)}

    chosen = [int(i) for i in rng.choice(len(pairs), size=n_rand, replace=False)]
    kinds = ["random"] * n_rand
    used = set(chosen)
    for _ in range(n_hard):
        picked = None
        if gazetteer is not None and len(gazetteer) >= 2:
            for _attempt in range(8):
                seed_pair = pairs[chosen[int(rng.integers(len(chosen)))]]
                anchor = gazetteer.by_id.get(seed_pair.entity_id)
                if anchor is None:
                    break
                cand = mine_hard_negative(anchor, gazetteer, rng, radius_km=radius_km)
                j = by_entity.get(cand.id)
                if j is not None and j not in used:
                    picked = j
                    break
        if picked is None:
            free = [i for i in range(len(pairs)) if i not in used]
            if not free:
                break
            picked = free[int(rng.integers(len(free)))]
        chosen.append(picked)
        kinds.append("hard")
        used.add(picked)
    return PairBatch(pairs=[pairs[i] for i in chosen], negative_kind=kinds)


class MlmHead(nn.Module):
    """Linear vocabulary projection for masked-token recovery."""

    def __init__(self, d_model: int, vocab_size: int) -> None:
        super().__init__()
        self.proj = nn.Linear(d_model, vocab_size)

    def forward(self, reps: torch.Tensor) -> torch.Tensor:
        return self.proj(reps)


def _forward_pooled(
    encoder: GroundedEncoder, inputs: list[EncodedInput], use_spatial: bool
) -> torch.Tensor:
    dtype = next(encoder.parameters()).dtype
    batch = collate(inputs, dtype=dtype)
    reps = encoder(batch, use_spatial=use_spatial)
    return pool_entity_batch(reps, batch.entity_spans)


def pretrain_step(
    encoder: GroundedEncoder,
    mlm_head: MlmHead,
    optimizer: torch.optim.Optimizer,
    batch: PairBatch,
    con_cfg: ContrastiveConfig,
    mlm_cfg: MlmConfig,
    rng: np.random.Generator,
    ablations: Ablations = Ablations(),
    mlm_weight: float = 1.0,
) -> dict[str, float]:
    """One optimization step on a pair batch; returns the loss report.

    The report maps contrastive / mlm / total to floats; an ablated term
    reports 0.0 and contributes nothing to the gradient. With both task
    losses ablated the parameters are left untouched.
    """
    if ablations.contrastive and ablations.mlm:
        return {"contrastive": 0.0, "mlm": 0.0, "total": 0.0}
    use_spatial = not ablations.spatial
    max_seq_len = encoder.config.max_seq_len
    vocab_size = encoder.config.vocab_size

    terms = []
    report: dict[str, float] = {"contrastive": 0.0, "mlm": 0.0}

    if not ablations.contrastive:
        h_loc = _forward_pooled(encoder, [p.loc for p in batch.pairs], use_spatial)
        h_geo = _forward_pooled(encoder, [p.geo for p in batch.pairs], use_spatial)
        con, _ = contrastive_loss(h_loc, h_geo, con_cfg)
        report["contrastive"] = float(con.detach())
        terms.append(con)

    if not ablations.mlm:
        masked: list[EncodedInput] = []
        labels: list[list[int]] = []
        for pair in batch.pairs:
            try:
                joint = concat_pair(pair.loc, pair.geo, max_seq_len)
            except TruncationError:
                logger.warning("pretrain_step: pair %s too long for MLM, skipped", pair.entity_id)
                continue
            enc, lab = mlm_mask(joint, mlm_cfg, rng, vocab_size)
            masked.append(enc)
            labels.append(lab)
        if masked:
            dtype = next(encoder.parameters()).dtype
            tensor_batch = collate(masked, dtype=dtype)
            length = tensor_batch.token_ids.shape[1]
            label_tensor = torch.tensor(
                [lab + [IGNORE_INDEX] * (length - len(lab)) for lab in labels],
                dtype=torch.long,
            )
            if (label_tensor != IGNORE_INDEX).any():
                reps = encoder(tensor_batch, use_spatial=use_spatial)
                logits = mlm_head(reps)
                mlm = nn.functional.cross_entropy(
                    logits.reshape(-1, vocab_size),
                    label_tensor.reshape(-1),
                    ignore_index=IGNORE_INDEX,
                )
                report["mlm"] = float(mlm.detach())
                terms.append(mlm_weight * mlm)

    if not terms:
        report["total"] = 0.0
        return report
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    if not torch.isfinite(total):
        raise FloatingPointError(f"non-finite pretraining loss: {report}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    report["total"] = float(total.detach())
    return report


class ContrastivePretrainer(BaseEstimator):
    """Estimator wrapper around the pretraining loop.

    fit() consumes TrainingPairs plus the vocabulary (and optionally the
    gazetteer, which enables hard-negative mining) and leaves the trained
    encoder in `encoder_`, the MLM head in `mlm_head_`, and the per-step
    loss reports in `history_`.
    """

    def __init__(
        self,
        d_model: int = 64,
        n_heads: int = 4,
        n_layers: int = 2,
        ff_dim: int = 256,
        max_seq_len: int = 128,
        temperature: float = 0.07,
        candidate_mode: str = "simclr",
        mask_rate: float = 0.15,
        mlm_weight: float = 1.0,
        lr: float = 1e-3,
        steps: int = 500,
        batch_size: int = 16,
        seed: int = 0,
        ablate: tuple[str, ...] = (),
        hard_negative_radius_km: float = 10.0,
        log_path=None,
    ) -> None:
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ff_dim = ff_dim
        self.max_seq_len = max_seq_len
        self.temperature = temperature
        self.candidate_mode = candidate_mode
        self.mask_rate = mask_rate
        self.mlm_weight = mlm_weight
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.ablate = ablate
        self.hard_negative_radius_km = hard_negative_radius_km
        self.log_path = log_path

    def fit(
        self,
        pairs: list[TrainingPair],
        vocab: Vocab,
        gazetteer: Gazetteer | None = None,
        encoder: GroundedEncoder | None = None,
    ) -> "ContrastivePretrainer":
        if len(pairs) < 2:
            raise ValueError("pretraining needs at least 2 training pairs")
        torch.manual_seed(self.seed)
        rng = np.random.default_rng(self.seed)
        ablations = Ablations.from_names(self.ablate)
        con_cfg = ContrastiveConfig(self.temperature, self.candidate_mode)
        mlm_cfg = MlmConfig(mask_rate=self.mask_rate)

        if encoder is None:
            config = EncoderConfig(
                vocab_size=len(vocab),
                d_model=self.d_model,
                n_heads=self.n_heads,
                n_layers=self.n_layers,
                ff_dim=self.ff_dim,
                max_seq_len=self.max_seq_len,
            )
            encoder = GroundedEncoder(config)
        else:
            encoder = deepcopy(encoder)
        mlm_head = MlmHead(encoder.config.d_model, encoder.config.vocab_size)
        optimizer = torch.optim.Adam(
            list(encoder.parameters()) + list(mlm_head.parameters()),
            lr=self.lr,
            betas=(0.9, 0.999),
            eps=1e-8,
        )

        history: list[dict] = []
        log_fh = open(self.log_path, "a", encoding="utf-8") if self.log_path else None
        try:
            for step in range(self.steps):
                batch = assemble_pair_batch(
                    pairs,
                    self.batch_size,
                    rng,
                    gazetteer=gazetteer,
                    radius_km=self.hard_negative_radius_km,
                )
                report = pretrain_step(
                    encoder,
                    mlm_head,
                    optimizer,
                    batch,
                    con_cfg,
                    mlm_cfg,
                    rng,
                    ablations=ablations,
                    mlm_weight=self.mlm_weight,
                )
                record = {"step": step, **report}
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
        finally:
            if log_fh:
                log_fh.close()

        self.encoder_ = encoder
        self.mlm_head_ = mlm_head
        self.vocab_ = vocab
        self.history_ = history
        return self


@dataclass
class PairMaterial:
    """Decoded (not yet tokenized) material for one training pair."""

    entity_id: str
    description: LocationDescription
    pseudo: PseudoSentence


@dataclass
class PairBuildReport:
    built: int = 0
    skipped: int = 0
    reasons: dict = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


def collect_entity_sentences(paragraphs, gazetteer: Gazetteer) -> dict[str, list[str]]:
    """entity_id -> sentences (in corpus order) that mention the entity."""
    out: dict[str, list[str]] = {}
    for para in paragraphs:
        sentences = split_sentences(para.text)
        for mention in para.mentions:
            ids = mention.candidate_ids or (
                (mention.entity_id,) if mention.entity_id else ()
            )
            for eid in ids:
                ent = gazetteer.by_id.get(eid)
                if ent is None:
                    continue
                bucket = out.setdefault(eid, [])
                folded = fold(ent.name)
                for s in sentences:
                    if folded in fold(s) and s not in bucket:
                        bucket.append(s)
    return out


def build_pair_material(
    gazetteer: Gazetteer,
    paragraphs,
    *,
    n_neighbors: int = 20,
    coord_scale: float = 1.0,
    max_sentences: int = 3,
    raw_linguistic: bool = False,
    extra_sentences: dict[str, list[str]] | None = None,
    remote: RemoteConfig | None = None,
) -> tuple[list[PairMaterial], PairBuildReport]:
    """Descriptions + pseudo-sentences for every entity that supports a pair.

    `raw_linguistic` implements the summarizer ablation: the linguistic
    sentences are joined directly instead of going through the template
    (entities whose sentences never name them are skipped). With a
    `remote` config the description comes from the external service,
    falling back to the template on any failure.
    """
    sentences_by_entity = collect_entity_sentences(paragraphs, gazetteer)
    if extra_sentences:
        for eid, extra in extra_sentences.items():
            bucket = sentences_by_entity.setdefault(eid, [])
            bucket.extend(s for s in extra if s not in bucket)
    report = PairBuildReport()
    out: list[PairMaterial] = []
    for ent in gazetteer.entities:
        sentences = sentences_by_entity.get(ent.id, [])
        neighbors = neighbors_of(gazetteer, ent.id, n_neighbors)
        pseudo = linearize(ent, neighbors, coord_scale)
        if raw_linguistic:
            text = " ".join(sentences[:max_sentences])
            span = find_anchor_span(text, ent.name) if text else None
            if span is None:
                report.skip("no_anchor_in_raw_text")
                continue
            desc = LocationDescription(anchor_id=ent.id, text=text, anchor_span=span)
        else:
            ctx = SummaryContext(
                anchor_id=ent.id,
                anchor_name=ent.name,
                linguistic_sentences=sentences,
                pseudo=pseudo,
            )
            try:
                if remote is not None:
                    desc = summarize_remote(ctx, remote, max_sentences=max_sentences)
                else:
                    desc = summarize_template(ctx, max_sentences=max_sentences)
            except (SummaryError, ValueError):
                report.skip("no_description")
                continue
        out.append(PairMaterial(entity_id=ent.id, description=desc, pseudo=pseudo))
        report.built += 1
    return out, report


def encode_pair_material(
    material: list[PairMaterial],
    vocab: Vocab,
    max_seq_len: int = 128,
) -> tuple[list[TrainingPair], PairBuildReport]:
    """Tokenize pair material; pairs whose spans cannot fit are skipped."""
    report = PairBuildReport()
    pairs: list[TrainingPair] = []
    for m in material:
        try:
            loc = encode_anchor(m.description, vocab, max_seq_len)
            geo = encode_neighbor(m.pseudo, vocab, max_seq_len)
        except TruncationError:
            report.skip("truncated")
            continue
        pairs.append(TrainingPair(loc=loc, geo=geo, entity_id=m.entity_id))
        report.built += 1
    return pairs, report
