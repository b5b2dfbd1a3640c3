"""Downstream adaptation: toponym recognition, linking, and geo-entity typing.

All three tasks are sklearn-style estimators over the shared encoder:

* ToponymRecognizer tags tokens with B-topo / I-topo / O through a linear
  head over final-layer token representations.
* ToponymLinker embeds every gazetteer entity through its neighbor-level
  pseudo-sentence and retrieves candidates for a textual mention by cosine
  similarity. Mentions are encoded anchor-level, so linking relies on
  linguistic context alone.
* GeoEntityTyper classifies an entity's amenity class from its pooled
  anchor representation inside the neighbor-level input, so predictions
  depend only on spatial context.

Fine-tuning updates all encoder parameters by default; pass head_only=True
to freeze the encoder and train just the task head.
"""

from __future__ import annotations

import json
import logging
import warnings
from copy import deepcopy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .geodata import AMENITY_CLASSES, AnnotatedParagraph, Gazetteer
from .linearizer import PseudoSentence, linearize, neighbors_of
from .model.encoder import EncoderConfig, GroundedEncoder, pool_entity_batch
from .model.encoding import (
    EncodedInput,
    collate,
    encode_anchor,
    encode_neighbor,
    encode_plain_text,
)
from .model.vocab import Vocab, build_vocab, tokenize_with_offsets
from .pretrain import IGNORE_INDEX
from .summarizer import LocationDescription

logger = logging.getLogger(__name__)

BIO_TAGS = ("O", "B-topo", "I-topo")
_TAG_TO_ID = {t: i for i, t in enumerate(BIO_TAGS)}


def paragraph_to_bio(para: AnnotatedParagraph) -> tuple[list[str], list[str]]:
    """Token list and gold BIO tags for an annotated paragraph."""
    toks = tokenize_with_offsets(para.text)
    tags = ["O"] * len(toks)
    for mention in para.mentions:
        inside = [
            i for i, (_, s, e) in enumerate(toks) if s < mention.end and e > mention.start
        ]
        for j, i in enumerate(inside):
            tags[i] = "B-topo" if j == 0 else "I-topo"
    return [t for t, _, _ in toks], tags


def tags_to_spans(tags) -> list[tuple[int, int]]:
    """Token-index entity spans from a BIO sequence.

    Predictions may be malformed; an I-topo with no open entity starts a
    new one (the usual lenient decoding).
    """
    spans: list[tuple[int, int]] = []
    start = None
    for i, tag in enumerate(tags):
        if tag == "B-topo":
            if start is not None:
                spans.append((start, i))
            start = i
        elif tag == "I-topo":
            if start is None:
                start = i
        else:
            if start is not None:
                spans.append((start, i))
                start = None
    if start is not None:
        spans.append((start, len(tags)))
    return spans


def train_test_split_indices(
    n: int, train_fraction: float = 0.8, seed: int = 0
) -> tuple[list[int], list[int]]:
    """Deterministic shuffled split of range(n)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(n * train_fraction))
    return [int(i) for i in perm[:cut]], [int(i) for i in perm[cut:]]


def _fresh_encoder(vocab: Vocab, d_model, n_heads, n_layers, ff_dim, max_seq_len) -> GroundedEncoder:
    config = EncoderConfig(
        vocab_size=len(vocab),
        d_model=d_model,
        n_heads=n_heads,
        n_layers=n_layers,
        ff_dim=ff_dim,
        max_seq_len=max_seq_len,
    )
    return GroundedEncoder(config)


class ToponymRecognizer(BaseEstimator):
    """Per-token B-topo/I-topo/O classifier over the encoder."""

    def __init__(
        self,
        encoder: GroundedEncoder | None = None,
        vocab: Vocab | None = None,
        *,
        d_model: int = 64,
        n_heads: int = 4,
        n_layers: int = 2,
        ff_dim: int = 256,
        max_seq_len: int = 128,
        lr: float = 1e-3,
        steps: int = 200,
        batch_size: int = 8,
        seed: int = 0,
        head_only: bool = False,
        use_spatial: bool = True,
    ) -> None:
        self.encoder = encoder
        self.vocab = vocab
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ff_dim = ff_dim
        self.max_seq_len = max_seq_len
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.head_only = head_only
        self.use_spatial = use_spatial

    def _encode(self, text: str, vocab: Vocab) -> tuple[EncodedInput, list[str]]:
        enc = encode_plain_text(text, vocab, self.max_seq_len)
        toks = [t for t, _, _ in tokenize_with_offsets(text)][: self.max_seq_len - 2]
        return enc, toks

    def fit(self, paragraphs: list[AnnotatedParagraph]) -> "ToponymRecognizer":
        if not paragraphs:
            raise ValueError("recognition fine-tuning needs a non-empty corpus")
        if not any(p.mentions for p in paragraphs):
            raise ValueError("corpus has no mentions to learn from")
        torch.manual_seed(self.seed)
        rng = np.random.default_rng(self.seed)
        vocab = self.vocab or build_vocab([p.text for p in paragraphs])
        encoder = (
            deepcopy(self.encoder)
            if self.encoder is not None
            else _fresh_encoder(vocab, self.d_model, self.n_heads, self.n_layers,
                                self.ff_dim, self.max_seq_len)
        )
        head = nn.Linear(encoder.config.d_model, len(BIO_TAGS))

        samples = []
        for para in paragraphs:
            _, tags = paragraph_to_bio(para)
            enc, toks = self._encode(para.text, vocab)
            labels = [IGNORE_INDEX]  # [CLS]
            labels += [_TAG_TO_ID[t] for t in tags[: len(toks)]]
            labels += [IGNORE_INDEX]  # [SEP]
            samples.append((enc, labels))

        params = list(head.parameters())
        if not self.head_only:
            params += list(encoder.parameters())
        optimizer = torch.optim.Adam(params, lr=self.lr)
        dtype = next(encoder.parameters()).dtype
        losses = []
        for _ in range(self.steps):
            idx = rng.choice(len(samples), size=min(self.batch_size, len(samples)), replace=False)
            chosen = [samples[int(i)] for i in idx]
            batch = collate([enc for enc, _ in chosen], dtype=dtype)
            length = batch.token_ids.shape[1]
            labels = torch.tensor(
                [lab + [IGNORE_INDEX] * (length - len(lab)) for _, lab in chosen],
                dtype=torch.long,
            )
            reps = encoder(batch, use_spatial=self.use_spatial)
            logits = head(reps)
            loss = nn.functional.cross_entropy(
                logits.reshape(-1, len(BIO_TAGS)),
                labels.reshape(-1),
                ignore_index=IGNORE_INDEX,
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        self.encoder_ = encoder
        self.head_ = head
        self.vocab_ = vocab
        self.loss_history_ = losses
        return self

    @torch.no_grad()
    def predict_tags(self, text: str) -> list[tuple[str, str]]:
        """(token, tag) pairs for one text; deterministic argmax decoding."""
        check_is_fitted(self, "head_")
        if not text.strip():
            return []
        enc, toks = self._encode(text, self.vocab_)
        dtype = next(self.encoder_.parameters()).dtype
        batch = collate([enc], dtype=dtype)
        reps = self.encoder_(batch, use_spatial=self.use_spatial)
        logits = self.head_(reps)[0]
        pred = logits.argmax(dim=-1).tolist()
        return [(tok, BIO_TAGS[pred[i + 1]]) for i, tok in enumerate(toks)]

    def predict(self, texts: list[str]) -> list[list[tuple[str, str]]]:
        return [self.predict_tags(t) for t in texts]

    def predict_mention_spans(self, text: str) -> list[tuple[int, int]]:
        """Predicted toponym spans as character offsets into `text`."""
        tags = [tag for _, tag in self.predict_tags(text)]
        offsets = [(s, e) for _, s, e in tokenize_with_offsets(text)][: len(tags)]
        return [
            (offsets[ts][0], offsets[te - 1][1]) for ts, te in tags_to_spans(tags)
        ]


@dataclass(frozen=True)
class LinkCandidate:
    """A retrieval candidate with its cosine similarity score."""

    entity_id: str
    score: float


class ToponymLinker(BaseEstimator):
    """Dense retrieval of gazetteer records for textual mentions."""

    def __init__(
        self,
        encoder: GroundedEncoder,
        vocab: Vocab,
        *,
        n_neighbors: int = 20,
        coord_scale: float = 1.0,
        max_seq_len: int = 128,
        use_spatial: bool = True,
    ) -> None:
        self.encoder = encoder
        self.vocab = vocab
        self.n_neighbors = n_neighbors
        self.coord_scale = coord_scale
        self.max_seq_len = max_seq_len
        self.use_spatial = use_spatial

    @torch.no_grad()
    def fit(self, gazetteer: Gazetteer) -> "ToponymLinker":
        """Embed every entity through its neighbor-level pseudo-sentence."""
        if len(gazetteer) == 0:
            raise ValueError("cannot index an empty gazetteer")
        encs = []
        ids = []
        for ent in gazetteer.entities:
            pseudo = linearize(
                ent, neighbors_of(gazetteer, ent.id, self.n_neighbors), self.coord_scale
            )
            encs.append(encode_neighbor(pseudo, self.vocab, self.max_seq_len))
            ids.append(ent.id)
        dtype = next(self.encoder.parameters()).dtype
        vectors = []
        for start in range(0, len(encs), 32):
            batch = collate(encs[start : start + 32], dtype=dtype)
            reps = self.encoder(batch, use_spatial=self.use_spatial)
            pooled = pool_entity_batch(reps, batch.entity_spans)
            vectors.append(pooled.to(torch.float32).cpu().numpy())
        self.entity_ids_ = ids
        self.vectors_ = np.ascontiguousarray(np.concatenate(vectors, axis=0), dtype="<f4")
        return self

    @torch.no_grad()
    def _embed_mention(self, text: str, span: tuple[int, int]) -> np.ndarray:
        desc = LocationDescription(anchor_id="query", text=text, anchor_span=span)
        enc = encode_anchor(desc, self.vocab, self.max_seq_len)
        dtype = next(self.encoder.parameters()).dtype
        batch = collate([enc], dtype=dtype)
        reps = self.encoder(batch, use_spatial=self.use_spatial)
        pooled = pool_entity_batch(reps, batch.entity_spans)
        return pooled[0].to(torch.float32).cpu().numpy()

    def top_k(self, text: str, span: tuple[int, int], k: int = 10) -> list[LinkCandidate]:
        """Best k candidates for the mention text[span], scores descending.

        Ties break by ascending entity id; k larger than the index returns
        everything.
        """
        check_is_fitted(self, "vectors_")
        if k < 1:
            raise ValueError("k must be >= 1")
        s, e = span
        if not 0 <= s < e <= len(text):
            raise ValueError(f"mention span ({s}, {e}) invalid for text length {len(text)}")
        query = self._embed_mention(text, span)
        qn = np.linalg.norm(query)
        vn = np.linalg.norm(self.vectors_, axis=1)
        scores = (self.vectors_ @ query) / np.maximum(vn * qn, 1e-30)
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], self.entity_ids_[i]))
        return [
            LinkCandidate(entity_id=self.entity_ids_[i], score=float(scores[i]))
            for i in order[:k]
        ]

    def predict(self, queries: list[tuple[str, tuple[int, int]]], k: int = 10) -> list[list[LinkCandidate]]:
        return [self.top_k(text, span, k) for text, span in queries]

    def save_index(self, path) -> None:
        """Vector file (JSON header + little-endian float32) + ids sidecar."""
        check_is_fitted(self, "vectors_")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"dim": int(self.vectors_.shape[1]), "count": int(self.vectors_.shape[0])}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
            fh.write(self.vectors_.tobytes())
        with open(str(path) + ".ids.jsonl", "w", encoding="utf-8") as fh:
            for eid in self.entity_ids_:
                fh.write(json.dumps({"entity_id": eid}) + "\n")

    def load_index(self, path) -> "ToponymLinker":
        path = Path(path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            data = fh.read()
        vectors = np.frombuffer(data, dtype="<f4").reshape(header["count"], header["dim"])
        ids = []
        with open(str(path) + ".ids.jsonl", "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ids.append(json.loads(line)["entity_id"])
        if len(ids) != header["count"]:
            raise ValueError(f"{path}: sidecar id count does not match header")
        self.entity_ids_ = ids
        self.vectors_ = np.ascontiguousarray(vectors, dtype="<f4")
        return self


class GeoEntityTyper(BaseEstimator):
    """Amenity-class classifier over pooled anchor representations."""

    def __init__(
        self,
        encoder: GroundedEncoder | None = None,
        vocab: Vocab | None = None,
        *,
        classes: tuple[str, ...] = AMENITY_CLASSES,
        d_model: int = 64,
        n_heads: int = 4,
        n_layers: int = 2,
        ff_dim: int = 256,
        max_seq_len: int = 128,
        lr: float = 1e-3,
        steps: int = 300,
        batch_size: int = 16,
        seed: int = 0,
        head_only: bool = False,
        use_spatial: bool = True,
    ) -> None:
        self.encoder = encoder
        self.vocab = vocab
        self.classes = classes
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ff_dim = ff_dim
        self.max_seq_len = max_seq_len
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.seed = seed
        self.head_only = head_only
        self.use_spatial = use_spatial

    def fit(self, pseudos: list[PseudoSentence], labels: list[str]) -> "GeoEntityTyper":
        if len(pseudos) != len(labels):
            raise ValueError("pseudos and labels must align")
        if not pseudos:
            raise ValueError("typing fine-tuning needs samples")
        unknown = set(labels) - set(self.classes)
        if unknown:
            raise ValueError(f"labels outside the class set: {sorted(unknown)}")
        missing = set(self.classes) - set(labels)
        if missing:
            warnings.warn(
                f"classes absent from the training set: {sorted(missing)}",
                UserWarning,
            )
        torch.manual_seed(self.seed)
        rng = np.random.default_rng(self.seed)
        vocab = self.vocab or build_vocab(
            [ps.anchor_name for ps in pseudos]
            + [n for ps in pseudos for n in ps.neighbor_names]
        )
        encoder = (
            deepcopy(self.encoder)
            if self.encoder is not None
            else _fresh_encoder(vocab, self.d_model, self.n_heads, self.n_layers,
                                self.ff_dim, self.max_seq_len)
        )
        head = nn.Linear(encoder.config.d_model, len(self.classes))
        class_to_id = {c: i for i, c in enumerate(self.classes)}

        encs = [encode_neighbor(ps, vocab, self.max_seq_len) for ps in pseudos]
        label_ids = [class_to_id[c] for c in labels]

        params = list(head.parameters())
        if not self.head_only:
            params += list(encoder.parameters())
        optimizer = torch.optim.Adam(params, lr=self.lr)
        dtype = next(encoder.parameters()).dtype
        losses = []
        for _ in range(self.steps):
            idx = rng.choice(len(encs), size=min(self.batch_size, len(encs)), replace=False)
            batch = collate([encs[int(i)] for i in idx], dtype=dtype)
            target = torch.tensor([label_ids[int(i)] for i in idx], dtype=torch.long)
            reps = encoder(batch, use_spatial=self.use_spatial)
            pooled = pool_entity_batch(reps, batch.entity_spans)
            loss = nn.functional.cross_entropy(head(pooled), target)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))

        self.encoder_ = encoder
        self.head_ = head
        self.vocab_ = vocab
        self.classes_ = tuple(self.classes)
        self.loss_history_ = losses
        return self

    @torch.no_grad()
    def predict(self, pseudos: list[PseudoSentence]) -> list[str]:
        check_is_fitted(self, "head_")
        if not pseudos:
            return []
        dtype = next(self.encoder_.parameters()).dtype
        out = []
        for start in range(0, len(pseudos), 32):
            chunk = pseudos[start : start + 32]
            encs = [encode_neighbor(ps, self.vocab_, self.max_seq_len) for ps in chunk]
            batch = collate(encs, dtype=dtype)
            reps = self.encoder_(batch, use_spatial=self.use_spatial)
            pooled = pool_entity_batch(reps, batch.entity_spans)
            pred = self.head_(pooled).argmax(dim=-1).tolist()
            out.extend(self.classes_[i] for i in pred)
        return out
