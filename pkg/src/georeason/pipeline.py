"""End-to-end pipeline stages shared by the CLI and the test suite.

Each stage is a plain function over loaded objects; the CLI adds file IO,
manifests, and flag parsing on top. `run_demo` chains everything on a
synthetic world and returns the metric report as a dict.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .config import RunConfig
from .geodata import (
    AMENITY_CLASSES,
    AnnotatedParagraph,
    Gazetteer,
    RelationTriple,
    annotate_corpus,
    load_gazetteer,
    read_jsonl,
    triples_to_sentences,
)
from .linearizer import linearize, neighbors_of
from .metrics import entity_prf, micro_f1, recall_at_k, token_prf
from .model.vocab import Vocab, build_vocab
from .pretrain import (
    Ablations,
    ContrastivePretrainer,
    PairMaterial,
    TrainingPair,
    build_pair_material,
    encode_pair_material,
)
from .summarizer import RemoteConfig
from .synthworld import generate_synthetic_world
from .tasks import (
    GeoEntityTyper,
    ToponymLinker,
    ToponymRecognizer,
    paragraph_to_bio,
    tags_to_spans,
    train_test_split_indices,
)

logger = logging.getLogger(__name__)


def load_corpus_paragraphs(path, gazetteer: Gazetteer) -> tuple[list[AnnotatedParagraph], int]:
    """Read a corpus file; annotate raw documents against the gazetteer."""
    docs = list(read_jsonl(path))
    return annotate_corpus(docs, gazetteer)


def triple_sentences_by_entity(
    gazetteer: Gazetteer, triples: list[RelationTriple]
) -> dict[str, list[str]]:
    """Verbalize triples and attribute them to entities via wikidata QIDs."""
    labels = {e.wikidata_qid: e.name for e in gazetteer.entities if e.wikidata_qid}
    qid_to_id = {e.wikidata_qid: e.id for e in gazetteer.entities if e.wikidata_qid}
    grouped: dict[str, list[RelationTriple]] = {}
    for t in triples:
        grouped.setdefault(t.subject_qid, []).append(t)
    out: dict[str, list[str]] = {}
    for qid, group in grouped.items():
        eid = qid_to_id.get(qid)
        sentences = triples_to_sentences(group, labels)
        if eid is not None and sentences:
            out[eid] = sentences
    return out


def build_pairs(
    gazetteer: Gazetteer,
    paragraphs: list[AnnotatedParagraph],
    cfg: RunConfig,
    *,
    remote: RemoteConfig | None = None,
    triples: list[RelationTriple] | None = None,
) -> tuple[list[PairMaterial], Vocab, list[TrainingPair]]:
    """Material, vocabulary, and encoded training pairs for pretraining."""
    ablations = Ablations.from_names(cfg.ablate)
    material, report = build_pair_material(
        gazetteer,
        paragraphs,
        n_neighbors=cfg.n_neighbors,
        coord_scale=cfg.coord_scale,
        max_sentences=cfg.max_sentences,
        raw_linguistic=ablations.summarizer,
        remote=remote,
        extra_sentences=triple_sentences_by_entity(gazetteer, triples) if triples else None,
    )
    logger.info("pair material: %d built, %d skipped", report.built, report.skipped)
    vocab_texts = (
        [p.text for p in paragraphs]
        + [m.description.text for m in material]
        + [e.name for e in gazetteer.entities]
    )
    vocab = build_vocab(vocab_texts, max_size=cfg.vocab_size)
    pairs, enc_report = encode_pair_material(material, vocab, cfg.max_seq_len)
    if enc_report.skipped:
        logger.info("encoding skipped %d pairs", enc_report.skipped)
    return material, vocab, pairs


def pretrain_encoder(
    pairs: list[TrainingPair],
    vocab: Vocab,
    gazetteer: Gazetteer,
    cfg: RunConfig,
    log_path=None,
) -> ContrastivePretrainer:
    if log_path is not None:
        # the log is append-only within a run; a rerun starts it fresh
        Path(log_path).unlink(missing_ok=True)
    trainer = ContrastivePretrainer(
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        ff_dim=cfg.ff_dim,
        max_seq_len=cfg.max_seq_len,
        temperature=cfg.temperature,
        candidate_mode=cfg.candidate_mode,
        mask_rate=cfg.mask_rate,
        mlm_weight=cfg.mlm_weight,
        lr=cfg.lr,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        ablate=tuple(cfg.ablate),
        hard_negative_radius_km=cfg.hard_negative_radius_km,
        log_path=log_path,
    )
    return trainer.fit(pairs, vocab, gazetteer=gazetteer)


def linking_report(
    linker: ToponymLinker,
    material: list[PairMaterial],
    ks: tuple[int, ...] = (1, 5, 10),
) -> dict:
    """Retrieve each pair's description against the index; R@k over pairs."""
    ranked = []
    gold = []
    for m in material:
        cands = linker.top_k(m.description.text, m.description.anchor_span, k=max(ks))
        ranked.append([c.entity_id for c in cands])
        gold.append(m.entity_id)
    report = {f"r_at_{k}": recall_at_k(ranked, gold, k) for k in ks}
    report["n_queries"] = len(gold)
    return report


def recognition_report(
    recognizer: ToponymRecognizer, paragraphs: list[AnnotatedParagraph]
) -> dict:
    """Token- and entity-level P/R/F1 of the recognizer on a corpus."""
    pred_tag_seqs = []
    gold_tag_seqs = []
    pred_spans = []
    gold_spans = []
    for para in paragraphs:
        _, gold_tags = paragraph_to_bio(para)
        pred = recognizer.predict_tags(para.text)
        pred_tags = [tag for _, tag in pred]
        # predict_tags truncates to max_seq_len; align the gold sequence
        gold_tags = gold_tags[: len(pred_tags)]
        pred_tag_seqs.extend(pred_tags)
        gold_tag_seqs.extend(gold_tags)
        pred_spans.append(set(tags_to_spans(pred_tags)))
        gold_spans.append(set(tags_to_spans(gold_tags)))
    return {
        "token_b": token_prf(pred_tag_seqs, gold_tag_seqs, "B-topo").to_dict(),
        "token_i": token_prf(pred_tag_seqs, gold_tag_seqs, "I-topo").to_dict(),
        "entity": entity_prf(pred_spans, gold_spans).to_dict(),
    }


def typing_samples(
    gazetteer: Gazetteer, typing_records, cfg: RunConfig
) -> tuple[list, list]:
    """(pseudo_sentences, labels) joined against the gazetteer."""
    pseudos = []
    labels = []
    for rec in typing_records:
        ent = gazetteer.by_id.get(rec["anchor_id"])
        if ent is None:
            raise ValueError(f"typing sample references unknown entity {rec['anchor_id']!r}")
        pseudos.append(
            linearize(ent, neighbors_of(gazetteer, ent.id, cfg.n_neighbors), cfg.coord_scale)
        )
        labels.append(rec["class"])
    return pseudos, labels


def run_demo(
    out_dir,
    seed: int = 0,
    *,
    n_entities: int = 50,
    n_docs: int = 30,
    cfg: RunConfig | None = None,
) -> dict:
    """Synthetic world -> pretrain -> linking, recognition, typing metrics."""
    cfg = (cfg or RunConfig()).override(seed=seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = generate_synthetic_world(out_dir / "world", seed, n_entities, n_docs)
    gazetteer = load_gazetteer(world.gazetteer)
    docs = list(read_jsonl(world.corpus))

    # Document-level split for recognition; pretraining sees every document.
    train_idx, heldout_idx = train_test_split_indices(
        len(docs), cfg.train_fraction, seed
    )
    paragraphs, _ = annotate_corpus(docs, gazetteer)
    train_paragraphs, _ = annotate_corpus([docs[i] for i in train_idx], gazetteer)
    heldout_paragraphs, _ = annotate_corpus([docs[i] for i in heldout_idx], gazetteer)

    material, vocab, pairs = build_pairs(gazetteer, paragraphs, cfg)
    trainer = pretrain_encoder(
        pairs, vocab, gazetteer, cfg, log_path=out_dir / "metrics.jsonl"
    )
    encoder = trainer.encoder_

    ablations = Ablations.from_names(cfg.ablate)
    use_spatial = not ablations.spatial

    linker = ToponymLinker(
        encoder,
        vocab,
        n_neighbors=cfg.n_neighbors,
        coord_scale=cfg.coord_scale,
        max_seq_len=cfg.max_seq_len,
        use_spatial=use_spatial,
    ).fit(gazetteer)
    linking = linking_report(linker, material)

    recognizer = ToponymRecognizer(
        encoder,
        vocab,
        max_seq_len=cfg.max_seq_len,
        lr=cfg.finetune_lr,
        steps=cfg.finetune_steps,
        batch_size=cfg.finetune_batch_size,
        seed=seed,
        head_only=cfg.head_only,
        use_spatial=use_spatial,
    ).fit(train_paragraphs)
    recognition = {
        "train": recognition_report(recognizer, train_paragraphs),
        "heldout": recognition_report(recognizer, heldout_paragraphs),
    }

    typing_records = list(read_jsonl(world.typing))
    pseudos, labels = typing_samples(gazetteer, typing_records, cfg)
    tr_idx, te_idx = train_test_split_indices(len(pseudos), cfg.train_fraction, seed)
    typer = GeoEntityTyper(
        encoder,
        vocab,
        max_seq_len=cfg.max_seq_len,
        lr=cfg.finetune_lr,
        steps=cfg.finetune_steps,
        batch_size=cfg.finetune_batch_size,
        seed=seed,
        head_only=cfg.head_only,
        use_spatial=use_spatial,
    ).fit([pseudos[i] for i in tr_idx], [labels[i] for i in tr_idx])
    test_pred = typer.predict([pseudos[i] for i in te_idx])
    test_gold = [labels[i] for i in te_idx]
    per_class, micro = micro_f1(test_pred, test_gold, AMENITY_CLASSES)
    typing = {
        "micro_f1": micro,
        "per_class_f1": dict(zip(AMENITY_CLASSES, per_class)),
        "n_test": len(te_idx),
    }

    final_losses = trainer.history_[-1] if trainer.history_ else {}
    return {
        "seed": seed,
        "config_hash": cfg.config_hash(),
        "n_entities": n_entities,
        "n_docs": n_docs,
        "n_pairs": len(pairs),
        "pretrain": {"steps": cfg.steps, "final": final_losses},
        "linking": linking,
        "recognition": recognition,
        "typing": typing,
    }
