"""Command-line pipeline: one subcommand per stage.

    build-corpus    annotate raw documents against a gazetteer
    summarize       dump location descriptions + pseudo-sentences
    pretrain        contrastive + MLM pretraining, writes a model dir
    finetune-rec    train the toponym recognition head
    finetune-type   train the geo-entity typing head (8:2 split)
    build-index     embed the gazetteer into a linking index
    link            retrieve candidates for mention queries
    eval            score prediction files against gold files
    demo            full synthetic-world pipeline, prints the report

Every run writes a manifest.json (config hash, seed, input digests,
versions) into --out, and all outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import __version__
from .config import RunConfig
from .geodata import (
    load_gazetteer,
    paragraph_from_record,
    paragraph_to_record,
    read_jsonl,
    read_triples,
)
from .ioutil import atomic_write_json, atomic_write_jsonl, sha256_file
from .linearizer import pseudo_to_record
from .metrics import entity_prf, micro_f1, recall_at_k, token_prf
from .model.checkpoint import load_checkpoint, load_state_from_arrays, save_checkpoint, state_dict_tensors
from .model.encoder import EncoderConfig, GroundedEncoder
from .model.vocab import Vocab
from .pipeline import (
    build_pairs,
    load_corpus_paragraphs,
    pretrain_encoder,
    recognition_report,
    run_demo,
    typing_samples,
)
from .summarizer import RemoteConfig
from .tasks import (
    BIO_TAGS,
    GeoEntityTyper,
    ToponymLinker,
    ToponymRecognizer,
    paragraph_to_bio,
    tags_to_spans,
    train_test_split_indices,
)

logger = logging.getLogger(__name__)

ABLATION_CHOICES = ("contrastive", "mlm", "spatial", "summarizer")


# ---------------------------------------------------------------------------
# shared plumbing


def _effective_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.override(
        seed=getattr(args, "seed", None),
        k=getattr(args, "k", None),
        ablate=(tuple(args.ablate) if getattr(args, "ablate", None) else None),
    )


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, inputs: dict) -> None:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in inputs.items()
        },
        "versions": {
            "georeason": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    atomic_write_json(out_dir / "manifest.json", manifest)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def save_model_dir(
    out_dir: Path,
    encoder: GroundedEncoder,
    vocab: Vocab,
    heads: dict[str, nn.Module] | None = None,
    extra_config: dict | None = None,
) -> None:
    """checkpoint.bin (encoder + heads) and vocab.jsonl under out_dir."""
    tensors = state_dict_tensors(encoder, "encoder.")
    head_names = []
    for name, module in (heads or {}).items():
        tensors.update(state_dict_tensors(module, f"head.{name}."))
        head_names.append(name)
    config = {
        "encoder": encoder.config.to_dict(),
        "heads": sorted(head_names),
        **(extra_config or {}),
    }
    save_checkpoint(out_dir / "checkpoint.bin", config, tensors)
    vocab.save(out_dir / "vocab.jsonl")


def load_model_dir(model_dir) -> tuple[GroundedEncoder, Vocab, dict, dict]:
    """(encoder, vocab, raw head arrays, checkpoint config)."""
    model_dir = Path(model_dir)
    config, tensors = load_checkpoint(model_dir / "checkpoint.bin")
    encoder = GroundedEncoder(EncoderConfig(**config["encoder"]))
    load_state_from_arrays(encoder, tensors, "encoder.")
    vocab = Vocab.load(model_dir / "vocab.jsonl")
    heads = {k: v for k, v in tensors.items() if k.startswith("head.")}
    return encoder, vocab, heads, config


def _load_linear_head(heads: dict, name: str, d_model: int, n_out: int) -> nn.Linear:
    head = nn.Linear(d_model, n_out)
    load_state_from_arrays(head, heads, f"head.{name}.")
    return head


def load_recognizer(model_dir, cfg: RunConfig) -> ToponymRecognizer:
    encoder, vocab, heads, config = load_model_dir(model_dir)
    if "tagging" not in config.get("heads", []):
        raise ValueError(f"{model_dir}: checkpoint has no tagging head")
    rec = ToponymRecognizer(
        encoder,
        vocab,
        max_seq_len=encoder.config.max_seq_len,
        use_spatial="spatial" not in cfg.ablate,
    )
    rec.encoder_ = encoder
    rec.vocab_ = vocab
    rec.head_ = _load_linear_head(heads, "tagging", encoder.config.d_model, len(BIO_TAGS))
    return rec


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_corpus(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    paragraphs, dropped = load_corpus_paragraphs(args.corpus, gazetteer)
    atomic_write_jsonl(out / "annotated.jsonl", (paragraph_to_record(p) for p in paragraphs))
    _write_manifest(out, "build-corpus", cfg, {"gazetteer": args.gazetteer, "corpus": args.corpus})
    print(f"annotated {len(paragraphs)} paragraphs ({dropped} dropped)")
    return 0


def cmd_summarize(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    paragraphs, _ = load_corpus_paragraphs(args.corpus, gazetteer)
    triples = read_triples(args.triples) if args.triples else None
    remote = RemoteConfig.from_env(cache_dir=out / "llm_cache")
    material, _vocab, _pairs = build_pairs(
        gazetteer, paragraphs, cfg, remote=remote, triples=triples
    )
    atomic_write_jsonl(
        out / "descriptions.jsonl",
        (
            {
                "anchor_id": m.entity_id,
                "text": m.description.text,
                "anchor_span": list(m.description.anchor_span),
            }
            for m in material
        ),
    )
    atomic_write_jsonl(out / "pseudo.jsonl", (pseudo_to_record(m.pseudo) for m in material))
    _write_manifest(out, "summarize", cfg, {"gazetteer": args.gazetteer, "corpus": args.corpus})
    print(f"wrote {len(material)} descriptions ({'remote' if remote else 'template'} summarizer)")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    paragraphs, _ = load_corpus_paragraphs(args.corpus, gazetteer)
    triples = read_triples(args.triples) if args.triples else None
    _material, vocab, pairs = build_pairs(gazetteer, paragraphs, cfg, triples=triples)
    trainer = pretrain_encoder(pairs, vocab, gazetteer, cfg, log_path=out / "metrics.jsonl")
    save_model_dir(
        out,
        trainer.encoder_,
        vocab,
        heads={"mlm": trainer.mlm_head_},
        extra_config={"stage": "pretrained"},
    )
    _write_manifest(out, "pretrain", cfg, {"gazetteer": args.gazetteer, "corpus": args.corpus})
    final = trainer.history_[-1] if trainer.history_ else {}
    print(json.dumps({"steps": cfg.steps, "final": final}))
    return 0


def cmd_finetune_rec(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    paragraphs, _ = load_corpus_paragraphs(args.corpus, gazetteer)
    encoder = vocab = None
    if args.model_dir:
        encoder, vocab, _, _ = load_model_dir(args.model_dir)
    recognizer = ToponymRecognizer(
        encoder,
        vocab,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        ff_dim=cfg.ff_dim,
        max_seq_len=cfg.max_seq_len,
        lr=cfg.finetune_lr,
        steps=cfg.finetune_steps,
        batch_size=cfg.finetune_batch_size,
        seed=cfg.seed,
        head_only=cfg.head_only,
        use_spatial="spatial" not in cfg.ablate,
    ).fit(paragraphs)
    save_model_dir(
        out,
        recognizer.encoder_,
        recognizer.vocab_,
        heads={"tagging": recognizer.head_},
        extra_config={"stage": "finetuned-recognition"},
    )
    report = {"train": recognition_report(recognizer, paragraphs)}
    if args.eval_corpus:
        eval_paragraphs, _ = load_corpus_paragraphs(args.eval_corpus, gazetteer)
        report["eval"] = recognition_report(recognizer, eval_paragraphs)
        atomic_write_jsonl(
            out / "predictions.jsonl",
            (
                {
                    "doc_id": p.doc_id,
                    "text": p.text,
                    "mentions": [
                        {"start": s, "end": e}
                        for s, e in recognizer.predict_mention_spans(p.text)
                    ],
                }
                for p in eval_paragraphs
            ),
        )
    atomic_write_json(out / "report.json", report)
    _write_manifest(out, "finetune-rec", cfg, {"gazetteer": args.gazetteer, "corpus": args.corpus})
    print(json.dumps({"train_entity_f1": report["train"]["entity"]["f1"]}))
    return 0


def cmd_finetune_type(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    records = list(read_jsonl(args.typing))
    pseudos, labels = typing_samples(gazetteer, records, cfg)
    train_idx, test_idx = train_test_split_indices(len(pseudos), cfg.train_fraction, cfg.seed)
    encoder = vocab = None
    if args.model_dir:
        encoder, vocab, _, _ = load_model_dir(args.model_dir)
    typer = GeoEntityTyper(
        encoder,
        vocab,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_layers=cfg.n_layers,
        ff_dim=cfg.ff_dim,
        max_seq_len=cfg.max_seq_len,
        lr=cfg.finetune_lr,
        steps=cfg.finetune_steps,
        batch_size=cfg.finetune_batch_size,
        seed=cfg.seed,
        head_only=cfg.head_only,
        use_spatial="spatial" not in cfg.ablate,
    ).fit([pseudos[i] for i in train_idx], [labels[i] for i in train_idx])
    pred = typer.predict([pseudos[i] for i in test_idx])
    gold = [labels[i] for i in test_idx]
    per_class, micro = micro_f1(pred, gold, typer.classes_)
    report = {
        "micro_f1": micro,
        "per_class_f1": dict(zip(typer.classes_, per_class)),
        "n_train": len(train_idx),
        "n_test": len(test_idx),
    }
    save_model_dir(
        out,
        typer.encoder_,
        typer.vocab_,
        heads={"typing": typer.head_},
        extra_config={"stage": "finetuned-typing", "classes": list(typer.classes_)},
    )
    atomic_write_json(out / "report.json", report)
    _write_manifest(out, "finetune-type", cfg, {"gazetteer": args.gazetteer, "typing": args.typing})
    print(json.dumps({"micro_f1": micro}))
    return 0


def cmd_build_index(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    gazetteer = load_gazetteer(args.gazetteer)
    encoder, vocab, _, _ = load_model_dir(args.model_dir)
    linker = ToponymLinker(
        encoder,
        vocab,
        n_neighbors=cfg.n_neighbors,
        coord_scale=cfg.coord_scale,
        max_seq_len=cfg.max_seq_len,
        use_spatial="spatial" not in cfg.ablate,
    ).fit(gazetteer)
    linker.save_index(out / "index.bin")
    _write_manifest(out, "build-index", cfg, {"gazetteer": args.gazetteer})
    print(f"indexed {len(linker.entity_ids_)} entities")
    return 0


def cmd_link(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    encoder, vocab, _, _ = load_model_dir(args.model_dir)
    linker = ToponymLinker(
        encoder,
        vocab,
        n_neighbors=cfg.n_neighbors,
        coord_scale=cfg.coord_scale,
        max_seq_len=cfg.max_seq_len,
        use_spatial="spatial" not in cfg.ablate,
    ).load_index(args.index)
    queries = list(read_jsonl(args.queries))
    results = []
    ranked = []
    gold = []
    for q in queries:
        cands = linker.top_k(q["text"], (q["start"], q["end"]), k=cfg.k)
        results.append(
            {
                **q,
                "candidates": [{"entity_id": c.entity_id, "score": c.score} for c in cands],
            }
        )
        if "gold_id" in q:
            ranked.append([c.entity_id for c in cands])
            gold.append(q["gold_id"])
    atomic_write_jsonl(out / "results.jsonl", results)
    report = {"n_queries": len(queries), "k": cfg.k}
    if gold:
        for k in (1, 5, 10):
            if k <= cfg.k:
                report[f"r_at_{k}"] = recall_at_k(ranked, gold, k)
    atomic_write_json(out / "report.json", report)
    _write_manifest(out, "link", cfg, {"queries": args.queries})
    print(json.dumps(report))
    return 0


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    if args.task in ("rec", "typing") and not args.gold:
        raise ValueError(f"--gold is required for task {args.task!r}")
    if args.task == "rec":
        pred = [paragraph_from_record(r) for r in read_jsonl(args.pred)]
        gold = [paragraph_from_record(r) for r in read_jsonl(args.gold)]
        pred_by_id = {p.doc_id: p for p in pred}
        unknown = set(pred_by_id) - {g.doc_id for g in gold}
        if unknown:
            raise ValueError(f"predictions for unknown doc_ids: {sorted(unknown)[:3]}")
        pred_tag_seqs, gold_tag_seqs = [], []
        pred_spans, gold_spans = [], []
        for g in gold:
            p = pred_by_id.get(g.doc_id)
            if p is None:
                raise ValueError(f"missing prediction for doc_id {g.doc_id!r}")
            _, p_tags = paragraph_to_bio(p)
            _, g_tags = paragraph_to_bio(g)
            pred_tag_seqs.extend(p_tags)
            gold_tag_seqs.extend(g_tags)
            pred_spans.append(set(tags_to_spans(p_tags)))
            gold_spans.append(set(tags_to_spans(g_tags)))
        report = {
            "token_b": token_prf(pred_tag_seqs, gold_tag_seqs, "B-topo").to_dict(),
            "token_i": token_prf(pred_tag_seqs, gold_tag_seqs, "I-topo").to_dict(),
            "entity": entity_prf(pred_spans, gold_spans).to_dict(),
        }
    elif args.task == "typing":
        pred_by_id = {r["anchor_id"]: r["class"] for r in read_jsonl(args.pred)}
        gold_records = list(read_jsonl(args.gold))
        pred, gold = [], []
        for r in gold_records:
            if r["anchor_id"] not in pred_by_id:
                raise ValueError(f"missing prediction for {r['anchor_id']!r}")
            pred.append(pred_by_id[r["anchor_id"]])
            gold.append(r["class"])
        classes = sorted(set(gold) | set(pred))
        per_class, micro = micro_f1(pred, gold, classes)
        report = {"micro_f1": micro, "per_class_f1": dict(zip(classes, per_class))}
    else:  # linking
        ranked, gold = [], []
        for r in read_jsonl(args.pred):
            if "gold_id" not in r:
                raise ValueError("linking eval needs gold_id on every result record")
            ranked.append([c["entity_id"] for c in r["candidates"]])
            gold.append(r["gold_id"])
        report = {f"r_at_{k}": recall_at_k(ranked, gold, k) for k in (1, 5, 10)}
        report["n_queries"] = len(gold)
    atomic_write_json(out / "report.json", report)
    _write_manifest(out, "eval", cfg, {"pred": args.pred, **({"gold": args.gold} if args.gold else {})})
    print(json.dumps(report))
    return 0


def cmd_demo(args) -> int:
    cfg = _effective_config(args)
    if args.steps is not None:
        cfg = cfg.override(steps=args.steps)
    elif not args.config:
        cfg = cfg.override(steps=200)  # quick-demo default
    out = _out_dir(args)
    report = run_demo(
        out,
        seed=cfg.seed,
        n_entities=args.entities,
        n_docs=args.docs,
        cfg=cfg,
    )
    atomic_write_json(out / "report.json", report)
    _write_manifest(out, "demo", cfg, {})
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="georeason",
        description="Geospatially grounded encoder pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, k: bool = False) -> None:
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--ablate",
            action="append",
            choices=ABLATION_CHOICES,
            help="disable a component (repeatable)",
        )
        if k:
            p.add_argument("--k", type=int, default=None, help="retrieval depth")

    p = sub.add_parser("build-corpus", help="annotate documents against a gazetteer")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--corpus", required=True)
    common(p)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("summarize", help="write location descriptions and pseudo-sentences")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", help="optional JSONL of relation triples")
    common(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("pretrain", help="contrastive + MLM pretraining")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", help="optional JSONL of relation triples")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune-rec", help="train the toponym recognition head")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--model-dir", help="pretrained model directory")
    p.add_argument("--eval-corpus", help="held-out corpus to score after training")
    common(p)
    p.set_defaults(func=cmd_finetune_rec)

    p = sub.add_parser("finetune-type", help="train the geo-entity typing head")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--typing", required=True, help="JSONL of {anchor_id, class}")
    p.add_argument("--model-dir", help="pretrained model directory")
    common(p)
    p.set_defaults(func=cmd_finetune_type)

    p = sub.add_parser("build-index", help="embed the gazetteer into a linking index")
    p.add_argument("--gazetteer", required=True)
    p.add_argument("--model-dir", required=True)
    common(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("link", help="retrieve candidates for mention queries")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--index", required=True, help="index file from build-index")
    p.add_argument("--queries", required=True, help="JSONL of {text, start, end, gold_id?}")
    common(p, k=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("eval", help="score predictions against gold files")
    p.add_argument("--task", required=True, choices=("rec", "typing", "linking"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", default=None)
    common(p, k=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="full pipeline on a synthetic world")
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--docs", type=int, default=30)
    p.add_argument("--steps", type=int, default=None, help="pretraining steps (default 200)")
    common(p)
    p.set_defaults(func=cmd_demo)

    return parser


def run(argv=None) -> int:
    """Entry point returning an exit code (0 ok, 1 runtime error, 2 usage)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001  (single-line diagnostics by contract)
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"error: {exc.__class__.__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())
