"""Location description generation for anchor entities.

The default path is a deterministic template: keep the first few linguistic
sentences that mention the anchor, then append one generated sentence
listing the nearest neighbors. An optional remote summarization service can
rewrite the description instead; any remote failure falls back to the
template so the pipeline never depends on the network. Remote responses are
cached on disk so reruns are reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path

import requests

from .geodata import fold
from .linearizer import PseudoSentence

logger = logging.getLogger(__name__)

ENV_LLM_URL = "GEOREASON_LLM_URL"
ENV_LLM_KEY = "GEOREASON_LLM_KEY"

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


class SummaryError(ValueError):
    """The description could not be produced (anchor name absent)."""


@dataclass(frozen=True)
class LocationDescription:
    """A textual description of an anchor entity, with its name span."""

    anchor_id: str
    text: str
    anchor_span: tuple[int, int]

    def check(self, anchor_name: str) -> None:
        s, e = self.anchor_span
        if not self.text:
            raise SummaryError(f"{self.anchor_id}: empty description")
        if fold(self.text[s:e]) != fold(anchor_name):
            raise SummaryError(
                f"{self.anchor_id}: anchor_span does not cover the anchor name"
            )


@dataclass
class SummaryContext:
    """What the summarizer sees: linguistic sentences plus spatial context."""

    anchor_id: str
    anchor_name: str
    linguistic_sentences: list[str]
    pseudo: PseudoSentence

    def check(self) -> None:
        if not self.linguistic_sentences and not self.pseudo.neighbor_names:
            raise ValueError(
                f"{self.anchor_id}: need linguistic sentences or neighbors"
            )


def split_sentences(text: str) -> list[str]:
    """Naive sentence split on terminal punctuation followed by whitespace."""
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def find_anchor_span(text: str, anchor_name: str) -> tuple[int, int] | None:
    """Character span of the first case-folded occurrence of the name."""
    idx = fold(text).find(fold(anchor_name))
    if idx < 0:
        return None
    return idx, idx + len(anchor_name)


def _near_sentence(anchor_name: str, neighbor_names: list[str]) -> str:
    heads = neighbor_names[:3]
    if len(heads) == 1:
        tail = heads[0]
    elif len(heads) == 2:
        tail = f"{heads[0]} and {heads[1]}"
    else:
        tail = f"{heads[0]}, {heads[1]}, and {heads[2]}"
    return f"{anchor_name} is near {tail}."


def summarize_template(ctx: SummaryContext, max_sentences: int = 3) -> LocationDescription:
    """Deterministic description: anchor-mentioning sentences + neighbor sentence.

    Takes the first `max_sentences` linguistic sentences that contain the
    anchor name (case-folded), then, when the context has neighbors, appends
    "<anchor> is near <n1>, <n2>, and <n3>." for the three nearest. The
    anchor span points at the first occurrence of the anchor name.
    """
    ctx.check()
    folded_name = fold(ctx.anchor_name)
    picked = [
        s for s in ctx.linguistic_sentences if folded_name in fold(s)
    ][:max_sentences]
    parts = list(picked)
    if ctx.pseudo.neighbor_names:
        parts.append(_near_sentence(ctx.anchor_name, ctx.pseudo.neighbor_names))
    text = " ".join(parts)
    span = find_anchor_span(text, ctx.anchor_name)
    if span is None:
        raise SummaryError(
            f"{ctx.anchor_id}: anchor name {ctx.anchor_name!r} absent from description"
        )
    desc = LocationDescription(anchor_id=ctx.anchor_id, text=text, anchor_span=span)
    desc.check(ctx.anchor_name)
    return desc


def render_prompt(ctx: SummaryContext) -> str:
    """The fixed prompt sent to the remote summarization service."""
    lines = [
        f"Write one comprehensive location description of {ctx.anchor_name}.",
        "Geospatial context (nearest first):",
    ]
    for name, dist in zip(ctx.pseudo.neighbor_names, ctx.pseudo.distances_km):
        lines.append(f"- {name} ({dist:.2f} km away)")
    lines.append("Linguistic context:")
    for s in ctx.linguistic_sentences:
        lines.append(f"- {s}")
    lines.append(f"The description must mention {ctx.anchor_name} by name.")
    return "\n".join(lines)


@dataclass
class RemoteConfig:
    """Remote summarizer endpoint, normally taken from the environment."""

    url: str
    api_key: str | None = None
    timeout_s: float = 10.0
    cache_dir: str | Path | None = None

    @classmethod
    def from_env(cls, cache_dir: str | Path | None = None) -> "RemoteConfig | None":
        url = os.environ.get(ENV_LLM_URL)
        if not url:
            return None
        return cls(url=url, api_key=os.environ.get(ENV_LLM_KEY), cache_dir=cache_dir)


class SummaryCache:
    """Append-only JSON Lines cache of {key, text} records."""

    def __init__(self, cache_dir: str | Path) -> None:
        self._path = Path(cache_dir) / "summaries.jsonl"
        self._mem: dict[str, str] = {}
        if self._path.exists():
            with open(self._path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        rec = json.loads(line)
                        self._mem[rec["key"]] = rec["text"]

    def get(self, key: str) -> str | None:
        return self._mem.get(key)

    def put(self, key: str, text: str) -> None:
        self._mem[key] = text
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"key": key, "text": text}, ensure_ascii=False) + "\n")


def _cache_key(ctx: SummaryContext, prompt: str) -> str:
    digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:32]
    return f"{ctx.anchor_id}:{digest}"


def summarize_remote(
    ctx: SummaryContext,
    config: RemoteConfig,
    max_sentences: int = 3,
) -> LocationDescription:
    """Ask the remote service for a description; fall back to the template.

    Protocol: HTTP POST of {"prompt": str}, JSON response {"text": str}.
    A response is accepted only if it contains the anchor name; every
    failure path (timeout, non-2xx, bad payload, missing name) logs a
    warning and returns the template description instead.
    """
    ctx.check()
    prompt = render_prompt(ctx)
    cache = SummaryCache(config.cache_dir) if config.cache_dir else None
    key = _cache_key(ctx, prompt)

    text: str | None = cache.get(key) if cache else None
    fetched = False
    if text is None:
        fetched = True
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        try:
            resp = requests.post(
                config.url,
                json={"prompt": prompt},
                headers=headers,
                timeout=config.timeout_s,
            )
            resp.raise_for_status()
            text = str(resp.json()["text"])
        except Exception as exc:  # noqa: BLE001  (any remote failure falls back)
            logger.warning(
                "summarize_remote: %s failed for %s (%s); using template",
                config.url,
                ctx.anchor_id,
                exc,
            )
            return summarize_template(ctx, max_sentences=max_sentences)

    span = find_anchor_span(text, ctx.anchor_name)
    if span is None:
        logger.warning(
            "summarize_remote: response for %s lacks the anchor name; using template",
            ctx.anchor_id,
        )
        return summarize_template(ctx, max_sentences=max_sentences)
    if cache and fetched:
        cache.put(key, text)
    desc = LocationDescription(anchor_id=ctx.anchor_id, text=text, anchor_span=span)
    desc.check(ctx.anchor_name)
    return desc
