"""Gazetteer ingestion, trie-based toponym matching, and corpus annotation.

The gazetteer is a flat store of point geo-entities (name, lat/lon, amenity
class, optional Wikipedia/Wikidata links) read from JSON Lines. Raw text
corpora are annotated by matching gazetteer names with a phrase trie:
matching is case-folded, restricted to word boundaries, and leftmost-longest,
so "San Jose" wins over "San". Paragraphs that mention at least one
gazetteer name become training samples; relation triples are verbalized into
single template sentences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

from .validation import check_lat_lon

logger = logging.getLogger(__name__)

# The nine OSM amenity classes used for geo-entity typing, plus a catch-all.
AMENITY_CLASSES: tuple[str, ...] = (
    "education",
    "entertainment",
    "facility",
    "financial",
    "healthcare",
    "public_service",
    "sustenance",
    "transportation",
    "waste_management",
)
ALL_CLASSES: tuple[str, ...] = AMENITY_CLASSES + ("other",)


class GazetteerFormatError(ValueError):
    """Malformed or inconsistent gazetteer input."""


class CorpusFormatError(ValueError):
    """Malformed corpus input."""


def fold(text: str) -> str:
    """Case-fold `text` character by character, preserving its length.

    Plain str.lower()/casefold() may change string length for some code
    points (e.g. 'İ'), which would corrupt span offsets; such characters
    are left as-is.
    """
    out = []
    for ch in text:
        low = ch.casefold()
        out.append(low if len(low) == 1 else ch)
    return "".join(out)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


@dataclass(frozen=True)
class GeoEntity:
    """One gazetteer record: a named point with an amenity class."""

    id: str
    name: str
    lat: float
    lon: float
    klass: str = "other"
    wikipedia_ref: str | None = None
    wikidata_qid: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise GazetteerFormatError("entity id must be non-empty")
        if not self.name:
            raise GazetteerFormatError(f"entity {self.id!r}: name must be non-empty")
        check_lat_lon(self.lat, self.lon, what=f"entity {self.id!r}")
        if self.klass not in ALL_CLASSES:
            raise GazetteerFormatError(
                f"entity {self.id!r}: unknown class {self.klass!r}"
            )

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "name": self.name,
            "lat": self.lat,
            "lon": self.lon,
            "class": self.klass,
        }
        if self.wikipedia_ref is not None:
            rec["wikipedia_ref"] = self.wikipedia_ref
        if self.wikidata_qid is not None:
            rec["wikidata_qid"] = self.wikidata_qid
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "GeoEntity":
        return cls(
            id=rec["id"],
            name=rec["name"],
            lat=float(rec["lat"]),
            lon=float(rec["lon"]),
            klass=rec.get("class", "other"),
            wikipedia_ref=rec.get("wikipedia_ref"),
            wikidata_qid=rec.get("wikidata_qid"),
        )


@dataclass
class Gazetteer:
    """Immutable-after-build store of geo-entities with id and name indexes.

    `by_name` keys are the verbatim entity names; `ids_for_name` offers the
    case-folded lookup used during corpus annotation. Homonyms are allowed:
    one name may map to several entity ids, in insertion order.
    """

    entities: list[GeoEntity] = field(default_factory=list)
    by_id: dict[str, GeoEntity] = field(default_factory=dict)
    by_name: dict[str, list[str]] = field(default_factory=dict)
    _by_folded_name: dict[str, list[str]] = field(default_factory=dict, repr=False)

    @classmethod
    def from_entities(cls, entities: Iterable[GeoEntity]) -> "Gazetteer":
        gaz = cls()
        for ent in entities:
            gaz._add(ent)
        return gaz

    def _add(self, ent: GeoEntity) -> None:
        if ent.id in self.by_id:
            raise GazetteerFormatError(f"duplicate entity id {ent.id!r}")
        self.entities.append(ent)
        self.by_id[ent.id] = ent
        self.by_name.setdefault(ent.name, []).append(ent.id)
        self._by_folded_name.setdefault(fold(ent.name), []).append(ent.id)

    def ids_for_name(self, surface: str) -> list[str]:
        """All entity ids whose name equals `surface` under case folding."""
        return list(self._by_folded_name.get(fold(surface), []))

    def names(self) -> list[str]:
        return list(self.by_name)

    def __len__(self) -> int:
        return len(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.by_id


def load_gazetteer(path) -> Gazetteer:
    """Read a JSON Lines gazetteer file.

    Each line is one object with fields id, name, lat, lon, class and the
    optional wikipedia_ref / wikidata_qid. Errors carry the 1-based line
    number of the offending record.
    """
    gaz = Gazetteer()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GazetteerFormatError(
                    f"{path}: line {lineno}: invalid JSON: {exc}"
                ) from exc
            try:
                ent = GeoEntity.from_record(rec)
                gaz._add(ent)
            except (KeyError, TypeError, ValueError) as exc:
                raise GazetteerFormatError(
                    f"{path}: line {lineno}: {exc}"
                ) from exc
    return gaz


def save_gazetteer(gazetteer: Gazetteer, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ent in gazetteer.entities:
            fh.write(json.dumps(ent.to_record(), ensure_ascii=False) + "\n")


class PhraseTrie:
    """Character-level trie over case-folded phrases.

    Matching is exact on the folded form; `match_phrases` adds the word
    boundary and leftmost-longest rules on top.
    """

    __slots__ = ("_root", "_size")

    def __init__(self, names: Iterable[str] = ()) -> None:
        self._root: dict = {}
        self._size = 0
        for name in names:
            self.add(name)

    def add(self, name: str) -> None:
        if not name:
            raise ValueError("cannot insert an empty phrase")
        node = self._root
        for ch in fold(name):
            node = node.setdefault(ch, {})
        if not node.get("\0", False):
            node["\0"] = True
            self._size += 1

    def __contains__(self, name: str) -> bool:
        node = self._root
        for ch in fold(name):
            node = node.get(ch)
            if node is None:
                return False
        return bool(node.get("\0", False))

    def __len__(self) -> int:
        return self._size

    def longest_match_at(self, folded_text: str, start: int) -> int | None:
        """Length of the longest inserted phrase starting at `start`.

        `folded_text` must already be case-folded. Word boundaries are not
        checked here. Returns None when nothing matches.
        """
        node = self._root
        best: int | None = None
        i = start
        n = len(folded_text)
        while True:
            if node.get("\0", False) and i > start:
                best = i - start
            if i >= n:
                break
            node = node.get(folded_text[i])
            if node is None:
                break
            i += 1
        return best

    def match_lengths_at(self, folded_text: str, start: int) -> list[int]:
        """All match lengths starting at `start`, ascending."""
        node = self._root
        out: list[int] = []
        i = start
        n = len(folded_text)
        while True:
            if node.get("\0", False) and i > start:
                out.append(i - start)
            if i >= n:
                break
            node = node.get(folded_text[i])
            if node is None:
                break
            i += 1
        return out


def build_trie(names: Sequence[str]) -> PhraseTrie:
    """Build a phrase trie containing exactly the given names."""
    return PhraseTrie(names)


@dataclass(frozen=True)
class MentionSpan:
    """A toponym occurrence in text, by character offsets [start, end)."""

    start: int
    end: int
    surface: str
    entity_id: str | None = None
    # All gazetteer candidates for this surface form, in gazetteer order.
    # entity_id is the first of these when resolution succeeded.
    candidate_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")


@dataclass
class AnnotatedParagraph:
    """A paragraph with toponym mentions.

    Training samples emitted by annotate_corpus always carry at least one
    mention; prediction files read through the same record format may not.
    """

    doc_id: str
    text: str
    mentions: list[MentionSpan]

    def check(self) -> None:
        prev_end = 0
        for m in self.mentions:
            if m.start < prev_end:
                raise ValueError(f"{self.doc_id}: overlapping or unsorted mentions")
            if m.end > len(self.text):
                raise ValueError(f"{self.doc_id}: span past end of text")
            if self.text[m.start : m.end] != m.surface:
                raise ValueError(f"{self.doc_id}: surface mismatch at {m.start}")
            prev_end = m.end


def match_phrases(trie: PhraseTrie, text: str) -> list[MentionSpan]:
    """Find non-overlapping, leftmost-longest trie matches at word boundaries.

    A candidate [s, e) is kept only if s and e both fall on word boundaries
    of `text`. Scanning is over the case-folded text, so offsets are valid
    for the original. Returns spans sorted by start with `surface` filled
    from the original text.
    """
    folded = fold(text)
    n = len(folded)
    spans: list[MentionSpan] = []
    i = 0
    while i < n:
        if i > 0 and _is_word_char(folded[i - 1]) and _is_word_char(folded[i]):
            i += 1
            continue
        best_end = None
        for length in trie.match_lengths_at(folded, i):
            e = i + length
            if e == n or not (_is_word_char(folded[e - 1]) and _is_word_char(folded[e])):
                best_end = e
        if best_end is None:
            i += 1
            continue
        spans.append(MentionSpan(start=i, end=best_end, surface=text[i:best_end]))
        i = best_end
    return spans


def split_paragraphs(text: str) -> list[tuple[int, str]]:
    """Split on blank lines; returns (offset_in_text, paragraph) pairs."""
    out: list[tuple[int, str]] = []
    start: int | None = None
    content_end = 0
    pos = 0
    for line in text.split("\n"):
        if line.strip():
            if start is None:
                start = pos
            content_end = pos + len(line)
        elif start is not None:
            out.append((start, text[start:content_end]))
            start = None
        pos += len(line) + 1
    if start is not None:
        out.append((start, text[start:content_end]))
    return out


def annotate_corpus(
    docs: Iterable[dict], gazetteer: Gazetteer
) -> tuple[list[AnnotatedParagraph], int]:
    """Annotate documents with gazetteer mentions.

    Each document is {"doc_id": str, "text": str}; a pre-annotated document
    may instead carry explicit "mentions" which are trusted as given.
    Documents are split into blank-line paragraphs; paragraphs without any
    mention are dropped. Returns (paragraphs, dropped_count).
    """
    trie = build_trie(gazetteer.names()) if len(gazetteer) else PhraseTrie()
    paragraphs: list[AnnotatedParagraph] = []
    dropped = 0
    for doc in docs:
        doc_id = doc["doc_id"]
        text = doc["text"]
        if "mentions" in doc:
            mentions = [
                MentionSpan(
                    start=m["start"],
                    end=m["end"],
                    surface=text[m["start"] : m["end"]],
                    entity_id=m.get("entity_id"),
                    candidate_ids=tuple([m["entity_id"]] if m.get("entity_id") else ()),
                )
                for m in doc["mentions"]
            ]
            para = AnnotatedParagraph(doc_id=doc_id, text=text, mentions=mentions)
            if mentions:
                para.check()
                paragraphs.append(para)
            else:
                dropped += 1
            continue
        for k, (p_off, p_text) in enumerate(split_paragraphs(text)):
            raw = match_phrases(trie, p_text)
            mentions = []
            for span in raw:
                candidates = gazetteer.ids_for_name(span.surface)
                mentions.append(
                    replace(
                        span,
                        entity_id=candidates[0] if candidates else None,
                        candidate_ids=tuple(candidates),
                    )
                )
            mentions = [m for m in mentions if m.entity_id is not None]
            if not mentions:
                dropped += 1
                continue
            para = AnnotatedParagraph(
                doc_id=f"{doc_id}#{k}", text=p_text, mentions=mentions
            )
            para.check()
            paragraphs.append(para)
    if dropped:
        logger.info("annotate_corpus: dropped %d paragraphs with no mentions", dropped)
    return paragraphs, dropped


@dataclass(frozen=True)
class RelationTriple:
    """A (subject QID, predicate label, object label) fact."""

    subject_qid: str
    predicate_label: str
    object_label: str

    def __post_init__(self) -> None:
        if not (self.subject_qid and self.predicate_label and self.object_label):
            raise ValueError("triple fields must be non-empty")


def triples_to_sentences(
    triples: Sequence[RelationTriple], labels: dict[str, str]
) -> list[str]:
    """Verbalize triples with the fixed template "<subject> <predicate> <object>."

    Triples whose subject QID has no entry in `labels` are skipped with a
    warning.
    """
    out: list[str] = []
    for t in triples:
        name = labels.get(t.subject_qid)
        if name is None:
            logger.warning("triples_to_sentences: no label for %s, skipped", t.subject_qid)
            continue
        out.append(f"{name} {t.predicate_label} {t.object_label}.")
    return out


def read_triples(path) -> list[RelationTriple]:
    """Read a JSON Lines triples file."""
    triples = []
    for lineno, rec in enumerate(read_jsonl(path), start=1):
        try:
            triples.append(
                RelationTriple(
                    subject_qid=rec["subject_qid"],
                    predicate_label=rec["predicate_label"],
                    object_label=rec["object_label"],
                )
            )
        except (KeyError, ValueError) as exc:
            raise CorpusFormatError(f"{path}: record {lineno}: {exc}") from exc
    return triples


def read_jsonl(path) -> Iterator[dict]:
    """Yield one parsed object per non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: invalid JSON") from exc


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def paragraph_to_record(para: AnnotatedParagraph) -> dict:
    return {
        "doc_id": para.doc_id,
        "text": para.text,
        "mentions": [
            {
                "start": m.start,
                "end": m.end,
                "entity_id": m.entity_id,
                "candidate_ids": list(m.candidate_ids),
            }
            for m in para.mentions
        ],
    }


def paragraph_from_record(rec: dict) -> AnnotatedParagraph:
    text = rec["text"]
    para = AnnotatedParagraph(
        doc_id=rec["doc_id"],
        text=text,
        mentions=[
            MentionSpan(
                start=m["start"],
                end=m["end"],
                surface=text[m["start"] : m["end"]],
                entity_id=m.get("entity_id"),
                candidate_ids=tuple(m.get("candidate_ids", ())),
            )
            for m in rec["mentions"]
        ],
    )
    para.check()
    return para
