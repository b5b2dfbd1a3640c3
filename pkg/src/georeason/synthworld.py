"""Seeded synthetic world: gazetteer, text corpus, and typing labels.

A desk-scale stand-in for real OSM/Wikipedia extracts. Entities live in a
handful of spatial clusters inside a bounding box; names are built from a
deliberately small pool of base words plus a class-typical suffix, and a
fraction of entities are exact homonyms placed in other clusters, so that
name tokens alone cannot identify an entity. Documents are template
paragraphs that mention an anchor entity together with its true spatial
neighbors. Everything is drawn from one seeded generator, so identical
arguments produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geodata import AMENITY_CLASSES, Gazetteer, GeoEntity, save_gazetteer, write_jsonl
from .linearizer import neighbors_of

_BASE_NAMES = (
    "Alder", "Basalt", "Cinder", "Dune", "Ember", "Fallow", "Granite",
    "Harbor", "Iris", "Juniper", "Kestrel", "Larch", "Meridian", "Nutmeg",
    "Onyx", "Quill", "Rye", "Saffron", "Thistle", "Umber",
)

_SUFFIXES = {
    "education": ("Academy", "Grammar School"),
    "entertainment": ("Theater", "Arcade"),
    "facility": ("Community Hall", "Annex"),
    "financial": ("Savings Bank", "Credit Union"),
    "healthcare": ("Clinic", "Infirmary"),
    "public_service": ("Courthouse", "Fire Station"),
    "sustenance": ("Diner", "Noodle House"),
    "transportation": ("Depot", "Tram Stop"),
    "waste_management": ("Recycling Plant", "Scrapyard"),
}

_PARAGRAPH_TEMPLATES = (
    "Crowds gather at {a} every weekend. The short walk from {a} to {b} "
    "takes about ten minutes.",
    "{a} reopened last spring after long renovations. Staff at {a} often "
    "point visitors toward {b} and {c}.",
    "A new bus line now stops beside {a}. Riders can reach {b} without "
    "changing lines.",
    "The block around {a} stays lively until late. Regulars say {b} is "
    "much quieter in the mornings.",
    "{a} anchors the north end of the district, while {b} and {c} sit "
    "closer to the old canal.",
    "Few places draw as many school groups as {a}. Guides usually finish "
    "the tour at {b}.",
)


@dataclass(frozen=True)
class SynthPaths:
    gazetteer: Path
    corpus: Path
    typing: Path


def generate_synthetic_world(
    out_dir,
    seed: int,
    n_entities: int = 50,
    n_docs: int = 30,
    *,
    bbox: tuple[float, float, float, float] = (37.0, 38.0, -122.5, -121.5),
    homonym_fraction: float = 0.2,
    cluster_spread_deg: float = 0.004,
) -> SynthPaths:
    """Write gazetteer.jsonl, corpus.jsonl and typing.jsonl under out_dir.

    bbox is (lat_min, lat_max, lon_min, lon_max). At least one homonym pair
    is always emitted; with the default fraction, one entity in five is an
    exact-name twin of another entity in a different cluster.
    """
    if n_entities < 10:
        raise ValueError("n_entities must be >= 10")
    lat_min, lat_max, lon_min, lon_max = bbox
    rng = np.random.default_rng(seed)

    n_twins = max(1, int(round(homonym_fraction * n_entities)))
    n_base = n_entities - n_twins
    n_clusters = max(3, n_entities // 10)
    margin_lat = 0.1 * (lat_max - lat_min)
    margin_lon = 0.1 * (lon_max - lon_min)
    centers = [
        (
            float(rng.uniform(lat_min + margin_lat, lat_max - margin_lat)),
            float(rng.uniform(lon_min + margin_lon, lon_max - margin_lon)),
        )
        for _ in range(n_clusters)
    ]
    # Each cluster leans toward a theme class, so that neighborhood
    # composition carries a genuine (if noisy) signal about entity types.
    themes = [
        AMENITY_CLASSES[int(rng.integers(len(AMENITY_CLASSES)))] for _ in range(n_clusters)
    ]
    base_pool = _BASE_NAMES[: max(6, min(len(_BASE_NAMES), n_entities // 4))]

    def place(cluster: int) -> tuple[float, float]:
        clat, clon = centers[cluster]
        lat = float(np.clip(clat + rng.normal(0.0, cluster_spread_deg), lat_min, lat_max))
        lon = float(np.clip(clon + rng.normal(0.0, cluster_spread_deg), lon_min, lon_max))
        return round(lat, 6), round(lon, 6)

    entities: list[GeoEntity] = []
    used_names: set[str] = set()
    for i in range(n_base):
        cluster = i % n_clusters
        if rng.random() < 0.7:
            klass = themes[cluster]
        else:
            klass = AMENITY_CLASSES[i % len(AMENITY_CLASSES)]
        name = None
        for _ in range(12):
            base = base_pool[int(rng.integers(len(base_pool)))]
            suffix = _SUFFIXES[klass][int(rng.integers(2))]
            candidate = f"{base} {suffix}"
            if candidate not in used_names:
                name = candidate
                break
        if name is None:
            name = candidate  # accept an incidental homonym
        used_names.add(name)
        lat, lon = place(cluster)
        entities.append(
            GeoEntity(
                id=f"e{i + 1:04d}",
                name=name,
                lat=lat,
                lon=lon,
                klass=klass,
                wikipedia_ref=f"wiki/{name.replace(' ', '_')}" if i % 2 == 0 else None,
                wikidata_qid=f"Q{9000 + i}" if i % 3 == 0 else None,
            )
        )

    # Exact-name twins in a different cluster: unresolvable by name alone.
    for j in range(n_twins):
        original = entities[int(rng.integers(len(entities)))]
        source_cluster = (int(original.id[1:]) - 1) % n_clusters
        other = (source_cluster + 1 + int(rng.integers(n_clusters - 1))) % n_clusters
        lat, lon = place(other)
        entities.append(
            GeoEntity(
                id=f"e{n_base + j + 1:04d}",
                name=original.name,
                lat=lat,
                lon=lon,
                klass=original.klass,
            )
        )

    gazetteer = Gazetteer.from_entities(entities)

    docs = []
    for d in range(n_docs):
        n_paragraphs = 1 + int(rng.integers(2))
        paragraphs = []
        for _ in range(n_paragraphs):
            anchor = entities[int(rng.integers(len(entities)))]
            near = neighbors_of(gazetteer, anchor.id, 2)
            slots = {
                "a": anchor.name,
                "b": near[0].name if near else anchor.name,
                "c": near[1].name if len(near) > 1 else (near[0].name if near else anchor.name),
            }
            template = _PARAGRAPH_TEMPLATES[int(rng.integers(len(_PARAGRAPH_TEMPLATES)))]
            paragraphs.append(template.format(**slots))
        docs.append({"doc_id": f"d{d + 1:04d}", "text": "\n\n".join(paragraphs)})

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = SynthPaths(
        gazetteer=out_dir / "gazetteer.jsonl",
        corpus=out_dir / "corpus.jsonl",
        typing=out_dir / "typing.jsonl",
    )
    save_gazetteer(gazetteer, paths.gazetteer)
    write_jsonl(paths.corpus, docs)
    write_jsonl(
        paths.typing,
        ({"anchor_id": e.id, "class": e.klass} for e in entities),
    )
    return paths
