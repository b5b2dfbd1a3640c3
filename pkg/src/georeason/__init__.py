"""georeason: geospatially grounded text encoding at desk scale.

The package pairs two views of each geo-entity, a natural-language location
description and a distance-sorted pseudo-sentence of its spatial neighbors,
aligns them with a contrastive objective plus masked language modeling, and
adapts the shared encoder to toponym recognition, toponym linking, and
geo-entity typing.
"""

__version__ = "0.1.0"

from .geodata import (
    AMENITY_CLASSES,
    AnnotatedParagraph,
    Gazetteer,
    GeoEntity,
    MentionSpan,
    PhraseTrie,
    RelationTriple,
    annotate_corpus,
    build_trie,
    load_gazetteer,
    match_phrases,
    save_gazetteer,
    triples_to_sentences,
)
from .linearizer import (
    NormalizedCoord,
    PseudoSentence,
    geodesic_distance,
    linearize,
    neighbors_of,
    normalize_coords,
)
from .metrics import PrfReport, entity_prf, micro_f1, recall_at_k, token_prf
from .model import (
    EncodedInput,
    EncoderConfig,
    GroundedEncoder,
    Vocab,
    build_vocab,
    encode_anchor,
    encode_neighbor,
    entity_representation,
    load_checkpoint,
    save_checkpoint,
    sinusoid_features,
)
from .pretrain import (
    Ablations,
    ContrastiveConfig,
    ContrastivePretrainer,
    MlmConfig,
    PairBatch,
    TrainingPair,
    concat_pair,
    contrastive_loss,
    mine_hard_negative,
    mlm_mask,
    pretrain_step,
)
from .summarizer import (
    LocationDescription,
    RemoteConfig,
    SummaryContext,
    summarize_remote,
    summarize_template,
)
from .synthworld import generate_synthetic_world
from .tasks import (
    GeoEntityTyper,
    LinkCandidate,
    ToponymLinker,
    ToponymRecognizer,
)

__all__ = [
    "AMENITY_CLASSES",
    "Ablations",
    "AnnotatedParagraph",
    "ContrastiveConfig",
    "ContrastivePretrainer",
    "EncodedInput",
    "EncoderConfig",
    "Gazetteer",
    "GeoEntity",
    "GeoEntityTyper",
    "GroundedEncoder",
    "LinkCandidate",
    "LocationDescription",
    "MentionSpan",
    "MlmConfig",
    "NormalizedCoord",
    "PairBatch",
    "PhraseTrie",
    "PrfReport",
    "PseudoSentence",
    "RelationTriple",
    "RemoteConfig",
    "SummaryContext",
    "ToponymLinker",
    "ToponymRecognizer",
    "TrainingPair",
    "Vocab",
    "annotate_corpus",
    "build_trie",
    "build_vocab",
    "concat_pair",
    "contrastive_loss",
    "encode_anchor",
    "encode_neighbor",
    "entity_prf",
    "entity_representation",
    "generate_synthetic_world",
    "geodesic_distance",
    "linearize",
    "load_checkpoint",
    "load_gazetteer",
    "match_phrases",
    "micro_f1",
    "mine_hard_negative",
    "mlm_mask",
    "neighbors_of",
    "normalize_coords",
    "pretrain_step",
    "recall_at_k",
    "save_checkpoint",
    "save_gazetteer",
    "sinusoid_features",
    "summarize_remote",
    "summarize_template",
    "token_prf",
    "triples_to_sentences",
]
