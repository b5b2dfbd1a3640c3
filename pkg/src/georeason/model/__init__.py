"""Vocabulary, input encoding, the grounded encoder, and checkpoints."""

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_state_from_arrays,
    save_checkpoint,
    state_dict_tensors,
)
from .encoder import (
    EncoderConfig,
    GroundedEncoder,
    entity_representation,
    pool_entity_batch,
    sinusoid_features,
)
from .encoding import (
    DSEP,
    Batch,
    EncodedInput,
    TruncationError,
    collate,
    encode_anchor,
    encode_neighbor,
    encode_plain_text,
    is_dsep,
)
from .vocab import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    UNK_ID,
    Vocab,
    build_vocab,
    tokenize,
    tokenize_with_offsets,
)

__all__ = [
    "Batch",
    "CLS_ID",
    "CheckpointError",
    "DSEP",
    "EncodedInput",
    "EncoderConfig",
    "GroundedEncoder",
    "MASK_ID",
    "PAD_ID",
    "SEP_ID",
    "TruncationError",
    "UNK_ID",
    "Vocab",
    "build_vocab",
    "collate",
    "encode_anchor",
    "encode_neighbor",
    "encode_plain_text",
    "entity_representation",
    "is_dsep",
    "load_checkpoint",
    "load_state_from_arrays",
    "pool_entity_batch",
    "save_checkpoint",
    "sinusoid_features",
    "state_dict_tensors",
    "tokenize",
    "tokenize_with_offsets",
]
