"""The grounded text encoder.

The embedding of each token is the sum of a token embedding, a learned
position embedding, a segment embedding, and sinusoidal features of its X
and Y coordinates. Coordinate lanes holding the DSEP filler route to one
shared learned vector instead of the sinusoid, so text-only tokens cannot
pick up fake geometry. The stack on top is a plain pre-norm transformer
encoder with GELU feed-forward blocks and no dropout: inference is fully
deterministic given parameters and input.

Disabling the spatial path (the coordinate-ablation switch) treats every
position as if it had no coordinates, i.e. all positions receive the DSEP
vector. Anchor-level inputs are therefore bit-identical under the switch,
and neighbor-level outputs become invariant to the coordinate lanes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
from torch import nn

from .encoding import Batch


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_dim: int = 256
    max_seq_len: int = 128
    sinusoid_base: float = 10000.0

    def __post_init__(self) -> None:
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the reserved tokens")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoid_features(values: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of scalar coordinates.

    out[..., 2i] = sin(v / base^(2i/dim)), out[..., 2i+1] = cos(same angle),
    for i in 0..dim/2-1. Each sin/cos pair contributes exactly 1 to the
    squared norm, so every output has L2 norm sqrt(dim/2).
    """
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    half = dim // 2
    exponents = torch.arange(half, dtype=values.dtype, device=values.device) * (2.0 / dim)
    inv_freq = base ** (-exponents)
    angles = values.unsqueeze(-1) * inv_freq
    out = torch.empty(*values.shape, dim, dtype=values.dtype, device=values.device)
    out[..., 0::2] = torch.sin(angles)
    out[..., 1::2] = torch.cos(angles)
    return out


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int) -> None:
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).view(b, n, 3, self.n_heads, self.head_dim)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # [B, H, L, dh]
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class EncoderLayer(nn.Module):
    """Pre-norm self-attention + feed-forward block with residuals."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadSelfAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_dim),
            nn.GELU(),
            nn.Linear(ff_dim, d_model),
        )

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), key_mask)
        x = x + self.ff(self.norm2(x))
        return x


class GroundedEncoder(nn.Module):
    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_embed = nn.Embedding(config.vocab_size, d)
        self.position_embed = nn.Embedding(config.max_seq_len, d)
        self.segment_embed = nn.Embedding(2, d)
        self.dsep_embed = nn.Parameter(torch.zeros(d))
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.n_heads, config.ff_dim) for _ in range(config.n_layers)
        )
        self.final_norm = nn.LayerNorm(d)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for emb in (self.token_embed, self.position_embed, self.segment_embed):
            nn.init.normal_(emb.weight, mean=0.0, std=0.02)
        nn.init.normal_(self.dsep_embed, mean=0.0, std=0.02)

    def spatial_embedding(self, coords: torch.Tensor, use_spatial: bool = True) -> torch.Tensor:
        """[B, L] coordinate lane -> [B, L, d] spatial features.

        NaN entries (the DSEP filler) map to the shared learned DSEP vector.
        With use_spatial off, every position maps to the DSEP vector and the
        lane values are ignored entirely.
        """
        d = self.config.d_model
        dsep = self.dsep_embed.to(coords.dtype)
        if not use_spatial:
            return dsep.expand(*coords.shape, d)
        mask = torch.isnan(coords)
        feats = sinusoid_features(
            torch.nan_to_num(coords, nan=0.0), d, self.config.sinusoid_base
        )
        return torch.where(mask.unsqueeze(-1), dsep.expand(*coords.shape, d), feats)

    def forward(self, batch: Batch, use_spatial: bool = True) -> torch.Tensor:
        """Token representations, [B, L, d]."""
        if batch.token_ids.shape[1] > self.config.max_seq_len:
            raise ValueError(
                f"sequence length {batch.token_ids.shape[1]} exceeds "
                f"max_seq_len {self.config.max_seq_len}"
            )
        x = (
            self.token_embed(batch.token_ids)
            + self.position_embed(batch.position_ids)
            + self.segment_embed(batch.segment_ids)
            + self.spatial_embedding(batch.x_coords, use_spatial)
            + self.spatial_embedding(batch.y_coords, use_spatial)
        )
        for layer in self.layers:
            x = layer(x, batch.attention_mask)
        x = self.final_norm(x)
        if not torch.isfinite(x).all():
            raise FloatingPointError("encoder produced non-finite activations")
        return x


def entity_representation(token_reps: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    """Mean of the token representations inside [start, end)."""
    start, end = span
    if not 0 <= start < end <= token_reps.shape[-2]:
        raise ValueError(f"span ({start}, {end}) invalid for length {token_reps.shape[-2]}")
    return token_reps[..., start:end, :].mean(dim=-2)


def pool_entity_batch(token_reps: torch.Tensor, spans: list[tuple[int, int] | None]) -> torch.Tensor:
    """Per-sample entity pooling over a [B, L, d] batch."""
    rows = []
    for i, span in enumerate(spans):
        if span is None:
            raise ValueError(f"sample {i} has no entity span to pool")
        rows.append(entity_representation(token_reps[i], span))
    return torch.stack(rows, dim=0)
