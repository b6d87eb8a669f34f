"""Sequence encoders producing the representation vector fed to the discriminator.

Two interchangeable kinds: a pretrained biomedical transformer checkpoint
(fine-tuned during training) and a tiny deterministic encoder small enough
for exact finite-difference checks in tests.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
from torch import nn

from .errors import ConfigError


class EncoderKind(enum.Enum):
    PRETRAINED_CHECKPOINT = "PRETRAINED_CHECKPOINT"
    TINY_TEST = "TINY_TEST"


@dataclass
class EncoderConfig:
    kind: EncoderKind
    output_dim: int
    checkpoint_path: Optional[str] = None
    trainable: bool = True
    seed: int = 0
    vocab_size: int = 64  # TINY_TEST only
    dtype: str = "float32"

    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


def _to_tensors(batch, device=None) -> tuple:
    """Accept a list of TokenSequence-likes or an (ids, mask) tensor pair."""
    if isinstance(batch, tuple) and len(batch) == 2:
        ids, mask = batch
        return torch.as_tensor(ids, dtype=torch.long), torch.as_tensor(mask)
    lengths = {len(seq.ids) for seq in batch}
    if len(lengths) > 1:
        raise ValueError(f"ragged batch: sequence lengths {sorted(lengths)}")
    ids = torch.tensor([seq.ids for seq in batch], dtype=torch.long)
    mask = torch.tensor([seq.attention_mask for seq in batch])
    return ids, mask


class TinyEncoder(nn.Module):
    """Token embedding + mask-aware mean pooling + one tanh layer.

    Small enough (vocab <= 64, low dim) that every parameter can be
    finite-difference checked, but shaped like the real encoder: fixed
    output dimension, representation read at the start-token position's
    pooled context.
    """

    def __init__(self, vocab_size: int, output_dim: int, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.embedding = nn.Embedding(vocab_size, output_dim, dtype=dtype)
        self.proj = nn.Linear(output_dim, output_dim, dtype=dtype)
        with torch.no_grad():
            self.embedding.weight.copy_(
                torch.randn(vocab_size, output_dim, generator=gen, dtype=dtype) * 0.5)
            self.proj.weight.copy_(
                torch.randn(output_dim, output_dim, generator=gen, dtype=dtype)
                / output_dim ** 0.5)
            self.proj.bias.zero_()
        self.output_dim = output_dim

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        emb = self.embedding(ids)  # (B, L, d)
        m = mask.to(emb.dtype).unsqueeze(-1)
        pooled = (emb * m).sum(dim=1) / m.sum(dim=1).clamp(min=1.0)
        return torch.tanh(self.proj(pooled))

    def encode(self, batch) -> torch.Tensor:
        ids, mask = _to_tensors(batch)
        return self(ids, mask)


class PretrainedEncoder(nn.Module):
    """Wrapper over a standard pretrained checkpoint directory.

    The representation is the final hidden state at the start-token
    position. Requires the ``transformers`` package.
    """

    def __init__(self, checkpoint_path: str, expected_dim: Optional[int] = None):
        super().__init__()
        path = Path(checkpoint_path)
        if not path.exists():
            raise ConfigError(f"checkpoint not found: {path}")
        try:
            from transformers import AutoModel
        except ImportError as exc:
            raise ConfigError("the 'transformers' package is required for "
                              "pretrained checkpoints") from exc
        self.model = AutoModel.from_pretrained(str(path))
        hidden = self.model.config.hidden_size
        if expected_dim is not None and expected_dim != hidden:
            raise ConfigError(
                f"configured output_dim={expected_dim} but checkpoint hidden "
                f"size is {hidden}")
        self.output_dim = hidden

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        out = self.model(input_ids=ids, attention_mask=mask)
        return out.last_hidden_state[:, 0]

    def encode(self, batch) -> torch.Tensor:
        ids, mask = _to_tensors(batch)
        return self(ids, mask)


def checkpoint_hidden_size(checkpoint_path) -> int:
    """Read the hidden dimension straight from the checkpoint's own descriptor."""
    descriptor = Path(checkpoint_path) / "config.json"
    if not descriptor.exists():
        raise ConfigError(f"checkpoint descriptor missing: {descriptor}")
    return int(json.loads(descriptor.read_text())["hidden_size"])


def load(config: EncoderConfig) -> nn.Module:
    """Build an encoder per config; freezes parameters when trainable=False."""
    if config.kind is EncoderKind.TINY_TEST:
        enc = TinyEncoder(config.vocab_size, config.output_dim, seed=config.seed,
                          dtype=config.torch_dtype())
    else:
        if not config.checkpoint_path:
            raise ConfigError("PRETRAINED_CHECKPOINT requires checkpoint_path")
        enc = PretrainedEncoder(config.checkpoint_path, expected_dim=config.output_dim)
    if not config.trainable:
        for p in enc.parameters():
            p.requires_grad_(False)
    enc.eval()
    return enc
