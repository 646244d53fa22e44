"""Encoder-decoder transformer with shared bidirectional encoder,
unidirectional decoder, and fusion of independently encoded slots.

Each input slot is encoded on its own (positions restart at 0 per slot),
the encodings are concatenated into one memory, and the decoder
cross-attends to the whole memory. With a single slot this reduces
bit-for-bit to a vanilla encoder-decoder.

Layers are pre-layer-norm; input embedding and output projection share
weights. Attention is computed in one fused pass per layer (scores,
softmax and the weighted sum are never materialized separately across
kernel boundaries).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import BOS_ID, PAD_ID

CHECKPOINT_MAGIC = b"PLUGCKPT"
CHECKPOINT_VERSION = 1

# (dimension, heads, enc layers, dec layers)
PRESETS = {
    "toy": (64, 4, 2, 2),
    "240M": (768, 12, 12, 12),
    "3.7B": (2048, 32, 24, 24),
    "13B": (4096, 64, 24, 24),
}


@dataclass
class ModelConfig:
    dimension: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_multiplier: int = 4
    vocab_size: int = 256
    max_enc_len: int = 380
    max_dec_len: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.dimension % self.heads != 0:
            raise ValueError(
                f"dimension {self.dimension} not divisible by heads {self.heads}"
            )

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        dim, heads, enc, dec = PRESETS[name]
        cfg = cls(dimension=dim, heads=heads, enc_layers=enc, dec_layers=dec)
        return replace(cfg, **overrides) if overrides else cfg


@dataclass
class EncodedSlot:
    states: torch.Tensor  # [slot_len, dim]
    mask: torch.Tensor  # [slot_len] bool, False at PAD
    index: int = 0


@dataclass
class FusedMemory:
    states: torch.Tensor  # [sum of slot lens, dim]
    mask: torch.Tensor  # [sum of slot lens] bool


class KVCache:
    """Per-decoding-session cache: self-attention k/v grow one position per
    step, cross-attention k/v for the memory are computed once and reused."""

    def __init__(self, n_layers: int):
        self.self_kv: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * n_layers
        self.cross_kv: list[tuple[torch.Tensor, torch.Tensor] | None] = [None] * n_layers
        self.length = 0  # prefix positions already processed

    def fork(self) -> "KVCache":
        """Cheap copy for beam expansion: cached tensors are append-only
        (updates rebind list entries), so children can share them."""
        child = KVCache(len(self.self_kv))
        child.self_kv = list(self.self_kv)
        child.cross_kv = list(self.cross_kv)
        child.length = self.length
        return child


def sinusoidal_positions(length: int, dim: int, dtype, device) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    half = torch.arange(0, dim, 2, dtype=dtype, device=device)
    freq = torch.exp(half * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)
    return pe


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = nn.Linear(dim, dim, bias=False)
        self.wk = nn.Linear(dim, dim, bias=False)
        self.wv = nn.Linear(dim, dim, bias=False)
        self.wo = nn.Linear(dim, dim, bias=False)
        self.dropout = nn.Dropout(dropout)
        self.record_weights = False  # debugging/test hook
        self.last_weights: torch.Tensor | None = None

    def project_kv(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # x: [L, dim] -> k, v: [heads, L, head_dim]
        L = x.shape[0]
        k = self.wk(x).view(L, self.heads, self.head_dim).transpose(0, 1)
        v = self.wv(x).view(L, self.heads, self.head_dim).transpose(0, 1)
        return k, v

    def forward(
        self,
        x_q: torch.Tensor,  # [Lq, dim]
        kv: tuple[torch.Tensor, torch.Tensor],  # from project_kv
        key_mask: torch.Tensor | None = None,  # [Lk] bool, False = masked out
        causal_offset: int | None = None,  # query i attends keys <= i + offset
    ) -> torch.Tensor:
        Lq = x_q.shape[0]
        q = self.wq(x_q).view(Lq, self.heads, self.head_dim).transpose(0, 1)
        k, v = kv
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)  # [h, Lq, Lk]
        if causal_offset is not None:
            Lk = k.shape[1]
            qi = torch.arange(Lq, device=scores.device).unsqueeze(1)
            kj = torch.arange(Lk, device=scores.device).unsqueeze(0)
            scores = scores.masked_fill(kj > qi + causal_offset, float("-inf"))
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask.view(1, 1, -1), float("-inf"))
        weights = F.softmax(scores, dim=-1)
        if self.record_weights:
            self.last_weights = weights.detach()
        weights = self.dropout(weights)
        out = (weights @ v).transpose(0, 1).reshape(Lq, -1)  # [Lq, dim]
        return self.wo(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, multiplier: int, dropout: float):
        super().__init__()
        self.w1 = nn.Linear(dim, dim * multiplier)
        self.w2 = nn.Linear(dim * multiplier, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.dropout(F.gelu(self.w1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = Attention(cfg.dimension, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.dimension, cfg.ffn_multiplier, cfg.dropout)
        self.ln1 = nn.LayerNorm(cfg.dimension)
        self.ln2 = nn.LayerNorm(cfg.dimension)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.dropout(self.attn(h, self.attn.project_kv(h), key_mask=mask))
        x = x + self.dropout(self.ffn(self.ln2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = Attention(cfg.dimension, cfg.heads, cfg.dropout)
        self.cross_attn = Attention(cfg.dimension, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.dimension, cfg.ffn_multiplier, cfg.dropout)
        self.ln1 = nn.LayerNorm(cfg.dimension)
        self.ln2 = nn.LayerNorm(cfg.dimension)
        self.ln3 = nn.LayerNorm(cfg.dimension)
        self.dropout = nn.Dropout(cfg.dropout)


class Seq2SeqModel(nn.Module):
    """Parameter container plus the forward passes. Parameters are immutable
    during inference (call .eval()); training mutates them single-writer."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        cfg = config
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.dimension)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.enc_norm = nn.LayerNorm(cfg.dimension)
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.dec_norm = nn.LayerNorm(cfg.dimension)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        # 0.4/sqrt(d): large enough that scaled content is not drowned by
        # the positional encoding, small enough that the tied output head
        # starts near-uniform over the vocabulary
        nn.init.normal_(self.embedding.weight, std=0.4 * cfg.dimension**-0.5)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def _dtype(self):
        return self.embedding.weight.dtype

    def _device(self):
        return self.embedding.weight.device

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        # [L] -> [L, dim]; positions restart at 0 for every sequence/slot
        x = self.embedding(ids) * math.sqrt(self.config.dimension)
        x = x + sinusoidal_positions(
            ids.shape[0], self.config.dimension, self._dtype(), self._device()
        )
        return self.emb_dropout(x)

    def _as_ids(self, ids) -> torch.Tensor:
        if isinstance(ids, torch.Tensor):
            return ids.to(device=self._device(), dtype=torch.long)
        return torch.tensor(ids, dtype=torch.long, device=self._device())

    # ---- encoder ----

    def encode_slot(self, ids, index: int = 0) -> EncodedSlot:
        """Encode one slot independently with the shared encoder."""
        ids = self._as_ids(ids)
        if ids.shape[0] == 0:
            raise ValueError("cannot encode an empty slot")
        if ids.shape[0] > self.config.max_enc_len:
            raise ValueError(
                f"slot length {ids.shape[0]} exceeds max_enc_len {self.config.max_enc_len}"
            )
        mask = ids != PAD_ID
        x = self._embed(ids)
        for layer in self.enc_layers:
            x = layer(x, mask)
        return EncodedSlot(states=self.enc_norm(x), mask=mask, index=index)

    # ---- decoder ----

    def _decoder_forward(
        self,
        prefix: torch.Tensor,  # [L] full prefix, or [1] newest token when cached
        memory: FusedMemory,
        cache: KVCache | None,
        start_pos: int,
    ) -> torch.Tensor:
        # returns hidden states [len(prefix_part), dim]
        L = prefix.shape[0]
        x = self.embedding(prefix) * math.sqrt(self.config.dimension)
        x = x + sinusoidal_positions(
            start_pos + L, self.config.dimension, self._dtype(), self._device()
        )[start_pos:]
        x = self.emb_dropout(x)
        for li, layer in enumerate(self.dec_layers):
            h = layer.ln1(x)
            new_kv = layer.self_attn.project_kv(h)
            if cache is not None:
                if cache.self_kv[li] is not None:
                    pk, pv = cache.self_kv[li]
                    kv = (torch.cat([pk, new_kv[0]], dim=1), torch.cat([pv, new_kv[1]], dim=1))
                else:
                    kv = new_kv
                cache.self_kv[li] = kv
            else:
                kv = new_kv
            x = x + layer.dropout(
                layer.self_attn(h, kv, causal_offset=start_pos)
            )
            h = layer.ln2(x)
            if cache is not None:
                if cache.cross_kv[li] is None:
                    cache.cross_kv[li] = layer.cross_attn.project_kv(memory.states)
                cross_kv = cache.cross_kv[li]
            else:
                cross_kv = layer.cross_attn.project_kv(memory.states)
            x = x + layer.dropout(layer.cross_attn(h, cross_kv, key_mask=memory.mask))
            x = x + layer.dropout(layer.ffn(layer.ln3(x)))
        return self.dec_norm(x)

    def _logits(self, hidden: torch.Tensor) -> torch.Tensor:
        # output projection tied to the input embedding: [*, dim] -> [*, vocab]
        return F.linear(hidden, self.embedding.weight)

    def decode_step(
        self, memory: FusedMemory, prefix, cache: KVCache | None = None
    ) -> tuple[torch.Tensor, KVCache | None]:
        """Next-token logits for the prefix. With a warm cache only the
        newest position is processed; logits match the cache-free forward."""
        prefix = self._as_ids(prefix)
        if prefix.shape[0] == 0:
            raise ValueError("prefix must contain at least BOS")
        if prefix.shape[0] > self.config.max_dec_len:
            raise ValueError(
                f"prefix length {prefix.shape[0]} exceeds max_dec_len {self.config.max_dec_len}"
            )
        if cache is not None and cache.length > 0:
            if cache.length != prefix.shape[0] - 1:
                raise ValueError(
                    f"cache holds {cache.length} positions, prefix has {prefix.shape[0]}"
                )
            hidden = self._decoder_forward(prefix[-1:], memory, cache, start_pos=cache.length)
        else:
            hidden = self._decoder_forward(prefix, memory, cache, start_pos=0)
        if cache is not None:
            cache.length = prefix.shape[0]
        return self._logits(hidden[-1]), cache

    def target_logits(self, slots_ids: list, target) -> torch.Tensor:
        """Teacher-forced logits [len(target)-1, vocab] predicting target[1:]
        from the fused encodings of the given slots."""
        memory = fuse([self.encode_slot(ids, i) for i, ids in enumerate(slots_ids)])
        target = self._as_ids(target)
        hidden = self._decoder_forward(target[:-1], memory, cache=None, start_pos=0)
        return self._logits(hidden)


def fuse(slots: list[EncodedSlot]) -> FusedMemory:
    """Concatenate independently encoded slots, in slot order."""
    if not slots:
        raise ValueError("fuse requires at least one slot")
    return FusedMemory(
        states=torch.cat([s.states for s in slots], dim=0),
        mask=torch.cat([s.mask for s in slots], dim=0),
    )


def nll_loss(model: Seq2SeqModel, slots_ids: list, target) -> torch.Tensor:
    """Mean negative log-likelihood over non-PAD target positions.

    The target must be framed BOS ... EOS (PAD padding allowed after EOS);
    the decoder input is target[:-1], predictions score target[1:].
    """
    target_t = model._as_ids(target)
    if target_t.shape[0] < 2 or target_t[0] != BOS_ID:
        raise ValueError("target must be framed [BOS, ..., EOS]")
    labels = target_t[1:]
    keep = labels != PAD_ID
    if not bool(keep.any()):
        raise ValueError("target has no non-PAD positions to score")
    logits = model.target_logits(slots_ids, target_t)
    logp = F.log_softmax(logits, dim=-1)
    token_nll = -logp[torch.arange(labels.shape[0]), labels]
    loss = (token_nll * keep).sum() / keep.sum()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss


def backward(model: Seq2SeqModel, slots_ids: list, target) -> dict[str, torch.Tensor]:
    """Gradients of nll_loss for every parameter, keyed by parameter name."""
    model.zero_grad(set_to_none=True)
    loss = nll_loss(model, slots_ids, target)
    loss.backward()
    return {
        name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


# ---- checkpoint io ----
# header: magic, version u32, then the config as fixed-order little-endian
# fields (8 x int32 + dropout f32), then each parameter tensor's raw f32
# data in named_parameters() order.

_CONFIG_FIELDS = (
    "dimension",
    "heads",
    "enc_layers",
    "dec_layers",
    "ffn_multiplier",
    "vocab_size",
    "max_enc_len",
    "max_dec_len",
)


def save_checkpoint(model: Seq2SeqModel, path: str | Path) -> None:
    cfg = model.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<8i", *(getattr(cfg, name) for name in _CONFIG_FIELDS)))
        f.write(struct.pack("<f", cfg.dropout))
        for _, p in model.named_parameters():
            f.write(p.detach().to(torch.float32).contiguous().numpy().tobytes())


def load_checkpoint(path: str | Path) -> Seq2SeqModel:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        ints = struct.unpack("<8i", f.read(32))
        (dropout,) = struct.unpack("<f", f.read(4))
        # header stores dropout as f32; round away the representation noise
        cfg = ModelConfig(**dict(zip(_CONFIG_FIELDS, ints)), dropout=round(dropout, 6))
        model = Seq2SeqModel(cfg)
        with torch.no_grad():
            for _, p in model.named_parameters():
                raw = f.read(p.numel() * 4)
                if len(raw) != p.numel() * 4:
                    raise ValueError("checkpoint truncated")
                flat = torch.frombuffer(bytearray(raw), dtype=torch.float32)
                p.copy_(flat.view_as(p))
        if f.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return model
