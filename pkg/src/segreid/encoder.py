"""Patch-token transformer encoder with mask-guided attention modulation.

Each self-attention layer takes the raw per-head logits ``A = q k^T`` and adds

    S = alpha * (R * M_pos) - beta * ((1 - R) * M_neg)

where ``M_pos = rowmax(A) - A``, ``M_neg = A - rowmin(A)`` and ``R`` is the
outer product of the token foreground mask with itself. Weights are then
``softmax((A + S) / sqrt(d_head))``. ``alpha`` and ``beta`` are one learnable
pair per layer, shared by all heads, and start at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import masks
from . import tensor as T
from .masks import GeometryError
from .nn import FeedForward, LayerNorm, Linear, Module, MultiHeadAttention, param
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch: int = 8
    channels: int = 3
    depth: int = 2
    heads: int = 4
    dim: int = 64
    modulate: bool = True

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.image_size % self.patch:
            raise GeometryError(f"image size {self.image_size} not divisible by patch {self.patch}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch) ** 2


def attention_logits(q: Tensor, k: Tensor) -> Tensor:
    """Unscaled logits ``q k^T`` (scaling happens in :func:`modulated_attention`)."""
    if q.shape[-1] != k.shape[-1]:
        raise T.DimensionError(f"attention_logits: q {q.shape} and k {k.shape} widths differ")
    return T.matmul(q, T.swap_last(k))


def modulation_matrices(logits: Tensor) -> tuple[Tensor, Tensor]:
    """Row-wise deviations from the row max (``M_pos``) and row min (``M_neg``)."""
    return T.sub(T.row_max(logits), logits), T.sub(logits, T.row_min(logits))


def modulation(logits: Tensor, interaction, alpha, beta) -> Tensor:
    """Additive modulation ``S`` for logits of shape ``[..., L, L]``.

    ``interaction`` is a binary array broadcastable to the logits (it is
    expanded to their full shape before use; it is never differentiated).
    """
    r = np.broadcast_to(np.asarray(interaction), logits.shape).astype(logits.dtype)
    m_pos, m_neg = modulation_matrices(logits)
    enhance = T.mul(Tensor(r), m_pos)
    suppress = T.mul(Tensor(1.0 - r), m_neg)
    return T.sub(T.mul(alpha, enhance), T.mul(beta, suppress))


def modulated_attention(logits: Tensor, s: Tensor, head_dim: int) -> Tensor:
    """Attention weights ``softmax((A + S) / sqrt(head_dim))``."""
    return T.softmax_rows(T.mul(T.add(logits, s), 1.0 / math.sqrt(head_dim)))


def patchify_images(images: np.ndarray, patch: int) -> np.ndarray:
    """``[B, C, H, W]`` -> ``[B, N, C*patch*patch]``, patches in row-major grid order."""
    b, c, h, w = images.shape
    if h % patch or w % patch:
        raise GeometryError(f"image {h}x{w} not divisible by patch {patch}")
    x = images.reshape(b, c, h // patch, patch, w // patch, patch)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, (h // patch) * (w // patch), c * patch * patch)


class EncoderLayer(Module):
    """Pre-norm transformer layer: x + Attn(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.norm2 = LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, rng)
        if cfg.modulate:
            self.alpha = param(0.0)
            self.beta = param(0.0)

    def attention(self, x: Tensor, interaction: np.ndarray | None) -> Tensor:
        q, k, v = self.attn.project(x, x)
        logits = attention_logits(q, k)
        if interaction is None or not hasattr(self, "alpha"):
            s = Tensor(np.zeros(logits.shape, dtype=logits.dtype))
        else:
            s = modulation(logits, interaction, self.alpha, self.beta)
        return self.attn.combine(modulated_attention(logits, s, self.attn.head_dim), v)

    def __call__(self, x: Tensor, interaction: np.ndarray | None) -> Tensor:
        x = T.add(x, self.attention(self.norm1(x), interaction))
        return T.add(x, self.ffn(self.norm2(x)))


class ModalityEncoder(Module):
    """One modality branch: patch embedding, class token, positional table, layers."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = cfg.num_patches
        self.patch_embed = Linear(cfg.channels * cfg.patch * cfg.patch, cfg.dim, rng)
        self.cls_token = param(rng.normal(0.0, 0.02, size=cfg.dim))
        self.pos_embed = param(rng.normal(0.0, 0.02, size=(n + 1, cfg.dim)))
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.dim)

    def embed(self, images: np.ndarray) -> Tensor:
        cfg = self.cfg
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
            raise GeometryError(
                f"expected images [B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}], "
                f"got {images.shape}"
            )
        patches = Tensor(patchify_images(images, cfg.patch))
        tokens = self.patch_embed(patches)
        cls = T.reshape(T.expand(self.cls_token, images.shape[0]), (images.shape[0], 1, cfg.dim))
        seq = T.concat([cls, tokens], axis=1)
        return T.add_trailing(seq, self.pos_embed)

    def __call__(
        self,
        images: np.ndarray,
        token_mask: np.ndarray,
        mode: str = "eval",
        rng: np.random.Generator | None = None,
        p: float = 0.0,
    ) -> Tensor:
        """Encode ``[B, C, H, W]`` images into ``[B, N+1, D]`` token sequences.

        In ``train`` mode with ``p > 0`` the token masks are perturbed once and
        the resulting interaction matrix is shared by every layer.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        token_mask = np.asarray(token_mask, dtype=np.uint8)
        if token_mask.ndim == 1:
            token_mask = token_mask[None]
        if token_mask.shape[-1] != self.cfg.num_patches + 1:
            raise GeometryError(
                f"token mask length {token_mask.shape[-1]} != {self.cfg.num_patches + 1}"
            )
        if mode == "train" and p > 0.0:
            if rng is None:
                raise ValueError("train-mode perturbation needs an rng")
            token_mask = masks.perturb(token_mask, p, rng)
        interaction = masks.interaction_mask(token_mask)[:, None, :, :]
        x = self.embed(images)
        for layer in self.layers:
            x = layer(x, interaction)
        return self.norm(x)
