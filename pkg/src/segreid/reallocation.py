"""Learnable query tokens plus a shared text feature pooling patch tokens."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import FeedForward, Module, MultiHeadAttention, param
from .tensor import Tensor


def build_queries(bank: Tensor, text: Tensor) -> Tensor:
    """Stack the query bank ``[K, D]`` (or ``[B, K, D]``) above the text row(s).

    ``text`` is ``[D]`` for a single sample or ``[B, D]`` for a batch; the
    result is ``[K+1, D]`` or ``[B, K+1, D]`` with the text as the last row.
    """
    if bank.shape[-1] != text.shape[-1]:
        raise T.DimensionError(f"query bank {bank.shape} and text {text.shape} widths differ")
    if text.ndim == 1:
        if bank.ndim != 2:
            raise T.DimensionError(f"unbatched text needs a [K, D] bank, got {bank.shape}")
        return T.concat([bank, T.reshape(text, (1, text.shape[0]))], axis=0)
    b, d = text.shape
    if bank.ndim == 2:
        bank = T.expand(bank, b)
    return T.concat([bank, T.reshape(text, (b, 1, d))], axis=1)


class TokenReallocation(Module):
    """``Z = CrossAttn(Q', F, F) + Q'``, output ``FFN(Z) + Z``.

    One instance per modality; the query bank and projections are private to
    it. No positional terms enter here, so the output does not depend on the
    order of the patch tokens.
    """

    def __init__(self, dim: int, heads: int, num_queries: int, rng: np.random.Generator):
        self.queries = param(rng.normal(0.0, 0.02, size=(num_queries, dim)))
        self.cross = MultiHeadAttention(dim, heads, rng)
        self.ffn = FeedForward(dim, rng)

    def reallocate(self, queries: Tensor, patch_tokens: Tensor) -> Tensor:
        if queries.shape[-1] != patch_tokens.shape[-1]:
            raise T.DimensionError(
                f"queries {queries.shape} and patch tokens {patch_tokens.shape} widths differ"
            )
        unbatched = queries.ndim == 2
        if unbatched:
            queries = T.reshape(queries, (1,) + queries.shape)
            patch_tokens = T.reshape(patch_tokens, (1,) + patch_tokens.shape)
        z = T.add(self.cross(queries, patch_tokens), queries)
        out = T.add(self.ffn(z), z)
        return T.reshape(out, out.shape[1:]) if unbatched else out

    def __call__(self, patch_tokens: Tensor, text: Tensor) -> Tensor:
        """Semantic tokens ``[B, K+1, D]`` from patch tokens ``[B, N, D]`` (class token excluded)."""
        return self.reallocate(build_queries(self.queries, text), patch_tokens)
