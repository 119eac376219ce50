"""Cross-modal hypergraph over semantic tokens, convolution and global fusion.

Hyperedges are stars: node ``i`` owns hyperedge ``e_i`` holding every node
whose cosine similarity to ``i`` is at least ``tau``. Membership is computed
from the current values and treated as a constant by the tape.

One convolution step, for node ``i``::

    h_e  = mean of the member rows of e
    h_i' = GELU( sum_{e containing i} w_e * h_e + b_i ) + h_i
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, MultiHeadAttention, param
from .tensor import ContractError, NumericError, Tensor

@dataclass
class HypergraphStructure:
    """``membership[..., e, j]`` is True when node ``j`` belongs to hyperedge ``e``."""

    membership: np.ndarray
    tau: float
    similarity: np.ndarray | None = None

    @property
    def node_count(self) -> int:
        return self.membership.shape[-1]

    def hyperedges(self, sample: int | None = None) -> list[set[int]]:
        m = self.membership if sample is None else self.membership[sample]
        if m.ndim != 2:
            raise ValueError("pick a sample index for batched structures")
        return [set(np.flatnonzero(row).tolist()) for row in m]


def concat_modalities(f_rgb: Tensor, f_nir: Tensor, f_tir: Tensor) -> Tensor:
    """Stack per-modality semantic tokens along the token axis, RGB then NIR then TIR."""
    if not f_rgb.shape == f_nir.shape == f_tir.shape:
        raise T.DimensionError(
            f"modality token shapes differ: {f_rgb.shape}, {f_nir.shape}, {f_tir.shape}"
        )
    return T.concat([f_rgb, f_nir, f_tir], axis=-2)


def cosine_similarity(h: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    norm = np.sqrt((h * h).sum(axis=-1, keepdims=True))
    if (norm <= eps).any():
        raise NumericError("cannot build hyperedges: a semantic token has zero norm")
    u = h / np.maximum(norm, eps)
    return u @ np.swapaxes(u, -1, -2)


def build_hyperedges(h, tau: float = 0.5) -> HypergraphStructure:
    """Threshold cosine similarities of the rows of ``h`` (``[n, D]`` or ``[B, n, D]``)."""
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    data = h.data if isinstance(h, Tensor) else np.asarray(h)
    sim = cosine_similarity(data)
    return HypergraphStructure(membership=sim >= tau, tau=tau, similarity=sim)


class HypergraphConv(Module):
    """One node-to-hyperedge-to-node step with per-hyperedge weights and per-node biases."""

    def __init__(self, nodes: int, dim: int):
        self.edge_weight = param(np.full(nodes, 1.0 / nodes))
        self.node_bias = param(np.zeros((nodes, dim)))

    def __call__(self, h: Tensor, structure: HypergraphStructure) -> Tensor:
        member = structure.membership
        batched = h.ndim == 3
        if member.shape[-1] != h.shape[-2] or member.shape[-1] != self.edge_weight.shape[0]:
            raise T.DimensionError(
                f"structure over {member.shape[-1]} nodes vs tokens {h.shape}"
            )
        sizes = member.sum(axis=-1, keepdims=True)
        if (sizes == 0).any():
            raise ContractError("empty hyperedge")
        dtype = h.dtype
        gather = Tensor((member / sizes).astype(dtype))
        incidence = Tensor(np.swapaxes(member, -1, -2).astype(dtype))
        edge_feat = T.matmul(gather, h)
        w = T.expand(self.edge_weight, h.shape[0]) if batched else self.edge_weight
        agg = T.matmul(incidence, T.scale_rows(edge_feat, w))
        return T.add(T.gelu(T.add_trailing(agg, self.node_bias)), h)


class GlobalFusion(Module):
    """``U = CrossAttn(G, H', H') + G``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        self.cross = MultiHeadAttention(dim, heads, rng)

    def __call__(self, g: Tensor, h_prime: Tensor) -> Tensor:
        if g.shape[-1] != h_prime.shape[-1]:
            raise T.DimensionError(f"global {g.shape} and tokens {h_prime.shape} widths differ")
        unbatched = g.ndim == 2
        if unbatched:
            g = T.reshape(g, (1,) + g.shape)
            h_prime = T.reshape(h_prime, (1,) + h_prime.shape)
        u = T.add(self.cross(g, h_prime), g)
        return T.reshape(u, u.shape[1:]) if unbatched else u


class HypergraphInteraction(Module):
    """Rebuilds the hypergraph before each convolution step, then fuses into ``G``."""

    def __init__(self, dim: int, heads: int, nodes: int, rng: np.random.Generator,
                 depth: int = 1, tau: float = 0.5):
        self.tau = tau
        self.convs = [HypergraphConv(nodes, dim) for _ in range(depth)]
        self.fuse = GlobalFusion(dim, heads, rng)
        self.structures: list[HypergraphStructure] = []

    def __call__(self, h: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
        self.structures = []
        for conv in self.convs:
            structure = build_hyperedges(h, self.tau)
            self.structures.append(structure)
            h = conv(h, structure)
        return h, self.fuse(g, h)
