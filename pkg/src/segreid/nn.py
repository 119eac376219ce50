"""Minimal parameter containers and layers on top of :mod:`segreid.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def param(data) -> Tensor:
    return Tensor(np.array(data), requires_grad=True)


class Module:
    """Attribute-based parameter registry.

    Parameters are ``Tensor`` attributes with ``requires_grad``; children are
    ``Module`` attributes or lists of modules. Names are dotted attribute
    paths in definition order, which is also the checkpoint order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def cast(self, dtype) -> "Module":
        """Convert every parameter to ``dtype`` in place (grads are dropped)."""
        for p in self.parameters().values():
            p.data = np.array(p.data, dtype=dtype, order="C")
            p.grad = None
        return self


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = param(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add_trailing(y, self.bias)

    def zero_(self) -> None:
        self.weight.data[...] = 0
        if self.bias is not None:
            self.bias.data[...] = 0


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    """Two linear maps with GELU in between; hidden width ``mult * dim``."""

    def __init__(self, dim: int, rng: np.random.Generator, mult: int = 4):
        self.fc1 = Linear(dim, mult * dim, rng)
        self.fc2 = Linear(mult * dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.transpose(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product attention with learned projections.

    ``project`` and ``combine`` are exposed separately so callers can reshape
    the per-head weights in between (the masked self-attention does).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def project(self, query: Tensor, context: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        if query.shape[-1] != context.shape[-1] or query.shape[-1] != self.heads * self.head_dim:
            raise T.DimensionError(
                f"attention: query {query.shape} / context {context.shape} vs width "
                f"{self.heads * self.head_dim}"
            )
        return (
            split_heads(self.q(query), self.heads),
            split_heads(self.k(context), self.heads),
            split_heads(self.v(context), self.heads),
        )

    def combine(self, weights: Tensor, v: Tensor) -> Tensor:
        return self.out(merge_heads(T.matmul(weights, v)))

    def weights(self, q: Tensor, k: Tensor) -> Tensor:
        logits = T.matmul(q, T.swap_last(k))
        return T.softmax_rows(T.mul(logits, 1.0 / math.sqrt(self.head_dim)))

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        q, k, v = self.project(query, context)
        return self.combine(self.weights(q, k), v)
