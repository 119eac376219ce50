"""Label-smoothed cross-entropy and batch-hard triplet losses."""

from __future__ import annotations

from collections import Counter
from typing import Mapping

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import ContractError, Tensor

HEADS = ("G", "U", "T")


def ce_label_smooth(logits: Tensor, labels, eps: float = 0.1) -> Tensor:
    """Mean over the batch of ``-sum_c q_c log softmax(logits)_c``, ``q = (1-eps) onehot + eps/C``."""
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {eps}")
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise T.DimensionError(f"{labels.shape[0]} labels for {b} rows")
    bad = labels[(labels < 0) | (labels >= c)]
    if bad.size:
        raise ValueError(f"label {int(bad[0])} outside [0, {c})")
    q = np.full((b, c), eps / c, dtype=logits.dtype)
    q[np.arange(b), labels] += 1.0 - eps
    return T.mul(T.sum_(T.mul(Tensor(q), T.log_softmax(logits))), -1.0 / b)


def _check_triplet_batch(labels: np.ndarray) -> None:
    counts = Counter(labels.tolist())
    for ident, n in sorted(counts.items()):
        if n < 2:
            raise ContractError(f"identity {ident} has a single sample in the batch")
    if len(counts) < 2:
        raise ContractError("batch needs at least two identities for negatives")


def hardest_pairs(dist: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per anchor: index of the farthest positive and of the nearest negative."""
    same = labels[:, None] == labels[None, :]
    pos = np.where(same, dist, -np.inf).argmax(axis=1)
    neg = np.where(same, np.inf, dist).argmin(axis=1)
    return pos, neg


def triplet_batch_hard(features: Tensor, labels, margin: float = 0.3) -> Tensor:
    """``mean_a max(0, margin + max_p d(a,p) - min_n d(a,n))`` with Euclidean ``d``."""
    labels = np.asarray(labels)
    if labels.shape != (features.shape[0],):
        raise T.DimensionError(f"{labels.shape} labels for {features.shape[0]} features")
    _check_triplet_batch(labels)
    dist = T.cdist(features, features)
    pos, neg = hardest_pairs(dist.data, labels)
    rows = np.arange(labels.size)
    d_pos = T.take(dist, (rows, pos))
    d_neg = T.take(dist, (rows, neg))
    return T.mean(T.relu(T.add(T.sub(d_pos, d_neg), margin)))


def head_loss(features: Tensor, classifier: Linear, labels, eps: float, margin: float) -> tuple[Tensor, Tensor]:
    return ce_label_smooth(classifier(features), labels, eps), triplet_batch_hard(features, labels, margin)


class Objective(Module):
    """One linear classifier per supervised feature; sums CE + triplet over heads."""

    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator,
                 eps: float = 0.1, margin: float = 0.3, heads=HEADS):
        self.eps = eps
        self.margin = margin
        widths = {"G": 3 * dim, "U": 3 * dim, "T": dim}
        self.classifiers = {name: Linear(widths[name], num_classes, rng) for name in heads}
        for name, clf in self.classifiers.items():
            setattr(self, f"cls_{name}", clf)

    def named_parameters(self, prefix: str = ""):
        for name, clf in self.classifiers.items():
            yield from clf.named_parameters(f"{prefix}cls_{name}.")

    def terms(self, features: Mapping[str, Tensor], labels) -> dict[str, Tensor]:
        out = {}
        for name, feat in features.items():
            ce, tri = head_loss(feat, self.classifiers[name], labels, self.eps, self.margin)
            out[f"ce_{name}"] = ce
            out[f"tri_{name}"] = tri
        return out

    def __call__(self, features: Mapping[str, Tensor], labels) -> Tensor:
        return total_loss(self.terms(features, labels))


def total_loss(terms: Mapping[str, Tensor]) -> Tensor:
    items = list(terms.values())
    total = items[0]
    for t in items[1:]:
        total = T.add(total, t)
    return total
