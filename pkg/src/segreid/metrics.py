"""Ranked retrieval evaluation: mAP and CMC with same-camera exclusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import ContractError

CMC_RANKS = (1, 5, 10)


@dataclass
class EvalResult:
    mAP: float
    cmc: dict[int, float]
    ranked: list[np.ndarray] = field(repr=False, default_factory=list)
    first_hits: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))

    def cmc_curve(self, max_rank: int | None = None) -> np.ndarray:
        """CMC at ranks ``1..max_rank`` (default: the longest ranked list)."""
        if max_rank is None:
            max_rank = max((len(r) for r in self.ranked), default=0)
        ranks = np.arange(1, max_rank + 1)
        return (self.first_hits[:, None] < ranks[None, :]).mean(axis=0)

    def as_dict(self) -> dict[str, float]:
        out = {"mAP": self.mAP}
        out.update({f"CMC@{k}": v for k, v in self.cmc.items()})
        return out


def pairwise_distances(q: np.ndarray, g: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"feature widths differ: {q.shape} vs {g.shape}")
    if metric == "euclidean":
        diff = q[:, None, :] - g[None, :, :]
        return np.sqrt((diff * diff).sum(axis=-1))
    if metric == "cosine":
        qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        return 1.0 - qn @ gn.T
    raise ValueError(f"unknown metric {metric!r}")


def average_precision(ranked_rel) -> float:
    """``(1/#rel) * sum_k precision@k * rel(k)`` over a binary relevance list."""
    rel = np.asarray(ranked_rel, dtype=np.float64)
    n_rel = rel.sum()
    if n_rel == 0:
        raise ContractError("average precision needs at least one relevant item")
    hits = np.cumsum(rel)[rel > 0]
    ranks = np.flatnonzero(rel) + 1
    # correctly rounded sum, so the value does not depend on summation order
    return math.fsum(hits / ranks) / n_rel


def rank_gallery(dist_row: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Kept gallery indices by ascending distance, ties by ascending index."""
    idx = np.flatnonzero(keep)
    order = np.lexsort((idx, dist_row[idx]))
    return idx[order]


def evaluate(q_feat, g_feat, q_labels, g_labels, q_cams, g_cams,
             metric: str = "euclidean", ranks=CMC_RANKS) -> EvalResult:
    """mAP and CMC@k; gallery items sharing both identity and camera with the query are dropped."""
    q_labels, g_labels = np.asarray(q_labels), np.asarray(g_labels)
    q_cams, g_cams = np.asarray(q_cams), np.asarray(g_cams)
    dist = pairwise_distances(q_feat, g_feat, metric)
    if dist.shape[0] == 0:
        raise ContractError("evaluation needs at least one query")
    aps, first_hits, ranked = [], [], []
    for i in range(dist.shape[0]):
        keep = ~((g_labels == q_labels[i]) & (g_cams == q_cams[i]))
        order = rank_gallery(dist[i], keep)
        rel = g_labels[order] == q_labels[i]
        if not rel.any():
            raise ContractError(f"query {i} has no valid positive in the gallery")
        aps.append(average_precision(rel))
        first_hits.append(int(np.argmax(rel)))
        ranked.append(order)
    first_hits = np.asarray(first_hits)
    cmc = {k: float(np.mean(first_hits < k)) for k in ranks}
    return EvalResult(mAP=math.fsum(aps) / len(aps), cmc=cmc, ranked=ranked, first_hits=first_hits)


def write_results(result: EvalResult, path, extra: dict | None = None) -> None:
    lines = [f"{k}={v:.6f}" for k, v in result.as_dict().items()]
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_ranked_lists(result: EvalResult, path, query_ids=None, gallery_ids=None) -> None:
    """One line per query: ``query_id<TAB>gallery ids in rank order`` (space separated)."""
    lines = []
    for i, order in enumerate(result.ranked):
        qid = i if query_ids is None else query_ids[i]
        gids = order if gallery_ids is None else np.asarray(gallery_ids)[order]
        lines.append(f"{qid}\t" + " ".join(str(int(g)) for g in gids))
    Path(path).write_text("\n".join(lines) + "\n")


def read_results(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key] = value
    return out
