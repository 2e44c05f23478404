"""Full-ranking Recall@K / NDCG@K with interaction masking, and a popularity baseline."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import TEST, TRAIN, VAL, InteractionDataset

DEFAULT_KS = (10, 20)


@dataclass
class MetricsTable:
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    n_users_evaluated: int = 0

    def __getitem__(self, key: str) -> float:
        # "recall@20" / "ndcg@10"
        name, _, k = key.partition("@")
        return getattr(self, name)[int(k)]

    def to_dict(self) -> dict:
        out = {}
        for k in sorted(self.recall):
            out[f"recall@{k}"] = self.recall[k]
        for k in sorted(self.ndcg):
            out[f"ndcg@{k}"] = self.ndcg[k]
        out["n_users_evaluated"] = self.n_users_evaluated
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        ks = sorted(self.recall)
        head = "".join(f"{'R@' + str(k):>10}" for k in ks) + "".join(f"{'N@' + str(k):>10}" for k in ks)
        row = "".join(f"{self.recall[k]:>10.4f}" for k in ks) + "".join(f"{self.ndcg[k]:>10.4f}" for k in ks)
        return f"{head}{'users':>8}\n{row}{self.n_users_evaluated:>8}"


def rank_items(E_u, E_i, user: int, mask=()) -> list[int]:
    """Unmasked items by descending score, ties to the lower index."""
    scores = np.asarray(E_i, dtype=np.float64) @ np.asarray(E_u[user], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(mask):
        blocked = np.zeros(len(scores), dtype=bool)
        blocked[list(mask)] = True
        order = order[~blocked[order]]
    return order.tolist()


def rank_all(E_u, E_i, masks: list[set[int]], users, top: int, chunk: int = 1024) -> dict[int, list[int]]:
    """Top-``top`` lists for many users at once; same ordering rule as ``rank_items``."""
    E_u = np.asarray(E_u, dtype=np.float64)
    E_i = np.asarray(E_i, dtype=np.float64)
    users = np.asarray(users, dtype=np.int64)
    out = {}
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = E_u[block] @ E_i.T
        for row, u in enumerate(block.tolist()):
            if masks[u]:
                scores[row, list(masks[u])] = -np.inf
        order = np.argsort(-scores, axis=1, kind="stable")
        for row, u in enumerate(block.tolist()):
            ranked = order[row]
            n_open = len(ranked) - len(masks[u])
            out[u] = ranked[:min(top, n_open)].tolist()
    return out


def _discounts(n: int) -> list[float]:
    return [1.0 / math.log2(r + 1) for r in range(1, n + 1)]


def compute_metrics(rankings: dict[int, list[int]], ground_truth: dict[int, set[int]] | list[set[int]],
                    K=DEFAULT_KS) -> MetricsTable:
    """Mean Recall@K and NDCG@K over users with non-empty ground truth.

    Gains are accumulated sequentially in rank order so a longer cutoff that
    adds no hits reproduces the shorter cutoff's value bit for bit.
    """
    ks = (K,) if isinstance(K, int) else tuple(K)
    if any(k <= 0 for k in ks):
        raise ValueError(f"K must be positive, got {ks}")
    gt = ground_truth if isinstance(ground_truth, dict) else dict(enumerate(ground_truth))
    users = [u for u in sorted(gt) if gt[u]]
    kmax = max(ks)
    disc = _discounts(kmax)
    ideal = list(itertools.accumulate(disc))
    recall = {k: 0.0 for k in ks}
    ndcg = {k: 0.0 for k in ks}
    for u in users:
        rel = gt[u]
        ranked = rankings.get(u, [])[:kmax]
        hits = [0] * kmax
        gains = [0.0] * kmax
        n_hit, dcg = 0, 0.0
        for r in range(kmax):
            if r < len(ranked) and ranked[r] in rel:
                n_hit += 1
                dcg += disc[r]
            hits[r], gains[r] = n_hit, dcg
        for k in ks:
            recall[k] += hits[k - 1] / len(rel)
            ndcg[k] += gains[k - 1] / ideal[min(k, len(rel)) - 1]
    n = len(users)
    if n:
        recall = {k: v / n for k, v in recall.items()}
        ndcg = {k: v / n for k, v in ndcg.items()}
    return MetricsTable(recall, ndcg, n)


def evaluate(E_u, E_i, ds: InteractionDataset, split: int = VAL, K=DEFAULT_KS) -> MetricsTable:
    """Rank every user with ground truth in ``split``; val masks train, test masks train+val."""
    if split not in (VAL, TEST):
        raise ValueError("evaluate on the val or test split")
    masked = (TRAIN,) if split == VAL else (TRAIN, VAL)
    masks = ds.user_items(masked)
    gt = ds.user_items(split)
    users = [u for u in range(ds.n_users) if gt[u]]
    kmax = K if isinstance(K, int) else max(K)
    rankings = rank_all(E_u, E_i, masks, users, kmax)
    return compute_metrics(rankings, {u: gt[u] for u in users}, K)


def popularity_order(ds: InteractionDataset) -> np.ndarray:
    _, items = ds.pairs(TRAIN)
    counts = np.bincount(items, minlength=ds.n_items)
    return np.argsort(-counts, kind="stable")


def popularity_baseline(ds: InteractionDataset, K: int, split: int = VAL) -> dict[int, list[int]]:
    """Same train-popularity ranking for every user, with that user's seen items removed."""
    base = popularity_order(ds)
    masked = (TRAIN,) if split == VAL else (TRAIN, VAL)
    masks = ds.user_items(masked)
    out = {}
    for u in range(ds.n_users):
        ranked = [i for i in base.tolist() if i not in masks[u]]
        out[u] = ranked[:K]
    return out


def evaluate_popularity(ds: InteractionDataset, split: int = VAL, K=DEFAULT_KS) -> MetricsTable:
    kmax = K if isinstance(K, int) else max(K)
    gt = ds.user_items(split)
    return compute_metrics(popularity_baseline(ds, kmax, split), gt, K)

