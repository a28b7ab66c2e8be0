"""Top-N recommendation over untried items and hit-based evaluation."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core_model import ItemCatalog, ModelParams, rank_by_score, utility_row
from .errors import NoEvaluableUsersError
from .exploder import ComparisonSet, Transaction

METRIC_FORMULAS = {
    "hit_rate": "share of users with |topN & heldout| >= 1",
    "precision_at_N": "mean |topN & heldout| / N",
    "recall_at_N": "mean |topN & heldout| / |heldout|",
}


@dataclass(frozen=True)
class UserHistory:
    user_index: int
    consumed: frozenset = frozenset()


@dataclass(frozen=True)
class RecommendationList:
    user_index: int
    items: tuple[int, ...]
    scores: tuple[float, ...]
    empty_candidates: bool = False


def _top_n(scores: np.ndarray, id_order: np.ndarray, consumed, N: int, user: int) -> RecommendationList:
    if N < 1:
        raise ValueError("N must be at least 1")
    order = [j for j in rank_by_score(scores, id_order).tolist() if j not in consumed]
    if not order:
        return RecommendationList(user, (), (), empty_candidates=True)
    top = order[:N]
    return RecommendationList(user, tuple(top), tuple(float(scores[j]) for j in top))


def recommend_top_n(params: ModelParams, catalog: ItemCatalog, history: UserHistory, N: int) -> RecommendationList:
    """Highest-utility items the user has not consumed; item id breaks ties."""
    scores = utility_row(params, catalog, history.user_index)
    return _top_n(scores, catalog.id_order(), history.consumed, N, history.user_index)


def purchase_counts(train, n_items: int) -> np.ndarray:
    """Per-item training counts.

    ``train`` is either a ComparisonSet (an item's wins are counted, i.e. the
    times it was the preferred, purchased side) or an iterable of user
    consumption sets.
    """
    if isinstance(train, ComparisonSet):
        # Count each (user, winner) once so a purchase exploded into many pairs counts once.
        pairs = np.unique(np.stack([train.users, train.winners], axis=1), axis=0) if len(train) else np.zeros((0, 2), int)
        return np.bincount(pairs[:, 1], minlength=n_items).astype(float)
    counts = np.zeros(n_items)
    for items in train:
        for j in items:
            counts[j] += 1
    return counts


def popularity_baseline(counts, catalog: ItemCatalog, history: UserHistory, N: int) -> RecommendationList:
    """Most-purchased unconsumed items; item id breaks ties."""
    counts = np.asarray(counts, dtype=float)
    return _top_n(counts, catalog.id_order(), history.consumed, N, history.user_index)


@dataclass(frozen=True)
class EvalRow:
    model_name: str
    N: int
    hit_rate: float
    precision_at_N: float
    recall_at_N: float
    n_evaluable_users: int


def evaluate(recommendations: Mapping[int, Sequence[int]], heldout: Mapping[int, Iterable[int]], N: int,
             model_name: str = "model") -> EvalRow:
    """Hit rate, precision and recall at N over users with nonempty held-out sets.

    Users with held-out items but no recommendation list count as misses.
    """
    hits = precision = recall = 0.0
    n = 0
    for user, items in heldout.items():
        items = set(items)
        if not items:
            continue
        top = list(recommendations.get(user, ()))[:N]
        k = len(items.intersection(top))
        n += 1
        hits += k >= 1
        precision += k / N
        recall += k / len(items)
    if n == 0:
        raise NoEvaluableUsersError("no user has a nonempty held-out set")
    return EvalRow(model_name, N, hits / n, precision / n, recall / n, n)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    HEADER = ("model", "N", "hit_rate", "precision_at_N", "recall_at_N", "n_evaluable_users")

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for r in self.rows:
            writer.writerow([r.model_name, r.N, repr(r.hit_rate), repr(r.precision_at_N),
                             repr(r.recall_at_N), r.n_evaluable_users])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'model':<24}{'N':>4}{'hit_rate':>10}{'prec@N':>10}{'recall@N':>10}{'users':>8}"]
        for r in self.rows:
            lines.append(f"{r.model_name:<24}{r.N:>4}{r.hit_rate:>10.4f}{r.precision_at_N:>10.4f}"
                         f"{r.recall_at_N:>10.4f}{r.n_evaluable_users:>8}")
        lines.extend(f"  {k}: {v}" for k, v in METRIC_FORMULAS.items())
        return "\n".join(lines)


def temporal_split(transactions: Iterable[Transaction], cutoff: float):
    """Split purchases at ``cutoff`` into training consumption and new-item adoptions.

    Items first bought before the cutoff are training items; items first
    bought at or after it, and never before, are held out. Users without any
    training purchase get no held-out set (the model has nothing to go on).
    Returns ``(train, heldout)`` dicts keyed by user id.
    """
    first: dict[tuple[str, str], float] = {}
    for t in transactions:
        key = (t.user_id, t.item_id)
        first[key] = min(first.get(key, t.timestamp), t.timestamp)
    train: dict[str, set] = {}
    later: dict[str, set] = {}
    for (user, item), ts in first.items():
        (train if ts < cutoff else later).setdefault(user, set()).add(item)
    heldout = {u: items - train[u] for u, items in later.items() if u in train}
    return train, {u: s for u, s in heldout.items() if s}


def random_split(transactions: Iterable[Transaction], holdout_share: float, seed: int = 0):
    """Hold out a random share of each user's distinct items (same contract as temporal_split)."""
    rng = np.random.default_rng(seed)
    by_user: dict[str, list] = {}
    for t in transactions:
        items = by_user.setdefault(t.user_id, [])
        if t.item_id not in items:
            items.append(t.item_id)
    train, heldout = {}, {}
    for user in sorted(by_user):
        items = sorted(by_user[user])
        mask = rng.random(len(items)) < holdout_share
        tr = {i for i, m in zip(items, mask) if not m}
        ho = {i for i, m in zip(items, mask) if m}
        if tr:
            train[user] = tr
            if ho:
                heldout[user] = ho
    return train, heldout


def write_recommendations_csv(lists: Sequence[RecommendationList], catalog: ItemCatalog, user_ids, path) -> None:
    ids = catalog.item_ids
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "rank", "item_id", "score"])
        for rec in lists:
            for rank, (j, s) in enumerate(zip(rec.items, rec.scores), start=1):
                writer.writerow([user_ids[rec.user_index], rank, ids[j], repr(s)])


def popularity_from_transactions(train: Mapping[str, set], catalog: ItemCatalog) -> np.ndarray:
    counts = Counter(i for items in train.values() for i in items)
    return np.array([counts.get(i, 0) for i in catalog.item_ids], dtype=float)
