"""Turn partial rankings into weighted pairwise comparisons."""

from __future__ import annotations

import csv
import enum
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core_model import ItemCatalog
from .errors import DegenerateRankingError, DimensionError, IngestionError, InvalidPairError, InvalidWeightError


class SourceTag(str, enum.Enum):
    EXPLICIT_RANKING = "explicit_ranking"
    PURCHASE_DERIVED = "purchase_derived"


@dataclass(frozen=True)
class PartialRanking:
    """Tiers of item ids; every item in an earlier tier beats every later one."""

    user_id: str
    tiers: tuple[frozenset, ...]
    source_tag: SourceTag = SourceTag.EXPLICIT_RANKING

    def __post_init__(self):
        tiers = tuple(frozenset(t) for t in self.tiers)
        if len(tiers) < 2:
            raise DegenerateRankingError(f"user {self.user_id!r}: a ranking needs at least 2 tiers")
        if any(not t for t in tiers):
            raise DegenerateRankingError(f"user {self.user_id!r}: empty tier")
        seen: set = set()
        for t in tiers:
            if seen & t:
                raise DegenerateRankingError(
                    f"user {self.user_id!r}: item(s) {sorted(seen & t)} in more than one tier"
                )
            seen |= t
        object.__setattr__(self, "tiers", tiers)


@dataclass(frozen=True)
class Comparison:
    user_index: int
    winner_index: int
    loser_index: int
    weight: float = 1.0


@dataclass(frozen=True)
class ComparisonSet:
    """Column-oriented store of comparisons.

    ``user_ids`` names the rows of the user-factor matrix; comparison ``c``
    says user ``users[c]`` prefers item ``winners[c]`` over ``losers[c]``
    with weight ``weights[c]``.
    """

    users: np.ndarray
    winners: np.ndarray
    losers: np.ndarray
    weights: np.ndarray
    n_users: int
    n_items: int
    user_ids: tuple[str, ...] = ()

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        winners = np.asarray(self.winners, dtype=np.int64).reshape(-1)
        losers = np.asarray(self.losers, dtype=np.int64).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (len(users) == len(winners) == len(losers) == len(weights)):
            raise ValueError("comparison columns have different lengths")
        if len(users):
            if users.min() < 0 or users.max() >= self.n_users:
                raise DimensionError("user index out of bounds")
            if min(winners.min(), losers.min()) < 0 or max(winners.max(), losers.max()) >= self.n_items:
                raise DimensionError("item index out of bounds")
            if np.any(winners == losers):
                raise InvalidPairError("comparison with winner == loser")
            if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
                raise InvalidWeightError("comparison weights must be positive and finite")
        user_ids = tuple(self.user_ids) or tuple(str(u) for u in range(self.n_users))
        if len(user_ids) != self.n_users:
            raise ValueError("user_ids length must equal n_users")
        for name, arr in (("users", users), ("winners", winners), ("losers", losers), ("weights", weights)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "user_ids", user_ids)

    @classmethod
    def from_comparisons(cls, comparisons: Iterable[Comparison], n_users: int, n_items: int, user_ids=()):
        rows = [(c.user_index, c.winner_index, c.loser_index, c.weight) for c in comparisons]
        cols = list(zip(*rows)) if rows else [(), (), (), ()]
        return cls(*(np.array(c) for c in cols), n_users=n_users, n_items=n_items, user_ids=user_ids)

    def __len__(self) -> int:
        return len(self.users)

    @property
    def comparisons(self) -> list[Comparison]:
        return [
            Comparison(int(u), int(w), int(l), float(x))
            for u, w, l, x in zip(self.users, self.winners, self.losers, self.weights)
        ]

    def with_weights(self, weights) -> "ComparisonSet":
        return ComparisonSet(
            self.users, self.winners, self.losers, weights, self.n_users, self.n_items, self.user_ids
        )

    def total_weight(self) -> float:
        return float(self.weights.sum())


def explode(ranking: PartialRanking, catalog: ItemCatalog, user_index: Mapping[str, int]) -> list[Comparison]:
    """Every cross-tier ordered pair; nothing within a tier.

    Output order: tier order, then item id order within each tier.
    """
    u = user_index[ranking.user_id]
    tiers = [sorted(t) for t in ranking.tiers]
    idx = {i: catalog.index_of(i) for t in tiers for i in t}
    out = []
    for a, upper in enumerate(tiers):
        for lower in tiers[a + 1:]:
            for w in upper:
                for l in lower:
                    out.append(Comparison(u, idx[w], idx[l], 1.0))
    return out


def purchases_to_ranking(purchased, universe, user_id: str) -> PartialRanking:
    """Purchased items form the top tier, the rest of ``universe`` the bottom."""
    purchased = frozenset(purchased)
    universe = frozenset(universe)
    if not purchased <= universe:
        raise IngestionError(f"user {user_id!r}: purchased items {sorted(purchased - universe)} not in universe")
    if not purchased:
        raise DegenerateRankingError(f"user {user_id!r}: no purchases, ranking carries no information")
    if purchased == universe:
        raise DegenerateRankingError(f"user {user_id!r}: purchased every item, ranking carries no information")
    return PartialRanking(user_id, (purchased, universe - purchased), SourceTag.PURCHASE_DERIVED)


def explode_all(rankings: Sequence[PartialRanking], catalog: ItemCatalog, user_ids=None) -> ComparisonSet:
    """Explode a batch of rankings into one ComparisonSet.

    Users are indexed in order of first appearance unless ``user_ids`` is given.
    """
    if user_ids is None:
        user_ids = list(OrderedDict.fromkeys(r.user_id for r in rankings))
    user_index = {u: k for k, u in enumerate(user_ids)}
    comps: list[Comparison] = []
    for r in rankings:
        if r.user_id not in user_index:
            raise IngestionError(f"ranking for unknown user {r.user_id!r}")
        comps.extend(explode(r, catalog, user_index))
    return ComparisonSet.from_comparisons(comps, len(user_ids), catalog.n_items, tuple(user_ids))


@dataclass(frozen=True)
class DedupeResult:
    comparisons: ComparisonSet
    n_merged: int
    n_contradictions: int


def dedupe(cs: ComparisonSet) -> DedupeResult:
    """Merge duplicate (user, winner, loser) triples by summing weights.

    Contradictory pairs (both directions for one user) are kept; the number of
    such unordered pairs is reported. First-occurrence order is preserved.
    """
    merged: "OrderedDict[tuple[int, int, int], float]" = OrderedDict()
    for u, w, l, x in zip(cs.users.tolist(), cs.winners.tolist(), cs.losers.tolist(), cs.weights.tolist()):
        key = (u, w, l)
        merged[key] = merged.get(key, 0.0) + x
    contradictions = sum(1 for (u, w, l) in merged if w < l and (u, l, w) in merged)
    keys = list(merged)
    out = ComparisonSet(
        np.array([k[0] for k in keys], dtype=np.int64),
        np.array([k[1] for k in keys], dtype=np.int64),
        np.array([k[2] for k in keys], dtype=np.int64),
        np.array(list(merged.values()), dtype=float),
        cs.n_users,
        cs.n_items,
        cs.user_ids,
    )
    return DedupeResult(out, len(cs) - len(keys), contradictions)


def read_rankings_csv(path, catalog: ItemCatalog) -> list[PartialRanking]:
    """Read ``user_id,item_id,tier[,ranking_id]`` rows.

    Rows sharing (user_id, ranking_id) form one ranking; smaller tier numbers
    are preferred. Rankings are returned in order of first appearance.
    """
    path = Path(path)
    groups: "OrderedDict[tuple[str, str], dict[int, set]]" = OrderedDict()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "item_id", "tier"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tier = int(row["tier"])
            except (TypeError, ValueError):
                raise IngestionError(f"{path}:{lineno}: tier must be an integer") from None
            item = row["item_id"]
            catalog.index_of(item)
            key = (row["user_id"], row.get("ranking_id") or "")
            groups.setdefault(key, {}).setdefault(tier, set()).add(item)
    rankings = []
    for (user, _), tiers in groups.items():
        rankings.append(PartialRanking(user, tuple(frozenset(tiers[t]) for t in sorted(tiers))))
    return rankings


@dataclass(frozen=True)
class Transaction:
    user_id: str
    item_id: str
    timestamp: float = 0.0


def read_transactions_csv(path, catalog: ItemCatalog | None = None) -> list[Transaction]:
    """Read ``user_id,item_id[,timestamp]`` rows (timestamp numeric, default 0)."""
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "item_id"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if catalog is not None:
                try:
                    catalog.index_of(row["item_id"])
                except IngestionError as exc:
                    raise IngestionError(f"{path}:{lineno}: {exc}") from None
            ts = row.get("timestamp")
            try:
                t = float(ts) if ts not in (None, "") else 0.0
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: bad timestamp {ts!r}") from None
            out.append(Transaction(row["user_id"], row["item_id"], t))
    return out


def write_transactions_csv(transactions: Iterable[Transaction], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "item_id", "timestamp"])
        for t in transactions:
            writer.writerow([t.user_id, t.item_id, repr(float(t.timestamp))])


def transactions_to_rankings(transactions: Iterable[Transaction], universe, cutoff=None):
    """Purchase-derived rankings, one per user, against ``universe``.

    Only transactions strictly before ``cutoff`` are used when it is given.
    Users whose purchases are degenerate (none, or everything) are skipped and
    returned separately with the reason.
    """
    bought: "OrderedDict[str, set]" = OrderedDict()
    for t in transactions:
        if cutoff is None or t.timestamp < cutoff:
            bought.setdefault(t.user_id, set()).add(t.item_id)
    rankings, skipped = [], []
    for user, items in bought.items():
        try:
            rankings.append(purchases_to_ranking(items, universe, user))
        except DegenerateRankingError as exc:
            skipped.append((user, str(exc)))
    return rankings, skipped


def read_comparisons_csv(path, catalog: ItemCatalog) -> ComparisonSet:
    """Read ``user_id,winner_id,loser_id[,weight]`` rows."""
    path = Path(path)
    user_index: "OrderedDict[str, int]" = OrderedDict()
    comps = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "winner_id", "loser_id"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                w = catalog.index_of(row["winner_id"])
                l = catalog.index_of(row["loser_id"])
                weight = float(row.get("weight") or 1.0)
            except (IngestionError, ValueError) as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
            if w == l or not (weight > 0 and np.isfinite(weight)):
                raise IngestionError(f"{path}:{lineno}: invalid comparison")
            u = user_index.setdefault(row["user_id"], len(user_index))
            comps.append(Comparison(u, w, l, weight))
    return ComparisonSet.from_comparisons(comps, len(user_index), catalog.n_items, tuple(user_index))


def write_comparisons_csv(cs: ComparisonSet, catalog: ItemCatalog, path) -> None:
    ids = catalog.item_ids
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "winner_id", "loser_id", "weight"])
        for u, w, l, x in zip(cs.users, cs.winners, cs.losers, cs.weights):
            writer.writerow([cs.user_ids[u], ids[w], ids[l], repr(float(x))])
