"""Latent utility model shared by every other module.

The deterministic part of user ``i``'s utility for item ``j`` is

    v_ij = x_j' beta + alpha_j + lambda_i' f_j

where ``x_j`` is the concatenated one-hot encoding of the item's categorical
attributes. The extreme-value noise is never sampled; it is integrated out
into the logistic probability that one item beats another.

Only within-user utility differences are identified, so reported
coefficients are identified up to within-user constants; the ridge penalty
pins the level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, IngestionError, InvalidPairError

BLOCKS = ("beta", "alpha", "factors")
COVARIATE_PREFIX = "cov_"


def sigmoid(t):
    """Logistic function, evaluated without overflow for large ``|t|``."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def log_sigmoid(t):
    """``log sigmoid(t)``.

    Computed as ``-log1p(exp(-t))`` for ``t >= 0`` and ``t - log1p(exp(t))``
    otherwise, so neither branch exponentiates a positive number.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = -np.log1p(np.exp(-t[pos]))
    out[~pos] = t[~pos] - np.log1p(np.exp(t[~pos]))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    attribute_levels: Mapping[str, str]
    covariates: tuple[float, ...] = ()


@dataclass(frozen=True)
class ItemCatalog:
    """Ordered items plus the categorical attribute schema.

    ``attribute_schema`` is a sequence of ``(name, levels)`` pairs; the design
    vector of an item concatenates one one-hot block per attribute in schema
    order.
    """

    items: tuple[ItemRecord, ...]
    attribute_schema: tuple[tuple[str, tuple[str, ...]], ...]
    covariate_names: tuple[str, ...] = ()
    _index: dict = field(init=False, repr=False, compare=False)
    _design: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for pos, item in enumerate(self.items):
            if item.item_id in index:
                raise IngestionError(f"duplicate item_id {item.item_id!r}")
            index[item.item_id] = pos
        names = [name for name, _ in self.attribute_schema]
        offsets = {}
        width = 0
        for name, levels in self.attribute_schema:
            offsets[name] = (width, {lv: k for k, lv in enumerate(levels)})
            width += len(levels)
        design = np.zeros((len(self.items), width))
        for pos, item in enumerate(self.items):
            if set(item.attribute_levels) != set(names):
                raise IngestionError(
                    f"item {item.item_id!r} attributes {sorted(item.attribute_levels)} "
                    f"do not match schema {names}"
                )
            if len(item.covariates) != len(self.covariate_names):
                raise IngestionError(f"item {item.item_id!r} has wrong covariate count")
            if not np.all(np.isfinite(item.covariates)):
                raise IngestionError(f"item {item.item_id!r} has non-finite covariates")
            for name in names:
                start, lookup = offsets[name]
                level = item.attribute_levels[name]
                if level not in lookup:
                    raise IngestionError(
                        f"item {item.item_id!r}: level {level!r} not in schema for {name!r}"
                    )
                design[pos, start + lookup[level]] = 1.0
        design.setflags(write=False)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_design", design)

    @classmethod
    def from_records(cls, records: Sequence[ItemRecord], covariate_names=()):
        """Build a catalog, inferring each attribute's levels (sorted) from the records."""
        names: list[str] = []
        for rec in records:
            for name in rec.attribute_levels:
                if name not in names:
                    names.append(name)
        schema = tuple(
            (name, tuple(sorted({rec.attribute_levels.get(name, "") for rec in records})))
            for name in names
        )
        return cls(tuple(records), schema, tuple(covariate_names))

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_features(self) -> int:
        return self._design.shape[1]

    @property
    def item_ids(self) -> list[str]:
        return [item.item_id for item in self.items]

    @property
    def design(self) -> np.ndarray:
        """``n_items x n_features`` one-hot design matrix (read-only)."""
        return self._design

    @property
    def feature_names(self) -> list[str]:
        return [f"{name}={level}" for name, levels in self.attribute_schema for level in levels]

    def attribute_blocks(self) -> list[slice]:
        """Column slice of each attribute's one-hot block in the design matrix."""
        blocks, start = [], 0
        for _, levels in self.attribute_schema:
            blocks.append(slice(start, start + len(levels)))
            start += len(levels)
        return blocks

    def covariate_matrix(self) -> np.ndarray:
        return np.array([item.covariates for item in self.items], dtype=float).reshape(
            self.n_items, len(self.covariate_names)
        )

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise IngestionError(f"unknown item id {item_id!r}") from None

    def id_order(self) -> np.ndarray:
        """Rank of each item's id in ascending id order; the tie-break key."""
        ids = self.item_ids
        order = sorted(range(len(ids)), key=ids.__getitem__)
        ranks = np.empty(len(ids), dtype=np.int64)
        ranks[order] = np.arange(len(ids))
        return ranks


def read_catalog_csv(path) -> ItemCatalog:
    """Read a catalog CSV.

    Header: ``item_id``, then one column per categorical attribute, then any
    numeric covariate columns whose names start with ``cov_``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "item_id" not in header:
            raise IngestionError(f"{path}: missing item_id column")
        attrs = [h for h in header if h != "item_id" and not h.startswith(COVARIATE_PREFIX)]
        covs = [h for h in header if h.startswith(COVARIATE_PREFIX)]
        records = []
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row[h] is None for h in header):
                raise IngestionError(f"{path}:{lineno}: wrong number of fields")
            try:
                cov = tuple(float(row[c]) for c in covs)
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: bad covariate ({exc})") from None
            records.append(ItemRecord(row["item_id"], {a: row[a] for a in attrs}, cov))
    return ItemCatalog.from_records(records, covs)


def write_catalog_csv(catalog: ItemCatalog, path) -> None:
    names = [name for name, _ in catalog.attribute_schema]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", *names, *catalog.covariate_names])
        for item in catalog.items:
            writer.writerow(
                [item.item_id, *(item.attribute_levels[n] for n in names), *map(repr, item.covariates)]
            )


@dataclass(frozen=True)
class Hyperparams:
    """Model-shape and penalty settings.

    ``fit_alpha`` defaults to False so the default model matches the
    attributes-plus-factors scoring formula; ``fit_beta=False`` gives the
    factors-only restricted model and ``rank=0`` the attributes-only one.
    """

    ridge_lambda: float = 1.0
    ridge_scope: frozenset = frozenset(BLOCKS)
    rank: int = 0
    rng_seed: int = 0
    fit_beta: bool = True
    fit_alpha: bool = False
    factor_init_scale: float = 0.1

    def __post_init__(self):
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be non-negative")
        if self.rank < 0:
            raise ValueError("rank must be non-negative")
        unknown = set(self.ridge_scope) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown ridge blocks {sorted(unknown)}")
        object.__setattr__(self, "ridge_scope", frozenset(self.ridge_scope))

    @classmethod
    def for_spec(cls, spec: str, rank: int, **kwargs) -> "Hyperparams":
        """Hyperparams for ``full``, ``attributes-only`` or ``factors-only``."""
        if spec == "full":
            return cls(rank=rank, **kwargs)
        if spec == "attributes-only":
            return cls(rank=0, **kwargs)
        if spec == "factors-only":
            return cls(rank=rank, fit_beta=False, **kwargs)
        raise ValueError(f"unknown specification {spec!r}")

    def free_blocks(self) -> tuple[str, ...]:
        blocks = []
        if self.fit_beta:
            blocks.append("beta")
        if self.fit_alpha:
            blocks.append("alpha")
        if self.rank > 0:
            blocks.append("factors")
        return tuple(blocks)


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    alpha: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self):
        for name in ("beta", "alpha", "user_factors", "item_factors"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise DimensionError("factor matrices must be 2-d")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise DimensionError("user and item factor ranks differ")
        if self.alpha.shape[0] != self.item_factors.shape[0]:
            raise DimensionError("alpha length must equal number of items")

    @classmethod
    def zeros(cls, n_users: int, n_features: int, n_items: int, rank: int = 0) -> "ModelParams":
        return cls(
            np.zeros(n_features), np.zeros(n_items), np.zeros((n_users, rank)), np.zeros((n_items, rank))
        )

    @property
    def rank(self) -> int:
        return self.user_factors.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.alpha.shape[0]

    def copy(self, **changes) -> "ModelParams":
        fields = {k: np.array(getattr(self, k)) for k in ("beta", "alpha", "user_factors", "item_factors")}
        fields.update(changes)
        return replace(self, **fields)

    def check_catalog(self, catalog: ItemCatalog) -> None:
        if self.beta.shape[0] != catalog.n_features or self.n_items != catalog.n_items:
            raise DimensionError(
                f"params shaped for {self.beta.shape[0]} features / {self.n_items} items, "
                f"catalog has {catalog.n_features} / {catalog.n_items}"
            )


def _check_user(params: ModelParams, user: int) -> None:
    if not 0 <= user < params.n_users:
        raise IndexError(f"user index {user} out of range [0, {params.n_users})")


def _check_item(catalog: ItemCatalog, item: int) -> None:
    if not 0 <= item < catalog.n_items:
        raise IndexError(f"item index {item} out of range [0, {catalog.n_items})")


def item_scores(params: ModelParams, catalog: ItemCatalog) -> np.ndarray:
    """User-independent part of utility, ``X beta + alpha``."""
    return catalog.design @ params.beta + params.alpha


def utility_row(params: ModelParams, catalog: ItemCatalog, user: int) -> np.ndarray:
    _check_user(params, user)
    return item_scores(params, catalog) + params.item_factors @ params.user_factors[user]


def utility_matrix(params: ModelParams, catalog: ItemCatalog) -> np.ndarray:
    """``n_users x n_items`` matrix of deterministic utilities."""
    params.check_catalog(catalog)
    return item_scores(params, catalog)[None, :] + params.user_factors @ params.item_factors.T


def utility(params: ModelParams, catalog: ItemCatalog, user: int, item: int) -> float:
    _check_user(params, user)
    _check_item(catalog, item)
    return float(
        catalog.design[item] @ params.beta
        + params.alpha[item]
        + params.user_factors[user] @ params.item_factors[item]
    )


def pair_logit_prob(params: ModelParams, catalog: ItemCatalog, user: int, winner: int, loser: int) -> float:
    """Probability that ``user`` prefers ``winner`` over ``loser``."""
    if winner == loser:
        raise InvalidPairError(f"winner and loser are the same item ({winner})")
    gap = utility(params, catalog, user, winner) - utility(params, catalog, user, loser)
    return sigmoid(gap)


def rank_by_score(scores: np.ndarray, id_order: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, ties by ascending item id."""
    return np.lexsort((id_order, -np.asarray(scores)))


def predicted_ranking(params: ModelParams, catalog: ItemCatalog, user: int) -> list[int]:
    return rank_by_score(utility_row(params, catalog, user), catalog.id_order()).tolist()


def named_coefficients(params: ModelParams, catalog: ItemCatalog) -> dict[str, dict[str, float]]:
    """Attribute coefficients keyed by attribute then level."""
    out: dict[str, dict[str, float]] = {}
    for (name, levels), block in zip(catalog.attribute_schema, catalog.attribute_blocks()):
        out[name] = dict(zip(levels, params.beta[block].tolist()))
    return out


def centered_within_blocks(beta: np.ndarray, catalog: ItemCatalog) -> np.ndarray:
    """Subtract each attribute block's mean; removes the unidentified block level."""
    out = np.array(beta, dtype=float)
    for block in catalog.attribute_blocks():
        out[block] -= out[block].mean()
    return out


def iter_item_indices(catalog: ItemCatalog, ids: Iterable[str]) -> list[int]:
    return [catalog.index_of(i) for i in ids]
