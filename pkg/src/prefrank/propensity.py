"""Item-level observability propensities and inverse-probability weights.

A comparison between items j and j' is recorded only when both enter the
user's consideration set, so its observation probability is modelled as
``q_j * q_j'`` with ``q_j = sigmoid(z_j' eta)``. Observed comparisons are
reweighted by the inverse of that product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core_model import ItemCatalog, log_sigmoid, sigmoid
from .errors import DegenerateLabelsError, InvalidPropensityError
from .exploder import ComparisonSet

DEFAULT_FEATURES = ("intercept", "log_popularity", "attributes")


@dataclass(frozen=True)
class WeightConfig:
    clip_quantile: float = 0.99
    self_normalize: bool = True
    propensity_ridge: float = 1e-3
    features: tuple[str, ...] = DEFAULT_FEATURES

    def __post_init__(self):
        if not 0.5 < self.clip_quantile <= 1.0:
            raise ValueError("clip_quantile must lie in (0.5, 1]")
        if self.propensity_ridge < 0:
            raise ValueError("propensity_ridge must be non-negative")
        bad = set(self.features) - {"intercept", "log_popularity", "attributes", "covariates"}
        if bad:
            raise ValueError(f"unknown propensity features {sorted(bad)}")


@dataclass(frozen=True)
class ObservabilityData:
    """Full user x item grid of observability indicators plus item covariates.

    ``observed[i, j]`` is True when item j is visible in user i's data.
    ``Z`` has one row per item; its first column is normally the intercept.
    """

    observed: np.ndarray
    Z: np.ndarray
    feature_names: tuple[str, ...]
    feature_groups: tuple[str, ...] = ()
    popularity: np.ndarray | None = None

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        Z = np.asarray(self.Z, dtype=float)
        if obs.ndim != 2 or Z.ndim != 2 or Z.shape[0] != obs.shape[1]:
            raise ValueError("observed must be users x items and Z items x features")
        if not np.all(np.isfinite(Z)):
            raise ValueError("Z must be finite")
        if len(self.feature_names) != Z.shape[1]:
            raise ValueError("one feature name per Z column required")
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "Z", Z)

    @property
    def n_rows(self) -> int:
        return self.observed.size

    def rows(self):
        """Iterate ``(user_index, item_index, observed)`` in row-major order."""
        n_users, n_items = self.observed.shape
        for i in range(n_users):
            for j in range(n_items):
                yield i, j, bool(self.observed[i, j])


def observed_matrix(cs: ComparisonSet) -> np.ndarray:
    obs = np.zeros((cs.n_users, cs.n_items), dtype=bool)
    obs[cs.users, cs.winners] = True
    obs[cs.users, cs.losers] = True
    return obs


def item_features(catalog: ItemCatalog, features: Sequence[str], popularity=None):
    """Item covariate matrix assembled from named feature groups."""
    cols, names = [], []
    for feat in features:
        if feat == "intercept":
            cols.append(np.ones((catalog.n_items, 1)))
            names.append("intercept")
        elif feat == "log_popularity":
            if popularity is None:
                raise ValueError("log_popularity feature needs popularity counts")
            cols.append(np.log1p(np.asarray(popularity, dtype=float))[:, None])
            names.append("log_popularity")
        elif feat == "attributes":
            cols.append(catalog.design)
            names.extend(catalog.feature_names)
        elif feat == "covariates":
            cols.append(catalog.covariate_matrix())
            names.extend(catalog.covariate_names)
        else:
            raise ValueError(f"unknown feature group {feat!r}")
    Z = np.hstack(cols) if cols else np.zeros((catalog.n_items, 0))
    return Z, tuple(names)


def build_observability_data(cs: ComparisonSet, catalog: ItemCatalog, features=DEFAULT_FEATURES) -> ObservabilityData:
    """Observability grid: item j is observed for user i iff it appears in one of i's comparisons."""
    if len(cs) == 0:
        raise ValueError("comparison set is empty")
    obs = observed_matrix(cs)
    popularity = obs.sum(axis=0)
    Z, names = item_features(catalog, features, popularity)
    return ObservabilityData(obs, Z, names, tuple(features), popularity)


@dataclass(frozen=True)
class PropensityModel:
    eta: np.ndarray
    feature_names: tuple[str, ...]
    log_likelihood: float = float("nan")
    iterations: int = 0
    converged: bool = True
    features: tuple[str, ...] = DEFAULT_FEATURES
    popularity: tuple[float, ...] | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "features": list(self.feature_names),
            "feature_groups": list(self.features),
            "eta": self.eta.tolist(),
            "popularity": None if self.popularity is None else list(self.popularity),
            "diagnostics": {
                "log_likelihood": self.log_likelihood,
                "iterations": self.iterations,
                "converged": self.converged,
                **self.diagnostics,
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PropensityModel":
        doc = json.loads(text)
        diag = dict(doc.get("diagnostics", {}))
        return cls(
            np.array(doc["eta"], dtype=float),
            tuple(doc["features"]),
            diag.pop("log_likelihood", float("nan")),
            diag.pop("iterations", 0),
            diag.pop("converged", True),
            tuple(doc.get("feature_groups", DEFAULT_FEATURES)),
            None if doc.get("popularity") is None else tuple(doc["popularity"]),
            diag,
        )


def _binomial_objective(eta, Z, k, n, ridge):
    t = Z @ eta
    return float(k @ log_sigmoid(t) + (n - k) @ log_sigmoid(-t) - 0.5 * ridge * eta @ eta)


def propensity_objective(data: ObservabilityData, eta, ridge: float = 0.0) -> float:
    """Penalized Bernoulli log-likelihood of the observability grid."""
    k = data.observed.sum(axis=0).astype(float)
    n = np.full_like(k, data.observed.shape[0])
    return _binomial_objective(np.asarray(eta, dtype=float), data.Z, k, n, ridge)


def fit_propensity(data: ObservabilityData, config: WeightConfig = WeightConfig(),
                   max_iter: int = 500, tol: float = 1e-8) -> PropensityModel:
    """Newton-Raphson on the penalized logistic log-likelihood.

    Covariates are item-level, so the grid collapses to per-item binomial
    counts. Converged once the gradient max-norm drops below ``tol``.
    """
    k = data.observed.sum(axis=0).astype(float)
    n = np.full_like(k, data.observed.shape[0], dtype=float)
    if k.sum() == 0 or k.sum() == n.sum():
        raise DegenerateLabelsError("observability labels are all identical")
    Z, ridge = data.Z, config.propensity_ridge
    eta = np.zeros(Z.shape[1])
    obj = _binomial_objective(eta, Z, k, n, ridge)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(Z @ eta)
        grad = Z.T @ (k - n * p) - ridge * eta
        if np.max(np.abs(grad)) < tol:
            converged = True
            it -= 1
            break
        H = (Z * (n * p * (1 - p))[:, None]).T @ Z + ridge * np.eye(Z.shape[1])
        try:
            direction = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.lstsq(H, grad, rcond=None)[0]
        step = 1.0
        while True:
            cand = eta + step * direction
            cand_obj = _binomial_objective(cand, Z, k, n, ridge)
            if cand_obj >= obj or step < 1e-10:
                break
            step *= 0.5
        eta, obj = cand, cand_obj
    else:
        p = sigmoid(Z @ eta)
        grad = Z.T @ (k - n * p) - ridge * eta
        converged = bool(np.max(np.abs(grad)) < tol)
    popularity = None if data.popularity is None else tuple(float(x) for x in data.popularity)
    return PropensityModel(eta, data.feature_names, obj, it, converged,
                           data.feature_groups or DEFAULT_FEATURES, popularity)


def item_propensities(model: PropensityModel, catalog: ItemCatalog, popularity=None) -> np.ndarray:
    """``q_j = sigmoid(z_j' eta)`` for every catalog item."""
    if popularity is None:
        popularity = model.popularity
    Z, names = item_features(catalog, model.features, popularity)
    if names != tuple(model.feature_names):
        raise ValueError("catalog features do not match the propensity model")
    return sigmoid(Z @ model.eta)


def raw_ipw_weights(cs: ComparisonSet, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    used = np.union1d(cs.winners, cs.losers)
    if np.any(~(q[used] > 0)) or np.any(~(q[used] <= 1)):
        raise InvalidPropensityError("propensities must lie in (0, 1]")
    return cs.weights / (q[cs.winners] * q[cs.losers])


def assign_ipw_weights(cs: ComparisonSet, q, config: WeightConfig = WeightConfig()) -> ComparisonSet:
    """Inverse pair-observability weights, clipped then optionally normalized to mean 1.

    ``q == 1`` is accepted: it means "always observable" and leaves the base
    weight untouched. Zero propensities are rejected.
    """
    if len(cs) == 0:
        return cs
    w = raw_ipw_weights(cs, q)
    if config.clip_quantile < 1.0:
        w = np.minimum(w, np.quantile(w, config.clip_quantile))
    if config.self_normalize:
        w = w / w.mean()
    return cs.with_weights(w)


def weight_diagnostics(cs: ComparisonSet, q, config: WeightConfig = WeightConfig()) -> dict:
    """Clip count and Kish effective sample size ``(sum w)^2 / sum w^2``."""
    raw = raw_ipw_weights(cs, q)
    cap = np.quantile(raw, config.clip_quantile) if config.clip_quantile < 1.0 else np.inf
    final = assign_ipw_weights(cs, q, config).weights
    return {
        "n_comparisons": int(len(cs)),
        "n_clipped": int(np.sum(raw > cap)),
        "clip_value": float(cap) if np.isfinite(cap) else None,
        "raw_min": float(raw.min()),
        "raw_max": float(raw.max()),
        "effective_sample_size": float(final.sum() ** 2 / np.sum(final ** 2)),
    }


def save_propensity(model: PropensityModel, path) -> None:
    Path(path).write_text(model.to_json() + "\n", encoding="utf-8")


def load_propensity(path) -> PropensityModel:
    return PropensityModel.from_json(Path(path).read_text(encoding="utf-8"))
