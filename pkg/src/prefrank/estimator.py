"""Weighted, ridge-penalized pairwise logit estimation.

The objective is

    L(theta) = sum_c w_c log sigmoid(v[i_c, win_c] - v[i_c, lose_c])
               - (rho / 2) * ||penalized blocks of theta||^2

and is maximized either by deterministic full-batch gradient ascent or by
SGD that resamples comparisons in proportion to their weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core_model import BLOCKS, Hyperparams, ItemCatalog, ModelParams, log_sigmoid, sigmoid
from .errors import DimensionError, DivergenceError, InvalidWeightError, SchemaVersionError
from .exploder import ComparisonSet

MODEL_SCHEMA_VERSION = 1
SCHEDULES = ("constant", "inverse-t", "inverse-sqrt-t")


@dataclass(frozen=True)
class Objective:
    comparisons: ComparisonSet
    catalog: ItemCatalog
    hyper: Hyperparams

    def __post_init__(self):
        if self.comparisons.n_items != self.catalog.n_items:
            raise DimensionError("comparison set and catalog disagree on item count")
        # Differenced design rows, reused by every gradient evaluation.
        X = self.catalog.design
        object.__setattr__(self, "_dx", X[self.comparisons.winners] - X[self.comparisons.losers])

    @property
    def n_users(self) -> int:
        return self.comparisons.n_users

    def check(self, params: ModelParams) -> None:
        params.check_catalog(self.catalog)
        if params.n_users != self.n_users:
            raise DimensionError(f"params have {params.n_users} users, comparisons {self.n_users}")
        if params.rank != self.hyper.rank:
            raise DimensionError(f"params rank {params.rank} != hyper rank {self.hyper.rank}")


def _margins(obj: Objective, arrays, rows=None) -> np.ndarray:
    beta, alpha, U, F = arrays
    cs = obj.comparisons
    dx = obj._dx if rows is None else obj._dx[rows]
    u = cs.users if rows is None else cs.users[rows]
    w = cs.winners if rows is None else cs.winners[rows]
    l = cs.losers if rows is None else cs.losers[rows]
    dv = dx @ beta + alpha[w] - alpha[l]
    if U.shape[1]:
        dv += np.einsum("ck,ck->c", U[u], F[w] - F[l])
    return dv


def _arrays(params: ModelParams):
    return params.beta, params.alpha, params.user_factors, params.item_factors


def ridge_penalty(params: ModelParams, hyper: Hyperparams) -> float:
    total = 0.0
    if "beta" in hyper.ridge_scope:
        total += params.beta @ params.beta
    if "alpha" in hyper.ridge_scope:
        total += params.alpha @ params.alpha
    if "factors" in hyper.ridge_scope:
        total += np.sum(params.user_factors ** 2) + np.sum(params.item_factors ** 2)
    return 0.5 * hyper.ridge_lambda * float(total)


def log_likelihood(obj: Objective, params: ModelParams) -> float:
    obj.check(params)
    ll = obj.comparisons.weights @ log_sigmoid(_margins(obj, _arrays(params)))
    return float(ll) - ridge_penalty(params, obj.hyper)


def objective_change(obj: Objective, start: ModelParams, end: ModelParams) -> float:
    """``log_likelihood(end) - log_likelihood(start)`` without cancellation.

    Per comparison, ``log sigma(b) - log sigma(a) = -log1p(sigma(-a) * expm1(a - b))``,
    which keeps full relative precision for small moves; the ridge change is
    taken as ``(e - s) . (e + s)``. Differencing two large sums instead would
    lose everything below about ``1e-16 * |objective|``.
    """
    a = _margins(obj, _arrays(start))
    # Margin change straight from the (exactly representable) parameter
    # displacement; subtracting two rounded margins would swamp small moves.
    beta, alpha, U, F = _arrays(start)
    db, da, dU, dF = (x1 - x0 for x0, x1 in zip(_arrays(start), _arrays(end)))
    cs = obj.comparisons
    u, w, l = cs.users, cs.winners, cs.losers
    d = obj._dx @ db + da[w] - da[l]
    if U.shape[1]:
        dFwl = dF[w] - dF[l]
        d += np.einsum("ck,ck->c", dU[u], F[w] - F[l] + dFwl) + np.einsum("ck,ck->c", U[u], dFwl)
    b = a + d
    small = np.abs(d) < 1.0
    term = np.empty_like(d)
    term[small] = -np.log1p(sigmoid(-a[small]) * np.expm1(-d[small]))
    term[~small] = log_sigmoid(b[~small]) - log_sigmoid(a[~small])
    change = float(obj.comparisons.weights @ term)
    scope = obj.hyper.ridge_scope
    pen = 0.0
    for name, x0, x1 in zip(("beta", "alpha", "factors", "factors"), _arrays(start), _arrays(end)):
        if name in scope:
            pen += float(np.sum((x1 - x0) * (x1 + x0)))
    return change - 0.5 * obj.hyper.ridge_lambda * pen


def _gradient_arrays(obj: Objective, arrays, rows, coef, free=BLOCKS):
    """Gradient blocks (beta, alpha, U, F) from the given rows plus exact ridge.

    Each comparison's residual ``1 - sigmoid(dv)`` is multiplied by ``coef``
    (the weights for the exact gradient, a constant for resampled batches).
    Blocks not in ``free`` come back as zeros.
    """
    beta, alpha, U, F = arrays
    cs = obj.comparisons
    dx = obj._dx if rows is None else obj._dx[rows]
    u = cs.users if rows is None else cs.users[rows]
    w = cs.winners if rows is None else cs.winners[rows]
    l = cs.losers if rows is None else cs.losers[rows]
    r = coef * sigmoid(-_margins(obj, arrays, rows))
    rho, scope = obj.hyper.ridge_lambda, obj.hyper.ridge_scope
    n_items = alpha.shape[0]
    if "beta" in free:
        g_beta = dx.T @ r
        if "beta" in scope:
            g_beta -= rho * beta
    else:
        g_beta = np.zeros_like(beta)
    if "alpha" in free:
        g_alpha = np.bincount(w, r, n_items) - np.bincount(l, r, n_items)
        if "alpha" in scope:
            g_alpha -= rho * alpha
    else:
        g_alpha = np.zeros_like(alpha)
    g_user = np.zeros_like(U)
    g_item = np.zeros_like(F)
    if "factors" in free and U.shape[1]:
        np.add.at(g_user, u, r[:, None] * (F[w] - F[l]))
        rl = r[:, None] * U[u]
        np.add.at(g_item, w, rl)
        np.add.at(g_item, l, -rl)
        if "factors" in scope:
            g_user -= rho * U
            g_item -= rho * F
    return g_beta, g_alpha, g_user, g_item


def gradient(obj: Objective, params: ModelParams) -> ModelParams:
    """Analytic gradient of :func:`log_likelihood`, shaped like ``params``."""
    obj.check(params)
    return ModelParams(*_gradient_arrays(obj, _arrays(params), None, obj.comparisons.weights))


def _mask(g: ModelParams, hyper: Hyperparams) -> ModelParams:
    """Zero the gradient of frozen blocks."""
    free = hyper.free_blocks()
    return ModelParams(
        g.beta if "beta" in free else np.zeros_like(g.beta),
        g.alpha if "alpha" in free else np.zeros_like(g.alpha),
        g.user_factors if "factors" in free else np.zeros_like(g.user_factors),
        g.item_factors if "factors" in free else np.zeros_like(g.item_factors),
    )


def _flat(p: ModelParams) -> np.ndarray:
    return np.concatenate([p.beta, p.alpha, p.user_factors.ravel(), p.item_factors.ravel()])


def _unflat(v: np.ndarray, like: ModelParams) -> ModelParams:
    sizes = np.cumsum([like.beta.size, like.alpha.size, like.user_factors.size])
    b, a, U, F = np.split(v, sizes)
    return ModelParams(b, a, U.reshape(like.user_factors.shape), F.reshape(like.item_factors.shape))


def max_abs(g: ModelParams) -> float:
    return float(np.max(np.abs(_flat(g)), initial=0.0))


@dataclass
class FitResult:
    params: ModelParams
    objective: float
    converged: bool
    iterations: int
    grad_max_norm: float
    trace: list = field(default_factory=list)
    method: str = ""

    def diagnostics(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_max_norm": self.grad_max_norm,
        }


def init_params(catalog: ItemCatalog, n_users: int, hyper: Hyperparams, seed: int | None = None) -> ModelParams:
    """Zero attribute/item terms; factors uniform on ``[-s, s]``, ``s = scale / sqrt(K)``.

    Each factor entry then has variance ``s^2 / 3``, so the initial inner
    product ``lambda_i' f_j`` has standard deviation ``scale^2 / (3 sqrt(K))``.
    Zero factors are a saddle point, hence the random start.
    """
    K = hyper.rank
    params = ModelParams.zeros(n_users, catalog.n_features, catalog.n_items, K)
    if K == 0:
        return params
    rng = np.random.default_rng(hyper.rng_seed if seed is None else seed)
    s = hyper.factor_init_scale / np.sqrt(K)
    return params.copy(
        user_factors=rng.uniform(-s, s, size=(n_users, K)),
        item_factors=rng.uniform(-s, s, size=(catalog.n_items, K)),
    )


def _lbfgs_direction(g: np.ndarray, history) -> np.ndarray:
    """Two-loop recursion: ascent direction from recent (s, y) pairs, y = -(change in gradient)."""
    d = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ d)
        alphas.append(a)
        d -= a * y
    if history:
        s, y, _ = history[-1]
        d *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        d += (a - rho * (y @ d)) * s
    return d


def fit_full_batch(obj: Objective, init: ModelParams, max_iters: int = 5000, tol: float = 1e-7,
                   armijo: float = 1e-4, memory: int = 10) -> FitResult:
    """Ascent with a backtracking (Armijo) line search.

    Search directions are limited-memory quasi-Newton steps built from the
    last ``memory`` gradient differences; plain gradient steps are used
    whenever that direction fails to ascend. Step lengths are halved until
    the sufficient-increase condition holds, so the objective never
    decreases. Stops when the free-block gradient max-norm is below ``tol``.
    """
    obj.check(init)
    hyper = obj.hyper
    params = init
    f = log_likelihood(obj, params)
    g = _mask(gradient(obj, params), hyper)
    trace = [f]
    history: list = []
    it = 0
    gnorm = max_abs(g)
    x, gflat = _flat(params), _flat(g)
    while gnorm >= tol and it < max_iters:
        it += 1
        d = _lbfgs_direction(gflat, history)
        slope = gflat @ d
        if not slope > 0:
            history.clear()
            d = gflat
            slope = gflat @ d
        step = 1.0 if history else 1.0 / max(1.0, obj.comparisons.total_weight())
        while True:
            cand = _unflat(x + step * d, params)
            gain = objective_change(obj, params, cand)
            if gain >= armijo * step * slope or step < 1e-20:
                break
            step *= 0.5
        if not gain > 0:
            if history:
                history.clear()
                continue
            break
        fc = f + gain
        gc = _mask(gradient(obj, cand), hyper)
        gc_flat = _flat(gc)
        s, y = step * d, gflat - gc_flat
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            history.append((s, y, 1.0 / sy))
            if len(history) > memory:
                history.pop(0)
        params, f, g, x, gflat = cand, fc, gc, x + s, gc_flat
        gnorm = max_abs(g)
        trace.append(f)
    return FitResult(params, f, gnorm < tol, it, gnorm, trace, "full_batch")


@dataclass(frozen=True)
class AliasTable:
    """Walker/Vose alias table: O(n) build, O(1) per draw."""

    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self) -> int:
        return len(self.prob)

    def probabilities(self) -> np.ndarray:
        """Exact distribution induced by the table."""
        p = self.prob / self.n
        p = p + np.bincount(self.alias, (1.0 - self.prob) / self.n, self.n)
        return p

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cols = rng.integers(0, self.n, size=size)
        coins = rng.random(size)
        return np.where(coins < self.prob[cols], cols, self.alias[cols])


def build_alias_table(weights) -> AliasTable:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0 or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise InvalidWeightError("alias weights must be positive and finite")
    n = w.size
    scaled = w * (n / w.sum())
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, g = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # Leftovers are 1 up to rounding.
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(prob, alias)


@dataclass(frozen=True)
class SgdConfig:
    batch_size: int = 64
    steps: int = 100_000
    step_size: float = 0.1
    schedule: str = "inverse-sqrt-t"
    rng_seed: int = 0
    check_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 1:
            raise ValueError("batch_size and steps must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")

    def rate(self, t: int) -> float:
        """Step size at 1-based step ``t``."""
        if self.schedule == "constant":
            return self.step_size
        if self.schedule == "inverse-t":
            return self.step_size / t
        return self.step_size / np.sqrt(t)


def stochastic_gradient(obj: Objective, params: ModelParams, rows) -> ModelParams:
    """Unweighted batch gradient rescaled by ``total weight / batch size``, plus exact ridge.

    With rows drawn proportionally to weight its expectation is the exact
    weighted gradient.
    """
    scale = obj.comparisons.total_weight() / len(rows)
    return ModelParams(*_gradient_arrays(obj, _arrays(params), np.asarray(rows), scale))


def fit_sgd(obj: Objective, init: ModelParams, sgd: SgdConfig = SgdConfig()) -> FitResult:
    """Resampling SGD: each step draws a batch with replacement from the alias table.

    The objective is checked on the full set every ``check_every`` steps; a
    drop below ``initial - 10 * |initial|`` aborts with DivergenceError.
    """
    obj.check(init)
    free = obj.hyper.free_blocks()
    table = build_alias_table(obj.comparisons.weights)
    scale = obj.comparisons.total_weight() / sgd.batch_size
    rng = np.random.default_rng(sgd.rng_seed)
    arrays = [a.copy() for a in _arrays(init)]
    f0 = log_likelihood(obj, init)
    floor = f0 - 10.0 * abs(f0)
    trace = [f0]
    for t in range(1, sgd.steps + 1):
        rows = table.sample(rng, sgd.batch_size)
        grads = _gradient_arrays(obj, arrays, rows, scale, free)
        rate = sgd.rate(t)
        for a, g in zip(arrays, grads):
            a += rate * g
        if t % sgd.check_every == 0 or t == sgd.steps:
            with np.errstate(all="ignore"):
                f = log_likelihood(obj, ModelParams(*arrays)) if all(
                    np.all(np.isfinite(a)) for a in arrays) else -np.inf
            trace.append(f)
            if not np.isfinite(f) or f < floor:
                raise DivergenceError(f"SGD diverged at step {t}: objective {f:.6g} vs initial {f0:.6g}")
    params = ModelParams(*arrays)
    f = log_likelihood(obj, params)
    gnorm = max_abs(_mask(gradient(obj, params), obj.hyper))
    return FitResult(params, f, True, sgd.steps, gnorm, trace, "sgd")


def hyper_to_dict(hyper: Hyperparams) -> dict:
    d = asdict(hyper)
    d["ridge_scope"] = sorted(hyper.ridge_scope)
    return d


def hyper_from_dict(d: dict) -> Hyperparams:
    d = dict(d)
    d["ridge_scope"] = frozenset(d.get("ridge_scope", BLOCKS))
    return Hyperparams(**d)


@dataclass
class FittedModel:
    """A fitted parameter set with the metadata needed to score by id."""

    params: ModelParams
    catalog: ItemCatalog
    user_ids: tuple[str, ...]
    hyper: Hyperparams
    diagnostics: dict = field(default_factory=dict)

    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.user_ids)}

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "attribute_schema": [[name, list(levels)] for name, levels in self.catalog.attribute_schema],
            "item_ids": self.catalog.item_ids,
            "user_ids": list(self.user_ids),
            "beta": {
                name: dict(zip(levels, self.params.beta[block].tolist()))
                for (name, levels), block in zip(self.catalog.attribute_schema, self.catalog.attribute_blocks())
            },
            "alpha": dict(zip(self.catalog.item_ids, self.params.alpha.tolist())),
            "rank": self.params.rank,
            "user_factors": self.params.user_factors.tolist(),
            "item_factors": self.params.item_factors.tolist(),
            "hyperparams": hyper_to_dict(self.hyper),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(model.to_json(), encoding="utf-8")


def load_model(path, catalog: ItemCatalog) -> FittedModel:
    """Load a model JSON against ``catalog``, validating schema and shapes."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(f"model schema_version {version!r}, expected {MODEL_SCHEMA_VERSION}")
    schema = tuple((name, tuple(levels)) for name, levels in doc["attribute_schema"])
    if schema != catalog.attribute_schema or doc["item_ids"] != catalog.item_ids:
        raise SchemaVersionError("model attribute schema / items do not match the catalog")
    beta = np.concatenate(
        [[doc["beta"][name][lv] for lv in levels] for name, levels in schema]
    ) if schema else np.zeros(0)
    alpha = np.array([doc["alpha"][i] for i in catalog.item_ids], dtype=float)
    K = int(doc["rank"])
    U = np.array(doc["user_factors"], dtype=float).reshape(len(doc["user_ids"]), K)
    F = np.array(doc["item_factors"], dtype=float).reshape(catalog.n_items, K)
    params = ModelParams(beta, alpha, U, F)
    return FittedModel(params, catalog, tuple(doc["user_ids"]), hyper_from_dict(doc["hyperparams"]),
                       doc.get("diagnostics", {}))
