"""Synthetic populations with known utilities and exposure.

Each user's consideration set includes item j independently with
probability ``q_j = sigmoid(eta0 + eta1 * z_j)`` where ``z_j`` is the item's
``cov_z`` covariate. Comparisons exist only among considered items. Three
outcome modes:

``pairwise``
    every considered pair (or a sample of them) is an independent logistic
    draw, winner with probability ``sigmoid(v_j - v_j')``;
``ranking``
    one coherent ranking of the considered set from utilities plus Gumbel
    noise, exploded into all implied pairs;
``purchase``
    the top ``purchases_per_user`` items of the considered set (utilities
    plus Gumbel noise) are bought; bought items beat the rest of the set.

Held-out adoptions are the Gumbel-top ``heldout_per_user`` items among all
items the user has not consumed in training.

Randomness: user ``i`` draws from ``default_rng(SeedSequence(seed).spawn(n_users + 1)[i + 1])``
and the parameter draws use child 0, so users can be generated in any order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core_model import ItemCatalog, ItemRecord, ModelParams, sigmoid, utility_matrix, write_catalog_csv
from .errors import DegenerateConfigError
from .exploder import Comparison, ComparisonSet, Transaction, write_transactions_csv

MODES = ("pairwise", "ranking", "purchase")


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 200
    n_items: int = 30
    attribute_levels: tuple[int, ...] = (3, 3, 3)
    rank: int = 0
    beta_scale: float = 1.0
    alpha_scale: float = 0.0
    factor_scale: float = 1.0
    exposure: tuple[float, float] | None = None
    exposure_alpha_corr: float = 0.0
    mode: str = "pairwise"
    comparisons_per_user: int | None = None
    purchases_per_user: int = 3
    heldout_per_user: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 2:
            raise DegenerateConfigError("need at least one user and two items")
        if any(k < 1 for k in self.attribute_levels) or self.rank < 0:
            raise DegenerateConfigError("attribute levels must be positive and rank non-negative")
        if self.mode not in MODES:
            raise DegenerateConfigError(f"mode must be one of {MODES}")
        scales = (self.beta_scale, self.alpha_scale, self.factor_scale)
        if not all(np.isfinite(s) and s >= 0 for s in scales):
            raise DegenerateConfigError("parameter scales must be finite and non-negative")
        if not -1.0 <= self.exposure_alpha_corr <= 1.0:
            raise DegenerateConfigError("exposure_alpha_corr must lie in [-1, 1]")


@dataclass
class SynthTruth:
    config: SynthConfig
    catalog: ItemCatalog
    params: ModelParams
    q: np.ndarray
    observable: np.ndarray
    comparisons: ComparisonSet
    consumed: list
    heldout: list

    @property
    def user_ids(self) -> tuple[str, ...]:
        return self.comparisons.user_ids

    def transactions(self) -> list[Transaction]:
        """Training purchases at t=0 and held-out adoptions at t=1."""
        ids = self.catalog.item_ids
        out = []
        for u, uid in enumerate(self.user_ids):
            out.extend(Transaction(uid, ids[j], 0.0) for j in sorted(self.consumed[u]))
            out.extend(Transaction(uid, ids[j], 1.0) for j in sorted(self.heldout[u]))
        return out


def _catalog(config: SynthConfig, levels, z) -> ItemCatalog:
    records = [
        ItemRecord(
            f"i{j:04d}",
            {f"a{k}": f"l{levels[k][j]}" for k in range(len(config.attribute_levels))},
            (float(z[j]),),
        )
        for j in range(config.n_items)
    ]
    schema = tuple((f"a{k}", tuple(f"l{v}" for v in range(n))) for k, n in enumerate(config.attribute_levels))
    return ItemCatalog(tuple(records), schema, ("cov_z",))


def generate(config: SynthConfig) -> SynthTruth:
    children = np.random.SeedSequence(config.rng_seed).spawn(config.n_users + 1)
    rng = np.random.default_rng(children[0])
    n, m, K = config.n_users, config.n_items, config.rank
    levels = [rng.integers(0, k, size=m) for k in config.attribute_levels]
    X = np.hstack([np.eye(k)[lv] for k, lv in zip(config.attribute_levels, levels)])
    # Item quality is made orthogonal to the attribute design, so the
    # attribute coefficients stay the best linear description of utility.
    alpha = config.alpha_scale * rng.standard_normal(m)
    alpha -= X @ np.linalg.lstsq(X, alpha, rcond=None)[0]
    sd = alpha.std()
    c = config.exposure_alpha_corr
    z = c * (alpha / sd if sd > 0 else 0.0) + np.sqrt(1 - c * c) * rng.standard_normal(m)
    catalog = _catalog(config, levels, z)
    beta = config.beta_scale * rng.standard_normal(catalog.n_features)
    U = config.factor_scale * rng.standard_normal((n, K))
    F = config.factor_scale * rng.standard_normal((m, K))
    params = ModelParams(beta, alpha, U, F)
    z = catalog.covariate_matrix()[:, 0]
    q = np.ones(m) if config.exposure is None else sigmoid(config.exposure[0] + config.exposure[1] * z)

    V = utility_matrix(params, catalog)
    observable = np.zeros((n, m), dtype=bool)
    comps: list[Comparison] = []
    consumed, heldout = [], []
    for i in range(n):
        urng = np.random.default_rng(children[i + 1])
        seen = urng.random(m) < q
        observable[i] = seen
        S = np.flatnonzero(seen)
        bought: set = set()
        if config.mode == "pairwise":
            pairs = [(a, b) for x, a in enumerate(S) for b in S[x + 1:]]
            if config.comparisons_per_user is not None and len(pairs) > config.comparisons_per_user:
                pick = urng.choice(len(pairs), config.comparisons_per_user, replace=False)
                pairs = [pairs[p] for p in sorted(pick)]
            if pairs:
                a, b = np.array(pairs).T
                first_wins = urng.random(len(pairs)) < sigmoid(V[i, a] - V[i, b])
                for x, y, win in zip(a.tolist(), b.tolist(), first_wins):
                    comps.append(Comparison(i, x, y) if win else Comparison(i, y, x))
        elif len(S) >= 2:
            noisy = V[i, S] + urng.gumbel(size=len(S))
            order = S[np.argsort(-noisy, kind="stable")]
            if config.mode == "ranking":
                comps.extend(Comparison(i, int(w), int(l)) for x, w in enumerate(order) for l in order[x + 1:])
            else:
                p = min(config.purchases_per_user, len(S) - 1)
                top, rest = order[:p], order[p:]
                bought = set(top.tolist())
                comps.extend(Comparison(i, int(w), int(l)) for w in sorted(top) for l in sorted(rest))
        consumed.append(bought)
        candidates = np.array([j for j in range(m) if j not in bought])
        noisy = V[i, candidates] + urng.gumbel(size=len(candidates))
        k = min(config.heldout_per_user, len(candidates))
        heldout.append(set(candidates[np.argsort(-noisy, kind="stable")[:k]].tolist()))

    if not comps:
        raise DegenerateConfigError("configuration produced no comparisons")
    user_ids = tuple(f"u{i:05d}" for i in range(n))
    cs = ComparisonSet.from_comparisons(comps, n, m, user_ids)
    return SynthTruth(config, catalog, params, q, observable, cs, consumed, heldout)


def pairwise_prob_rmse(estimated: ModelParams, truth: ModelParams, catalog: ItemCatalog) -> float:
    """RMS gap in pairwise win probabilities over all users and unordered item pairs."""
    Va = utility_matrix(estimated, catalog)
    Vb = utility_matrix(truth, catalog)
    iu = np.triu_indices(catalog.n_items, k=1)
    Pa = sigmoid((Va[:, :, None] - Va[:, None, :])[:, iu[0], iu[1]])
    Pb = sigmoid((Vb[:, :, None] - Vb[:, None, :])[:, iu[0], iu[1]])
    return float(np.sqrt(np.mean((Pa - Pb) ** 2)))


def pairwise_prob_max_diff(a: ModelParams, b: ModelParams, catalog: ItemCatalog) -> float:
    Va = utility_matrix(a, catalog)
    Vb = utility_matrix(b, catalog)
    iu = np.triu_indices(catalog.n_items, k=1)
    Pa = sigmoid((Va[:, :, None] - Va[:, None, :])[:, iu[0], iu[1]])
    Pb = sigmoid((Vb[:, :, None] - Vb[:, None, :])[:, iu[0], iu[1]])
    return float(np.max(np.abs(Pa - Pb)))


def write_synth(truth: SynthTruth, out_dir) -> dict:
    """Write catalog, comparisons, transactions, segments and ground truth into ``out_dir``."""
    from .exploder import write_comparisons_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "catalog": out / "catalog.csv",
        "comparisons": out / "comparisons.csv",
        "transactions": out / "transactions.csv",
        "segments": out / "segments.csv",
        "truth": out / "truth.json",
    }
    write_catalog_csv(truth.catalog, paths["catalog"])
    write_comparisons_csv(truth.comparisons, truth.catalog, paths["comparisons"])
    write_transactions_csv(truth.transactions(), paths["transactions"])
    # Segments by the sign of each user's first latent factor (or a single segment).
    with paths["segments"].open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "segment"])
        U = truth.params.user_factors
        for i, uid in enumerate(truth.user_ids):
            seg = "all" if U.shape[1] == 0 else ("pos" if U[i, 0] >= 0 else "neg")
            writer.writerow([uid, seg])
    cfg = asdict(truth.config)
    doc = {
        "config": cfg,
        "beta": truth.params.beta.tolist(),
        "alpha": truth.params.alpha.tolist(),
        "user_factors": truth.params.user_factors.tolist(),
        "item_factors": truth.params.item_factors.tolist(),
        "q": truth.q.tolist(),
    }
    paths["truth"].write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
