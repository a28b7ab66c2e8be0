import csv

import numpy as np
import pytest

from prefrank.core_model import ItemCatalog, ItemRecord, ModelParams
from prefrank.exploder import Comparison, ComparisonSet


def make_catalog(levels=(3, 2), n_items=6, rng=None, n_cov=0):
    """Catalog whose items cycle through attribute levels (random levels if ``rng`` is given)."""
    schema = tuple((f"a{k}", tuple(f"l{v}" for v in range(n))) for k, n in enumerate(levels))
    records = []
    for j in range(n_items):
        lv = {}
        for k, n in enumerate(levels):
            v = int(rng.integers(n)) if rng is not None else (j + k) % n
            lv[f"a{k}"] = f"l{v}"
        cov = tuple(float(x) for x in (rng.standard_normal(n_cov) if rng is not None else np.arange(n_cov)))
        records.append(ItemRecord(f"i{j:03d}", lv, cov))
    return ItemCatalog(tuple(records), schema, tuple(f"cov_{c}" for c in range(n_cov)))


def random_params(rng, catalog, n_users, rank, scale=1.0):
    return ModelParams(
        scale * rng.standard_normal(catalog.n_features),
        scale * rng.standard_normal(catalog.n_items),
        scale * rng.standard_normal((n_users, rank)),
        scale * rng.standard_normal((catalog.n_items, rank)),
    )


def random_comparisons(rng, n_users, n_items, n_comp, weighted=True):
    comps = []
    for _ in range(n_comp):
        w, l = rng.choice(n_items, size=2, replace=False)
        comps.append(Comparison(int(rng.integers(n_users)), int(w), int(l),
                                float(rng.uniform(0.2, 3.0)) if weighted else 1.0))
    return ComparisonSet.from_comparisons(comps, n_users, n_items)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def flat(p):
    return np.concatenate([p.beta, p.alpha, p.user_factors.ravel(), p.item_factors.ravel()])


def unflat(v, like):
    cut = np.cumsum([like.beta.size, like.alpha.size, like.user_factors.size])
    b, a, U, F = np.split(v, cut)
    return ModelParams(b, a, U.reshape(like.user_factors.shape), F.reshape(like.item_factors.shape))


def central_differences(f, params, h=1e-5):
    """Central finite-difference gradient of ``f`` over every parameter entry."""
    x = flat(params)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(unflat(x + e, params)) - f(unflat(x - e, params))) / (2 * h)
    return g


def ridge_logit_irls(DX, weights, rho, tol=1e-14, max_iter=100):
    """Weighted ridge logistic regression of y = 1 on rows ``DX`` by Newton/IRLS.

    Maximizes sum_c w_c log sigmoid(DX_c b) - rho/2 |b|^2, coded independently
    of the package estimator.
    """
    b = np.zeros(DX.shape[1])
    for _ in range(max_iter):
        t = DX @ b
        p = 1.0 / (1.0 + np.exp(-t))
        grad = DX.T @ (weights * (1.0 - p)) - rho * b
        H = (DX * (weights * p * (1.0 - p))[:, None]).T @ DX + rho * np.eye(DX.shape[1])
        step = np.linalg.solve(H, grad)
        b = b + step
        if np.max(np.abs(step)) < tol:
            break
    return b


# (input composition, colour, sparkling, region, expected final label)
TABLE_ROWS = [
    ("Chardonnay 35%, Pinot Meunier 5%, Pinot Noir 65%", "white", True, "Champagne", "Champagne Blend"),
    ("Pinot Noir 100%", "red", False, "Burgundy", "Pinot Noir"),
    ("Riesling 60%, Sémillon 40%", "white", False, "Clare Valley", "White wine"),
    ("Chardonnay 100%", "white", False, "Burgundy", "White wine"),
    ("Cinsault / Grenache", "rosé", False, "Provence", "Rosé wine"),
    ("Pinot Noir / Poulsard (Ploussard) / Trousseau", "red", False, "Jura", "Red wine"),
    ("Muscat 100%", "white", True, "Asti", "Muscat Sparkling"),
    ("Vermentino 100%", "white", False, "Sardinia", "White wine"),
    ("Grenache 70%, Syrah 8%, Mourvèdre 8%, Carignan 8%, Other 6%", "red", False, "Southern Rhône", "GSM Blend"),
    ("Macabeo 50%, Xarel-lo 25%, Parellada 20%, Mourvèdre 5%", "white", True, "Penedès", "Cava Blend"),
]

# Frequency context: enough same-style products that each major label survives collapse.
FILLERS = [
    ("Champagne", "Chardonnay, Pinot Noir", "white", True),
    ("Burgundy", "Pinot Noir", "red", False),
    ("Asti", "Moscato", "white", True),
    ("Southern Rhône", "Grenache, Syrah, Mourvèdre", "red", False),
    ("Penedès", "Macabeo, Parellada, Xarel-lo", "white", True),
]


def write_table_products_csv(path):
    """Products CSV holding the ten reference rows (ids t1..t10) plus their frequency context."""
    rows = [(f"t{k + 1}", region, text, color, sparkling) for k, (text, color, sparkling, region, _) in enumerate(TABLE_ROWS)]
    for region, text, color, sparkling in FILLERS:
        rows += [(f"{region}-{n}", region, text, color, sparkling) for n in range(11)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["product_id", "region", "varieties", "color", "sparkling"])
        for pid, region, text, color, sparkling in rows:
            writer.writerow([pid, region, text, color, int(sparkling)])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
