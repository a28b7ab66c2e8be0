"""Command-line front end: files in, files out.

Every subcommand takes ``--config PATH`` (JSON, ``schema_version`` 1); paths
inside the config are resolved relative to the config file. Randomness comes
from the top-level ``seed``: factor initialization uses ``seed`` and SGD
sampling uses ``seed + 1``; ``synth`` generates data with ``seed``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path


from . import estimator, exploder, propensity, recommender, segmentation, synthgen, taxonomy
from .core_model import Hyperparams, read_catalog_csv
from .errors import ConfigError, DataError, DegenerateLabelsError, IngestionError, NumericalError, PrefRankError

log = logging.getLogger("prefrank")

CONFIG_SCHEMA_VERSION = 1
SPECS = ("full", "attributes-only", "factors-only")

DEFAULTS = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "paths": {},
    "spec": "full",
    "optimizer": "full_batch",
    "ipw": True,
    "hyper": {"ridge_lambda": 1.0, "rank": 2},
    "full_batch": {"max_iters": 5000, "tol": 1e-7},
    "sgd": {},
    "weights": {},
    "eval": {"n_list": [5, 10], "cutoff": None, "split": "temporal", "holdout_share": 0.2},
    "lift": {"items": [], "threshold_pct": 10.0},
    "synth": {},
}


def load_config(path, overrides: argparse.Namespace | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if user.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {CONFIG_SCHEMA_VERSION}")
        for key, value in user.items():
            if key not in DEFAULTS:
                raise ConfigError(f"{path}: unknown config key {key!r}")
            if isinstance(DEFAULTS[key], dict) and isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
        base = path.parent
    cfg["paths"] = {k: (str((base / v).resolve()) if isinstance(v, str) else v) for k, v in cfg["paths"].items()}
    if overrides is not None:
        if getattr(overrides, "seed", None) is not None:
            cfg["seed"] = overrides.seed
        if getattr(overrides, "out", None):
            cfg["paths"]["out_dir"] = str(Path(overrides.out).resolve())
        if getattr(overrides, "no_ipw", False):
            cfg["ipw"] = False
        if getattr(overrides, "spec", None):
            cfg["spec"] = overrides.spec
    if cfg["spec"] not in SPECS:
        raise ConfigError(f"spec must be one of {SPECS}")
    if cfg["optimizer"] not in ("full_batch", "sgd"):
        raise ConfigError("optimizer must be 'full_batch' or 'sgd'")
    return cfg


def _path(cfg: dict, key: str, required: bool = True):
    value = cfg["paths"].get(key)
    if value is None:
        if required:
            raise ConfigError(f"paths.{key} is required for this command")
        return None
    return Path(value)


def _existing(cfg: dict, key: str, required: bool = True):
    p = _path(cfg, key, required)
    if p is not None and not p.exists():
        raise ConfigError(f"paths.{key} does not exist: {p}")
    return p


def _out_dir(cfg: dict) -> Path:
    out = _path(cfg, "out_dir", required=False) or Path.cwd() / "out"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: dict, out: Path, command: str) -> None:
    (out / f"config.{command}.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _build(cls, section: dict, what: str, **extra):
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {what} settings {sorted(unknown)}")
    kwargs = {**section, **extra}
    for k, v in kwargs.items():
        if isinstance(v, list):
            kwargs[k] = tuple(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {what} settings: {exc}") from None


def hyper_from_config(cfg: dict) -> Hyperparams:
    h = dict(cfg["hyper"])
    h.pop("rng_seed", None)
    if "ridge_scope" in h:
        h["ridge_scope"] = frozenset(h["ridge_scope"])
    rank = int(h.pop("rank", 0))
    spec = cfg["spec"]
    try:
        return Hyperparams.for_spec(spec, rank, rng_seed=int(cfg["seed"]), **h)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad hyper settings: {exc}") from None


def load_comparisons(cfg: dict, catalog):
    """Comparisons from (in priority order) a comparisons CSV, a rankings CSV or transactions."""
    info: dict = {}
    if cfg["paths"].get("comparisons"):
        cs = exploder.read_comparisons_csv(_existing(cfg, "comparisons"), catalog)
        info["source"] = "comparisons"
    elif cfg["paths"].get("rankings"):
        rankings = exploder.read_rankings_csv(_existing(cfg, "rankings"), catalog)
        cs = exploder.explode_all(rankings, catalog)
        info["source"] = "rankings"
    elif cfg["paths"].get("transactions"):
        tx = exploder.read_transactions_csv(_existing(cfg, "transactions"), catalog)
        rankings, skipped = exploder.transactions_to_rankings(tx, catalog.item_ids, cfg["eval"].get("cutoff"))
        for user, reason in skipped:
            log.warning("skipping %s", reason)
        if not rankings:
            raise IngestionError("no usable purchase histories in transactions")
        cs = exploder.explode_all(rankings, catalog)
        info.update(source="transactions", skipped_users=len(skipped))
    else:
        raise ConfigError("one of paths.comparisons, paths.rankings or paths.transactions is required")
    result = exploder.dedupe(cs)
    info.update(n_merged=result.n_merged, n_contradictions=result.n_contradictions)
    return result.comparisons, info


def fit_model(cfg: dict, catalog, cs):
    """Propensity weighting (optional) followed by estimation; returns (FittedModel, log dict)."""
    hyper = hyper_from_config(cfg)
    fit_log: dict = {"n_comparisons": len(cs), "n_users": cs.n_users, "ipw": bool(cfg["ipw"])}
    if cfg["ipw"]:
        wc = _build(propensity.WeightConfig, cfg["weights"], "weights")
        data = propensity.build_observability_data(cs, catalog, wc.features)
        try:
            pmodel = propensity.fit_propensity(data, wc)
        except DegenerateLabelsError:
            # Every item visible to every user: exposure is uniform and the
            # correction would leave the weights unchanged.
            log.warning("every item is observed for every user; IPW skipped")
            fit_log["ipw"] = False
            pmodel = None
        if pmodel is not None:
            q = propensity.item_propensities(pmodel, catalog)
            fit_log["propensity"] = json.loads(pmodel.to_json())
            fit_log["weights"] = propensity.weight_diagnostics(cs, q, wc)
            cs = propensity.assign_ipw_weights(cs, q, wc)
    obj = estimator.Objective(cs, catalog, hyper)
    init = estimator.init_params(catalog, cs.n_users, hyper, seed=int(cfg["seed"]))
    if cfg["optimizer"] == "sgd":
        sgd = _build(estimator.SgdConfig, cfg["sgd"], "sgd", rng_seed=int(cfg["seed"]) + 1)
        result = estimator.fit_sgd(obj, init, sgd)
    else:
        fb = cfg["full_batch"]
        result = estimator.fit_full_batch(obj, init, int(fb.get("max_iters", 5000)), float(fb.get("tol", 1e-7)))
    if not result.converged:
        log.warning("optimizer stopped before convergence (grad max-norm %.3g)", result.grad_max_norm)
    fit_log["objective_trace"] = result.trace
    diag = result.diagnostics()
    diag["spec"] = cfg["spec"]
    diag["ipw"] = bool(fit_log["ipw"])
    model = estimator.FittedModel(result.params, catalog, cs.user_ids, hyper, diag)
    return model, fit_log, cs


def cmd_classify(args, cfg) -> int:
    src = Path(args.input) if args.input else _existing(cfg, "products")
    if not src.exists():
        raise ConfigError(f"input not found: {src}")
    rulebook = taxonomy.load_rulebook(args.rulebook or cfg["paths"].get("rulebook"))
    wines = taxonomy.read_products_csv(src)
    out = _out_dir(cfg)
    result = taxonomy.classify(wines, rulebook)
    if not wines:
        log.warning("input %s contains no products", src)
    taxonomy.write_labels_csv(result, out / "labels.csv")
    taxonomy.write_warnings_csv(result.warnings, out / "warnings.csv")
    print(f"classified {len(wines)} products -> {out / 'labels.csv'} ({len(result.warnings)} warnings)")
    return 0


def cmd_explode(args, cfg) -> int:
    catalog = read_catalog_csv(_existing(cfg, "catalog"))
    cs, info = load_comparisons(cfg, catalog)
    out = _out_dir(cfg)
    exploder.write_comparisons_csv(cs, catalog, out / "comparisons.csv")
    print(f"{len(cs)} comparisons for {cs.n_users} users ({info})")
    return 0


def cmd_fit(args, cfg) -> int:
    catalog = read_catalog_csv(_existing(cfg, "catalog"))
    cs, info = load_comparisons(cfg, catalog)
    out = _out_dir(cfg)
    _echo_config(cfg, out, "fit")
    model, fit_log, weighted = fit_model(cfg, catalog, cs)
    fit_log["ingestion"] = info
    model_path = _path(cfg, "model", required=False) or out / "model.json"
    estimator.save_model(model, model_path)
    (out / "fit_log.json").write_text(json.dumps(fit_log, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if fit_log["ipw"]:
        exploder.write_comparisons_csv(weighted, catalog, out / "weighted_comparisons.csv")
    d = model.diagnostics
    print(f"fit {d['method']} spec={d['spec']} ipw={d['ipw']}: objective {d['objective']:.6f}, "
          f"converged={d['converged']} after {d['iterations']} iterations -> {model_path}")
    return 0


def _load_model(cfg):
    catalog = read_catalog_csv(_existing(cfg, "catalog"))
    model_path = _path(cfg, "model", required=False) or _out_dir(cfg) / "model.json"
    if not model_path.exists():
        raise ConfigError(f"model file not found: {model_path} (run `prefrank fit` first)")
    return catalog, estimator.load_model(model_path, catalog)


def _split(cfg, catalog):
    tx = exploder.read_transactions_csv(_existing(cfg, "transactions"), catalog)
    ev = cfg["eval"]
    if ev.get("split", "temporal") == "random":
        return recommender.random_split(tx, float(ev.get("holdout_share", 0.2)), int(cfg["seed"]))
    cutoff = ev.get("cutoff")
    if cutoff is None:
        return {u: {t.item_id for t in tx if t.user_id == u} for u in {t.user_id for t in tx}}, {}
    return recommender.temporal_split(tx, float(cutoff))


def cmd_recommend(args, cfg) -> int:
    catalog, model = _load_model(cfg)
    train, _ = _split(cfg, catalog) if cfg["paths"].get("transactions") else ({}, {})
    N = args.n or max(cfg["eval"]["n_list"])
    lists = []
    for u, uid in enumerate(model.user_ids):
        consumed = frozenset(catalog.index_of(i) for i in train.get(uid, ()))
        lists.append(recommender.recommend_top_n(model.params, catalog, recommender.UserHistory(u, consumed), N))
    out = _out_dir(cfg)
    recommender.write_recommendations_csv(lists, catalog, model.user_ids, out / "recommendations.csv")
    print(f"wrote top-{N} lists for {len(lists)} users -> {out / 'recommendations.csv'}")
    return 0


def evaluate_model(model, catalog, train: dict, heldout: dict, n_list, model_name="model"):
    """Model and popularity rows for every N, over users known to the model."""
    index = model.user_index()
    counts = recommender.popularity_from_transactions(train, catalog)
    held = {index[u]: {catalog.index_of(i) for i in items} for u, items in heldout.items() if u in index}
    report = recommender.EvalReport()
    max_n = max(n_list)
    model_recs, pop_recs = {}, {}
    for u in held:
        consumed = frozenset(catalog.index_of(i) for i in train.get(model.user_ids[u], ()))
        hist = recommender.UserHistory(u, consumed)
        model_recs[u] = recommender.recommend_top_n(model.params, catalog, hist, max_n).items
        pop_recs[u] = recommender.popularity_baseline(counts, catalog, hist, max_n).items
    for N in n_list:
        report.add(recommender.evaluate(model_recs, held, N, model_name))
        report.add(recommender.evaluate(pop_recs, held, N, "popularity"))
    return report


def cmd_evaluate(args, cfg) -> int:
    catalog, model = _load_model(cfg)
    train, heldout = _split(cfg, catalog)
    if not heldout:
        raise IngestionError("no held-out adoptions; set eval.cutoff or eval.split")
    name = f"model[{model.diagnostics.get('spec', 'full')}]"
    report = evaluate_model(model, catalog, train, heldout, [int(n) for n in cfg["eval"]["n_list"]], name)
    out = _out_dir(cfg)
    (out / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report.to_table())
    return 0


def cmd_lift(args, cfg) -> int:
    catalog, model = _load_model(cfg)
    segs = segmentation.read_segments_csv(_existing(cfg, "segments"), model.user_ids)
    lift_cfg = cfg["lift"]
    items = lift_cfg.get("items") or catalog.item_ids
    threshold = float(lift_cfg.get("threshold_pct", 10.0))
    reports = [
        segmentation.lift_report(model.params, catalog, catalog.index_of(i), segs, threshold) for i in items
    ]
    out = _out_dir(cfg)
    segmentation.write_lift_csv(reports, out / "lift.csv")
    for rep in reports[:5]:
        print(rep.to_table())
    if len(reports) > 5:
        print(f"... {len(reports) - 5} more items in {out / 'lift.csv'}")
    return 0


def cmd_synth(args, cfg) -> int:
    section = dict(cfg["synth"])
    section.setdefault("rng_seed", int(cfg["seed"]))
    if args.seed is not None:
        section["rng_seed"] = args.seed
    synth_cfg = _build(synthgen.SynthConfig, section, "synth")
    truth = synthgen.generate(synth_cfg)
    out = _out_dir(cfg)
    synthgen.write_synth(truth, out)
    run_cfg = {
        "schema_version": CONFIG_SCHEMA_VERSION,
        "seed": synth_cfg.rng_seed,
        "paths": {"catalog": "catalog.csv", "comparisons": "comparisons.csv", "transactions": "transactions.csv",
                  "segments": "segments.csv", "out_dir": "run"},
        "hyper": {"ridge_lambda": 1.0, "rank": max(synth_cfg.rank, 1)},
        "weights": {"features": ["intercept", "covariates"]},
        "eval": {"n_list": [5, 10], "cutoff": 1.0},
    }
    (out / "config.json").write_text(json.dumps(run_cfg, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"synthetic data ({len(truth.comparisons)} comparisons) -> {out}; run config at {out / 'config.json'}")
    return 0


COMMANDS = {
    "classify": cmd_classify,
    "explode": cmd_explode,
    "fit": cmd_fit,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "lift": cmd_lift,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefrank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")
        p.add_argument("--no-ipw", action="store_true", help="skip propensity weighting")
        p.add_argument("--spec", choices=SPECS, help="model specification")
        if name == "classify":
            p.add_argument("--input", help="product CSV (overrides paths.products)")
            p.add_argument("--rulebook", help="rulebook JSON (default: packaged)")
        if name == "recommend":
            p.add_argument("--n", type=int, help="list length (default: largest eval.n_list)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except PrefRankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
