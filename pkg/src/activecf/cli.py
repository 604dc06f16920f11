"""Command-line pipeline: synthesize, ingest, train, precompute, evaluate, serve.

Every stage is a pure function of its input files, its flags, and
``--seed``, so reruns produce byte-identical artifacts. Flag values
beat a ``--config`` JSON file, which beats built-in defaults;
``--print-config`` echoes the resolved configuration before running.
Exit codes: 0 success, 1 runtime failure (missing/invalid files),
2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bounds import load_bound_tables, precompute_bound_tables, save_bound_tables
from .container import ContainerError, container_kind
from .data import (
    ReplayMask,
    SplitSpec,
    generate_synthetic,
    load_csv,
    make_split,
    remap_items,
    save_csv,
    separated_ground_truth,
)
from .evaluation import (
    ExperimentConfig,
    RunData,
    render_plots,
    run_prototype_experiment,
    run_pruning_experiment,
    run_query_experiment,
    save_plot_data,
)
from .mcvq import McvqModel
from .naive_bayes import NaiveBayesModel
from .prototypes import PrototypeSet, beta_for_fraction, select_prototypes
from .training import TrainConfig, fit_mcvq, fit_naive_bayes

log = logging.getLogger(__name__)

# hard defaults, overridable by --config then by flags
DEFAULTS = {
    "demo-data": {
        "items": 50, "types": 3, "attitudes": 2, "rho": 6,
        "users": 600, "density": 0.4, "seed": 0,
    },
    "ingest": {
        "rho": 6, "test_users": 100, "min_user_ratings": 0,
        "min_item_ratings": 0, "seed": 0,
    },
    "train": {
        "kind": "mcvq", "rho": 6, "types": 3, "attitudes": 2,
        "iters": 15, "tol": 0.0, "smoothing": 0.1, "var_floor": 0.05,
        "restarts": 2, "init": "spectral", "seed": 0,
    },
    "bounds": {"tighten": False, "threads": 1},
    "prototypes": {"rho": 6, "beta": None, "fraction": 0.4},
    "evaluate": {
        "rho": 6, "strategies": "evoi,entropy,random", "kappas": "1,2,3",
        "prune_mode": None, "target_pool": "held_out", "seed": 0,
        "threads": 1, "pruning_fractions": False, "plots": False,
    },
    "serve": {
        "rho": 6, "host": "127.0.0.1", "port": 8000, "threshold": 0.0,
    },
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option defaults for this subcommand")
    p.add_argument("--print-config", action="store_true", help="echo the resolved configuration")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activecf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-data", help="synthesize a ratings CSV from a separated ground truth")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--items", type=int)
    p.add_argument("--types", type=int)
    p.add_argument("--attitudes", type=int)
    p.add_argument("--rho", type=int)
    p.add_argument("--users", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("ingest", help="parse a ratings CSV, filter, and split off test users")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rho", type=int)
    p.add_argument("--test-users", type=int)
    p.add_argument("--min-user-ratings", type=int)
    p.add_argument("--min-item-ratings", type=int)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("train", help="fit a rating model on the training split")
    p.add_argument("--train-csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["mcvq", "naive_bayes"])
    p.add_argument("--rho", type=int)
    p.add_argument("--types", type=int)
    p.add_argument("--attitudes", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--var-floor", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--init", choices=["spectral", "random"])
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("bounds", help="precompute attitude-shift and mean-change bound tables")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tighten", action="store_true", default=None)
    p.add_argument("--threads", type=int)
    _add_common(p)

    p = sub.add_parser("prototypes", help="select a beta-spaced prototype query net")
    p.add_argument("--model", required=True)
    p.add_argument("--train-csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--fraction", type=float)
    _add_common(p)

    p = sub.add_parser("evaluate", help="replay held-out users under each query strategy")
    p.add_argument("--model", required=True)
    p.add_argument("--train-csv", required=True)
    p.add_argument("--test-csv", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rho", type=int)
    p.add_argument("--strategies")
    p.add_argument("--kappas")
    p.add_argument("--tables", help="bound tables file (enables pruning inside EVOI)")
    p.add_argument("--prune-mode", choices=["per_response", "expected"])
    p.add_argument("--prototypes", help="prototype net file (adds a restricted EVOI series)")
    p.add_argument("--pruning-fractions", action="store_true", default=None,
                   help="also measure the fraction of targets the bound tables prune")
    p.add_argument("--target-pool", choices=["held_out", "unobserved"])
    p.add_argument("--plots", action="store_true", default=None, help="render PNGs (needs matplotlib)")
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--model", required=True)
    p.add_argument("--tables")
    p.add_argument("--prototypes")
    p.add_argument("--labels-from", help="ratings CSV whose item labels name the catalog")
    p.add_argument("--rho", type=int)
    p.add_argument("--store", help="JSONL session log (omit for in-memory sessions)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--threshold", type=float)
    _add_common(p)

    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over the defaults."""
    base = dict(DEFAULTS[args.command])
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(base)
        if unknown:
            raise ValueError(f"config file sets unknown options {sorted(unknown)}")
        base.update(file_cfg)
    for key in base:
        flag = getattr(args, key, None)
        if flag is not None:
            base[key] = flag
    # required path arguments pass through untouched
    for key, val in vars(args).items():
        if key not in base and key not in ("config", "print_config", "verbose", "command"):
            base[key] = val
    return base


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


def _load_model(path: str):
    _require(path, "model")
    kind = container_kind(path)
    if kind == "mcvq":
        return McvqModel.load(path)
    if kind == "naive_bayes":
        return NaiveBayesModel.load(path)
    raise ContainerError(f"{path}: kind {kind!r} is not a rating model")


def _csv_list(text: str, cast) -> tuple:
    return tuple(cast(tok) for tok in str(text).split(",") if tok.strip())


def cmd_demo_data(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    truth = separated_ground_truth(
        m_items=cfg["items"], n_types=cfg["types"], n_attitudes=cfg["attitudes"],
        rho=cfg["rho"], seed=cfg["seed"],
    )
    d = generate_synthetic(truth, cfg["users"], cfg["density"], seed=cfg["seed"] + 1)
    truth.save(out / "ground_truth.model")
    save_csv(d, out / "ratings.csv")
    log.info("wrote %s and %s", out / "ground_truth.model", out / "ratings.csv")
    return 0


def cmd_ingest(cfg: dict) -> int:
    _require(cfg["csv"], "ratings csv")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    d = load_csv(cfg["csv"], rho=cfg["rho"])
    train, test, mask = make_split(
        d,
        SplitSpec(
            n_test_users=cfg["test_users"], seed=cfg["seed"],
            min_ratings_per_user=cfg["min_user_ratings"],
            min_ratings_per_item=cfg["min_item_ratings"],
        ),
    )
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    mask.save(out / "split.json", user_labels=test.user_labels)
    log.info("split %d train / %d test users", train.n_users, test.n_users)
    return 0


def cmd_train(cfg: dict) -> int:
    _require(cfg["train_csv"], "training csv")
    d = load_csv(cfg["train_csv"], rho=cfg["rho"])
    tc = TrainConfig(
        n_types=cfg["types"], n_attitudes=cfg["attitudes"], rho=cfg["rho"],
        max_iters=cfg["iters"], tol=cfg["tol"], seed=cfg["seed"],
        smoothing=cfg["smoothing"], var_floor=cfg["var_floor"],
        n_restarts=cfg["restarts"], init=cfg["init"],
    )
    if cfg["kind"] == "mcvq":
        model, trace = fit_mcvq(d, tc)
    else:
        model, trace = fit_naive_bayes(d, tc)
    model.save(cfg["out"])
    log.info("fit %s in %d iterations, final objective %.6f", cfg["kind"], len(trace), trace[-1])
    return 0


def cmd_bounds(cfg: dict) -> int:
    model = _load_model(cfg["model"])
    if not isinstance(model, McvqModel):
        raise ValueError("bound tables are defined for the vector-quantized model only")
    tables = precompute_bound_tables(model, tighten=cfg["tighten"], threads=cfg["threads"])
    save_bound_tables(cfg["out"], tables)
    log.info("wrote bound tables for %d items", model.n_items)
    return 0


def cmd_prototypes(cfg: dict) -> int:
    model = _load_model(cfg["model"])
    _require(cfg["train_csv"], "training csv")
    d = load_csv(cfg["train_csv"], rho=cfg["rho"])
    beta = cfg["beta"]
    if beta is None:
        beta = beta_for_fraction(model, d, cfg["fraction"])
        log.info("fraction %.2f resolved to beta %.4f", cfg["fraction"], beta)
    ps = select_prototypes(model, d, beta)
    ps.save(cfg["out"])
    log.info("selected %d prototypes (covering radius %.4f)", ps.members.size, ps.epsilon)
    return 0


def cmd_evaluate(cfg: dict) -> int:
    model = _load_model(cfg["model"])
    _require(cfg["train_csv"], "training csv")
    _require(cfg["test_csv"], "test csv")
    _require(cfg["split"], "split file")
    train = load_csv(cfg["train_csv"], rho=cfg["rho"])
    test = load_csv(cfg["test_csv"], rho=cfg["rho"])
    mask = ReplayMask.load(cfg["split"])
    if mask.n_users != test.n_users:
        raise ValueError("split schedules do not match the test csv")
    if train.item_labels is not None and mask.item_labels is not None:
        # CSV round trips renumber items by first appearance; the
        # training catalog (the model's item space) is authoritative
        test = remap_items(test, train.item_labels)
        mask = mask.remapped(train.item_labels)
    run = RunData(train=train, test=test, mask=mask)
    tables = None
    if cfg["tables"]:
        tables = load_bound_tables(_require(cfg["tables"], "bound tables"))
    ecfg = ExperimentConfig(
        model_kind="mcvq" if isinstance(model, McvqModel) else "naive_bayes",
        strategies=_csv_list(cfg["strategies"], str),
        kappa_sizes=_csv_list(cfg["kappas"], int),
        n_runs=1,
        pruning_mode=cfg["prune_mode"],
        target_pool=cfg["target_pool"],
        seed=cfg["seed"],
    )
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    docs = []
    report_lines = []
    if cfg["prototypes"]:
        ps = PrototypeSet.load(_require(cfg["prototypes"], "prototype net"))
        records = run_prototype_experiment(
            ecfg, [run], [model], protosets=[ps], threads=cfg["threads"]
        )
        for name, rec in records.items():
            report_lines += [f"[{name}]", rec.table(), ""]
            docs.append(rec.to_plot_doc(name=f"improvement_{name}"))
    else:
        rec = run_query_experiment(
            ecfg, [run], [model],
            tables=[tables] if tables is not None else None,
            threads=cfg["threads"],
        )
        report_lines += [rec.table(), ""]
        docs.append(rec.to_plot_doc())
    if cfg["pruning_fractions"]:
        if tables is None:
            raise ValueError("--pruning-fractions needs --tables")
        prec = run_pruning_experiment(ecfg, run, model, tables)
        report_lines += ["[pruning fractions]", prec.table(), ""]
        docs.append(prec.to_plot_doc())
    (out / "results.txt").write_text("\n".join(report_lines), encoding="utf-8")
    save_plot_data(out / "plot_data.json", docs)
    if cfg["plots"]:
        for png in render_plots(out / "plot_data.json", out):
            log.info("rendered %s", png)
    print("\n".join(report_lines))
    return 0


def cmd_serve(cfg: dict) -> int:
    import uvicorn

    from .service import create_app

    model = _load_model(cfg["model"])
    tables = load_bound_tables(_require(cfg["tables"], "bound tables")) if cfg["tables"] else None
    protos = PrototypeSet.load(_require(cfg["prototypes"], "prototype net")) if cfg["prototypes"] else None
    labels = None
    if cfg["labels_from"]:
        labels = list(load_csv(_require(cfg["labels_from"], "labels csv"), rho=cfg["rho"]).item_labels or [])
    app = create_app(
        model, tables=tables, prototypes=protos, store_path=cfg["store"],
        item_labels=labels, default_threshold=cfg["threshold"],
    )
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="info")
    return 0


COMMANDS = {
    "demo-data": cmd_demo_data,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "bounds": cmd_bounds,
    "prototypes": cmd_prototypes,
    "evaluate": cmd_evaluate,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.print_config:
        printable = {k: v for k, v in sorted(cfg.items())}
        print(json.dumps(printable, indent=2, default=str))
    try:
        return COMMANDS[args.command](cfg)
    except (FileNotFoundError, ContainerError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
