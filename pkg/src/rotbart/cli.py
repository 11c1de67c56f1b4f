"""Batch command-line interface.

Subcommands: ``generate`` benchmark datasets, ``fit`` a model, ``predict``
intervals at new points from a stored fit, ``diagnose`` a stored fit, and
``oracle-merge`` to print the merge reconstructions of two cut pieces.
All outputs are deterministic given the seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .datasets import CsvFormatError, gen_friedman, gen_wu_synthetic, \
    load_csv, scale_dataset, write_csv
from .diagnostics import acceptance_summary, predictive_interval, tree_census, \
    write_acceptance_csv, write_census_csv, write_intervals_csv, write_traces_csv
from .model import Hyperparams
from .rotation import cut_left, cut_right, enumerate_merges
from .sampler import DEFAULT_WEIGHTS, RunConfig, run_chain
from .tree import CutpointGrid, TreeFormatError, evaluate_many, parse, \
    serialize, structure_key

__all__ = ["main"]


class CliError(Exception):
    """One-line failure with a nonzero exit code."""


# config keys: name -> (parser, is hyperparameter)
_CONFIG_KEYS = {
    "iterations_burnin": (int, False),
    "iterations_keep": (int, False),
    "thinning": (int, False),
    "seed": (int, False),
    "n_cutpoints": (int, False),
    "alpha_scale": (float, False),
    "precond_cutoff": (float, False),
    "update_sigma2": (None, False),  # bool, parsed specially
    "weight_birth_death": (float, False),
    "weight_perturb": (float, False),
    "weight_change_var": (float, False),
    "weight_rotate": (float, False),
    "m": (int, True),
    "split_alpha": (float, True),
    "split_beta": (float, True),
    "sigma_mu": (float, True),
    "k": (float, True),
    "nu": (float, True),
    "lambda": (float, True),
    "min_leaf_n": (int, True),
    "perturb_integrated": (None, True),
}
_BOOL_KEYS = {"update_sigma2", "perturb_integrated"}


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config_file(path) -> dict:
    """``key = value`` lines; '#' starts a comment; unknown keys are errors."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        caster, _ = _CONFIG_KEYS[key]
        try:
            values[key] = _parse_bool(value) if key in _BOOL_KEYS else caster(value)
        except ValueError:
            raise CliError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def build_run_config(values: dict, y_scaled) -> RunConfig:
    hyper_over = {}
    for key, (_, is_hyper) in _CONFIG_KEYS.items():
        if is_hyper and key in values:
            target = "lambd" if key == "lambda" else key
            hyper_over[target] = values[key]
    k = hyper_over.pop("k", 2.0)
    m = hyper_over.pop("m", 200)
    hyper = Hyperparams.defaults(m=m, y_scaled=y_scaled, k=k, **hyper_over)
    weights = dict(DEFAULT_WEIGHTS)
    for kind in list(weights):
        key = f"weight_{kind}"
        if key in values:
            weights[kind] = values[key]
    kwargs = {}
    for key in ("iterations_burnin", "iterations_keep", "thinning", "seed",
                "n_cutpoints", "alpha_scale", "precond_cutoff", "update_sigma2"):
        if key in values:
            kwargs[key] = values[key]
    kwargs.setdefault("iterations_burnin", 1000)
    kwargs.setdefault("iterations_keep", 1000)
    return RunConfig(hyper=hyper, weights=weights, **kwargs)


def _cmd_generate(args) -> int:
    if args.benchmark == "friedman":
        ds = gen_friedman(args.n, args.sigma2, args.seed, args.d_total)
    else:
        ds = gen_wu_synthetic(args.seed)
    write_csv(ds, args.out)
    print(f"wrote {ds.n} rows x {ds.d} covariates to {args.out}")
    return 0


def _fit_one(config: RunConfig, data, dataset, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_chain(config, data)
    meta = {
        "columns": list(dataset.columns),
        "n": dataset.n,
        "d": dataset.d,
        "x_min": [float(v) for v in data.x_min],
        "x_max": [float(v) for v in data.x_max],
        "y_min": data.y_min,
        "y_max": data.y_max,
        "n_cutpoints": config.n_cutpoints,
        "seed": config.seed,
        "burnin": config.iterations_burnin,
        "keep": config.iterations_keep,
        "thinning": config.thinning,
        "weights": {k: config.weights.get(k, 0.0) for k in sorted(DEFAULT_WEIGHTS)},
        "hyper": {
            "m": config.hyper.m,
            "split_alpha": config.hyper.split_alpha,
            "split_beta": config.hyper.split_beta,
            "sigma_mu": config.hyper.sigma_mu,
            "nu": config.hyper.nu,
            "lambda": config.hyper.lambd,
            "min_leaf_n": config.hyper.min_leaf_n,
            "perturb_integrated": config.hyper.perturb_integrated,
        },
    }
    (out_dir / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    with open(out_dir / "draws.jsonl", "w", encoding="utf-8") as fh:
        for i, it in enumerate(result.kept_iterations):
            record = {
                "iter": it,
                "sigma2": float(result.sigma2_draws[i]),
                "trees": list(result.tree_serializations[i]),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    write_traces_csv(out_dir / "traces.csv", result.outcomes)
    write_acceptance_csv(out_dir / "acceptance.csv", result.outcomes,
                         window=(config.iterations_burnin, None))
    census = tree_census(result.tree_structures)
    summary = {
        "n_draws": result.n_draws,
        "census_size": len(census),
        "sigma2_mean": float(np.mean(result.sigma2_draws))
        if result.n_draws else None,
        "acceptance": {
            kind: rate for kind, _, _, rate in
            acceptance_summary(result.outcomes,
                               window=(config.iterations_burnin, None))
        },
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _cmd_fit(args) -> int:
    dataset = load_csv(args.data)
    data = scale_dataset(dataset)
    values = read_config_file(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = args.seed
    config = build_run_config(values, data.y)
    out = Path(args.out)
    if args.chains == 1:
        _fit_one(config, data, dataset, out)
    else:
        from dataclasses import replace
        for i in range(args.chains):
            if i == 0:
                cfg = config
            else:
                child = np.random.SeedSequence(config.seed, spawn_key=(i,))
                cfg = replace(config, seed=int(child.generate_state(1)[0]))
            _fit_one(cfg, data, dataset, out / f"chain-{i:02d}")
    print(f"fit written to {out}")
    return 0


def _load_fit(fit_dir: Path):
    meta_path = fit_dir / "meta.json"
    if not meta_path.exists():
        raise CliError(f"no fit found at {fit_dir} (missing meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    draws = []
    with open(fit_dir / "draws.jsonl", encoding="utf-8") as fh:
        for line in fh:
            draws.append(json.loads(line))
    return meta, draws


def _cmd_predict(args) -> int:
    fit_dir = Path(args.fit)
    meta, draws = _load_fit(fit_dir)
    points = load_csv(args.points)
    if points.d != meta["d"]:
        raise CliError(
            f"points have {points.d} covariates, fit expects {meta['d']}")
    grid = CutpointGrid.uniform(meta["d"], meta["n_cutpoints"])
    x_min = np.array(meta["x_min"])
    x_max = np.array(meta["x_max"])
    span = np.where(x_max > x_min, x_max - x_min, 1.0)
    Xs = np.where(x_max > x_min, (points.X - x_min) / span, 0.5)
    y_range = meta["y_max"] - meta["y_min"]

    all_preds = np.empty((len(draws), points.n))
    for i, record in enumerate(draws):
        acc = np.zeros(points.n)
        for text in record["trees"]:
            acc += evaluate_many(parse(text), Xs, grid)
        all_preds[i] = (acc + 0.5) * y_range + meta["y_min"]
    lower, upper = predictive_interval(all_preds, args.level)
    mean = all_preds.mean(axis=0)
    write_intervals_csv(args.out, lower, mean, upper, points.truth)
    print(f"intervals for {points.n} points written to {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    fit_dir = Path(args.fit)
    meta, draws = _load_fit(fit_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces_src = fit_dir / "traces.csv"
    (out / "traces.csv").write_bytes(traces_src.read_bytes())
    census = tree_census(record["trees"] for record in draws)
    write_census_csv(out / "census.csv", census)
    # acceptance summary recomputed from the trace file
    rows = _read_trace_rows(traces_src)
    _write_acceptance_from_rows(out / "acceptance.csv", rows, meta["burnin"])
    print(f"diagnostics written to {out} (census size {len(census)})")
    return 0


def _read_trace_rows(path: Path):
    import csv as _csv
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        return [(int(r["iter"]), r["kind"], int(r["accepted"])) for r in reader]


def _write_acceptance_from_rows(path, rows, burnin: int) -> None:
    import csv as _csv
    tallies = {}
    for it, kind, accepted in rows:
        if it < burnin:
            continue
        proposed, acc = tallies.get(kind, (0, 0))
        tallies[kind] = (proposed + 1, acc + accepted)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "proposed", "accepted", "rate"])
        total_p = total_a = 0
        for kind in sorted(tallies):
            proposed, acc = tallies[kind]
            total_p += proposed
            total_a += acc
            writer.writerow([kind, proposed, acc, repr(acc / proposed)])
        if total_p:
            writer.writerow(["all", total_p, total_a, repr(total_a / total_p)])


def _cmd_oracle_merge(args) -> int:
    try:
        left = parse(args.left)
        right = parse(args.right)
    except TreeFormatError as exc:
        raise CliError(f"malformed tree serialization: {exc}") from exc
    var, cut = args.var, args.cut
    if var < 0 or cut < 0:
        raise CliError("--var and --cut must be nonnegative grid indices")
    if structure_key(cut_left(left.clone().root, var, cut)) != structure_key(left):
        raise CliError("--left is not a fixpoint of the left cut at (var, cut)")
    if structure_key(cut_right(right.clone().root, var, cut)) != structure_key(right):
        raise CliError("--right is not a fixpoint of the right cut at (var, cut)")
    merges, n = enumerate_merges(left.root, right.root, var, cut)
    for m in merges:
        print(serialize(m))
    print(f"count: {n}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotbart",
        description="Sum-of-trees regression with rotation-augmented MCMC")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a benchmark dataset as CSV")
    p.add_argument("--benchmark", choices=["friedman", "wu"], required=True)
    p.add_argument("--n", type=int, default=5000,
                   help="sample size (friedman only; wu is fixed at 300)")
    p.add_argument("--sigma2", type=float, default=0.1,
                   help="noise variance (friedman only)")
    p.add_argument("--d-total", type=int, default=10,
                   help="total covariates incl. inert ones (friedman only)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--chains", type=int, default=1,
                   help="independent chains; >1 writes chain-NN subdirectories")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="posterior intervals at new points")
    p.add_argument("--fit", required=True, help="directory written by fit")
    p.add_argument("--points", required=True, help="CSV of covariate rows")
    p.add_argument("--level", type=float, default=0.90)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("diagnose", help="traces, census and acceptance summary")
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("oracle-merge",
                       help="enumerate merge reconstructions of two cut pieces")
    p.add_argument("--left", required=True, help="canonical tree text")
    p.add_argument("--right", required=True, help="canonical tree text")
    p.add_argument("--var", type=int, required=True, help="variable index")
    p.add_argument("--cut", type=int, required=True, help="cutpoint grid index")
    p.set_defaults(func=_cmd_oracle_merge)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CsvFormatError, TreeFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
