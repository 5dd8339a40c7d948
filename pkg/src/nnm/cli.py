"""Command-line interface wiring the library into reproducible workflows.

Subcommands: fit, evaluate, stereotypes, hierarchy, fold-in, predict.
Every run is fully determined by its inputs, flags and seed; all file
outputs land under the --out directory.  Exit codes: 0 success, 1 user
error, 2 internal error.  NNM_LOG sets the log level (e.g. DEBUG/INFO).
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import figures
from .data import (RATING_FORMATS, TAG_FORMATS, load_ratings, load_tags,
                   subsample_users)
from .evaluation import cross_validate, curve_vs_dimension, curve_vs_iteration, \
    write_curve_csv
from .interpret import (export_dot, hierarchy_edges, modeled_tag_vectors,
                        stereotype_item_lists, stereotype_profiles)
from .model import NnmModel
from .online import fold_in_user
from .solver import FitConfig, default_preprocessing, fit

log = logging.getLogger(__name__)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; per our contract they are
    # user errors and must exit with 1.
    def error(self, message):
        raise UsageError(message)


def _setup_logging():
    level = os.environ.get("NNM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="ratings file")
    p.add_argument("--format", required=True, choices=RATING_FORMATS,
                   help="ratings file format")
    p.add_argument("--z", type=int, default=None,
                   help="rating-level count (required for csv format)")


def _add_fit_flags(p):
    p.add_argument("--dim", type=int, required=True, help="model dimension D")
    p.add_argument("--iters", type=int, default=16, help="outer iterations")
    p.add_argument("--preprocess-iters", type=int, default=2,
                   help="zero-fill iterations at the start")
    p.add_argument("--preprocessing", choices=("auto", "dense", "sample"),
                   default="auto", help="zero-fill strategy for unknown entries")
    p.add_argument("--negatives", type=int, default=1,
                   help="sampled negatives per observed rating")
    p.add_argument("--mode", choices=("binary", "categorical"), default="binary",
                   help="binary like-vectors (default) or experimental "
                        "categorical bundles")
    p.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="worker threads; half-steps are batched so results "
                        "do not depend on this")


def _add_out_flag(p):
    p.add_argument("--out", required=True, help="output directory")


def _load_dataset(args):
    path = Path(args.data)
    if not path.exists():
        raise UsageError(f"ratings file not found: {path}")
    dataset = load_ratings(path, args.format, z=args.z)
    if dataset.n_ratings == 0:
        raise UsageError(f"no ratings in {path}")
    log.info("loaded %s", dataset)
    return dataset


def _fit_config(args, dataset):
    strategy = args.preprocessing
    if strategy == "auto":
        strategy = default_preprocessing(dataset.n_users, dataset.n_items)
        log.info("preprocessing strategy: %s", strategy)
    try:
        return FitConfig(
            dimension=args.dim,
            max_outer_iters=args.iters,
            preprocessing_iters=args.preprocess_iters,
            preprocessing=strategy,
            negatives_per_rating=args.negatives,
            rng_seed=args.seed,
            mode=args.mode,
        ).validated()
    except ValueError as e:
        raise UsageError(str(e)) from None


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"model file not found: {path}")
    return NnmModel.load(path)


def cmd_fit(args):
    dataset = _load_dataset(args)
    config = _fit_config(args, dataset)
    out = _out_dir(args)
    model, report = fit(dataset, config)
    model.save(out / "model.json")
    report.write_csv(out / "fit_report.csv")
    print(f"model written to {out / 'model.json'} "
          f"({model.n_users} users, {model.n_items} items, D={model.dimension})")
    return 0


def cmd_evaluate(args):
    dataset = _load_dataset(args)
    if args.subsample_users is not None:
        dataset = subsample_users(dataset, args.subsample_users, rng_seed=args.seed)
        log.info("subsampled to %s", dataset)
    config = _fit_config(args, dataset)
    if args.folds < 2:
        raise UsageError(f"need at least 2 folds, got {args.folds}")
    out = _out_dir(args)

    report = cross_validate(dataset, config, n_folds=args.folds, rng_seed=args.seed)
    (out / "metrics.json").write_text(report.to_json_str(), encoding="utf-8")
    (out / "metrics.csv").write_text(report.to_csv_str(), encoding="utf-8")
    print(f"MAE {report.mae_mean:.4f} +- {report.mae_std:.4f}   "
          f"RMSE {report.rmse_mean:.4f} +- {report.rmse_std:.4f}   "
          f"({args.folds} folds, {report.fallback_count} fallbacks)")

    for curve in args.curve or []:
        if curve == "dim":
            dims = [int(d) for d in args.dims.split(",")]
            rows = curve_vs_dimension(dataset, dims, config,
                                      n_folds=args.folds, rng_seed=args.seed)
            write_curve_csv(rows, "dim,mae,rmse", out / "curve_dim.csv")
            figures.save_dimension_curve(rows, out / "curve_dim.png")
        else:
            rows = curve_vs_iteration(dataset, config,
                                      n_folds=args.folds, rng_seed=args.seed)
            write_curve_csv(rows, "iter,train_objective,test_mae",
                            out / "curve_iter.csv")
            figures.save_iteration_curve(rows, out / "curve_iter.png")
    return 0


def _load_tag_index(args, restrict_to=None):
    path = Path(args.tags)
    if not path.exists():
        raise UsageError(f"tags file not found: {path}")
    index = load_tags(path, args.tags_format)
    if restrict_to is not None:
        index = index.restricted_to(restrict_to)
    return index


def cmd_stereotypes(args):
    model = _load_model(args.model)
    dataset = _load_dataset(args)
    tags = _load_tag_index(args)
    out = _out_dir(args)

    profile = stereotype_profiles(model, tags)
    lines = ["tag,omega,value,guess"]
    for tag, omega, value, guess in profile.csv_rows():
        lines.append(f'"{tag}",{omega},{value!r},{guess}')
    (out / "stereotype_profiles.csv").write_text("\n".join(lines) + "\n",
                                                 encoding="utf-8")
    figures.save_profile_bars(profile, out / "stereotype_profiles.png")

    lines = ["omega,rank,item,rating_count,like_value"]
    for omega in range(1, model.dimension + 1):
        items = stereotype_item_lists(model, dataset, omega,
                                      like_threshold=args.threshold, top_j=args.top)
        for rank, iid in enumerate(items, start=1):
            count = dataset.item_counts[dataset.item_index[iid]] \
                if iid in dataset.item_index else 0
            value = float(model.item_vector(iid)[omega - 1])
            lines.append(f"{omega},{rank},{iid},{count},{value!r}")
    (out / "stereotype_items.csv").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")
    print(f"profiles for {len(profile.tags)} tags x {model.dimension} stereotypes "
          f"written to {out}")
    return 0


def cmd_hierarchy(args):
    model = _load_model(args.model)
    tags = _load_tag_index(args)
    vectors = modeled_tag_vectors(model, tags)
    if not vectors:
        raise UsageError("no tag has items in the model")
    try:
        graph = hierarchy_edges(vectors, args.epsilon)
    except ValueError as e:
        raise UsageError(str(e)) from None
    dot = export_dot(graph, exclude_tags=set(args.exclude),
                     transitive_reduction=args.reduce)
    out = _out_dir(args)
    (out / "hierarchy.dot").write_text(dot, encoding="utf-8")
    n_edges = dot.count(" -> ")
    print(f"hierarchy at epsilon={args.epsilon:g}: {len(vectors)} tags, "
          f"{n_edges} edges -> {out / 'hierarchy.dot'}")
    return 0


def cmd_fold_in(args):
    model = _load_model(args.model)
    ratings = []
    for line_no, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise UsageError(f"stdin:{line_no}: expected 'item,stars', got {line!r}")
        try:
            ratings.append((int(parts[0]), float(parts[1])))
        except ValueError:
            raise UsageError(f"stdin:{line_no}: bad numbers in {line!r}") from None
    if not ratings:
        raise UsageError("no ratings on stdin (expected 'item,stars' lines)")
    try:
        vector = fold_in_user(model, ratings)
    except ValueError as e:
        raise UsageError(str(e)) from None
    print(json.dumps(vector.tolist()))
    return 0


def cmd_predict(args):
    model = _load_model(args.model)
    try:
        if model.mode == "binary":
            result = {
                "user": args.user,
                "item": args.item,
                "score": model.predict_score_binary(args.user, args.item),
                "rating": model.predict_star_rating(args.user, args.item),
            }
        else:
            dist = model.predict_distribution(args.user, args.item)
            result = {
                "user": args.user,
                "item": args.item,
                "distribution": dist.tolist(),
                "rating": model.predict_rating_argmax(args.user, args.item),
            }
    except LookupError as e:
        raise UsageError(str(e)) from None
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(prog="nnm",
                     description="Normalized nonnegative models for "
                                 "interpretable collaborative filtering.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[], help="fit a model and save it")
    _add_data_flags(p)
    _add_fit_flags(p)
    _add_out_flag(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="cross-validated MAE/RMSE, with curves")
    _add_data_flags(p)
    _add_fit_flags(p)
    _add_out_flag(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--curve", action="append", choices=("dim", "iter"),
                   help="also emit an error curve (repeatable)")
    p.add_argument("--dims", default="1,2,3,4,5,6,7,8",
                   help="comma-separated dimensions for --curve dim")
    p.add_argument("--subsample-users", type=float, default=None,
                   help="evaluate on a uniform user fraction (scaled-down runs)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stereotypes", help="tag profiles and item lists per stereotype")
    p.add_argument("--model", required=True, help="model JSON file")
    _add_data_flags(p)
    p.add_argument("--tags", required=True, help="tags/genres file")
    p.add_argument("--tags-format", required=True, choices=TAG_FORMATS)
    p.add_argument("--threshold", type=float, default=0.9,
                   help="like-vector component needed to call an item liked")
    p.add_argument("--top", type=int, default=10, help="items per stereotype list")
    _add_out_flag(p)
    p.set_defaults(func=cmd_stereotypes)

    p = sub.add_parser("hierarchy", help="tag hierarchy DOT export")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--tags", required=True, help="tags/genres file")
    p.add_argument("--tags-format", required=True, choices=TAG_FORMATS)
    p.add_argument("--epsilon", type=float, default=1.0 / 3.0,
                   help="containment relaxation in [0, 1]")
    p.add_argument("--exclude", action="append", default=[],
                   help="tag to drop from the figure (repeatable)")
    p.add_argument("--reduce", action="store_true",
                   help="transitively reduce the displayed edges")
    _add_out_flag(p)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("fold-in",
                       help="read 'item,stars' lines on stdin, print a user vector")
    p.add_argument("--model", required=True, help="model JSON file")
    p.set_defaults(func=cmd_fold_in)

    p = sub.add_parser("predict", help="predict one user/item pair")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--item", type=int, required=True)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ValueError, LookupError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:  # pragma: no cover - internal failures
        import traceback
        traceback.print_exc()
        return 2


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
