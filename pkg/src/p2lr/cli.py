"""Command-line entry point.

Subcommands: generate, run, ablate, score, eval, export.  Configuration comes
from an optional JSON file (flat keys matching RefineryConfig plus a required
"version": 1) with command-line flags taking precedence.  Every failure exits
nonzero after printing a single machine-parsable ``error_code:message`` line
to stderr.
"""

import argparse
import json
import os
import sys

from . import fileio
from .clusterer import kmeans
from .errors import (
    ConfigurationError,
    FileFormatError,
    InputError,
    P2LRError,
    SingularNormalizationError,
)
from .refinery import (
    CRITERIA,
    ABLATION_SCHEMA,
    REPORT_SCHEMA,
    config_from_dict,
    report_from_dict,
    run_ablation,
    run_refinery,
)
from .synthgen import corrupt_labels, generate_prototypes, sample_target
from .uncertainty import kl_ideal_scores, l2_scores

_SCORE_CRITERIA = ("kl_ideal", "l2_centroid")

# Flag destination -> config key; None values are "not given".
_OVERRIDE_KEYS = {
    "seed": "seed",
    "criterion": "criterion",
    "T": "n_steps",
    "k": "k",
    "p0": "start_fraction",
    "h": "growth",
    "alpha": "alpha",
    "epsilon": "epsilon",
    "corrupt": "corrupt_fraction",
    "out": "out_dir",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config file (version 1)")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--criterion", choices=CRITERIA)
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--T", type=int, metavar="N", help="refinement horizon (n_steps)")
    p.add_argument("--k", type=int, metavar="N", help="cluster count")
    p.add_argument("--p0", type=float, metavar="F", help="start fraction of the schedule")
    p.add_argument("--h", type=float, metavar="F", help="growth rate of the schedule")
    p.add_argument("--alpha", type=float, metavar="F", help="cosine softmax sharpness")
    p.add_argument("--epsilon", type=float, metavar="F", help="ideal-distribution peak mass")
    p.add_argument("--corrupt", type=float, metavar="F", help="pseudo-label corruption fraction")
    p.add_argument("--warm-start", action="store_true", default=None,
                   help="warm-start clustering from the previous centroids")


def _build_parser() -> _Parser:
    parser = _Parser(prog="p2lr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic feature and label files")
    _add_override_flags(p)

    p = sub.add_parser("run", help="run one refinement loop and write its report")
    _add_override_flags(p)

    p = sub.add_parser("ablate", help="sweep criteria x seeds and tabulate results")
    _add_override_flags(p)

    p = sub.add_parser("score", help="cluster a feature file and dump uncertainty scores")
    p.add_argument("features", metavar="FEATURES", help="feature file (binary or CSV)")
    p.add_argument("--k", type=int, metavar="N", required=True, help="cluster count")
    p.add_argument("--criterion", choices=_SCORE_CRITERIA, default="kl_ideal")
    p.add_argument("--alpha", type=float, metavar="F", default=20.0)
    p.add_argument("--epsilon", type=float, metavar="F", default=0.99)
    p.add_argument("--seed", type=int, metavar="N", default=0)
    p.add_argument("--corrupt", type=float, metavar="F", default=0.0)
    p.add_argument("--out", metavar="PATH", required=True, help="output CSV path")

    p = sub.add_parser("eval", help="print the summary of a finished report")
    p.add_argument("report", metavar="REPORT", help="report.json path")

    p = sub.add_parser("export", help="emit plottable CSV series from a report or table")
    p.add_argument("report", metavar="REPORT", help="report.json or ablation.json path")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("--format", choices=("csv",), default="csv")

    return parser


def _read_config_file(path: str) -> dict:
    raw = fileio.read_json(path)
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    if raw.get("version") != 1:
        raise ConfigurationError(f"config version must be 1, got {raw.get('version')!r}")
    return {k: v for k, v in raw.items() if k != "version"}


def _gather_config(args, extra_keys=()) -> tuple:
    """Merge config file and CLI overrides; returns (config, extras dict)."""
    data = _read_config_file(args.config) if args.config else {}
    extras = {k: data.pop(k) for k in extra_keys if k in data}
    for dest, key in _OVERRIDE_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    if getattr(args, "warm_start", None) is not None:
        data["warm_start"] = args.warm_start
    return config_from_dict(data), extras


def _require_out_dir(config) -> str:
    if not config.out_dir:
        raise ConfigurationError("out_dir: an output directory is required (--out DIR)")
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


def _cmd_generate(args) -> int:
    config, _ = _gather_config(args)
    out = _require_out_dir(config)
    prototypes = generate_prototypes(
        config.c_true, config.d, config.min_separation, config.seed
    )
    target = sample_target(
        prototypes, config.n_per_id, config.noise_sigma, config.shift_scale,
        config.seed + 1,
    )
    feature_path = os.path.join(out, "features.p2lrfs")
    label_path = os.path.join(out, "labels.p2lrlb")
    fileio.write_features(feature_path, target.raw_features)
    fileio.write_labels(label_path, target.hidden_labels)
    n, d = target.raw_features.shape
    fileio.write_json(
        os.path.join(out, "generate.json"),
        {
            "n": n,
            "d": d,
            "c_true": config.c_true,
            "n_per_id": config.n_per_id,
            "noise_sigma": config.noise_sigma,
            "shift_scale": config.shift_scale,
            "min_separation": config.min_separation,
            "seed": config.seed,
            "features": os.path.basename(feature_path),
            "labels": os.path.basename(label_path),
        },
    )
    print(f"wrote {n}x{d} features to {feature_path} (labels: {label_path})")
    return 0


def _cmd_run(args) -> int:
    config, _ = _gather_config(args)
    _require_out_dir(config)
    report = run_refinery(config)
    s = report.summary
    print(f"report: {os.path.join(config.out_dir, 'report.json')}")
    print(
        f"final step {s['n_steps']}: purity={s['final_purity']:.4f} "
        f"map={s['final_map']:.4f} rank1={s['final_rank1']:.4f}"
    )
    return 0


def _cmd_ablate(args) -> int:
    config, extras = _gather_config(args, extra_keys=("criteria", "seeds"))
    out = _require_out_dir(config)
    criteria = extras.get("criteria", list(CRITERIA))
    seeds = extras.get("seeds", [config.seed])
    if args.criterion is not None:
        criteria = [args.criterion]
    if args.seed is not None:
        seeds = [args.seed]
    table = run_ablation(config, criteria, seeds)
    fileio.write_json(os.path.join(out, "ablation.json"), table.to_dict())
    print(f"table: {os.path.join(out, 'ablation.json')}")
    header = f"{'criterion':<20} {'purity':>17} {'mAP':>17} {'rank1':>17}"
    print(header)
    for row in table.rows:
        def cell(mean_key, std_key):
            mean = row[mean_key]
            if mean is None:
                return "failed".rjust(17)
            return f"{mean:.4f} +- {row[std_key]:.4f}".rjust(17)

        print(
            f"{row['criterion']:<20} {cell('purity_mean', 'purity_std')} "
            f"{cell('map_mean', 'map_std')} {cell('rank1_mean', 'rank1_std')}"
        )
    return 0


def _cmd_score(args) -> int:
    features, _ = fileio.load_feature_file(args.features)
    cluster = kmeans(features, args.k, seed=args.seed)
    labels = cluster.assignments
    mask = None
    if args.corrupt > 0:
        labels, mask = corrupt_labels(labels, args.corrupt, args.k, args.seed + 1)
    if args.criterion == "kl_ideal":
        scores = kl_ideal_scores(features, labels, cluster.centroids, args.alpha, args.epsilon)
    else:
        scores = l2_scores(features, labels, cluster.centroids)
    fileio.write_scores_csv(args.out, args.criterion, scores, labels, mask)
    print(f"wrote {scores.shape[0]} {args.criterion} scores to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = report_from_dict(fileio.read_json(args.report))
    print(json.dumps(report.summary, indent=2))
    return 0


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cmd_export(args) -> int:
    data = fileio.read_json(args.report)
    if not isinstance(data, dict):
        raise FileFormatError(f"{args.report}: expected a JSON object")
    os.makedirs(args.out, exist_ok=True)
    written = []
    schema = data.get("schema")
    if schema == REPORT_SCHEMA:
        report = report_from_dict(data)
        path = os.path.join(args.out, "mean_uncertainty_vs_step.csv")
        lines = ["step,mean_score_selected,mean_score_rejected"]
        lines += [
            f"{s.step},{_csv_cell(s.mean_score_selected)},{_csv_cell(s.mean_score_rejected)}"
            for s in report.steps
        ]
        fileio.write_text(path, "\n".join(lines) + "\n")
        written.append(path)

        path = os.path.join(args.out, "schedule.csv")
        lines = ["step,select_fraction"]
        lines += [f"{s.step},{_csv_cell(s.select_fraction)}" for s in report.steps]
        fileio.write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    elif schema == ABLATION_SCHEMA:
        path = os.path.join(args.out, "criterion_bars.csv")
        columns = (
            "purity_mean", "purity_std", "map_mean", "map_std",
            "rank1_mean", "rank1_std", "auroc_mean", "auroc_std",
        )
        lines = ["criterion," + ",".join(columns)]
        lines += [
            row["criterion"] + "," + ",".join(_csv_cell(row[c]) for c in columns)
            for row in data.get("rows", [])
        ]
        fileio.write_text(path, "\n".join(lines) + "\n")
        written.append(path)
    else:
        raise FileFormatError(
            f"{args.report}: unknown schema {schema!r}; "
            f"expected {REPORT_SCHEMA!r} or {ABLATION_SCHEMA!r}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "export": _cmd_export,
}


def _fail(code: str, message: str) -> int:
    # Single-line machine-parsable error contract.
    first_line = str(message).splitlines()[0] if str(message) else code
    print(f"{code}:{first_line}", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage_error:{exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except ConfigurationError as exc:
        return _fail("config_error", str(exc))
    except SingularNormalizationError as exc:
        return _fail("singular_normalization", str(exc))
    except FileFormatError as exc:
        return _fail("file_format_error", str(exc))
    except InputError as exc:
        return _fail("input_error", str(exc))
    except P2LRError as exc:
        return _fail("library_error", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", exc.filename or str(exc))
    except json.JSONDecodeError as exc:
        return _fail("invalid_json", str(exc))
    except OSError as exc:
        return _fail("io_error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
