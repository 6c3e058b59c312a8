"""Command-line front end: ``gen``, ``run`` and ``compare``."""

import argparse
import json
import sys
import warnings
from pathlib import Path

from .dataset import ConfigError, ManifestError, SynthConfig, load_manifest, mediated_config, \
    save_manifest, synthesize_dataset, uniform_config, validate_dataset
from .evaluation import METHOD_TITLES, METHODS, ExperimentConfig, ExperimentReport, canonical_method, \
    run_experiment, validate_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MANIFEST_CODEBOOK = 1000
SYNTH_CODEBOOK = 64

# run options: flag dest -> (config-file key, default)
_RUN_OPTIONS = {
    "manifest": ("manifest", None),
    "synth": ("synth", None),
    "method": ("method", None),
    "codebook_size": ("codebook_size", None),
    "lam": ("lambda", 0.01),
    "seed": ("seed", 0),
    "threads": ("threads", 1),
    "out": ("out", None),
    "sample_fraction": ("sample_fraction", 0.2),
    "latent_iters": ("latent_iters", 10),
    "fixed_e": ("fixed_e", False),
}


class UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="emocrowd", description="Emotion-based crowd behavior experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset as manifest + descriptor files")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--synth", help="synthetic config JSON")
    src.add_argument("--preset", choices=("mediated", "uniform"), help="built-in synthetic config")
    g.add_argument("--seed", type=int, default=0, help="seed for --preset")
    g.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="leave-one-sequence-out experiment for one method")
    r.add_argument("--config", help="JSON file with run options; flags may not contradict it")
    r.add_argument("--manifest", default=None)
    r.add_argument("--synth", default=None)
    r.add_argument("--method", default=None, choices=METHODS)
    r.add_argument("--codebook-size", dest="codebook_size", type=int, default=None,
                   help=f"visual words per channel (default {MANIFEST_CODEBOOK}, synthetic {SYNTH_CODEBOOK})")
    r.add_argument("--lambda", dest="lam", type=float, default=None, help="regularisation (default 0.01)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=None, help="folds run in parallel")
    r.add_argument("--sample-fraction", dest="sample_fraction", type=float, default=None,
                   help="share of training descriptors used for k-means (default 0.2)")
    r.add_argument("--latent-iters", dest="latent_iters", type=int, default=None)
    r.add_argument("--fixed-e", dest="fixed_e", action="store_const", const=True, default=None,
                   help="latent: score with thresholded bank emotions instead of max-inference")
    r.add_argument("--out", default=None)

    c = sub.add_parser("compare", help="side-by-side table of report accuracies")
    c.add_argument("reports", nargs="+")
    c.add_argument("--check-order", action="store_true",
                   help="exit 1 unless emotion-aware >= emotion-based >= low-level")
    return p


def _resolve_run(args):
    """Merge flags with an optional config file; contradictions are usage errors."""
    file_opts = {}
    if args.config:
        try:
            with open(args.config) as fh:
                file_opts = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_opts, dict):
            raise UsageError("run config must be a JSON object")
        known = {key for key, _ in _RUN_OPTIONS.values()}
        unknown = set(file_opts) - known
        if unknown:
            raise UsageError(f"unknown run config keys: {sorted(unknown)}")
    opts = {}
    for dest, (key, default) in _RUN_OPTIONS.items():
        flag = getattr(args, dest)
        if key in file_opts and flag is not None and flag != file_opts[key]:
            raise UsageError(f"--{dest.replace('_', '-')} {flag!r} contradicts config value {file_opts[key]!r}")
        opts[dest] = file_opts.get(key, flag if flag is not None else default)
    if (opts["manifest"] is None) == (opts["synth"] is None):
        raise UsageError("give exactly one of --manifest or --synth")
    if opts["method"] is None:
        raise UsageError("--method is required")
    if opts["out"] is None:
        raise UsageError("--out is required")
    try:
        opts["method"] = canonical_method(opts["method"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if opts["codebook_size"] is None:
        opts["codebook_size"] = MANIFEST_CODEBOOK if opts["manifest"] else SYNTH_CODEBOOK
    return opts


def cmd_gen(args):
    if args.synth:
        cfg = SynthConfig.load(args.synth)
    else:
        cfg = (mediated_config if args.preset == "mediated" else uniform_config)(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = synthesize_dataset(cfg)
    save_manifest(ds, out)
    cfg.save(out / "synth_config.json")
    print(f"wrote {len(ds)} clips in {len(ds.sequences)} sequences to {out / 'manifest.csv'}")
    return EXIT_OK


def cmd_run(args):
    opts = _resolve_run(args)
    try:
        cfg = ExperimentConfig(codebook_size=opts["codebook_size"], lam=opts["lam"], seed=opts["seed"],
                               sample_fraction=opts["sample_fraction"],
                               latent_outer_iters=opts["latent_iters"],
                               latent_fixed_e=bool(opts["fixed_e"]), threads=opts["threads"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if opts["manifest"]:
        ds = load_manifest(opts["manifest"])
    else:
        ds = synthesize_dataset(SynthConfig.load(opts["synth"]))
    report = validate_dataset(ds)
    if not report.ok:
        for v in report:
            print(f"invalid dataset: {v}", file=sys.stderr)
        return EXIT_FAIL
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = run_experiment(ds, opts["method"], cfg)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    text = result.to_json()
    (out / "report.json").write_text(text)
    (out / "report.txt").write_text(result.to_text())
    (out / "confusion.csv").write_text(result.confusion.to_csv(percent=True))
    (out / "confusion_counts.csv").write_text(result.confusion.to_csv(percent=False))
    validate_report(json.loads((out / "report.json").read_text()))
    print(f"{METHOD_TITLES[result.method]}: average accuracy {100 * result.average_accuracy:.2f}%")
    return EXIT_OK


def cmd_compare(args):
    if len(args.reports) < 2:
        raise UsageError("compare needs at least 2 reports")
    reports = []
    for path in args.reports:
        try:
            reports.append(ExperimentReport.load(path))
        except (OSError, json.JSONDecodeError, ValueError, KeyError) as exc:
            raise UsageError(f"invalid report {path}: {exc}") from None
    common = [c for c in reports[0].class_names if all(c in r.class_names for r in reports)]
    if any(tuple(r.class_names) != tuple(reports[0].class_names) for r in reports):
        print("warning: reports disagree on classes; comparing the intersection", file=sys.stderr)
    heads = [METHOD_TITLES[r.method] for r in reports]
    width = max([len("average")] + [len(c) for c in common]) + 2
    colw = max(len(h) for h in heads) + 2
    lines = ["".ljust(width) + "".join(h.rjust(colw) for h in heads)]
    for c in common:
        cells = []
        for r in reports:
            i = r.class_names.index(c)
            cells.append(f"{r.confusion.row_percent[i, i]:.2f}".rjust(colw))
        lines.append(c.ljust(width) + "".join(cells))
    lines.append("average".ljust(width) + "".join(f"{100 * _common_average(r, common):.2f}".rjust(colw)
                                                  for r in reports))
    print("\n".join(lines))
    if args.check_order:
        acc = {}
        for r in reports:
            acc.setdefault(r.method, _common_average(r, common))
        missing = [m for m in ("lowlevel", "emotion") if m not in acc]
        if missing:
            raise UsageError(f"--check-order needs reports for: {', '.join(missing)}")
        ok = acc["emotion"] >= acc["lowlevel"] and acc.get("aware", 1.0) >= acc["emotion"]
        print("ordering " + ("holds" if ok else "violated"))
        return EXIT_OK if ok else EXIT_FAIL
    return EXIT_OK


def _common_average(report, classes):
    rp = report.confusion.row_percent
    counts = report.confusion.counts.sum(axis=1)
    vals = [rp[report.class_names.index(c)][report.class_names.index(c)] / 100.0
            for c in classes if counts[report.class_names.index(c)] > 0]
    return sum(vals) / len(vals) if vals else 0.0


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    handler = {"gen": cmd_gen, "run": cmd_run, "compare": cmd_compare}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
