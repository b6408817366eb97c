"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import blstm, pipeline
from .errors import ConfigError, DataError, NiraError, NumericalError
from .evaluation import evaluate_report, read_estimates, write_estimates, write_report

log = logging.getLogger("nira")


def _corpora(ws, names):
    names = names or list(ws.cfg["corpora"])
    pipeline.check_corpora(ws.cfg, names)
    return names


def cmd_simulate_rirs(ws, args):
    for name in _corpora(ws, args.corpus):
        paths = pipeline.simulate_rirs(ws, name)
        print(f"{name}: {len(paths)} RIRs in {ws.rel(paths[0].parent)}")


def cmd_synth_corpus(ws, args):
    for name in _corpora(ws, args.corpus):
        manifest = pipeline.synth_corpus(ws, name)
        print(f"{name}: {len(manifest)} utterances, manifest {ws.rel(ws.path('corpora', ws.corpus_key(name), 'manifest.csv'))}")


def cmd_extract(ws, args):
    for name in _corpora(ws, args.corpus):
        feats = pipeline.extract_features(ws, pipeline.synth_corpus(ws, name).records)
        print(f"{name}: {feats.hits} cached, {feats.misses} extracted, {len(feats.failed)} failed")


def cmd_train(ws, args):
    manifest = pipeline.primary_split(ws)
    feats = pipeline.extract_features(ws, manifest.records)
    train = [r for r in manifest.split("train") if r.utterance_id in feats.paths]
    dev = [r for r in manifest.split("dev") if r.utterance_id in feats.paths]
    for target in args.target or ws.cfg["targets"]:
        model, path = pipeline.train_model(ws, "v1", target, train, dev, feats)
        print(f"{target}: {ws.rel(path)} (dev RMSD {model.meta['best_dev_rmsd']:.4g}, epoch {model.meta['best_epoch']})")


def cmd_fuse(ws, args):
    if args.target:
        ws.cfg["targets"] = args.target
    result = pipeline.run_recipe_v3(ws)
    _print_summary(result)


def cmd_estimate(ws, args):
    manifest = pipeline.DatasetManifest.read_csv(args.manifest, ws.root)
    records = [r for r in manifest.records if not args.split or r.split == args.split]
    feats = pipeline.extract_features(ws, records)
    model = blstm.load_model(args.model)
    rows = pipeline.estimate(model, records, feats)
    write_estimates(args.out, rows, model.target)
    Path(str(args.out) + ".meta.json").write_text(
        json.dumps(ws.stamp(model=str(args.model)), sort_keys=True, indent=2) + "\n")
    print(f"{len(rows)} estimates written to {args.out}")


def cmd_evaluate(ws, args):
    manifest = pipeline.DatasetManifest.read_csv(args.manifest)
    rows = read_estimates(args.estimates)
    targets = sorted({kind for _, kind, _ in rows})
    for target in targets:
        report = evaluate_report([(u, e) for u, k, e in rows if k == target], manifest.labels(), target,
                                 meta=ws.stamp(estimates=str(args.estimates)))
        stem = Path(args.out)
        json_path = stem if len(targets) == 1 else stem.with_name(f"{stem.stem}-{target}{stem.suffix}")
        write_report(report, json_path, json_path.with_suffix(".csv"))
        print(f"{target}: RMSD {report.rmsd:.4g} over {report.overall.n} utterances -> {json_path}")


def cmd_recipe(ws, args):
    result = pipeline.RECIPES[args.name](ws)
    _print_summary(result)


def _print_summary(result):
    for target, report in result["reports"].items():
        unit = "dB" if target == "drr" else "%"
        line = f"{target}: eval RMSD {report.rmsd:.4g} {unit}"
        if "baseline_rmsd" in report.meta:
            line += f" (mean-predictor baseline {report.meta['baseline_rmsd']:.4g} {unit})"
        if "individual_rmsd" in report.meta:
            parts = ", ".join(f"{k} {v:.4g}" for k, v in report.meta["individual_rmsd"].items())
            line += f" (sub-models: {parts})"
        print(line)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nira", description="Blind DRR / T60 estimation toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.set_defaults(fn=fn)
        return p

    for name, fn, text in (("simulate-rirs", cmd_simulate_rirs, "simulate room impulse responses"),
                           ("synth-corpus", cmd_synth_corpus, "synthesize reverberant noisy corpora"),
                           ("extract", cmd_extract, "extract and cache frame features")):
        add(name, fn, text).add_argument("--corpus", action="append", help="corpus name (repeatable)")
    add("train", cmd_train, "train per-target models on the primary corpus").add_argument(
        "--target", action="append", choices=("t60", "drr"))
    add("fuse", cmd_fuse, "train sub-models and the SVR fusion").add_argument(
        "--target", action="append", choices=("t60", "drr"))
    p = add("estimate", cmd_estimate, "per-utterance estimates from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=pipeline.SPLITS)
    p.add_argument("--out", required=True)
    p = add("evaluate", cmd_evaluate, "RMSD and box statistics for an estimates file")
    p.add_argument("--estimates", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    add("recipe", cmd_recipe, "run a full recipe").add_argument("name", choices=sorted(pipeline.RECIPES))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(args.config, args.seed)
        args.fn(pipeline.Workspace(cfg), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NiraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
