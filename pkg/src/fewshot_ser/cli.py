"""Command line entry point: ``extract``, ``synth``, ``run``, ``report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import FewShotError


def cmd_extract(args):
    from .data import Dataset, FeatureVector, read_manifest, write_feature_csv
    from .features import extract_clip, read_wav

    vectors = []
    for entry in read_manifest(args.manifest):
        values = extract_clip(read_wav(entry.path))
        vectors.append(FeatureVector(values, entry.path.stem, entry.speaker_id, entry.emotion, entry.domain))
    role = vectors[0].domain if vectors else "target"
    write_feature_csv(args.output, Dataset(Path(args.output).stem, vectors, role))
    print(f"wrote {len(vectors)} rows to {args.output}")


def cmd_synth(args):
    from .data import load_synthetic_config, synth_generate, write_feature_csv

    cfg = load_synthetic_config(args.config)
    source, target = synth_generate(cfg)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for ds in (source, target):
        write_feature_csv(out / f"{ds.name}.csv", ds)
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")


def cmd_run(args):
    from .harness import ExperimentReport, load_datasets, load_experiment_specs, run_experiment
    from .report import write_report

    specs = load_experiment_specs(args.spec)
    sources, target = load_datasets(specs[0])
    report, cache = ExperimentReport(), {}
    for spec in specs:
        logging.getLogger(__name__).info("running %s", spec.method)
        report.extend(run_experiment(spec, sources, target, cache))
    leaks = write_report(args.output, report, specs)
    if leaks:
        raise FewShotError(f"test ids leaked into training in {len(leaks)} phases")
    print(f"wrote {len(report.records)} records to {args.output}")


def cmd_report(args):
    from .report import summarize

    rows = summarize(args.report_dir)
    for m, s, k, n, mean, std, pooled in rows:
        print(f"{s:>16} {m:>14} k={k:<2} n={n:<3} UAR {mean:.3f} +- {std:.3f} (pooled {pooled:.3f})")


def build_parser():
    p = argparse.ArgumentParser(prog="fewshot-ser", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("extract", help="WAV manifest -> feature CSV")
    e.add_argument("manifest")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="synthetic config -> source/target feature CSVs")
    s.add_argument("config")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="experiment spec -> report directory")
    r.add_argument("spec")
    r.add_argument("-o", "--output", required=True, help="report directory")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="report directory -> summary and figure CSVs")
    rp.add_argument("report_dir")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except FewShotError as exc:
        print(f"error: {exc.category}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
