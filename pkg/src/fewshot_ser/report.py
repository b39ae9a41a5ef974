"""Report directory I/O and plot-ready summaries."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError
from .harness import ExperimentRecord, ExperimentReport, audit_leakage, spec_lines

CM_COLS = [f"cm_{i}{j}" for i in range(3) for j in range(3)]
RECORD_HEADER = ["method", "source", "k", "repetition", "uar"] + CM_COLS
PI_HIST_ITERATIONS = (5, 10, 15, 20, 25)
PI_HIST_BINS = 20


def _fmt(x):
    return repr(float(x))


def write_report(out_dir, report: ExperimentReport, specs=()):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in report.records:
            w.writerow([r.method, r.source, r.k, r.repetition, _fmt(r.uar)] + [int(c) for c in r.cm.ravel()])
    with open(out / "audit.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "source", "k", "repetition", "phase", "n_train", "n_test", "n_leaked"])
        for r in report.records:
            for p, a in enumerate(r.audits):
                w.writerow([r.method, r.source, r.k, r.repetition, p, len(a.train_ids), len(a.test_ids),
                            len(a.train_ids & a.test_ids)])
    if report.pca_rows:
        with open(out / "pca.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "source", "utterance_id", "emotion", "pc1", "pc2"])
            for m, s, uid, emo, a, b in report.pca_rows:
                w.writerow([m, s, uid, emo, _fmt(a), _fmt(b)])
    if report.pi_rows:
        with open(out / "pi_history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "iteration", "utterance_id", "pi"])
            for label, t, uid, p in report.pi_rows:
                w.writerow([label, t, uid, _fmt(p)])
    if specs:
        text = "\n\n".join("\n".join(spec_lines(s)) for s in specs)
        (out / "spec.txt").write_text(text + "\n")
    return audit_leakage(report)


def read_records(out_dir):
    path = Path(out_dir) / "records.csv"
    if not path.exists():
        raise InputError(f"{path}: no such file")
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != RECORD_HEADER:
            raise ParseError(f"{path}: unexpected header", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                cm = np.array([int(c) for c in row[5:]]).reshape(3, 3)
                records.append(ExperimentRecord(row[0], row[1], int(row[2]), int(row[3]), cm))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), line=lineno) from None
    return ExperimentReport(records)


def summarize(out_dir):
    """Write ``summary.csv`` and the figure CSVs next to the run's outputs."""
    out = Path(out_dir)
    report = read_records(out)
    rows = sorted(report.summary(), key=lambda r: (r[1], r[0], r[2]))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "source", "k", "repetitions", "mean_uar", "std_uar", "pooled_uar"])
        for m, s, k, n, mean, std, pooled in rows:
            w.writerow([m, s, k, n, _fmt(mean), _fmt(std), _fmt(pooled)])
    with open(out / "uar_by_k.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "method", "k", "mean_uar", "std_uar"])
        for m, s, k, n, mean, std, pooled in rows:
            w.writerow([s, m, k, _fmt(mean), _fmt(std)])
    if (out / "pi_history.csv").exists():
        _pi_histograms(out / "pi_history.csv", out / "pi_histogram.csv")
    if (out / "pca.csv").exists():
        (out / "embedding_pca.csv").write_bytes((out / "pca.csv").read_bytes())
    return rows


def _pi_histograms(src, dst):
    by_iter: dict[tuple[str, int], list[float]] = {}
    with open(src, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = int(row["iteration"])
            if t in PI_HIST_ITERATIONS:
                by_iter.setdefault((row["label"], t), []).append(float(row["pi"]))
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "iteration", "bin_lo", "bin_hi", "count"])
        for (label, t), values in sorted(by_iter.items()):
            counts, edges = np.histogram(values, bins=PI_HIST_BINS)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([label, t, _fmt(lo), _fmt(hi), int(c)])
