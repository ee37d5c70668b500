"""Accuracy bookkeeping, depth sweeps and table rendering."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import DataError, DDNNError

logger = logging.getLogger(__name__)

EMPTY = "—"


def accuracy(decisions, labels) -> float:
    """Percentage of frames whose decision matches the label."""
    d = np.asarray(decisions).reshape(-1)
    t = np.asarray(labels).reshape(-1)
    if d.shape != t.shape:
        raise DataError(f"{d.size} decisions but {t.size} labels")
    if d.size == 0:
        raise DataError("cannot score an empty decision stream")
    return 100.0 * np.count_nonzero(d == t) / d.size


def default_exclusions(noises: Iterable[str]) -> set:
    """Babble at -5 and 0 dB is left out of averages."""
    return {(n, s) for n in noises if n == "babble" for s in (-5.0, 0.0)}


@dataclass
class EvalReport:
    """Per-(method, noise, SNR, depth) accuracies, one entry per seed."""

    accuracies: dict = field(default_factory=dict)
    frames: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    excluded: set = field(default_factory=set)
    failures: dict = field(default_factory=dict)

    def add(self, method: str, noise: str, snr: float, depth: int, acc: float,
            n_frames: int = 0) -> None:
        if not 0.0 <= acc <= 100.0:
            raise DataError(f"accuracy {acc} outside [0, 100]")
        key = (method, noise, float(snr), int(depth))
        self.accuracies.setdefault(key, []).append(float(acc))
        self.frames[key] = int(n_frames)

    def mean(self, method, noise, snr, depth) -> Optional[float]:
        vals = self.accuracies.get((method, noise, float(snr), int(depth)))
        return float(np.mean(vals)) if vals else None

    @property
    def methods(self) -> list:
        """(method, depth) rows in first-seen order."""
        seen = []
        for m, _, _, d in self.accuracies:
            if (m, d) not in seen:
                seen.append((m, d))
        return seen

    @property
    def noises(self) -> list:
        return list(dict.fromkeys(k[1] for k in self.accuracies))

    @property
    def snrs(self) -> list:
        return sorted({k[2] for k in self.accuracies})

    def snr_average(self, method, depth, snr) -> Optional[float]:
        vals = [self.mean(method, n, snr, depth) for n in self.noises
                if (n, float(snr)) not in self.excluded]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    def overall_average(self, method, depth) -> Optional[float]:
        """Mean of the per-SNR averages."""
        vals = [self.snr_average(method, depth, s) for s in self.snrs]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None


def _fmt(v: Optional[float]) -> str:
    return EMPTY if v is None else f"{v:.2f}"


def _snr_label(s: float) -> str:
    return f"{s:g}dB"


def _row_label(method: str, depth: int) -> str:
    return f"{method}_{depth}"


def _text_table(title: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    fmt = lambda r: " | ".join(c.rjust(w) if i else c.ljust(w)  # noqa: E731
                               for i, (c, w) in enumerate(zip(r, widths)))
    return "\n".join([title, fmt(header), line, *[fmt(r) for r in rows]]) + "\n"


def render_text(report: EvalReport) -> str:
    """One table per noise type plus an averages table."""
    if not report.accuracies:
        raise DataError("empty report")
    snrs = report.snrs
    header = [""] + [_snr_label(s) for s in snrs]
    parts = []
    for noise in report.noises:
        rows = [[_row_label(m, d)] + [_fmt(report.mean(m, noise, s, d)) for s in snrs]
                for m, d in report.methods]
        parts.append(_text_table(noise, header, rows))
    rows = [[_row_label(m, d)] + [_fmt(report.snr_average(m, d, s)) for s in snrs]
            + [_fmt(report.overall_average(m, d))] for m, d in report.methods]
    title = "average"
    if report.excluded:
        title += " (excluding " + ", ".join(
            f"{n} {_snr_label(s)}" for n, s in sorted(report.excluded)) + ")"
    parts.append(_text_table(title, header + ["ALL"], rows))
    return "\n".join(parts)


CSV_FIELDS = ["method", "depth", "noise", "snr_db", "accuracy", "n_seeds", "frames", "excluded"]


def render_csv(report: EvalReport) -> str:
    if not report.accuracies:
        raise DataError("empty report")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for m, d in report.methods:
        for noise in report.noises:
            for s in report.snrs:
                key = (m, noise, s, d)
                if key not in report.accuracies:
                    continue
                writer.writerow([m, d, noise, f"{s:g}", _fmt(report.mean(m, noise, s, d)),
                                 len(report.accuracies[key]), report.frames.get(key, 0),
                                 int((noise, s) in report.excluded)])
    return buf.getvalue()


def render_tables(report: EvalReport) -> tuple[str, str]:
    """``(text, csv)`` renderings of a report."""
    return render_text(report), render_csv(report)


def report_from_csv(text: str) -> EvalReport:
    """Rebuild a report (per-cell means only) from :func:`render_csv` output."""
    report = EvalReport()
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != set(CSV_FIELDS):
        raise DataError("not an evaluation CSV")
    for r in rows:
        snr = float(r["snr_db"])
        if r["accuracy"] != EMPTY:
            report.add(r["method"], r["noise"], snr, int(r["depth"]), float(r["accuracy"]),
                       int(r["frames"]))
        if r["excluded"] == "1":
            report.excluded.add((r["noise"], snr))
    return report


def depth_sweep(cells: dict, depths=(1, 2, 3), seeds=range(10), method: str = "DDNN",
                estimator_params: Optional[dict] = None, split: str = "test") -> EvalReport:
    """Train one model per (cell, depth, seed) and score it on ``split``.

    ``cells`` maps ``(noise, snr_db)`` to ``{split: AlignedFrames}`` with raw
    features.  A failing job is recorded in ``report.failures`` and the sweep
    carries on.
    """
    from .estimator import DDNNClassifier

    params = dict(estimator_params or {})
    sizes = tuple(params.pop("hidden_layer_sizes", (54, 7, 7)))
    pretrain = {"DDNN": "denoising", "DBN": "dbn", "DNN": "none"}.get(method)
    if pretrain is None:
        raise DataError(f"unknown method {method!r}")
    seeds = list(seeds)
    report = EvalReport(seeds=seeds, excluded=default_exclusions(n for n, _ in cells))
    for (noise, snr) in sorted(cells, key=lambda k: (k[0], k[1])):
        data = cells[(noise, snr)]
        train, evaluate = data["train"], data[split]
        for depth in depths:
            if depth > len(sizes):
                raise DataError(f"depth {depth} exceeds {len(sizes)} configured layer sizes")
            for seed in seeds:
                est = DDNNClassifier(hidden_layer_sizes=sizes[:depth], pretrain=pretrain,
                                     random_state=seed, **params)
                try:
                    est.fit(train.noisy, train.labels, X_clean=train.clean)
                    acc = accuracy(est.predict(evaluate.noisy), evaluate.labels)
                except (DDNNError, ValueError) as exc:
                    logger.warning("%s %s %g dB depth %d seed %d failed: %s",
                                   method, noise, snr, depth, seed, exc)
                    report.failures[(method, noise, float(snr), depth, seed)] = str(exc)
                    continue
                logger.info("%s %s %g dB depth %d seed %d: %.2f%%",
                            method, noise, snr, depth, seed, acc)
                report.add(method, noise, snr, depth, acc, len(evaluate))
    return report


def merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    out = EvalReport()
    for r in reports:
        for key, vals in r.accuracies.items():
            out.accuracies.setdefault(key, []).extend(vals)
            out.frames[key] = r.frames.get(key, 0)
        out.excluded |= r.excluded
        out.failures.update(r.failures)
        out.seeds = sorted(set(out.seeds) | set(r.seeds))
    return out
