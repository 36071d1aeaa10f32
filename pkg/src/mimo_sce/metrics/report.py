"""Evaluation results, aggregation and table emission.

Two layouts are produced: a summary (systems x metrics, averaged over every
channel, noise type, SNR and utterance) and a per-SNR breakdown (systems x
SNR for each metric). Aggregates are plain arithmetic means of the
per-utterance, per-channel rows.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

METRICS = ("pesq", "stoi", "si_sdr", "seg_snr")
RESULT_FIELDS = ("system", "utterance", "channel", "noise", "snr_db", "si_sdr", "seg_snr", "stoi", "pesq")


class ReportError(ValueError):
    """Results cannot be assembled into a consistent report."""


@dataclass
class ResultRow:
    system: str
    utterance: str
    channel: int
    noise: str
    snr_db: float
    si_sdr: float = math.nan
    seg_snr: float = math.nan
    stoi: float = math.nan
    pesq: float | None = None

    @property
    def condition(self) -> tuple:
        return (self.utterance, self.channel, self.noise, self.snr_db)

    def value(self, metric: str) -> float | None:
        v = getattr(self, metric)
        return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


@dataclass
class MetricsReport:
    rows: list[ResultRow]

    def __post_init__(self):
        if not self.rows:
            raise ReportError("no results to report")
        by_system: dict[str, set] = defaultdict(set)
        for row in self.rows:
            if row.stoi == row.stoi and not -1e-9 <= row.stoi <= 1 + 1e-9:
                raise ReportError(f"STOI outside [0, 1]: {row.stoi}")
            if row.condition in by_system[row.system]:
                raise ReportError(f"duplicate result for {row.system} {row.condition}")
            by_system[row.system].add(row.condition)
        keys = list(by_system.values())
        if any(k != keys[0] for k in keys[1:]):
            raise ReportError("systems were evaluated on different condition sets")

    @property
    def systems(self) -> list[str]:
        return list(dict.fromkeys(r.system for r in self.rows))

    @property
    def snrs(self) -> list[float]:
        return sorted({r.snr_db for r in self.rows})

    def metrics(self) -> list[str]:
        return [m for m in METRICS if any(r.value(m) is not None for r in self.rows)]

    def summary(self) -> dict[str, dict[str, float | None]]:
        return {s: {m: _mean(r.value(m) for r in self.rows if r.system == s) for m in self.metrics()}
                for s in self.systems}

    def per_snr(self) -> dict[str, dict[float, dict[str, float | None]]]:
        out: dict = {}
        for s in self.systems:
            out[s] = {snr: {m: _mean(r.value(m) for r in self.rows if r.system == s and r.snr_db == snr)
                            for m in self.metrics()}
                      for snr in self.snrs}
        return out

    def improvement(self, system: str, baseline: str, metric: str, snr: float | None = None) -> float:
        """Mean of ``system`` minus mean of ``baseline`` (optionally at one SNR)."""
        if snr is None:
            table = self.summary()
            return table[system][metric] - table[baseline][metric]
        table = self.per_snr()
        return table[system][snr][metric] - table[baseline][snr][metric]

    def merge_pesq(self, path) -> None:
        """Attach externally computed PESQ scores from a results-shaped CSV."""
        index = {(r.system,) + r.condition: r for r in self.rows}
        for row in load_results_csv(path, require_metrics=False):
            key = (row.system,) + row.condition
            if key not in index:
                raise ReportError(f"PESQ row for unknown condition {key}")
            index[key].pesq = row.pesq

    def write(self, out_dir) -> dict[str, Path]:
        """Write ``results.csv``, ``summary.csv``, ``per_snr.csv`` and ``report.txt``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {name: out_dir / name for name in ("results.csv", "summary.csv", "per_snr.csv", "report.txt")}
        write_results_csv(self.rows, paths["results.csv"])
        write_summary_csv(self.summary(), paths["summary.csv"])
        with open(paths["per_snr.csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["system", "snr_db"] + self.metrics())
            for s, by_snr in self.per_snr().items():
                for snr, vals in by_snr.items():
                    w.writerow([s, _fmt(snr)] + [_fmt(vals[m]) for m in self.metrics()])
        paths["report.txt"].write_text(self.render())
        return paths

    def render(self) -> str:
        parts = ["Summary", render_summary(self.summary()), ""]
        for m in self.metrics():
            parts.append(f"{m} by SNR (dB)")
            parts.append(render_per_snr(self.per_snr(), m))
            parts.append("")
        return "\n".join(parts)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.3f}" if abs(v) < 1e4 else f"{v:.6g}"
    return str(v)


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)
    return "\n".join(lines)


def render_summary(summary: dict[str, dict[str, float | None]]) -> str:
    """Metrics as rows, systems as columns."""
    systems = list(summary)
    metrics = [m for m in METRICS if any(m in summary[s] for s in systems)]
    rows = [[m.upper()] + [_fmt(summary[s].get(m)) for s in systems] for m in metrics]
    return _table([""] + systems, rows)


def render_per_snr(per_snr: dict, metric: str) -> str:
    systems = list(per_snr)
    snrs = sorted({snr for s in systems for snr in per_snr[s]})
    rows = [[s] + [_fmt(per_snr[s].get(snr, {}).get(metric)) for snr in snrs] for s in systems]
    return _table(["system"] + [f"{snr:g}" for snr in snrs], rows)


def write_results_csv(rows: list[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([r.system, r.utterance, r.channel, r.noise, repr(float(r.snr_db)),
                        repr(r.si_sdr), repr(r.seg_snr), repr(r.stoi), "" if r.pesq is None else repr(r.pesq)])


def load_results_csv(path, require_metrics: bool = True) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"system", "channel", "noise", "snr_db"} - set(reader.fieldnames or ())
        if missing:
            raise ReportError(f"results CSV missing columns {sorted(missing)}")
        for rec in reader:
            def num(key):
                v = rec.get(key, "")
                return float(v) if v not in ("", None) else None
            row = ResultRow(rec["system"], rec.get("utterance", "") or "", int(rec["channel"]), rec["noise"],
                            float(rec["snr_db"]))
            for m in ("si_sdr", "seg_snr", "stoi"):
                v = num(m)
                if v is None and require_metrics:
                    raise ReportError(f"results CSV row missing {m}")
                setattr(row, m, math.nan if v is None else v)
            row.pesq = num("pesq")
            rows.append(row)
    return rows


def write_summary_csv(summary: dict[str, dict[str, float | None]], path) -> None:
    metrics = [m for m in METRICS if any(m in v for v in summary.values())]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system"] + metrics)
        for s, vals in summary.items():
            w.writerow([s] + [_fmt(vals.get(m)) for m in metrics])


def load_summary_csv(path) -> dict[str, dict[str, float | None]]:
    """Read a systems x metrics summary (e.g. published averages) for rendering."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or reader.fieldnames[0] != "system":
            raise ReportError("summary CSV must start with a 'system' column")
        unknown = set(reader.fieldnames[1:]) - set(METRICS)
        if unknown:
            raise ReportError(f"unknown metric columns {sorted(unknown)}")
        for rec in reader:
            out[rec["system"]] = {m: (float(rec[m]) if rec[m] else None) for m in reader.fieldnames[1:]}
    return out


__all__ = [
    "METRICS",
    "MetricsReport",
    "ReportError",
    "ResultRow",
    "load_results_csv",
    "load_summary_csv",
    "render_per_snr",
    "render_summary",
    "write_results_csv",
    "write_summary_csv",
]
