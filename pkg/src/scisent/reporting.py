"""Run records, fine-tuned vs. baseline comparison tables, and PCA projection."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fileio import atomic_write_text, file_digest


def timestamp() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible outputs
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class RunRecord:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    raw: dict[str, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    started: str = field(default_factory=timestamp)
    finished: str = ""

    @property
    def run_id(self) -> str:
        key = json.dumps({"command": self.command, "config": self.config, "inputs": self.inputs},
                         sort_keys=True)
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "metrics": self.metrics,
            "raw": self.raw,
            "extra": self.extra,
            "started": self.started,
            "finished": self.finished or timestamp(),
        }

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def digests(paths: dict[str, str | Path]) -> dict[str, str]:
        return {name: file_digest(p) for name, p in paths.items()}


def load_run_metrics(path: str | Path) -> dict[str, float]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    metrics = doc.get("metrics", doc)
    return {k: float(v) for k, v in metrics.items() if isinstance(v, (int, float))}


# ---------------------------------------------------------------------------
# comparison tables

def delta_percent(fine_tuned: float, baseline: float) -> float:
    if baseline == 0:
        raise ZeroDivisionError("baseline value is zero; delta percent undefined")
    return (fine_tuned - baseline) / baseline * 100.0


@dataclass
class ComparisonRow:
    group: str
    name: str
    metric: str
    fine_tuned: float
    baseline: float

    @property
    def delta_percent(self) -> float:
        """Delta percent, or NaN when the baseline is zero."""
        if self.baseline == 0:
            return float("nan")
        return delta_percent(self.fine_tuned, self.baseline)


@dataclass
class GroupSummary:
    group: str
    metric: str
    average: float
    std: float


def summarize(rows: Sequence[ComparisonRow], ddof: int = 0) -> list[GroupSummary]:
    """Average and standard deviation of delta percent per (group, metric).

    ``ddof=0`` (population) reproduces the published tables. Rows with an
    undefined delta (zero baseline) are left out.
    """
    keys: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        vals = keys.setdefault((r.group, r.metric), [])
        if math.isfinite(r.delta_percent):
            vals.append(r.delta_percent)
    out = []
    for (group, metric), vals in keys.items():
        v = np.array(vals)
        mean = float(v.mean()) if len(v) else float("nan")
        std = float(v.std(ddof=ddof)) if len(v) > ddof else float("nan")
        out.append(GroupSummary(group, metric, mean, std))
    return out


def comparison_rows(pairs: Sequence[dict], runs: dict[str, dict[str, float]]) -> list[ComparisonRow]:
    """Build rows for every shared metric of each fine-tuned/baseline pair.

    ``pairs`` entries hold ``fine_tuned``, ``baseline`` run names and optional
    ``group``/``name``. Raises KeyError when the two runs' metric keys differ.
    """
    rows = []
    for p in pairs:
        ft, bl = runs[p["fine_tuned"]], runs[p["baseline"]]
        if set(ft) != set(bl):
            raise KeyError(f"metric keys differ between {p['fine_tuned']} and {p['baseline']}: "
                           f"{sorted(set(ft) ^ set(bl))}")
        for metric in sorted(ft):
            rows.append(ComparisonRow(p.get("group", ""), p.get("name", p["fine_tuned"]),
                                      metric, ft[metric], bl[metric]))
    return rows


def _fmt(v: float, suffix: str = "") -> str:
    return f"{v:.2f}{suffix}" if math.isfinite(v) else "n/a"


def render_comparison(rows: Sequence[ComparisonRow], summaries: Sequence[GroupSummary],
                      fmt: str = "tsv") -> str:
    header = ["group", "name", "metric", "fine_tuned", "baseline", "delta_percent"]
    body = [[r.group, r.name, r.metric, f"{r.fine_tuned:.2f}", f"{r.baseline:.2f}",
             _fmt(r.delta_percent, "%")] for r in rows]
    for s in summaries:
        body.append([s.group, "Average", s.metric, "", "", _fmt(s.average, "%")])
        body.append([s.group, "Std.", s.metric, "", "", _fmt(s.std)])
    if fmt == "tsv":
        return "".join("\t".join(line) + "\n" for line in [header] + body)
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() + "\n"
                   for line in [header] + body)


# ---------------------------------------------------------------------------
# projection

def pca_project(x, n_components: int = 2) -> np.ndarray:
    """Coordinates on the top principal components of the mean-centred data.

    Each component's sign is chosen so its largest-magnitude loading is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2 or x.shape[1] < n_components:
        raise ValueError(f"need at least 2 rows and {n_components} columns, got {x.shape}")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / (len(x) - 1)
    if np.trace(cov) <= 0:
        raise ValueError("data has zero variance")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:n_components]
    comps = vecs[:, order]
    for j in range(n_components):
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] = -comps[:, j]
    return centred @ comps
