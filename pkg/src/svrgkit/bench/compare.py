"""Rate fitting and per-problem comparison tables built from run records."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..oracle import ContractViolation
from .runner import load_manifest, read_run_csv

EPS_LADDER = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
NOT_REACHED = "not reached"
MIN_FIT_POINTS = 5


def _series(run) -> Tuple[np.ndarray, np.ndarray]:
    """(effective passes, grad_norm_sq) from a RunRecord or a parsed CSV dict."""
    if isinstance(run, dict):
        return np.asarray(run["effective_passes"], float), np.asarray(run["grad_norm_sq"], float)
    return run.effective_passes, run.grad_norm_sq


def fit_rate(run, window: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares slope of log(min-so-far grad_norm_sq) against log(passes).

    Args:
      run: a RunRecord, a dict of CSV columns, or a ``(passes, grad_norm_sq)`` pair.
      window: inclusive ``(lo, hi)`` range of effective passes; defaults to
        every checkpoint with positive passes.

    Raises:
      ContractViolation: fewer than five usable checkpoints in the window.
    """
    if isinstance(run, tuple):
        passes, g = (np.asarray(v, float) for v in run)
    else:
        passes, g = _series(run)
    best = np.minimum.accumulate(g)
    keep = passes > 0
    if window is not None:
        keep &= (passes >= window[0]) & (passes <= window[1])
    keep &= best > 0
    if keep.sum() < MIN_FIT_POINTS:
        raise ContractViolation(f"need at least {MIN_FIT_POINTS} checkpoints in the window, got {int(keep.sum())}")
    slope, _ = np.polyfit(np.log(passes[keep]), np.log(best[keep]), 1)
    return float(slope)


def ifo_to_reach(run, eps: float) -> Optional[int]:
    """First recorded IFO count with ``grad_norm_sq <= eps``, or None."""
    if isinstance(run, dict):
        ifo, g = run["ifo_calls"], run["grad_norm_sq"]
    else:
        ifo, g = run.ifo_calls, run.grad_norm_sq
    hit = np.nonzero(np.asarray(g) <= eps)[0]
    return int(ifo[hit[0]]) if hit.size else None


@dataclass
class ComparisonRow:
    algorithm: str
    seeds: int
    final_median: float
    final_iqr: float
    min_median: float
    min_iqr: float
    reach: Dict[float, Optional[float]]
    slope: Optional[float]
    final_gap_median: Optional[float] = None


def _iqr(values) -> float:
    q1, q3 = np.percentile(values, [25, 75])
    return float(q3 - q1)


def summarize(label: str, runs: Sequence, ladder=EPS_LADDER, f_star: Optional[float] = None,
              window=None) -> ComparisonRow:
    """Row of medians over seeds; a target counts only if every seed reached it."""
    finals = [_series(r)[1][-1] for r in runs]
    mins = [np.min(_series(r)[1]) for r in runs]
    reach = {}
    for eps in ladder:
        hits = [ifo_to_reach(r, eps) for r in runs]
        reach[eps] = None if any(h is None for h in hits) else float(np.median(hits))
    slopes = []
    for r in runs:
        try:
            slopes.append(fit_rate(r, window))
        except ContractViolation:
            pass
    gap = None
    if f_star is not None:
        fv = [(r["f_value"] if isinstance(r, dict) else r.f_values)[-1] - f_star for r in runs]
        gap = float(np.median(fv))
    return ComparisonRow(label, len(runs), float(np.median(finals)), _iqr(finals), float(np.median(mins)),
                         _iqr(mins), reach, float(np.median(slopes)) if slopes else None, gap)


@dataclass
class ComparisonTable:
    problem: dict
    rows: List[ComparisonRow]
    ladder: Tuple[float, ...] = EPS_LADDER

    def header(self) -> List[str]:
        cols = ["algorithm", "seeds", "final_median", "final_iqr", "min_median", "min_iqr"]
        cols += [f"ifo_to_{eps:g}" for eps in self.ladder]
        cols.append("fitted_slope")
        if any(r.final_gap_median is not None for r in self.rows):
            cols.append("final_gap_median")
        return cols

    def _cells(self, row: ComparisonRow, fmt) -> List[str]:
        cells = [row.algorithm, str(row.seeds)] + [fmt(v) for v in
                                                   (row.final_median, row.final_iqr, row.min_median, row.min_iqr)]
        cells += [NOT_REACHED if row.reach[eps] is None else str(int(row.reach[eps])) for eps in self.ladder]
        cells.append("" if row.slope is None else fmt(row.slope))
        if "final_gap_median" in self.header():
            cells.append("" if row.final_gap_median is None else fmt(row.final_gap_median))
        return cells

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in self.rows:
            w.writerow(self._cells(row, repr))
        return buf.getvalue()

    def to_text(self) -> str:
        table = [self.header()] + [self._cells(r, lambda v: f"{v:.3e}") for r in self.rows]
        widths = [max(len(r[j]) for r in table) for j in range(len(table[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table]
        return "\n".join(lines) + "\n"


def _problem_key(problem: dict) -> str:
    keep = {k: v for k, v in problem.items() if k not in ("L", "sigma", "f_star")}
    return json.dumps(keep, sort_keys=True)


def compare(directories: Sequence, ladder=EPS_LADDER, window=None) -> ComparisonTable:
    """Comparison table over every run listed in the manifests of ``directories``.

    Raises:
      ContractViolation: the directories hold runs on different problems.
    """
    if not directories:
        raise ContractViolation("nothing to compare")
    groups: Dict[str, list] = {}
    problem = None
    for d in directories:
        manifest = load_manifest(d)
        if problem is None:
            problem = manifest["problem"]
        elif _problem_key(manifest["problem"]) != _problem_key(problem):
            raise ContractViolation("runs on different problems cannot share one table")
        for run in manifest["runs"]:
            groups.setdefault(run["algorithm"], []).append(read_run_csv(Path(d) / run["file"]))
    f_star = problem.get("f_star")
    rows = [summarize(label, runs, ladder, f_star if isinstance(f_star, float) else None, window)
            for label, runs in groups.items()]
    return ComparisonTable(problem, rows, tuple(ladder))
