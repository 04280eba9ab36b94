"""Comparison tables and ROC plots.

Cell classification implements the relative-3% rule: an inpainted mean that
beats its baseline is a "surpass" cell; one within 3% of the baseline
(relative, without surpassing) is "close_within_3pct"; anything further back
is "neither". Rounding to 4 decimals happens at render time only.
"""

from __future__ import annotations

import csv
import html
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ReportingError
from .verification import ScoreSet, TrialSummary, compute_auc

logger = logging.getLogger(__name__)

SURPASS = "surpass"
CLOSE = "close_within_3pct"
NEITHER = "neither"

CLOSE_RELATIVE_MARGIN = 0.03

MISSING = "—"

# cell backgrounds for the HTML rendering
_CELL_COLORS = {SURPASS: "#c6efce", CLOSE: "#ffe5cc"}

_FAMILY_RANK = {"ViT_T": 0, "ViT_S": 1, "ViT_B": 2, "ViT_L": 3}


@dataclass(frozen=True)
class ComparisonCell:
    baseline: TrialSummary
    inpainted: TrialSummary
    classification: str


def classify_cell(baseline_mean: float, inpainted_mean: float) -> str:
    for name, v in (("baseline", baseline_mean), ("inpainted", inpainted_mean)):
        if not 0.0 <= v <= 1.0:
            raise ReportingError(f"{name} mean out of [0, 1]: {v}")
    if baseline_mean == 0.0:
        raise ReportingError("cannot classify against a zero baseline")
    if inpainted_mean > baseline_mean:
        return SURPASS
    # the 1e-12 slack keeps the inclusive boundary reachable for decimal
    # inputs that binary floats cannot represent exactly (e.g. 1.0 vs 0.97)
    if (baseline_mean - inpainted_mean) / baseline_mean <= CLOSE_RELATIVE_MARGIN + 1e-12:
        return CLOSE
    return NEITHER


def make_cell(baseline: TrialSummary, inpainted: TrialSummary) -> ComparisonCell:
    return ComparisonCell(baseline, inpainted,
                          classify_cell(baseline.mean, inpainted.mean))


def _sorted_axes(grid: dict) -> tuple[list[tuple[str, int]], list[str]]:
    rows = sorted({(m, p) for m, p, _ in grid},
                  key=lambda mp: (_FAMILY_RANK.get(mp[0], len(_FAMILY_RANK)), mp[0], mp[1]))
    datasets = sorted({d for _, _, d in grid})
    return rows, datasets


def render_comparison_table(grid: dict[tuple[str, int, str], ComparisonCell],
                            fmt: str = "text") -> str:
    """Render a (model, patch, dataset) -> ComparisonCell grid.

    fmt is "text", "csv" or "html". Rows cover the cross product of observed
    (model, patch) and dataset axes; absent cells render as a placeholder.
    """
    if fmt == "csv":
        return _render_csv(grid)
    if fmt == "html":
        return _render_html(grid)
    if fmt == "text":
        return _render_text(grid)
    raise ReportingError(f"unknown table format: {fmt!r}")


def _render_csv(grid) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "patch", "dataset", "baseline_mean", "baseline_std",
                     "inpainted_mean", "inpainted_std", "classification"])
    rows, datasets = _sorted_axes(grid)
    for model, patch in rows:
        for ds in datasets:
            cell = grid.get((model, patch, ds))
            if cell is None:
                writer.writerow([model, patch, ds, MISSING, MISSING, MISSING, MISSING, MISSING])
            else:
                writer.writerow([
                    model, patch, ds,
                    f"{cell.baseline.mean:.4f}", f"{cell.baseline.std:.4f}",
                    f"{cell.inpainted.mean:.4f}", f"{cell.inpainted.std:.4f}",
                    cell.classification,
                ])
    return buf.getvalue()


_TEXT_MARK = {SURPASS: "+", CLOSE: "~", NEITHER: " "}


def _render_text(grid) -> str:
    rows, datasets = _sorted_axes(grid)
    header = ["configuration", "dataset", "baseline", "inpainted", ""]
    table = [header]
    for model, patch in rows:
        for ds in datasets:
            cell = grid.get((model, patch, ds))
            if cell is None:
                table.append([f"{model}_p{patch}", ds, MISSING, MISSING, " "])
            else:
                table.append([
                    f"{model}_p{patch}", ds,
                    cell.baseline.formatted(), cell.inpainted.formatted(),
                    _TEXT_MARK[cell.classification],
                ])
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = ["  ".join(r[c].ljust(widths[c]) for c in range(len(header))).rstrip()
             for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths).rstrip())
    lines.append("")
    lines.append("+ surpasses baseline   ~ within 3% of baseline (relative)")
    return "\n".join(lines) + "\n"


def _render_html(grid) -> str:
    rows, datasets = _sorted_axes(grid)
    out = ["<table>", "  <thead>", "    <tr><th>configuration</th>"]
    for ds in datasets:
        out.append(f"      <th colspan=\"2\">{html.escape(ds)}</th>")
    out.append("    </tr>")
    out.append("    <tr><th></th>" + "<th>baseline</th><th>inpainted</th>" * len(datasets)
               + "</tr>")
    out.append("  </thead>")
    out.append("  <tbody>")
    for model, patch in rows:
        cells = [f"    <tr><td>{html.escape(model)}_p{patch}</td>"]
        for ds in datasets:
            cell = grid.get((model, patch, ds))
            if cell is None:
                cells.append(f"<td>{MISSING}</td><td>{MISSING}</td>")
                continue
            color = _CELL_COLORS.get(cell.classification)
            style = f" style=\"background:{color}\"" if color else ""
            cells.append(
                f"<td>{cell.baseline.formatted()}</td>"
                f"<td{style}>{cell.inpainted.formatted()}</td>"
            )
        cells.append("</tr>")
        out.append("".join(cells))
    out.append("  </tbody>")
    out.append("</table>")
    return "\n".join(out) + "\n"


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """ROC staircase (FPR, TPR) points from (0,0) to (1,1), thresholds
    descending over distinct score values."""
    g = np.sort(scores.genuine_scores)[::-1]
    i = np.sort(scores.impostor_scores)[::-1]
    if len(g) == 0 or len(i) == 0:
        raise ReportingError("ROC requires non-empty genuine and impostor sets")
    thresholds = np.unique(np.concatenate([g, i]))[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        tpr = float(np.count_nonzero(g >= t)) / len(g)
        fpr = float(np.count_nonzero(i >= t)) / len(i)
        points.append((fpr, tpr))
    return points


def emit_roc_plot(scores: ScoreSet, path: str | Path) -> None:
    """Write a deterministic standalone SVG of the ROC curve with the AUC in
    the legend."""
    points = roc_points(scores)
    auc = compute_auc(scores)
    size, margin = 480, 56
    span = size - 2 * margin

    def sx(fpr: float) -> float:
        return margin + fpr * span

    def sy(tpr: float) -> float:
        return size - margin - tpr * span

    poly = " ".join(f"{sx(fx):.2f},{sy(ty):.2f}" for fx, ty in points)
    ticks = []
    for v in (0.0, 0.5, 1.0):
        ticks.append(f'<text x="{sx(v):.2f}" y="{size - margin + 20:.2f}" '
                     f'text-anchor="middle" font-size="12">{v:g}</text>')
        ticks.append(f'<text x="{margin - 10:.2f}" y="{sy(v) + 4:.2f}" '
                     f'text-anchor="end" font-size="12">{v:g}</text>')
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">
<rect width="{size}" height="{size}" fill="white"/>
<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>
<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(1):.2f}" stroke="#999" stroke-dasharray="4 4"/>
<polyline points="{poly}" fill="none" stroke="#1f6fb2" stroke-width="2"/>
{chr(10).join(ticks)}
<text x="{size / 2:.0f}" y="{size - 12}" text-anchor="middle" font-size="13">false positive rate</text>
<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-size="13" transform="rotate(-90 14 {size / 2:.0f})">true positive rate</text>
<text x="{size - margin - 8}" y="{size - margin - 12}" text-anchor="end" font-size="13">AUC = {auc:.4f}</text>
</svg>
"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
