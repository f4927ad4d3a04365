"""Report emission: CSV tables, a JSON summary, and SVG curve plots.

Output is plain text rendered with fixed float formatting and sorted keys,
so two identical runs produce byte-identical files.  The SVG writer is a
small polyline renderer (axes + one line per series) for the sorted-curve
plots: per-image sorted top-N mean deltas, and sorted original-vs-top-1
scores.
"""

import csv
import json
from pathlib import Path

import numpy as np

from .pipeline import topn_mean_delta

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(x):
    return f"{float(x):.12g}"


def render_line_svg(series, title, width=640, height=400, margin=48):
    """Deterministic SVG: one polyline per (name -> list of y values)."""
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    x0, y0 = margin, height - margin
    x1, y1 = width - margin, margin
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    values = [v for ys in series.values() for v in ys]
    if values:
        lo, hi = min(values), max(values)
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        n_max = max(len(ys) for ys in series.values())
        for k, (name, ys) in enumerate(sorted(series.items())):
            if not ys:
                continue
            color = _PALETTE[k % len(_PALETTE)]
            pts = []
            for i, v in enumerate(ys):
                fx = i / max(n_max - 1, 1)
                fy = (v - lo) / (hi - lo)
                pts.append(f"{x0 + fx * (x1 - x0):.2f},{y0 - fy * (y0 - y1):.2f}")
            lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                         f'points="{" ".join(pts)}"/>')
            lines.append(f'<text x="{x1 - 120}" y="{y1 + 16 * (k + 1)}" font-size="12" '
                         f'fill="{color}">{name}</text>')
        lines.append(f'<text x="{x0 - 6}" y="{y0}" text-anchor="end" font-size="10">{_fmt(lo)}</text>')
        lines.append(f'<text x="{x0 - 6}" y="{y1 + 4}" text-anchor="end" font-size="10">{_fmt(hi)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_report(report, out_dir):
    """Write per-image and aggregate CSVs, a JSON summary, and SVG plots.

    Returns the list of written paths.  Handles empty reports (headers-only
    CSVs, bare plot axes).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    per_image_path = out_dir / "per_image.csv"
    with open(per_image_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "method", "rank", "sample_index", "alpha",
                    "internal_score", "external_score", "delta"])
        for img in report.per_image:
            for method in sorted(img.methods):
                for e in img.methods[method]:
                    if e.external is None:
                        continue
                    w.writerow([img.image_id, method, e.rank, e.sample_index,
                                _fmt(e.alpha), _fmt(e.internal),
                                _fmt(e.external), _fmt(e.delta)])
    written.append(per_image_path)

    agg_path = out_dir / "aggregate.csv"
    with open(agg_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "top_n", "mean_delta"])
        for method in sorted(report.aggregates):
            for n in report.top_n:
                w.writerow([method, n, _fmt(report.aggregates[method][n])])
    written.append(agg_path)

    summary = {
        "attribute": report.attribute,
        "master_seed": report.master_seed,
        "top_n": list(report.top_n),
        "n_images": len(report.per_image),
        "aggregates": {m: {str(n): report.aggregates[m][n] for n in report.top_n}
                       for m in sorted(report.aggregates)},
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)

    n_big = max(report.top_n) if report.top_n else 1
    delta_series = {}
    score_series = {"original": sorted(i.original_external for i in report.per_image)}
    for method in sorted(report.aggregates):
        deltas = [topn_mean_delta(img.methods[method], min(n_big, len(img.methods[method])))
                  for img in report.per_image if img.methods[method]
                  and img.methods[method][0].delta is not None]
        delta_series[method] = sorted(deltas)
        tops = [img.methods[method][0].external for img in report.per_image
                if img.methods[method] and img.methods[method][0].external is not None]
        score_series[method] = sorted(tops)
    delta_svg = out_dir / "sorted_delta.svg"
    delta_svg.write_text(render_line_svg(
        delta_series, f"sorted top-{n_big} mean score difference per image"))
    written.append(delta_svg)
    scores_svg = out_dir / "sorted_scores.svg"
    scores_svg.write_text(render_line_svg(
        score_series, "sorted external scores: originals vs top-1 stylizations"))
    written.append(scores_svg)
    return written
