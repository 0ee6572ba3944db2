"""Minimal SVG line charts drawn from CSV files."""

from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def read_csv_columns(text: str) -> dict[str, list]:
    rows = list(csv.DictReader(io.StringIO(text)))
    cols = {k: [] for k in (rows[0].keys() if rows else [])}
    for row in rows:
        for k, v in row.items():
            cols[k].append(float(v) if v not in ("", None) else None)
    return cols


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 400) -> str:
    """One ``<polyline>`` per entry of ``series`` (name -> (xs, ys)); None ys are skipped."""
    pts = {name: [(x, y) for x, y in zip(xs, ys) if y is not None and x is not None]
           for name, (xs, ys) in series.items()}
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    ml, mr, mt, mb = 70, 140, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{ml}" y="20" font-size="14">{escape(title)}</text>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" font-size="12" '
           f'text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{mt + ph / 2:.1f}" font-size="12" transform="rotate(-90 14 '
           f'{mt + ph / 2:.1f})" text-anchor="middle">{escape(ylabel)}</text>',
           f'<text x="{ml}" y="{mt + ph + 16}" font-size="10">{x0:.4g}</text>',
           f'<text x="{ml + pw}" y="{mt + ph + 16}" font-size="10" text-anchor="end">{x1:.4g}</text>',
           f'<text x="{ml - 4}" y="{mt + ph}" font-size="10" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{ml - 4}" y="{mt + 10}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    for i, (name, p) in enumerate(pts.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{coords}"><title>{escape(name)}</title></polyline>')
        ly = mt + 14 + 16 * i
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly - 4}" x2="{ml + pw + 30}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 34}" y="{ly}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def chart_from_csv(text: str, x: str, ys: list[str], **kw) -> str:
    cols = read_csv_columns(text)
    return line_chart({y: (cols.get(x, []), cols.get(y, [])) for y in ys}, xlabel=x, **kw)
