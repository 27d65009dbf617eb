"""Minimal self-contained SVG line charts (no plotting library needed)."""
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=60, right=200, top=40, bottom=50)
MAX_POINTS = 500


def _fmt(v):
    return f"{v:.2f}"


def write_curves_svg(curves, path, title="", xlabel="round", ylabel="normalized value"):
    """One polyline per entry of ``curves`` (name -> 1-d series), x = 1..len."""
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    n = max((len(v) for v in curves.values()), default=1)
    ymax = max((float(np.max(v)) for v in curves.values() if len(v)), default=1.0)
    ymax = ymax if ymax > 0 else 1.0

    def sx(i):
        return MARGIN["left"] + pw * (i / max(n - 1, 1))

    def sy(y):
        return MARGIN["top"] + ph * (1.0 - y / ymax)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2 - 100}" y="22" font-size="14">{escape(title)}</text>']
    x0, y0 = MARGIN["left"], MARGIN["top"] + ph
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN["top"]}" x2="{x0}" y2="{y0}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = frac * ymax
        out.append(f'<text x="{x0 - 8}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">'
                   f'{yv:.2f}</text>')
        xi = frac * (n - 1)
        out.append(f'<text x="{_fmt(sx(xi))}" y="{y0 + 18}" text-anchor="middle">'
                   f'{int(round(xi)) + 1}</text>')
    out.append(f'<text x="{x0 + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{MARGIN["top"] + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {MARGIN["top"] + ph / 2})">{escape(ylabel)}</text>')

    for k, (name, series) in enumerate(curves.items()):
        series = np.asarray(series, dtype=np.float64)
        color = PALETTE[k % len(PALETTE)]
        idx = np.unique(np.linspace(0, len(series) - 1, min(len(series), MAX_POINTS))
                        .round().astype(int)) if len(series) else []
        pts = " ".join(f"{_fmt(sx(i))},{_fmt(sy(series[i]))}" for i in idx)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{pts}"/>')
        ly = MARGIN["top"] + 16 * k + 8
        lx = x0 + pw + 15
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(str(name))}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
