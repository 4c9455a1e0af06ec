"""Minimal standalone SVG line charts (no raster or plotting dependency)."""
from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v):
    return f"{v:.2f}"


def line_chart(series, title="", xlabel="", ylabel="", width=480, height=320, y_range=None,
               diagonal=False) -> str:
    """Render ``{name: (xs, ys)}`` as one polyline per series."""
    margin = dict(left=56, right=16, top=32, bottom=44)
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    if y_range is None:
        y0, y1 = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    else:
        y0, y1 = y_range
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw = width - margin["left"] - margin["right"]
    ph = height - margin["top"] - margin["bottom"]

    def px(x):
        return margin["left"] + (x - x0) / (x1 - x0) * pw

    def py(y):
        return margin["top"] + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{margin["left"]}" y="{margin["top"]}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for v, anchor_y in ((y0, py(y0)), (y1, py(y1))):
        out.append(f'<text x="{margin["left"] - 4}" y="{anchor_y + 4:.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    for v in (x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{margin["top"] + ph + 14}" text-anchor="middle" font-size="10">{v:.3g}</text>')
    if diagonal:
        out.append(f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(y0))}" x2="{_fmt(px(x1))}" y2="{_fmt(py(y1))}" '
                   'stroke="#aaa" stroke-dasharray="4 3"/>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                   f'<title>{escape(name)}</title></polyline>')
        out.append(f'<text x="{margin["left"] + 8}" y="{margin["top"] + 14 + 14 * i}" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series, **kw):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(line_chart(series, **kw))
