"""Hand-rolled SVG charts: line plots and bar charts, no plotting dependency.

Output is deterministic (fixed float formatting) so the emitted files can be
diffed across runs.
"""

from __future__ import annotations

import math

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 55


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _nice_ticks(lo: float, hi: float, n: int = 6):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(t)
        t += step
    return ticks


class _Canvas:
    def __init__(self, title, xlabel, ylabel):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="14" '
            f'font-family="sans-serif">{title}</text>',
            f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif">{xlabel}</text>',
            f'<text x="16" y="{_H / 2}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif" transform="rotate(-90 16 {_H / 2})">{ylabel}</text>',
            f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
            f'height="{_H - _MT - _MB}" fill="none" stroke="black"/>',
        ]

    def finish(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def _mapper(lo, hi, log=False):
    if log:
        lo, hi = math.log10(lo), math.log10(hi)

    def to_px(v, inner_lo, inner_hi):
        x = math.log10(v) if log else v
        frac = (x - lo) / (hi - lo) if hi > lo else 0.5
        return inner_lo + frac * (inner_hi - inner_lo)

    return to_px


def line_chart(series: dict, path: str, title: str = "", xlabel: str = "",
               ylabel: str = "", logx: bool = False,
               hlines: dict | None = None) -> None:
    """Polyline chart; series maps label -> (xs, ys); hlines maps label -> y."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if hlines:
        ys_all += list(hlines.values())
    if not xs_all:
        raise ValueError("no data to plot")
    xlo, xhi = min(xs_all), max(xs_all)
    ylo, yhi = min(ys_all), max(ys_all)
    pad = 0.05 * (yhi - ylo or 1.0)
    ylo, yhi = ylo - pad, yhi + pad

    cv = _Canvas(title, xlabel, ylabel)
    xm = _mapper(xlo, xhi, log=logx)
    ym = _mapper(ylo, yhi)
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT

    if logx:
        e = math.ceil(math.log10(xlo))
        xticks = []
        while 10.0 ** e <= xhi * 1.0001:
            xticks.append(10.0 ** e)
            e += 1
    else:
        xticks = _nice_ticks(xlo, xhi)
    for t in xticks:
        px = xm(t, x0, x1)
        cv.parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                        f'y2="{y0 + 5}" stroke="black"/>')
        cv.parts.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" text-anchor="middle" '
                        f'font-size="11" font-family="sans-serif">{_fmt(t)}</text>')
    for t in _nice_ticks(ylo, yhi):
        py = ym(t, y0, y1)
        cv.parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" '
                        f'y2="{_fmt(py)}" stroke="black"/>')
        cv.parts.append(f'<text x="{x0 - 8}" y="{_fmt(py)}" text-anchor="end" '
                        f'dominant-baseline="middle" font-size="11" '
                        f'font-family="sans-serif">{_fmt(t)}</text>')

    for hi_i, (label, y) in enumerate(sorted((hlines or {}).items())):
        py = ym(y, y0, y1)
        cv.parts.append(f'<line x1="{x0}" y1="{_fmt(py)}" x2="{x1}" y2="{_fmt(py)}" '
                        f'stroke="#777777" stroke-dasharray="6,4"/>')
        cv.parts.append(f'<text x="{x1 - 4}" y="{_fmt(py - 4)}" text-anchor="end" '
                        f'font-size="10" font-family="sans-serif" '
                        f'fill="#555555">{label}</text>')

    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{_fmt(xm(x, x0, x1))},{_fmt(ym(y, y0, y1))}"
                       for x, y in zip(xs, ys))
        cv.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                        f'stroke-width="1.5"/>')
        ly = _MT + 16 + 14 * i
        cv.parts.append(f'<line x1="{x1 - 90}" y1="{ly - 4}" x2="{x1 - 70}" '
                        f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        cv.parts.append(f'<text x="{x1 - 65}" y="{ly}" font-size="11" '
                        f'font-family="sans-serif">{label}</text>')

    with open(path, "w") as fh:
        fh.write(cv.finish())


def bar_chart(labels, values, path: str, title: str = "", xlabel: str = "",
              ylabel: str = "", hline: float | None = None) -> None:
    ylo = 0.0
    yhi = max(list(values) + ([hline] if hline is not None else [0.0])) * 1.1 or 1.0
    cv = _Canvas(title, xlabel, ylabel)
    ym = _mapper(ylo, yhi)
    x0, x1 = _ML, _W - _MR
    y0, y1 = _H - _MB, _MT
    nbar = max(len(values), 1)
    bw = (x1 - x0) / (1.5 * nbar + 0.5)
    for t in _nice_ticks(ylo, yhi):
        py = ym(t, y0, y1)
        cv.parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" '
                        f'y2="{_fmt(py)}" stroke="black"/>')
        cv.parts.append(f'<text x="{x0 - 8}" y="{_fmt(py)}" text-anchor="end" '
                        f'dominant-baseline="middle" font-size="11" '
                        f'font-family="sans-serif">{_fmt(t)}</text>')
    for i, (lab, v) in enumerate(zip(labels, values)):
        bx = x0 + bw * (0.5 + 1.5 * i)
        by = ym(v, y0, y1)
        cv.parts.append(f'<rect x="{_fmt(bx)}" y="{_fmt(by)}" width="{_fmt(bw)}" '
                        f'height="{_fmt(y0 - by)}" fill="{_PALETTE[0]}"/>')
        cv.parts.append(f'<text x="{_fmt(bx + bw / 2)}" y="{y0 + 15}" '
                        f'text-anchor="middle" font-size="11" '
                        f'font-family="sans-serif">{lab}</text>')
    if hline is not None:
        py = ym(hline, y0, y1)
        cv.parts.append(f'<line x1="{x0}" y1="{_fmt(py)}" x2="{x1}" y2="{_fmt(py)}" '
                        f'stroke="#d62728" stroke-dasharray="6,4"/>')
    with open(path, "w") as fh:
        fh.write(cv.finish())
