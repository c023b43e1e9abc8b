"""Minimal deterministic SVG plots (line, step, scatter matrix, box, histogram).

Output depends only on the data: coordinates are written with fixed
precision and no timestamps or random ids are emitted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _nice_ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if not np.isfinite(lo) or not np.isfinite(hi):
        return np.array([0.0])
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _range(values, pad=0.05):
    v = np.asarray([x for x in np.ravel(values) if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        d = abs(lo) * 0.05 or 1.0
        return lo - d, hi + d
    d = (hi - lo) * pad
    return lo - d, hi + d


class _Svg:
    def __init__(self, width: float, height: float):
        self.w, self.h = width, height
        self.parts: list[str] = []

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="middle", rotate=None, color="#000"):
        rot = f' transform="rotate({rotate} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                 f'fill="{color}" font-family="sans-serif"{rot}>{_esc(s)}</text>')

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{color}" stroke-width="{width}"{d}/>')

    def rect(self, x, y, w, h, fill="none", stroke="#000", opacity=1.0):
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                 f'fill="{fill}" stroke="{stroke}" fill-opacity="{opacity}"/>')

    def polyline(self, pts, color, width=1.5):
        s = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def circle(self, x, y, r, color, opacity=0.6):
        self.add(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{r}" fill="{color}" '
                 f'fill-opacity="{opacity}"/>')

    def write(self, path):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" '
                f'height="{_f(self.h)}" viewBox="0 0 {_f(self.w)} {_f(self.h)}">')
        body = "\n".join([head, f'<rect width="100%" height="100%" fill="#fff"/>'] + self.parts
                         + ["</svg>"])
        Path(path).write_text(body + "\n")


class _Axes:
    """Maps data coordinates into a pixel box and draws frame and ticks."""

    def __init__(self, svg, x0, y0, w, h, xlim, ylim):
        self.svg, self.x0, self.y0, self.w, self.h = svg, x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        a, b = self.xlim
        return self.x0 + (np.asarray(x, dtype=float) - a) / (b - a) * self.w

    def py(self, y):
        a, b = self.ylim
        return self.y0 + self.h - (np.asarray(y, dtype=float) - a) / (b - a) * self.h

    def frame(self, xlabel="", ylabel="", title="", ticks=True, size=10):
        s = self.svg
        s.rect(self.x0, self.y0, self.w, self.h)
        if ticks:
            for t in _nice_ticks(*self.xlim):
                x = float(self.px(t))
                s.line(x, self.y0 + self.h, x, self.y0 + self.h + 4)
                s.text(x, self.y0 + self.h + 15, f"{t:g}", size=size)
            for t in _nice_ticks(*self.ylim):
                y = float(self.py(t))
                s.line(self.x0 - 4, y, self.x0, y)
                s.text(self.x0 - 6, y + 3, f"{t:g}", size=size, anchor="end")
        if xlabel:
            s.text(self.x0 + self.w / 2, self.y0 + self.h + 32, xlabel, size=size + 1)
        if ylabel:
            s.text(self.x0 - 45, self.y0 + self.h / 2, ylabel, size=size + 1, rotate=-90)
        if title:
            s.text(self.x0 + self.w / 2, self.y0 - 10, title, size=size + 3)


def _legend(svg, x, y, labels):
    for i, lab in enumerate(labels):
        c = PALETTE[i % len(PALETTE)]
        svg.line(x, y + 14 * i, x + 18, y + 14 * i, color=c, width=2)
        svg.text(x + 22, y + 14 * i + 4, lab, size=10, anchor="start")


def line_plot(series, path, title="", xlabel="", ylabel="", step=False):
    """``series`` is a list of ``(label, x, y)``; ``step`` draws post-steps."""
    svg = _Svg(760, 420)
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in series])
    ax = _Axes(svg, 70, 40, 520, 320, _range(xs, 0.0), _range(ys))
    ax.frame(xlabel, ylabel, title)
    for i, (label, x, y) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if step:
            xx = np.repeat(x, 2)[1:]
            yy = np.repeat(y, 2)[:-1]
        else:
            xx, yy = x, y
        pts = list(zip(ax.px(xx).tolist(), ax.py(yy).tolist()))
        svg.polyline(pts, PALETTE[i % len(PALETTE)])
    _legend(svg, 605, 50, [lab for lab, _, _ in series])
    svg.write(path)


def scatter_matrix(X, names, path, title="", corr=None):
    """Lower triangle: pairwise scatter; diagonal: box plot; upper: correlation."""
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    cell, pad = 90, 60
    svg = _Svg(pad + n * cell + 20, pad + n * cell + 40)
    lims = [_range(X[:, i]) for i in range(n)]
    if title:
        svg.text((pad + n * cell) / 2 + 10, 20, title, size=14)
    for i in range(n):
        svg.text(pad - 5, pad + i * cell + cell / 2, names[i], size=9, anchor="end")
        svg.text(pad + i * cell + cell / 2, pad + n * cell + 15, names[i], size=9)
        for j in range(n):
            x0, y0 = pad + j * cell, pad + i * cell
            ax = _Axes(svg, x0 + 4, y0 + 4, cell - 8, cell - 8, lims[j], lims[i])
            svg.rect(x0 + 4, y0 + 4, cell - 8, cell - 8, stroke="#999")
            if i > j:
                for a, b in zip(X[:, j], X[:, i]):
                    svg.circle(float(ax.px(a)), float(ax.py(b)), 1.5, PALETTE[0])
            elif i == j:
                _box(svg, _Axes(svg, x0 + 4, y0 + 4, cell - 8, cell - 8, (0, 1), lims[i]),
                     X[:, i], 0.5, 0.5, PALETTE[0])
            elif corr is not None:
                svg.text(x0 + cell / 2, y0 + cell / 2 + 4, f"{corr[i, j]:.2f}", size=12)
    svg.write(path)


def _box(svg, ax, v, center, width, color):
    v = np.asarray(v, dtype=float)
    q0, q1, q2, q3, q4 = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    iqr = q3 - q1
    lo_w = v[v >= q1 - 1.5 * iqr].min()
    hi_w = v[v <= q3 + 1.5 * iqr].max()
    xl, xr = float(ax.px(center - width / 2)), float(ax.px(center + width / 2))
    xm = float(ax.px(center))
    svg.rect(xl, float(ax.py(q3)), xr - xl, float(ax.py(q1) - ax.py(q3)), fill=color,
             stroke=color, opacity=0.3)
    svg.line(xl, float(ax.py(q2)), xr, float(ax.py(q2)), color=color, width=2)
    svg.line(xm, float(ax.py(q3)), xm, float(ax.py(hi_w)), color=color)
    svg.line(xm, float(ax.py(q1)), xm, float(ax.py(lo_w)), color=color)
    for o in v[(v < lo_w) | (v > hi_w)]:
        svg.circle(xm, float(ax.py(o)), 1.8, color, 0.8)


def box_plot(groups: dict, names, path, title=""):
    """Side-by-side boxes per parameter; ``groups`` maps label to ``(n, n_p)`` data."""
    labels = list(groups)
    n_p = len(names)
    svg = _Svg(max(420, 70 * n_p + 160), 420)
    allv = np.concatenate([np.ravel(groups[k]) for k in labels])
    ax = _Axes(svg, 70, 40, 70 * n_p, 320, (0, n_p), _range(allv))
    ax.frame("", "normalized value", title)
    width = 0.8 / len(labels)
    for g, lab in enumerate(labels):
        data = np.asarray(groups[lab], dtype=float)
        for i in range(n_p):
            c = i + 0.1 + width * (g + 0.5)
            _box(svg, ax, data[:, i], c, width * 0.8, PALETTE[g % len(PALETTE)])
    for i, n in enumerate(names):
        svg.text(float(ax.px(i + 0.5)), 375, n, size=10)
    _legend(svg, 80 + 70 * n_p, 50, labels)
    svg.write(path)


def histogram(groups: dict, path, title="", xlabel="", bins=20):
    labels = list(groups)
    allv = np.concatenate([np.asarray(groups[k], dtype=float) for k in labels])
    lo, hi = _range(allv, 0.0)
    edges = np.linspace(lo, hi, bins + 1)
    counts = [np.histogram(np.asarray(groups[k], dtype=float), edges)[0] for k in labels]
    svg = _Svg(640, 400)
    ax = _Axes(svg, 70, 40, 420, 300, (lo, hi), (0, max(1, max(c.max() for c in counts)) * 1.1))
    ax.frame(xlabel, "count", title)
    for g, c in enumerate(counts):
        col = PALETTE[g % len(PALETTE)]
        for k in range(bins):
            if c[k] == 0:
                continue
            x0, x1 = float(ax.px(edges[k])), float(ax.px(edges[k + 1]))
            y = float(ax.py(c[k]))
            svg.rect(x0, y, x1 - x0, float(ax.py(0)) - y, fill=col, stroke=col, opacity=0.35)
    _legend(svg, 505, 50, labels)
    svg.write(path)
