"""Self-contained SVG line plots and heatmaps.

One-axis reports become line plots (one line per column), two-axis reports
become one heatmap panel per column. Output is plain SVG text with no
external references, fonts or scripts, and depends only on the report
values, so identical reports give identical files.
"""

import math
from xml.sax.saxutils import escape

import numpy as np

# viridis anchor colours
_CMAP = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)
_LINE_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
                "#7f7f7f", "#bcbd22", "#17becf")
_W, _H = 420, 300
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 64, 16, 28, 44


def _color(u):
    if not math.isfinite(u):
        return "#bbbbbb"
    u = min(max(u, 0.0), 1.0) * (len(_CMAP) - 1)
    i = min(int(u), len(_CMAP) - 2)
    c = _CMAP[i] + (u - i) * (_CMAP[i + 1] - _CMAP[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(x)) for x in c))


def _num(x):
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _label(x):
    return f"{x:.3g}"


def _is_geometric(v):
    v = np.asarray(v)
    if len(v) < 3 or np.any(v <= 0):
        return False
    r = v[1:] / v[:-1]
    return bool(np.allclose(r, r[0], rtol=1e-6) and abs(r[0] - 1) > 1e-9)


def _use_log(cols):
    vals = np.concatenate([c[np.isfinite(c)] for c in cols]) if cols else np.array([])
    if len(vals) == 0 or np.any(vals <= 0):
        return False
    return vals.max() / vals.min() > 100


class _Transform:
    def __init__(self, lo, hi, a, b, log):
        self.log = log
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        self.lo, self.hi, self.a, self.b = lo, hi, a, b

    def __call__(self, x):
        if self.log:
            x = math.log10(x)
        return self.a + (x - self.lo) / (self.hi - self.lo) * (self.b - self.a)

    def ticks(self, n=5):
        vals = np.linspace(self.lo, self.hi, n)
        return [10**v if self.log else v for v in vals]


def _frame(x0, y0, title, xlabel, ylabel, xt, yt):
    out = [
        f'<rect x="{x0 + _PAD_L}" y="{y0 + _PAD_T}" width="{_W - _PAD_L - _PAD_R}" '
        f'height="{_H - _PAD_T - _PAD_B}" fill="none" stroke="#333"/>',
        f'<text x="{x0 + _W / 2}" y="{y0 + 18}" text-anchor="middle" font-size="12">{escape(title)}</text>',
        f'<text x="{x0 + (_W + _PAD_L - _PAD_R) / 2}" y="{y0 + _H - 6}" text-anchor="middle" '
        f'font-size="11">{escape(xlabel)}</text>',
        f'<text x="{x0 + 12}" y="{y0 + _H / 2}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 {x0 + 12} {y0 + _H / 2})">{escape(ylabel)}</text>',
    ]
    ybase = y0 + _H - _PAD_B
    for v in xt.ticks():
        px = xt(v)
        out.append(f'<line x1="{_num(px)}" y1="{ybase}" x2="{_num(px)}" y2="{ybase + 4}" stroke="#333"/>')
        out.append(f'<text x="{_num(px)}" y="{ybase + 16}" text-anchor="middle" font-size="9">{_label(v)}</text>')
    for v in yt.ticks():
        py = yt(v)
        xl = x0 + _PAD_L
        out.append(f'<line x1="{xl - 4}" y1="{_num(py)}" x2="{xl}" y2="{_num(py)}" stroke="#333"/>')
        out.append(f'<text x="{xl - 6}" y="{_num(py + 3)}" text-anchor="end" font-size="9">{_label(v)}</text>')
    return out


def _line_plot(report):
    (xname, xs), = report.axes
    cols = list(report.columns.items())
    xlog = _is_geometric(xs)
    ylog = _use_log([c for _, c in cols])
    finite = np.concatenate([c[np.isfinite(c)] for _, c in cols]) if cols else np.array([])
    ylo, yhi = (finite.min(), finite.max()) if len(finite) else (0.0, 1.0)
    xt = _Transform(xs.min() if len(xs) else 0, xs.max() if len(xs) else 1, _PAD_L, _W - _PAD_R, xlog)
    yt = _Transform(ylo, yhi, _H - _PAD_B, _PAD_T, ylog)
    body = _frame(0, 0, report.kind, xname, "value", xt, yt)
    for k, (name, c) in enumerate(cols):
        color = _LINE_COLORS[k % len(_LINE_COLORS)]
        pts = [f"{_num(xt(x))},{_num(yt(y))}" for x, y in zip(xs, c)
               if math.isfinite(y) and (not ylog or y > 0)]
        if pts:
            body.append(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" '
                        f'points="{" ".join(pts)}"/>')
        ly = _PAD_T + 14 + 13 * k
        body.append(f'<line x1="{_W - 150}" y1="{ly}" x2="{_W - 134}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{_W - 130}" y="{ly + 3}" font-size="9">{escape(name)}</text>')
    return _W, _H, body


def _heatmaps(report):
    (yname, ys), (xname, xs) = report.axes
    body = []
    cols = list(report.columns.items())
    for k, (name, c) in enumerate(cols):
        x0 = k * _W
        log = _use_log([c])
        vals = np.where(c > 0, np.log10(np.where(c > 0, c, 1)), np.nan) if log else c
        finite = vals[np.isfinite(vals)]
        lo, hi = (finite.min(), finite.max()) if len(finite) else (0.0, 1.0)
        span = hi - lo if hi > lo else 1.0
        xt = _Transform(0, len(xs), x0 + _PAD_L, x0 + _W - _PAD_R, False)
        yt = _Transform(0, len(ys), _H - _PAD_B, _PAD_T, False)
        title = f"{name} ({'log10, ' if log else ''}{_label(lo)} .. {_label(hi)})"
        body += [
            f'<text x="{x0 + _W / 2}" y="18" text-anchor="middle" font-size="12">{escape(title)}</text>',
            f'<text x="{x0 + (_W + _PAD_L - _PAD_R) / 2}" y="{_H - 6}" text-anchor="middle" '
            f'font-size="11">{escape(xname)}</text>',
            f'<text x="{x0 + 12}" y="{_H / 2}" text-anchor="middle" font-size="11" '
            f'transform="rotate(-90 {x0 + 12} {_H / 2})">{escape(yname)}</text>',
        ]
        cw = xt(1) - xt(0)
        ch = yt(0) - yt(1)
        for i in range(len(ys)):
            for j in range(len(xs)):
                u = (vals[i, j] - lo) / span
                body.append(f'<rect class="cell" x="{_num(xt(j))}" y="{_num(yt(i + 1))}" '
                            f'width="{_num(cw + 0.01)}" height="{_num(ch + 0.01)}" fill="{_color(u)}"/>')
        for j in _tick_index(len(xs)):
            body.append(f'<text x="{_num(xt(j + 0.5))}" y="{_H - _PAD_B + 14}" text-anchor="middle" '
                        f'font-size="9">{_label(xs[j])}</text>')
        for i in _tick_index(len(ys)):
            body.append(f'<text x="{x0 + _PAD_L - 4}" y="{_num(yt(i + 0.5) + 3)}" text-anchor="end" '
                        f'font-size="9">{_label(ys[i])}</text>')
    return _W * max(len(cols), 1), _H, body


def _tick_index(n, most=6):
    if n == 0:
        return []
    step = max(1, math.ceil(n / most))
    return list(range(0, n, step))


def to_svg(report):
    ndim = len(report.axes)
    if ndim == 1:
        w, h, body = _line_plot(report)
    elif ndim == 2:
        w, h, body = _heatmaps(report)
    else:
        w, h = _W, 60
        body = [f'<text x="10" y="30" font-size="12">{escape(report.kind)}: '
                f'no plot for {ndim}-axis reports</text>']
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}" font-family="sans-serif">')
    return "\n".join([head, f'<rect width="{w}" height="{h}" fill="white"/>', *body, "</svg>"]) + "\n"
