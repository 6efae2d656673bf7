"""Minimal deterministic SVG writers for scatter plots and histograms."""

from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

W, H = 640, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60


def _fmt(x):
    return f"{x:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.pw = W - LEFT - RIGHT
        self.ph = H - TOP - BOTTOM

    def px(self, x):
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y):
        return TOP + self.ph - (y - self.y0) / (self.y1 - self.y0) * self.ph


def _axes(frame, title, xlabel, ylabel):
    out = [
        f'<rect x="{LEFT}" y="{TOP}" width="{frame.pw}" height="{frame.ph}" fill="none" stroke="#333"/>',
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{LEFT + frame.pw / 2:.1f}" y="{H - 15}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{TOP + frame.ph / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {TOP + frame.ph / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(frame.x0, frame.x1):
        x = frame.px(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{TOP + frame.ph}" x2="{_fmt(x)}" y2="{TOP + frame.ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{_fmt(x)}" y="{TOP + frame.ph + 18}" text-anchor="middle" font-size="10">{t:.3g}</text>')
    for t in _ticks(frame.y0, frame.y1):
        y = frame.py(t)
        out.append(f'<line x1="{LEFT - 5}" y1="{_fmt(y)}" x2="{LEFT}" y2="{_fmt(y)}" stroke="#333"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_fmt(y + 3)}" text-anchor="end" font-size="10">{t:.3g}</text>')
    return out


def _legend(names):
    out = []
    for i, name in enumerate(names):
        y = TOP + 10 + 18 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - RIGHT + 12}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 28}" y="{y + 1}" font-size="11">{escape(str(name))}</text>')
    return out


def _document(body):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif">'
    )
    return "\n".join([head, f'<rect width="{W}" height="{H}" fill="white"/>'] + body + ["</svg>", ""])


def scatter_svg(points, groups, names, title="", xlabel="", ylabel=""):
    """Scatter ``points`` (n, 2) colored by integer ``groups`` indexing ``names``."""
    points = np.asarray(points, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    pad_x = 0.05 * (np.ptp(points[:, 0]) or 1.0)
    pad_y = 0.05 * (np.ptp(points[:, 1]) or 1.0)
    frame = _Frame(
        (points[:, 0].min() - pad_x, points[:, 0].max() + pad_x),
        (points[:, 1].min() - pad_y, points[:, 1].max() + pad_y),
    )
    body = _axes(frame, title, xlabel, ylabel)
    for (x, y), g in zip(points, groups):
        color = PALETTE[g % len(PALETTE)]
        body.append(f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="2" fill="{color}" fill-opacity="0.6"/>')
    body += _legend(names)
    return _document(body)


def histogram_svg(edges, series, names, title="", xlabel="", ylabel="density"):
    """Overlaid step histograms; ``series`` holds one count array per name."""
    edges = np.asarray(edges, dtype=np.float64)
    dens = [np.asarray(s, dtype=np.float64) / max(np.sum(s), 1) for s in series]
    top = max((d.max() for d in dens if d.size), default=1.0) or 1.0
    frame = _Frame((edges[0], edges[-1]), (0.0, top * 1.05))
    body = _axes(frame, title, xlabel, ylabel)
    for i, d in enumerate(dens):
        color = PALETTE[i % len(PALETTE)]
        pts = [f"{_fmt(frame.px(edges[0]))},{_fmt(frame.py(0.0))}"]
        for lo, hi, v in zip(edges[:-1], edges[1:], d):
            pts.append(f"{_fmt(frame.px(lo))},{_fmt(frame.py(v))}")
            pts.append(f"{_fmt(frame.px(hi))},{_fmt(frame.py(v))}")
        pts.append(f"{_fmt(frame.px(edges[-1]))},{_fmt(frame.py(0.0))}")
        body.append(f'<polyline points="{" ".join(pts)}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>')
    body += _legend(names)
    return _document(body)
