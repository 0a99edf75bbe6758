"""Minimal static SVG output: line charts of training curves and skeleton renders."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class Frame:
    """Linear map from a data rectangle onto a plot area, y axis pointing up."""

    def __init__(self, xlim, ylim, width=640, height=400, margin=60):
        self.xlim = self._pad(xlim)
        self.ylim = self._pad(ylim)
        self.width, self.height, self.margin = width, height, margin

    @staticmethod
    def _pad(lim):
        lo, hi = float(lim[0]), float(lim[1])
        if hi <= lo:
            span = abs(lo) * 0.05 or 1.0
            lo, hi = lo - span, hi + span
        return lo, hi

    def x(self, v):
        lo, hi = self.xlim
        return self.margin + (v - lo) / (hi - lo) * (self.width - 2 * self.margin)

    def y(self, v):
        lo, hi = self.ylim
        return self.height - self.margin - (v - lo) / (hi - lo) * (self.height - 2 * self.margin)


def _document(width, height, body, title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<title>{escape(title)}</title>\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def _axes(frame, xlabel, ylabel):
    m, w, h = frame.margin, frame.width, frame.height
    out = [f'<g class="axes" stroke="black" fill="none">'
           f'<path d="M{m},{m} V{h - m} H{w - m}"/></g>']
    ticks = [(frame.xlim[0], m, h - m + 18, "middle"), (frame.xlim[1], w - m, h - m + 18, "middle"),
             (frame.ylim[0], m - 6, h - m, "end"), (frame.ylim[1], m - 6, m + 4, "end")]
    for value, x, y, anchor in ticks:
        out.append(f'<text class="tick" x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" '
                   f'font-size="11">{value:.4g}</text>')
    out.append(f'<text x="{w / 2:.1f}" y="{h - 12}" text-anchor="middle" font-size="12">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{h / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {h / 2:.1f})">{escape(ylabel)}</text>')
    return out


def line_chart(series, title, xlabel="epoch", ylabel="loss"):
    """SVG with one polyline per ``name -> (xs, ys)`` entry; axis limits are the data extrema."""
    if not series or not any(len(xs) for xs, _ in series.values()):
        raise ValueError("nothing to plot")
    xs_all = np.concatenate([np.asarray(xs, dtype=float) for xs, _ in series.values()])
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series.values()])
    frame = Frame((xs_all.min(), xs_all.max()), (ys_all.min(), ys_all.max()))
    body = _axes(frame, xlabel, ylabel)
    for k, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{frame.x(x):.3f},{frame.y(y):.3f}" for x, y in zip(xs, ys))
        body.append(f'<polyline class="series" data-name="{escape(name)}" points="{pts}" '
                    f'fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(f'<text x="{frame.width - frame.margin + 4}" y="{frame.margin + 14 * k}" '
                    f'font-size="11" fill="{color}">{escape(name)}</text>')
    return _document(frame.width, frame.height, body, title)


def skeleton(coords, bones, title, size=400, margin=30):
    """Orthographic render of one pose onto its first two axes, one line per bone.

    Image axes follow the data: x to the right, y downward (camera convention).
    """
    xy = np.asarray(coords, dtype=float)[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    scale = (size - 2 * margin) / span
    center = (lo + hi) / 2
    px = (xy - center) * scale + size / 2
    body = []
    for k, (child, parent) in enumerate(bones):
        (x1, y1), (x2, y2) = px[parent], px[child]
        body.append(f'<line class="bone" x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                    f'stroke="{PALETTE[k % 3]}" stroke-width="3"/>')
    for x, y in px:
        body.append(f'<circle class="joint" cx="{x:.3f}" cy="{y:.3f}" r="3" fill="black"/>')
    return _document(size, size, body, title)
