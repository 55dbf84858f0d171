"""Deterministic SVG figures: band topomap panels and per-fold score bars.

Everything is written with fixed-precision coordinates so identical inputs
give byte-identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

# diverging blue-white-red ramp, sampled at five stops
_RAMP = np.array(
    [
        [33, 102, 172],
        [146, 197, 222],
        [247, 247, 247],
        [244, 165, 130],
        [178, 24, 43],
    ],
    dtype=float,
)


def _f(v: float) -> str:
    return f"{v:.2f}"


def _color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    r, g, b = (int(round(v)) for v in c)
    return f"#{r:02x}{g:02x}{b:02x}"


def _doc(width, height, body) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_f(width)} {_f(height)}" '
        f'width="{_f(width)}" height="{_f(height)}" font-family="sans-serif">\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _text(x, y, s, size=11, anchor="middle", extra=""):
    return f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'


def topomap_svg(pixels: np.ndarray, mask: np.ndarray, band_names, title: str = "", cell: float = 6.0) -> str:
    """One panel per band; colour limits are symmetric about zero per panel.

    ``pixels`` is W x H x bands with x along the first axis; y is drawn
    upwards so the apex-centred projection keeps its orientation.
    """
    w, h, nb = pixels.shape
    pad, top = 10.0, 30.0
    pw, ph = w * cell, h * cell
    width = pad + nb * (pw + pad)
    height = top + ph + 28.0
    body = [f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>']
    if title:
        body.append(_text(width / 2, 16, title, 12))
    for b in range(nb):
        x0 = pad + b * (pw + pad)
        plane = pixels[..., b]
        lim = float(np.max(np.abs(plane[mask]))) if mask.any() else 0.0
        lim = lim or 1.0
        body.append(f'<g id="band-{escape(str(band_names[b]))}">')
        for i in range(w):
            for j in range(h):
                if not mask[i, j]:
                    continue
                fill = _color(0.5 + 0.5 * plane[i, j] / lim)
                y = top + (h - 1 - j) * cell
                body.append(f'<rect x="{_f(x0 + i * cell)}" y="{_f(y)}" width="{_f(cell)}" height="{_f(cell)}" fill="{fill}"/>')
        body.append(f'<rect x="{_f(x0)}" y="{_f(top)}" width="{_f(pw)}" height="{_f(ph)}" fill="none" stroke="#999999"/>')
        body.append(_text(x0 + pw / 2, top + ph + 16, band_names[b]))
        body.append("</g>")
    return _doc(width, height, body)


def fold_bars_svg(
    values,
    labels,
    mean: float,
    ci95,
    chance: float,
    title: str = "",
    ylabel: str = "accuracy",
) -> str:
    """Bar per fold or held-out group with a dotted mean line, a gray 95% CI
    band and a dashed chance line; the y axis spans [0, 1]."""
    values = [float(v) for v in values]
    n = len(values)
    left, right, top, bottom = 50.0, 20.0, 30.0, 40.0
    bar = 18.0 if n <= 30 else 8.0
    gap = bar * 0.4
    pw = max(n * (bar + gap) + gap, 160.0)
    ph = 200.0
    width, height = left + pw + right, top + ph + bottom

    def y(v):
        return top + ph * (1.0 - min(max(v, 0.0), 1.0))

    body = [f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>']
    if title:
        body.append(_text(width / 2, 16, title, 12))
    lo, hi = ci95
    body.append(f'<rect class="ci95" x="{_f(left)}" y="{_f(y(hi))}" width="{_f(pw)}" height="{_f(y(lo) - y(hi))}" fill="#cccccc" fill-opacity="0.6"/>')
    for k, v in enumerate(values):
        x = left + gap + k * (bar + gap)
        body.append(f'<rect class="bar" x="{_f(x)}" y="{_f(y(v))}" width="{_f(bar)}" height="{_f(y(0) - y(v))}" fill="#4c72b0"/>')
        body.append(_text(x + bar / 2, top + ph + 12, labels[k], 8))
    body.append(f'<line class="mean" x1="{_f(left)}" y1="{_f(y(mean))}" x2="{_f(left + pw)}" y2="{_f(y(mean))}" stroke="#000000" stroke-dasharray="2,2"/>')
    body.append(f'<line class="chance" x1="{_f(left)}" y1="{_f(y(chance))}" x2="{_f(left + pw)}" y2="{_f(y(chance))}" stroke="#c44e52" stroke-dasharray="6,3"/>')
    # axes and ticks
    body.append(f'<line x1="{_f(left)}" y1="{_f(top)}" x2="{_f(left)}" y2="{_f(top + ph)}" stroke="#000000"/>')
    body.append(f'<line x1="{_f(left)}" y1="{_f(top + ph)}" x2="{_f(left + pw)}" y2="{_f(top + ph)}" stroke="#000000"/>')
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        body.append(f'<line x1="{_f(left - 4)}" y1="{_f(y(t))}" x2="{_f(left)}" y2="{_f(y(t))}" stroke="#000000"/>')
        body.append(_text(left - 6, y(t) + 3, f"{t:.2f}", 9, "end"))
    body.append(_text(14, top + ph / 2, ylabel, 10, "middle", f' transform="rotate(-90 14 {_f(top + ph / 2)})"'))
    body.append(_text(left + pw, top - 4, f"mean {mean:.3f}, chance {chance:.3f}", 9, "end"))
    return _doc(width, height, body)
