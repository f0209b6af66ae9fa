"""Static SVG figures written directly as text."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .friction import FrictionParams

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str
    dashed: bool = False
    points: bool = False


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list[Series] = field(default_factory=list)
    equal_aspect: bool = False


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    if span <= 0:
        return np.array([lo])
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _panel_svg(p: Panel, x0: float, y0: float, w: float, h: float) -> list[str]:
    xs = np.concatenate([s.x for s in p.series]) if p.series else np.zeros(1)
    ys = np.concatenate([s.y for s in p.series]) if p.series else np.zeros(1)
    xs, ys = xs[np.isfinite(xs)], ys[np.isfinite(ys)]
    xlo, xhi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    ylo, yhi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 1, xhi + 1
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1, yhi + 1
    padx, pady = 0.05 * (xhi - xlo), 0.08 * (yhi - ylo)
    xlo, xhi, ylo, yhi = xlo - padx, xhi + padx, ylo - pady, yhi + pady
    L, T, R, B = x0 + 60, y0 + 30, x0 + w - 15, y0 + h - 45
    if p.equal_aspect:
        sx = (R - L) / (xhi - xlo)
        sy = (B - T) / (yhi - ylo)
        s = min(sx, sy)
        cx, cy = 0.5 * (xlo + xhi), 0.5 * (ylo + yhi)
        xlo, xhi = cx - 0.5 * (R - L) / s, cx + 0.5 * (R - L) / s
        ylo, yhi = cy - 0.5 * (B - T) / s, cy + 0.5 * (B - T) / s

    def X(v):
        return L + (v - xlo) / (xhi - xlo) * (R - L)

    def Y(v):
        return B - (v - ylo) / (yhi - ylo) * (B - T)

    out = [f'<rect x="{L:.1f}" y="{T:.1f}" width="{R - L:.1f}" height="{B - T:.1f}" fill="none" stroke="#333"/>',
           f'<text x="{(L + R) / 2:.1f}" y="{y0 + 18:.1f}" text-anchor="middle" font-size="14">{escape(p.title)}</text>',
           f'<text x="{(L + R) / 2:.1f}" y="{B + 36:.1f}" text-anchor="middle" font-size="12">{escape(p.xlabel)}</text>',
           f'<text x="{x0 + 14:.1f}" y="{(T + B) / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 {x0 + 14:.1f} {(T + B) / 2:.1f})">{escape(p.ylabel)}</text>']
    for t in _ticks(xlo, xhi):
        out.append(f'<line x1="{X(t):.1f}" y1="{B:.1f}" x2="{X(t):.1f}" y2="{B + 4:.1f}" stroke="#333"/>')
        out.append(f'<text x="{X(t):.1f}" y="{B + 16:.1f}" text-anchor="middle" font-size="10">{_fmt(t)}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<line x1="{L - 4:.1f}" y1="{Y(t):.1f}" x2="{L:.1f}" y2="{Y(t):.1f}" stroke="#333"/>')
        out.append(f'<text x="{L - 6:.1f}" y="{Y(t) + 3:.1f}" text-anchor="end" font-size="10">{_fmt(t)}</text>')
    for k, s in enumerate(p.series):
        col = COLORS[k % len(COLORS)]
        ok = np.isfinite(s.x) & np.isfinite(s.y)
        if s.points:
            for a, b in zip(s.x[ok], s.y[ok]):
                out.append(f'<circle cx="{X(a):.1f}" cy="{Y(b):.1f}" r="3.5" fill="{col}"/>')
        else:
            pts = " ".join(f"{X(a):.1f},{Y(b):.1f}" for a, b in zip(s.x[ok], s.y[ok]))
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.6"{dash}/>')
        ly = T + 14 + 14 * k
        out.append(f'<text x="{R - 6:.1f}" y="{ly:.1f}" text-anchor="end" font-size="10" fill="{col}">{escape(s.label)}</text>')
    return out


def figure_svg(panels: list[Panel], width: float = 420, height: float = 320) -> str:
    W = width * len(panels)
    body = []
    for i, p in enumerate(panels):
        body += _panel_svg(p, i * width, 0, width, height)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {W:.0f} {height:.0f}" font-family="sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n")


def _ellipse(a: float, b: float, n: int = 181):
    th = np.linspace(0, 2 * np.pi, n)
    return a * np.cos(th), b * np.sin(th)


def limit_surface_figure(points: list[tuple[str, float, float, float]], fp: FrictionParams) -> str:
    """Tangential force against torsional moment, one panel per contact.

    ``points`` holds ``(label, f_n, |f_t|, tau_n)``.  Each panel draws the
    limit-surface section at the contact's normal load, with and without the
    safety margin, and the commanded point.
    """
    panels = []
    for label, f_n, ft, tau in points:
        load = abs(f_n)
        p = Panel(f"{label}: |f_n| = {load:.2f} N", "|f_t| [N]", "tau_n [N m]")
        a, b = _ellipse(fp.mu * load, fp.mu * load * fp.R_eff)
        p.series.append(Series(a, b, "nominal"))
        k = 1.0 - fp.r_s
        p.series.append(Series(k * a, k * b, f"r_s = {fp.r_s:g}", dashed=True))
        p.series.append(Series(np.array([ft]), np.array([tau]), "commanded", points=True))
        panels.append(p)
    return figure_svg(panels)


def friction_cone_figure(points: list[tuple[str, float, float]], fp: FrictionParams) -> str:
    """Normal load against tangential force with the nominal and contracted cone edges."""
    loads = [abs(fn) for _, fn, _ in points] or [1.0]
    top = 1.3 * max(loads)
    fn = np.array([0.0, top])
    p = Panel("friction cone", "|f_n| [N]", "|f_t| [N]")
    p.series.append(Series(fn, fp.mu * fn, f"mu = {fp.mu:g}"))
    p.series.append(Series(fn, (1 - fp.r_s) * fp.mu * fn, "contracted", dashed=True))
    for label, f_n, ft in points:
        p.series.append(Series(np.array([abs(f_n)]), np.array([ft]), label, points=True))
    return figure_svg([p])


def env_force_figure(t, before, after) -> str:
    """Environment force magnitude over time for the nominal and refined paths."""
    p = Panel("environment contact force", "t [s]", "|F_env| [N]")
    p.series.append(Series(np.asarray(t, float), np.asarray(before, float), "nominal"))
    p.series.append(Series(np.asarray(t, float), np.asarray(after, float), "refined", dashed=True))
    return figure_svg([p])


def execution_figure(t, deviation_deg, squeeze) -> str:
    a = Panel("orientation deviation", "t [s]", "deg")
    a.series.append(Series(np.asarray(t, float), np.asarray(deviation_deg, float), "|o - o_ref|"))
    b = Panel("squeeze", "t [s]", "|f_n,L| + |f_n,R| [N]")
    b.series.append(Series(np.asarray(t, float), np.asarray(squeeze, float), "measured"))
    return figure_svg([a, b])
