"""Minimal self-contained SVG line charts (no external assets, no plotting backend)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray = None  # optional band
    hi: np.ndarray = None
    markers: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    logx: bool = False
    logy: bool = False
    series: list = field(default_factory=list)
    width: int = 640
    height: int = 420

    def add(self, label, x, y, lo=None, hi=None, markers=False):
        self.series.append(Series(label, np.asarray(x, float), np.asarray(y, float),
                                  None if lo is None else np.asarray(lo, float),
                                  None if hi is None else np.asarray(hi, float), markers))
        return self

    def _tf(self, v, log):
        v = np.asarray(v, float)
        if not log:
            return v
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)

    def render(self) -> str:
        ml, mr, mt, mb = 70, 150, 40, 50
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs, ys = [], []
        for s in self.series:
            xs.append(self._tf(s.x, self.logx))
            for arr in (s.y, s.lo, s.hi):
                if arr is not None:
                    ys.append(self._tf(arr, self.logy))
        xall = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        yall = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        xall, yall = xall[np.isfinite(xall)], yall[np.isfinite(yall)]
        x0, x1 = (xall.min(), xall.max()) if xall.size else (0.0, 1.0)
        y0, y1 = (yall.min(), yall.max()) if yall.size else (0.0, 1.0)
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5

        def px(v):
            return ml + (v - x0) / (x1 - x0) * pw

        def py(v):
            return mt + ph - (v - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'viewBox="0 0 {self.width} {self.height}" font-family="sans-serif" font-size="11">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
        for frac in np.linspace(0, 1, 5):
            xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
            xt = _fmt(10 ** xv if self.logx else xv)
            yt = _fmt(10 ** yv if self.logy else yv)
            out.append(f'<line x1="{px(xv):.1f}" y1="{mt + ph}" x2="{px(xv):.1f}" y2="{mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{px(xv):.1f}" y="{mt + ph + 16}" text-anchor="middle">{xt}</text>')
            out.append(f'<line x1="{ml - 4}" y1="{py(yv):.1f}" x2="{ml}" y2="{py(yv):.1f}" stroke="black"/>')
            out.append(f'<text x="{ml - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yt}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{self.height - 10}" text-anchor="middle">'
                   f'{escape(self.xlabel)}{" (log)" if self.logx else ""}</text>')
        out.append(f'<text transform="translate(16 {mt + ph / 2}) rotate(-90)" text-anchor="middle">'
                   f'{escape(self.ylabel)}{" (log)" if self.logy else ""}</text>')

        for i, s in enumerate(self.series):
            color = PALETTE[i % len(PALETTE)]
            X = self._tf(s.x, self.logx)
            if s.lo is not None and s.hi is not None:
                lo, hi = self._tf(s.lo, self.logy), self._tf(s.hi, self.logy)
                ok = np.isfinite(X) & np.isfinite(lo) & np.isfinite(hi)
                if ok.any():
                    pts = [f"{px(a):.1f},{py(b):.1f}" for a, b in zip(X[ok], hi[ok])]
                    pts += [f"{px(a):.1f},{py(b):.1f}" for a, b in zip(X[ok][::-1], lo[ok][::-1])]
                    out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
            Y = self._tf(s.y, self.logy)
            ok = np.isfinite(X) & np.isfinite(Y)
            if ok.any():
                pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(X[ok], Y[ok]))
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
                if s.markers:
                    out += [f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="3" fill="{color}"/>'
                            for a, b in zip(X[ok], Y[ok])]
            ly = mt + 14 + 18 * i
            out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{ml + pw + 34}" y="{ly + 4}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _fmt(v):
    if v == 0 or not math.isfinite(v):
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-2:
        return f"{v:.1e}"
    return f"{v:.3g}"
