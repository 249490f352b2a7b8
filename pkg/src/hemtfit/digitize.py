"""Chart digitization: pixel/physical calibration, axis detection, curve tracing
and label matching for clean synthetic I-V rasters.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from . import _kernels
from .objective import IVDataset

MIN_COMPONENT_PIXELS = 30
MAX_GAP_COLUMNS = 5
AXIS_TOLERANCE_DEG = 5
DARK_LEVEL = 128
SATURATION_LEVEL = 96
N_RESAMPLE = 100


class DigitizeError(ValueError):
    pass


class AxisDetectionError(DigitizeError):
    pass


class NoCurvesError(DigitizeError):
    pass


@dataclass(frozen=True)
class CalibrationPoint:
    axis: str
    pixel: float
    value: float

    def __post_init__(self):
        axis = str(self.axis).lower()
        if axis not in ("x", "y"):
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")
        object.__setattr__(self, "axis", axis)
        if not (math.isfinite(self.pixel) and math.isfinite(self.value)):
            raise ValueError("calibration point must be finite")


@dataclass(frozen=True)
class AxisModel:
    """``value = alpha * pixel + beta`` (linear) or ``10 ** (alpha * pixel + beta)`` (log10)."""

    scale: str
    alpha: float
    beta: float

    def __post_init__(self):
        if self.scale not in ("linear", "log10"):
            raise ValueError(f"unknown axis scale {self.scale!r}")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)) or self.alpha == 0:
            raise ValueError("axis needs finite alpha != 0 and finite beta")

    def to_value(self, pixel):
        lin = self.alpha * np.asarray(pixel, dtype=np.float64) + self.beta
        return 10.0 ** lin if self.scale == "log10" else lin

    def to_pixel(self, value):
        v = np.asarray(value, dtype=np.float64)
        if self.scale == "log10":
            v = np.log10(v)
        return (v - self.beta) / self.alpha


def fit_axis(points: Sequence[CalibrationPoint], scale: str = "linear") -> AxisModel:
    """Least-squares (alpha, beta) from calibration points along one axis."""
    if len(points) < 2:
        raise DigitizeError("need at least 2 calibration points per axis")
    px = np.array([p.pixel for p in points], dtype=np.float64)
    val = np.array([p.value for p in points], dtype=np.float64)
    if np.unique(px).size < 2:
        raise DigitizeError("calibration pixels coincide")
    if scale == "log10":
        if np.any(val <= 0):
            raise DigitizeError("log axis calibration values must be > 0")
        val = np.log10(val)
    elif scale != "linear":
        raise ValueError(f"unknown axis scale {scale!r}")
    a = np.column_stack([px, np.ones_like(px)])
    (alpha, beta), *_ = np.linalg.lstsq(a, val, rcond=None)
    return AxisModel(scale, float(alpha), float(beta))


def axis_residual(axis: AxisModel, points: Sequence[CalibrationPoint]) -> float:
    """Largest relative error of the fitted axis on its own calibration points.

    Log axes use per-point relative error; linear axes are relative to the
    largest calibration magnitude so a point at zero stays well defined.
    """
    px = np.array([p.pixel for p in points], dtype=np.float64)
    val = np.array([p.value for p in points], dtype=np.float64)
    err = np.abs(axis.to_value(px) - val)
    if axis.scale == "log10":
        return float(np.max(err / val))
    scale = float(np.max(np.abs(val)))
    return float(np.max(err) / scale) if scale > 0 else float(np.max(err))


def map_pixel(x_axis: AxisModel, y_axis: AxisModel, p) -> tuple[float, float]:
    return float(x_axis.to_value(p[0])), float(y_axis.to_value(p[1]))


# ---------------------------------------------------------------------------
# Raster handling
# ---------------------------------------------------------------------------

def load_raster(path) -> np.ndarray:
    """8-bit RGB array (H, W, 3) from an image file."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def _as_rgb(raster) -> np.ndarray:
    a = np.asarray(raster)
    if a.ndim != 3 or a.shape[2] < 3:
        raise DigitizeError("raster must be an RGB array (H, W, 3)")
    return a[..., :3].astype(np.int16)


def binarize(raster) -> np.ndarray:
    """True where a pixel is dark and unsaturated (axis ink)."""
    rgb = _as_rgb(raster)
    return rgb.max(axis=2) < DARK_LEVEL


class AxisLine(NamedTuple):
    rho: float
    theta_deg: float
    votes: int


class AxesDetection(NamedTuple):
    x_axis_line: AxisLine
    y_axis_line: AxisLine
    origin: tuple[float, float]


def detect_axes(binary_image, backend=None) -> AxesDetection:
    """Strongest near-horizontal and near-vertical Hough lines and their crossing.

    Lines are ``x cos(theta) + y sin(theta) = rho``; theta near 0 is a vertical
    (y) axis and theta near 90 a horizontal (x) axis.
    """
    mask = np.asarray(binary_image, dtype=bool)
    if mask.ndim != 2:
        raise AxisDetectionError("binary image must be 2-D")
    thetas = np.arange(-89, 91)
    acc, diag = _kernels.hough_accumulate(mask, thetas, backend)
    threshold = 0.5 * min(mask.shape)

    def strongest(centre):
        cols = np.flatnonzero(np.abs(thetas - centre) <= AXIS_TOLERANCE_DEG)
        if centre == 90:
            cols = np.concatenate([cols, np.flatnonzero(thetas <= -90 + AXIS_TOLERANCE_DEG)])
        sub = acc[:, cols]
        r, c = np.unravel_index(int(np.argmax(sub)), sub.shape)
        votes = int(sub[r, c])
        if votes < threshold:
            raise AxisDetectionError(
                f"no {'horizontal' if centre == 90 else 'vertical'} axis line above {threshold:g} votes")
        return AxisLine(float(r - diag), float(thetas[cols[c]]), votes)

    y_line = strongest(0)
    x_line = strongest(90)
    a = np.array([[math.cos(math.radians(l.theta_deg)), math.sin(math.radians(l.theta_deg))]
                  for l in (y_line, x_line)])
    ox, oy = np.linalg.solve(a, [y_line.rho, x_line.rho])
    return AxesDetection(x_line, y_line, (float(ox), float(oy)))


@dataclass(frozen=True)
class CurveTrace:
    """Pixels (N, 2) as (px, py) integer pairs belonging to one curve."""

    pixels: np.ndarray
    color_key: int = -1

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if p.shape[0] == 0:
            raise ValueError("a curve trace needs at least one pixel")
        if np.any(p < 0):
            raise ValueError("pixel coordinates must be nonnegative")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    def centerline(self, max_gap: int = MAX_GAP_COLUMNS) -> tuple[np.ndarray, np.ndarray]:
        """Per-column vertical centroid; gaps of at most ``max_gap`` columns are interpolated."""
        cols, inv = np.unique(self.pixels[:, 0], return_inverse=True)
        ys = np.bincount(inv, weights=self.pixels[:, 1]) / np.bincount(inv)
        xs_out = [cols.astype(np.float64)]
        for a, b in zip(cols[:-1], cols[1:]):
            if 1 < b - a <= max_gap + 1:
                xs_out.append(np.arange(a + 1, b, dtype=np.float64))
        xs = np.sort(np.concatenate(xs_out))
        return xs, np.interp(xs, cols, ys)


def trace_curves(raster, min_pixels: int = MIN_COMPONENT_PIXELS) -> list[CurveTrace]:
    """Colour-segment a raster and return one trace per large connected component.

    Saturated pixels are keyed by which RGB channels exceed mid level, so each
    of the six primary/secondary hues becomes its own layer.
    """
    rgb = _as_rgb(raster)
    sat = (rgb.max(axis=2) - rgb.min(axis=2)) >= SATURATION_LEVEL
    bits = rgb > 127
    key = bits[..., 0] * 4 + bits[..., 1] * 2 + bits[..., 2] * 1
    structure = np.ones((3, 3), dtype=bool)
    traces = []
    for k in range(1, 7):
        layer = sat & (key == k)
        if not layer.any():
            continue
        labels, n = ndimage.label(layer, structure=structure)
        sizes = np.bincount(labels.ravel())
        for comp in range(1, n + 1):
            if sizes[comp] >= min_pixels:
                ys, xs = np.nonzero(labels == comp)
                traces.append(CurveTrace(np.column_stack([xs, ys]), k))
    if not traces:
        raise NoCurvesError(f"no coloured component with >= {min_pixels} pixels")
    traces.sort(key=lambda t: (int(t.pixels[:, 0].min()), float(t.pixels[:, 1].mean())))
    return traces


# ---------------------------------------------------------------------------
# Labels
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(r"([+\-−]?\d+(?:\.\d*)?(?:[eE][+\-]?\d+)?|[+\-−]?\.\d+)\s*(m?)V?\s*$")


def parse_label_value(text: str) -> float:
    """Volts from label text such as ``V_gs=1.0V`` or ``Vgs = -400 mV``."""
    rhs = text.split("=")[-1].strip()
    m = _LABEL_RE.search(rhs)
    if m is None:
        raise ValueError(f"cannot parse a voltage from label {text!r}")
    v = float(m.group(1).replace("−", "-"))
    return v * 1e-3 if m.group(2) == "m" else v


@dataclass(frozen=True)
class CurveLabel:
    text: str
    parsed_value: float
    anchor: tuple[float, float]

    def __post_init__(self):
        if not math.isfinite(self.parsed_value):
            raise ValueError("label value must be finite")

    @classmethod
    def from_text(cls, text: str, anchor) -> "CurveLabel":
        return cls(text, parse_label_value(text), (float(anchor[0]), float(anchor[1])))


def label_distance(label: CurveLabel, trace: CurveTrace) -> float:
    d = trace.pixels - np.asarray(label.anchor, dtype=np.float64)
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


def match_labels(labels: Sequence[CurveLabel], traces: Sequence[CurveTrace]):
    """Greedy nearest assignment; returns ``(matches, unmatched_labels)``.

    ``matches`` holds ``(label_index, trace_index)`` pairs.  Pairs are taken
    in ascending distance with ties going to the smaller trace index, and
    each label and trace is used at most once.
    """
    pairs = sorted((label_distance(lab, tr), ti, li)
                   for li, lab in enumerate(labels) for ti, tr in enumerate(traces))
    used_l, used_t, matches = set(), set(), []
    for _, ti, li in pairs:
        if li in used_l or ti in used_t:
            continue
        used_l.add(li)
        used_t.add(ti)
        matches.append((li, ti))
    matches.sort()
    unmatched = [li for li in range(len(labels)) if li not in used_l]
    return matches, unmatched


# ---------------------------------------------------------------------------
# Composition
# ---------------------------------------------------------------------------

@dataclass
class DigitizedChart:
    x_axis: AxisModel
    y_axis: AxisModel
    curves: list = field(default_factory=list)  # (vgs, (N, 2) array of x_phys, y_phys)
    warnings: list = field(default_factory=list)

    def to_iv_dataset(self) -> IVDataset:
        rows = [(vgs, x, y) for vgs, pts in sorted(self.curves, key=lambda c: c[0]) for x, y in pts]
        return IVDataset.from_rows(rows)


def digitize(raster, calibration: Sequence[CalibrationPoint], labels: Sequence[CurveLabel],
             x_scale: str = "linear", y_scale: str = "linear", n_points: int = N_RESAMPLE,
             backend=None) -> DigitizedChart:
    """Raster plus calibration and labels to physical curves resampled on a uniform x grid."""
    x_axis = fit_axis([c for c in calibration if c.axis == "x"], x_scale)
    y_axis = fit_axis([c for c in calibration if c.axis == "y"], y_scale)
    chart = DigitizedChart(x_axis, y_axis)
    detect_axes(binarize(raster), backend)
    if not labels:
        chart.warnings.append("no curve labels supplied; nothing to digitize")
        return chart
    traces = trace_curves(raster)
    matches, unmatched = match_labels(labels, traces)
    for li in unmatched:
        chart.warnings.append(f"label {labels[li].text!r} matched no curve")
    used = {ti for _, ti in matches}
    for ti in range(len(traces)):
        if ti not in used:
            chart.warnings.append(f"curve {ti} has no label and was dropped")
    for li, ti in matches:
        cx, cy = traces[ti].centerline()
        if cx.size < 2:
            chart.warnings.append(f"curve for {labels[li].text!r} spans one column and was dropped")
            continue
        x = x_axis.to_value(cx)
        y = y_axis.to_value(cy)
        order = np.argsort(x)
        x, y = x[order], y[order]
        grid = np.linspace(x[0], x[-1], n_points)
        # resample points inside an unbridged gap (> MAX_GAP_COLUMNS) are dropped
        gpx = x_axis.to_pixel(grid)
        k = np.clip(np.searchsorted(cx, gpx), 1, cx.size - 1)
        keep = (cx[k] - cx[k - 1]) <= 1.0 + 1e-9
        if not keep.all():
            chart.warnings.append(f"curve for {labels[li].text!r}: {int((~keep).sum())} points fall in "
                                  f"gaps wider than {MAX_GAP_COLUMNS} columns and were dropped")
        grid = grid[keep]
        chart.curves.append((labels[li].parsed_value, np.column_stack([grid, np.interp(grid, x, y)])))
    chart.curves.sort(key=lambda c: c[0])
    return chart


def load_calibration(path) -> list[CalibrationPoint]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return [CalibrationPoint(d["axis"], float(d["pixel"]), float(d["value"])) for d in data]


def load_labels(path) -> list[CurveLabel]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    out = []
    for d in data:
        value = d.get("value")
        value = parse_label_value(d["text"]) if value is None else float(value)
        out.append(CurveLabel(d["text"], value, (float(d["px"]), float(d["py"]))))
    return out


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------

CURVE_COLORS = ((255, 0, 0), (0, 160, 0), (0, 0, 255), (255, 0, 255), (0, 160, 160), (200, 160, 0))


class RenderedChart(NamedTuple):
    raster: np.ndarray
    calibration: list
    labels: list
    origin: tuple[int, int]


def render_chart(iv: IVDataset, size=(640, 480), margin=(60, 40, 80, 50), x_range=None, y_range=None,
                 line_width: int = 3, upsample: int = 8) -> RenderedChart:
    """Draw an I-V family (one colour per vgs) with black axes onto a white canvas.

    ``margin`` is (left, top, right, bottom) in pixels.  Calibration points are
    the exact pixel positions of the plot-box corners.  Curves are drawn as
    ``upsample``-times densified polylines so the stroke follows the data.
    """
    from PIL import Image, ImageDraw

    w, h = size
    left, top, right, bottom = margin
    x0, x1 = x_range or (float(iv.vds.min()), float(iv.vds.max()))
    if y_range is None:
        lo, hi = float(iv.id.min()), float(iv.id.max())
        pad = 0.05 * (hi - lo)
        y_range = (lo - pad, hi + pad)
    y0, y1 = y_range
    px0, px1 = left, w - right
    py0, py1 = h - bottom, top
    ax = (px1 - px0) / (x1 - x0)
    ay = (py1 - py0) / (y1 - y0)
    img = Image.new("RGB", (w, h), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.line([(px0, py0), (px1, py0)], fill=(0, 0, 0), width=1)
    draw.line([(px0, py0), (px0, py1)], fill=(0, 0, 0), width=1)
    labels = []
    for i, vgs in enumerate(np.unique(iv.vgs)):
        sel = iv.vgs == vgs
        vds, cur = iv.vds[sel], iv.id[sel]
        dense = np.linspace(vds[0], vds[-1], (vds.size - 1) * upsample + 1)
        yy = np.interp(dense, vds, cur)
        pts = list(zip(px0 + ax * (dense - x0), py0 + ay * (yy - y0)))
        draw.line(pts, fill=CURVE_COLORS[i % len(CURVE_COLORS)], width=line_width)
        end = pts[-1]
        labels.append(CurveLabel(f"V_gs={vgs:g}V", float(vgs), (end[0] + 10.0, end[1])))
    cal = [CalibrationPoint("x", px0, x0), CalibrationPoint("x", px1, x1),
           CalibrationPoint("y", py0, y0), CalibrationPoint("y", py1, y1)]
    return RenderedChart(np.asarray(img, dtype=np.uint8), cal, labels, (px0, py0))
