"""Analytic device surrogate: DC drain current and the small-signal two-port.

The DC model is a compact square-law HEMT with a softplus effective gate
drive, mobility degradation, smoothed velocity saturation and
channel-length modulation.  Source/drain contact resistances are handled by
a damped fixed point on the internal terminal voltages.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import _kernels
from .objective import BiasMetadata, IVDataset, SParamDataset

THERMAL_VOLTAGE = _kernels.THERMAL_VOLTAGE


class EvaluationError(RuntimeError):
    """A model evaluation failed (non-convergence, singular network, ...)."""


@dataclass(frozen=True)
class DCParams:
    VOFF: float
    NFACTOR: float
    KGAIN: float
    UA: float = 0.0
    UB: float = 0.0
    DELTA: float = 2.0
    LAMBDA: float = 0.0
    RSC: float = 0.0
    RDC: float = 0.0

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("DC parameters must be finite")
        if self.NFACTOR <= 0 or self.KGAIN <= 0:
            raise ValueError("NFACTOR and KGAIN must be > 0")
        if self.DELTA < 1:
            raise ValueError("DELTA must be >= 1")
        if min(self.UA, self.UB, self.LAMBDA, self.RSC, self.RDC) < 0:
            raise ValueError("UA, UB, LAMBDA, RSC, RDC must be >= 0")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "DCParams":
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), astuple(self)))


@dataclass(frozen=True)
class SmallSignalParams:
    gm: float = 0.0
    tau: float = 0.0
    gds: float = 0.0
    Cgs: float = 0.0
    Cgd: float = 0.0
    Cds: float = 0.0
    Ri: float = 0.0
    RG: float = 0.0
    RD: float = 0.0
    RS: float = 0.0
    LG: float = 0.0
    LD: float = 0.0
    LS: float = 0.0
    CPG: float = 0.0
    CPD: float = 0.0

    def __post_init__(self):
        vals = astuple(self)
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("small-signal parameters must be finite and >= 0")

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "SmallSignalParams":
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), astuple(self)))


@dataclass(frozen=True)
class BiasPoint:
    vgs: float
    vds: float

    def __post_init__(self):
        if not (math.isfinite(self.vgs) and math.isfinite(self.vds)):
            raise ValueError("bias voltages must be finite")


@dataclass(frozen=True)
class TwoPortMatrix:
    data: np.ndarray
    kind: str
    z0: float = 50.0

    def __post_init__(self):
        m = np.asarray(self.data, dtype=np.complex128)
        if m.shape != (2, 2):
            raise ValueError("two-port matrix must be 2x2")
        if self.kind not in ("Y", "Z", "S"):
            raise ValueError(f"unknown representation {self.kind!r}")
        if not np.all(np.isfinite(m)):
            raise ValueError("two-port entries must be finite")
        if self.z0 <= 0:
            raise ValueError("z0 must be > 0")
        object.__setattr__(self, "data", m)

    def __getitem__(self, idx):
        return self.data[idx]


# ---------------------------------------------------------------------------
# DC
# ---------------------------------------------------------------------------

def dc_currents(p: DCParams, vgs, vds, backend=None) -> np.ndarray:
    """Vectorised :func:`dc_current`; raises if any point fails to converge."""
    cur, status = _kernels.dc_solve(vgs, vds, p.as_array(), backend)
    if np.any(status != _kernels.DC_OK):
        bad = int(np.flatnonzero(status != _kernels.DC_OK)[0])
        raise EvaluationError(
            f"contact-resistance fixed point failed at vgs={float(np.asarray(vgs)[bad])}, "
            f"vds={float(np.asarray(vds)[bad])} (status {int(status[bad])})")
    return cur


def dc_current(p: DCParams, bias: BiasPoint) -> float:
    return float(dc_currents(p, np.array([bias.vgs]), np.array([bias.vds]))[0])


def fixed_point_residual(p: DCParams, vgs, vds, current) -> np.ndarray:
    """Relative mismatch between ``current`` and the closed form at its own internal voltages."""
    current = np.asarray(current, dtype=np.float64)
    vgs_i = np.asarray(vgs) - current * p.RSC
    vds_i = np.asarray(vds) - current * (p.RSC + p.RDC)
    again = _kernels.dc_closed_form(vgs_i, vds_i, p.as_array()[:7])
    scale = np.maximum(np.abs(current), np.abs(again))
    return np.where(scale > 0, np.abs(again - current) / np.where(scale > 0, scale, 1.0), 0.0)


def iv_sweep(p: DCParams, vgs_list, vds_list) -> IVDataset:
    """Cartesian sweep, vgs-major then vds in the given (ascending) order."""
    vg = np.asarray(vgs_list, dtype=np.float64).ravel()
    vd = np.asarray(vds_list, dtype=np.float64).ravel()
    if vg.size == 0 or vd.size == 0:
        raise ValueError("sweep grids must be nonempty")
    vgs = np.repeat(vg, vd.size)
    vds = np.tile(vd, vg.size)
    return IVDataset(vgs, vds, dc_currents(p, vgs, vds))


def simulate_iv(p: DCParams, grid: IVDataset) -> IVDataset:
    """Evaluate the surrogate on the bias points of an existing dataset."""
    return grid.with_current(dc_currents(p, grid.vgs, grid.vds))


# ---------------------------------------------------------------------------
# Small signal
# ---------------------------------------------------------------------------

_EYE = np.eye(2, dtype=np.complex128)


def _intrinsic_y(p: SmallSignalParams, w: np.ndarray) -> np.ndarray:
    jw = 1j * w
    den = 1.0 + jw * p.Ri * p.Cgs
    ygs = jw * p.Cgs / den
    ygd = jw * p.Cgd
    y = np.empty(w.shape + (2, 2), dtype=np.complex128)
    y[..., 0, 0] = ygs + ygd
    y[..., 0, 1] = -ygd
    y[..., 1, 0] = p.gm * np.exp(-jw * p.tau) / den - ygd
    y[..., 1, 1] = p.gds + jw * p.Cds + ygd
    return y


def _embed(y: np.ndarray, p: SmallSignalParams, w: np.ndarray) -> np.ndarray:
    jw = 1j * w
    zg = p.RG + jw * p.LG
    zd = p.RD + jw * p.LD
    zs = p.RS + jw * p.LS
    out = y
    if p.RG or p.RD or p.RS or p.LG or p.LD or p.LS:
        zser = np.empty_like(y)
        zser[..., 0, 0] = zg + zs
        zser[..., 0, 1] = zs
        zser[..., 1, 0] = zs
        zser[..., 1, 1] = zd + zs
        # (Y^-1 + Zser)^-1 == (I + Y Zser)^-1 Y; avoids inverting a singular intrinsic Y
        a = _EYE + y @ zser
        _check_invertible(a, "series embedding")
        out = np.linalg.solve(a, y)
    out = out.copy()
    out[..., 0, 0] += jw * p.CPG
    out[..., 1, 1] += jw * p.CPD
    return out


def _check_invertible(a: np.ndarray, what: str) -> None:
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    scale = np.max(np.abs(a), axis=(-2, -1)) ** 2
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= 1e-14 * scale):
        raise EvaluationError(f"singular matrix during {what}")


def _y_to_s(y: np.ndarray, z0: float) -> np.ndarray:
    a = _EYE + z0 * y
    _check_invertible(a, "Y to S conversion")
    # (I - z0 Y)(I + z0 Y)^-1; the two factors commute
    return np.linalg.solve(a, _EYE - z0 * y)


def _s_to_y(s: np.ndarray, z0: float) -> np.ndarray:
    a = _EYE + s
    _check_invertible(a, "S to Y conversion")
    return np.linalg.solve(a, _EYE - s) / z0


def intrinsic_y(p: SmallSignalParams, omega: float) -> TwoPortMatrix:
    if not omega > 0:
        raise ValueError("omega must be > 0")
    return TwoPortMatrix(_intrinsic_y(p, np.asarray(omega, dtype=np.float64)), "Y")


def embed_extrinsics(y_int: TwoPortMatrix, p: SmallSignalParams, omega: float) -> TwoPortMatrix:
    if y_int.kind != "Y":
        raise ValueError("embed_extrinsics expects a Y matrix")
    return TwoPortMatrix(_embed(y_int.data, p, np.asarray(omega, dtype=np.float64)), "Y")


def y_to_s(y: TwoPortMatrix, z0: float = 50.0) -> TwoPortMatrix:
    if y.kind != "Y":
        raise ValueError("y_to_s expects a Y matrix")
    return TwoPortMatrix(_y_to_s(y.data, z0), "S", z0)


def s_to_y(s: TwoPortMatrix) -> TwoPortMatrix:
    if s.kind != "S":
        raise ValueError("s_to_y expects an S matrix")
    return TwoPortMatrix(_s_to_y(s.data, s.z0), "Y", s.z0)


def s_matrices(p: SmallSignalParams, freqs, z0: float = 50.0) -> np.ndarray:
    """(K, 2, 2) S-matrices for ascending positive frequencies in Hz."""
    f = np.asarray(freqs, dtype=np.float64).ravel()
    if f.size == 0 or np.any(f <= 0) or np.any(np.diff(f) <= 0):
        raise ValueError("frequencies must be positive and strictly ascending")
    w = 2.0 * np.pi * f
    s = _y_to_s(_embed(_intrinsic_y(p, w), p, w), z0)
    if not np.all(np.isfinite(s)):
        raise EvaluationError("non-finite S-parameters")
    return s


def s_params(p: SmallSignalParams, freqs, z0: float = 50.0, bias: BiasMetadata | None = None) -> SParamDataset:
    return SParamDataset(np.asarray(freqs, dtype=np.float64), s_matrices(p, freqs, z0),
                         bias=bias or BiasMetadata(), z0=z0)
