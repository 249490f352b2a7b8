"""Fitting targets and the RMSE losses that compare simulated and measured data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BiasMetadata:
    """Bias conditions attached to an S-parameter measurement (all optional)."""

    vds: float | None = None
    id: float | None = None
    temperature: float | None = None
    vgs: float | None = None

    def __post_init__(self):
        for name in ("vds", "id", "temperature", "vgs"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"bias {name} must be finite, got {v}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("vgs", "vds", "id", "temperature")}


@dataclass(frozen=True)
class IVDataset:
    """Rows of (vgs, vds, id) in SI units."""

    vgs: np.ndarray
    vds: np.ndarray
    id: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=np.float64)) for a in (self.vgs, self.vds, self.id)]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape) or arrs[0].ndim != 1:
            raise ValueError("vgs, vds and id must be 1-D arrays of equal length")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValueError("IV dataset values must be finite")
        for name, a in zip(("vgs", "vds", "id"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_rows(cls, rows) -> "IVDataset":
        rows = list(rows)
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        a = np.asarray(rows, dtype=np.float64)
        return cls(a[:, 0], a[:, 1], a[:, 2])

    @classmethod
    def empty(cls) -> "IVDataset":
        return cls.from_rows([])

    def __len__(self):
        return self.vgs.shape[0]

    @property
    def rows(self) -> list[tuple[float, float, float]]:
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.vgs, self.vds, self.id)]

    def with_current(self, current) -> "IVDataset":
        return IVDataset(self.vgs, self.vds, current)

    def same_grid(self, other: "IVDataset") -> bool:
        return (len(self) == len(other)
                and np.allclose(self.vgs, other.vgs, rtol=1e-12, atol=0.0)
                and np.allclose(self.vds, other.vds, rtol=1e-12, atol=0.0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vgs", "vds", "id"])
            for row in self.rows:
                w.writerow([repr(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "IVDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = [h.strip().lower() for h in next(reader, [])]
            if header[:3] != ["vgs", "vds", "id"]:
                raise ValueError(f"{path}: expected header vgs,vds,id, got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or not "".join(row).strip():
                    continue
                try:
                    rows.append([float(v) for v in row[:3]])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
        return cls.from_rows(rows)


S_ENTRIES = ("s11", "s12", "s21", "s22")
_ENTRY_INDEX = {"s11": (0, 0), "s12": (0, 1), "s21": (1, 0), "s22": (1, 1)}


@dataclass(frozen=True)
class SParamDataset:
    """Per-frequency 2x2 S-matrices; ``mask[k, i, j]`` is True where data is present."""

    freqs: np.ndarray
    s: np.ndarray
    mask: np.ndarray = None
    bias: BiasMetadata = field(default_factory=BiasMetadata)
    z0: float = 50.0

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs, dtype=np.float64))
        s = np.asarray(self.s, dtype=np.complex128).reshape(-1, 2, 2)
        mask = np.ones(s.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool).reshape(s.shape)
        if f.ndim != 1 or f.shape[0] != s.shape[0]:
            raise ValueError("need one 2x2 matrix per frequency")
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be positive and strictly ascending")
        if not np.all(np.isfinite(s[mask])):
            raise ValueError("S-parameters must be finite")
        s = np.where(mask, s, 0.0)
        if self.z0 <= 0:
            raise ValueError("reference impedance must be > 0")
        for name, a in (("freqs", f), ("s", s), ("mask", mask)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.freqs.shape[0]

    def same_grid(self, other: "SParamDataset") -> bool:
        return len(self) == len(other) and np.allclose(self.freqs, other.freqs, rtol=1e-12, atol=0.0)

    def magnitudes(self) -> np.ndarray:
        """Entrywise |S| over present entries."""
        return np.abs(self.s[self.mask])

    @staticmethod
    def entry_index(name: str) -> tuple[int, int]:
        return _ENTRY_INDEX[name.lower()]


def _root_mean_square(a: np.ndarray) -> float:
    with np.errstate(over="ignore", under="ignore"):
        out = math.sqrt(float(np.mean(a * a)))
    if out == 0.0 or not math.isfinite(out):
        # squares under- or overflowed; rescale by the largest entry
        m = float(np.max(a))
        if m == 0.0 or not math.isfinite(m):
            return m
        out = m * math.sqrt(float(np.mean((a / m) ** 2)))
    return out


def rmse_iv(sim: IVDataset, meas: IVDataset) -> float:
    if not sim.same_grid(meas):
        raise GridMismatchError("simulated and measured IV grids differ")
    if len(meas) == 0:
        raise ValueError("empty IV dataset")
    return _root_mean_square(np.abs(sim.id - meas.id))


def rmse_s(sim: SParamDataset, meas: SParamDataset) -> float:
    """Root of the frequency-mean squared Frobenius error over present entries."""
    if not sim.same_grid(meas):
        raise GridMismatchError("simulated and measured frequency grids differ")
    if len(meas) == 0:
        raise ValueError("empty S-parameter dataset")
    both = sim.mask & meas.mask
    d = np.abs(np.where(both, sim.s - meas.s, 0.0))
    with np.errstate(over="ignore", under="ignore"):
        out = math.sqrt(float(np.mean(np.sum(d * d, axis=(1, 2)))))
    if out == 0.0 or not math.isfinite(out):
        # mean of the 4-entry sums is 4x the mean over all entries
        out = 2.0 * _root_mean_square(d)
    return out


def nrmse_percent(rmse: float, meas_values) -> float:
    """``100 * rmse / (max - min)`` of the measured scalars (complex -> modulus)."""
    v = np.asarray(meas_values)
    if np.iscomplexobj(v):
        v = np.abs(v)
    v = v.astype(np.float64).ravel()
    if v.size == 0:
        raise ValueError("no measured values")
    span = float(v.max() - v.min())
    if not span > 0:
        raise ValueError("measured values have zero range")
    return 100.0 * rmse / span


def iv_nrmse_percent(sim: IVDataset, meas: IVDataset) -> float:
    return nrmse_percent(rmse_iv(sim, meas), meas.id)


def s_nrmse_percent(sim: SParamDataset, meas: SParamDataset) -> float:
    return nrmse_percent(rmse_s(sim, meas), meas.magnitudes())
