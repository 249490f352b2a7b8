"""S-parameter ingestion: datasheet-style tables, Touchstone files and the
canonical CSV used between pipeline stages.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .objective import BiasMetadata, SParamDataset

# Touchstone 2-port order; also the column order of the canonical CSV and mask_bits
ENTRY_ORDER = ("s11", "s21", "s12", "s22")
_IDX = {"s11": (0, 0), "s21": (1, 0), "s12": (0, 1), "s22": (1, 1)}
FREQ_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
CANONICAL_HEADER = ["freq_hz"] + [f"{e}_{p}" for e in ENTRY_ORDER for p in ("re", "im")] + ["mask_bits"]


class TableParseError(ValueError):
    pass


class TouchstoneError(ValueError):
    pass


@dataclass(frozen=True)
class STableRow:
    """One frequency row; ``entries`` maps present S-parameter names to (magnitude, angle in degrees)."""

    freq: float
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.freq) and self.freq > 0):
            raise ValueError(f"frequency must be > 0, got {self.freq}")
        for name, (mag, ang) in self.entries.items():
            if name not in _IDX:
                raise ValueError(f"unknown S-parameter {name!r}")
            if not (math.isfinite(mag) and mag >= 0):
                raise ValueError(f"{name} magnitude must be >= 0, got {mag}")
            if not (math.isfinite(ang) and -360 < ang < 360):
                raise ValueError(f"{name} angle must lie in (-360, 360), got {ang}")


def polar_to_complex(mag, angle_deg):
    a = np.deg2rad(np.asarray(angle_deg, dtype=np.float64))
    z = np.asarray(mag, dtype=np.float64) * (np.cos(a) + 1j * np.sin(a))
    return complex(z) if z.ndim == 0 else z


# ---------------------------------------------------------------------------
# Delimited tables
# ---------------------------------------------------------------------------

_FREQ_RE = re.compile(r"^(?:f|freq|frequency)[\s_]*(?:\(?\s*(hz|khz|mhz|ghz)\s*\)?)?$", re.I)
_SNAME_RE = re.compile(r"^s\s*(11|12|21|22)$", re.I)
_SCOL_RE = re.compile(r"^s\s*(11|12|21|22)[\s_.]*(m|mag|magn\.?|magnitude|a|ang|angle|phase)$", re.I)
_NUM = r"([+\-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+\-]?\d+)?)"
_META = {
    "temperature": re.compile(r"\bT[a]?\s*=\s*" + _NUM, re.I),
    "vds": re.compile(r"\bV_?DS\s*=\s*" + _NUM + r"\s*V", re.I),
    "vgs": re.compile(r"\bV_?GS\s*=\s*" + _NUM + r"\s*V", re.I),
    "id": re.compile(r"\bI_?D[S]?\s*=\s*" + _NUM + r"\s*(mA|uA|A)\b", re.I),
}
_CURRENT_SCALE = {"a": 1.0, "ma": 1e-3, "ua": 1e-6}


def _norm_text(s: str) -> str:
    return s.replace("−", "-").replace("﻿", "")


def _split(line: str) -> list[str]:
    if "," in line:
        cells = line.split(",")
    elif "\t" in line:
        cells = line.split("\t")
    else:
        cells = re.sub(r"\s+\(", "(", line.strip()).split()
    return [c.strip() for c in cells]


def _is_numeric_row(cells) -> bool:
    try:
        float(cells[0])
        return True
    except (ValueError, IndexError):
        return False


def _scan_metadata(text: str, meta: dict) -> None:
    for key, rx in _META.items():
        if key in meta:
            continue
        m = rx.search(text)
        if m:
            v = float(m.group(1))
            if key == "id":
                v *= _CURRENT_SCALE[m.group(2).lower()]
            meta[key] = v


def _column_role(name: str, lineno: int, col: int):
    """('freq', scale) or (entry, 'mag'|'ang') or None for a blank column."""
    if not name:
        return None
    m = _FREQ_RE.match(name)
    if m:
        return ("freq", FREQ_UNITS[(m.group(1) or "hz").lower()])
    m = _SCOL_RE.match(name)
    if m:
        kind = "mag" if m.group(2).lower().rstrip(".") in {"m", "mag", "magn", "magnitude"} else "ang"
        return ("s" + m.group(1), kind)
    raise TableParseError(f"line {lineno}, column {col + 1}: unknown column {name!r}")


def _combine_two_row_header(top, sub, lineno):
    """Merge ``f (GHz) | S11 | '' `` over ``'' | Magn. | Angle`` into flat column names."""
    groups = [c for c in top[1:] if c]
    sub_cells = [c for c in sub if c]
    # a delimiter-split sub-header keeps its leading empty cell and lines up by column
    if len(sub) == len(top) and not sub[0]:
        names, group = [top[0]], None
        for j in range(1, len(top)):
            if top[j]:
                group = top[j]
            if group is None:
                names.append("")
                continue
            names.append(f"{group} {sub[j]}" if sub[j] else "")
        return names
    if len(sub_cells) == 2 * len(groups):
        names = [top[0]]
        for g, (a, b) in zip(groups, zip(sub_cells[::2], sub_cells[1::2])):
            names += [f"{g} {a}", f"{g} {b}"]
        return names
    raise TableParseError(f"line {lineno}: sub-header does not line up with {groups}")


def parse_table(text: str) -> tuple[list[STableRow], BiasMetadata]:
    """Parse a delimited S-parameter table (comma, tab or whitespace separated).

    Lines before the header are scanned for bias metadata such as ``Ta=25``
    or ``Vds=5V``.  A header whose S-parameter cells carry no magnitude/angle
    suffix takes its suffixes from the next line (two-row datasheet header).
    """
    lines = _norm_text(text).splitlines()
    meta: dict = {}
    header = None
    roles = None
    rows: list[STableRow] = []
    i = 0
    while i < len(lines):
        raw = lines[i].rstrip("\r\n")
        lineno = i + 1
        i += 1
        if not raw.strip() or raw.lstrip().startswith(("#", "!")):
            if raw.strip():
                _scan_metadata(raw, meta)
            continue
        cells = _split(raw)
        if header is None:
            if _FREQ_RE.match(cells[0]):
                header = cells
                if any(_SNAME_RE.match(c) for c in cells[1:]):
                    if i >= len(lines):
                        raise TableParseError(f"line {lineno}: header expects a sub-header line")
                    header = _combine_two_row_header(cells, _split(lines[i].rstrip("\r\n")), i + 1)
                    i += 1
                roles = [_column_role(c, lineno, j) for j, c in enumerate(header)]
                if roles[0] is None or roles[0][0] != "freq":
                    raise TableParseError(f"line {lineno}: first column must be frequency")
                if sum(1 for r in roles if r is not None and r[0] == "freq") != 1:
                    raise TableParseError(f"line {lineno}: exactly one frequency column expected")
                seen = set()
                for r in roles[1:]:
                    if r is not None:
                        if r in seen:
                            raise TableParseError(f"line {lineno}: duplicate column {r[0]} {r[1]}")
                        seen.add(r)
                for e in {r[0] for r in seen}:
                    if (e, "mag") not in seen or (e, "ang") not in seen:
                        raise TableParseError(f"line {lineno}: {e} needs both magnitude and angle columns")
            elif _is_numeric_row(cells):
                raise TableParseError(f"line {lineno}: data before header")
            else:
                _scan_metadata(raw, meta)
            continue
        vals = {}
        for j, cell in enumerate(cells):
            if j >= len(roles):
                if cell:
                    raise TableParseError(f"line {lineno}, column {j + 1}: cell beyond header")
                continue
            if roles[j] is None or not cell:
                continue
            try:
                vals[roles[j]] = float(cell)
            except ValueError:
                raise TableParseError(f"line {lineno}, column {j + 1}: non-numeric cell {cell!r}") from None
        if (freq_role := roles[0]) not in vals:
            raise TableParseError(f"line {lineno}: missing frequency")
        freq = vals.pop(freq_role) * freq_role[1]
        entries = {}
        for (e, kind), v in vals.items():
            entries.setdefault(e, {})[kind] = v
        entries = {e: (d["mag"], d["ang"]) for e, d in entries.items() if "mag" in d and "ang" in d}
        try:
            row = STableRow(freq, entries)
        except ValueError as exc:
            raise TableParseError(f"line {lineno}: {exc}") from None
        if rows and not row.freq > rows[-1].freq:
            raise TableParseError(f"line {lineno}: frequency {row.freq:g} Hz is not ascending")
        rows.append(row)
    if header is None:
        raise TableParseError("no header line with a frequency column found")
    return rows, BiasMetadata(**meta)


def to_sparam_dataset(rows, bias: BiasMetadata | None = None, z0: float = 50.0) -> SParamDataset:
    if not rows:
        raise ValueError("no table rows")
    k = len(rows)
    s = np.zeros((k, 2, 2), dtype=np.complex128)
    mask = np.zeros((k, 2, 2), dtype=bool)
    for n, row in enumerate(rows):
        for name, (mag, ang) in row.entries.items():
            s[n][_IDX[name]] = polar_to_complex(mag, ang)
            mask[n][_IDX[name]] = True
    return SParamDataset(np.array([r.freq for r in rows]), s, mask, bias or BiasMetadata(), z0)


# ---------------------------------------------------------------------------
# Touchstone
# ---------------------------------------------------------------------------

def _mask_bits(mask) -> np.ndarray:
    return sum(mask[:, i, j].astype(np.int64) << b for b, (i, j) in enumerate(_IDX[e] for e in ENTRY_ORDER))


def _mask_from_bits(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    mask = np.zeros((bits.size, 2, 2), dtype=bool)
    for b, e in enumerate(ENTRY_ORDER):
        mask[(slice(None),) + _IDX[e]] = (bits >> b) & 1 == 1
    return mask


def _fmt(v: float) -> str:
    return repr(float(v) + 0.0)


def write_touchstone(ds: SParamDataset, unit: str = "GHz", fmt: str = "MA") -> str:
    """Touchstone v1 ``.s2p`` text; masked entries are written as 0 and listed in a ``! mask_bits`` comment."""
    scale = FREQ_UNITS[unit.lower()]
    fmt = fmt.upper()
    if fmt not in ("MA", "RI"):
        raise ValueError("format must be MA or RI")
    out = ["! 2-port S-parameters"]
    b = ds.bias
    meta = [f"{k}={v!r}" for k, v in (("vgs", b.vgs), ("vds", b.vds), ("id", b.id), ("temperature", b.temperature))
            if v is not None]
    if meta:
        out.append("! bias " + " ".join(meta))
    if not ds.mask.all():
        out.append("! mask_bits " + " ".join(str(int(m)) for m in _mask_bits(ds.mask)))
    out.append(f"# {unit} S {fmt} R {_fmt(ds.z0)}")
    for f, s in zip(ds.freqs, ds.s):
        vals = [_fmt(f / scale)]
        for e in ENTRY_ORDER:
            z = s[_IDX[e]]
            if fmt == "MA":
                vals += [_fmt(abs(z)), _fmt(math.degrees(math.atan2(z.imag, z.real)))]
            else:
                vals += [_fmt(z.real), _fmt(z.imag)]
        out.append(" ".join(vals))
    return "\n".join(out) + "\n"


def read_touchstone(text: str) -> SParamDataset:
    unit, param, fmt, z0 = "ghz", "s", "ma", 50.0
    option_seen = False
    freqs, mats, mask_bits, meta = [], [], None, {}
    for lineno, raw in enumerate(_norm_text(text).splitlines(), start=1):
        line, _, comment = raw.partition("!")
        if comment.strip().lower().startswith("mask_bits"):
            mask_bits = [int(t) for t in comment.split()[1:]]
        elif comment.strip().lower().startswith("bias"):
            for tok in comment.split()[1:]:
                k, _, v = tok.partition("=")
                if k in ("vgs", "vds", "id", "temperature"):
                    meta[k] = float(v)
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if option_seen:
                raise TouchstoneError(f"line {lineno}: duplicate option line")
            option_seen = True
            toks = line[1:].lower().split()
            j = 0
            while j < len(toks):
                t = toks[j]
                if t in FREQ_UNITS:
                    unit = t
                elif t in ("s", "y", "z", "h", "g"):
                    param = t
                elif t in ("ma", "ri", "db"):
                    fmt = t
                elif t == "r" and j + 1 < len(toks):
                    try:
                        z0 = float(toks[j + 1])
                    except ValueError:
                        raise TouchstoneError(f"line {lineno}: bad reference impedance {toks[j + 1]!r}") from None
                    j += 1
                else:
                    raise TouchstoneError(f"line {lineno}: malformed option line {raw.strip()!r}")
                j += 1
            if param != "s":
                raise TouchstoneError(f"line {lineno}: only S-parameters are supported, got {param.upper()}")
            if fmt == "db":
                raise TouchstoneError(f"line {lineno}: DB format is not supported")
            continue
        toks = line.split()
        if len(toks) != 9:
            raise TouchstoneError(f"line {lineno}: expected 9 values for a 2-port row, got {len(toks)}")
        try:
            v = [float(t) for t in toks]
        except ValueError as exc:
            raise TouchstoneError(f"line {lineno}: {exc}") from None
        s = np.zeros((2, 2), dtype=np.complex128)
        for n, e in enumerate(ENTRY_ORDER):
            a, b = v[1 + 2 * n], v[2 + 2 * n]
            s[_IDX[e]] = polar_to_complex(a, b) if fmt == "ma" else complex(a, b)
        freqs.append(v[0] * FREQ_UNITS[unit])
        mats.append(s)
    if not freqs:
        raise TouchstoneError("no data rows")
    mask = None
    if mask_bits is not None:
        if len(mask_bits) != len(freqs):
            raise TouchstoneError("mask_bits comment does not match the number of rows")
        mask = _mask_from_bits(mask_bits)
    try:
        return SParamDataset(np.array(freqs), np.array(mats), mask, BiasMetadata(**meta), z0)
    except ValueError as exc:
        raise TouchstoneError(str(exc)) from None


# ---------------------------------------------------------------------------
# Canonical CSV
# ---------------------------------------------------------------------------

def write_canonical_csv(ds: SParamDataset, path) -> None:
    bits = _mask_bits(ds.mask)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CANONICAL_HEADER)
        for f, s, b in zip(ds.freqs, ds.s, bits):
            row = [_fmt(f)]
            for e in ENTRY_ORDER:
                row += [_fmt(s[_IDX[e]].real), _fmt(s[_IDX[e]].imag)]
            w.writerow(row + [str(int(b))])


def read_canonical_csv(path, bias: BiasMetadata | None = None, z0: float = 50.0) -> SParamDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != CANONICAL_HEADER:
            raise ValueError(f"{path}: expected header {','.join(CANONICAL_HEADER)}")
        freqs, mats, bits = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                v = [float(c) for c in row[:9]]
                bits.append(int(row[9]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            s = np.zeros((2, 2), dtype=np.complex128)
            for n, e in enumerate(ENTRY_ORDER):
                s[_IDX[e]] = complex(v[1 + 2 * n], v[2 + 2 * n])
            freqs.append(v[0])
            mats.append(s)
    return SParamDataset(np.array(freqs), np.array(mats).reshape(-1, 2, 2), _mask_from_bits(bits),
                         bias or BiasMetadata(), z0)


def load_sparams(path) -> SParamDataset:
    """Dispatch on content: canonical CSV, Touchstone, or a delimited table."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    first = next((l.strip() for l in text.splitlines() if l.strip()), "")
    if first.split(",")[0] == "freq_hz" and first.replace(" ", "") == ",".join(CANONICAL_HEADER):
        return read_canonical_csv(path)
    if str(path).lower().endswith((".s2p", ".ts")) or first.startswith(("!", "#")):
        return read_touchstone(text)
    rows, bias = parse_table(text)
    return to_sparam_dataset(rows, bias)
