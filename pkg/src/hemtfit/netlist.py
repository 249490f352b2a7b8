"""Deterministic netlist text for a fitted device and its exact inverse.

Layout (fixed schema, every element always present)::

    * header comments (device, fit report)
    .subckt NAME g d s
    RG g g1 ...     LG g1 gi ...
    RD d d1 ...     LD d1 di ...
    RS s s1 ...     LS s1 si ...
    CPG g s ...     CPD d s ...
    N1 di gi si NAME_core
    .model NAME_core hemtfit_surrogate
    + VOFF=...  (DC parameters, then intrinsic small-signal parameters)
    .ends NAME
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .surrogate import DCParams, SmallSignalParams

MODEL_TYPE = "hemtfit_surrogate"
_NAME_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")

# (element, node+, node-, small-signal field)
ELEMENTS = (
    ("RG", "g", "g1", "RG"), ("LG", "g1", "gi", "LG"),
    ("RD", "d", "d1", "RD"), ("LD", "d1", "di", "LD"),
    ("RS", "s", "s1", "RS"), ("LS", "s1", "si", "LS"),
    ("CPG", "g", "s", "CPG"), ("CPD", "d", "s", "CPD"),
)
INTRINSIC_RF = ("gm", "tau", "gds", "Cgs", "Cgd", "Cds", "Ri")
CARD_KEYS = tuple(DCParams.names()) + tuple(n.upper() for n in INTRINSIC_RF)
ASM_MAP = (("VOFF", "VOFF"), ("LAMBDA", "LAMBDA"), ("RSC", "RSC"), ("RDC", "RDC"))


class NetlistSchemaError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class FitReport:
    iv_nrmse_pct: float
    s_nrmse_pct: float | None
    iterations: int

    def __post_init__(self):
        vals = [self.iv_nrmse_pct] + ([] if self.s_nrmse_pct is None else [self.s_nrmse_pct])
        if not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("fit report errors must be finite and >= 0")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError("iterations must be a nonnegative integer")


@dataclass(frozen=True)
class ModelCard:
    device_name: str
    dc: DCParams
    rf: SmallSignalParams
    fit_report: FitReport

    def __post_init__(self):
        if not _NAME_RE.match(self.device_name):
            raise ValueError(f"device name {self.device_name!r} is not a valid netlist identifier")


def fmt_value(v: float) -> str:
    """9 significant digits, scientific, ``-0`` folded to ``0``."""
    v = float(v)
    if v == 0:
        v = 0.0
    return f"{v:.8e}"


def emit_netlist(card: ModelCard, asm_names: bool = False) -> str:
    name = card.device_name
    rep = card.fit_report
    rf = card.rf.as_dict()
    out = [
        f"* hemtfit model card for {name}",
        f"* device: {name}",
        f"* iv_nrmse_pct: {fmt_value(rep.iv_nrmse_pct)}",
        f"* s_nrmse_pct: {'none' if rep.s_nrmse_pct is None else fmt_value(rep.s_nrmse_pct)}",
        f"* iterations: {int(rep.iterations)}",
        f".subckt {name} g d s",
    ]
    for elem, a, b, key in ELEMENTS:
        out.append(f"{elem} {a} {b} {fmt_value(rf[key])}")
    out.append(f"N1 di gi si {name}_core")
    out.append(f".model {name}_core {MODEL_TYPE}")
    values = list(card.dc.as_dict().values()) + [rf[k] for k in INTRINSIC_RF]
    for key, v in zip(CARD_KEYS, values):
        out.append(f"+ {key}={fmt_value(v)}")
    out.append(f".ends {name}")
    if asm_names:
        dc = card.dc.as_dict()
        out.append("* ASM-HEMT style card (needs the licensed model):")
        out.append(f"* .model {name}_asm asmhemt")
        for ours, theirs in ASM_MAP:
            out.append(f"* + {theirs}={fmt_value(dc[ours])}")
    return "\n".join(out) + "\n"


def _number(tok: str, lineno: int, col: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise NetlistSchemaError(lineno, col, f"expected a number, got {tok!r}") from None
    if not math.isfinite(v):
        raise NetlistSchemaError(lineno, col, f"non-finite value {tok!r}")
    return v


def _expect(tokens, want, lineno, raw):
    for k, (got, exp) in enumerate(zip(tokens, want)):
        if exp is not None and got != exp:
            raise NetlistSchemaError(lineno, raw.find(got) + 1, f"expected {exp!r}, got {got!r}")
    if len(tokens) != len(want):
        raise NetlistSchemaError(lineno, len(raw) + 1, f"expected {len(want)} fields, got {len(tokens)}")


def parse_netlist(text: str) -> ModelCard:
    """Inverse of :func:`emit_netlist`; raises NetlistSchemaError with the offending line and column."""
    header = {}
    body = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s:
            continue
        if s.startswith("*"):
            m = re.match(r"^\*\s*(device|iv_nrmse_pct|s_nrmse_pct|iterations):\s*(\S+)\s*$", s)
            if m and m.group(1) not in header:
                header[m.group(1)] = (m.group(2), lineno)
            continue
        body.append((lineno, raw))
    for key in ("device", "iv_nrmse_pct", "s_nrmse_pct", "iterations"):
        if key not in header:
            raise NetlistSchemaError(1, 1, f"missing '* {key}:' header line")
    n_expected = 1 + len(ELEMENTS) + 2 + len(CARD_KEYS) + 1
    if len(body) != n_expected:
        where = body[min(len(body), n_expected) - 1][0] if body else 1
        raise NetlistSchemaError(where, 1, f"expected {n_expected} netlist lines, found {len(body)}")
    it = iter(body)

    lineno, raw = next(it)
    toks = raw.split()
    _expect(toks, [".subckt", None, "g", "d", "s"], lineno, raw)
    name = toks[1]
    if name != header["device"][0]:
        raise NetlistSchemaError(lineno, raw.find(name) + 1, f"subckt name {name!r} differs from header device")

    rf = {}
    for elem, a, b, key in ELEMENTS:
        lineno, raw = next(it)
        toks = raw.split()
        _expect(toks, [elem, a, b, None], lineno, raw)
        rf[key] = _number(toks[3], lineno, raw.rfind(toks[3]) + 1)

    lineno, raw = next(it)
    _expect(raw.split(), ["N1", "di", "gi", "si", f"{name}_core"], lineno, raw)
    lineno, raw = next(it)
    _expect(raw.split(), [".model", f"{name}_core", MODEL_TYPE], lineno, raw)

    card = {}
    for key in CARD_KEYS:
        lineno, raw = next(it)
        m = re.match(r"^\+\s*([A-Za-z]+)=(\S+)\s*$", raw.strip())
        if m is None:
            raise NetlistSchemaError(lineno, 1, f"expected '+ {key}=<value>'")
        if m.group(1) != key:
            raise NetlistSchemaError(lineno, raw.find(m.group(1)) + 1, f"expected parameter {key}, got {m.group(1)}")
        card[key] = _number(m.group(2), lineno, raw.find("=") + 2)

    lineno, raw = next(it)
    _expect(raw.split(), [".ends", name], lineno, raw)

    dc_names = DCParams.names()
    try:
        dc = DCParams(**{k: card[k] for k in dc_names})
        rf.update({n: card[n.upper()] for n in INTRINSIC_RF})
        rfp = SmallSignalParams(**rf)
    except ValueError as exc:
        raise NetlistSchemaError(lineno, 1, f"invalid parameter values: {exc}") from None

    def head_num(key):
        tok, ln = header[key]
        return _number(tok, ln, 1)

    s_tok = header["s_nrmse_pct"][0]
    it_tok, it_line = header["iterations"]
    if not it_tok.isdigit():
        raise NetlistSchemaError(it_line, 1, f"iterations must be an integer, got {it_tok!r}")
    report = FitReport(head_num("iv_nrmse_pct"), None if s_tok == "none" else head_num("s_nrmse_pct"), int(it_tok))
    return ModelCard(name, dc, rfp, report)
