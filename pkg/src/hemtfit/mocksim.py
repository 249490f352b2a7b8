"""Stand-in external simulator: evaluates the surrogate for a netlist written
by :mod:`hemtfit.netlist` plus its testbench lines.

    python -m hemtfit.mocksim device.cir [--fail-when VOFF>0] [--hang-when KGAIN>1]

``--fail-when`` exits with status 3 and ``--hang-when`` sleeps for an hour
when the named model-card value exceeds the threshold; both exist for
failure-injection tests.
"""
from __future__ import annotations

import argparse
import re
import sys
import time

from .netlist import parse_netlist
from .external import parse_testbench
from .surrogate import dc_currents, s_matrices


def _condition(expr: str):
    m = re.match(r"^([A-Za-z]+)\s*>\s*(\S+)$", expr)
    if m is None:
        raise argparse.ArgumentTypeError(f"expected NAME>VALUE, got {expr!r}")
    return m.group(1), float(m.group(2))


def _holds(card, cond) -> bool:
    if cond is None:
        return False
    name, threshold = cond
    values = {k.upper(): v for k, v in {**card.dc.as_dict(), **card.rf.as_dict()}.items()}
    return values[name.upper()] > threshold


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m hemtfit.mocksim", description=__doc__.splitlines()[0])
    ap.add_argument("netlist")
    ap.add_argument("--fail-when", type=_condition)
    ap.add_argument("--hang-when", type=_condition)
    args = ap.parse_args(argv)
    with open(args.netlist, encoding="utf-8") as fh:
        text = fh.read()
    card = parse_netlist(text)
    if _holds(card, args.fail_when):
        print("mocksim: injected failure", file=sys.stderr)
        return 3
    if _holds(card, args.hang_when):
        time.sleep(3600)
    tb = parse_testbench(text)
    out = sys.stdout
    if tb.analysis == "dc":
        cur = dc_currents(card.dc, tb.bias[:, 0], tb.bias[:, 1])
        out.write("# vgs vds id\n")
        for (g, d), i in zip(tb.bias, cur):
            out.write(f"{float(g)!r} {float(d)!r} {float(i)!r}\n")
    else:
        s = s_matrices(card.rf, tb.freqs, tb.z0)
        out.write("# freq s11_re s11_im s21_re s21_im s12_re s12_im s22_re s22_im\n")
        for f, m in zip(tb.freqs, s):
            vals = [m[0, 0], m[1, 0], m[0, 1], m[1, 1]]
            out.write(" ".join([repr(float(f))] + [f"{float(v.real)!r} {float(v.imag)!r}" for v in vals]) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
