"""Adapters to the outside world: an external circuit simulator driven through
a command template, and the optional document-classification HTTP client.
"""
from __future__ import annotations

import base64
import json
import os
import re
import shlex
import subprocess
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objective import BiasMetadata, IVDataset, SParamDataset
from .surrogate import EvaluationError

SIM_TIMEOUT_S = 60.0
TESTBENCH_MARKER = "* --- testbench ---"
S_COLUMNS = ("freq", "s11_re", "s11_im", "s21_re", "s21_im", "s12_re", "s12_im", "s22_re", "s22_im")
IV_COLUMNS = ("vgs", "vds", "id")


class ExternalSimError(EvaluationError):
    pass


class SimSpawnError(ExternalSimError):
    pass


class SimTimeoutError(ExternalSimError):
    pass


class SimExitError(ExternalSimError):
    pass


class SimParseError(ExternalSimError):
    pass


# ---------------------------------------------------------------------------
# Testbench lines appended to a netlist
# ---------------------------------------------------------------------------

def iv_testbench(grid: IVDataset) -> str:
    lines = [TESTBENCH_MARKER, "*@analysis dc"]
    lines += [f"*@bias {float(g)!r} {float(d)!r}" for g, d in zip(grid.vgs, grid.vds)]
    return "\n".join(lines) + "\n"


def sp_testbench(freqs, z0: float = 50.0) -> str:
    lines = [TESTBENCH_MARKER, "*@analysis sp", f"*@z0 {float(z0)!r}"]
    lines += [f"*@freq {float(f)!r}" for f in freqs]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Testbench:
    analysis: str
    bias: np.ndarray | None = None  # (N, 2) vgs, vds
    freqs: np.ndarray | None = None
    z0: float = 50.0


def parse_testbench(text: str) -> Testbench:
    analysis, bias, freqs, z0 = None, [], [], 50.0
    in_tb = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if s == TESTBENCH_MARKER:
            in_tb = True
            continue
        if not in_tb or not s.startswith("*@"):
            continue
        key, *vals = s[2:].split()
        try:
            if key == "analysis":
                analysis = vals[0]
            elif key == "bias":
                bias.append((float(vals[0]), float(vals[1])))
            elif key == "freq":
                freqs.append(float(vals[0]))
            elif key == "z0":
                z0 = float(vals[0])
            else:
                raise ValueError(f"unknown directive {key!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"testbench line {lineno}: {exc}") from None
    if analysis == "dc":
        return Testbench("dc", bias=np.array(bias, dtype=np.float64).reshape(-1, 2))
    if analysis == "sp":
        return Testbench("sp", freqs=np.array(freqs, dtype=np.float64), z0=z0)
    raise ValueError("netlist has no testbench analysis directive")


# ---------------------------------------------------------------------------
# Simulator process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParseSpec:
    """What the simulator prints: ``kind`` is "iv" (vgs vds id) or "sp" (freq + 8 S columns)."""

    kind: str
    z0: float = 50.0
    bias: BiasMetadata = BiasMetadata()

    @property
    def columns(self) -> tuple[str, ...]:
        return IV_COLUMNS if self.kind == "iv" else S_COLUMNS


def parse_sim_output(text: str, spec: ParseSpec):
    ncol = len(spec.columns)
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        toks = s.split()
        if len(toks) != ncol:
            raise SimParseError(f"output line {lineno}: expected {ncol} columns, got {len(toks)}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise SimParseError(f"output line {lineno}: non-numeric value in {s!r}") from None
    if not rows:
        raise SimParseError("simulator printed no data rows")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise SimParseError("simulator output contains non-finite values")
    try:
        if spec.kind == "iv":
            return IVDataset(a[:, 0], a[:, 1], a[:, 2])
        s = np.empty((a.shape[0], 2, 2), dtype=np.complex128)
        s[:, 0, 0] = a[:, 1] + 1j * a[:, 2]
        s[:, 1, 0] = a[:, 3] + 1j * a[:, 4]
        s[:, 0, 1] = a[:, 5] + 1j * a[:, 6]
        s[:, 1, 1] = a[:, 7] + 1j * a[:, 8]
        return SParamDataset(a[:, 0], s, bias=spec.bias, z0=spec.z0)
    except ValueError as exc:
        raise SimParseError(str(exc)) from None


def external_simulate(netlist: str, cmd_template: str, parse_spec: ParseSpec, timeout: float = SIM_TIMEOUT_S):
    """Write ``netlist`` to a temp file, run the command and parse its stdout.

    ``{netlist}`` in ``cmd_template`` is replaced by the (shell-quoted) file
    path.  Spawn failure, timeout, nonzero exit and unparsable output raise
    distinct :class:`ExternalSimError` subclasses.
    """
    if "{netlist}" not in cmd_template:
        raise ValueError("command template must contain a {netlist} placeholder")
    with tempfile.TemporaryDirectory(prefix="hemtfit-") as tmp:
        path = Path(tmp) / "device.cir"
        path.write_text(netlist, encoding="utf-8")
        argv = shlex.split(cmd_template.replace("{netlist}", shlex.quote(str(path))))
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, cwd=tmp)
        except subprocess.TimeoutExpired:
            raise SimTimeoutError(f"simulator exceeded {timeout:g} s: {argv[0]}") from None
        except OSError as exc:
            raise SimSpawnError(f"cannot start simulator {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-3:]
        raise SimExitError(f"simulator exited with status {proc.returncode}: {' | '.join(tail)}")
    return parse_sim_output(proc.stdout, parse_spec)


# ---------------------------------------------------------------------------
# Asset classification client
# ---------------------------------------------------------------------------

PROMPT_VERSION = "classify-v1"
CATEGORIES = ("iv_curve", "sparam_table", "other")
API_KEY_ENV = "HEMTFIT_LLM_API_KEY"
CLASSIFY_TIMEOUT_S = 30.0


class ClassificationUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class Classification:
    category: str
    bias: BiasMetadata = BiasMetadata()


def _mock_classify(payload, content_type: str, filename: str | None) -> Classification:
    name = (filename or "").lower()
    stem = re.sub(r"\.[a-z0-9]+$", "", name)
    if stem.endswith("_iv") or "iv_curve" in stem:
        return Classification("iv_curve")
    if stem.endswith(("_s", "_sparam", "_sparams")) or name.endswith(".s2p"):
        return Classification("sparam_table")
    if content_type.startswith("text"):
        from .sparams import TableParseError, parse_table

        text = payload.decode("utf-8") if isinstance(payload, bytes) else str(payload)
        try:
            rows, bias = parse_table(text)
        except TableParseError:
            return Classification("other")
        if rows:
            return Classification("sparam_table", bias)
    return Classification("other")


def classify_asset(payload, content_type: str, endpoint: str | None = "mock", filename: str | None = None,
                   timeout: float = CLASSIFY_TIMEOUT_S) -> Classification:
    """Classify an extracted image or table as iv_curve / sparam_table / other.

    ``endpoint="mock"`` uses offline filename and content rules.  Any other
    value is an HTTP URL that receives one JSON POST (no retries).
    """
    if endpoint in (None, "", "mock"):
        return _mock_classify(payload, content_type, filename)
    if content_type.startswith("text"):
        content = payload.decode("utf-8") if isinstance(payload, bytes) else str(payload)
    else:
        content = base64.b64encode(payload).decode("ascii")
    body = json.dumps({"task": "classify", "content_type": content_type,
                       "content_base64_or_text": content, "prompt_version": PROMPT_VERSION}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    req = urllib.request.Request(endpoint, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise ClassificationUnavailable(f"classifier returned HTTP {exc.code}") from None
    except (urllib.error.URLError, TimeoutError, OSError) as exc:
        raise ClassificationUnavailable(f"classifier unreachable: {exc}") from None
    try:
        data = json.loads(raw)
        category = data["category"]
        if category not in CATEGORIES:
            raise ValueError(f"unknown category {category!r}")
        bias = BiasMetadata(vds=data.get("vds"), id=data.get("id"))
    except (ValueError, KeyError, TypeError) as exc:
        raise ClassificationUnavailable(f"malformed classifier response: {exc}") from None
    return Classification(category, bias)
