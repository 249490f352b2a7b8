"""End-to-end extraction: ingest, DC stage, RF stage, netlist and report."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .digitize import digitize, load_calibration, load_labels, load_raster
from .external import (ClassificationUnavailable, ParseSpec, classify_asset, external_simulate, iv_testbench,
                       sp_testbench)
from .iftpe import History, OptimizerConfig, ParamSpec, SearchSpace, optimize, write_trace
from .netlist import FitReport, ModelCard, emit_netlist, fmt_value
from .objective import IVDataset, SParamDataset, iv_nrmse_percent, rmse_iv, rmse_s, s_nrmse_percent
from .sparams import load_sparams
from .surrogate import DCParams, SmallSignalParams, s_params, simulate_iv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class StageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Search spaces
# ---------------------------------------------------------------------------

def build_default_space() -> tuple[SearchSpace, SearchSpace]:
    """Device-independent (DC, RF) search spaces."""
    log = "log10"
    dc = SearchSpace([
        ParamSpec("VOFF", -10.0, 5.0),
        ParamSpec("NFACTOR", 0.5, 5.0),
        ParamSpec("KGAIN", 1e-4, 1e2, log),
        ParamSpec("UA", 0.0, 2.0),
        ParamSpec("UB", 0.0, 1.0),
        ParamSpec("DELTA", 1.0, 10.0),
        ParamSpec("LAMBDA", 0.0, 0.5),
        ParamSpec("RSC", 1e-2, 1e2, log),
        ParamSpec("RDC", 1e-2, 1e2, log),
    ])
    rf = SearchSpace(
        [ParamSpec("gm", 1e-4, 10.0, log), ParamSpec("tau", 0.0, 1e-11), ParamSpec("gds", 1e-6, 1.0, log)]
        + [ParamSpec(n, 1e-15, 1e-10, log) for n in ("Cgs", "Cgd", "Cds")]
        + [ParamSpec(n, 1e-2, 1e2, log) for n in ("Ri", "RG", "RD", "RS")]
        + [ParamSpec(n, 1e-12, 1e-8, log) for n in ("LG", "LD", "LS")]
        + [ParamSpec(n, 1e-15, 1e-11, log) for n in ("CPG", "CPD")]
    )
    assert dc.names == DCParams.names() and rf.names == SmallSignalParams.names()
    return dc, rf


def apply_space_overrides(space: SearchSpace, overrides: dict) -> SearchSpace:
    """Replace bounds per parameter from a ``{name: {lower, upper, scale}}`` mapping."""
    unknown = set(overrides) - set(space.names)
    if unknown:
        raise ValueError(f"unknown parameters in search-space file: {sorted(unknown)}")
    specs = []
    for s in space.specs:
        o = overrides.get(s.name, {})
        specs.append(ParamSpec(s.name, float(o.get("lower", s.lower)), float(o.get("upper", s.upper)),
                               o.get("scale", s.scale)))
    return SearchSpace(specs)


def round_sig(theta) -> np.ndarray:
    """Round to the 9 significant digits a netlist carries, so every evaluator sees the same numbers."""
    return np.array([float(fmt_value(v)) for v in theta])


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

class SurrogateEvaluator:
    name = "surrogate"

    def iv(self, dc: DCParams, grid: IVDataset) -> IVDataset:
        return simulate_iv(dc, grid)

    def sparams(self, rf: SmallSignalParams, meas: SParamDataset) -> SParamDataset:
        return s_params(rf, meas.freqs, meas.z0, meas.bias)


@dataclass
class ExternalEvaluator:
    """Runs ``command`` (with a ``{netlist}`` placeholder) once per evaluation."""

    command: str
    timeout: float = 60.0
    device: str = "DUT"
    name: str = "external"

    def _card(self, dc, rf) -> ModelCard:
        return ModelCard(self.device, dc, rf, FitReport(0.0, None, 0))

    def iv(self, dc: DCParams, grid: IVDataset) -> IVDataset:
        text = emit_netlist(self._card(dc, SmallSignalParams())) + iv_testbench(grid)
        return external_simulate(text, self.command, ParseSpec("iv"), self.timeout)

    def sparams(self, rf: SmallSignalParams, meas: SParamDataset) -> SParamDataset:
        dc = DCParams(VOFF=-1.0, NFACTOR=1.0, KGAIN=0.1)
        text = emit_netlist(self._card(dc, rf)) + sp_testbench(meas.freqs, meas.z0)
        return external_simulate(text, self.command, ParseSpec("sp", meas.z0, meas.bias), self.timeout)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

@dataclass
class StageResult:
    params: object
    nrmse_pct: float
    iterations: int
    history: History
    simulated: object


def _run_stage(objective: Callable, space: SearchSpace, config: OptimizerConfig, workers: int, what: str):
    res = optimize(objective, space, config, n_workers=workers)
    if not math.isfinite(res.best_loss):
        raise StageError(f"{what} stage: all {len(res.history)} evaluations failed")
    return res


def run_dc_stage(iv: IVDataset, config: OptimizerConfig = OptimizerConfig(), evaluator=None,
                 space: SearchSpace | None = None, workers: int = 1) -> StageResult:
    if len(iv) == 0:
        raise ValueError("DC stage needs a nonempty I-V dataset")
    evaluator = evaluator or SurrogateEvaluator()
    space = space or build_default_space()[0]

    def objective(theta):
        return rmse_iv(evaluator.iv(DCParams.from_array(round_sig(theta)), iv), iv)

    res = _run_stage(objective, space, config, workers, "DC")
    best = DCParams.from_array(round_sig(res.best_theta))
    sim = evaluator.iv(best, iv)
    return StageResult(best, iv_nrmse_percent(sim, iv), len(res.history), res.history, sim)


def run_rf_stage(sp: SParamDataset, config: OptimizerConfig = OptimizerConfig(), evaluator=None,
                 space: SearchSpace | None = None, workers: int = 1) -> StageResult:
    if len(sp) == 0:
        raise ValueError("RF stage needs a nonempty S-parameter dataset")
    evaluator = evaluator or SurrogateEvaluator()
    space = space or build_default_space()[1]

    def objective(theta):
        sim = evaluator.sparams(SmallSignalParams.from_array(round_sig(theta)), sp)
        return rmse_s(SParamDataset(sim.freqs, sim.s, sp.mask, sp.bias, sp.z0), sp)

    res = _run_stage(objective, space, config, workers, "RF")
    best = SmallSignalParams.from_array(round_sig(res.best_theta))
    sim = evaluator.sparams(best, sp)
    sim = SParamDataset(sim.freqs, sim.s, sp.mask, sp.bias, sp.z0)
    return StageResult(best, s_nrmse_percent(sim, sp), len(res.history), res.history, sim)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

CONFIG_HELP = """\
configuration file (TOML):

  device = "ATF38143"          device / subcircuit name
  seed = 0                     optimizer seed (both stages)
  evaluator = "surrogate"      "surrogate" or "external"
  out_dir = "out"              output directory (relative to the config file)
  workers = 1                  parallel objective evaluations per batch
  asm_names = false            also write a commented ASM-HEMT style card

  [inputs]                     paths are relative to the config file
  iv_csv = "iv.csv"            measured I-V rows vgs,vds,id ...
  chart = "iv.png"             ... or a chart raster with its sidecars
  calibration = "calib.json"
  labels = "labels.json"
  x_scale = "linear"           "linear" or "log10"
  y_scale = "linear"
  sparams = "s.csv"            optional table, .s2p or canonical CSV
  search_space = "space.toml"  optional bound overrides: [dc.VOFF] lower=.. upper=.. scale=..

  [optimizer]                  gamma, n_startup, batch_size, max_batches,
                               delta_init, alpha_decay, n_grid, n_candidates
  [optimizer.dc]               per-stage overrides of the keys above
  [optimizer.rf]

  [external]
  command = "ngspice -b {netlist}"
  timeout_s = 60

  [llm]
  endpoint = "mock"            "mock" or an http(s) URL; API key from HEMTFIT_LLM_API_KEY
"""

_OPT_KEYS = {"gamma", "n_startup", "batch_size", "max_batches", "delta_init", "alpha_decay", "n_grid",
             "n_candidates"}


@dataclass
class PipelineConfig:
    device: str = "DUT"
    seed: int = 0
    evaluator: str = "surrogate"
    out_dir: Path = Path("out")
    workers: int = 1
    asm_names: bool = False
    iv_csv: Path | None = None
    chart: Path | None = None
    calibration: Path | None = None
    labels: Path | None = None
    x_scale: str = "linear"
    y_scale: str = "linear"
    sparams: Path | None = None
    search_space: Path | None = None
    optimizer: dict = field(default_factory=dict)
    optimizer_dc: dict = field(default_factory=dict)
    optimizer_rf: dict = field(default_factory=dict)
    external_command: str | None = None
    external_timeout_s: float = 60.0
    llm_endpoint: str | None = None
    source_hash: str = ""

    def __post_init__(self):
        if self.evaluator not in ("surrogate", "external"):
            raise ValueError(f"evaluator must be 'surrogate' or 'external', got {self.evaluator!r}")
        for d in (self.optimizer, self.optimizer_dc, self.optimizer_rf):
            bad = set(d) - _OPT_KEYS
            if bad:
                raise ValueError(f"unknown optimizer keys {sorted(bad)}")
        if self.iv_csv is None and self.chart is None:
            raise ValueError("inputs need iv_csv or chart")
        if self.iv_csv is not None and self.chart is not None:
            raise ValueError("give either iv_csv or chart, not both")
        if self.chart is not None and (self.calibration is None or self.labels is None):
            raise ValueError("chart input needs calibration and labels sidecars")
        if self.evaluator == "external" and not self.external_command:
            raise ValueError("external evaluator needs [external] command")

    def stage_config(self, stage: str) -> OptimizerConfig:
        extra = self.optimizer_dc if stage == "dc" else self.optimizer_rf
        return OptimizerConfig(**{**self.optimizer, **extra, "rng_seed": int(self.seed)})

    def make_evaluator(self):
        if self.evaluator == "surrogate":
            return SurrogateEvaluator()
        return ExternalEvaluator(self.external_command, self.external_timeout_s, self.device)


def load_config(path, seed: int | None = None, evaluator: str | None = None, out_dir=None) -> PipelineConfig:
    path = Path(path)
    raw = path.read_bytes()
    data = tomllib.loads(raw.decode("utf-8"))
    base = path.parent
    known = {"device", "seed", "evaluator", "out_dir", "workers", "asm_names", "inputs", "optimizer",
             "external", "llm"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown top-level keys {sorted(unknown)}")
    inputs = dict(data.get("inputs", {}))
    in_keys = {"iv_csv", "chart", "calibration", "labels", "x_scale", "y_scale", "sparams", "search_space"}
    if set(inputs) - in_keys:
        raise ValueError(f"{path}: unknown [inputs] keys {sorted(set(inputs) - in_keys)}")

    def p(key):
        v = inputs.get(key)
        return None if v is None else (base / v)

    opt = dict(data.get("optimizer", {}))
    opt_dc = opt.pop("dc", {})
    opt_rf = opt.pop("rf", {})
    ext = data.get("external", {})
    llm = data.get("llm", {})
    out = Path(out_dir) if out_dir is not None else base / data.get("out_dir", "out")
    return PipelineConfig(
        device=data.get("device", "DUT"), seed=int(data.get("seed", 0) if seed is None else seed),
        evaluator=evaluator or data.get("evaluator", "surrogate"), out_dir=out,
        workers=int(data.get("workers", 1)), asm_names=bool(data.get("asm_names", False)),
        iv_csv=p("iv_csv"), chart=p("chart"), calibration=p("calibration"), labels=p("labels"),
        x_scale=inputs.get("x_scale", "linear"), y_scale=inputs.get("y_scale", "linear"),
        sparams=p("sparams"), search_space=p("search_space"),
        optimizer=opt, optimizer_dc=dict(opt_dc), optimizer_rf=dict(opt_rf),
        external_command=ext.get("command"), external_timeout_s=float(ext.get("timeout_s", 60.0)),
        llm_endpoint=llm.get("endpoint"), source_hash=hashlib.sha256(raw).hexdigest(),
    )


# ---------------------------------------------------------------------------
# Run
# ---------------------------------------------------------------------------

@dataclass
class ExtractionReport:
    device: str
    doc_success: bool
    iv_nrmse_pct: float | None
    s_nrmse_pct: float | None
    iterations: int
    wall_time_s: float
    dc_params: dict
    rf_params: dict
    dc_iterations: int = 0
    rf_iterations: int = 0
    seed: int = 0
    config_hash: str = ""
    version: str = __version__
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.doc_success and not self.errors

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _write_plot_iv(path, meas: IVDataset, sim: IVDataset):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["vgs", "vds", "id_meas", "id_sim"])
        for g, d, a, b in zip(meas.vgs, meas.vds, meas.id, sim.id):
            w.writerow([repr(float(g)), repr(float(d)), repr(float(a)), repr(float(b))])


def _write_plot_s(path, meas: SParamDataset, sim: SParamDataset):
    from .sparams import ENTRY_ORDER, _IDX

    cols = ["freq_hz"]
    for e in ENTRY_ORDER:
        cols += [f"{e}_re_meas", f"{e}_im_meas", f"{e}_re_sim", f"{e}_im_sim"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k, f in enumerate(meas.freqs):
            row = [repr(float(f))]
            for e in ENTRY_ORDER:
                i, j = _IDX[e]
                m = meas.s[k, i, j] if meas.mask[k, i, j] else complex("nan")
                s = sim.s[k, i, j]
                row += [repr(float(m.real)), repr(float(m.imag)), repr(float(s.real)), repr(float(s.imag))]
            w.writerow(row)


def _classify(cfg: PipelineConfig, path: Path, content_type: str, role: str, warnings: list) -> None:
    """Ask the classifier about an input; the configured role wins, disagreements are only logged."""
    if not cfg.llm_endpoint:
        return
    try:
        got = classify_asset(path.read_bytes(), content_type, cfg.llm_endpoint, filename=path.name)
    except ClassificationUnavailable as exc:
        warnings.append(f"classification unavailable for {path.name}: {exc}; using configured role")
        return
    if got.category != role:
        warnings.append(f"{path.name} classified as {got.category}, configured as {role}")


def run_pipeline(cfg: PipelineConfig, log: Callable[[str], None] | None = None) -> ExtractionReport:
    """Run every stage, write artifacts into ``cfg.out_dir`` and return the report."""
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = ExtractionReport(cfg.device, True, None, None, 0, 0.0, {}, {}, seed=cfg.seed,
                           config_hash=cfg.source_hash)
    dc_space, rf_space = build_default_space()
    if cfg.search_space is not None:
        with open(cfg.search_space, "rb") as fh:
            ss = tomllib.load(fh)
        dc_space = apply_space_overrides(dc_space, ss.get("dc", {}))
        rf_space = apply_space_overrides(rf_space, ss.get("rf", {}))
    evaluator = cfg.make_evaluator()

    # ingest
    iv = sp = None
    try:
        if cfg.chart is not None:
            _classify(cfg, cfg.chart, "image/png", "iv_curve", rep.warnings)
            chart = digitize(load_raster(cfg.chart), load_calibration(cfg.calibration), load_labels(cfg.labels),
                             cfg.x_scale, cfg.y_scale)
            rep.warnings.extend(chart.warnings)
            iv = chart.to_iv_dataset()
            iv.to_csv(out / "digitized_iv.csv")
        else:
            iv = IVDataset.from_csv(cfg.iv_csv)
        if len(iv) == 0:
            raise ValueError("no I-V data after ingestion")
    except Exception as exc:  # any ingest failure is a document failure
        rep.doc_success = False
        rep.errors.append(f"ingest: {exc}")
        iv = None
    if cfg.sparams is not None:
        try:
            _classify(cfg, cfg.sparams, "text/plain", "sparam_table", rep.warnings)
            sp = load_sparams(cfg.sparams)
        except Exception as exc:
            rep.doc_success = False
            rep.errors.append(f"ingest: {exc}")
    log(f"ingest: iv={'ok' if iv is not None else 'failed'} sparams={'yes' if sp is not None else 'no'}")

    dc_best = None
    if iv is not None:
        try:
            r = run_dc_stage(iv, cfg.stage_config("dc"), evaluator, dc_space, cfg.workers)
            dc_best = r.params
            rep.iv_nrmse_pct = r.nrmse_pct
            rep.dc_iterations = r.iterations
            rep.dc_params = r.params.as_dict()
            write_trace(r.history, dc_space.names, out / "trace_dc.csv")
            _write_plot_iv(out / "plot_iv.csv", iv, r.simulated)
            log(f"dc: nrmse {r.nrmse_pct:.3f}% in {r.iterations} evaluations")
        except Exception as exc:
            rep.errors.append(f"dc: {exc}")
    rf_best = SmallSignalParams()
    if sp is not None:
        try:
            r = run_rf_stage(sp, cfg.stage_config("rf"), evaluator, rf_space, cfg.workers)
            rf_best = r.params
            rep.s_nrmse_pct = r.nrmse_pct
            rep.rf_iterations = r.iterations
            rep.rf_params = r.params.as_dict()
            write_trace(r.history, rf_space.names, out / "trace_rf.csv")
            _write_plot_s(out / "plot_s.csv", sp, r.simulated)
            log(f"rf: nrmse {r.nrmse_pct:.3f}% in {r.iterations} evaluations")
        except Exception as exc:
            rep.errors.append(f"rf: {exc}")
    rep.iterations = rep.dc_iterations + rep.rf_iterations
    if dc_best is not None:
        card = ModelCard(cfg.device, dc_best, rf_best,
                         FitReport(rep.iv_nrmse_pct, rep.s_nrmse_pct, rep.iterations))
        (out / f"{cfg.device}.cir").write_text(emit_netlist(card, cfg.asm_names), encoding="utf-8")
    rep.wall_time_s = time.perf_counter() - t0
    (out / "report.json").write_text(rep.to_json(), encoding="utf-8")
    return rep
