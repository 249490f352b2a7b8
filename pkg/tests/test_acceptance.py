"""End-to-end acceptance checks.  Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import json
import math
import shlex
import sys
import time
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np

from hemtfit.digitize import axis_residual, digitize, fit_axis, render_chart
from hemtfit.iftpe import (FocusWindow, OptimizerConfig, ParamSpec, SearchSpace, acquisition_score,
                           contraction_rate, optimize, quantize, update_window)
from hemtfit.objective import IVDataset, SParamDataset, iv_nrmse_percent, nrmse_percent, rmse_iv, rmse_s
from hemtfit.pipeline import ExternalEvaluator, build_default_space, load_config, run_dc_stage, run_pipeline, \
    run_rf_stage
from hemtfit.sparams import parse_table, to_sparam_dataset, write_touchstone
from hemtfit.surrogate import (SmallSignalParams, TwoPortMatrix, iv_sweep, s_matrices, s_params, s_to_y,
                               simulate_iv, y_to_s)

sys.path.insert(0, str(Path(__file__).parent))
from conftest import FREQS, TRUE_DC, TRUE_RF, VDS_GRID, VGS_GRID  # noqa: E402

DATA = Path(__file__).parent / "data"
PY = shlex.quote(sys.executable)
MOCKSIM = f"{PY} -m hemtfit.mocksim {{netlist}}"
SEEDS = range(10)

DC_CONFIG = dict(n_startup=20, batch_size=20, max_batches=25)   # 520 evaluations
RF_CONFIG = dict(n_startup=20, batch_size=20, max_batches=36)   # 740 evaluations


def report(name: str, ok: bool, detail: str, capsys=None) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


def check(name, ok, detail, capsys):
    report(name, ok, detail, capsys)
    assert ok, detail


# --- 1. DC recovery ----------------------------------------------------------

def dc_recovery():
    iv = iv_sweep(TRUE_DC, VGS_GRID, VDS_GRID)
    assert len(iv) == 200
    errs, times, evals = [], [], []
    for seed in SEEDS:
        t0 = time.perf_counter()
        res = run_dc_stage(iv, OptimizerConfig(**DC_CONFIG, rng_seed=seed))
        times.append(time.perf_counter() - t0)
        errs.append(res.nrmse_pct)
        evals.append(res.iterations)
    hits = sum(e <= 5.0 for e in errs)
    ok = hits >= 8 and max(evals) <= 520 and max(times) <= 120.0
    detail = (f"{hits}/10 seeds with IV-NRMSE <= 5% (values {', '.join(f'{e:.2f}' for e in errs)}); "
              f"{max(evals)} evaluations; slowest seed {max(times):.1f} s")
    return ok, detail


def test_dc_recovery(capsys):
    check("1 synthetic DC recovery", *dc_recovery(), capsys)


# --- 2. RF recovery ----------------------------------------------------------

def rf_recovery():
    sp = s_params(TRUE_RF, FREQS)
    assert sp.mask.all() and len(sp) == 10
    errs, evals = [], []
    for seed in SEEDS:
        res = run_rf_stage(sp, OptimizerConfig(**RF_CONFIG, rng_seed=seed))
        errs.append(res.nrmse_pct)
        evals.append(res.iterations)
    hits = sum(e <= 10.0 for e in errs)
    ok = hits >= 8 and max(evals) <= 740
    detail = (f"{hits}/10 seeds with S-NRMSE <= 10% (values {', '.join(f'{e:.2f}' for e in errs)}); "
              f"{max(evals)} evaluations")
    return ok, detail


def test_rf_recovery(capsys):
    check("2 synthetic RF recovery", *rf_recovery(), capsys)


# --- 3. focusing ablation ----------------------------------------------------

SHIFT = np.linspace(-7e5, 6e5, 10) + 12345.0


def sphere(theta):
    return float(np.sum((theta - SHIFT) ** 2))


def ablation():
    space = SearchSpace([ParamSpec(f"x{i}", -1e6, 1e6) for i in range(10)])
    focus, plain = [], []
    for seed in SEEDS:
        cfg = dict(n_startup=20, batch_size=20, max_batches=19, rng_seed=seed)
        assert OptimizerConfig(**cfg).budget == 400
        focus.append(optimize(sphere, space, OptimizerConfig(**cfg)).best_loss)
        plain.append(optimize(sphere, space, OptimizerConfig(**cfg, delta_init=0.0)).best_loss)
    wins = sum(f < p for f, p in zip(focus, plain))
    ok = np.median(focus) < np.median(plain) and wins >= 9
    detail = (f"median focused {np.median(focus):.3e} vs plain {np.median(plain):.3e}; "
              f"focused better on {wins}/10 seeds")
    return ok, detail


def test_focusing_ablation(capsys):
    check("3 focusing ablation", *ablation(), capsys)


# --- 4. formula-level examples -----------------------------------------------

def _rel(a, b):
    return abs(a - b) <= 1e-9 * abs(b)


def unit_examples():
    getcontext().prec = 40
    d = Decimal
    ok = {}
    # acquisition score
    ok["score l=g"] = _rel(acquisition_score(0.7, 0.7, 0.25), 1.0)
    ok["score g/l=3"] = _rel(acquisition_score(1.0, 3.0, 0.25), 0.4)
    ok["score limit"] = _rel(acquisition_score(1.0, 1e-300, 0.25), 4.0)
    # contraction and window arithmetic, oracle in 40-digit decimal
    rate2 = d("0.3") * (d("-0.3")).exp()
    ok["rate k=0"] = _rel(contraction_rate(0, 0.3, 0.15), 0.3)
    ok["rate k=2"] = _rel(contraction_rate(2, 0.3, 0.15), float(rate2))
    space = SearchSpace([ParamSpec("a", -10.0, 10.0)])
    cfg = OptimizerConfig(delta_init=0.3, alpha_decay=0.15)
    w = FocusWindow.build([0.0], [1.0], space, cfg.n_grid)
    r1 = d("0.7")
    r2 = r1 * (1 - d("0.3") * (d("-0.15")).exp())
    r3 = r2 * (1 - rate2)
    for k, ref in enumerate((r1, r2, r3)):
        w = update_window(w, [0.0], cfg, space)
        ok[f"window r after batch {k}"] = _rel(float(w.range[0]), float(ref))
    w = update_window(FocusWindow.build([0.0], [2.0], space, 8), [0.0], OptimizerConfig(delta_init=0.25), space)
    ok["window r=2, delta 0.25"] = _rel(float(w.range[0]), 1.5)
    w = update_window(FocusWindow.build([0.0], [4.0], space, 8), [10.0], cfg, space)
    ok["window clipped at bound"] = w.upper[0] == 10.0 and w.center[0] == 10.0
    # grid steps
    w01 = FocusWindow.build([0.5], [0.5], SearchSpace([ParamSpec("a", 0.0, 1.0)]), 100)
    ok["step [0,1]/100"] = _rel(float(w01.step[0]), 0.01)
    ok["quantize 0.3456"] = _rel(float(quantize([0.3456], w01)[0]), 0.35)
    ok["quantize idempotent"] = float(quantize(quantize([0.3456], w01), w01)[0]) == float(quantize([0.3456], w01)[0])
    w22 = FocusWindow.build([0.0], [2.0], SearchSpace([ParamSpec("a", -2.0, 2.0)]), 8)
    ok["step [-2,2]/8"] = _rel(float(w22.step[0]), 0.5)
    ok["quantize 0.7"] = _rel(float(quantize([0.7], w22)[0]), 0.5)
    # RMSE
    one = IVDataset([0.0], [1.0], [0.9])
    ok["rmse single"] = _rel(rmse_iv(IVDataset([0.0], [1.0], [1.0]), one), 0.1)
    two = IVDataset([0.0, 0.0], [1.0, 2.0], [0.0, 0.0])
    ok["rmse two"] = _rel(rmse_iv(IVDataset([0.0, 0.0], [1.0, 2.0], [0.3, 0.4]), two),
                          float((d("0.125")).sqrt()))
    zero = np.zeros((1, 2, 2), complex)
    diff = zero.copy()
    diff[0, 0, 0] = 0.3
    ok["rmse_s single entry"] = _rel(rmse_s(SParamDataset([1e9], diff), SParamDataset([1e9], zero)), 0.3)
    z2 = np.zeros((2, 2, 2), complex)
    d2 = z2.copy()
    d2[0, 0, 0], d2[1, 1, 1] = 0.2, 0.4
    ok["rmse_s two freqs"] = _rel(rmse_s(SParamDataset([1e9, 2e9], d2), SParamDataset([1e9, 2e9], z2)),
                                  float(d("0.1").sqrt()))
    ok["nrmse 5%"] = _rel(nrmse_percent(0.05, [0.0, 1.0]), 5.0)
    failed = [k for k, v in ok.items() if not v]
    detail = f"{len(ok) - len(failed)}/{len(ok)} examples within 1e-9 relative" + (f"; failed {failed}" if failed
                                                                                   else "")
    return not failed, detail


def test_unit_examples(capsys):
    check("4 formula-level examples", *unit_examples(), capsys)


# --- 5. datasheet table fixture ----------------------------------------------

S11_MAG = [0.994, 0.976, 0.950, 0.917, 0.880, 0.842, 0.805, 0.771, 0.739, 0.711]
S11_ANG = [-12.2, -24.3, -36.0, -47.3, -58.1, -68.4, -78.2, -87.6, -96.5, -104.9]


def datasheet_table():
    rows, bias = parse_table((DATA / "table_a.txt").read_text(encoding="utf-8"))
    freqs_ok = [r.freq for r in rows] == [k * 1e9 for k in range(1, 11)]
    s11_ok = [r.entries["s11"] for r in rows] == list(zip(S11_MAG, S11_ANG))
    ds = to_sparam_dataset(rows, bias)
    mask_ok = ds.mask[:, 0, 0].all() and int(ds.mask.sum()) == 10
    ok = freqs_ok and s11_ok and mask_ok and len(rows) == 10
    detail = (f"{len(rows)} rows; frequencies {'exact' if freqs_ok else 'WRONG'}; S11 mag/angle "
              f"{'exact' if s11_ok else 'WRONG'} (first {rows[0].entries['s11']}, last {rows[-1].entries['s11']})")
    return ok, detail


def test_datasheet_table(capsys):
    check("5 datasheet S11 table", *datasheet_table(), capsys)


# --- 6. digitization round trip ----------------------------------------------

def digitize_round_trip():
    truth = iv_sweep(TRUE_DC, VGS_GRID, VDS_GRID)
    chart = render_chart(truth)
    got = digitize(chart.raster, chart.calibration, chart.labels)
    rec = got.to_iv_dataset()
    err = iv_nrmse_percent(rec, simulate_iv(TRUE_DC, rec))
    resid = max(axis_residual(fit_axis([c for c in chart.calibration if c.axis == a]),
                              [c for c in chart.calibration if c.axis == a]) for a in "xy")
    levels = [v for v, _ in got.curves]
    ok = err <= 1.0 and resid <= 1e-9 and levels == list(VGS_GRID)
    return ok, f"IV-NRMSE {err:.3f}% over {len(rec)} points; axis residual {resid:.1e}; {len(levels)} curves"


def test_digitize_round_trip(capsys):
    check("6 digitization round trip", *digitize_round_trip(), capsys)


# --- 7. two-port math --------------------------------------------------------

def two_port():
    rng = np.random.default_rng(2024)
    worst, n = 0.0, 0
    while n < 1000:
        y = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) / 50.0
        if np.linalg.cond(np.eye(2) + 50.0 * y) > 1e3:
            continue
        s = y_to_s(TwoPortMatrix(y, "Y"))
        if np.linalg.cond(np.eye(2) + s.data) > 1e3:
            continue
        back = s_to_y(s).data
        worst = max(worst, np.linalg.norm(back - y) / np.linalg.norm(y))
        n += 1
    sig, recip = 0.0, 0.0
    for _ in range(200):
        p = SmallSignalParams(gm=0.0, gds=rng.uniform(0, 0.05), Cgs=rng.uniform(0, 2e-12),
                              Cgd=rng.uniform(0, 5e-13), Cds=rng.uniform(0, 1e-12), Ri=rng.uniform(0, 10),
                              RG=rng.uniform(0, 5), RD=rng.uniform(0, 5), RS=rng.uniform(0, 5),
                              LG=rng.uniform(0, 5e-10), LD=rng.uniform(0, 5e-10), LS=rng.uniform(0, 1e-10),
                              CPG=rng.uniform(0, 2e-13), CPD=rng.uniform(0, 2e-13))
        for s in s_matrices(p, FREQS):
            sig = max(sig, np.linalg.svd(s, compute_uv=False)[0])
            recip = max(recip, abs(s[0, 1] - s[1, 0]))
    ok = worst <= 1e-10 and sig <= 1 + 1e-9 and recip <= 1e-10
    detail = (f"Y->S->Y worst relative error {worst:.1e} over 1000 matrices; gm=0 networks: "
              f"max singular value {sig:.12f}, max |S12-S21| {recip:.1e}")
    return ok, detail


def test_two_port_math(capsys):
    check("7 two-port conversions", *two_port(), capsys)


# --- 8. determinism and external plumbing ------------------------------------

def _workspace(root: Path, out: str) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    iv_sweep(TRUE_DC, VGS_GRID, VDS_GRID).to_csv(root / "iv.csv")
    (root / "dut.s2p").write_text(write_touchstone(s_params(TRUE_RF, FREQS)))
    cfg = root / f"{out}.toml"
    cfg.write_text(f'device = "DUT1"\nseed = 11\nout_dir = "{out}"\n\n[inputs]\niv_csv = "iv.csv"\n'
                   f'sparams = "dut.s2p"\n\n[optimizer]\nn_startup = 10\nbatch_size = 10\nmax_batches = 4\n')
    return cfg


def _numeric_report(path: Path) -> dict:
    data = json.loads(path.read_text())
    data.pop("wall_time_s")
    return data


def plumbing(tmp: Path):
    notes = []
    # same config and seed twice
    outs = []
    for name in ("a", "b"):
        cfg = load_config(_workspace(tmp / name, "out"))
        rep = run_pipeline(cfg)
        outs.append(((cfg.out_dir / "DUT1.cir").read_bytes(), _numeric_report(cfg.out_dir / "report.json"), rep.ok))
    determinism = outs[0][0] == outs[1][0] and outs[0][1] == outs[1][1] and outs[0][2] and outs[1][2]
    notes.append(f"determinism {'ok' if determinism else 'BROKEN'}")

    # external mock against the in-process surrogate, small budget
    small = OptimizerConfig(n_startup=4, batch_size=2, max_batches=2, rng_seed=5)
    iv = iv_sweep(TRUE_DC, VGS_GRID, VDS_GRID)
    sp = s_params(TRUE_RF, FREQS)
    ext = ExternalEvaluator(MOCKSIM, timeout=60)
    same = True
    for stage, data in ((run_dc_stage, iv), (run_rf_stage, sp)):
        a, b = stage(data, small), stage(data, small, ext)
        ta = [(t.loss, t.batch, tuple(t.theta)) for t in a.history]
        tb = [(t.loss, t.batch, tuple(t.theta)) for t in b.history]
        same &= ta == tb and a.nrmse_pct == b.nrmse_pct
    notes.append(f"mock differential {'exact' if same else 'MISMATCH'}")

    # failure injection: nonzero exit and timeout
    space = build_default_space()[0]
    tiny = OptimizerConfig(n_startup=6, batch_size=3, max_batches=1, rng_seed=1)
    injected = True
    for flag, timeout in (("--fail-when VOFF>-2.5", 60.0), ("--hang-when VOFF>-2.5", 5.0)):
        ev = ExternalEvaluator(f"{MOCKSIM} {flag}", timeout=timeout)
        res = run_dc_stage(iv, tiny, ev, space)
        losses = [t.loss for t in res.history]
        n_inf = sum(math.isinf(v) for v in losses)
        injected &= res.iterations == tiny.budget and 0 < n_inf < len(losses)
        notes.append(f"{flag.split()[0]}: {n_inf}/{len(losses)} trials +inf, run completed")
    return determinism and same and injected, "; ".join(notes)


def test_determinism_and_plumbing(tmp_path, capsys):
    check("8 determinism and external plumbing", *plumbing(tmp_path), capsys)


if __name__ == "__main__":
    import tempfile

    results = []
    for name, fn in (("1 synthetic DC recovery", dc_recovery), ("2 synthetic RF recovery", rf_recovery),
                     ("3 focusing ablation", ablation), ("4 formula-level examples", unit_examples),
                     ("5 datasheet S11 table", datasheet_table), ("6 digitization round trip", digitize_round_trip),
                     ("7 two-port conversions", two_port)):
        ok, detail = fn()
        report(name, ok, detail)
        results.append(ok)
    with tempfile.TemporaryDirectory() as d:
        ok, detail = plumbing(Path(d))
    report("8 determinism and external plumbing", ok, detail)
    results.append(ok)
    sys.exit(0 if all(results) else 1)
