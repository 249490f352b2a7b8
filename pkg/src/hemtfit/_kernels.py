"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``HEMTFIT_DISABLE_NUMBA`` is not set to a truthy value.  Every
kernel takes an explicit ``backend`` argument ("numba" or "numpy") so tests
and the benchmark can exercise both paths side by side.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

_DISABLED = os.environ.get("HEMTFIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED
DEFAULT_BACKEND = "numba" if USE_NUMBA else "numpy"

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
THERMAL_VOLTAGE = 0.02585  # V at 300 K

# dc solver status codes
DC_OK = 0
DC_NONCONVERGED = 1
DC_NONFINITE = 2

DC_MAX_ITER = 50
DC_MAX_HALVINGS = 20
DC_RTOL = 1e-9


def _njit(fn):
    if numba is None:
        return None
    return numba.njit(cache=True)(fn)


def _resolve(backend):
    backend = backend or DEFAULT_BACKEND
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


# ---------------------------------------------------------------------------
# Gaussian product-kernel mixture, log density
# ---------------------------------------------------------------------------

def _kde_logpdf_py(x, pts, bw):
    m, d = x.shape
    n = pts.shape[0]
    const = math.log(n)
    for j in range(d):
        const += math.log(bw[j]) + LOG_SQRT_2PI
    out = np.empty(m)
    buf = np.empty(n)
    for i in range(m):
        top = -np.inf
        for k in range(n):
            s = 0.0
            for j in range(d):
                z = (x[i, j] - pts[k, j]) / bw[j]
                s += z * z
            v = -0.5 * s
            buf[k] = v
            if v > top:
                top = v
        acc = 0.0
        for k in range(n):
            acc += math.exp(buf[k] - top)
        out[i] = top + math.log(acc) - const
    return out


_kde_logpdf_nb = _njit(_kde_logpdf_py)


def _kde_logpdf_np(x, pts, bw):
    z = (x[:, None, :] - pts[None, :, :]) / bw
    v = -0.5 * np.sum(z * z, axis=2)
    top = np.max(v, axis=1)
    acc = np.sum(np.exp(v - top[:, None]), axis=1)
    const = math.log(pts.shape[0]) + float(np.sum(np.log(bw))) + bw.shape[0] * LOG_SQRT_2PI
    return top + np.log(acc) - const


def kde_logpdf(x, pts, bw, backend=None):
    """Log of the equal-weight Gaussian product-kernel mixture at rows of ``x``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    bw = np.ascontiguousarray(bw, dtype=np.float64)
    if _resolve(backend) == "numba":
        return _kde_logpdf_nb(x, pts, bw)
    return _kde_logpdf_np(x, pts, bw)


# ---------------------------------------------------------------------------
# DC surrogate: closed form and damped fixed point on contact resistances
# ---------------------------------------------------------------------------

def _closed_scalar(vgs, vds, voff, nfac, kgain, ua, ub, delta, lam):
    # odd in vds so fixed-point overshoots past vds' < 0 stay well behaved
    nvt = nfac * THERMAL_VOLTAGE
    z = (vgs - voff) / nvt
    if z > 30.0:
        veff = nvt * (z + math.log1p(math.exp(-z)))
    else:
        veff = nvt * math.log1p(math.exp(z))
    if veff <= 0.0 or vds == 0.0:
        return 0.0
    r = abs(vds) / veff
    if r <= 1.0:
        vdeff = vds / (1.0 + r ** delta) ** (1.0 / delta)
    else:
        vdeff = math.copysign(veff, vds) / (1.0 + r ** (-delta)) ** (1.0 / delta)
    mu = 1.0 / (1.0 + ua * veff + ub * veff * veff)
    return kgain * mu * (veff * vdeff - 0.5 * vdeff * vdeff) * (1.0 + lam * abs(vds))


_closed_scalar_nb = _njit(_closed_scalar)


def _secant_step(slope):
    # damping 1/(1 - dF/dI) makes the update a secant step on F(I) - I
    if slope < 0.0 and math.isfinite(slope):
        return 1.0 / (1.0 - slope)
    return 1.0


_secant_step_nb = _njit(_secant_step)


def _make_dc_solver(closed, secant_step):
    def solve(vgs, vds, params, out, status):
        voff, nfac, kgain, ua, ub, delta, lam, rsc, rdc = (
            params[0], params[1], params[2], params[3], params[4],
            params[5], params[6], params[7], params[8],
        )
        rsum = rsc + rdc
        for n in range(vgs.shape[0]):
            vg = vgs[n]
            vd = vds[n]
            f = closed(vg, vd, voff, nfac, kgain, ua, ub, delta, lam)
            if rsc == 0.0 and rdc == 0.0:
                out[n] = f
                status[n] = DC_OK if math.isfinite(f) else DC_NONFINITE
                continue
            # F(I) decreases in I, so the root of F(I) - I lies between 0 and F(0)
            lo = min(0.0, f)
            hi = max(0.0, f)
            cur = 0.0
            res = f
            step = 1.0
            halvings = 0
            it = 0
            done = DC_NONCONVERGED
            while True:
                if not math.isfinite(res):
                    done = DC_NONFINITE
                    break
                if abs(res) <= DC_RTOL * max(abs(cur), abs(f)):
                    done = DC_OK
                    break
                if it >= DC_MAX_ITER:
                    break
                it += 1
                trial = cur + step * res
                if not (lo < trial < hi):
                    trial = 0.5 * (lo + hi)
                f_new = closed(vg - trial * rsc, vd - trial * rsum, voff, nfac, kgain, ua, ub, delta, lam)
                res_new = f_new - trial
                if not math.isfinite(res_new):
                    done = DC_NONFINITE
                    break
                if res_new > 0.0:
                    lo = trial
                else:
                    hi = trial
                if abs(res_new) < abs(res):
                    slope = (f_new - f) / (trial - cur)
                    cur = trial
                    f = f_new
                    res = res_new
                    step = secant_step(slope)
                else:
                    halvings += 1
                    if halvings > DC_MAX_HALVINGS:
                        break
                    step *= 0.5
            out[n] = cur
            status[n] = done
    return solve


_dc_solve_py = _make_dc_solver(_closed_scalar, _secant_step)
_dc_solve_nb = _njit(_make_dc_solver(_closed_scalar_nb, _secant_step_nb)) if HAVE_NUMBA else None


def _closed_np(vgs, vds, voff, nfac, kgain, ua, ub, delta, lam):
    nvt = nfac * THERMAL_VOLTAGE
    z = (vgs - voff) / nvt
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        big = z > 30.0
        veff = np.where(big, nvt * (z + np.log1p(np.exp(-np.abs(z)))), nvt * np.log1p(np.exp(np.minimum(z, 30.0))))
        live = (veff > 0.0) & (vds != 0.0)
        safe_veff = np.where(live, veff, 1.0)
        r = np.abs(vds) / safe_veff
        lo = r <= 1.0
        vdeff = np.where(
            lo,
            vds / (1.0 + r ** delta) ** (1.0 / delta),
            np.copysign(safe_veff, vds) / (1.0 + np.where(lo, 1.0, r) ** (-delta)) ** (1.0 / delta),
        )
        mu = 1.0 / (1.0 + ua * safe_veff + ub * safe_veff * safe_veff)
        cur = kgain * mu * (safe_veff * vdeff - 0.5 * vdeff * vdeff) * (1.0 + lam * np.abs(vds))
    return np.where(live, cur, 0.0)


def _dc_solve_np(vgs, vds, params):
    voff, nfac, kgain, ua, ub, delta, lam, rsc, rdc = (float(v) for v in params)
    args = (voff, nfac, kgain, ua, ub, delta, lam)
    f = _closed_np(vgs, vds, *args)
    n = vgs.shape[0]
    if rsc == 0.0 and rdc == 0.0:
        status = np.where(np.isfinite(f), DC_OK, DC_NONFINITE).astype(np.int64)
        return f, status
    rsum = rsc + rdc
    lo = np.minimum(0.0, f)
    hi = np.maximum(0.0, f)
    cur = np.zeros(n)
    res = f.copy()
    step = np.ones(n)
    halvings = np.zeros(n, dtype=np.int64)
    iters = np.zeros(n, dtype=np.int64)
    status = np.full(n, -1, dtype=np.int64)
    while True:
        active = status < 0
        bad = active & ~np.isfinite(res)
        status[bad] = DC_NONFINITE
        with np.errstate(invalid="ignore"):
            conv = active & ~bad & (np.abs(res) <= DC_RTOL * np.maximum(np.abs(cur), np.abs(f)))
        status[conv] = DC_OK
        capped = (status < 0) & (iters >= DC_MAX_ITER)
        status[capped] = DC_NONCONVERGED
        idx = np.flatnonzero(status < 0)
        if idx.size == 0:
            break
        iters[idx] += 1
        trial = cur[idx] + step[idx] * res[idx]
        outside = ~((lo[idx] < trial) & (trial < hi[idx]))
        trial = np.where(outside, 0.5 * (lo[idx] + hi[idx]), trial)
        f_new = _closed_np(vgs[idx] - trial * rsc, vds[idx] - trial * rsum, *args)
        res_new = f_new - trial
        nonfinite = ~np.isfinite(res_new)
        status[idx[nonfinite]] = DC_NONFINITE
        keep = ~nonfinite
        idx, trial, f_new, res_new = idx[keep], trial[keep], f_new[keep], res_new[keep]
        pos = res_new > 0.0
        lo[idx[pos]] = trial[pos]
        hi[idx[~pos]] = trial[~pos]
        accept = np.abs(res_new) < np.abs(res[idx])
        a = idx[accept]
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = (f_new[accept] - f[a]) / (trial[accept] - cur[a])
        cur[a] = trial[accept]
        f[a] = f_new[accept]
        res[a] = res_new[accept]
        ok_slope = np.isfinite(slope) & (slope < 0.0)
        step[a] = np.where(ok_slope, 1.0 / (1.0 - np.where(ok_slope, slope, 0.0)), 1.0)
        r = idx[~accept]
        halvings[r] += 1
        step[r] *= 0.5
        status[r[halvings[r] > DC_MAX_HALVINGS]] = DC_NONCONVERGED
    return cur, status


def dc_solve(vgs, vds, params, backend=None):
    """Drain current at each (vgs, vds) pair.

    ``params`` is ``[VOFF, NFACTOR, KGAIN, UA, UB, DELTA, LAMBDA, RSC, RDC]``.
    Returns ``(current, status)``; status is ``DC_OK`` where the fixed point
    converged.
    """
    vgs = np.ascontiguousarray(vgs, dtype=np.float64)
    vds = np.ascontiguousarray(vds, dtype=np.float64)
    params = np.ascontiguousarray(params, dtype=np.float64)
    if vgs.shape != vds.shape or vgs.ndim != 1:
        raise ValueError("vgs and vds must be 1-D arrays of equal length")
    if _resolve(backend) == "numba":
        out = np.empty(vgs.shape[0])
        status = np.empty(vgs.shape[0], dtype=np.int64)
        _dc_solve_nb(vgs, vds, params, out, status)
        return out, status
    return _dc_solve_np(vgs, vds, params)


def dc_closed_form(vgs, vds, params7):
    """Zero-resistance closed form on arrays (used for residual checks)."""
    vgs = np.asarray(vgs, dtype=np.float64)
    vds = np.asarray(vds, dtype=np.float64)
    return _closed_np(vgs, vds, *(float(v) for v in params7))


# ---------------------------------------------------------------------------
# Hough accumulator over (rho, theta) with 1 px / 1 degree bins
# ---------------------------------------------------------------------------

def _hough_py(ys, xs, cos_t, sin_t, diag, acc):
    for p in range(ys.shape[0]):
        y = ys[p]
        x = xs[p]
        for t in range(cos_t.shape[0]):
            rho = x * cos_t[t] + y * sin_t[t]
            r = int(math.floor(rho + 0.5)) + diag
            acc[r, t] += 1


_hough_nb = _njit(_hough_py)


def _hough_np(ys, xs, cos_t, sin_t, diag, acc):
    n_rho = acc.shape[0]
    for t in range(cos_t.shape[0]):
        r = np.floor(xs * cos_t[t] + ys * sin_t[t] + 0.5).astype(np.int64) + diag
        acc[:, t] += np.bincount(r, minlength=n_rho)


def hough_accumulate(mask, thetas_deg, backend=None):
    """Vote accumulator for the foreground pixels of a boolean ``mask``.

    Returns ``(acc, diag)``; row ``r`` of ``acc`` holds rho = r - diag.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    diag = int(math.ceil(math.hypot(h, w)))
    ys, xs = np.nonzero(mask)
    ys = ys.astype(np.float64)
    xs = xs.astype(np.float64)
    theta = np.deg2rad(np.asarray(thetas_deg, dtype=np.float64))
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    acc = np.zeros((2 * diag + 1, theta.shape[0]), dtype=np.int64)
    if _resolve(backend) == "numba":
        _hough_nb(ys, xs, cos_t, sin_t, diag, acc)
    else:
        _hough_np(ys, xs, cos_t, sin_t, diag, acc)
    return acc, diag
