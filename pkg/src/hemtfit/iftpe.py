"""Tree-structured Parzen estimator with iterative spatial/resolution focusing.

The optimizer works in *internal* coordinates: identity for linear
parameters, log10 for log-scaled ones.  Windows, grids and kernel densities
all live in that space; the objective always receives physical values.

Typical use::

    space = SearchSpace([ParamSpec("x", -5, 5), ParamSpec("k", 1e-3, 1e2, "log10")])
    best_theta, best_loss, history = optimize(objective, space, OptimizerConfig(rng_seed=3))
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels

SCALES = ("linear", "log10")
DENSITY_FLOOR = 1e-12
# relative to the uniform density of the current window
PROPOSAL_FLOOR = 1e-12
BANDWIDTH_FLOOR = 1e-3
MAX_REJECTIONS = 100


class InsufficientHistoryError(ValueError):
    """Raised when the history cannot be split into good and bad trials."""


class EmptyWindowError(ValueError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if not self.name or not self.name.isidentifier():
            raise ValueError(f"parameter name must be an identifier, got {self.name!r}")
        if self.scale not in SCALES:
            raise ValueError(f"{self.name}: scale must be one of {SCALES}, got {self.scale!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError(f"{self.name}: bounds must be finite")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper ({self.lower} >= {self.upper})")
        if self.scale == "log10" and self.lower <= 0:
            raise ValueError(f"{self.name}: log10 scale requires lower > 0")

    @property
    def is_log(self) -> bool:
        return self.scale == "log10"


class SearchSpace:
    """Ordered, named box of hard bounds."""

    def __init__(self, specs: Sequence[ParamSpec]):
        specs = tuple(specs)
        if not specs:
            raise ValueError("search space needs at least one parameter")
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")
        self.specs = specs
        self.names = tuple(names)
        self._log = np.array([s.is_log for s in specs])
        self.lower = self.to_internal([s.lower for s in specs])
        self.upper = self.to_internal([s.upper for s in specs])

    @property
    def dim(self) -> int:
        return len(self.specs)

    def __len__(self):
        return self.dim

    def __iter__(self):
        return iter(self.specs)

    def __eq__(self, other):
        return isinstance(other, SearchSpace) and self.specs == other.specs

    def __repr__(self):
        return f"SearchSpace({list(self.specs)!r})"

    def to_internal(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return np.where(self._log, np.log10(np.where(self._log, theta, 1.0)), theta)

    def to_external(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(self._log, 10.0 ** np.where(self._log, x, 0.0), x)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=np.float64)
        lo = np.array([s.lower for s in self.specs])
        hi = np.array([s.upper for s in self.specs])
        return bool(np.all(theta >= lo) and np.all(theta <= hi))

    def as_dict(self, theta) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, theta)}


@dataclass
class Trial:
    theta: np.ndarray
    loss: float
    batch: int
    x: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        # linear-scale spaces use theta as the internal coordinate
        if self.x is None:
            self.x = np.asarray(self.theta, dtype=float)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.loss)


class History:
    """Append-only record of evaluated trials."""

    def __init__(self, trials: Sequence[Trial] = ()):
        self._trials: list[Trial] = []
        for t in trials:
            self.append(t)

    def append(self, trial: Trial) -> None:
        if not (trial.loss >= 0 or math.isinf(trial.loss)) or math.isnan(trial.loss):
            raise ValueError(f"loss must be >= 0 or +inf, got {trial.loss}")
        self._trials.append(trial)

    def __len__(self):
        return len(self._trials)

    def __iter__(self):
        return iter(self._trials)

    def __getitem__(self, i):
        return self._trials[i]

    @property
    def trials(self) -> list[Trial]:
        return list(self._trials)

    @property
    def losses(self) -> np.ndarray:
        return np.array([t.loss for t in self._trials], dtype=np.float64)

    @property
    def n_finite(self) -> int:
        return sum(1 for t in self._trials if t.finite)

    def best(self) -> Trial:
        """Lowest-loss trial; the earliest one wins ties."""
        if not self._trials:
            raise InsufficientHistoryError("history is empty")
        return self._trials[int(np.argmin(self.losses))]

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.losses)

    def to_csv(self, path, names: Sequence[str]) -> None:
        write_trace(self, names, path)


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for :func:`optimize`.

    ``delta_init = 0`` switches focusing off entirely: the window stays at the
    initial hard-bound box for the whole run (plain TPE).
    """

    gamma: float = 0.25
    n_startup: int = 20
    batch_size: int = 20
    max_batches: int = 25
    delta_init: float = 0.30
    alpha_decay: float = 0.15
    n_grid: int = 200
    n_candidates: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.n_startup < 2:
            raise ValueError("n_startup must be >= 2")
        if self.batch_size < 1 or self.max_batches < 1:
            raise ValueError("batch_size and max_batches must be >= 1")
        if not 0.0 <= self.delta_init < 1.0:
            raise ValueError("delta_init must be in (0, 1), or 0 to disable focusing")
        if self.alpha_decay <= 0:
            raise ValueError("alpha_decay must be > 0")
        if self.n_grid < 2:
            raise ValueError("n_grid must be >= 2")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    @property
    def budget(self) -> int:
        return self.n_startup + self.batch_size * self.max_batches

    @property
    def focusing(self) -> bool:
        return self.delta_init > 0.0


@dataclass(frozen=True)
class FocusWindow:
    """Search window ``[center - range, center + range]`` clipped to the hard bounds.

    ``lower``/``upper`` are the clipped edges; ``step`` is the grid spacing
    (clipped width / n_grid).  All vectors are in internal coordinates.
    """

    center: np.ndarray
    range: np.ndarray
    step: np.ndarray
    batch: int
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, center, range_, space: SearchSpace, n_grid: int, batch: int = 0) -> "FocusWindow":
        center = np.asarray(center, dtype=np.float64).copy()
        range_ = np.asarray(range_, dtype=np.float64).copy()
        if center.shape != (space.dim,) or range_.shape != (space.dim,):
            raise ValueError("center/range dimension does not match the search space")
        if np.any(range_ <= 0):
            raise ValueError("window range must be componentwise > 0")
        lower = np.maximum(center - range_, space.lower)
        upper = np.minimum(center + range_, space.upper)
        if np.any(upper <= lower):
            raise EmptyWindowError("window does not intersect the hard bounds")
        step = (upper - lower) / n_grid
        return cls(center, range_, step, batch, lower, upper)

    @classmethod
    def initial(cls, space: SearchSpace, n_grid: int) -> "FocusWindow":
        center = 0.5 * (space.lower + space.upper)
        return cls.build(center, 0.5 * (space.upper - space.lower), space, n_grid, 0)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class DensityModel:
    points: np.ndarray
    bandwidths: np.ndarray
    floor: float = DENSITY_FLOOR

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        bw = np.atleast_1d(np.asarray(self.bandwidths, dtype=np.float64))
        if pts.shape[0] == 0:
            raise ValueError("density model needs at least one support point")
        if bw.shape != (pts.shape[1],) or np.any(bw <= 0):
            raise ValueError("bandwidths must be positive, one per dimension")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bandwidths", bw)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional input, got {x.shape[1]}")
        raw = _kernels.kde_logpdf(x, self.points, self.bandwidths)
        return np.maximum(raw, math.log(self.floor))


def kde_density(model: DensityModel, x) -> float:
    """Mixture density at a single point, never below ``model.floor``."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a {model.dim}-vector, got shape {x.shape}")
    raw = float(_kernels.kde_logpdf(x[None, :], model.points, model.bandwidths)[0])
    return max(math.exp(raw), model.floor)


def scott_bandwidths(points: np.ndarray, width: np.ndarray) -> np.ndarray:
    n, d = points.shape
    sigma = points.std(axis=0) if n > 1 else np.zeros(d)
    return np.maximum(sigma * n ** (-1.0 / (d + 4)), BANDWIDTH_FLOOR * width)


def partition(history: History, gamma: float) -> tuple[list[Trial], list[Trial]]:
    """Split into the ``ceil(gamma * n_finite)`` best trials and the rest."""
    trials = list(history)
    finite = [i for i, t in enumerate(trials) if t.finite]
    if len(finite) < 2:
        raise InsufficientHistoryError(f"need >= 2 finite trials, have {len(finite)}")
    # round() guards against 0.3 * 10 = 3.0000000000000004
    n_good = max(1, math.ceil(round(gamma * len(finite), 9)))
    ranked = sorted(finite, key=lambda i: (trials[i].loss, i))
    good_idx = set(ranked[:n_good])
    good = [trials[i] for i in ranked[:n_good]]
    bad = [t for i, t in enumerate(trials) if i not in good_idx]
    return good, bad


def acquisition_score(l_density: float, g_density: float, gamma: float) -> float:
    if l_density <= 0 or g_density <= 0:
        raise ValueError("densities must be positive")
    return 1.0 / ((1.0 - gamma) * (g_density / l_density) + gamma)


def quantize(x, window: FocusWindow) -> np.ndarray:
    """Snap to the window grid anchored at the clipped lower edge."""
    x = np.asarray(x, dtype=np.float64)
    k = np.rint((x - window.lower) / window.step)
    return np.clip(window.lower + k * window.step, window.lower, window.upper)


def contraction_rate(k: int, delta_init: float, alpha_decay: float) -> float:
    if k < 0:
        raise ValueError("batch index must be >= 0")
    return delta_init * math.exp(-alpha_decay * k)


def update_window(window: FocusWindow, best_x, config: OptimizerConfig, space: SearchSpace) -> FocusWindow:
    """Recentre on ``best_x`` and contract the range by the batch's rate."""
    best_x = np.asarray(best_x, dtype=np.float64)
    if np.any(best_x < space.lower) or np.any(best_x > space.upper):
        raise ValueError("best point lies outside the hard bounds")
    delta = contraction_rate(window.batch, config.delta_init, config.alpha_decay)
    return FocusWindow.build(best_x, window.range * (1.0 - delta), space, config.n_grid, window.batch + 1)


def _sample_truncated(model: DensityModel, window: FocusWindow, m: int, rng: np.random.Generator) -> np.ndarray:
    d = model.dim
    out = np.empty((m, d))
    pending = np.arange(m)
    for _ in range(MAX_REJECTIONS):
        if pending.size == 0:
            break
        comp = rng.integers(0, model.points.shape[0], size=pending.size)
        draw = model.points[comp] + model.bandwidths * rng.standard_normal((pending.size, d))
        inside = np.all((draw >= window.lower) & (draw <= window.upper), axis=1)
        out[pending[inside]] = draw[inside]
        pending = pending[~inside]
    if pending.size:
        out[pending] = rng.uniform(window.lower, window.upper, size=(pending.size, d))
    return out


def build_models(history: History, window: FocusWindow, gamma: float,
                 pending: Sequence[np.ndarray] = ()) -> tuple[DensityModel, DensityModel]:
    """Good/bad densities over the trials that fall inside ``window``.

    Falls back to the whole history when fewer than two finite trials lie in
    the window.  Points already proposed in the current batch (``pending``)
    join the bad set so a batch spreads out instead of repeating itself.
    Both densities share one Scott bandwidth so l/g is a local good-fraction
    estimate rather than a comparison of two differently smoothed clouds.
    """
    inside = History([t for t in history if window.contains(t.x)])
    good, bad = partition(inside if inside.n_finite >= 2 else history, gamma)
    width = window.width
    floor = PROPOSAL_FLOOR / float(np.prod(width))
    gx = np.array([t.x for t in good])
    bx = [t.x for t in bad] + [np.asarray(p, dtype=np.float64) for p in pending]
    bx = np.array(bx) if bx else window.center[None, :]
    bw = scott_bandwidths(np.vstack([gx, bx]), width)
    return DensityModel(gx, bw, floor), DensityModel(bx, bw, floor)


def propose(history: History, window: FocusWindow, space: SearchSpace, config: OptimizerConfig,
            rng: np.random.Generator, pending: Sequence[np.ndarray] = ()) -> np.ndarray:
    """Next grid point (internal coordinates) maximising l/g inside the window.

    ``config.n_candidates`` draws from l, truncated to the window by
    rejection (uniform fallback after 100 misses), are scored and the best
    one is quantized.
    """
    if np.any(window.upper <= window.lower):
        raise EmptyWindowError("window is empty")
    l_model, g_model = build_models(history, window, config.gamma, pending)
    cand = _sample_truncated(l_model, window, config.n_candidates, rng)
    # argmax of the acquisition score == argmax of log l - log g
    ratio = l_model.log_density(cand) - g_model.log_density(cand)
    return quantize(cand[int(np.argmax(ratio))], window)


class OptimizeResult(NamedTuple):
    best_theta: np.ndarray
    best_loss: float
    history: History


def _safe_eval(objective: Callable, theta: np.ndarray) -> float:
    try:
        loss = float(objective(theta))
    except Exception:
        return math.inf
    if math.isnan(loss) or loss < 0:
        return math.inf
    return loss


def _evaluate(objective, thetas, pool):
    if pool is None:
        return [_safe_eval(objective, t) for t in thetas]
    return list(pool.map(lambda t: _safe_eval(objective, t), thetas))


def optimize(objective: Callable[[np.ndarray], float], space: SearchSpace,
             config: OptimizerConfig = OptimizerConfig(), n_workers: int = 1,
             callback: Callable[[int, History, FocusWindow], None] | None = None) -> OptimizeResult:
    """Minimise ``objective`` over ``space``.

    Startup trials are tagged batch 0; focused batch ``k`` (0-based) is
    tagged ``k + 1``.  Proposals inside a batch are drawn sequentially from
    one seeded stream against the history as it stood at the start of the
    batch, so evaluations may run on ``n_workers`` threads without changing
    the result.  Objective exceptions and NaNs are recorded as ``inf``.
    """
    rng = np.random.default_rng(config.rng_seed)
    window = FocusWindow.initial(space, config.n_grid)
    history = History()
    pool = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    try:
        xs = [quantize(rng.uniform(window.lower, window.upper), window) for _ in range(config.n_startup)]
        _record(history, space, xs, _evaluate(objective, [space.to_external(x) for x in xs], pool), 0)
        for k in range(config.max_batches):
            xs = []
            for _ in range(config.batch_size):
                try:
                    xs.append(propose(history, window, space, config, rng, xs))
                except InsufficientHistoryError:
                    xs.append(quantize(rng.uniform(window.lower, window.upper), window))
            _record(history, space, xs, _evaluate(objective, [space.to_external(x) for x in xs], pool), k + 1)
            if config.focusing:
                window = update_window(window, history.best().x, config, space)
            if callback is not None:
                callback(k, history, window)
    finally:
        if pool is not None:
            pool.shutdown()
    best = history.best()
    return OptimizeResult(best.theta.copy(), best.loss, history)


def _record(history, space, xs, losses, batch):
    for x, loss in zip(xs, losses):
        history.append(Trial(space.to_external(x), loss, batch, x))


TRACE_FIXED = ("trial", "batch", "loss")


def write_trace(history: History, names: Sequence[str], path) -> None:
    """Write ``trial,batch,loss,<names...>`` rows; infinite losses print as ``inf``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*TRACE_FIXED, *names])
        for i, t in enumerate(history):
            w.writerow([i, t.batch, repr(float(t.loss)), *(repr(float(v)) for v in t.theta)])


def read_trace(path) -> tuple[list[str], History]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:3]) != TRACE_FIXED:
        raise ValueError(f"{path}: not a trace file (header must start with {','.join(TRACE_FIXED)})")
    names = rows[0][3:]
    hist = History()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3 + len(names):
            raise ValueError(f"{path}:{lineno}: expected {3 + len(names)} columns, got {len(row)}")
        theta = np.array([float(v) for v in row[3:]])
        hist.append(Trial(theta, float(row[2]), int(row[1])))
    return names, hist
