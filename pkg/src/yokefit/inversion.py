"""Parameter identification by box-constrained particle swarm optimization.

The objective sums squared B_y mismatches between observed data and forward
solves over all probes and current levels; the swarm searches the KLE
parameter box.  Everything is seed-deterministic: particle evaluations are
independent and the best-reduction runs in fixed particle order, so results
do not depend on evaluation parallelism.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, IdentificationError, NumericalError, TableError
from .kle import MaterialModel
from .magnetostatics.solver import (FemSystem, build_nu_table, probe_b,
                                    solve_nonlinear)

#: objective value assigned to a particle whose forward solve diverged
DIVERGENCE_SENTINEL = 1e6

F_REL_FLOOR = 10.0            # A/m below which the relative error is undefined
E_REL_GRID_SIZE = 100


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservationSet:
    """B_y observations on a probes x currents grid."""

    probes: np.ndarray         # (P, 2) positions in meters
    currents: np.ndarray       # (N,) strictly increasing, amperes
    data: np.ndarray           # (N, P) B_y in tesla
    provenance: str = "external"

    def __post_init__(self):
        probes = np.atleast_2d(np.asarray(self.probes, dtype=np.float64))
        currents = np.asarray(self.currents, dtype=np.float64)
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "probes", probes)
        object.__setattr__(self, "currents", currents)
        object.__setattr__(self, "data", data)
        if np.any(np.diff(currents) <= 0):
            raise ValueError("current levels must be strictly increasing")
        if data.shape != (currents.size, probes.shape[0]):
            raise ValueError(f"data shape {data.shape} does not match "
                             f"{currents.size} currents x {probes.shape[0]} probes")
        if not np.all(np.isfinite(data)):
            raise ValueError("observation data contains non-finite values")


def save_observations(obs: ObservationSet, path) -> None:
    """CSV rows ``current_A,x_m,y_m,By_T``, grouped by current level."""
    lines = ["current_A,x_m,y_m,By_T"]
    for n, cur in enumerate(obs.currents):
        for p, (x, y) in enumerate(obs.probes):
            lines.append(f"{float(cur)!r},{float(x)!r},{float(y)!r},"
                         f"{float(obs.data[n, p])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_observations(path, provenance: str = "external") -> ObservationSet:
    path = Path(path)
    probes = []
    probe_index = {}
    rows = []
    header_seen = False
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != "current_A,x_m,y_m,By_T":
                raise TableError(f"{path}:{lineno}: expected header "
                                 f"'current_A,x_m,y_m,By_T', got '{line}'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TableError(f"{path}:{lineno}: expected 4 fields, "
                             f"got {len(parts)}")
        try:
            cur, x, y, by = (float(v) for v in parts)
        except ValueError as exc:
            raise TableError(f"{path}:{lineno}: {exc}") from None
        key = (x, y)
        if key not in probe_index:
            probe_index[key] = len(probes)
            probes.append(key)
        rows.append((cur, probe_index[key], by))
    if not rows:
        raise TableError(f"{path}: no observation rows")
    currents = sorted({r[0] for r in rows})
    data = np.full((len(currents), len(probes)), np.nan)
    cur_index = {c: i for i, c in enumerate(currents)}
    for cur, p, by in rows:
        data[cur_index[cur], p] = by
    if np.any(np.isnan(data)):
        raise TableError(f"{path}: incomplete currents x probes table")
    return ObservationSet(probes=np.array(probes), currents=np.array(currents),
                          data=data, provenance=provenance)


def training_currents(c_min: float, c_max: float, n: int = 8) -> np.ndarray:
    """n log-spaced excitation levels across [c_min, c_max]."""
    return np.geomspace(c_min, c_max, n)


def validation_currents(c_min: float, c_max: float, n: int = 8,
                        n_above: int = 2) -> np.ndarray:
    """Training levels plus extrapolation levels above the training maximum."""
    extra = c_max * (1.15 ** np.arange(1, n_above + 1))
    return np.concatenate([training_currents(c_min, c_max, n), extra])


def draw_ground_truth(model: MaterialModel, seed: int) -> np.ndarray:
    """Seeded interior point of the box: component-wise uniform in the
    [0.3, 0.7] span of the admissible interval, away from the bounds."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.3, 0.7, size=model.M)
    return model.y_min + u * (model.y_max - model.y_min)


# ---------------------------------------------------------------------------
# Forward objective
# ---------------------------------------------------------------------------

class ForwardObjective:
    """g(y) = sum_{p,n} (By_data - By_model)^2 with per-(y, current) caching.

    Forward solves sweep the currents in ascending order, warm-starting each
    level from the previous one.  Divergent sweeps yield the sentinel value
    and are flagged, never raised, so one bad particle cannot abort a search.
    """

    def __init__(self, obs: ObservationSet, model: MaterialModel,
                 system: FemSystem, tikhonov_a: float = 0.0,
                 solver_options: dict | None = None):
        self.obs = obs
        self.model = model
        self.system = system
        self.tikhonov_a = float(tikhonov_a)
        self.solver_options = dict(solver_options or {})
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.forward_solves = 0
        self.cache_hits = 0
        self.evaluations = 0
        self.divergences = 0
        cov = np.atleast_2d(model.y_cov)
        try:
            self._cov_inv = np.linalg.inv(cov)
        except np.linalg.LinAlgError:
            self._cov_inv = np.linalg.inv(cov + 1e-10 * np.eye(cov.shape[0]))

    def penalty(self, y: np.ndarray) -> float:
        d = np.asarray(y, dtype=np.float64) - self.model.y_mean
        return float(d @ self._cov_inv @ d)

    def sweep(self, y: np.ndarray) -> np.ndarray:
        """(N, P) table of model B_y at the observation grid."""
        y = np.asarray(y, dtype=np.float64)
        key = y.tobytes()
        out = np.empty((self.obs.currents.size, self.obs.probes.shape[0]))
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            with self._lock:
                self.cache_hits += self.obs.currents.size
            return cached.copy()
        table = build_nu_table(self.model.curve(y))
        a_prev = None
        for n, cur in enumerate(self.obs.currents):
            sol = solve_nonlinear(self.system, table, float(cur), a0=a_prev,
                                  **self.solver_options)
            a_prev = sol.a
            out[n] = probe_b(sol, self.obs.probes)[:, 1]
        with self._lock:
            self.forward_solves += self.obs.currents.size
            self._cache[key] = out.copy()
        return out

    def data_misfit(self, y) -> tuple[float, bool]:
        """(g, diverged); g is the sentinel when any forward solve failed."""
        with self._lock:
            self.evaluations += 1
        try:
            by = self.sweep(y)
        except (DivergenceError, NumericalError):
            with self._lock:
                self.divergences += 1
            return DIVERGENCE_SENTINEL, True
        return float(np.sum((self.obs.data - by) ** 2)), False

    def __call__(self, y) -> float:
        g, diverged = self.data_misfit(y)
        if diverged:
            return g
        if self.tikhonov_a != 0.0:
            g += self.tikhonov_a * self.penalty(y)
        return g


def objective(y, obs: ObservationSet, model: MaterialModel,
              system: FemSystem, **solver_options) -> float:
    """One-shot data misfit g(y) in tesla^2."""
    fo = ForwardObjective(obs, model, system, solver_options=solver_options)
    g, diverged = fo.data_misfit(y)
    if diverged:
        return DIVERGENCE_SENTINEL
    return g


def objective_regularized(y, obs: ObservationSet, model: MaterialModel,
                          system: FemSystem, a: float,
                          **solver_options) -> float:
    """Data misfit plus a times the Mahalanobis distance from the sample mean."""
    if a < 0:
        raise ValueError(f"regularization weight must be >= 0, got {a}")
    fo = ForwardObjective(obs, model, system, tikhonov_a=a,
                          solver_options=solver_options)
    return fo(y)


# ---------------------------------------------------------------------------
# Particle swarm optimizer
# ---------------------------------------------------------------------------

@dataclass
class PsoConfig:
    swarm_size: int = 24
    iterations: int = 60
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    velocity_clamp: float = 0.5     # fraction of the box width per component
    seed: int = 0
    early_stop_tol: float = 1e-10
    early_stop_window: int = 10


@dataclass
class PsoResult:
    x: np.ndarray
    f: float
    history: list                  # global best after init and each iteration
    iterations: int
    evaluations: int


def reflect_into_box(x: np.ndarray, v: np.ndarray, lb: np.ndarray,
                     ub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold positions back into [lb, ub] by reflection; reflected components
    get their velocity sign flipped."""
    width = ub - lb
    out_low = x < lb
    out_high = x > ub
    z = np.mod(x - lb, 2.0 * width)
    pos = lb + np.where(z <= width, z, 2.0 * width - z)
    vel = np.where(out_low | out_high, -v, v)
    return pos, vel


def pso_minimize(func, lb, ub, config: PsoConfig,
                 threads: int = 1, iteration_callback=None) -> PsoResult:
    """Global-best PSO over a box; deterministic for a fixed seed.

    ``func`` maps a 1-D parameter vector to a scalar.  With ``threads > 1``
    particle evaluations run concurrently but bests are still reduced in
    particle-index order.
    """
    lb = np.asarray(lb, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    if lb.shape != ub.shape or np.any(ub <= lb):
        raise ValueError("bounds must satisfy lb < ub componentwise")
    rng = np.random.default_rng(config.seed)
    S, D = config.swarm_size, lb.size
    vmax = config.velocity_clamp * (ub - lb)

    x = lb + rng.random((S, D)) * (ub - lb)
    v = rng.uniform(-1.0, 1.0, (S, D)) * vmax

    def evaluate(positions):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return np.array(list(pool.map(func, positions)))
        return np.array([func(p) for p in positions])

    fvals = evaluate(x)
    n_evals = S
    pbest = x.copy()
    pbest_f = fvals.copy()
    gi = int(np.argmin(pbest_f))
    gbest = pbest[gi].copy()
    gbest_f = float(pbest_f[gi])
    history = [gbest_f]
    if iteration_callback is not None:
        iteration_callback(0, fvals)

    it = 0
    for it in range(1, config.iterations + 1):
        rp = rng.random((S, D))
        rg = rng.random((S, D))
        v = (config.inertia * v + config.cognitive * rp * (pbest - x)
             + config.social * rg * (gbest - x))
        v = np.clip(v, -vmax, vmax)
        x, v = reflect_into_box(x + v, v, lb, ub)
        fvals = evaluate(x)
        n_evals += S
        improved = fvals < pbest_f
        pbest[improved] = x[improved]
        pbest_f[improved] = fvals[improved]
        gi = int(np.argmin(pbest_f))
        if pbest_f[gi] < gbest_f:
            gbest = pbest[gi].copy()
            gbest_f = float(pbest_f[gi])
        history.append(gbest_f)
        if iteration_callback is not None:
            iteration_callback(it, fvals)
        w = config.early_stop_window
        if len(history) > w and history[-1 - w] - history[-1] < config.early_stop_tol:
            break
    return PsoResult(x=gbest, f=gbest_f, history=history, iterations=it,
                     evaluations=n_evals)


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------

@dataclass
class IdentificationResult:
    y_hat: np.ndarray
    objective_value: float
    history: list
    iterations: int
    evaluations: int               # objective evaluations
    forward_solves: int
    cache_hits: int
    divergences: int
    seed: int
    tikhonov_a: float


def identify(obs: ObservationSet, model: MaterialModel, system: FemSystem,
             pso: PsoConfig, tikhonov_a: float = 0.0, threads: int = 1,
             solver_options: dict | None = None) -> IdentificationResult:
    """Recover the KLE parameter vector from an observation set.

    Raises IdentificationError when every particle diverges for three
    consecutive iterations.
    """
    fo = ForwardObjective(obs, model, system, tikhonov_a=tikhonov_a,
                          solver_options=solver_options)
    state = {"streak": 0}

    def on_iteration(it, fvals):
        if np.all(fvals >= DIVERGENCE_SENTINEL):
            state["streak"] += 1
        else:
            state["streak"] = 0
        if state["streak"] >= 3:
            raise IdentificationError(
                f"all {fvals.size} particles diverged for 3 consecutive "
                f"iterations (at iteration {it}); "
                f"{fo.divergences} divergent evaluations total")

    result = pso_minimize(fo, model.y_min, model.y_max, pso, threads=threads,
                          iteration_callback=on_iteration)
    return IdentificationResult(
        y_hat=result.x, objective_value=result.f, history=result.history,
        iterations=result.iterations, evaluations=fo.evaluations,
        forward_solves=fo.forward_solves, cache_hits=fo.cache_hits,
        divergences=fo.divergences, seed=pso.seed, tikhonov_a=tikhonov_a)


# ---------------------------------------------------------------------------
# Error diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ErrorMetrics:
    b_grid: np.ndarray             # (G,) flux-density evaluation points
    e_rel: np.ndarray              # (G,) NaN where the reference is ~ 0
    e_abs: np.ndarray              # (N, P) against the validation set
    currents: np.ndarray
    probes: np.ndarray

    @property
    def max_e_rel(self) -> float:
        return float(np.nanmax(self.e_rel))

    @property
    def max_e_abs(self) -> float:
        return float(np.max(self.e_abs))


def error_metrics(y_hat, y0, model: MaterialModel,
                  validation: ObservationSet, system: FemSystem,
                  n_grid: int = E_REL_GRID_SIZE,
                  f_floor: float = F_REL_FLOOR,
                  solver_options: dict | None = None) -> ErrorMetrics:
    """Curve-space relative error and field-space absolute error.

    e_rel compares the identified and ground-truth curves pointwise on a B
    grid over (0, B_L], skipping points where the reference is below
    ``f_floor`` (relative error undefined near H = 0).  e_abs reruns the
    forward model at ``y_hat`` on the validation grid, including currents
    above the training range, and tabulates |By - By_data|.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    b_grid = np.linspace(model.b_max / n_grid, model.b_max, n_grid)
    f_ref = model.evaluate(y0, b_grid)
    f_hat = model.evaluate(y_hat, b_grid)
    e_rel = np.where(f_ref >= f_floor,
                     np.abs(f_hat - f_ref) / np.where(f_ref >= f_floor, f_ref, 1.0),
                     np.nan)

    fo = ForwardObjective(validation, model, system,
                          solver_options=solver_options)
    by = fo.sweep(y_hat)
    e_abs = np.abs(by - validation.data)
    return ErrorMetrics(b_grid=b_grid, e_rel=e_rel, e_abs=e_abs,
                        currents=validation.currents.copy(),
                        probes=validation.probes.copy())
