"""Truncated Karhunen-Loeve model of a material-curve ensemble.

Pipeline: sample the fitted curves on a common grid, estimate mean and
covariance, solve the covariance eigenproblem (hat-function Galerkin with the
composite-trapezoid inner product, i.e. lumped mass), project the specimens
onto the leading modes and assemble the parameterized curve family

    f(y, s) = mean(s) + sum_m sqrt(lambda_m) * y_m * mode_m(s)

with an admissible parameter box shrunk until every box corner stays monotone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .curves import MonotoneCurve, fit_grid_curve
from .errors import EnsembleError, ModelConstructionError, NumericalError, OutOfBoxError

DEFAULT_GRID_SIZE = 200
DEFAULT_TRUNCATION = 4

#: monotonicity floor for df/ds, in A/m per tesla
DEFAULT_ALPHA = 1.0

_BOX_SHRINK = 0.9
_BOX_MAX_ITER = 50


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Composite-trapezoid quadrature weights on an ascending grid."""
    w = np.zeros(grid.size)
    dg = np.diff(grid)
    w[:-1] += 0.5 * dg
    w[1:] += 0.5 * dg
    return w


@dataclass(frozen=True)
class EnsembleStatistics:
    """Sample mean and covariance of the curve ensemble on a common grid."""

    grid: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    n_specimens: int

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    @property
    def trace(self) -> float:
        """Quadrature of Cov(s, s) over the interval, equals sum of all
        operator eigenvalues."""
        return float(self.weights @ np.diag(self.covariance))


def estimate_statistics(curves, N: int = DEFAULT_GRID_SIZE) -> EnsembleStatistics:
    """Pointwise sample mean and unbiased (1/(K-1)) covariance on an N-grid."""
    K = len(curves)
    if K < 2:
        raise EnsembleError(f"need at least 2 curves for statistics, got {K}")
    if N < 50:
        raise ValueError(f"grid size too small for quadrature, got N={N}")
    b_max = min(c.b_max for c in curves)
    grid = np.linspace(0.0, b_max, N)
    samples = np.stack([c.evaluate(grid) for c in curves])
    # center against the first specimen first: shift-invariant, and identical
    # ensembles then give an exactly zero covariance
    dev = samples - samples[0]
    centered = dev - dev.mean(axis=0)
    mean = samples[0] + dev.mean(axis=0)
    cov = centered.T @ centered / (K - 1)
    cov = 0.5 * (cov + cov.T)
    return EnsembleStatistics(grid=grid, mean=mean, covariance=cov,
                              n_specimens=K)


def full_spectrum(stats: EnsembleStatistics) -> np.ndarray:
    """All N operator eigenvalues (descending, unclipped), for the trace
    identity and the spectrum report."""
    sw = np.sqrt(stats.weights)
    sym = sw[:, None] * stats.covariance * sw[None, :]
    sym = 0.5 * (sym + sym.T)
    lam = scipy.linalg.eigh(sym, eigvals_only=True)
    return lam[::-1]


def solve_eigenproblem(stats: EnsembleStatistics, M_max: int):
    """Leading eigenpairs of the covariance integral operator.

    Galerkin discretization on hat functions with all inner products taken by
    composite trapezoid (lumped mass), so the discrete problem is the
    symmetrized quadrature-collocation system.  Returns ``[(lam, mode), ...]``
    with strictly decreasing positive eigenvalues and modes normalized to
    unit quadrature norm, sign-fixed so mode(B_L) >= 0.
    """
    N = stats.grid.size
    if not 1 <= M_max <= N:
        raise ValueError(f"M_max must be in [1, {N}], got {M_max}")
    w = stats.weights
    sw = np.sqrt(w)
    sym = sw[:, None] * stats.covariance * sw[None, :]
    sym = 0.5 * (sym + sym.T)
    lam, z = scipy.linalg.eigh(sym)
    if not np.all(np.isfinite(lam)):
        raise NumericalError("covariance eigensolver returned non-finite "
                             f"eigenvalues; trace={stats.trace:.3e}")
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    modes = (z[:, order] / sw[:, None]).T      # rows are modes on the grid
    pairs = []
    for m in range(M_max):
        if lam[m] <= 0.0:
            break
        mode = modes[m]
        if mode[-1] < 0.0:
            mode = -mode
        pairs.append((float(lam[m]), mode))
    for m in range(1, len(pairs)):
        if not pairs[m][0] < pairs[m - 1][0]:
            raise NumericalError(
                f"eigenvalues not strictly decreasing at index {m}: "
                f"{pairs[m - 1][0]:.6e} then {pairs[m][0]:.6e}")
    return pairs


@dataclass(frozen=True)
class MaterialModel:
    """Parameterized monotone material curve family f(y, s).

    Immutable; evaluation is pure and safe to share across workers.  Modes are
    piecewise linear on ``grid`` and continued past B_L by a ramp to zero over
    one further interval length, so extrapolated physics is governed by the
    mean curve alone.
    """

    grid: np.ndarray
    mean_curve: MonotoneCurve
    eigenvalues: np.ndarray        # (M,) strictly decreasing, positive
    modes: np.ndarray              # (M, N) values on grid
    y_min: np.ndarray
    y_max: np.ndarray
    y_samples: np.ndarray          # (K, M) specimen realizations
    y_mean: np.ndarray
    y_cov: np.ndarray
    alpha: float = DEFAULT_ALPHA

    @property
    def M(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def b_max(self) -> float:
        return float(self.grid[-1])

    @property
    def sqrt_eigenvalues(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)

    def mode_values(self, m: int, s) -> np.ndarray:
        """Mode m evaluated at s: linear interpolation on the grid, ramped to
        zero on (B_L, 2 B_L]."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        bl = self.b_max
        out = np.interp(s, self.grid, self.modes[m])
        over = s > bl
        if np.any(over):
            ramp = np.maximum(0.0, 1.0 - (s[over] - bl) / bl)
            out[over] = self.modes[m, -1] * ramp
        return out

    def mode_slopes(self, m: int, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        slopes = np.diff(self.modes[m]) / np.diff(self.grid)
        idx = np.clip(np.searchsorted(self.grid, s, side="right") - 1,
                      0, self.grid.size - 2)
        out = slopes[idx]
        bl = self.b_max
        out = np.where(s > bl, np.where(s < 2.0 * bl,
                                        -self.modes[m, -1] / bl, 0.0), out)
        return out

    def _box_tolerance(self) -> np.ndarray:
        return 1e-9 * (self.y_max - self.y_min) + 1e-30

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=np.float64)
        tol = self._box_tolerance()
        return bool(np.all(y >= self.y_min - tol) and np.all(y <= self.y_max + tol))

    def _check_box(self, y: np.ndarray):
        if y.shape != (self.M,):
            raise OutOfBoxError(f"parameter vector has shape {y.shape}, "
                                f"expected ({self.M},)")
        if not self.contains(y):
            raise OutOfBoxError(f"parameter vector {y.tolist()} outside box "
                                f"[{self.y_min.tolist()}, {self.y_max.tolist()}]")

    def evaluate(self, y, s):
        """f(y, s); raises OutOfBoxError for y outside the admissible box."""
        y = np.asarray(y, dtype=np.float64)
        self._check_box(y)
        arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        out = self.mean_curve.evaluate(arr).copy()
        for m in range(self.M):
            out += self.sqrt_eigenvalues[m] * y[m] * self.mode_values(m, arr)
        return float(out[0]) if np.ndim(s) == 0 else out

    def derivative(self, y, s):
        """df/ds at (y, s)."""
        y = np.asarray(y, dtype=np.float64)
        self._check_box(y)
        arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        out = self.mean_curve.derivative(arr).copy()
        for m in range(self.M):
            out += self.sqrt_eigenvalues[m] * y[m] * self.mode_slopes(m, arr)
        return float(out[0]) if np.ndim(s) == 0 else out

    def curve(self, y) -> "ParameterizedCurve":
        """Bind a parameter vector, giving a plain evaluable H(B) law."""
        y = np.asarray(y, dtype=np.float64)
        self._check_box(y)
        return ParameterizedCurve(self, y)


@dataclass(frozen=True)
class ParameterizedCurve:
    """f(y, .) with y fixed; satisfies the solver's material protocol."""

    model: MaterialModel
    y: np.ndarray

    @property
    def b_max(self) -> float:
        return self.model.b_max

    def evaluate(self, s):
        return self.model.evaluate(self.y, s)

    def derivative(self, s):
        return self.model.derivative(self.y, s)


def evaluate_model(model: MaterialModel, y, s):
    """Truncated-expansion evaluation, see MaterialModel.evaluate."""
    return model.evaluate(y, s)


def _corner_min_derivative(model_like, corner, dense_s):
    mean_d = model_like["mean_curve"].derivative(dense_s)
    total = mean_d.copy()
    contribs = []
    for m in range(corner.size):
        c = (np.sqrt(model_like["eigenvalues"][m]) * corner[m]
             * model_like["mode_slopes"](m, dense_s))
        contribs.append(c)
        total += c
    i = int(np.argmin(total))
    return float(total[i]), i, np.array([c[i] for c in contribs])


def build_model(stats: EnsembleStatistics, eigenpairs, M: int, curves,
                alpha: float = DEFAULT_ALPHA) -> MaterialModel:
    """Project specimens onto the leading M modes and bound the parameters.

    The parameter box starts at the componentwise min/max of the specimen
    realizations Y^k and is shrunk about the sample mean (offending component
    half-width times 0.9, at most 50 rounds) until the curve derivative
    exceeds ``alpha`` at every box corner; by the intermediate value theorem
    monotonicity then holds on the whole box.
    """
    if M < 1 or M > len(eigenpairs):
        raise ValueError(f"M must be in [1, {len(eigenpairs)}], got {M}")
    K = stats.n_specimens
    grid = stats.grid
    w = trapezoid_weights(grid)
    eigenvalues = np.array([lam for lam, _ in eigenpairs[:M]])
    modes = np.stack([mode for _, mode in eigenpairs[:M]])
    if np.any(eigenvalues <= 0.0):
        raise ValueError("all retained eigenvalues must be positive")

    samples = np.stack([c.evaluate(grid) for c in curves])
    centered = samples - stats.mean
    # Y^k_m = (1/sqrt(lam_m)) int (f_k - mean) b_m ds, trapezoid quadrature
    y_samples = (centered * w) @ modes.T / np.sqrt(eigenvalues)

    mean_curve = fit_grid_curve(grid, stats.mean)
    y_min = y_samples.min(axis=0)
    y_max = y_samples.max(axis=0)
    y_mean = y_samples.mean(axis=0)
    y_cov = np.atleast_2d(np.cov(y_samples, rowvar=False, ddof=1))

    # dense derivative sampling: knots plus 4 interior points per interval
    t = np.linspace(0.0, 1.0, 6)[1:-1]
    dense_s = np.sort(np.concatenate(
        [grid] + [grid[:-1] + t_i * np.diff(grid) for t_i in t]))

    model_like = {
        "mean_curve": mean_curve,
        "eigenvalues": eigenvalues,
        "mode_slopes": lambda m, s: _pl_slopes(grid, modes[m], s),
    }
    lo = y_min.copy()
    hi = y_max.copy()
    for _ in range(_BOX_MAX_ITER):
        worst = None
        for bits in range(2 ** M):
            corner = np.where([(bits >> m) & 1 for m in range(M)], hi, lo)
            dmin, i, contribs = _corner_min_derivative(model_like, corner, dense_s)
            if dmin <= alpha and (worst is None or dmin < worst[0]):
                worst = (dmin, corner.copy(), contribs)
        if worst is None:
            return MaterialModel(grid=grid, mean_curve=mean_curve,
                                 eigenvalues=eigenvalues, modes=modes,
                                 y_min=lo, y_max=hi, y_samples=y_samples,
                                 y_mean=y_mean, y_cov=y_cov, alpha=alpha)
        # shrink the component contributing most negatively at the violation
        offender = int(np.argmin(worst[2]))
        lo[offender] = y_mean[offender] - _BOX_SHRINK * (y_mean[offender] - lo[offender])
        hi[offender] = y_mean[offender] + _BOX_SHRINK * (hi[offender] - y_mean[offender])
    raise ModelConstructionError(
        f"box corner {worst[1].tolist()} still violates the monotonicity "
        f"floor {alpha} after {_BOX_MAX_ITER} shrink rounds "
        f"(min derivative {worst[0]:.3e})")


def _pl_slopes(grid, mode, s):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    slopes = np.diff(mode) / np.diff(grid)
    idx = np.clip(np.searchsorted(grid, s, side="right") - 1, 0, grid.size - 2)
    out = slopes[idx]
    bl = grid[-1]
    out = np.where(s > bl, np.where(s < 2.0 * bl, -mode[-1] / bl, 0.0), out)
    return out


# ---------------------------------------------------------------------------
# Serialization (single JSON document, lossless round trip)
# ---------------------------------------------------------------------------

def model_to_dict(model: MaterialModel) -> dict:
    return {
        "grid": model.grid.tolist(),
        "mean": model.mean_curve.values.tolist(),
        "mean_tangents": model.mean_curve.tangents.tolist(),
        "mean_extrapolation_slope": model.mean_curve.extrapolation_slope,
        "eigenvalues": model.eigenvalues.tolist(),
        "modes": model.modes.tolist(),
        "y_min": model.y_min.tolist(),
        "y_max": model.y_max.tolist(),
        "y_samples": model.y_samples.tolist(),
        "y_mean": model.y_mean.tolist(),
        "y_cov": model.y_cov.tolist(),
        "alpha": model.alpha,
    }


def model_from_dict(doc: dict) -> MaterialModel:
    grid = np.array(doc["grid"])
    mean_curve = MonotoneCurve(
        knots=grid, values=np.array(doc["mean"]),
        tangents=np.array(doc["mean_tangents"]),
        extrapolation_slope=float(doc["mean_extrapolation_slope"]))
    return MaterialModel(
        grid=grid, mean_curve=mean_curve,
        eigenvalues=np.array(doc["eigenvalues"]),
        modes=np.array(doc["modes"]),
        y_min=np.array(doc["y_min"]), y_max=np.array(doc["y_max"]),
        y_samples=np.array(doc["y_samples"]),
        y_mean=np.array(doc["y_mean"]),
        y_cov=np.atleast_2d(np.array(doc["y_cov"])),
        alpha=float(doc["alpha"]))


def save_model(model: MaterialModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> MaterialModel:
    return model_from_dict(json.loads(Path(path).read_text()))
