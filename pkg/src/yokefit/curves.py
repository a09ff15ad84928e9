"""Monotone material curves from permeameter tables.

A permeameter evaluates a specimen's H(B) characteristic on a discrete grid
0 = B_1 < ... < B_L.  This module turns such tables into monotone, C1
piecewise-cubic curves (Fritsch-Carlson tangent limiting), generates synthetic
measurement ensembles for desk-scale experiments, and reads/writes the CSV
exchange format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .errors import TableError

MU0 = 4.0e-7 * np.pi

#: default floor for the linear continuation slope above the last knot
EXTRAP_SLOPE_FLOOR = 1.0


@dataclass(frozen=True)
class PermeameterTable:
    """One specimen's measured (B, H) samples on an ascending B grid."""

    specimen_id: str
    b: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        h = np.ascontiguousarray(self.h, dtype=np.float64)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "h", h)
        if b.ndim != 1 or b.shape != h.shape:
            raise TableError(f"{self.specimen_id}: B and H must be 1-D arrays "
                             f"of equal length, got {b.shape} and {h.shape}")
        if b.size < 2:
            raise TableError(f"{self.specimen_id}: need at least 2 samples")
        if b[0] != 0.0 or h[0] != 0.0:
            raise TableError(f"{self.specimen_id}: first sample must be "
                             f"(0, 0), got ({b[0]}, {h[0]})")
        db = np.diff(b)
        if np.any(db <= 0):
            i = int(np.argmax(db <= 0)) + 1
            raise TableError(f"{self.specimen_id}: B not strictly increasing "
                             f"at sample index {i}")
        dh = np.diff(h)
        if np.any(dh <= 0):
            i = int(np.argmax(dh <= 0)) + 1
            raise TableError(f"{self.specimen_id}: H not strictly increasing "
                             f"at sample index {i}")
        b.setflags(write=False)
        h.setflags(write=False)

    def __len__(self):
        return self.b.size


@dataclass(frozen=True)
class MonotoneCurve:
    """Monotone nondecreasing C1 map B -> H on [0, B_L], linear above B_L.

    Piecewise cubic Hermite on the knots with monotonicity-limited tangents;
    immutable and safe to evaluate concurrently.
    """

    knots: np.ndarray
    values: np.ndarray
    tangents: np.ndarray
    extrapolation_slope: float

    def __post_init__(self):
        for name in ("knots", "values", "tangents"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def b_max(self) -> float:
        return float(self.knots[-1])

    def _check_domain(self, s: np.ndarray):
        if np.any(s < 0.0):
            bad = float(np.min(s))
            raise ValueError(f"curve evaluated at negative flux density {bad}")

    def evaluate(self, s):
        """H at flux-density magnitude ``s`` (scalar or array, s >= 0)."""
        arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        self._check_domain(arr)
        out = _kernels.hermite_eval(self.knots, self.values, self.tangents,
                                    self.extrapolation_slope, arr)
        return float(out[0]) if np.isscalar(s) or np.ndim(s) == 0 else out

    def derivative(self, s):
        """dH/dB at ``s`` (scalar or array, s >= 0); nonnegative everywhere."""
        arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
        self._check_domain(arr)
        out = _kernels.hermite_deriv(self.knots, self.values, self.tangents,
                                     self.extrapolation_slope, arr)
        return float(out[0]) if np.isscalar(s) or np.ndim(s) == 0 else out

    def __call__(self, s):
        return self.evaluate(s)


def _fritsch_carlson_tangents(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Monotonicity-limited knot tangents for Hermite interpolation.

    Secant-average initialization followed by the projection of each interval's
    (tangent/secant) pair into the circle of radius 3, the classical
    sufficient condition for a monotone cubic segment.
    """
    h = np.diff(x)
    delta = np.diff(y) / h
    n = x.size
    m = np.zeros(n)
    m[0] = delta[0]
    m[-1] = delta[-1]
    for i in range(1, n - 1):
        if delta[i - 1] * delta[i] <= 0.0:
            m[i] = 0.0
        else:
            m[i] = 0.5 * (delta[i - 1] + delta[i])
    for i in range(n - 1):
        if delta[i] == 0.0:
            m[i] = 0.0
            m[i + 1] = 0.0
            continue
        al = m[i] / delta[i]
        be = m[i + 1] / delta[i]
        if al < 0.0:
            m[i] = 0.0
            al = 0.0
        if be < 0.0:
            m[i + 1] = 0.0
            be = 0.0
        r2 = al * al + be * be
        if r2 > 9.0:
            tau = 3.0 / np.sqrt(r2)
            m[i] = tau * al * delta[i]
            m[i + 1] = tau * be * delta[i]
    return m


def fit_monotone_spline(table: PermeameterTable,
                        extrap_floor: float = EXTRAP_SLOPE_FLOOR) -> MonotoneCurve:
    """Fit a monotone C1 cubic through a permeameter table.

    The returned curve interpolates every sample exactly and continues
    linearly above the last knot with the end tangent (floored at
    ``extrap_floor`` so Newton overshoot always sees a strictly increasing
    material law).
    """
    if len(table) < 3:
        raise TableError(f"{table.specimen_id}: need at least 3 samples to "
                         f"fit a spline, got {len(table)}")
    tangents = _fritsch_carlson_tangents(table.b, table.h)
    slope = max(float(tangents[-1]), float(extrap_floor))
    return MonotoneCurve(knots=table.b, values=table.h, tangents=tangents,
                         extrapolation_slope=slope)


def fit_grid_curve(grid: np.ndarray, values: np.ndarray,
                   extrap_floor: float = EXTRAP_SLOPE_FLOOR) -> MonotoneCurve:
    """Monotone spline through already-validated (grid, values) arrays."""
    tangents = _fritsch_carlson_tangents(np.asarray(grid, dtype=np.float64),
                                         np.asarray(values, dtype=np.float64))
    slope = max(float(tangents[-1]), float(extrap_floor))
    return MonotoneCurve(knots=grid, values=values, tangents=tangents,
                         extrapolation_slope=slope)


# ---------------------------------------------------------------------------
# Synthetic ensembles
# ---------------------------------------------------------------------------

#: base saturating B(H) law: mu0*H + (2/pi)*(J1*atan(H/H1) + J2*atan(H/H2))
_BASE_J1 = 1.60
_BASE_J2 = 0.50
_BASE_H1 = 110.0
_BASE_H2 = 1300.0
_PERTURBATION = 0.05

_KNEE_FRACTION = 0.72
_KNEE_WIDTH = 0.16
_KNEE_BOOST = 2.5


def _saturating_b_of_h(hm, j1, j2, h1, h2):
    return MU0 * hm + (2.0 / np.pi) * (j1 * np.arctan(hm / h1)
                                       + j2 * np.arctan(hm / h2))


def _invert_onto_grid(bgrid, j1, j2, h1, h2):
    # B(H) >= mu0*H gives the rigorous bracket H(B) <= B/mu0
    out = np.zeros_like(bgrid)
    for i in range(1, bgrid.size):
        target = bgrid[i]
        out[i] = brentq(lambda hm: _saturating_b_of_h(hm, j1, j2, h1, h2) - target,
                        0.0, target / MU0, xtol=1e-12, rtol=1e-15)
    return out


def shared_abscissa_grid(L: int, b_max: float) -> np.ndarray:
    """Ascending B grid with extra density around the saturation knee.

    Nodes are inverse-CDF samples of a Gaussian density bump centred at
    ``_KNEE_FRACTION * b_max``; the exact knee clustering of real permeameter
    protocols is not standardized, this is a deliberate stand-in.
    """
    fine = np.linspace(0.0, b_max, 4001)
    dens = 1.0 + _KNEE_BOOST * np.exp(
        -((fine - _KNEE_FRACTION * b_max) / (_KNEE_WIDTH * b_max)) ** 2)
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1])
                                           * np.diff(fine))))
    cdf /= cdf[-1]
    grid = np.interp(np.linspace(0.0, 1.0, L), cdf, fine)
    grid[0] = 0.0
    grid[-1] = b_max
    return grid


def synth_ensemble(seed: int, K: int, L: int, b_max: float) -> list[PermeameterTable]:
    """Generate K synthetic permeameter tables on a shared L-point grid.

    Each specimen perturbs three parameters of the saturating base law by
    up to +-5 %; identical seeds give bit-identical tables.
    """
    if K < 2:
        raise ValueError(f"need at least 2 specimens, got K={K}")
    if L < 5:
        raise ValueError(f"need at least 5 grid points, got L={L}")
    if b_max <= 0:
        raise ValueError(f"b_max must be positive, got {b_max}")
    rng = np.random.default_rng(seed)
    grid = shared_abscissa_grid(L, b_max)
    tables = []
    for k in range(K):
        e = rng.uniform(-1.0, 1.0, size=3)
        j1 = _BASE_J1 * (1.0 + _PERTURBATION * e[0])
        j2 = _BASE_J2 * (1.0 + _PERTURBATION * e[1])
        h1 = _BASE_H1 * (1.0 + _PERTURBATION * e[2])
        hvals = _invert_onto_grid(grid, j1, j2, h1, _BASE_H2)
        tables.append(PermeameterTable(specimen_id=f"synthetic-{k:02d}",
                                       b=grid.copy(), h=hvals))
    return tables


# ---------------------------------------------------------------------------
# CSV exchange format
# ---------------------------------------------------------------------------

_CSV_HEADER = "B_T,H_Am"


def read_table_csv(path, specimen_id: str | None = None) -> PermeameterTable:
    """Read one specimen file: header ``B_T,H_Am``, ``#`` comments allowed."""
    path = Path(path)
    rows = []
    header_seen = False
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != _CSV_HEADER:
                raise TableError(f"{path}:{lineno}: expected header "
                                 f"'{_CSV_HEADER}', got '{line}'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TableError(f"{path}:{lineno}: expected 2 comma-separated "
                             f"values, got {len(parts)}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise TableError(f"{path}:{lineno}: {exc}") from None
    if not header_seen:
        raise TableError(f"{path}: missing header line '{_CSV_HEADER}'")
    if not rows:
        raise TableError(f"{path}: no data rows")
    data = np.array(rows)
    return PermeameterTable(specimen_id=specimen_id or path.stem,
                            b=data[:, 0], h=data[:, 1])


def write_table_csv(table: PermeameterTable, path) -> None:
    path = Path(path)
    lines = [_CSV_HEADER]
    lines += [f"{float(b)!r},{float(h)!r}" for b, h in zip(table.b, table.h)]
    path.write_text("\n".join(lines) + "\n")


def load_ensemble(manifest_path) -> list[PermeameterTable]:
    """Read the ensemble manifest: one specimen CSV path per line."""
    manifest_path = Path(manifest_path)
    tables = []
    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        spec_path = Path(line)
        if not spec_path.is_absolute():
            spec_path = manifest_path.parent / spec_path
        if not spec_path.exists():
            raise TableError(f"{manifest_path}:{lineno}: specimen file "
                             f"'{spec_path}' not found")
        tables.append(read_table_csv(spec_path))
    if not tables:
        raise TableError(f"{manifest_path}: manifest lists no specimen files")
    return tables


def write_ensemble(tables: list[PermeameterTable], directory) -> Path:
    """Write one CSV per specimen plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for t in tables:
        name = f"{t.specimen_id}.csv"
        write_table_csv(t, directory / name)
        names.append(name)
    manifest = directory / "ensemble_manifest.txt"
    manifest.write_text("\n".join(names) + "\n")
    return manifest
