"""Nonlinear 2D magnetostatic solver (nodal A_z, first-order triangles).

Newton iteration on the weak curl-curl residual with the differential
reluctivity tensor as consistent tangent and an energy-decrease line search.
Material laws enter through ``NuTable``, a uniform-grid cubic-Hermite sampling
of H(B); inside the element loop the secant reluctivity, the tangent slope and
the energy density are all read from the same cubic, so residual, tangent and
line-search energy are mutually consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .. import _kernels
from ..errors import DivergenceError, LocationError, NumericalError
from .geometry import AIR, COIL_NEG, COIL_POS, IRON, DipoleGeometry
from .mesh import Mesh

MU0 = 4.0e-7 * np.pi
NU0 = 1.0 / MU0

NEWTON_TOL = 1e-8
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 20
CG_TOL = 1e-12
TABLE_SIZE = 1024


@dataclass(frozen=True)
class LinearMaterial:
    """Constant-reluctivity H(B) law, mainly for verification runs."""

    nu: float

    def evaluate(self, s):
        return self.nu * np.asarray(s, dtype=np.float64)

    def derivative(self, s):
        return np.full_like(np.asarray(s, dtype=np.float64), self.nu)


@dataclass(frozen=True)
class NuTable:
    """Uniform sampling of an H(B) law with exact derivative values."""

    ds: float
    f: np.ndarray
    fp: np.ndarray
    w: np.ndarray     # cumulative energy integral of the Hermite segments

    @property
    def s_max(self) -> float:
        return self.ds * (self.f.size - 1)


def build_nu_table(material, n: int = TABLE_SIZE,
                   s_max: float | None = None) -> NuTable:
    """Sample ``material`` (needs .evaluate/.derivative) on [0, s_max]."""
    if s_max is None:
        s_max = 2.0 * float(getattr(material, "b_max", 2.0))
    s = np.linspace(0.0, s_max, n)
    f = np.asarray(material.evaluate(s), dtype=np.float64)
    fp = np.asarray(material.derivative(s), dtype=np.float64)
    if np.any(fp <= 0.0):
        i = int(np.argmin(fp))
        raise NumericalError(f"material slope not positive: dH/dB = "
                             f"{fp[i]:.3e} at B = {s[i]:.4f}")
    ds = s[1] - s[0]
    seg = 0.5 * ds * (f[:-1] + f[1:]) + ds * ds / 12.0 * (fp[:-1] - fp[1:])
    w = np.concatenate(([0.0], np.cumsum(seg)))
    return NuTable(ds=float(ds), f=f, fp=fp, w=w)


class FemSystem:
    """Per-mesh precomputation: free-node numbering, CSR pattern, element to
    CSR scatter map, unit source vector."""

    def __init__(self, mesh: Mesh, turns: int):
        self.mesh = mesh
        self.turns = int(turns)
        n = mesh.n_nodes
        self.node_free = np.full(n, -1, dtype=np.int32)
        self.free_nodes = np.flatnonzero(~mesh.boundary)
        self.node_free[self.free_nodes] = np.arange(self.free_nodes.size,
                                                    dtype=np.int32)
        self.n_free = self.free_nodes.size
        self.is_iron = np.ascontiguousarray(mesh.region == IRON)

        fr = self.node_free[mesh.tris]                       # (nt, 3)
        rows = np.repeat(fr, 3, axis=1).ravel()
        cols = np.tile(fr, (1, 3)).ravel()
        ok = (rows >= 0) & (cols >= 0)
        pattern = sp.coo_matrix(
            (np.ones(np.count_nonzero(ok)), (rows[ok], cols[ok])),
            shape=(self.n_free, self.n_free)).tocsr()
        pattern.sum_duplicates()
        pattern.sort_indices()
        self.indptr = pattern.indptr.copy()
        self.indices = pattern.indices.copy()
        self.nnz = self.indices.size

        eidx = np.full((mesh.n_tris, 3, 3), -1, dtype=np.int64)
        for e in range(mesh.n_tris):
            for a in range(3):
                i = fr[e, a]
                if i < 0:
                    continue
                row = self.indices[self.indptr[i]:self.indptr[i + 1]]
                for b in range(3):
                    jcol = fr[e, b]
                    if jcol < 0:
                        continue
                    eidx[e, a, b] = self.indptr[i] + np.searchsorted(row, jcol)
        self.eidx = eidx

        self.diag_idx = np.array(
            [self.indptr[i] + np.searchsorted(
                self.indices[self.indptr[i]:self.indptr[i + 1]], i)
             for i in range(self.n_free)], dtype=np.int64)

        # unit-current source: J_z = +-turns/area over the conductor regions
        area_pos = float(mesh.areas[mesh.region == COIL_POS].sum())
        area_neg = float(mesh.areas[mesh.region == COIL_NEG].sum())
        jz = np.zeros(mesh.n_tris)
        if area_pos > 0:
            jz[mesh.region == COIL_POS] = self.turns / area_pos
        if area_neg > 0:
            jz[mesh.region == COIL_NEG] = -self.turns / area_neg
        contrib = (jz * mesh.areas / 3.0)[:, None].repeat(3, axis=1).ravel()
        target = fr.ravel()
        u = np.zeros(self.n_free)
        keep = target >= 0
        np.add.at(u, target[keep], contrib[keep])
        self.unit_source = u

    def source_vector(self, current: float) -> np.ndarray:
        return current * self.unit_source

    def assemble(self, a: np.ndarray, table: NuTable, kdata: np.ndarray,
                 ka: np.ndarray) -> float:
        """Fill tangent CSR data and K(a)a; returns the field energy."""
        m = self.mesh
        return _kernels.assemble_field(
            a, m.tris, m.grads, m.areas, self.is_iron, table.ds, table.f,
            table.fp, table.w, NU0, self.node_free, self.eidx, kdata, ka)

    def matrix(self, kdata: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((kdata, self.indices, self.indptr),
                             shape=(self.n_free, self.n_free))

    def solve_linear(self, kdata: np.ndarray, rhs: np.ndarray,
                     method: str = "cg", cg_tol: float = CG_TOL,
                     x0: np.ndarray | None = None) -> np.ndarray:
        if method == "direct":
            try:
                lu = spla.splu(self.matrix(kdata).tocsc())
                return lu.solve(rhs)
            except RuntimeError as exc:
                raise NumericalError(f"sparse LU failed: {exc}") from exc
        if method != "cg":
            raise ValueError(f"unknown linear solver '{method}'")
        diag = kdata[self.diag_idx]
        if np.any(diag <= 0.0):
            raise NumericalError("tangent matrix has non-positive diagonal, "
                                 "cannot precondition")
        x = np.zeros_like(rhs) if x0 is None else x0.copy()
        iters, relres = _kernels.pcg(self.indptr, self.indices, kdata,
                                     1.0 / diag, rhs, x, cg_tol,
                                     10 * self.n_free)
        if relres > cg_tol:
            raise NumericalError(f"PCG stalled after {iters} iterations, "
                                 f"relative residual {relres:.3e}")
        return x


def element_b(mesh: Mesh, a: np.ndarray) -> np.ndarray:
    """Per-element flux density, the discrete curl of the nodal A_z."""
    g = np.einsum("ea,eax->ex", a[mesh.tris], mesh.grads)
    return np.column_stack([g[:, 1], -g[:, 0]])


@dataclass
class FieldSolution:
    """Converged nonlinear solution with the tangent kept for reuse."""

    a: np.ndarray
    b_elem: np.ndarray
    current: float
    converged: bool
    history: list
    energy: float
    energy_history: list
    tangent_data: np.ndarray
    system: FemSystem = field(repr=False)

    @property
    def newton_steps(self) -> int:
        return len(self.history) - 1


def solve_nonlinear(system: FemSystem, table: NuTable, current: float, *,
                    tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                    max_halvings: int = MAX_HALVINGS,
                    linear_solver: str = "cg", cg_tol: float = CG_TOL,
                    a0: np.ndarray | None = None) -> FieldSolution:
    """Newton solve of the magnetostatic problem at one current level.

    Convergence: ||K(a)a - j|| <= tol * ||j||.  Steps are damped by halving
    until the energy functional decreases; the tangent assembled at the
    converged state is stored on the solution.
    """
    mesh = system.mesh
    j = system.source_vector(current)
    jnorm = float(np.linalg.norm(j))
    a = np.zeros(mesh.n_nodes) if a0 is None else np.array(a0, dtype=np.float64)
    a[mesh.boundary] = 0.0

    kdata = np.zeros(system.nnz)
    ka = np.zeros(system.n_free)
    kdata_try = np.zeros(system.nnz)
    ka_try = np.zeros(system.n_free)

    energy_field = system.assemble(a, table, kdata, ka)
    obj = energy_field - float(j @ a[system.free_nodes])
    history = []
    energy_history = [obj]
    converged = False
    for _ in range(max_iter + 1):
        r = ka - j
        relres = float(np.linalg.norm(r)) / jnorm if jnorm > 0.0 \
            else float(np.linalg.norm(r))
        history.append(relres)
        if relres < tol:
            converged = True
            break
        delta = system.solve_linear(kdata, -r, method=linear_solver,
                                    cg_tol=cg_tol)
        step = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            a_try = a.copy()
            a_try[system.free_nodes] += step * delta
            energy_field = system.assemble(a_try, table, kdata_try, ka_try)
            obj_try = energy_field - float(j @ a_try[system.free_nodes])
            if obj_try <= obj + 1e-12 * (abs(obj) + 1.0):
                a = a_try
                obj = obj_try
                energy_history.append(obj)
                kdata, kdata_try = kdata_try, kdata
                ka, ka_try = ka_try, ka
                accepted = True
                break
            step *= 0.5
        if not accepted:
            raise DivergenceError(
                f"line search found no energy decrease at current "
                f"{current:.4g} A after {max_halvings} halvings", history)
    if not converged:
        raise DivergenceError(
            f"Newton did not reach {tol:.1e} within {max_iter} steps at "
            f"current {current:.4g} A (last residual {history[-1]:.3e})",
            history)
    return FieldSolution(a=a, b_elem=element_b(mesh, a), current=current,
                         converged=True, history=history, energy=obj,
                         energy_history=energy_history,
                         tangent_data=kdata.copy(), system=system)


def assemble_and_solve(mesh_or_system, material, current: float,
                       turns: int = 180, **options) -> FieldSolution:
    """Convenience wrapper: build the system and the material table, solve."""
    system = (mesh_or_system if isinstance(mesh_or_system, FemSystem)
              else FemSystem(mesh_or_system, turns=turns))
    table = material if isinstance(material, NuTable) else build_nu_table(material)
    return solve_nonlinear(system, table, current, **options)


# ---------------------------------------------------------------------------
# Flux-density probing with patch recovery
# ---------------------------------------------------------------------------

def probe_field(mesh: Mesh, elem_field: np.ndarray, points,
                patch: bool = True) -> np.ndarray:
    """Evaluate a per-element vector field at points.

    With ``patch`` the value is the area-weighted average over the containing
    element and its edge neighbors of the same region (standard recovery for
    piecewise-constant fields); otherwise the containing element's value.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.empty((points.shape[0], elem_field.shape[1]))
    nbr = mesh.neighbors() if patch else None
    for k, pt in enumerate(points):
        e = mesh.locate(pt)
        if not patch:
            out[k] = elem_field[e]
            continue
        members = [e] + [int(t) for t in nbr[e]
                         if t >= 0 and mesh.region[t] == mesh.region[e]]
        wts = mesh.areas[members]
        out[k] = wts @ elem_field[members] / wts.sum()
    return out


def probe_b(solution: FieldSolution, points, patch: bool = True,
            require_air: bool = True) -> np.ndarray:
    """Flux density at probe points (tesla); points must lie in the air gap."""
    mesh = solution.system.mesh
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if require_air:
        for pt in points:
            e = mesh.locate(pt)
            if mesh.region[e] != AIR:
                raise LocationError(
                    f"probe ({pt[0]}, {pt[1]}) lies in region "
                    f"'{['air', 'iron', 'coil_pos', 'coil_neg'][mesh.region[e]]}',"
                    f" expected air")
    return probe_field(mesh, solution.b_elem, points, patch=patch)
