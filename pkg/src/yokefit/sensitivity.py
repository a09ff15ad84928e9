"""Field sensitivity to mode-wise reluctivity perturbations, probe ranking.

For mode m the reluctivity perturbation is sqrt(lambda_m) * b_m(s) / s (taken
constant below the first grid point, which is also the exact s -> 0 limit
because the modes vanish at B = 0).  The directional field derivative solves
one linear system with the Newton tangent taken from the converged nominal
solution; the right-hand side is the perturbation stiffness applied to the
nominal field, restricted to the iron region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .kle import MaterialModel
from .magnetostatics.geometry import IRON
from .magnetostatics.mesh import Mesh
from .magnetostatics.solver import FieldSolution, element_b, probe_field


@dataclass(frozen=True)
class ModePerturbation:
    """Reluctivity direction nu_m(s) = sqrt(lambda_m) b_m(s) / s for one mode."""

    model: MaterialModel
    mode: int                   # 1-based mode number

    def __post_init__(self):
        if not 1 <= self.mode <= self.model.M:
            raise ValueError(f"mode must be in [1, {self.model.M}], "
                             f"got {self.mode}")

    @property
    def _m(self) -> int:
        return self.mode - 1

    @property
    def _s1(self) -> float:
        return float(self.model.grid[1])

    def nu_tilde(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        sc = np.maximum(s, self._s1)
        amp = np.sqrt(self.model.eigenvalues[self._m])
        return amp * self.model.mode_values(self._m, sc) / sc

    def h_addition(self, s) -> np.ndarray:
        """s * nu_tilde(s): the additive H(B) perturbation direction."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        return s * self.nu_tilde(s)

    def h_addition_derivative(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        amp = np.sqrt(self.model.eigenvalues[self._m])
        out = amp * self.model.mode_slopes(self._m, s)
        below = s < self._s1
        if np.any(below):
            out = np.where(below, self.nu_tilde(np.array([self._s1]))[0], out)
        return out


def mode_perturbation(model: MaterialModel, mode: int) -> ModePerturbation:
    """Perturbation direction for 1-based mode number ``mode``."""
    return ModePerturbation(model=model, mode=mode)


@dataclass(frozen=True)
class PerturbedMaterial:
    """Nominal H(B) law plus eps times a mode perturbation (for the
    finite-difference validation of the directional derivative)."""

    base: object
    perturbation: ModePerturbation
    eps: float

    @property
    def b_max(self) -> float:
        return self.base.b_max

    def evaluate(self, s):
        return (np.asarray(self.base.evaluate(s), dtype=np.float64)
                + self.eps * self.perturbation.h_addition(s))

    def derivative(self, s):
        return (np.asarray(self.base.derivative(s), dtype=np.float64)
                + self.eps * self.perturbation.h_addition_derivative(s))


@dataclass
class SensitivityField:
    """Directional derivative of the field for one mode perturbation."""

    mode: int                    # 1-based
    a_prime: np.ndarray
    b_prime_elem: np.ndarray
    solution: FieldSolution = field(repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.solution.system.mesh

    def probe_by(self, points, patch: bool = True) -> np.ndarray:
        """dB_y/d(eps) at probe points."""
        return probe_field(self.mesh, self.b_prime_elem, points,
                           patch=patch)[:, 1]


def solve_gateaux(solution: FieldSolution, model: MaterialModel,
                  mode: int) -> SensitivityField:
    """Directional derivative of A for one weighted-mode perturbation.

    Reuses the tangent matrix assembled at the converged state; one sparse
    direct solve per mode.
    """
    if not solution.converged:
        raise ValueError("sensitivity requires a converged nominal solution")
    pert = mode_perturbation(model, mode)
    system = solution.system
    mesh = system.mesh

    g = np.einsum("ea,eax->ex", solution.a[mesh.tris], mesh.grads)
    s = np.hypot(g[:, 0], g[:, 1])
    nu_t = np.zeros(mesh.n_tris)
    iron = mesh.region == IRON
    nu_t[iron] = pert.nu_tilde(s[iron])

    # rhs_i = sum_e nu_tilde_e (grad A . grad phi_i) area_e  over iron
    ga = np.einsum("ex,eax->ea", g, mesh.grads)
    contrib = (nu_t * mesh.areas)[:, None] * ga
    rows = system.node_free[mesh.tris].ravel()
    keep = rows >= 0
    rhs = np.zeros(system.n_free)
    np.add.at(rhs, rows[keep], contrib.ravel()[keep])

    try:
        lu = spla.splu(system.matrix(solution.tangent_data).tocsc())
        ap_free = lu.solve(-rhs)
    except RuntimeError as exc:
        raise NumericalError(f"singular tangent in sensitivity solve: {exc}") \
            from exc
    a_prime = np.zeros(mesh.n_nodes)
    a_prime[system.free_nodes] = ap_free
    return SensitivityField(mode=mode, a_prime=a_prime,
                            b_prime_elem=element_b(mesh, a_prime),
                            solution=solution)


def rank_probes(fields: list[SensitivityField], candidates,
                top_p: int = 5) -> list[tuple[tuple[float, float], float]]:
    """Order candidate positions by total mode sensitivity of B_y.

    Score is sum_m |dB_y,m| with equal mode weights (the sqrt(lambda) factor
    already scales each perturbation).  Ties keep input order.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if candidates.shape[0] == 0:
        raise ValueError("candidate list is empty")
    scores = np.zeros(candidates.shape[0])
    for f in fields:
        scores += np.abs(f.probe_by(candidates))
    order = np.argsort(-scores, kind="stable")[:top_p]
    return [((float(candidates[i, 0]), float(candidates[i, 1])),
             float(scores[i])) for i in order]


def export_sensitivity_csv(fields: list[SensitivityField], path) -> None:
    """Per-element map ``x,y,dBy_mode1,...,dBy_modeM`` at centroids."""
    mesh = fields[0].mesh
    c = mesh.centroids()
    header = "x,y," + ",".join(f"dBy_mode{f.mode}" for f in fields)
    cols = [f.b_prime_elem[:, 1] for f in fields]
    lines = [header]
    for i in range(mesh.n_tris):
        vals = ",".join(repr(float(col[i])) for col in cols)
        lines.append(f"{float(c[i, 0])!r},{float(c[i, 1])!r},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")
