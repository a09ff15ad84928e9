import numpy as np
import pytest

import yokefit as yf
from yokefit.magnetostatics import (DipoleGeometry, FemSystem, build_nu_table,
                                    generate_dipole_mesh)


@pytest.fixture(scope="session")
def ensemble_tables():
    return yf.synth_ensemble(seed=7, K=26, L=28, b_max=2.0)


@pytest.fixture(scope="session")
def ensemble_curves(ensemble_tables):
    return [yf.fit_monotone_spline(t) for t in ensemble_tables]


@pytest.fixture(scope="session")
def stats(ensemble_curves):
    return yf.estimate_statistics(ensemble_curves, N=200)


@pytest.fixture(scope="session")
def eigenpairs(stats):
    return yf.solve_eigenproblem(stats, M_max=10)


@pytest.fixture(scope="session")
def model(stats, eigenpairs, ensemble_curves):
    return yf.build_model(stats, eigenpairs, M=4, curves=ensemble_curves)


@pytest.fixture(scope="session")
def geometry():
    return DipoleGeometry()


@pytest.fixture(scope="session")
def mesh(geometry):
    return generate_dipole_mesh(geometry, refinement=1)


@pytest.fixture(scope="session")
def system(mesh, geometry):
    return FemSystem(mesh, turns=geometry.turns)


@pytest.fixture(scope="session")
def mean_table(model):
    return build_nu_table(model.curve(np.zeros(model.M)))
