"""Hot numeric kernels: cubic Hermite evaluation, nonlinear FEM assembly, PCG.

Every kernel exists twice: a numba ``@njit`` version and a vectorized
numpy/scipy fallback.  The active path is chosen once at import time from the
``YOKEFIT_NUMBA`` environment variable ("1" default, "0" forces the fallback)
and from numba availability.  Both paths compute the same quantities; they are
compared in ``tests/test_kernels.py`` and timed in ``benchmarks/``.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    njit = None
    _HAVE_NUMBA = False

_FLAG = os.environ.get("YOKEFIT_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _HAVE_NUMBA and _FLAG not in ("0", "false", "no")


def numba_enabled() -> bool:
    """True when the JIT path is active for this process."""
    return NUMBA_ENABLED


# ---------------------------------------------------------------------------
# Cubic Hermite spline evaluation (non-uniform knots, linear tail above)
# ---------------------------------------------------------------------------

def _hermite_eval_np(knots, values, tangents, extrap_slope, s):
    s = np.asarray(s, dtype=np.float64)
    idx = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, knots.size - 2)
    h = knots[idx + 1] - knots[idx]
    t = (s - knots[idx]) / h
    t2 = t * t
    t3 = t2 * t
    out = ((2.0 * t3 - 3.0 * t2 + 1.0) * values[idx]
           + (t3 - 2.0 * t2 + t) * h * tangents[idx]
           + (-2.0 * t3 + 3.0 * t2) * values[idx + 1]
           + (t3 - t2) * h * tangents[idx + 1])
    over = s > knots[-1]
    if np.any(over):
        out = np.where(over, values[-1] + extrap_slope * (s - knots[-1]), out)
    return out


def _hermite_deriv_np(knots, values, tangents, extrap_slope, s):
    s = np.asarray(s, dtype=np.float64)
    idx = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, knots.size - 2)
    h = knots[idx + 1] - knots[idx]
    t = (s - knots[idx]) / h
    t2 = t * t
    out = ((6.0 * t2 - 6.0 * t) * values[idx] / h
           + (3.0 * t2 - 4.0 * t + 1.0) * tangents[idx]
           + (-6.0 * t2 + 6.0 * t) * values[idx + 1] / h
           + (3.0 * t2 - 2.0 * t) * tangents[idx + 1])
    over = s > knots[-1]
    if np.any(over):
        out = np.where(over, extrap_slope, out)
    return out


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _interval_of(knots, s):
        # rightmost i with knots[i] <= s, clipped to a valid segment
        lo, hi = 0, knots.size - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if knots[mid] <= s:
                lo = mid
            else:
                hi = mid
        return lo

    @njit(cache=True, nogil=True)
    def _hermite_eval_nb(knots, values, tangents, extrap_slope, s):
        out = np.empty(s.size, dtype=np.float64)
        top = knots[knots.size - 1]
        for k in range(s.size):
            sk = s[k]
            if sk > top:
                out[k] = values[values.size - 1] + extrap_slope * (sk - top)
                continue
            i = _interval_of(knots, sk)
            h = knots[i + 1] - knots[i]
            t = (sk - knots[i]) / h
            t2 = t * t
            t3 = t2 * t
            out[k] = ((2.0 * t3 - 3.0 * t2 + 1.0) * values[i]
                      + (t3 - 2.0 * t2 + t) * h * tangents[i]
                      + (-2.0 * t3 + 3.0 * t2) * values[i + 1]
                      + (t3 - t2) * h * tangents[i + 1])
        return out

    @njit(cache=True, nogil=True)
    def _hermite_deriv_nb(knots, values, tangents, extrap_slope, s):
        out = np.empty(s.size, dtype=np.float64)
        top = knots[knots.size - 1]
        for k in range(s.size):
            sk = s[k]
            if sk > top:
                out[k] = extrap_slope
                continue
            i = _interval_of(knots, sk)
            h = knots[i + 1] - knots[i]
            t = (sk - knots[i]) / h
            t2 = t * t
            out[k] = ((6.0 * t2 - 6.0 * t) * values[i] / h
                      + (3.0 * t2 - 4.0 * t + 1.0) * tangents[i]
                      + (-6.0 * t2 + 6.0 * t) * values[i + 1] / h
                      + (3.0 * t2 - 2.0 * t) * tangents[i + 1])
        return out


def hermite_eval(knots, values, tangents, extrap_slope, s):
    """Evaluate a cubic Hermite spline at points ``s`` (1-D float64 array)."""
    if NUMBA_ENABLED:
        return _hermite_eval_nb(knots, values, tangents, extrap_slope,
                                np.ascontiguousarray(s, dtype=np.float64))
    return _hermite_eval_np(knots, values, tangents, extrap_slope, s)


def hermite_deriv(knots, values, tangents, extrap_slope, s):
    """First derivative of the spline at points ``s``."""
    if NUMBA_ENABLED:
        return _hermite_deriv_nb(knots, values, tangents, extrap_slope,
                                 np.ascontiguousarray(s, dtype=np.float64))
    return _hermite_deriv_np(knots, values, tangents, extrap_slope, s)


# ---------------------------------------------------------------------------
# Material lookup table on a uniform grid (cubic Hermite segments)
# ---------------------------------------------------------------------------
# Tables carry H(B) samples ``f``, exact derivative samples ``fp`` and the
# cumulative energy integral ``w[i] = int_0^{s_i} f``.  Beyond the last node
# the continuation is linear in f.

def _table_np(s, ds, f, fp, w):
    n = f.size
    x = s / ds
    i = np.minimum(x.astype(np.int64), n - 2)
    over = x >= n - 1
    t = x - i
    t2 = t * t
    t3 = t2 * t
    fv = ((2.0 * t3 - 3.0 * t2 + 1.0) * f[i]
          + (t3 - 2.0 * t2 + t) * ds * fp[i]
          + (-2.0 * t3 + 3.0 * t2) * f[i + 1]
          + (t3 - t2) * ds * fp[i + 1])
    fpv = ((6.0 * t2 - 6.0 * t) * f[i] / ds
           + (3.0 * t2 - 4.0 * t + 1.0) * fp[i]
           + (-6.0 * t2 + 6.0 * t) * f[i + 1] / ds
           + (3.0 * t2 - 2.0 * t) * fp[i + 1])
    wv = (w[i] + ds * ((t - t3 + 0.5 * t2 * t2) * f[i]
                       + (0.25 * t2 * t2 - 2.0 * t3 / 3.0 + 0.5 * t2) * ds * fp[i]
                       + (t3 - 0.5 * t2 * t2) * f[i + 1]
                       + (0.25 * t2 * t2 - t3 / 3.0) * ds * fp[i + 1]))
    if np.any(over):
        e = s - (n - 1) * ds
        fv = np.where(over, f[-1] + fp[-1] * e, fv)
        fpv = np.where(over, fp[-1], fpv)
        wv = np.where(over, w[-1] + f[-1] * e + 0.5 * fp[-1] * e * e, wv)
    return fv, fpv, wv


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True, inline="always")
    def _table_scalar(s, ds, f, fp, w):
        n = f.size
        x = s / ds
        if x >= n - 1:
            e = s - (n - 1) * ds
            return (f[n - 1] + fp[n - 1] * e, fp[n - 1],
                    w[n - 1] + f[n - 1] * e + 0.5 * fp[n - 1] * e * e)
        i = int(x)
        t = x - i
        t2 = t * t
        t3 = t2 * t
        t4 = t2 * t2
        fv = ((2.0 * t3 - 3.0 * t2 + 1.0) * f[i]
              + (t3 - 2.0 * t2 + t) * ds * fp[i]
              + (-2.0 * t3 + 3.0 * t2) * f[i + 1]
              + (t3 - t2) * ds * fp[i + 1])
        fpv = ((6.0 * t2 - 6.0 * t) * f[i] / ds
               + (3.0 * t2 - 4.0 * t + 1.0) * fp[i]
               + (-6.0 * t2 + 6.0 * t) * f[i + 1] / ds
               + (3.0 * t2 - 2.0 * t) * fp[i + 1])
        wv = (w[i] + ds * ((t - t3 + 0.5 * t4) * f[i]
                           + (0.25 * t4 - 2.0 * t3 / 3.0 + 0.5 * t2) * ds * fp[i]
                           + (t3 - 0.5 * t4) * f[i + 1]
                           + (0.25 * t4 - t3 / 3.0) * ds * fp[i + 1]))
        return fv, fpv, wv


# ---------------------------------------------------------------------------
# Nonlinear magnetostatic assembly (first-order triangles, nodal A_z)
# ---------------------------------------------------------------------------
# Per element with nodal gradient g = sum_a a_a grad(phi_a) and s = |g|:
#   secant coefficient   nu(s)      (H/B, table for iron, nu0 elsewhere)
#   tangent contribution nu * (ga.gb) + (fp - nu)/s^2 * (g.ga)(g.gb)
# which is the differential reluctivity tensor written in gradient form.
# Outputs: CSR ``kdata`` of the tangent on free nodes, ``ka`` = K(a)a on free
# nodes (field part of the residual), and the stored field energy.

_S_TINY = 1e-12


def _assemble_field_np(a, tris, grads, areas, is_iron, ds, tf, tfp, tw, nu0,
                       node_free, eidx, kdata, ka):
    an = a[tris]                                    # (nt, 3)
    g = np.einsum("ea,eax->ex", an, grads)          # (nt, 2)
    s = np.hypot(g[:, 0], g[:, 1])
    nu = np.full(s.size, nu0)
    fp = np.full(s.size, nu0)
    wdens = 0.5 * nu0 * s * s
    if np.any(is_iron):
        si = s[is_iron]
        fv, fpv, wv = _table_np(si, ds, tf, tfp, tw)
        nu_i = np.where(si > _S_TINY, fv / np.maximum(si, _S_TINY), tfp[0])
        nu[is_iron] = nu_i
        fp[is_iron] = fpv
        wdens[is_iron] = wv
    cfac = np.where(s > _S_TINY, (fp - nu) / np.maximum(s * s, _S_TINY**2), 0.0)

    ga = np.einsum("ex,eax->ea", g, grads)          # (nt, 3)
    gg = np.einsum("eax,ebx->eab", grads, grads)    # (nt, 3, 3)
    ke = (nu[:, None, None] * gg
          + cfac[:, None, None] * ga[:, :, None] * ga[:, None, :])
    ke *= areas[:, None, None]
    re = nu[:, None] * ga * areas[:, None]

    kdata[:] = 0.0
    ka[:] = 0.0
    flat_idx = eidx.ravel()
    mask = flat_idx >= 0
    np.add.at(kdata, flat_idx[mask], ke.ravel()[mask])
    rows = node_free[tris].ravel()
    rmask = rows >= 0
    np.add.at(ka, rows[rmask], re.ravel()[rmask])
    return float(np.dot(wdens, areas))


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _assemble_field_nb(a, tris, grads, areas, is_iron, ds, tf, tfp, tw,
                           nu0, node_free, eidx, kdata, ka):
        kdata[:] = 0.0
        ka[:] = 0.0
        energy = 0.0
        for e in range(tris.shape[0]):
            n0 = tris[e, 0]
            n1 = tris[e, 1]
            n2 = tris[e, 2]
            gx = (a[n0] * grads[e, 0, 0] + a[n1] * grads[e, 1, 0]
                  + a[n2] * grads[e, 2, 0])
            gy = (a[n0] * grads[e, 0, 1] + a[n1] * grads[e, 1, 1]
                  + a[n2] * grads[e, 2, 1])
            s = np.sqrt(gx * gx + gy * gy)
            if is_iron[e]:
                fv, fpv, wv = _table_scalar(s, ds, tf, tfp, tw)
                if s > _S_TINY:
                    nu = fv / s
                else:
                    nu = tfp[0]
                fp = fpv
                wdens = wv
            else:
                nu = nu0
                fp = nu0
                wdens = 0.5 * nu0 * s * s
            if s > _S_TINY:
                cfac = (fp - nu) / (s * s)
            else:
                cfac = 0.0
            area = areas[e]
            energy += wdens * area
            for la in range(3):
                gax = grads[e, la, 0]
                gay = grads[e, la, 1]
                proj_a = gx * gax + gy * gay
                ia = node_free[tris[e, la]]
                if ia >= 0:
                    ka[ia] += nu * proj_a * area
                for lb in range(3):
                    k = eidx[e, la, lb]
                    if k >= 0:
                        proj_b = gx * grads[e, lb, 0] + gy * grads[e, lb, 1]
                        dot_ab = gax * grads[e, lb, 0] + gay * grads[e, lb, 1]
                        kdata[k] += (nu * dot_ab + cfac * proj_a * proj_b) * area
        return energy


def assemble_field(a, tris, grads, areas, is_iron, ds, tf, tfp, tw, nu0,
                   node_free, eidx, kdata, ka):
    """Assemble tangent CSR data, K(a)a and field energy in one sweep."""
    if NUMBA_ENABLED:
        return _assemble_field_nb(a, tris, grads, areas, is_iron, ds, tf, tfp,
                                  tw, nu0, node_free, eidx, kdata, ka)
    return _assemble_field_np(a, tris, grads, areas, is_iron, ds, tf, tfp, tw,
                              nu0, node_free, eidx, kdata, ka)


# ---------------------------------------------------------------------------
# Preconditioned conjugate gradients (Jacobi) on raw CSR arrays
# ---------------------------------------------------------------------------

def _pcg_np(indptr, indices, data, invdiag, b, x, tol, maxiter):
    import scipy.sparse as sp

    n = b.size
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    r = b - mat @ x
    z = invdiag * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < maxiter:
        rnorm = np.linalg.norm(r)
        if rnorm <= tol * bnorm:
            return it, rnorm / bnorm
        ap = mat @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        z = invdiag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, float(np.linalg.norm(r)) / bnorm


if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _csr_matvec(indptr, indices, data, v, out):
        for i in range(out.size):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * v[indices[k]]
            out[i] = acc

    @njit(cache=True, nogil=True)
    def _pcg_nb(indptr, indices, data, invdiag, b, x, tol, maxiter):
        n = b.size
        bnorm = np.sqrt(np.dot(b, b))
        if bnorm == 0.0:
            x[:] = 0.0
            return 0, 0.0
        r = np.empty(n)
        _csr_matvec(indptr, indices, data, x, r)
        for i in range(n):
            r[i] = b[i] - r[i]
        z = invdiag * r
        p = z.copy()
        rz = np.dot(r, z)
        ap = np.empty(n)
        it = 0
        while it < maxiter:
            rnorm = np.sqrt(np.dot(r, r))
            if rnorm <= tol * bnorm:
                return it, rnorm / bnorm
            _csr_matvec(indptr, indices, data, p, ap)
            alpha = rz / np.dot(p, ap)
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * ap[i]
            z = invdiag * r
            rz_new = np.dot(r, z)
            beta = rz_new / rz
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            rz = rz_new
            it += 1
        return it, np.sqrt(np.dot(r, r)) / bnorm


def pcg(indptr, indices, data, invdiag, b, x, tol, maxiter):
    """Jacobi-preconditioned CG; updates ``x`` in place, returns (iters, relres)."""
    if NUMBA_ENABLED:
        return _pcg_nb(indptr, indices, data, invdiag, b, x, tol, maxiter)
    return _pcg_np(indptr, indices, data, invdiag, b, x, tol, maxiter)
