"""Structured triangulation of the block-decomposed dipole cross-section."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import GeometryError, LocationError
from .geometry import AIR, DipoleGeometry

# cells per geometry band at refinement level 1 (doubled per extra level);
# gap and shim bands run at least twice as fine as the yoke bulk, and the
# pole-core count is even so no cell straddles the vertical midplane
_BASE_NX = (3, 3, 4, 2, 10, 2, 4, 3, 3)
_BASE_NY = (3, 3, 5, 2, 4, 2, 5, 3, 3)


@dataclass
class Mesh:
    """Triangle mesh with region tags and Dirichlet boundary flags.

    Triangles are positively oriented; ``grads[e, a]`` is the constant
    gradient of local hat function a on element e.
    """

    nodes: np.ndarray          # (n, 2)
    tris: np.ndarray           # (nt, 3) int32
    region: np.ndarray         # (nt,) int32
    boundary: np.ndarray       # (n,) bool

    def __post_init__(self):
        p = self.nodes[self.tris]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(det <= 0):
            bad = int(np.argmax(det <= 0))
            raise GeometryError(f"triangle {bad} degenerate or negatively "
                                f"oriented (2A = {det[bad]:.3e})")
        self.areas = 0.5 * det
        g = np.empty((self.tris.shape[0], 3, 2))
        for a in range(3):
            j = (a + 1) % 3
            k = (a + 2) % 3
            g[:, a, 0] = (p[:, j, 1] - p[:, k, 1]) / det
            g[:, a, 1] = (p[:, k, 0] - p[:, j, 0]) / det
        self.grads = g
        self._neighbors = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_tris(self) -> int:
        return self.tris.shape[0]

    def centroids(self) -> np.ndarray:
        return self.nodes[self.tris].mean(axis=1)

    def neighbors(self) -> np.ndarray:
        """(nt, 3) indices of the edge-sharing neighbor opposite each local
        vertex, -1 on boundary edges."""
        if self._neighbors is None:
            nt = self.n_tris
            edges = np.empty((3 * nt, 2), dtype=np.int64)
            owner = np.empty(3 * nt, dtype=np.int64)
            slot = np.empty(3 * nt, dtype=np.int64)
            for a in range(3):
                e = np.sort(self.tris[:, [(a + 1) % 3, (a + 2) % 3]], axis=1)
                edges[a * nt:(a + 1) * nt] = e
                owner[a * nt:(a + 1) * nt] = np.arange(nt)
                slot[a * nt:(a + 1) * nt] = a
            key = edges[:, 0] * (self.n_nodes + 1) + edges[:, 1]
            order = np.argsort(key, kind="stable")
            nbr = np.full((nt, 3), -1, dtype=np.int32)
            ks = key[order]
            i = 0
            while i < ks.size - 1:
                if ks[i] == ks[i + 1]:
                    t1, s1 = owner[order[i]], slot[order[i]]
                    t2, s2 = owner[order[i + 1]], slot[order[i + 1]]
                    nbr[t1, s1] = t2
                    nbr[t2, s2] = t1
                    i += 2
                else:
                    i += 1
            self._neighbors = nbr
        return self._neighbors

    def locate(self, point) -> int:
        """Index of the triangle containing ``point`` (inclusive edges)."""
        px, py = float(point[0]), float(point[1])
        p = self.nodes[self.tris]
        lam = np.empty((self.n_tris, 3))
        # barycentric coordinates are the hat functions: 1 + grad.(p - p_a)
        for a in range(3):
            xa = p[:, a, 0]
            ya = p[:, a, 1]
            lam[:, a] = 1.0 + self.grads[:, a, 0] * (px - xa) \
                + self.grads[:, a, 1] * (py - ya)
        inside = np.all(lam >= -1e-12, axis=1)
        hits = np.flatnonzero(inside)
        if hits.size == 0:
            raise LocationError(f"point ({px}, {py}) lies outside the mesh")
        return int(hits[0])


def generate_dipole_mesh(geometry: DipoleGeometry, refinement: int = 1) -> Mesh:
    """Deterministic structured-block triangulation of the dipole domain.

    Each geometry band is uniformly subdivided; counts double with every
    refinement level, keeping gap and shim bands at least twice as fine as
    the yoke bulk.
    """
    if refinement < 1:
        raise GeometryError(f"refinement level must be >= 1, got {refinement}")
    scale = 2 ** (refinement - 1)

    def partition(band_widths, base_counts):
        coords = [np.array([0.0])]
        band_of_cell = []
        x0 = 0.0
        for b, (w, c) in enumerate(zip(band_widths, base_counts)):
            n = c * scale
            coords.append(np.linspace(x0, x0 + w, n + 1)[1:])
            band_of_cell += [b] * n
            x0 += w
        return np.concatenate(coords), np.array(band_of_cell)

    xs, xband = partition(geometry.x_bands(), _BASE_NX)
    ys, yband = partition(geometry.y_bands(), _BASE_NY)
    # the band layout is a palindrome in x; symmetrize the coordinates so the
    # discrete problem carries the dipole's exact mirror symmetry
    width = float(np.sum(geometry.x_bands()))
    xs = 0.5 * (xs + width - xs[::-1])
    xs[0] = 0.0
    xs[-1] = width
    nxn, nyn = xs.size, ys.size
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def node_id(i, j):
        return j * nxn + i

    cx = 0.5 * width
    ncx, ncy = nxn - 1, nyn - 1
    tris = np.empty((2 * ncx * ncy, 3), dtype=np.int32)
    region = np.empty(2 * ncx * ncy, dtype=np.int32)
    t = 0
    for j in range(ncy):
        for i in range(ncx):
            n00 = node_id(i, j)
            n10 = node_id(i + 1, j)
            n11 = node_id(i + 1, j + 1)
            n01 = node_id(i, j + 1)
            reg = geometry.region_of_band(int(xband[i]), int(yband[j]))
            # mirror the diagonal split across the midplane
            if 0.5 * (xs[i] + xs[i + 1]) < cx:
                tris[t] = (n00, n10, n11)
                tris[t + 1] = (n00, n11, n01)
            else:
                tris[t] = (n10, n11, n01)
                tris[t + 1] = (n10, n01, n00)
            region[t] = reg
            region[t + 1] = reg
            t += 2

    boundary = np.zeros(nodes.shape[0], dtype=bool)
    ii, jj = np.meshgrid(np.arange(nxn), np.arange(nyn), indexing="xy")
    edge = (ii == 0) | (ii == nxn - 1) | (jj == 0) | (jj == nyn - 1)
    boundary[edge.ravel()] = True

    return Mesh(nodes=nodes, tris=tris, region=region, boundary=boundary)


def gap_triangle_count(mesh: Mesh, geometry: DipoleGeometry) -> int:
    """Triangles whose centroid lies in the central gap band."""
    x0, x1, y0, y1 = geometry.gap_rectangle()
    c = mesh.centroids()
    inside = ((c[:, 0] > x0) & (c[:, 0] < x1)
              & (c[:, 1] > y0) & (c[:, 1] < y1))
    return int(np.count_nonzero(inside))


# ---------------------------------------------------------------------------
# Plain-text exchange format
# ---------------------------------------------------------------------------

def save_mesh(mesh: Mesh, path) -> None:
    lines = [str(mesh.n_nodes)]
    lines += [f"{i} {float(x)!r} {float(y)!r}"
              for i, (x, y) in enumerate(mesh.nodes)]
    lines.append(str(mesh.n_tris))
    lines += [f"{i} {t[0]} {t[1]} {t[2]} {r}"
              for i, (t, r) in enumerate(zip(mesh.tris, mesh.region))]
    bnd = np.flatnonzero(mesh.boundary)
    lines.append(str(bnd.size))
    lines += [str(i) for i in bnd]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    tokens = Path(path).read_text().split("\n")
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(tokens) and not tokens[pos].strip():
            pos += 1
        line = tokens[pos]
        pos += 1
        return line

    n = int(next_line())
    nodes = np.empty((n, 2))
    for _ in range(n):
        parts = next_line().split()
        nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))
    nt = int(next_line())
    tris = np.empty((nt, 3), dtype=np.int32)
    region = np.empty(nt, dtype=np.int32)
    for _ in range(nt):
        parts = next_line().split()
        i = int(parts[0])
        tris[i] = (int(parts[1]), int(parts[2]), int(parts[3]))
        region[i] = int(parts[4])
    nb = int(next_line())
    boundary = np.zeros(n, dtype=bool)
    for _ in range(nb):
        boundary[int(next_line())] = True
    return Mesh(nodes=nodes, tris=tris, region=region, boundary=boundary)


def export_field_csv(mesh: Mesh, elem_field: np.ndarray, path) -> None:
    """Write per-element vectors as ``x,y,Bx,By`` rows at element centroids."""
    c = mesh.centroids()
    lines = ["x,y,Bx,By"]
    lines += [f"{float(x)!r},{float(y)!r},{float(bx)!r},{float(by)!r}"
              for (x, y), (bx, by) in zip(c, elem_field)]
    Path(path).write_text("\n".join(lines) + "\n")
