"""Parameterized H-dipole cross-section built from axis-aligned blocks.

The domain is a rectangle of air containing an H-shaped iron yoke: two legs,
two beams, and two poles that face each other across the air gap.  Small shim
blocks protrude from both pole faces at the pole edges.  The side windows
between the legs and the poles are filled by the two conductor regions (equal
current density, opposite sign).  Block edges land exactly on mesh lines, so
the structured triangulation is region-conforming by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import GeometryError

AIR = 0
IRON = 1
COIL_POS = 2
COIL_NEG = 3

REGION_NAMES = {AIR: "air", IRON: "iron", COIL_POS: "coil_pos",
                COIL_NEG: "coil_neg"}


@dataclass(frozen=True)
class DipoleGeometry:
    """All lengths in meters.

    ``gap_height`` is the published overall aperture/yoke height figure; it is
    stored verbatim and used as the yoke outer height.  The pole-face distance
    is ``pole_gap``; shims protrude ``shim_drop`` into it at both pole edges.
    """

    turns: int = 180
    gap_height: float = 0.68
    pole_gap: float = 0.045
    pole_width: float = 0.20
    shim_width: float = 0.02
    shim_drop: float = 0.0075
    leg_width: float = 0.12
    beam_height: float = 0.12
    window_width: float = 0.13
    air_margin: float = 0.15

    def __post_init__(self):
        if self.turns <= 0:
            raise GeometryError(f"turns must be positive, got {self.turns}")
        for name in ("gap_height", "pole_gap", "pole_width", "shim_width",
                     "shim_drop", "leg_width", "beam_height", "window_width",
                     "air_margin"):
            if getattr(self, name) <= 0.0:
                raise GeometryError(f"{name} must be positive, "
                                    f"got {getattr(self, name)}")
        if 2.0 * self.shim_width >= self.pole_width:
            raise GeometryError("shims overlap: 2*shim_width >= pole_width")
        if 2.0 * self.shim_drop >= self.pole_gap:
            raise GeometryError("shims close the gap: 2*shim_drop >= pole_gap")
        if self.pole_body_height <= 0.0:
            raise GeometryError("yoke height leaves no room for the poles: "
                                "gap_height - 2*beam_height - pole_gap <= 0")

    # --- derived dimensions -------------------------------------------------

    @property
    def pole_body_height(self) -> float:
        return 0.5 * (self.gap_height - 2.0 * self.beam_height - self.pole_gap)

    @property
    def pole_core_width(self) -> float:
        return self.pole_width - 2.0 * self.shim_width

    @property
    def gap_core(self) -> float:
        """Vertical clearance between the shim faces."""
        return self.pole_gap - 2.0 * self.shim_drop

    @property
    def yoke_width(self) -> float:
        return 2.0 * (self.leg_width + self.window_width) + self.pole_width

    @property
    def domain_width(self) -> float:
        return self.yoke_width + 2.0 * self.air_margin

    @property
    def domain_height(self) -> float:
        return self.gap_height + 2.0 * self.air_margin

    @property
    def coil_area(self) -> float:
        """Cross-section of one conductor region."""
        return self.window_width * (2.0 * self.pole_body_height + self.pole_gap)

    # --- block decomposition ------------------------------------------------

    def x_bands(self) -> np.ndarray:
        return np.array([self.air_margin, self.leg_width, self.window_width,
                         self.shim_width, self.pole_core_width,
                         self.shim_width, self.window_width, self.leg_width,
                         self.air_margin])

    def y_bands(self) -> np.ndarray:
        return np.array([self.air_margin, self.beam_height,
                         self.pole_body_height, self.shim_drop, self.gap_core,
                         self.shim_drop, self.pole_body_height,
                         self.beam_height, self.air_margin])

    def region_of_band(self, i: int, j: int) -> int:
        """Region tag of block (x-band i, y-band j), 9x9 block grid."""
        if i in (1, 7) and 1 <= j <= 7:
            return IRON                      # legs
        if j in (1, 7) and 1 <= i <= 7:
            return IRON                      # beams
        if i in (3, 4, 5) and j in (2, 6):
            return IRON                      # pole bodies
        if i in (3, 5) and j in (3, 5):
            return IRON                      # shims
        if i == 2 and 2 <= j <= 6:
            return COIL_POS
        if i == 6 and 2 <= j <= 6:
            return COIL_NEG
        return AIR

    # --- landmarks ----------------------------------------------------------

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * self.domain_width, 0.5 * self.domain_height

    def gap_rectangle(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) of the central air band between the shim faces,
        spanning the full pole width.  Everything inside is air."""
        xb = np.concatenate(([0.0], np.cumsum(self.x_bands())))
        yb = np.concatenate(([0.0], np.cumsum(self.y_bands())))
        return float(xb[3]), float(xb[6]), float(yb[4]), float(yb[5])

    def central_axis_points(self, n: int = 7, margin: float = 0.1) -> np.ndarray:
        """n probe positions along the horizontal mid-axis of the gap."""
        x0, x1, y0, y1 = self.gap_rectangle()
        pad = margin * (x1 - x0)
        xs = np.linspace(x0 + pad, x1 - pad, n)
        ys = np.full(n, 0.5 * (y0 + y1))
        return np.column_stack([xs, ys])

    def shim_faces(self) -> list[tuple[float, float, float, float]]:
        """Gap-facing shim faces as segments (x0, y, x1, y), 4 entries."""
        xb = np.concatenate(([0.0], np.cumsum(self.x_bands())))
        yb = np.concatenate(([0.0], np.cumsum(self.y_bands())))
        y_bot = float(yb[4])    # top of the bottom shims
        y_top = float(yb[5])    # bottom of the top shims
        faces = []
        for xi in (3, 5):
            x0, x1 = float(xb[xi]), float(xb[xi + 1])
            faces.append((x0, y_bot, x1, y_bot))
            faces.append((x0, y_top, x1, y_top))
        return faces

    def distance_to_shim(self, point) -> float:
        """Distance from a point to the nearest gap-facing shim face."""
        px, py = float(point[0]), float(point[1])
        best = np.inf
        for x0, y, x1, _ in self.shim_faces():
            cx = min(max(px, x0), x1)
            best = min(best, np.hypot(px - cx, py - y))
        return float(best)

    def candidate_probe_lattice(self, spacing: float | None = None) -> np.ndarray:
        """Uniform candidate lattice over the gap band, default spacing
        pole_gap / 10, kept strictly inside the air band."""
        if spacing is None:
            spacing = self.pole_gap / 10.0
        x0, x1, y0, y1 = self.gap_rectangle()
        pad = 0.25 * spacing
        nx = max(2, int(np.floor((x1 - x0 - 2 * pad) / spacing)) + 1)
        ny = max(2, int(np.floor((y1 - y0 - 2 * pad) / spacing)) + 1)
        xs = np.linspace(x0 + pad, x1 - pad, nx)
        ys = np.linspace(y0 + pad, y1 - pad, ny)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def with_refined(self, **kwargs) -> "DipoleGeometry":
        return replace(self, **kwargs)
