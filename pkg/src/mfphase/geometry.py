"""Source and observation geometries: spheres, grids, rasters, dipole hulls and rings.

Points are plain float arrays of shape (n, 3) in meters.  All generators are
pure and deterministic for fixed inputs (and seed, where one is taken).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

_GOLDEN_RATIO = (1.0 + 5.0**0.5) / 2.0


def fibonacci_sphere(n_locations: int, radius: float) -> np.ndarray:
    """Quasi-uniform points on a sphere via the golden-angle lattice.

    Parameters
    ----------
    n_locations : number of points, >= 1
    radius : sphere radius in meters, > 0

    Returns
    -------
    (n_locations, 3) array of points with norm equal to radius.
    """
    if n_locations < 1:
        raise ValueError(f"n_locations must be >= 1, got {n_locations}")
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    i = np.arange(n_locations, dtype=float)
    theta = 2.0 * np.pi * i / _GOLDEN_RATIO
    phi = np.arccos(1.0 - 2.0 * (i + 0.5) / n_locations)
    pts = np.column_stack(
        (np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi))
    )
    return radius * pts


def regular_sphere_grid(step_degrees: float, radius: float) -> np.ndarray:
    """Regular theta/phi grid, both ends inclusive (phi seam column duplicated).

    theta runs 0..180 deg, phi runs 0..360 deg in steps of `step_degrees`,
    giving (180/step + 1) * (360/step + 1) locations.  The step must divide
    180 evenly.
    """
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    if step_degrees <= 0:
        raise ValueError(f"step must be > 0, got {step_degrees}")
    n_theta = 180.0 / step_degrees
    if abs(n_theta - round(n_theta)) > 1e-9:
        raise ValueError(f"step {step_degrees} deg does not divide 180 evenly")
    n_theta = int(round(n_theta))
    theta = np.radians(step_degrees * np.arange(n_theta + 1))
    phi = np.radians(step_degrees * np.arange(2 * n_theta + 1))
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    pts = np.column_stack(
        (
            (np.sin(tt) * np.cos(pp)).ravel(),
            (np.sin(tt) * np.sin(pp)).ravel(),
            np.cos(tt).ravel(),
        )
    )
    return radius * pts


def planar_grid(size_x: float, size_y: float, step: float, distance: float) -> np.ndarray:
    """Raster on the plane z = distance, centered on the z-axis.

    Yields (floor(size_x/step)+1) * (floor(size_y/step)+1) points.
    """
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    if size_x < step or size_y < step:
        raise ValueError(
            f"plane sizes must be >= step, got {size_x} x {size_y} with step {step}"
        )
    nx = int(np.floor(size_x / step + 1e-9)) + 1
    ny = int(np.floor(size_y / step + 1e-9)) + 1
    x = step * np.arange(nx) - step * (nx - 1) / 2.0
    y = step * np.arange(ny) - step * (ny - 1) / 2.0
    xx, yy = np.meshgrid(x, y, indexing="ij")
    return np.column_stack((xx.ravel(), yy.ravel(), np.full(nx * ny, float(distance))))


def tangent_basis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangential pair (theta_hat, phi_hat) at each point on a sphere.

    Points on the z-axis get the fixed fallback pair (x_hat, y_hat).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    rho = np.hypot(pts[:, 0], pts[:, 1])
    theta_hat = np.empty_like(pts)
    phi_hat = np.empty_like(pts)
    on_axis = rho < 1e-12 * np.maximum(r, 1e-300)
    safe_rho = np.where(on_axis, 1.0, rho)
    safe_r = np.where(r == 0.0, 1.0, r)
    cos_t = pts[:, 2] / safe_r
    sin_t = rho / safe_r
    cos_p = pts[:, 0] / safe_rho
    sin_p = pts[:, 1] / safe_rho
    theta_hat[:, 0] = cos_t * cos_p
    theta_hat[:, 1] = cos_t * sin_p
    theta_hat[:, 2] = -sin_t
    phi_hat[:, 0] = -sin_p
    phi_hat[:, 1] = cos_p
    phi_hat[:, 2] = 0.0
    theta_hat[on_axis] = (1.0, 0.0, 0.0)
    phi_hat[on_axis] = (0.0, 1.0, 0.0)
    return theta_hat, phi_hat


@dataclass(frozen=True)
class DipoleSet:
    """Hertzian dipoles: positions (m), unit orientations, complex excitations (A*m)."""

    positions: np.ndarray
    orientations: np.ndarray
    excitations: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        ori = np.atleast_2d(np.asarray(self.orientations, dtype=float))
        exc = np.atleast_1d(np.asarray(self.excitations, dtype=complex))
        if not (len(pos) == len(ori) == len(exc)):
            raise ValueError(
                f"inconsistent lengths: {len(pos)} positions, "
                f"{len(ori)} orientations, {len(exc)} excitations"
            )
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite dipole position")
        norms = np.linalg.norm(ori, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("orientation vectors must be unit length")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", ori)
        object.__setattr__(self, "excitations", exc)

    def __len__(self) -> int:
        return len(self.excitations)

    def min_sphere_radius(self) -> float:
        """Radius of the smallest origin-centered sphere enclosing all dipoles."""
        return float(np.linalg.norm(self.positions, axis=1).max())


@dataclass(frozen=True)
class ObservationSet:
    """Measurement samples: one (location, unit polarization) pair per row.

    For probe arrays, `probe_separation` records the element separation and
    the polarization column doubles as the displacement direction of the row.
    """

    locations: np.ndarray
    polarizations: np.ndarray
    probe_separation: float | None = field(default=None)

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        pol = np.atleast_2d(np.asarray(self.polarizations, dtype=float))
        if len(loc) != len(pol):
            raise ValueError(
                f"{len(loc)} locations vs {len(pol)} polarizations"
            )
        norms = np.linalg.norm(pol, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("polarization vectors must be unit length")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "polarizations", pol)

    def __len__(self) -> int:
        return len(self.locations)


def two_polarization_observations(points: np.ndarray) -> ObservationSet:
    """Two samples per location: theta_hat and phi_hat polarizations."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    th, ph = tangent_basis(pts)
    loc = np.repeat(pts, 2, axis=0)
    pol = np.empty_like(loc)
    pol[0::2] = th
    pol[1::2] = ph
    return ObservationSet(loc, pol)


def planar_observations(points: np.ndarray) -> ObservationSet:
    """Two samples per planar location: x_hat and y_hat polarizations."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    loc = np.repeat(pts, 2, axis=0)
    pol = np.zeros_like(loc)
    pol[0::2, 0] = 1.0
    pol[1::2, 1] = 1.0
    return ObservationSet(loc, pol)


def dipole_hull_sphere(n_dipoles: int, radius: float, rng_seed: int) -> DipoleSet:
    """Randomly excited tangential dipole pairs on a Fibonacci sphere.

    Half the dipole count goes into locations; each location carries the
    orthonormal tangential pair (theta_hat, phi_hat).  Excitations are drawn
    from a seeded complex standard normal.
    """
    if n_dipoles < 2 or n_dipoles % 2 != 0:
        raise ValueError(f"n_dipoles must be even and >= 2, got {n_dipoles}")
    pts = fibonacci_sphere(n_dipoles // 2, radius)
    th, ph = tangent_basis(pts)
    pos = np.repeat(pts, 2, axis=0)
    ori = np.empty_like(pos)
    ori[0::2] = th
    ori[1::2] = ph
    rng = np.random.default_rng(rng_seed)
    exc = (rng.standard_normal(n_dipoles) + 1j * rng.standard_normal(n_dipoles)) / np.sqrt(2.0)
    return DipoleSet(pos, ori, exc)


def dipole_ring(n: int, ring_radius: float) -> DipoleSet:
    """n z-oriented unit-excitation dipoles evenly spaced on a ring in the xy-plane."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if ring_radius <= 0:
        raise ValueError(f"ring_radius must be > 0, got {ring_radius}")
    ang = 2.0 * np.pi * np.arange(n) / n
    pos = np.column_stack((ring_radius * np.cos(ang), ring_radius * np.sin(ang), np.zeros(n)))
    ori = np.tile((0.0, 0.0, 1.0), (n, 1))
    return DipoleSet(pos, ori, np.ones(n, dtype=complex))


def dump_points_csv(path, points: np.ndarray, orientations: np.ndarray | None = None) -> None:
    """Write `x,y,z[,ox,oy,oz]` rows in meters, one row per point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if orientations is None:
            writer.writerow(["x", "y", "z"])
            for p in pts:
                writer.writerow([repr(float(v)) for v in p])
        else:
            ori = np.atleast_2d(np.asarray(orientations, dtype=float))
            writer.writerow(["x", "y", "z", "ox", "oy", "oz"])
            for p, o in zip(pts, ori):
                writer.writerow([repr(float(v)) for v in (*p, *o)])
