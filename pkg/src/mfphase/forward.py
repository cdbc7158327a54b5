"""Hertzian-dipole fields and forward-operator assembly.

Phase convention is e^{+j omega t} with outgoing propagation e^{-jkR};
all comparisons of phases in the toolkit rely on it.  Forward matrix
columns correspond to unit excitations (1 A*m) so that source vectors
carry the physical scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constants import C0, ETA0
from .geometry import DipoleSet, ObservationSet, tangent_basis


def wavenumber(frequency: float) -> float:
    """Free-space wavenumber in rad/m."""
    return 2.0 * np.pi * frequency / C0


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly increasing frequencies in Hz plus the reference index."""

    frequencies: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        if np.any(f <= 0):
            raise ValueError("frequencies must be positive")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if not 0 <= self.reference_index < len(f):
            raise ValueError(
                f"reference index {self.reference_index} out of range for {len(f)} frequencies"
            )
        object.__setattr__(self, "frequencies", f)

    def __len__(self) -> int:
        return len(self.frequencies)


@dataclass(frozen=True)
class ForwardMatrix:
    """Complex system matrix mapping dipole excitations to measurement samples."""

    matrix: np.ndarray
    frequency: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def dipole_efield(
    source_position: np.ndarray,
    orientation: np.ndarray,
    obs: np.ndarray,
    k: float,
) -> np.ndarray:
    """Electric field of a unit-excitation Hertzian dipole at one observation point.

    Returns the complex 3-vector in V/m per A*m.  Raises if the observation
    point coincides with the source.
    """
    if k <= 0:
        raise ValueError(f"wavenumber must be > 0, got {k}")
    src = np.asarray(source_position, dtype=float)
    u = np.asarray(orientation, dtype=float)
    r_vec = np.asarray(obs, dtype=float) - src
    r = np.linalg.norm(r_vec)
    if r == 0.0:
        raise ValueError("observation point coincides with the source position")
    r_hat = r_vec / r
    transverse = u - r_hat * (r_hat @ u)
    longitudinal = 3.0 * r_hat * (r_hat @ u) - u
    radial_terms = 1.0 / r**2 + 1.0 / (1j * k * r**3)
    return (
        (ETA0 / (4.0 * np.pi))
        * np.exp(-1j * k * r)
        * (1j * k * transverse / r + longitudinal * radial_terms)
    )


def _field_block(dipoles: DipoleSet, locations: np.ndarray, k: float) -> np.ndarray:
    """Unit-excitation fields of all dipoles at all locations, shape (M, N, 3)."""
    pos = dipoles.positions
    u = dipoles.orientations
    r_vec = locations[:, None, :] - pos[None, :, :]
    r = np.linalg.norm(r_vec, axis=2)
    if np.any(r == 0.0):
        raise ValueError("an observation location coincides with a dipole position")
    r_hat = r_vec / r[..., None]
    ru = np.einsum("mnc,nc->mn", r_hat, u)
    transverse = u[None, :, :] - r_hat * ru[..., None]
    longitudinal = 3.0 * r_hat * ru[..., None] - u[None, :, :]
    radial_terms = 1.0 / r**2 + 1.0 / (1j * k * r**3)
    return (
        (ETA0 / (4.0 * np.pi))
        * np.exp(-1j * k * r)[..., None]
        * (1j * k * transverse / r[..., None] + longitudinal * radial_terms[..., None])
    )


def assemble_forward(
    dipoles: DipoleSet, obs: ObservationSet, frequency: float, chunk_rows: int = 2048
) -> ForwardMatrix:
    """Forward matrix A with entries pol . E_dipole(location), one row per sample."""
    if len(dipoles) == 0 or len(obs) == 0:
        raise ValueError("dipole set and observation set must be non-empty")
    k = wavenumber(frequency)
    m = len(obs)
    a = np.empty((m, len(dipoles)), dtype=complex)
    for start in range(0, m, chunk_rows):
        stop = min(start + chunk_rows, m)
        fields = _field_block(dipoles, obs.locations[start:stop], k)
        a[start:stop] = np.einsum("mc,mnc->mn", obs.polarizations[start:stop], fields)
    return ForwardMatrix(a, float(frequency))


def measure(dipoles: DipoleSet, obs: ObservationSet, frequency: float) -> np.ndarray:
    """Complex measurement vector b = A x for the set's own excitations."""
    return assemble_forward(dipoles, obs, frequency).matrix @ dipoles.excitations


# Complex weights applied to the two displaced samples (s1, s2) of a probe
# array; any invertible set preserving local phase differences would do.
PROBE_COMBINATIONS = ((1.0, 1.0), (1.0, -1.0), (1.0, 1.0j), (1.0, -1.0j))


def probe_array_rows(
    dipoles: DipoleSet,
    array_locations: np.ndarray,
    separation: float,
    frequency: float,
) -> ForwardMatrix:
    """Forward rows of a two-element combining probe, 8 rows per array location.

    For each displacement direction (theta_hat, phi_hat offsets) the two
    samples s1, s2 share the displacement direction as polarization; the
    four combinations (s1+s2), (s1-s2), (s1+j*s2), (s1-j*s2) become rows.
    """
    if separation <= 0:
        raise ValueError(f"separation must be > 0, got {separation}")
    pts = np.atleast_2d(np.asarray(array_locations, dtype=float))
    th, ph = tangent_basis(pts)
    rows = []
    for direction in (th, ph):
        lo = pts - 0.5 * separation * direction
        hi = pts + 0.5 * separation * direction
        a_lo = assemble_forward(dipoles, ObservationSet(lo, direction), frequency).matrix
        a_hi = assemble_forward(dipoles, ObservationSet(hi, direction), frequency).matrix
        combo = np.stack(
            [w1 * a_lo + w2 * a_hi for w1, w2 in PROBE_COMBINATIONS], axis=1
        )
        rows.append(combo)
    # interleave: per location, theta-displaced combos then phi-displaced combos
    stacked = np.concatenate(rows, axis=1)
    return ForwardMatrix(stacked.reshape(-1, len(dipoles)), float(frequency))


def farfield_operator(
    dipoles: DipoleSet,
    directions: np.ndarray,
    polarizations: np.ndarray,
    frequency: float,
) -> ForwardMatrix:
    """Radiation-term-only pattern operator, common e^{-jkr}/r factor removed.

    Column n evaluates (j k eta0 / 4 pi) e^{+j k r_hat . r_n} of the dipole's
    transverse orientation; rows project onto the given unit polarizations.
    """
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    pols = np.atleast_2d(np.asarray(polarizations, dtype=float))
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("direction vectors must be unit length")
    if len(dirs) != len(pols):
        raise ValueError(f"{len(dirs)} directions vs {len(pols)} polarizations")
    k = wavenumber(frequency)
    u = dipoles.orientations
    ru = dirs @ u.T
    transverse = u[None, :, :] - dirs[:, None, :] * ru[..., None]
    phase = np.exp(1j * k * (dirs @ dipoles.positions.T))
    proj = np.einsum("mc,mnc->mn", pols, transverse)
    a = (1j * k * ETA0 / (4.0 * np.pi)) * phase * proj
    return ForwardMatrix(a, float(frequency))


def ff_cut(
    dipoles: DipoleSet, frequency: float, phi_deg: float = 0.0, step_deg: float = 1.0
) -> np.ndarray:
    """Theta-polarized far-field cut at fixed phi, theta from 0 to 180 deg."""
    theta = np.radians(np.arange(0.0, 180.0 + step_deg / 2, step_deg))
    phi = np.radians(phi_deg)
    dirs = np.column_stack(
        (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta))
    )
    th_hat, _ = tangent_basis(dirs)
    op = farfield_operator(dipoles, dirs, th_hat, frequency)
    return op.matrix @ dipoles.excitations


def dump_matrix_csv(path, matrix: np.ndarray) -> None:
    """Debug dump: one row per matrix row, interleaved re/im columns."""
    a = np.atleast_2d(np.asarray(matrix))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = []
        for j in range(a.shape[1]):
            header += [f"re{j}", f"im{j}"]
        writer.writerow(header)
        for row in a:
            out = []
            for v in row:
                out += [repr(float(v.real)), repr(float(v.imag))]
            writer.writerow(out)
