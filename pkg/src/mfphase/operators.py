"""Multi-frequency operator algebra: pseudo-inverses, projections, stacked systems.

The stacked operator couples the magnitude measurements at all frequencies
to the source coefficients at one reference frequency through diagonal
inter-frequency maps and per-frequency projections onto the physically
realizable measurement subspaces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .forward import ForwardMatrix

DEFAULT_PINV_TOL = 1e-8


def _matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, ForwardMatrix) else np.asarray(op)


@dataclass(frozen=True)
class RelativePhaseData:
    """Per-frequency magnitudes and phase differences to a reference frequency.

    `magnitudes` and `phase_diffs` have shape (n_freq, n_samples); row k of
    `phase_diffs` holds phi_k - phi_ref in radians (the reference row is
    zero).  `true_complex` optionally keeps the underlying complex samples
    for oracle checks.
    """

    magnitudes: np.ndarray
    phase_diffs: np.ndarray
    reference_index: int = 0
    true_complex: np.ndarray | None = field(default=None)

    def __post_init__(self):
        mag = np.atleast_2d(np.asarray(self.magnitudes, dtype=float))
        pha = np.atleast_2d(np.asarray(self.phase_diffs, dtype=float))
        if mag.shape != pha.shape:
            raise ValueError(f"magnitude shape {mag.shape} != phase shape {pha.shape}")
        if np.any(mag < 0):
            raise ValueError("magnitudes must be non-negative")
        if not 0 <= self.reference_index < mag.shape[0]:
            raise ValueError(f"reference index {self.reference_index} out of range")
        object.__setattr__(self, "magnitudes", mag)
        object.__setattr__(self, "phase_diffs", pha)
        if self.true_complex is not None:
            truth = np.atleast_2d(np.asarray(self.true_complex, dtype=complex))
            if truth.shape != mag.shape:
                raise ValueError("true_complex shape mismatch")
            object.__setattr__(self, "true_complex", truth)

    @classmethod
    def from_complex(
        cls, samples: np.ndarray, reference_index: int = 0, keep_truth: bool = True
    ) -> "RelativePhaseData":
        """Build magnitude / relative-phase data from complex per-frequency samples."""
        b = np.atleast_2d(np.asarray(samples, dtype=complex))
        mag = np.abs(b)
        pha = np.angle(b) - np.angle(b[reference_index])[None, :]
        pha = np.angle(np.exp(1j * pha))  # wrap to (-pi, pi]
        return cls(mag, pha, reference_index, b if keep_truth else None)

    @property
    def n_frequencies(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_samples(self) -> int:
        return self.magnitudes.shape[1]

    def stacked_magnitudes(self) -> np.ndarray:
        """Magnitude blocks concatenated in frequency order."""
        return self.magnitudes.reshape(-1)

    def per_sample_reference(self) -> np.ndarray:
        """Index of the max-magnitude frequency at each sample (no-reference policy)."""
        return np.argmax(self.magnitudes, axis=0)


def truncated_pinv(a: np.ndarray, rel_tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """SVD pseudo-inverse with singular values below rel_tol * sigma_max dropped."""
    a = np.asarray(a)
    if a.size == 0:
        raise ValueError("empty matrix")
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must be in (0, 1), got {rel_tol}")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    keep = s >= rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (vh.conj().T * inv) @ u.conj().T


class Projector:
    """Rank-factored projector P = left @ right^H, applied without forming M x M."""

    def __init__(self, left: np.ndarray, right: np.ndarray):
        self.left = left
        self.right = right

    @classmethod
    def from_matrix(cls, a, rel_tol: float = DEFAULT_PINV_TOL) -> "Projector":
        """Orthogonal projector A A^+ onto the column space of A."""
        a = _matrix(a)
        if a.size == 0:
            raise ValueError("empty matrix")
        u, s, _ = np.linalg.svd(a, full_matrices=False)
        keep = s >= rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
        ur = u[:, keep]
        return cls(ur, ur)

    @classmethod
    def from_scaled(cls, a, b_diag: np.ndarray, rel_tol: float = DEFAULT_PINV_TOL) -> "Projector":
        """Oblique projector A (B A)^+ compensating a diagonal magnitude scaling B."""
        a = _matrix(a)
        b_diag = np.asarray(b_diag, dtype=float)
        if np.any(b_diag < 0):
            raise ValueError("scaling diagonal must be non-negative")
        ba = b_diag[:, None] * a
        u, s, vh = np.linalg.svd(ba, full_matrices=False)
        keep = s >= rel_tol * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
        left = a @ (vh[keep].conj().T / s[keep])
        return cls(left, u[:, keep])

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left.shape[0], self.right.shape[0])

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.left @ (self.right.conj().T @ v)

    def dense(self) -> np.ndarray:
        return self.left @ self.right.conj().T


def projection(a, rel_tol: float = DEFAULT_PINV_TOL) -> Projector:
    """Projector A A^+ onto the space of measurement vectors the sources can generate."""
    return Projector.from_matrix(a, rel_tol)


def scaled_projection(a, b_diag: np.ndarray, rel_tol: float = DEFAULT_PINV_TOL) -> Projector:
    """Scaled projector A (B A)^+; reduces to A A^+ for B = identity."""
    return Projector.from_scaled(a, b_diag, rel_tol)


def interfreq_ratio(data: RelativePhaseData, k: int, i: int | None = None) -> np.ndarray:
    """Diagonal of the map b_i -> b_k: (|b_k|/|b_i|) e^{j(phi_k - phi_i)}.

    Requires strictly positive reference magnitudes; the scaled variant
    exists precisely to avoid this division.
    """
    i = data.reference_index if i is None else i
    ref = data.magnitudes[i]
    if np.any(ref == 0.0):
        raise ZeroDivisionError(
            "zero reference magnitude; use the scaled inter-frequency map instead"
        )
    dphi = data.phase_diffs[k] - data.phase_diffs[i]
    return (data.magnitudes[k] / ref) * np.exp(1j * dphi)


def scaled_interfreq(data: RelativePhaseData, k: int, i: int | None = None) -> np.ndarray:
    """Diagonal of the scaled map: |b_k| e^{j(phi_k - phi_i)}; zero magnitudes allowed."""
    i = data.reference_index if i is None else i
    dphi = data.phase_diffs[k] - data.phase_diffs[i]
    return data.magnitudes[k] * np.exp(1j * dphi)


@dataclass
class OperatorBundle:
    """Per-frequency operators plus the assembled stacked matrix.

    `a_tilde` has n_freq * n_samples rows; the reference block is the
    reference forward matrix itself, all other blocks are the projected,
    phase-mapped reference operator.
    """

    a_list: list
    b_diag: np.ndarray
    u_tilde: np.ndarray
    projectors: list
    a_tilde: np.ndarray
    reference_index: int
    rel_tol: float

    def summary(self) -> dict:
        return {
            "n_frequencies": len(self.a_list),
            "n_samples": int(self.a_list[0].shape[0]),
            "n_unknowns": int(self.a_list[0].shape[1]),
            "reference_index": int(self.reference_index),
            "rel_tol": float(self.rel_tol),
            "projector_ranks": [p.rank if p is not None else None for p in self.projectors],
        }


def stack_multifreq(
    a_ops, data: RelativePhaseData, rel_tol: float = DEFAULT_PINV_TOL
) -> OperatorBundle:
    """Stabilized multi-frequency stack; block k is P~_k U~_{k,i} A_i, block i is A_i."""
    mats = [_matrix(op) for op in a_ops]
    i = data.reference_index
    if len(mats) != data.n_frequencies:
        raise ValueError(f"{len(mats)} operators vs {data.n_frequencies} frequency rows")
    m, n = mats[i].shape
    for a in mats:
        if a.shape != (m, n):
            raise ValueError("inconsistent operator shapes across frequencies")
    if m != data.n_samples:
        raise ValueError(f"operator rows {m} != data samples {data.n_samples}")
    if m < 2 * n:
        warnings.warn(
            f"only {m} samples for {n} unknowns; fewer than 2x oversampling "
            "weakens the projection filtering",
            stacklevel=2,
        )
    b_diag = data.magnitudes[i].astype(float)
    u_tilde = np.vstack([scaled_interfreq(data, k) for k in range(len(mats))])
    projectors: list = []
    blocks = []
    for k, a_k in enumerate(mats):
        if k == i:
            projectors.append(None)
            blocks.append(a_k.copy())
        else:
            proj = Projector.from_scaled(a_k, b_diag, rel_tol)
            projectors.append(proj)
            blocks.append(proj.apply(u_tilde[k][:, None] * mats[i]))
    return OperatorBundle(
        a_list=mats,
        b_diag=b_diag,
        u_tilde=u_tilde,
        projectors=projectors,
        a_tilde=np.vstack(blocks),
        reference_index=i,
        rel_tol=rel_tol,
    )


def stack_multifreq_basic(
    a_ops, data: RelativePhaseData, rel_tol: float = DEFAULT_PINV_TOL
) -> np.ndarray:
    """Unstabilized stack P_k U_{k,i} A_i; fails on zero reference magnitudes."""
    mats = [_matrix(op) for op in a_ops]
    i = data.reference_index
    blocks = []
    for k, a_k in enumerate(mats):
        if k == i:
            blocks.append(a_k.copy())
        else:
            u = interfreq_ratio(data, k)
            proj = Projector.from_matrix(a_k, rel_tol)
            blocks.append(proj.apply(u[:, None] * mats[i]))
    return np.vstack(blocks)


def stack_noref(
    a_ops, data: RelativePhaseData, rel_tol: float = DEFAULT_PINV_TOL
) -> tuple[np.ndarray, np.ndarray]:
    """Stack over unknown measurement samples with a per-sample reference frequency.

    Each sample's reference defaults to its max-magnitude frequency; samples
    that are zero at every frequency stay in the null space and resolve to 0.
    Returns the stacked matrix (n_freq * n_samples, n_samples) and the chosen
    per-sample reference indices.
    """
    mats = [_matrix(op) for op in a_ops]
    ref = data.per_sample_reference()
    cols = np.arange(data.n_samples)
    b_hat_diag = data.magnitudes[ref, cols]
    ref_phase = data.phase_diffs[ref, cols]
    blocks = []
    for k, a_k in enumerate(mats):
        u_hat = data.magnitudes[k] * np.exp(1j * (data.phase_diffs[k] - ref_phase))
        proj = Projector.from_scaled(a_k, b_hat_diag, rel_tol)
        blocks.append(proj.left @ (proj.right.conj().T * u_hat[None, :]))
    return np.vstack(blocks), ref
