"""Measurement-diversity analyses and reconstruction error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constants import C0
from .forward import ForwardMatrix, _field_block, wavenumber
from .geometry import DipoleSet
from .retrieval import (
    SolveOptions,
    phase_aligned_error,
    random_init,
    to_db,
    wirtinger_solve,
)

DEFAULT_INDEPENDENCE_THRESHOLD = 1e-5


def _matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, ForwardMatrix) else np.asarray(op)


def count_independent(a, threshold: float = DEFAULT_INDEPENDENCE_THRESHOLD) -> int:
    """Number of significant singular values of the squared row-correlation matrix.

    Q_mn = |<row_m, row_n>|^2; the count of singular values with
    sigma_i / sigma_1 >= threshold estimates how many magnitude samples
    carry independent information.
    """
    a = _matrix(a)
    if a.size == 0:
        raise ValueError("empty matrix")
    gram = a @ a.conj().T
    q = np.abs(gram) ** 2
    sigma = np.abs(np.linalg.eigvalsh(q))
    top = sigma.max()
    if top == 0.0:
        return 0
    return int(np.count_nonzero(sigma / top >= threshold))


@dataclass(frozen=True)
class IndependenceCurve:
    """Independent-sample counts over a sweep of total sample counts M."""

    sample_counts: np.ndarray
    independent_counts: np.ndarray
    threshold: float

    def __post_init__(self):
        m = np.asarray(self.sample_counts, dtype=int)
        c = np.asarray(self.independent_counts, dtype=int)
        if m.shape != c.shape:
            raise ValueError("curve arrays must have equal length")
        if np.any(c > m):
            raise ValueError("independent count cannot exceed sample count")
        object.__setattr__(self, "sample_counts", m)
        object.__setattr__(self, "independent_counts", c)

    def saturation(self) -> int:
        return int(self.independent_counts.max())


def independence_sweep(
    generators: dict,
    m_values,
    threshold: float = DEFAULT_INDEPENDENCE_THRESHOLD,
) -> dict:
    """Evaluate count_independent over M for several operator generators.

    `generators` maps a setup name to a callable m -> matrix with m rows;
    every setup sees the same M values so the curves are comparable.
    """
    m_values = np.asarray(list(m_values), dtype=int)
    curves = {}
    for name, gen in generators.items():
        counts = []
        for m in m_values:
            a = _matrix(gen(int(m)))
            if a.shape[0] != m:
                raise ValueError(
                    f"generator '{name}' returned {a.shape[0]} rows for requested {m}"
                )
            counts.append(count_independent(a, threshold))
        curves[name] = IndependenceCurve(m_values.copy(), np.asarray(counts), threshold)
    return curves


def freq_step_ratio(dipoles: DipoleSet, obs: np.ndarray, f1: float, f2: float) -> float:
    """Singular-value ratio sigma_2/sigma_1 of the two-frequency observation rows.

    Rows are the source-to-E_z maps at the observation point, scaled by the
    inverse angular frequency so both have comparable magnitude.  Identical
    frequencies give 0; fully independent rows approach 1.
    """
    if f1 <= 0 or f2 <= 0:
        raise ValueError("frequencies must be positive")
    obs = np.asarray(obs, dtype=float).reshape(1, 3)
    rows = []
    for f in (f1, f2):
        fields = _field_block(dipoles, obs, wavenumber(f))
        rows.append(fields[0, :, 2] / (2.0 * np.pi * f))
    sigma = np.linalg.svd(np.vstack(rows), compute_uv=False)
    if sigma[0] == 0.0:
        return 0.0
    return float(sigma[1] / sigma[0])


def max_freq_step(d: float) -> float:
    """Largest useful frequency step c0 / (2 d) for an enclosing-sphere radius d."""
    if d <= 0:
        raise ValueError(f"radius must be > 0, got {d}")
    return C0 / (2.0 * d)


def ff_error_curve(
    e: np.ndarray, e_ref: np.ndarray, floor_db: float = -200.0
) -> tuple[np.ndarray, float]:
    """Pattern deviation in dB per direction, each cut normalized to its own maximum.

    Returns the clamped curve and its maximum value.
    """
    e = np.asarray(e)
    e_ref = np.asarray(e_ref)
    if e.shape != e_ref.shape:
        raise ValueError(f"cut shapes differ: {e.shape} vs {e_ref.shape}")
    ref_max = np.abs(e_ref).max()
    if ref_max == 0.0:
        raise ValueError("all-zero reference pattern")
    e_max = np.abs(e).max()
    if e_max == 0.0:
        e_max = 1.0
    diff = np.abs(np.abs(e) / e_max - np.abs(e_ref) / ref_max)
    with np.errstate(divide="ignore"):
        curve = 20.0 * np.log10(diff)
    curve = np.maximum(curve, floor_db)
    return curve, float(curve.max())


@dataclass(frozen=True)
class ErrorMetrics:
    """Near-field deviation metrics (dimensionless; dB forms via properties)."""

    eps_mag: float
    eps_compl: float

    @property
    def eps_mag_db(self) -> float:
        return to_db(self.eps_mag)

    @property
    def eps_compl_db(self) -> float:
        return to_db(self.eps_compl)

    def to_dict(self) -> dict:
        return {
            "eps_mag": self.eps_mag,
            "eps_compl": self.eps_compl,
            "eps_mag_db": self.eps_mag_db,
            "eps_compl_db": self.eps_compl_db,
        }


def nf_errors(b: np.ndarray, b_ref: np.ndarray) -> ErrorMetrics:
    """Mean magnitude and complex reconstruction errors relative to a reference."""
    b = np.asarray(b, dtype=complex)
    b_ref = np.asarray(b_ref, dtype=complex)
    if b.shape != b_ref.shape:
        raise ValueError(f"vector shapes differ: {b.shape} vs {b_ref.shape}")
    nref = np.linalg.norm(b_ref)
    if nref == 0.0:
        raise ValueError("zero reference vector")
    eps_mag = float(np.linalg.norm(np.abs(b) - np.abs(b_ref)) / nref)
    eps_compl = float(np.linalg.norm(b - b_ref) / nref)
    return ErrorMetrics(eps_mag, eps_compl)


@dataclass(frozen=True)
class ScatterPoint:
    """One solver trial: magnitude and (phase-aligned) complex deviations in dB."""

    trial: int
    mag_dev_db: float
    compl_dev_db: float
    init_kind: str
    starred: bool = False


def scatter_study(
    a,
    magnitudes: np.ndarray,
    b_true: np.ndarray,
    n_trials: int,
    init_policy: str = "random",
    x_true: np.ndarray | None = None,
    special_init: np.ndarray | None = None,
    special_kind: str = "spectral",
    seed: int = 0,
    options: SolveOptions | None = None,
) -> list[ScatterPoint]:
    """Local-minima scatter: solve repeatedly and record both deviation metrics.

    Random trials are seeded from `seed`; an optional special initialization
    (spectral guess or single-frequency solution) is appended star-marked.
    The complex deviation is evaluated after global phase alignment.
    """
    if n_trials < 0:
        raise ValueError("n_trials must be >= 0")
    a = _matrix(a)
    b = np.asarray(magnitudes, dtype=float)
    b_true = np.asarray(b_true, dtype=complex)
    nb = np.linalg.norm(b)
    points = []
    seeds = np.random.SeedSequence(seed).spawn(max(n_trials, 1))
    for t in range(n_trials):
        if init_policy == "random":
            x0 = random_init(a, b, np.random.default_rng(seeds[t]))
        elif init_policy == "true":
            if x_true is None:
                raise ValueError("init_policy 'true' requires x_true")
            x0 = np.asarray(x_true, dtype=complex)
        else:
            raise ValueError(f"unknown init policy {init_policy!r}")
        report = wirtinger_solve(a, b, x0, options, seed=int(seeds[t].entropy) & 0xFFFFFFFF)
        z = a @ report.solution
        points.append(
            ScatterPoint(
                trial=t,
                mag_dev_db=to_db(np.linalg.norm(np.abs(z) - b) / nb),
                compl_dev_db=to_db(phase_aligned_error(z, b_true)),
                init_kind=init_policy,
            )
        )
    if special_init is not None:
        report = wirtinger_solve(a, b, np.asarray(special_init, dtype=complex), options)
        z = a @ report.solution
        points.append(
            ScatterPoint(
                trial=n_trials,
                mag_dev_db=to_db(np.linalg.norm(np.abs(z) - b) / nb),
                compl_dev_db=to_db(phase_aligned_error(z, b_true)),
                init_kind=special_kind,
                starred=True,
            )
        )
    return points


def dump_scatter_csv(path, points: list) -> None:
    """Write `trial,mag_dev_db,compl_dev_db,init_kind` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "mag_dev_db", "compl_dev_db", "init_kind"])
        for p in points:
            writer.writerow(
                [p.trial, repr(p.mag_dev_db), repr(p.compl_dev_db), p.init_kind]
            )


def dump_curve_csv(path, curve: IndependenceCurve) -> None:
    """Write `M,count` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["M", "count"])
        for m, c in zip(curve.sample_counts, curve.independent_counts):
            writer.writerow([int(m), int(c)])
