"""Phaseless solvers: spectral initialization, Wirtinger-type descent, pipelines.

The descent minimizes the intensity mismatch
    f(x) = 1/(2M) sum_m (|<a_m, x>|^2 - b_m^2)^2
with the conjugate-coordinate gradient
    g(x) = 1/M  sum_m (|<a_m, x>|^2 - b_m^2) <a_m, x> a_m
and the ramped step size mu_t = min(1 - exp(-t/t0), mu_max) / ||x0||^2.
Solutions carry a global phase ambiguity; error metrics align it first.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import ForwardMatrix
from .operators import (
    DEFAULT_PINV_TOL,
    OperatorBundle,
    RelativePhaseData,
    stack_multifreq,
    truncated_pinv,
)


def _matrix(op) -> np.ndarray:
    return op.matrix if isinstance(op, ForwardMatrix) else np.asarray(op)


def to_db(value: float) -> float:
    """20 log10, floored to avoid -inf in reports."""
    return 20.0 * np.log10(max(float(value), 1e-300))


def magnitude_residual(a, magnitudes: np.ndarray, x: np.ndarray) -> float:
    """Relative magnitude mismatch || |Ax| - b || / ||b||."""
    a = _matrix(a)
    b = np.asarray(magnitudes, dtype=float)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return float(np.linalg.norm(np.abs(a @ x)))
    return float(np.linalg.norm(np.abs(a @ x) - b) / nb)


def align_global_phase(x: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Rotate x by the global phase that best matches the reference vector."""
    inner = np.vdot(x, reference)
    if inner == 0.0:
        return np.asarray(x)
    return np.exp(1j * np.angle(inner)) * np.asarray(x)


def phase_aligned_error(x: np.ndarray, reference: np.ndarray) -> float:
    """min over theta of ||e^{j theta} x - reference|| / ||reference||."""
    ref = np.asarray(reference)
    nr = np.linalg.norm(ref)
    if nr == 0.0:
        raise ValueError("zero reference vector")
    return float(np.linalg.norm(align_global_phase(x, ref) - ref) / nr)


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 5000
    stop_tol: float = 1e-10
    step_t0: float = 330.0
    step_max: float = 0.2
    spectral_iters: int = 200
    # descend on the row-normalized (equivalent) problem; helps operators with
    # strongly uneven row norms such as the stacked multi-frequency matrix
    row_balance: bool = False


@dataclass
class SolveReport:
    """Outcome of one descent run; `final_residual` is recomputed from `solution`."""

    solution: np.ndarray
    iterations: int
    residual_history: np.ndarray
    final_residual: float
    termination: str
    seed: int | None = None
    wall_time_s: float = 0.0

    @property
    def residual_history_db(self) -> np.ndarray:
        return 20.0 * np.log10(np.maximum(self.residual_history, 1e-300))

    @property
    def final_residual_db(self) -> float:
        return to_db(self.final_residual)

    def to_dict(self) -> dict:
        return {
            "iterations": int(self.iterations),
            "final_residual": float(self.final_residual),
            "final_residual_db": float(self.final_residual_db),
            "termination": self.termination,
            "seed": self.seed,
            "wall_time_s": float(self.wall_time_s),
            "n_unknowns": int(len(self.solution)),
        }


def spectral_init(a, magnitudes: np.ndarray, n_iter: int = 200) -> np.ndarray:
    """Leading eigenvector of the magnitude-weighted row correlation matrix.

    Power iteration on Y = 1/M sum_m b_m^2 a_m a_m^H from a fixed start, so
    the result is deterministic for fixed inputs.  The output is scaled so
    that ||A x0|| = ||b||.
    """
    a = _matrix(a)
    b = np.asarray(magnitudes, dtype=float)
    m, n = a.shape
    nb = np.linalg.norm(b)
    if nb == 0.0:
        warnings.warn("all-zero magnitudes; returning zero initial guess", stacklevel=2)
        return np.zeros(n, dtype=complex)
    w = b**2
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    for _ in range(n_iter):
        y = a.conj().T @ (w * (a @ x)) / m
        ny = np.linalg.norm(y)
        if ny == 0.0:
            break
        y /= ny
        if np.linalg.norm(y - x * np.vdot(x, y)) < 1e-14:
            x = y
            break
        x = y
    scale = np.linalg.norm(a @ x)
    if scale > 0:
        x *= nb / scale
    return x


def random_init(a, magnitudes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Complex-normal start scaled like a spectral guess (||A x0|| = ||b||)."""
    a = _matrix(a)
    n = a.shape[1]
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    scale = np.linalg.norm(a @ x)
    nb = np.linalg.norm(np.asarray(magnitudes, dtype=float))
    if scale > 0 and nb > 0:
        x *= nb / scale
    return x


def wirtinger_solve(
    a,
    magnitudes: np.ndarray,
    x0: np.ndarray,
    options: SolveOptions | None = None,
    seed: int | None = None,
) -> SolveReport:
    """Gradient descent on the intensity mismatch; returns the best iterate seen."""
    opts = options or SolveOptions()
    a = _matrix(a)
    b = np.asarray(magnitudes, dtype=float)
    m = a.shape[0]
    if len(x0) != a.shape[1]:
        raise ValueError(f"initial guess length {len(x0)} != {a.shape[1]} unknowns")
    t_start = time.perf_counter()
    nb = np.linalg.norm(b)
    x = np.array(x0, dtype=complex)
    norm0_sq = np.linalg.norm(x) ** 2
    if nb == 0.0 or norm0_sq == 0.0:
        report = SolveReport(
            solution=np.zeros_like(x),
            iterations=0,
            residual_history=np.array([magnitude_residual(a, b, np.zeros_like(x))]),
            final_residual=magnitude_residual(a, b, np.zeros_like(x)),
            termination="degenerate-input",
            seed=seed,
        )
        report.wall_time_s = time.perf_counter() - t_start
        return report
    if opts.row_balance:
        weights = np.linalg.norm(a, axis=1)
        positive = weights[weights > 0]
        if len(positive) == 0:
            raise ValueError("zero operator")
        weights = weights / np.median(positive)
        weights[weights == 0] = 1.0
        a_work = a / weights[:, None]
        b_work = b / weights
    else:
        a_work = a
        b_work = b
    y = b_work**2
    # mean-square row scale; makes the canonical step rule equivariant under
    # operator rescaling (equals 1 for unit-variance Gaussian rows)
    row_scale = np.linalg.norm(a_work) ** 2 / (m * a.shape[1])
    if row_scale == 0.0:
        raise ValueError("zero operator")
    best_x = x.copy()
    best_res = magnitude_residual(a, b, x)
    res = best_res
    history = [best_res]
    termination = "max-iter"
    backoff = 1.0
    for t in range(1, opts.max_iter + 1):
        z = a_work @ x
        err = np.abs(z) ** 2 - y
        grad = a_work.conj().T @ (err * z) / m
        mu = (
            min(1.0 - np.exp(-t / opts.step_t0), opts.step_max)
            * backoff
            / (norm0_sq * row_scale**2)
        )
        x_new = x - mu * grad
        res_new = float(np.linalg.norm(np.abs(a @ x_new) - b) / nb)
        if not np.isfinite(res_new) or res_new > 10.0 * max(best_res, 1.0):
            # unstable step; halve the step scale and restart from the best iterate
            backoff *= 0.5
            x = best_x.copy()
            history.append(res)
            if backoff < 1e-12:
                termination = "diverged"
                break
            continue
        x = x_new
        res = res_new
        history.append(res)
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res < opts.stop_tol:
            termination = "converged"
            break
    report = SolveReport(
        solution=best_x,
        iterations=len(history) - 1,
        residual_history=np.asarray(history),
        final_residual=magnitude_residual(a, b, best_x),
        termination=termination,
        seed=seed,
    )
    report.wall_time_s = time.perf_counter() - t_start
    return report


def linear_solve(a, b: np.ndarray, rel_tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Minimum-norm least-squares solution via the truncated pseudo-inverse."""
    return truncated_pinv(_matrix(a), rel_tol) @ np.asarray(b, dtype=complex)


class StageError(RuntimeError):
    """Failure of one pipeline stage, labeled by stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class MultiFreqResult:
    """Per-frequency recovered currents plus the stage reports that produced them."""

    currents: list
    b_estimates: np.ndarray
    reports: dict = field(default_factory=dict)
    bundle: OperatorBundle | None = None


def multifreq_retrieve(
    a_ops,
    data: RelativePhaseData,
    options: SolveOptions | None = None,
    rel_tol: float = DEFAULT_PINV_TOL,
    x0: np.ndarray | None = None,
    bundle: OperatorBundle | None = None,
    seed: int | None = None,
    balance_stacked: bool = True,
) -> MultiFreqResult:
    """Full pipeline: reference solve, stacked solve, phase combination, recovery.

    1. solve the single-frequency phaseless problem at the reference frequency
       (spectral start unless `x0` is given);
    2. solve the stacked multi-frequency problem starting from that solution
       (row-balanced by default; the stacked rows carry uneven scales);
    3. combine estimated block phases with the measured magnitudes;
    4. recover currents per frequency by linear least squares.
    With a single frequency, stage 2 collapses and the pipeline reduces to
    stages 1 and 4.
    """
    opts = options or SolveOptions()
    mats = [_matrix(op) for op in a_ops]
    i = data.reference_index
    reports: dict = {}

    try:
        start = x0 if x0 is not None else spectral_init(mats[i], data.magnitudes[i], opts.spectral_iters)
        reports["single-frequency"] = wirtinger_solve(
            mats[i], data.magnitudes[i], start, opts, seed=seed
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("single-frequency", exc) from exc

    if len(mats) == 1:
        x_ref = reports["single-frequency"].solution
        z = mats[i] @ x_ref
        b_est = (data.magnitudes[i] * np.exp(1j * np.angle(z)))[None, :]
        currents = [linear_solve(mats[i], b_est[0], rel_tol)]
        return MultiFreqResult(currents=currents, b_estimates=b_est, reports=reports)

    try:
        if bundle is None:
            bundle = stack_multifreq(mats, data, rel_tol)
        stacked_opts = replace(opts, row_balance=True) if balance_stacked else opts
        reports["multi-frequency"] = wirtinger_solve(
            bundle.a_tilde,
            data.stacked_magnitudes(),
            reports["single-frequency"].solution,
            stacked_opts,
            seed=seed,
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("multi-frequency", exc) from exc

    try:
        z = bundle.a_tilde @ reports["multi-frequency"].solution
        phases = np.angle(z.reshape(data.n_frequencies, data.n_samples))
        b_est = data.magnitudes * np.exp(1j * phases)
    except Exception as exc:
        raise StageError("phase-combination", exc) from exc

    try:
        currents = [linear_solve(mats[k], b_est[k], rel_tol) for k in range(len(mats))]
    except Exception as exc:
        raise StageError("linear-recovery", exc) from exc

    return MultiFreqResult(currents=currents, b_estimates=b_est, reports=reports, bundle=bundle)
