"""Config-driven scenario synthesis, measurement files, and run records."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml

from .forward import ForwardMatrix, assemble_forward, ff_cut, probe_array_rows
from .geometry import (
    DipoleSet,
    ObservationSet,
    dipole_hull_sphere,
    dipole_ring,
    fibonacci_sphere,
    planar_grid,
    planar_observations,
    regular_sphere_grid,
    tangent_basis,
    two_polarization_observations,
)
from .operators import RelativePhaseData, stack_multifreq
from .retrieval import SolveOptions

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid configuration, labeled with the offending field path."""

    def __init__(self, fieldpath: str, message: str):
        super().__init__(f"{fieldpath}: {message}")
        self.fieldpath = fieldpath


def _require(mapping: dict, fieldpath: str, key: str):
    if key not in mapping:
        raise ConfigError(f"{fieldpath}.{key}", "missing required field")
    return mapping[key]


def _check_keys(mapping: dict, fieldpath: str, allowed: set):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{fieldpath}.{sorted(unknown)[0]}", "unknown field")


@dataclass(frozen=True)
class AutConfig:
    kind: str = "hull"  # hull | ring
    count: int = 24
    radius: float = 0.1
    seed: int = 1

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "aut") -> "AutConfig":
        _check_keys(d, fieldpath, {"kind", "count", "radius", "seed"})
        kind = d.get("kind", "hull")
        if kind not in ("hull", "ring"):
            raise ConfigError(f"{fieldpath}.kind", f"must be 'hull' or 'ring', got {kind!r}")
        return cls(
            kind=kind,
            count=int(d.get("count", 24)),
            radius=float(d.get("radius", 0.1)),
            seed=int(d.get("seed", 1)),
        )


@dataclass(frozen=True)
class SurfaceConfig:
    kind: str  # fibonacci | regular | planar
    radius: float = 1.0
    count: int = 100
    step_deg: float = 10.0
    size_x: float = 1.0
    size_y: float = 1.0
    step: float = 0.1
    distance: float = 1.0

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str) -> "SurfaceConfig":
        _check_keys(
            d,
            fieldpath,
            {"kind", "radius", "count", "step_deg", "size_x", "size_y", "step", "distance"},
        )
        kind = _require(d, fieldpath, "kind")
        if kind not in ("fibonacci", "regular", "planar"):
            raise ConfigError(f"{fieldpath}.kind", f"unknown surface kind {kind!r}")
        base = cls(kind=kind)
        return replace(
            base,
            **{k: type(getattr(base, k))(v) for k, v in d.items() if k != "kind"},
        )

    def points(self) -> np.ndarray:
        if self.kind == "fibonacci":
            return fibonacci_sphere(self.count, self.radius)
        if self.kind == "regular":
            return regular_sphere_grid(self.step_deg, self.radius)
        return planar_grid(self.size_x, self.size_y, self.step, self.distance)


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "plain"  # plain | array
    separation: float = 0.2

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "probe") -> "ProbeConfig":
        _check_keys(d, fieldpath, {"kind", "separation"})
        kind = d.get("kind", "plain")
        if kind not in ("plain", "array"):
            raise ConfigError(f"{fieldpath}.kind", f"must be 'plain' or 'array', got {kind!r}")
        return cls(kind=kind, separation=float(d.get("separation", 0.2)))


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 5000
    stop_tol: float = 1e-10
    step_t0: float = 330.0
    step_max: float = 0.2
    pinv_rel_tol: float = 1e-8
    trials: int = 20

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "solver") -> "SolverConfig":
        allowed = {"max_iter", "stop_tol", "step_t0", "step_max", "pinv_rel_tol", "trials"}
        _check_keys(d, fieldpath, allowed)
        base = cls()
        return replace(base, **{k: type(getattr(base, k))(v) for k, v in d.items()})

    def options(self) -> SolveOptions:
        return SolveOptions(
            max_iter=self.max_iter,
            stop_tol=self.stop_tol,
            step_t0=self.step_t0,
            step_max=self.step_max,
        )


@dataclass(frozen=True)
class SyncConfig:
    n_tones: int = 21
    f_start_hz: float = -9e6
    f_stop_hz: float = 11e6
    lo_offset_hz: float = 109e6
    sample_rate: float = 480e6
    n_periods: int = 8
    n_positions: int = 10
    jitter_samples: float = 0.3
    noise_level: float = 1e-4
    null_position: int = -1  # index of a deep-null channel, -1 for none

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "sync") -> "SyncConfig":
        base = cls()
        _check_keys(d, fieldpath, set(asdict(base)))
        return replace(base, **{k: type(getattr(base, k))(v) for k, v in d.items()})


@dataclass(frozen=True)
class IndependenceConfig:
    m_values: tuple = (160, 320, 480, 640, 800, 960)
    second_radius: float = 0.0  # 0 means twice the first surface radius

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "independence") -> "IndependenceConfig":
        base = cls()
        _check_keys(d, fieldpath, set(asdict(base)))
        out = dict(d)
        if "m_values" in out:
            out["m_values"] = tuple(int(v) for v in out["m_values"])
        if "second_radius" in out:
            out["second_radius"] = float(out["second_radius"])
        return replace(base, **out)


@dataclass(frozen=True)
class FreqStepConfig:
    ring_count: int = 1000
    ring_radii: tuple = (0.18, 1.38)
    obs_distance: float = 2.1
    f1_hz: float = 1e9
    delta_f_max_hz: float = 5e8
    n_steps: int = 50

    @classmethod
    def from_dict(cls, d: dict, fieldpath: str = "freq_step") -> "FreqStepConfig":
        base = cls()
        _check_keys(d, fieldpath, set(asdict(base)))
        out = {k: v for k, v in d.items()}
        if "ring_radii" in out:
            out["ring_radii"] = tuple(float(v) for v in out["ring_radii"])
        return replace(base, **out)


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete experiment description; round-trips through to_dict/from_dict."""

    aut: AutConfig = field(default_factory=AutConfig)
    model: AutConfig | None = None  # reconstruction model; defaults to the AUT
    surfaces: tuple = (SurfaceConfig(kind="fibonacci"),)
    frequencies_hz: tuple = (3e9,)
    reference_index: int = 0
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    noise_level: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    independence_threshold: float = 1e-5
    store_truth: bool = True
    seed: int = 0
    sync: SyncConfig = field(default_factory=SyncConfig)
    freq_step: FreqStepConfig = field(default_factory=FreqStepConfig)
    independence: IndependenceConfig = field(default_factory=IndependenceConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", f"expected a mapping, got {type(d).__name__}")
        allowed = {
            "aut",
            "model",
            "surfaces",
            "frequencies_hz",
            "reference_index",
            "probe",
            "noise_level",
            "solver",
            "independence_threshold",
            "store_truth",
            "seed",
            "sync",
            "freq_step",
            "independence",
        }
        _check_keys(d, "<root>", allowed)
        surfaces = tuple(
            SurfaceConfig.from_dict(s, f"surfaces[{idx}]")
            for idx, s in enumerate(d.get("surfaces", [{"kind": "fibonacci"}]))
        )
        freqs = tuple(float(f) for f in d.get("frequencies_hz", [3e9]))
        if any(f <= 0 for f in freqs):
            raise ConfigError("frequencies_hz", "frequencies must be positive")
        if len(freqs) > 1 and any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ConfigError("frequencies_hz", "frequencies must be strictly increasing")
        ref = int(d.get("reference_index", 0))
        if not 0 <= ref < len(freqs):
            raise ConfigError("reference_index", f"index {ref} out of range for {len(freqs)} frequencies")
        return cls(
            aut=AutConfig.from_dict(d.get("aut", {})),
            model=AutConfig.from_dict(d["model"], "model") if d.get("model") else None,
            surfaces=surfaces,
            frequencies_hz=freqs,
            reference_index=ref,
            probe=ProbeConfig.from_dict(d.get("probe", {})),
            noise_level=float(d.get("noise_level", 0.0)),
            solver=SolverConfig.from_dict(d.get("solver", {})),
            independence_threshold=float(d.get("independence_threshold", 1e-5)),
            store_truth=bool(d.get("store_truth", True)),
            seed=int(d.get("seed", 0)),
            sync=SyncConfig.from_dict(d.get("sync", {})),
            freq_step=FreqStepConfig.from_dict(d.get("freq_step", {})),
            independence=IndependenceConfig.from_dict(d.get("independence", {})),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surfaces"] = [asdict(s) for s in self.surfaces]
        d["frequencies_hz"] = list(self.frequencies_hz)
        d["freq_step"] = asdict(self.freq_step)
        d["freq_step"]["ring_radii"] = list(self.freq_step.ring_radii)
        d["independence"] = asdict(self.independence)
        d["independence"]["m_values"] = list(self.independence.m_values)
        if self.model is None:
            d.pop("model")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        ).hexdigest()


def load_config(path) -> ScenarioConfig:
    """Parse a YAML scenario file with line diagnostics on syntax errors."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        location = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError("<file>", f"YAML parse failure{location}: {exc}") from exc
    if raw is None:
        raw = {}
    return ScenarioConfig.from_dict(raw)


def save_config(path, config: ScenarioConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


def build_aut(cfg: AutConfig) -> DipoleSet:
    if cfg.kind == "hull":
        return dipole_hull_sphere(cfg.count, cfg.radius, cfg.seed)
    return dipole_ring(cfg.count, cfg.radius)


def probe_center_points(config: ScenarioConfig) -> np.ndarray:
    return np.vstack([s.points() for s in config.surfaces])


def build_observations(config: ScenarioConfig) -> ObservationSet:
    """Observation rows for all configured surfaces (one row per sample)."""
    sets = []
    for surf in config.surfaces:
        pts = surf.points()
        if config.probe.kind == "array":
            th, ph = tangent_basis(pts)
            loc = np.repeat(pts, 8, axis=0)
            pol = np.empty_like(loc)
            for j in range(4):
                pol[j::8] = th
                pol[4 + j :: 8] = ph
            sets.append(ObservationSet(loc, pol, probe_separation=config.probe.separation))
        elif surf.kind == "planar":
            sets.append(planar_observations(pts))
        else:
            sets.append(two_polarization_observations(pts))
    loc = np.vstack([s.locations for s in sets])
    pol = np.vstack([s.polarizations for s in sets])
    sep = config.probe.separation if config.probe.kind == "array" else None
    return ObservationSet(loc, pol, probe_separation=sep)


def forward_operators(
    dipoles: DipoleSet, config: ScenarioConfig, obs: ObservationSet | None = None
) -> list:
    """Per-frequency forward matrices for the configured probe kind."""
    ops = []
    for f in config.frequencies_hz:
        if config.probe.kind == "array":
            pts = probe_center_points(config)
            ops.append(probe_array_rows(dipoles, pts, config.probe.separation, f))
        else:
            ops.append(assemble_forward(dipoles, obs or build_observations(config), f))
    return ops


@dataclass
class Synthesis:
    """Synthetic measurement campaign: geometry, operators, and phaseless data."""

    config: ScenarioConfig
    aut: DipoleSet
    observations: ObservationSet
    operators: list
    data: RelativePhaseData
    true_samples: np.ndarray


def synthesize_measurements(config: ScenarioConfig, seed: int | None = None) -> Synthesis:
    """Compute complex samples per frequency and reduce them to phaseless data."""
    master = config.seed if seed is None else seed
    aut = build_aut(config.aut)
    obs = build_observations(config)
    ops = forward_operators(aut, config, obs)
    samples = np.vstack([op.matrix @ aut.excitations for op in ops])
    if config.noise_level > 0.0:
        for k in range(samples.shape[0]):
            rng = np.random.default_rng([master, 7001 + k])
            scale = config.noise_level * np.linalg.norm(samples[k]) / np.sqrt(samples.shape[1])
            samples[k] = samples[k] + scale * (
                rng.standard_normal(samples.shape[1])
                + 1j * rng.standard_normal(samples.shape[1])
            ) / np.sqrt(2.0)
    data = RelativePhaseData.from_complex(
        samples, config.reference_index, keep_truth=config.store_truth
    )
    return Synthesis(config, aut, obs, ops, data, samples)


def model_dipoles(config: ScenarioConfig) -> DipoleSet:
    return build_aut(config.model if config.model is not None else config.aut)


def with_excitations(dipoles: DipoleSet, x: np.ndarray) -> DipoleSet:
    return DipoleSet(dipoles.positions, dipoles.orientations, x)


def reference_ff_cut(aut: DipoleSet, frequency: float, phi_deg: float = 0.0) -> np.ndarray:
    return ff_cut(aut, frequency, phi_deg=phi_deg)


MEASUREMENT_HEADER = [
    "pos_x",
    "pos_y",
    "pos_z",
    "pol_x",
    "pol_y",
    "pol_z",
    "freq_hz",
    "mag",
    "rel_phase_rad",
]


def write_measurements(
    path,
    obs: ObservationSet,
    frequencies_hz,
    data: RelativePhaseData,
    include_truth: bool = True,
) -> None:
    """Measurement interchange CSV, one row per (sample, frequency)."""
    truth = data.true_complex if include_truth else None
    header = MEASUREMENT_HEADER + (["true_re", "true_im"] if truth is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, f in enumerate(frequencies_hz):
            for ell in range(data.n_samples):
                row = [
                    repr(float(v))
                    for v in (*obs.locations[ell], *obs.polarizations[ell])
                ]
                row.append(repr(float(f)))
                row.append(repr(float(data.magnitudes[k, ell])))
                row.append(repr(float(data.phase_diffs[k, ell])))
                if truth is not None:
                    row.append(repr(float(truth[k, ell].real)))
                    row.append(repr(float(truth[k, ell].imag)))
                writer.writerow(row)


def read_measurements(path):
    """Read the interchange CSV back into observation arrays and phaseless data."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[: len(MEASUREMENT_HEADER)] != MEASUREMENT_HEADER:
            raise ValueError(f"unexpected measurement header in {path}")
        has_truth = len(header) == len(MEASUREMENT_HEADER) + 2
        rows = [[float(v) for v in row] for row in reader]
    freqs = sorted({row[6] for row in rows})
    freq_index = {f: k for k, f in enumerate(freqs)}
    per_freq: list = [[] for _ in freqs]
    for row in rows:
        per_freq[freq_index[row[6]]].append(row)
    n_samples = len(per_freq[0])
    if any(len(block) != n_samples for block in per_freq):
        raise ValueError("unequal sample counts across frequencies")
    loc = np.array([r[0:3] for r in per_freq[0]])
    pol = np.array([r[3:6] for r in per_freq[0]])
    mag = np.array([[r[7] for r in block] for block in per_freq])
    pha = np.array([[r[8] for r in block] for block in per_freq])
    truth = None
    if has_truth:
        truth = np.array([[complex(r[9], r[10]) for r in block] for block in per_freq])
    obs = ObservationSet(loc, pol)
    data = RelativePhaseData(mag, pha, 0, truth)
    return obs, np.array(freqs), data


@dataclass
class RunRecord:
    """Persisted outcome of one CLI run; metrics are recomputable from artifacts."""

    subcommand: str
    config_hash: str
    seed: int
    version: str = TOOL_VERSION
    started_utc: str = ""
    finished_utc: str = ""
    reports: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def independence_generators(
    aut: DipoleSet,
    frequency_hz: float,
    r1: float,
    r2: float,
    probe_separation: float,
    multifreq_hz,
    seed: int = 0,
    pinv_rel_tol: float = 1e-8,
) -> dict:
    """Equal-row-count operator generators for the diversity comparison.

    All generators accept the total sample count M and spend it differently:
    two samples per location on one sphere, four per location pair on two
    spheres, eight per probe-array location, or 2 * n_freq per location in the
    stacked multi-frequency operator.
    """
    multifreq_hz = list(multifreq_hz)
    n_f = len(multifreq_hz)

    def gaussian(m: int) -> np.ndarray:
        rng = np.random.default_rng([seed, m])
        n = len(aut)
        return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2.0)

    def single_sphere(m: int) -> np.ndarray:
        if m % 2 != 0:
            raise ValueError(f"single-sphere requires even M, got {m}")
        obs = two_polarization_observations(fibonacci_sphere(m // 2, r1))
        return assemble_forward(aut, obs, frequency_hz).matrix

    def two_spheres(m: int) -> np.ndarray:
        if m % 4 != 0:
            raise ValueError(f"two-spheres requires M divisible by 4, got {m}")
        blocks = []
        for r in (r1, r2):
            obs = two_polarization_observations(fibonacci_sphere(m // 4, r))
            blocks.append(assemble_forward(aut, obs, frequency_hz).matrix)
        return np.vstack(blocks)

    def probe_array(m: int) -> np.ndarray:
        if m % 8 != 0:
            raise ValueError(f"probe-array requires M divisible by 8, got {m}")
        pts = fibonacci_sphere(m // 8, r1)
        return probe_array_rows(aut, pts, probe_separation, frequency_hz).matrix

    def multi_frequency(m: int) -> np.ndarray:
        rows_per_loc = 2 * n_f
        if m % rows_per_loc != 0:
            raise ValueError(f"multi-frequency requires M divisible by {rows_per_loc}, got {m}")
        obs = two_polarization_observations(fibonacci_sphere(m // rows_per_loc, r1))
        ops = [assemble_forward(aut, obs, f) for f in multifreq_hz]
        samples = np.vstack([op.matrix @ aut.excitations for op in ops])
        data = RelativePhaseData.from_complex(samples, 0, keep_truth=False)
        return stack_multifreq(ops, data, pinv_rel_tol).a_tilde

    return {
        "gaussian": gaussian,
        "single-sphere": single_sphere,
        "two-spheres": two_spheres,
        "probe-array": probe_array,
        "multi-frequency": multi_frequency,
    }
