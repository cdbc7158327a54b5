"""Multi-frequency phase retrieval toolkit for antenna field measurements."""

from .constants import C0, ETA0
from .diagnostics import (
    ErrorMetrics,
    IndependenceCurve,
    ScatterPoint,
    count_independent,
    ff_error_curve,
    freq_step_ratio,
    independence_sweep,
    max_freq_step,
    nf_errors,
    scatter_study,
)
from .forward import (
    ForwardMatrix,
    FrequencyGrid,
    assemble_forward,
    dipole_efield,
    farfield_operator,
    ff_cut,
    probe_array_rows,
    wavenumber,
)
from .geometry import (
    DipoleSet,
    ObservationSet,
    dipole_hull_sphere,
    dipole_ring,
    fibonacci_sphere,
    planar_grid,
    regular_sphere_grid,
    tangent_basis,
    two_polarization_observations,
)
from .operators import (
    OperatorBundle,
    Projector,
    RelativePhaseData,
    interfreq_ratio,
    projection,
    scaled_interfreq,
    scaled_projection,
    stack_multifreq,
    stack_multifreq_basic,
    stack_noref,
    truncated_pinv,
)
from .retrieval import (
    MultiFreqResult,
    SolveOptions,
    SolveReport,
    StageError,
    align_global_phase,
    linear_solve,
    magnitude_residual,
    multifreq_retrieve,
    phase_aligned_error,
    random_init,
    spectral_init,
    wirtinger_solve,
)
from .scenario import ScenarioConfig, load_config, synthesize_measurements
from .syncsim import (
    ChannelModel,
    CombSignal,
    ReceiverImpairments,
    extract_relative_phases,
    make_comb,
    multi_position_consistency,
    simulate_chain,
    synchronize,
)

__version__ = "0.1.0"
