"""Spectral workbench for continuous state machines.

Builds finite transfer-operator approximations (Ulam grids for CSM
dynamics, diffusion kernels for point clouds), decomposes them into
biorthogonal eigensystems, partitions states into spectral basins, probes
the partition with low-capacity classifiers, extracts basin-level skeleton
graphs, and checks the adiabatic product-vs-power drift bound.
"""

from .basins import BasinLabeling, BootstrapStability, ari, assign_basins, bootstrap_ari, jaccard_ovr
from .csm import (
    AttractorDecision,
    CSMSpec,
    ConfidencePolicy,
    Trajectory,
    classify_attractor,
    closed_loop_jacobian,
    decode_softmax,
    decode_stochastic,
    lipschitz_estimate,
    run_until_settled,
    simulate,
    spec_from_json,
    spec_to_json,
    step_deterministic,
)
from .estimators import DiffusionMapEmbedding, SpectralBasinClusterer
from .kernels import (
    KernelMatrix,
    ReferenceMeasure,
    diffusion_kernel,
    doeblin_check,
    explicit_kernel,
    finite_horizon_propagator,
    lazy_kernel,
    stationary_distribution,
    ulam_kernel,
)
from .probes import (
    ClassifierReport,
    GiniTreeClassifier,
    PolyLogisticClassifier,
    train_polylogistic,
    train_tree,
)
from .skeleton import (
    AdiabaticFamily,
    SkeletonGraph,
    build_skeleton,
    compare_adiabatic,
    make_adiabatic_family,
    rollout_skeleton,
    skeleton_to_dot,
    uniform_gap_check,
)
from .spectral import (
    DecayReport,
    SpectralDecomposition,
    eigendecompose,
    select_rank,
    spectral_coordinates,
    verify_collapse,
)
from .statespace import (
    Grid,
    PointCloud,
    StateBox,
    locate_cell,
    locate_cells,
    make_grid,
    read_points_csv,
    synth_mixture,
    write_points_csv,
)

__version__ = "0.1.0"
