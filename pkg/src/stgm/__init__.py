"""Multivariate spatio-temporal GMRF models with arrow-notation structure.

The package compiles small structural models written in arrow notation
("X -> Y, b" for paths, "X <-> X, sd" for variances, with an optional lag
field) into sparse Gaussian Markov random field precisions over variables,
space, and time, and fits the resulting latent-variable GLMMs by
Laplace-approximated maximum likelihood.
"""

from .design import build_design, smoother_logpdf
from .errors import (
    ConfigError,
    DesignError,
    DomainError,
    FamilyError,
    FitError,
    NotationError,
    NotPositiveDefiniteError,
    RankDeficientError,
    SingularModelError,
    StgmError,
)
from .families import Family, make_family
from .gmrf import SeparableField, field_values, gmrf_logpdf, gmrf_sample, read_field
from .inference import (
    FitResult,
    FitSettings,
    ModelSpec,
    evaluate_fit,
    fit,
    integrate_output,
    laplace_marginal,
    make_spec,
    predict,
    residuals,
    simulate_response,
)
from .notation import PathTerm, RamModel, format_ram, parse_dsem, parse_sem
from .ram import (
    RamMatrices,
    assemble_ram,
    precision_from_ram,
    project_rank_deficient,
    projection_matrix,
)
from .sparse import SparseCholesky, SparseSymMatrix
from .spatial import (
    ArealDomain,
    MeshDomain,
    ProjectorRow,
    SingleSiteDomain,
    StreamDomain,
    build_mesh_precision,
    build_sar_precision,
    build_stream_precision,
    make_projector,
    read_areal,
    read_mesh,
    read_stream,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "StgmError",
    "NotationError",
    "SingularModelError",
    "RankDeficientError",
    "NotPositiveDefiniteError",
    "DomainError",
    "DesignError",
    "FamilyError",
    "ConfigError",
    "FitError",
    # sparse
    "SparseSymMatrix",
    "SparseCholesky",
    # notation
    "PathTerm",
    "RamModel",
    "parse_sem",
    "parse_dsem",
    "format_ram",
    # ram
    "RamMatrices",
    "assemble_ram",
    "precision_from_ram",
    "projection_matrix",
    "project_rank_deficient",
    # spatial
    "ProjectorRow",
    "MeshDomain",
    "ArealDomain",
    "StreamDomain",
    "SingleSiteDomain",
    "read_mesh",
    "read_areal",
    "read_stream",
    "build_mesh_precision",
    "build_sar_precision",
    "build_stream_precision",
    "make_projector",
    # gmrf
    "SeparableField",
    "gmrf_logpdf",
    "gmrf_sample",
    "read_field",
    "field_values",
    # design
    "build_design",
    "smoother_logpdf",
    # families
    "Family",
    "make_family",
    # inference
    "ModelSpec",
    "FitSettings",
    "FitResult",
    "make_spec",
    "laplace_marginal",
    "fit",
    "evaluate_fit",
    "predict",
    "residuals",
    "integrate_output",
    "simulate_response",
]
