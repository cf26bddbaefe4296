"""Trimmed least squares and trimmed LAD for censored two-period panels."""

from .bootstrap import (
    BootstrapConfig,
    BootstrapError,
    RobustSigmaResult,
    psd_project,
    resample,
    robust_sigma_tlad,
)
from .core import (
    CrossSectionDataset,
    LossKind,
    PanelDataError,
    PanelDataset,
    PanelObservation,
    SandwichCovariance,
    SingularMatrixError,
    load_panel_csv,
    rank_check,
    save_panel_csv,
)
from .dgp import (
    DgpSpec,
    SmoothExchangeable,
    TladCounterexample,
    TlsCounterexample,
    UnsupportedSpecError,
    simulate,
)
from .estimator import (
    FitConfig,
    FitResult,
    empirical_gradient,
    empirical_objective,
    fit,
    numeric_gradient,
)
from .harness import McConfig, McResult, run_mc
from .rng import stream
from .variance import (
    BreadVariant,
    bread_h92,
    bread_h92_decompose,
    bread_tls,
    cross_section_bread,
    meat_tlad,
    meat_tls,
    sandwich,
    tls_covariance,
)

__version__ = "0.1.0"
