"""marketphase: rolling-window market-mode analysis.

Decomposes stock-return covariance windows into a dominant market mode
(time-varying betas), aggregates volume-weighted betas into a sector risk
measure, fits heavy-tail indices to market returns, quantifies beta
estimation error with a stochastic volatility Monte Carlo, and explains
risk-concentration switches with a diluted Ising agent model solved both
by simulation and in mean field.
"""

__version__ = "0.1.0"

from .panels import (
    DEFAULT_SECTORS,
    PanelError,
    PricePanel,
    ReturnPanel,
    WindowSpec,
    compute_returns,
    generate_synthetic_panel,
    iter_centers,
    load_panel,
    slice_window,
)
from .spectral import (
    ConvergenceError,
    CovarianceMatrix,
    DegenerateSpectrumWarning,
    DegenerateWindowError,
    NoPositiveWindowError,
    RankOneDecomposition,
    WindowSpectrum,
    covariance,
    full_spectrum,
    leading_eigenpair,
    minimal_positive_window,
    perturb_bulk,
    perturb_eigenpair,
)
from .svm import (
    BetaErrorReport,
    GammaSpec,
    SvmConfig,
    beta_error_bands,
    calibrate_gamma0,
    draw_gamma,
    simulate_svm,
    simulated_bulk,
)
from .tailfit import (
    ALPHA_MAX,
    ALPHA_MIN,
    TailFit,
    fit_alpha,
    gof_chisq,
    pf_cdf,
    pf_density,
    pf_logpdf,
    pf_ppf,
    pf_sample,
)
from .risk import RiskSeries, TransitionEvent, risk_measure, transition_detector
from .ising import (
    IsingConfig,
    IsingTrajectory,
    MeanFieldSolution,
    PhaseScan,
    free_energy_curve,
    mean_field_solve,
    phase_scan,
    simulate,
)
from .pipeline import (
    ConfigError,
    PipelineError,
    RunConfig,
    load_config,
    run_pipeline,
    validate_config,
)
