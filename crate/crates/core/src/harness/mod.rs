//! Experiment harness: configurations, sweeps, rate fits and output records.

mod config;
mod experiments;
mod fit;
mod functions;
mod record;

pub use config::{
    defaults, merge, BandMode, CoefficientSpec, ExperimentConfig, ExperimentKind, LimitExpectation, TestFunctionKind,
    WeightCase,
};
pub use experiments::{
    convergence_study, critical_study, degeneracy_study, pointwise_limit_study, rate_study, recover_function, run,
    weighted_study,
};
pub use fit::{band_deviation, fit_loglog, fit_semilog, FitDomain, FitResult};
pub use functions::{flattened_profile, fourier_family, sample_test_function, sine_product, FourierSum};
pub use record::{write_record, Check, ExperimentRecord, OutputFormat, Table};
