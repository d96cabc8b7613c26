//! Multivariate variance-component model: observation layout, mean model,
//! covariance structure, likelihood evaluation and maximum-likelihood fitting.

mod covariance;
mod design;
mod engine;
mod fit;
mod index;
mod outlier;
mod summary;

pub use covariance::{build_observed_covariance, covariance_of_rows, sample_covariance, CovarianceModel, VarianceComponent};
pub use design::{apply_time_constraint, DesignLayout, MeanModel, Term};
pub use index::{person_partition, Cell, ObsBlock, ObservationIndex};
pub use engine::{Evaluation, Evaluator, ROTATION_MIN_PERSONS};
pub(crate) use engine::{BlockWeights, NullState};
pub use fit::{fit_null, loglikelihood, psd_lower_factor, FitOptions, FitResult};
pub use outlier::{group_statistic, individual_outlier_report, outlier_report, pedigree_outlier_report, OutlierRecord, OutlierUnit};
pub use summary::null_model_summary;
