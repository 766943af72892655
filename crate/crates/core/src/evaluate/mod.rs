//! Set-level metrics: a Fréchet distance between Gaussian fits of a fixed
//! 64-d handcrafted feature, a 0–100 fingerprint quality proxy, and the
//! score-distribution reports built on the matcher.

mod features;
mod quality;
mod reports;

use thiserror::Error;

pub use features::{feature_vector, fit_stats, frechet_distance, FeatureStats, FEATURE_DIM};
pub use quality::{
    quality_components, quality_report, quality_score, quality_score_with, QualityComponents,
    QualityReport, QualityWeights,
};
pub use reports::{
    cdf_csv, cdf_svg, diversity_report, diversity_report_with, empirical_cdf, fraction_at_least,
    histogram, histogram_csv, histogram_svg, impression_report, impression_report_with,
    inter_identity_scores, mann_whitney, median, quality_csv, summarize_scores, DiversityReport,
    ImpressionReport, MannWhitney, HISTOGRAM_BIN, HISTOGRAM_MAX,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("feature dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("covariance is not positive semidefinite (eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("identity group {group} has {size} template(s), need 2")]
    GroupTooSmall { group: usize, size: usize },
}
