//! Provably robust Mahalanobis metric learning for K-NN classifiers.
//!
//! - [`metric`]: Mahalanobis distances parameterized by a factor `G`, `M = GᵀG`.
//! - [`knn`]: brute-force K-NN under a learned metric.
//! - [`certify`]: lower bounds on the minimal adversarial perturbation.
//! - [`exact`]: exact minimal perturbation for 1-NN via a dual QP.
//! - [`trainer`]: learning `G` to maximize certified radii.
//! - [`attack`]: hard-label attack giving upper bounds.

pub mod attack;
pub mod certify;
pub mod curve;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod knn;
pub mod metric;
pub mod synthetic;
pub mod trainer;

pub use attack::{boundary_attack, empirical_curve, AttackResult};
pub use certify::{
    certified_curve, certify_instances, knn_lower_bound, triplet_epsilon, CertificationResult, CertifyMode,
};
pub use curve::{CurveKind, RobustErrorCurve};
pub use dataset::{harmonize, load_libsvm, parse_libsvm, sample_subset, Dataset, MinMaxScaler};
pub use error::{ArmlError, Result};
pub use exact::{exact_minimal_perturbation, gcd_qp, Perturbation, QpSolution, Screening};
pub use knn::{clean_error, KnnModel};
pub use metric::{mahalanobis_distance, MetricFactor};
pub use trainer::{train, LossFn, Objective, TrainConfig, TrainReport};
