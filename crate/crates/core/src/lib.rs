//! Exact global minima of deep linear networks with weight decay and
//! stochastic neurons.
//!
//! The model is a depth-`D` linear network whose hidden units are
//! multiplied by independent random factors of mean 1 (a dropout-like
//! perturbation), trained on the exact population square loss with L2
//! regularization on every layer. For this family the training objective is
//! available in closed form — no sampling — and its global minima can be
//! computed exactly: they are either the trivial zero solution or a
//! rank-one, sign-aligned configuration whose magnitude solves a scalar
//! root problem.
//!
//! The crate provides:
//!
//! * [`moments`]: the data enters only through second-order moments;
//!   computing, whitening, and spectrally decomposing them.
//! * [`arch`]: validated architectures and the aggregate constants of the
//!   scalar reduction.
//! * [`params`]: parameter containers shared by losses, gradients, and
//!   optimizers.
//! * [`loss`]: the exact population loss, its analytic gradient, and the
//!   scalar loss profile of the balanced solution family.
//! * [`solver`]: root-finding for the optimal magnitude, assembly of
//!   candidate minima, the global minimum with certificates, and the
//!   bias-aware variant for depth 1.
//! * [`regimes`]: classification of `(data, architecture)` pairs into
//!   loss-landscape regimes, origin curvature, and learnability thresholds
//!   as depth grows.
//! * [`verifier`]: independent checks — gradient descent on the exact
//!   loss, brute-force grid search, empirical landscapes of nonlinear
//!   networks on finite datasets.
//! * [`variance`]: prediction variance under the stochastic units at the
//!   optimum, and its scaling with width, noise, and depth.

pub mod arch;
pub mod error;
pub mod loss;
pub mod moments;
pub mod params;
pub mod regimes;
pub mod solver;
pub mod variance;
pub mod verifier;

pub use arch::{AggregateConstants, Architecture, HomogeneousArchitecture};
pub use error::{Error, Result};
pub use loss::{expected_loss, loss_and_gradient, loss_gradient, scalar_loss_profile, LossProfile};
pub use moments::{compute_moments, gen_linear_dataset, DataMoments, Dataset, SpectralData};
pub use params::{InitScheme, Params};
pub use regimes::{
    asymptotic_learnability, classify, hessian_at_origin, origin_basin_radius, origin_basin_report,
    BasinRadius, DepthThreshold, HessianSummary, RegimeLabel, RegimeReport,
};
pub use solver::{
    assemble, closed_form_b_isotropic, global_minimum, residual_deep, residual_two_layer, solve_b,
    solve_two_layer_bias, BiasSolution, BracketInfo, CandidateKind, GlobalMinimum,
    SolutionCandidate, SolverOptions,
};
pub use variance::{
    prediction_variance, prediction_variance_by_propagation, variance_scaling, ScalingExponents,
    SweepAxis, VariancePoint, VarianceReport,
};
pub use verifier::{
    brute_force_min, gd_optimize, nonlinear_landscape, weak_signal_experiment, Activation,
    BruteForceResult, EndpointClass, LandscapeResult, TrainConfig, TrainResult, WeakSignalRow,
};
