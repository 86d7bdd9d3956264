//! Numerical toolkit for multi-frequency quasi-periodic CMV matrices.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what every tolerance in the
//! test-suite is calibrated for.

// Negated comparisons are deliberate: they send NaN down the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `Real` does not require the assign-operator traits.
#![allow(clippy::assign_op_pattern)]
#![allow(
    clippy::too_many_arguments,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod cmv;
pub mod cocycle;
pub mod determinants;
pub mod error;
pub mod ldt;
pub mod linalg;
pub mod montecarlo;
pub mod multiscale;
pub mod scalar;
pub mod spectral;
pub mod torus;

pub use cmv::{
    build_finite_cmv, build_truncation, cmv_row_window, theta_block, Cut, FiniteCmv,
    QuasiPeriodicModel, VerblunskySequence,
};
pub use cocycle::{
    cocycle_step, lyapunov_avalanche, lyapunov_finite, transfer_product, CocycleProduct,
    LyapunovEstimate, LyapunovMethod, SpectralPoint,
};
pub use error::{CmvError, Result};
pub use montecarlo::ExceptionalSetEstimate;
pub use scalar::{Cx, Mat2, Real};
pub use torus::{check_diophantine, reduce_phase, Frequency, Phase, SamplingFunction};

pub type Phase64 = torus::Phase<f64>;
pub type Frequency64 = torus::Frequency<f64>;
pub type SamplingFunction64 = torus::SamplingFunction<f64>;
pub type VerblunskySequence64 = cmv::VerblunskySequence<f64>;
pub type QuasiPeriodicModel64 = cmv::QuasiPeriodicModel<f64>;
pub type FiniteCmv64 = cmv::FiniteCmv<f64>;
pub type SpectralPoint64 = cocycle::SpectralPoint<f64>;
pub type CocycleProduct64 = cocycle::CocycleProduct<f64>;
pub type LyapunovEstimate64 = cocycle::LyapunovEstimate<f64>;
pub type CharDet64 = determinants::CharDet<f64>;
pub type GreenValue64 = determinants::GreenValue<f64>;
pub type EigenPair64 = spectral::EigenPair<f64>;
pub type DenseMatrix64 = linalg::DenseMatrix<f64>;
pub type ScaleSchedule64 = multiscale::ScaleSchedule<f64>;
pub type InductiveState64 = multiscale::InductiveState<f64>;
pub type Complex64 = num_complex::Complex<f64>;
