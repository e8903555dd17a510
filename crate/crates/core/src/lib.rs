//! Survival and event-history analysis over discrete episode time.
//!
//! The crate is organized around a small set of building blocks:
//!
//! * [`cohort`] — subject records, CSV parsing, exclusion rules, dummy-coded
//!   design matrices, and baseline summary tables.
//! * [`survfit`] — product-limit (Kaplan-Meier) curves with delayed entry and
//!   right censoring, plus the multi-group log-rank test.
//! * [`coxph`] — proportional-hazards partial likelihood (Breslow and Efron
//!   tie handling), Newton-Raphson fitting, and Wald inference tables.
//! * [`logit`] — logistic regression fitted by iteratively reweighted least
//!   squares, with explicit separation detection.
//! * [`statfn`] — the numerical kernels everything else leans on: normal CDF,
//!   chi-square tail probability, Cholesky solves, finite differences.
//! * [`synth`] — seeded synthetic cohort generators and brute-force grid
//!   oracles used to cross-check the fitters.
//! * [`table`] — rendering of model and baseline tables to markdown, CSV,
//!   and JSON.
//!
//! All numeric code is generic over the scalar type through [`num::Real`],
//! which is implemented for `f32` and `f64`. The aliases below fix the
//! common double-precision instantiations.

pub mod cohort;
pub mod coxph;
pub mod logit;
pub mod num;
pub mod statfn;
pub mod survfit;
pub mod synth;
pub mod table;

pub use num::Real;

/// Double-precision design matrix.
pub type DesignMatrix64 = cohort::DesignMatrix<f64>;
/// Double-precision product-limit curve.
pub type KmCurve64 = survfit::KmCurve<f64>;
/// Double-precision log-rank test result.
pub type LogRank64 = survfit::LogRank<f64>;
/// Double-precision proportional-hazards fit.
pub type CoxFit64 = coxph::CoxFit<f64>;
/// Double-precision logistic fit.
pub type LogitFit64 = logit::LogitFit<f64>;
/// Double-precision inference table.
pub type ModelTable64 = table::ModelTable<f64>;
/// Double-precision symmetric positive-definite matrix.
pub type SpdMatrix64 = statfn::SpdMatrix<f64>;
