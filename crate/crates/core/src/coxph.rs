//! Proportional-hazards regression on the partial likelihood.
//!
//! Episode time is discrete and subjects can enter late, so each death is
//! compared against exactly the subjects whose observation window covers its
//! episode. Tied deaths are handled by either the Breslow or the Efron
//! approximation; Efron is the default everywhere a default is needed.
//!
//! Fitting is plain Newton-Raphson from a zero start with step-halving, which
//! is reliable here because the partial likelihood is concave.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cohort::DesignMatrix;
use crate::num::Real;
use crate::statfn::{self, SpdMatrix};
use crate::table::{self, ModelTable};

/// Coefficient magnitude treated as divergence to infinity.
const DIVERGENCE_LIMIT: f64 = 15.0;
/// Maximum Newton-Raphson iterations.
const MAX_ITER: usize = 50;
/// Maximum step halvings inside one iteration.
const MAX_HALVINGS: usize = 20;
/// Gradient max-norm declaring convergence.
const GRAD_TOL: f64 = 1e-6;
/// Predicted log-likelihood gain declaring a stall.
const LL_TOL: f64 = 1e-9;
/// Largest step still taken unguarded once the predicted gain is below
/// `LL_TOL`; anything larger suggests a near-singular direction instead.
const POLISH_STEP: f64 = 1e-3;

/// Errors raised while evaluating or fitting the model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoxError {
    /// Entry, exit, and event arrays must align with the design rows.
    #[error("input arrays have mismatched lengths")]
    MismatchedLengths,
    /// At least one subject is required.
    #[error("no subjects to fit")]
    Empty,
    /// Observation intervals must be ordered.
    #[error("subject {index}: entry episode {entry} is after exit episode {exit}")]
    EntryAfterExit { index: usize, entry: u32, exit: u32 },
    /// The design matrix has no columns.
    #[error("design matrix has no columns")]
    NoColumns,
    /// The partial likelihood is an empty product without events.
    #[error("no events in the data; the partial likelihood is empty")]
    NoEvents,
    /// A covariate that never varies cannot be estimated.
    #[error("column `{name}` is constant across subjects; drop it or recode the references")]
    ConstantColumn { name: String },
    /// The likelihood keeps rising as this coefficient grows without bound.
    #[error(
        "coefficient for `{name}` diverged past 15; the column separates the \
         death order perfectly (monotone likelihood)"
    )]
    MonotoneLikelihood { name: String },
    /// The observed information cannot be factorized.
    #[error("observed information is singular at iteration {iteration}; columns may be collinear")]
    SingularInformation { iteration: usize },
    /// A coefficient vector of the wrong width was supplied.
    #[error("beta has {got} coefficients but the design has {expected} columns")]
    WrongBetaLength { got: usize, expected: usize },
    /// Confidence level outside (0, 1).
    #[error("confidence level must be strictly between 0 and 1")]
    BadConfidenceLevel,
    /// Inference on a fit that did not converge is meaningless.
    #[error("the fit did not converge; inference tables require a converged fit")]
    NotConverged,
}

/// How tied death episodes enter the partial likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiesMethod {
    /// Breslow: every tied death sees the full risk-set sum.
    Breslow,
    /// Efron: tied deaths progressively discount their own group.
    #[default]
    Efron,
}

impl TiesMethod {
    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            TiesMethod::Breslow => "breslow",
            TiesMethod::Efron => "efron",
        }
    }
}

impl FromStr for TiesMethod {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "breslow" => Ok(TiesMethod::Breslow),
            "efron" => Ok(TiesMethod::Efron),
            _ => Err(()),
        }
    }
}

impl fmt::Display for TiesMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fitted proportional-hazards model.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit<R> {
    /// Design column names, aligned with `coefficients`.
    pub terms: Vec<String>,
    /// Estimated log hazard ratios.
    pub coefficients: Vec<R>,
    /// Coefficient covariance, row-major `p x p` (inverse observed information).
    pub covariance: Vec<R>,
    /// Partial log-likelihood at the estimate.
    pub log_likelihood: R,
    /// Partial log-likelihood at zero coefficients.
    pub null_log_likelihood: R,
    /// Partial log-likelihood after each accepted step, starting at the
    /// zero vector. Non-decreasing; the last entry equals `log_likelihood`.
    pub log_likelihood_trace: Vec<R>,
    /// Newton-Raphson iterations performed.
    pub iterations: usize,
    /// True when the final gradient max-norm is within tolerance.
    pub converged: bool,
    pub n_subjects: usize,
    pub n_events: usize,
    pub ties: TiesMethod,
    /// Data-quality notes that do not invalidate the fit.
    pub warnings: Vec<String>,
}

// One distinct death episode: who died, who was at risk.
struct EventBlock {
    death_idx: Vec<usize>,
    risk_idx: Vec<usize>,
}

fn validate<R: Real>(
    design: &DesignMatrix<R>,
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
) -> Result<(), CoxError> {
    let n = design.n_rows();
    if entries.len() != n || exits.len() != n || events.len() != n {
        return Err(CoxError::MismatchedLengths);
    }
    if n == 0 {
        return Err(CoxError::Empty);
    }
    if design.n_cols() == 0 {
        return Err(CoxError::NoColumns);
    }
    for (index, (&entry, &exit)) in entries.iter().zip(exits).enumerate() {
        if entry > exit {
            return Err(CoxError::EntryAfterExit { index, entry, exit });
        }
    }
    if !events.iter().any(|&e| e) {
        return Err(CoxError::NoEvents);
    }
    Ok(())
}

fn event_blocks(entries: &[u32], exits: &[u32], events: &[bool]) -> Vec<EventBlock> {
    let mut times: Vec<u32> = exits
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    times.sort_unstable();
    times.dedup();
    times
        .into_iter()
        .map(|t| EventBlock {
            death_idx: (0..exits.len())
                .filter(|&i| exits[i] == t && events[i])
                .collect(),
            risk_idx: (0..exits.len())
                .filter(|&i| entries[i] <= t && t <= exits[i])
                .collect(),
        })
        .collect()
}

fn linear_predictor<R: Real>(design: &DesignMatrix<R>, beta: &[R]) -> Vec<R> {
    (0..design.n_rows())
        .map(|i| {
            design
                .row(i)
                .iter()
                .zip(beta)
                .map(|(&x, &b)| x * b)
                .sum()
        })
        .collect()
}

fn loglik_blocks<R: Real>(
    design: &DesignMatrix<R>,
    blocks: &[EventBlock],
    beta: &[R],
    ties: TiesMethod,
) -> R {
    let eta = linear_predictor(design, beta);
    let mut ll = R::zero();
    for block in blocks {
        let m = block
            .risk_idx
            .iter()
            .map(|&i| eta[i])
            .fold(R::neg_infinity(), R::max);
        let mut s0 = R::zero();
        for &i in &block.risk_idx {
            s0 += (eta[i] - m).exp();
        }
        let mut s0d = R::zero();
        for &i in &block.death_idx {
            ll += eta[i];
            s0d += (eta[i] - m).exp();
        }
        let d = block.death_idx.len();
        match ties {
            TiesMethod::Breslow => ll -= R::of_usize(d) * (m + s0.ln()),
            TiesMethod::Efron => {
                for l in 0..d {
                    let f = R::of_usize(l) / R::of_usize(d);
                    ll -= m + (s0 - f * s0d).ln();
                }
            }
        }
    }
    ll
}

struct Evaluation<R> {
    ll: R,
    grad: Vec<R>,
    info: Vec<R>,
}

fn evaluate_blocks<R: Real>(
    design: &DesignMatrix<R>,
    blocks: &[EventBlock],
    beta: &[R],
    ties: TiesMethod,
) -> Evaluation<R> {
    let p = beta.len();
    let eta = linear_predictor(design, beta);
    let mut ll = R::zero();
    let mut grad = vec![R::zero(); p];
    let mut info = vec![R::zero(); p * p];
    let mut s1 = vec![R::zero(); p];
    let mut s2 = vec![R::zero(); p * p];
    let mut s1d = vec![R::zero(); p];
    let mut s2d = vec![R::zero(); p * p];
    let mut a1 = vec![R::zero(); p];
    for block in blocks {
        let m = block
            .risk_idx
            .iter()
            .map(|&i| eta[i])
            .fold(R::neg_infinity(), R::max);
        let mut s0 = R::zero();
        s1.fill(R::zero());
        s2.fill(R::zero());
        for &i in &block.risk_idx {
            let w = (eta[i] - m).exp();
            let row = design.row(i);
            s0 += w;
            for j in 0..p {
                let wj = w * row[j];
                s1[j] += wj;
                for k in j..p {
                    s2[j * p + k] += wj * row[k];
                }
            }
        }
        let mut s0d = R::zero();
        s1d.fill(R::zero());
        s2d.fill(R::zero());
        for &i in &block.death_idx {
            let w = (eta[i] - m).exp();
            let row = design.row(i);
            ll += eta[i];
            s0d += w;
            for j in 0..p {
                grad[j] += row[j];
                let wj = w * row[j];
                s1d[j] += wj;
                for k in j..p {
                    s2d[j * p + k] += wj * row[k];
                }
            }
        }
        let d = block.death_idx.len();
        let steps: usize = match ties {
            TiesMethod::Breslow => 1,
            TiesMethod::Efron => d,
        };
        for l in 0..steps {
            // For Breslow the discount is zero and the weight is d; for Efron
            // each tied death gets weight one against a discounted risk sum.
            let (f, weight) = match ties {
                TiesMethod::Breslow => (R::zero(), R::of_usize(d)),
                TiesMethod::Efron => (R::of_usize(l) / R::of_usize(d), R::one()),
            };
            let a0 = s0 - f * s0d;
            ll -= weight * (m + a0.ln());
            for j in 0..p {
                a1[j] = s1[j] - f * s1d[j];
                grad[j] -= weight * a1[j] / a0;
            }
            for j in 0..p {
                for k in j..p {
                    let a2 = s2[j * p + k] - f * s2d[j * p + k];
                    let term = weight * (a2 / a0 - a1[j] * a1[k] / (a0 * a0));
                    info[j * p + k] += term;
                    if k != j {
                        info[k * p + j] += term;
                    }
                }
            }
        }
    }
    Evaluation { ll, grad, info }
}

/// Evaluates the partial log-likelihood at `beta`.
///
/// # Errors
///
/// Rejects malformed inputs, event-free data, and a `beta` whose length does
/// not match the design width.
pub fn partial_loglik<R: Real>(
    design: &DesignMatrix<R>,
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
    beta: &[R],
    ties: TiesMethod,
) -> Result<R, CoxError> {
    validate(design, entries, exits, events)?;
    if beta.len() != design.n_cols() {
        return Err(CoxError::WrongBetaLength {
            got: beta.len(),
            expected: design.n_cols(),
        });
    }
    let blocks = event_blocks(entries, exits, events);
    Ok(loglik_blocks(design, &blocks, beta, ties))
}

/// Evaluates the score (gradient of the partial log-likelihood) at `beta`.
///
/// # Errors
///
/// Same conditions as [`partial_loglik`].
pub fn score_gradient<R: Real>(
    design: &DesignMatrix<R>,
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
    beta: &[R],
    ties: TiesMethod,
) -> Result<Vec<R>, CoxError> {
    validate(design, entries, exits, events)?;
    if beta.len() != design.n_cols() {
        return Err(CoxError::WrongBetaLength {
            got: beta.len(),
            expected: design.n_cols(),
        });
    }
    let blocks = event_blocks(entries, exits, events);
    Ok(evaluate_blocks(design, &blocks, beta, ties).grad)
}

fn max_abs<R: Real>(v: &[R]) -> R {
    v.iter().fold(R::zero(), |acc, x| acc.max(x.abs()))
}

fn divergence_check<R: Real>(beta: &[R], terms: &[String]) -> Result<(), CoxError> {
    for (j, &b) in beta.iter().enumerate() {
        if b.abs() > R::of(DIVERGENCE_LIMIT) || !b.is_finite() {
            return Err(CoxError::MonotoneLikelihood {
                name: terms[j].clone(),
            });
        }
    }
    Ok(())
}

fn data_warnings<R: Real>(design: &DesignMatrix<R>, events: &[bool], n_events: usize) -> Vec<String> {
    let mut warnings = Vec::new();
    let p = design.n_cols();
    if p >= n_events {
        warnings.push(format!(
            "{p} model column(s) for {n_events} event(s); estimates are unreliable"
        ));
    }
    for j in 0..p {
        let is_dummy = (0..design.n_rows())
            .all(|i| design.get(i, j) == R::zero() || design.get(i, j) == R::one());
        if !is_dummy {
            continue;
        }
        let level_events = (0..design.n_rows())
            .filter(|&i| design.get(i, j) == R::one() && events[i])
            .count();
        if level_events < 5 {
            warnings.push(format!(
                "column `{}` covers only {level_events} events; its estimate may be unstable",
                design.column_names()[j]
            ));
        }
    }
    warnings
}

/// Fits the proportional-hazards model by Newton-Raphson from a zero start.
///
/// Convergence is declared when the score max-norm falls within 1e-6; the
/// fit also stops when an accepted step changes the log-likelihood by at most
/// 1e-9 or after 50 iterations, with `converged` reporting whether the final
/// gradient met the tolerance. Steps are halved (up to 20 times) until the
/// log-likelihood does not decrease.
///
/// # Errors
///
/// Beyond input validation: constant columns are rejected up front; a
/// coefficient moving past 15 in magnitude reports monotone likelihood with
/// the offending column; a risk-set information matrix that cannot be
/// factorized reports singularity.
pub fn cox_fit<R: Real>(
    design: &DesignMatrix<R>,
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
    ties: TiesMethod,
) -> Result<CoxFit<R>, CoxError> {
    validate(design, entries, exits, events)?;
    let n = design.n_rows();
    let p = design.n_cols();
    for j in 0..p {
        let first = design.get(0, j);
        if (1..n).all(|i| design.get(i, j) == first) {
            return Err(CoxError::ConstantColumn {
                name: design.column_names()[j].clone(),
            });
        }
    }
    let n_events = events.iter().filter(|&&e| e).count();
    let terms = design.column_names().to_vec();
    let blocks = event_blocks(entries, exits, events);

    let mut beta = vec![R::zero(); p];
    let mut eval = evaluate_blocks(design, &blocks, &beta, ties);
    let null_log_likelihood = eval.ll;
    let mut log_likelihood = eval.ll;
    let mut trace = vec![eval.ll];
    let mut iterations = 0usize;
    let converged;
    loop {
        if max_abs(&eval.grad) <= R::of(GRAD_TOL) {
            converged = true;
            break;
        }
        if iterations >= MAX_ITER {
            converged = false;
            break;
        }
        let mut step = SpdMatrix::new(p, eval.info.clone())
            .and_then(|m| statfn::solve_spd(&m, &eval.grad))
            .map_err(|_| CoxError::SingularInformation {
                iteration: iterations,
            })?;
        // Newton decrement: the quadratic model's predicted gain.
        let predicted: R = eval
            .grad
            .iter()
            .zip(&step)
            .map(|(&g, &s)| g * s)
            .sum::<R>()
            / R::of(2.0);
        if predicted <= R::of(LL_TOL) && max_abs(&step) <= R::of(POLISH_STEP) {
            // The remaining gain is below tolerance, which also means it is
            // near the round-off floor of the likelihood itself, so an
            // ascent check would compare noise. Take this last tiny step
            // unguarded and finish.
            for (b, &s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            eval = evaluate_blocks(design, &blocks, &beta, ties);
            iterations += 1;
            if eval.ll >= log_likelihood {
                log_likelihood = eval.ll;
                trace.push(eval.ll);
            }
            converged = max_abs(&eval.grad) <= R::of(GRAD_TOL);
            break;
        }
        let mut halvings = 0usize;
        let beta_new = loop {
            let candidate: Vec<R> = beta.iter().zip(&step).map(|(&b, &s)| b + s).collect();
            let ll = loglik_blocks(design, &blocks, &candidate, ties);
            if ll >= eval.ll {
                break candidate;
            }
            if halvings >= MAX_HALVINGS {
                // A measurable predicted gain, yet no ascent at any scale:
                // the information matrix is numerically unusable.
                return Err(CoxError::SingularInformation {
                    iteration: iterations,
                });
            }
            for s in &mut step {
                *s = *s / R::of(2.0);
            }
            halvings += 1;
        };
        beta = beta_new;
        divergence_check(&beta, &terms)?;
        eval = evaluate_blocks(design, &blocks, &beta, ties);
        iterations += 1;
        log_likelihood = eval.ll;
        trace.push(eval.ll);
    }

    let covariance = SpdMatrix::new(p, eval.info.clone())
        .and_then(|m| m.cholesky())
        .map_err(|_| CoxError::SingularInformation {
            iteration: iterations,
        })?
        .inverse();
    Ok(CoxFit {
        terms,
        coefficients: beta,
        covariance,
        log_likelihood,
        null_log_likelihood,
        log_likelihood_trace: trace,
        iterations,
        converged,
        n_subjects: n,
        n_events,
        ties,
        warnings: data_warnings(design, events, n_events),
    })
}

/// Builds the Wald inference table (hazard ratios) for a converged fit.
///
/// # Errors
///
/// Rejects non-converged fits and confidence levels outside (0, 1).
pub fn wald_table<R: Real>(fit: &CoxFit<R>, conf_level: f64) -> Result<ModelTable<R>, CoxError> {
    if !fit.converged {
        return Err(CoxError::NotConverged);
    }
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(CoxError::BadConfidenceLevel);
    }
    Ok(ModelTable {
        ratio_label: "hazard ratio".to_string(),
        rows: table::inference_rows(&fit.terms, &fit.coefficients, &fit.covariance, conf_level),
        n_subjects: fit.n_subjects,
        n_events: fit.n_events,
        conf_level,
    })
}
