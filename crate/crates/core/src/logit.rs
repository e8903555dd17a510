//! Logistic regression fitted by Newton-Raphson (iteratively reweighted
//! least squares).
//!
//! The model always carries an intercept, prepended to the supplied design
//! columns. Perfect separation, the classic failure mode on small cohorts
//! with rare levels, is detected explicitly and reported with the offending
//! column name instead of returning a half-diverged fit.

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
/// Score max-norm declaring convergence.
const GRAD_TOL: f64 = 1e-8;
/// Predicted log-likelihood gain declaring a stall.
const LL_TOL: f64 = 1e-10;
/// Largest step still taken unguarded once the predicted gain is below
/// `LL_TOL`; anything larger suggests a near-singular direction instead.
const POLISH_STEP: f64 = 1e-3;

/// Errors raised while evaluating or fitting the model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum LogitError {
    /// Outcomes must align with the design rows.
    #[error("input arrays have mismatched lengths")]
    MismatchedLengths,
    /// At least one subject is required.
    #[error("no subjects to fit")]
    Empty,
    /// A model with one outcome value has nothing to contrast.
    #[error("every outcome is {value}; the intercept is not identified")]
    AllOutcomesEqual { value: bool },
    /// A constant design column duplicates the intercept.
    #[error("column `{name}` is constant across subjects and duplicates the intercept")]
    ConstantColumn { name: String },
    /// The likelihood keeps rising as this coefficient grows without bound.
    #[error(
        "coefficient for `{name}` diverged past 15; the outcomes are perfectly \
         separated along this column"
    )]
    Separation { name: String },
    /// The weighted normal equations cannot be solved.
    #[error("weighted normal equations are singular at iteration {iteration}; columns may be collinear")]
    SingularSystem { iteration: usize },
    /// A coefficient vector of the wrong width was supplied.
    #[error("beta has {got} coefficients but the model expects {expected} (intercept included)")]
    WrongBetaLength { got: usize, expected: usize },
    /// Confidence level outside (0, 1).
    #[error("confidence level must be strictly between 0 and 1")]
    BadConfidenceLevel,
    /// Wald inference is meaningless without convergence.
    #[error("the fit did not converge; inference tables require a converged fit")]
    NotConverged,
}

/// A fitted logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit<R> {
    /// `"intercept"` followed by the design column names.
    pub terms: Vec<String>,
    /// Estimated log odds ratios, intercept first.
    pub coefficients: Vec<R>,
    /// Coefficient covariance, row-major `p x p` (inverse observed information).
    pub covariance: Vec<R>,
    /// Log-likelihood at the estimate.
    pub log_likelihood: R,
    /// Log-likelihood after each accepted step, starting at the zero vector.
    /// Non-decreasing; the last entry equals `log_likelihood`.
    pub log_likelihood_trace: Vec<R>,
    /// Newton-Raphson iterations performed.
    pub iterations: usize,
    /// True when the final score max-norm is within tolerance.
    pub converged: bool,
    pub n_subjects: usize,
    pub n_events: usize,
}

// ln(1 + e^eta) without overflow for large |eta|.
fn log1p_exp<R: Real>(eta: R) -> R {
    eta.max(R::zero()) + (-eta.abs()).exp().ln_1p()
}

fn validate<R: Real>(design: &DesignMatrix<R>, outcomes: &[bool]) -> Result<(), LogitError> {
    if outcomes.len() != design.n_rows() {
        return Err(LogitError::MismatchedLengths);
    }
    if design.n_rows() == 0 {
        return Err(LogitError::Empty);
    }
    Ok(())
}

fn linear_predictor<R: Real>(design: &DesignMatrix<R>, beta: &[R]) -> Vec<R> {
    (0..design.n_rows())
        .map(|i| {
            beta[0]
                + design
                    .row(i)
                    .iter()
                    .zip(&beta[1..])
                    .map(|(&x, &b)| x * b)
                    .sum()
        })
        .collect()
}

fn loglik<R: Real>(design: &DesignMatrix<R>, outcomes: &[bool], beta: &[R]) -> R {
    linear_predictor(design, beta)
        .into_iter()
        .zip(outcomes)
        .map(|(eta, &y)| if y { eta - log1p_exp(eta) } else { -log1p_exp(eta) })
        .sum()
}

/// Evaluates the log-likelihood at `beta` (intercept first).
///
/// # Errors
///
/// Rejects malformed inputs and a `beta` whose length is not one more than
/// the design width.
pub fn logit_loglik<R: Real>(
    design: &DesignMatrix<R>,
    outcomes: &[bool],
    beta: &[R],
) -> Result<R, LogitError> {
    validate(design, outcomes)?;
    if beta.len() != design.n_cols() + 1 {
        return Err(LogitError::WrongBetaLength {
            got: beta.len(),
            expected: design.n_cols() + 1,
        });
    }
    Ok(loglik(design, outcomes, beta))
}

struct Evaluation<R> {
    ll: R,
    score: Vec<R>,
    info: Vec<R>,
}

fn evaluate<R: Real>(design: &DesignMatrix<R>, outcomes: &[bool], beta: &[R]) -> Evaluation<R> {
    let p = beta.len();
    let eta = linear_predictor(design, beta);
    let mut ll = R::zero();
    let mut score = vec![R::zero(); p];
    let mut info = vec![R::zero(); p * p];
    let mut xi = vec![R::zero(); p];
    for (i, (&e, &y)) in eta.iter().zip(outcomes).enumerate() {
        ll += if y { e - log1p_exp(e) } else { -log1p_exp(e) };
        // mu = sigma(eta), computed from the side that cannot overflow.
        let mu = if e >= R::zero() {
            R::one() / (R::one() + (-e).exp())
        } else {
            let t = e.exp();
            t / (R::one() + t)
        };
        let w = mu * (R::one() - mu);
        let resid = if y { R::one() - mu } else { -mu };
        xi[0] = R::one();
        xi[1..].copy_from_slice(design.row(i));
        for j in 0..p {
            score[j] += xi[j] * resid;
            for k in j..p {
                let term = w * xi[j] * xi[k];
                info[j * p + k] += term;
                if k != j {
                    info[k * p + j] += term;
                }
            }
        }
    }
    Evaluation { ll, score, info }
}

fn max_abs<R: Real>(v: &[R]) -> R {
    v.iter().fold(R::zero(), |acc, x| acc.max(x.abs()))
}

/// Fits the logistic model by Newton-Raphson from a zero start.
///
/// Convergence is declared when the score max-norm falls within 1e-8; the
/// fit also stops when the quadratic model predicts a log-likelihood gain of
/// at most 1e-10 (after one final polishing step), or after 50 iterations,
/// with `converged` reporting whether the final score met the tolerance.
/// Ordinary steps are halved (up to 20 times) until the log-likelihood does
/// not decrease, so the recorded trace never descends.
///
/// # Errors
///
/// Beyond input validation: single-valued outcomes and constant columns are
/// rejected up front; a coefficient moving past 15 in magnitude reports
/// separation with the offending term; an unsolvable weighted system reports
/// singularity.
pub fn logit_fit<R: Real>(
    design: &DesignMatrix<R>,
    outcomes: &[bool],
) -> Result<LogitFit<R>, LogitError> {
    validate(design, outcomes)?;
    let n = design.n_rows();
    let n_events = outcomes.iter().filter(|&&y| y).count();
    if n_events == 0 || n_events == n {
        return Err(LogitError::AllOutcomesEqual {
            value: n_events != 0,
        });
    }
    for j in 0..design.n_cols() {
        let first = design.get(0, j);
        if (1..n).all(|i| design.get(i, j) == first) {
            return Err(LogitError::ConstantColumn {
                name: design.column_names()[j].clone(),
            });
        }
    }
    let mut terms = Vec::with_capacity(design.n_cols() + 1);
    terms.push("intercept".to_string());
    terms.extend(design.column_names().iter().cloned());
    let p = terms.len();

    let mut beta = vec![R::zero(); p];
    let mut eval = evaluate(design, outcomes, &beta);
    let mut log_likelihood = eval.ll;
    let mut trace = vec![eval.ll];
    let mut iterations = 0usize;
    let converged;
    loop {
        if max_abs(&eval.score) <= R::of(GRAD_TOL) {
            converged = true;
            break;
        }
        if iterations >= MAX_ITER {
            converged = false;
            break;
        }
        let mut step = SpdMatrix::new(p, eval.info.clone())
            .and_then(|m| statfn::solve_spd(&m, &eval.score))
            .map_err(|_| LogitError::SingularSystem {
                iteration: iterations,
            })?;
        // The quadratic model predicts a gain of score . step / 2 (the
        // Newton decrement). Once that falls below tolerance the true gain
        // is at or below rounding noise, so a small final step is taken
        // without the ascent guard, which cannot measure at that scale.
        let predicted: R = eval
            .score
            .iter()
            .zip(&step)
            .map(|(&g, &s)| g * s)
            .sum::<R>()
            / R::of(2.0);
        if predicted <= R::of(LL_TOL) && max_abs(&step) <= R::of(POLISH_STEP) {
            for (b, &s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            eval = evaluate(design, outcomes, &beta);
            iterations += 1;
            // Guard the trace against a one-ulp dip from the noise step.
            if eval.ll >= log_likelihood {
                log_likelihood = eval.ll;
                trace.push(eval.ll);
            }
            converged = max_abs(&eval.score) <= R::of(GRAD_TOL);
            break;
        }
        let mut halvings = 0usize;
        let beta_new = loop {
            let candidate: Vec<R> = beta.iter().zip(&step).map(|(&b, &s)| b + s).collect();
            let ll = loglik(design, outcomes, &candidate);
            if ll >= eval.ll {
                break candidate;
            }
            if halvings >= MAX_HALVINGS {
                return Err(LogitError::SingularSystem {
                    iteration: iterations,
                });
            }
            for s in &mut step {
                *s = *s / R::of(2.0);
            }
            halvings += 1;
        };
        beta = beta_new;
        if beta
            .iter()
            .any(|b| b.abs() > R::of(DIVERGENCE_LIMIT) || !b.is_finite())
        {
            // With mixed outcomes a separating direction always involves a
            // design column, even when the intercept crosses the limit
            // first; name the column moving hardest.
            let magnitude = |j: usize| {
                let m = beta[j].abs();
                if m.is_nan() { R::infinity() } else { m }
            };
            let culprit = (1..p)
                .max_by(|&a, &b| {
                    magnitude(a)
                        .partial_cmp(&magnitude(b))
                        .expect("magnitudes are NaN-free")
                })
                .unwrap_or(0);
            return Err(LogitError::Separation {
                name: terms[culprit].clone(),
            });
        }
        eval = evaluate(design, outcomes, &beta);
        iterations += 1;
        log_likelihood = eval.ll;
        trace.push(eval.ll);
    }

    let covariance = SpdMatrix::new(p, eval.info.clone())
        .and_then(|m| m.cholesky())
        .map_err(|_| LogitError::SingularSystem {
            iteration: iterations,
        })?
        .inverse();
    Ok(LogitFit {
        terms,
        coefficients: beta,
        covariance,
        log_likelihood,
        log_likelihood_trace: trace,
        iterations,
        converged,
        n_subjects: n,
        n_events,
    })
}

/// Builds the Wald inference table (odds ratios) for a fit.
///
/// The intercept is a nuisance parameter, not an odds ratio, so its row is
/// left out of the table along with the matching covariance row and column.
///
/// # Errors
///
/// Rejects a fit that did not converge and confidence levels outside (0, 1).
pub fn odds_table<R: Real>(fit: &LogitFit<R>, conf_level: f64) -> Result<ModelTable<R>, LogitError> {
    if !fit.converged {
        return Err(LogitError::NotConverged);
    }
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(LogitError::BadConfidenceLevel);
    }
    let p = fit.terms.len();
    let mut covariance = Vec::with_capacity((p - 1) * (p - 1));
    for i in 1..p {
        for j in 1..p {
            covariance.push(fit.covariance[i * p + j]);
        }
    }
    Ok(ModelTable {
        ratio_label: "odds ratio".to_string(),
        rows: table::inference_rows(
            &fit.terms[1..],
            &fit.coefficients[1..],
            &covariance,
            conf_level,
        ),
        n_subjects: fit.n_subjects,
        n_events: fit.n_events,
        conf_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn design(names: &[&str], rows: &[Vec<f64>]) -> DesignMatrix<f64> {
        DesignMatrix::from_rows(
            names.iter().map(|s| s.to_string()).collect(),
            (0..rows.len()).map(|i| format!("s{i}")).collect(),
            rows,
        )
        .unwrap()
    }

    // Two exposure levels, six subjects each: 2/6 events unexposed, 4/6
    // exposed. The saturated model recovers the empirical log odds exactly.
    fn two_by_two() -> (DesignMatrix<f64>, Vec<bool>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..6 {
            rows.push(vec![0.0]);
            y.push(i < 2);
        }
        for i in 0..6 {
            rows.push(vec![1.0]);
            y.push(i < 4);
        }
        (design(&["exposed"], &rows), y)
    }

    #[test]
    fn two_by_two_recovers_exact_log_odds() {
        let (x, y) = two_by_two();
        let fit = logit_fit(&x, &y).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.terms, vec!["intercept", "exposed"]);
        // Unexposed odds 1/2, exposed odds 2: intercept -ln 2, slope ln 4.
        assert_relative_eq!(fit.coefficients[0], -0.69314718055994531, epsilon = 1e-8);
        assert_relative_eq!(fit.coefficients[1], 1.3862943611198906, epsilon = 1e-8);
        // Cell-count variances: 1/2 + 1/4 = 0.75 and 1/2 + 1/4 + 1/4 + 1/2.
        assert_relative_eq!(fit.covariance[0], 0.75, max_relative = 1e-6);
        assert_relative_eq!(fit.covariance[3], 1.5, max_relative = 1e-6);
        assert_relative_eq!(fit.covariance[1], -0.75, max_relative = 1e-6);
        assert_relative_eq!(fit.log_likelihood, -7.6381700195377538, epsilon = 1e-10);
        assert_eq!(fit.n_subjects, 12);
        assert_eq!(fit.n_events, 6);
        // The rendered table carries the exposure row only.
        let t = odds_table(&fit, 0.95).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].term, "exposed");
    }

    #[test]
    fn trace_starts_at_null_and_never_decreases() {
        let (x, y) = two_by_two();
        let fit = logit_fit(&x, &y).unwrap();
        // At the zero vector every subject has probability 1/2.
        assert_relative_eq!(
            fit.log_likelihood_trace[0],
            -8.3177661667193437,
            epsilon = 1e-13
        );
        assert_eq!(fit.log_likelihood_trace.len(), fit.iterations + 1);
        assert_eq!(*fit.log_likelihood_trace.last().unwrap(), fit.log_likelihood);
        for pair in fit.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(fit.iterations >= 1);
    }

    #[test]
    fn balanced_outcomes_fit_exactly_zero() {
        let x = design(&["x"], &[vec![0.0], vec![1.0], vec![0.0], vec![1.0]]);
        let y = vec![false, true, true, false];
        let fit = logit_fit(&x, &y).unwrap();
        // The score vanishes at the start, so no step is taken.
        assert_eq!(fit.coefficients, vec![0.0, 0.0]);
        assert_eq!(fit.iterations, 0);
        assert!(fit.converged);
    }

    #[test]
    fn shifting_a_covariate_moves_only_the_intercept() {
        let xs = [0.2, 1.7, -0.4, 2.5, 0.9, -1.3];
        let y = vec![true, true, false, true, false, false];
        let a = design(&["x"], &xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let b = design(&["x"], &xs.iter().map(|&v| vec![v - 2.0]).collect::<Vec<_>>());
        let fa = logit_fit(&a, &y).unwrap();
        let fb = logit_fit(&b, &y).unwrap();
        assert_relative_eq!(fb.coefficients[1], fa.coefficients[1], epsilon = 1e-6);
        assert_relative_eq!(
            fb.coefficients[0],
            fa.coefficients[0] + 2.0 * fa.coefficients[1],
            epsilon = 1e-6
        );
        assert_relative_eq!(fa.log_likelihood, fb.log_likelihood, epsilon = 1e-10);
    }

    #[test]
    fn converged_fits_satisfy_the_score_equations() {
        let xs = [0.2, 1.7, -0.4, 2.5, 0.9, -1.3];
        let y = [true, true, false, true, false, false];
        let x = design(&["x"], &xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let fit = logit_fit(&x, &y).unwrap();
        assert!(fit.converged);
        let mu: Vec<f64> = xs
            .iter()
            .map(|&v| {
                let eta = fit.coefficients[0] + fit.coefficients[1] * v;
                1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        // Intercept equation: the mean fitted probability is the event rate.
        let mean: f64 = mu.iter().sum::<f64>() / 6.0;
        assert_relative_eq!(mean, 0.5, epsilon = 1e-8);
        let slope_score: f64 = xs
            .iter()
            .zip(&mu)
            .zip(&y)
            .map(|((&v, &m), &yy)| v * (if yy { 1.0 } else { 0.0 } - m))
            .sum();
        assert!(slope_score.abs() <= 1e-8);
    }

    #[test]
    fn separation_names_the_offending_column() {
        let x = design(&["exposure"], &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let y = vec![false, false, true, true];
        let err = logit_fit(&x, &y).unwrap_err();
        assert_eq!(
            err,
            LogitError::Separation {
                name: "exposure".to_string()
            }
        );
    }

    #[test]
    fn single_valued_outcomes_are_rejected() {
        let x = design(&["x"], &[vec![0.0], vec![1.0]]);
        assert_eq!(
            logit_fit(&x, &[false, false]).unwrap_err(),
            LogitError::AllOutcomesEqual { value: false }
        );
        assert_eq!(
            logit_fit(&x, &[true, true]).unwrap_err(),
            LogitError::AllOutcomesEqual { value: true }
        );
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = design(&["ones"], &[vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(
            logit_fit(&x, &[true, false, true]).unwrap_err(),
            LogitError::ConstantColumn {
                name: "ones".to_string()
            }
        );
    }

    #[test]
    fn intercept_only_model_fits_the_event_rate() {
        let x = design(&[], &[vec![], vec![], vec![], vec![], vec![]]);
        let y = vec![true, true, false, false, false];
        let fit = logit_fit(&x, &y).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.terms, vec!["intercept"]);
        // Two events in five subjects: log odds ln(2/3).
        assert_relative_eq!(fit.coefficients[0], -0.40546510810816438, epsilon = 1e-9);
        assert_relative_eq!(fit.log_likelihood, -3.3650583350462822, epsilon = 1e-10);
    }

    #[test]
    fn loglik_matches_direct_formula() {
        let x = design(&["x"], &[vec![0.4], vec![-1.1], vec![2.0]]);
        let y = [true, false, true];
        let beta = [0.3, -0.7];
        let want: f64 = [0.4, -1.1, 2.0]
            .iter()
            .zip(&y)
            .map(|(&v, &yy)| {
                let eta: f64 = 0.3 - 0.7 * v;
                if yy { eta - (1.0 + eta.exp()).ln() } else { -(1.0 + eta.exp()).ln() }
            })
            .sum();
        let got = logit_loglik(&x, &y, &beta).unwrap();
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn odds_table_drops_the_intercept_row() {
        // Frozen bounds from a 50-digit evaluation of exp(ln 4 -/+ z / 2).
        let fit = LogitFit {
            terms: vec!["intercept".to_string(), "exposed".to_string()],
            coefficients: vec![-0.69314718055994531, 1.3862943611198906],
            covariance: vec![0.75, -0.75, -0.75, 0.25],
            log_likelihood: 0.0,
            log_likelihood_trace: vec![0.0],
            iterations: 0,
            converged: true,
            n_subjects: 12,
            n_events: 6,
        };
        let t = odds_table(&fit, 0.95).unwrap();
        assert_eq!(t.ratio_label, "odds ratio");
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].term, "exposed");
        assert_relative_eq!(t.rows[0].ratio, 4.0, max_relative = 1e-15);
        assert_relative_eq!(t.rows[0].ci_lower, 1.5012714296527059, epsilon = 1e-12);
        assert_relative_eq!(t.rows[0].ci_upper, 10.657633046211592, epsilon = 1e-12);
        assert_eq!(
            odds_table(&fit, 0.0).unwrap_err(),
            LogitError::BadConfidenceLevel
        );
        let mut unconverged = fit;
        unconverged.converged = false;
        assert_eq!(
            odds_table(&unconverged, 0.95).unwrap_err(),
            LogitError::NotConverged
        );
    }

    #[test]
    fn validation_errors_are_specific() {
        let x = design(&["x"], &[vec![0.0], vec![1.0]]);
        assert_eq!(
            logit_fit(&x, &[true]).unwrap_err(),
            LogitError::MismatchedLengths
        );
        let empty = design(&["x"], &[]);
        assert_eq!(logit_fit(&empty, &[]).unwrap_err(), LogitError::Empty);
        assert_eq!(
            logit_loglik(&x, &[true, false], &[0.0]).unwrap_err(),
            LogitError::WrongBetaLength {
                got: 1,
                expected: 2
            }
        );
    }

    #[test]
    fn single_precision_fit_runs() {
        let x = DesignMatrix::<f32>::from_rows(
            vec!["x".to_string()],
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            &[vec![0.0f32], vec![1.0], vec![0.0], vec![1.0]],
        )
        .unwrap();
        let fit = logit_fit(&x, &[false, true, true, false]).unwrap();
        assert_eq!(fit.coefficients, vec![0.0f32, 0.0]);
    }
}
