//! Kaplan-Meier survival estimation with delayed entry, and the multi-group
//! log-rank test.
//!
//! Episode time is discrete. A subject observed over `[entry, exit]` is at
//! risk at every episode `t` with `entry <= t <= exit`, so subjects can join
//! the risk set late. Deaths at an episode are counted before censorings at
//! the same episode.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::num::Real;
use crate::statfn::{self, SpdMatrix};

/// Errors raised by survival estimation and the log-rank test.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurvError {
    /// Entry, exit, and event arrays must have one element per subject.
    #[error("input arrays have mismatched lengths")]
    MismatchedLengths,
    /// At least one subject is required.
    #[error("no subjects to fit")]
    Empty,
    /// Observation intervals must be ordered.
    #[error("subject {index}: entry episode {entry} is after exit episode {exit}")]
    EntryAfterExit { index: usize, entry: u32, exit: u32 },
    /// Confidence level outside (0, 1).
    #[error("confidence level must be strictly between 0 and 1")]
    BadConfidenceLevel,
    /// The log-rank test compares two or more groups.
    #[error("log-rank test needs at least two groups")]
    TooFewGroups,
    /// A named group has no subjects.
    #[error("log-rank group `{label}` has no subjects")]
    EmptyGroup { label: String },
    /// The between-group variance matrix cannot be inverted.
    #[error("log-rank variance matrix is singular; groups share too little risk time")]
    DegenerateVariance,
}

/// One step of a Kaplan-Meier curve, at a distinct exit episode.
#[derive(Debug, Clone, PartialEq)]
pub struct KmPoint<R> {
    /// Episode this row describes.
    pub time: u32,
    /// Subjects at risk at this episode.
    pub n_risk: usize,
    /// Deaths at this episode.
    pub n_event: usize,
    /// Censored exits at this episode.
    pub n_censor: usize,
    /// Survival just after this episode.
    pub survival: R,
    /// Greenwood variance of the survival estimate.
    pub variance: R,
    /// Lower log-log confidence bound; absent while survival is 1 or 0.
    pub ci_lower: Option<R>,
    /// Upper log-log confidence bound; absent while survival is 1 or 0.
    pub ci_upper: Option<R>,
}

/// A fitted Kaplan-Meier curve.
#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve<R> {
    /// Steps at every distinct exit episode, ascending.
    pub points: Vec<KmPoint<R>>,
    /// Subjects the curve was fitted on.
    pub n_subjects: usize,
    /// Confidence level used for the bands.
    pub conf_level: f64,
}

// Survival is tracked as an exact reduced rational for as long as it fits in
// u128. Without censoring the product telescopes, so the estimate converts to
// floating point through one division and matches the empirical survivor
// fraction bit for bit. If a reduced product would overflow, the state drops
// to floating point for the rest of the curve.
enum Survival<R> {
    Exact { num: u128, den: u128 },
    Approx(R),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl<R: Real> Survival<R> {
    fn value(&self) -> R {
        match self {
            Survival::Exact { num, den } => R::of(*num as f64 / *den as f64),
            Survival::Approx(s) => *s,
        }
    }

    /// Multiplies in the factor `(r - d) / r`.
    fn step(&mut self, r: usize, d: usize) {
        let float_factor = || R::of_usize(r - d) / R::of_usize(r);
        if let Survival::Exact { num, den } = self {
            let mut fac_num = (r - d) as u128;
            let mut fac_den = r as u128;
            let g0 = gcd(fac_num, fac_den).max(1);
            fac_num /= g0;
            fac_den /= g0;
            // Cancel across the fraction before multiplying.
            let ga = gcd(*num, fac_den).max(1);
            let gb = gcd(fac_num, *den).max(1);
            let n = (*num / ga).checked_mul(fac_num / gb);
            let d2 = (*den / gb).checked_mul(fac_den / ga);
            match (n, d2) {
                (Some(n), Some(d2)) => {
                    let g = gcd(n, d2).max(1);
                    *num = n / g;
                    *den = d2 / g;
                }
                _ => *self = Survival::Approx(self.value() * float_factor()),
            }
        } else if let Survival::Approx(s) = self {
            *s = *s * float_factor();
        }
    }
}

fn validate_arrays(entries: &[u32], exits: &[u32], events: &[bool]) -> Result<(), SurvError> {
    if entries.len() != exits.len() || entries.len() != events.len() {
        return Err(SurvError::MismatchedLengths);
    }
    if entries.is_empty() {
        return Err(SurvError::Empty);
    }
    for (index, (&entry, &exit)) in entries.iter().zip(exits).enumerate() {
        if entry > exit {
            return Err(SurvError::EntryAfterExit { index, entry, exit });
        }
    }
    Ok(())
}

/// Fits a Kaplan-Meier curve over discrete episodes with delayed entry.
///
/// The curve has one point per distinct exit episode. Survival drops only at
/// episodes with deaths; censor-only episodes record the censor count and
/// leave the estimate unchanged. Variance follows Greenwood's formula and the
/// confidence band uses the log-log transform, omitted while the estimate is
/// exactly 1 or 0.
///
/// # Example
///
/// ```
/// use episurv::survfit::{km_fit, km_eval};
///
/// // Three subjects, deaths at episodes 2, 3, and 4.
/// let curve = km_fit::<f64>(&[1, 1, 1], &[2, 3, 4], &[true, true, true], 0.95).unwrap();
/// assert_eq!(km_eval(&curve, 2), 2.0 / 3.0);
/// assert_eq!(km_eval(&curve, 4), 0.0);
/// ```
///
/// # Errors
///
/// Rejects mismatched array lengths, empty input, `entry > exit`, and
/// confidence levels outside (0, 1).
pub fn km_fit<R: Real>(
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
    conf_level: f64,
) -> Result<KmCurve<R>, SurvError> {
    validate_arrays(entries, exits, events)?;
    if !(conf_level > 0.0 && conf_level < 1.0) {
        return Err(SurvError::BadConfidenceLevel);
    }
    let z = statfn::std_normal_quantile(R::of((1.0 + conf_level) / 2.0));
    let times: BTreeSet<u32> = exits.iter().copied().collect();
    let mut survival: Survival<R> = Survival::Exact { num: 1, den: 1 };
    let mut greenwood = R::zero();
    let mut points = Vec::with_capacity(times.len());
    for t in times {
        let mut n_risk = 0usize;
        let mut n_event = 0usize;
        let mut n_censor = 0usize;
        for i in 0..exits.len() {
            if entries[i] <= t && t <= exits[i] {
                n_risk += 1;
            }
            if exits[i] == t {
                if events[i] {
                    n_event += 1;
                } else {
                    n_censor += 1;
                }
            }
        }
        if n_event > 0 {
            survival.step(n_risk, n_event);
            // The Greenwood sum diverges when the whole risk set dies; the
            // estimate is 0 from here on and its variance is reported as 0.
            if n_risk > n_event {
                greenwood +=
                    R::of_usize(n_event) / (R::of_usize(n_risk) * R::of_usize(n_risk - n_event));
            }
        }
        let s = survival.value();
        let variance = if s == R::zero() {
            R::zero()
        } else {
            s * s * greenwood
        };
        let (ci_lower, ci_upper) = if s > R::zero() && s < R::one() {
            let se_theta = greenwood.sqrt() / s.ln().abs();
            let a = (z * se_theta).exp();
            (Some(s.powf(a)), Some(s.powf(a.recip())))
        } else {
            (None, None)
        };
        points.push(KmPoint {
            time: t,
            n_risk,
            n_event,
            n_censor,
            survival: s,
            variance,
            ci_lower,
            ci_upper,
        });
    }
    Ok(KmCurve {
        points,
        n_subjects: entries.len(),
        conf_level,
    })
}

/// Evaluates a fitted curve at an episode, right-continuously.
///
/// Returns 1 before the first exit episode.
pub fn km_eval<R: Real>(curve: &KmCurve<R>, time: u32) -> R {
    let idx = curve.points.partition_point(|p| p.time <= time);
    if idx == 0 {
        R::one()
    } else {
        curve.points[idx - 1].survival
    }
}

/// Renders a curve as CSV with full-precision numbers.
///
/// Columns: `time,n_risk,n_event,n_censor,survival,var,ci_lower,ci_upper`.
/// Absent confidence bounds leave their cells empty.
pub fn km_curve_csv<R: Real>(curve: &KmCurve<R>) -> String {
    let mut out = String::from("time,n_risk,n_event,n_censor,survival,var,ci_lower,ci_upper\n");
    for p in &curve.points {
        let lo = p.ci_lower.map(|v| v.to_string()).unwrap_or_default();
        let hi = p.ci_upper.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.time, p.n_risk, p.n_event, p.n_censor, p.survival, p.variance, lo, hi
        ));
    }
    out
}

/// One group's observation arrays for the log-rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub label: String,
    pub entries: Vec<u32>,
    pub exits: Vec<u32>,
    pub events: Vec<bool>,
}

impl GroupData {
    /// Collects `(entry, exit, event)` triples under a label.
    pub fn new(label: impl Into<String>, subjects: impl IntoIterator<Item = (u32, u32, bool)>) -> Self {
        let mut entries = Vec::new();
        let mut exits = Vec::new();
        let mut events = Vec::new();
        for (entry, exit, event) in subjects {
            entries.push(entry);
            exits.push(exit);
            events.push(event);
        }
        Self {
            label: label.into(),
            entries,
            exits,
            events,
        }
    }
}

/// Result of a multi-group log-rank test.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRank<R> {
    /// Group labels, in input order.
    pub labels: Vec<String>,
    /// Observed death count per group.
    pub observed: Vec<R>,
    /// Expected death count per group under the shared-hazard null.
    pub expected: Vec<R>,
    /// The chi-square statistic.
    pub chi_square: R,
    /// Degrees of freedom: one less than the number of groups.
    pub df: usize,
    /// Upper-tail probability of the statistic.
    pub p_value: R,
}

/// Runs the log-rank test across two or more groups.
///
/// At every episode with deaths, each group's deaths are compared with the
/// count expected if all groups shared one hazard. The score vector over the
/// first `k - 1` groups and its hypergeometric covariance give a chi-square
/// statistic with `k - 1` degrees of freedom. Delayed entry is honored: a
/// subject only contributes to risk sets between its entry and exit.
///
/// # Errors
///
/// Rejects fewer than two groups, empty groups, malformed intervals, and a
/// singular covariance with a non-zero score (groups that never share risk
/// time). A singular covariance with a zero score yields a zero statistic.
pub fn log_rank<R: Real>(groups: &[GroupData]) -> Result<LogRank<R>, SurvError> {
    if groups.len() < 2 {
        return Err(SurvError::TooFewGroups);
    }
    for g in groups {
        if g.entries.is_empty() {
            return Err(SurvError::EmptyGroup {
                label: g.label.clone(),
            });
        }
        validate_arrays(&g.entries, &g.exits, &g.events)?;
    }
    let k = groups.len();
    let m = k - 1;
    let mut times = BTreeSet::new();
    for g in groups {
        for i in 0..g.exits.len() {
            if g.events[i] {
                times.insert(g.exits[i]);
            }
        }
    }
    let mut u = vec![R::zero(); m];
    let mut v = vec![R::zero(); m * m];
    let mut observed = vec![R::zero(); k];
    let mut expected = vec![R::zero(); k];
    for &t in &times {
        let mut r_g = vec![0usize; k];
        let mut d_g = vec![0usize; k];
        for (gi, g) in groups.iter().enumerate() {
            for i in 0..g.exits.len() {
                if g.entries[i] <= t && t <= g.exits[i] {
                    r_g[gi] += 1;
                }
                if g.exits[i] == t && g.events[i] {
                    d_g[gi] += 1;
                }
            }
        }
        let r: usize = r_g.iter().sum();
        let d: usize = d_g.iter().sum();
        let r_f = R::of_usize(r);
        let d_f = R::of_usize(d);
        for gi in 0..k {
            let e = d_f * R::of_usize(r_g[gi]) / r_f;
            observed[gi] += R::of_usize(d_g[gi]);
            expected[gi] += e;
            if gi < m {
                u[gi] += R::of_usize(d_g[gi]) - e;
            }
        }
        // A lone subject at risk carries no between-group information.
        if r > 1 {
            let c = d_f * R::of_usize(r - d) / R::of_usize(r - 1);
            for gi in 0..m {
                for hi in gi..m {
                    let cross = if gi == hi {
                        R::of_usize(r_g[gi]) * (r_f - R::of_usize(r_g[gi]))
                    } else {
                        -(R::of_usize(r_g[gi]) * R::of_usize(r_g[hi]))
                    };
                    let term = c * cross / (r_f * r_f);
                    v[gi * m + hi] += term;
                    if hi != gi {
                        v[hi * m + gi] += term;
                    }
                }
            }
        }
    }
    let chi_square = match SpdMatrix::new(m, v).and_then(|spd| statfn::solve_spd(&spd, &u)) {
        Ok(x) => {
            let mut q = R::zero();
            for i in 0..m {
                q += u[i] * x[i];
            }
            q.max(R::zero())
        }
        Err(_) => {
            if u.iter().all(|ui| ui.abs() <= R::of(1e-10)) {
                R::zero()
            } else {
                return Err(SurvError::DegenerateVariance);
            }
        }
    };
    let p_value =
        statfn::chi_square_sf(chi_square, m).expect("chi-square statistic is non-negative");
    Ok(LogRank {
        labels: groups.iter().map(|g| g.label.clone()).collect(),
        observed,
        expected,
        chi_square,
        df: m,
        p_value,
    })
}
