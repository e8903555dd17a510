//! Seeded synthetic data generators and brute-force verification oracles.
//!
//! Three tools live here: a cohort generator calibrated to published
//! marginal counts (used for the repository's golden data set and
//! end-to-end runs), a discrete-time proportional-hazards simulator with
//! known coefficients, and exhaustive grid maximizers that cross-check the
//! Newton-based fitters through an independent code path.
//!
//! Everything is deterministic for a given seed; the generator is a fixed,
//! portable stream cipher (ChaCha8), so outputs are stable across platforms
//! and releases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cohort::{
    Allegiance, CauseOfDeath, Cohort, CohortError, DesignMatrix, Occupation, Region, Sex, Subject,
    DEFAULT_HORIZON,
};
use crate::coxph::TiesMethod;

/// Errors raised by the generators and the grid oracles.
#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    /// Target marginals that cannot describe any cohort.
    #[error("calibration targets are inconsistent: {reason}")]
    InconsistentTargets { reason: String },
    /// A simulation scenario with impossible parameters.
    #[error("scenario is invalid: {reason}")]
    BadScenario { reason: String },
    /// The simulation produced no deaths, so nothing can be fitted.
    #[error("no events were generated; raise the hazard, horizon, or sample size")]
    ZeroEvents,
    /// A subject's per-episode death probability reached 1.
    #[error("subject {index}: per-episode death probability reached 1; lower the baseline hazard")]
    HazardTooLarge { index: usize },
    /// Grid search is exhaustive and only practical in one or two dimensions.
    #[error("grid search supports at most 2 free coefficients, this model has {got}")]
    TooManyCoefficients { got: usize },
    /// Malformed bounds or step.
    #[error("grid specification is invalid: {reason}")]
    BadGrid { reason: String },
    /// No grid point produced a finite objective.
    #[error("objective is non-finite over the whole grid")]
    NonFiniteObjective,
    /// The generated subjects failed cohort validation.
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

// ── Calibrated cohort generation ─────────────────────────────────────────────

/// Marginal counts the generated cohort must reproduce.
///
/// Each per-variable vector lists `(level, subjects, deaths)`; population
/// counts are matched exactly for every variable, death counts exactly for
/// allegiance and best-effort for the rest (see [`generate_calibrated`]).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    pub n: usize,
    pub deaths: usize,
    pub sex: Vec<(Sex, usize, usize)>,
    pub allegiance: Vec<(Allegiance, usize, usize)>,
    pub occupation: Vec<(Occupation, usize, usize)>,
    pub region: Vec<(Region, usize, usize)>,
    /// `(cause, deaths)` classification of all deaths.
    pub causes: Vec<(CauseOfDeath, usize)>,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Desired median inclusive follow-up, in episodes.
    pub median_follow_up: u32,
    pub horizon: u32,
}

impl Default for CalibrationTargets {
    /// The profile of the cohort the repository's golden data set follows:
    /// 132 subjects, 89 deaths, and fixed marginals for sex, allegiance,
    /// occupation, region, and cause of death.
    fn default() -> Self {
        Self {
            n: 132,
            deaths: 89,
            sex: vec![(Sex::Male, 100, 68), (Sex::Female, 32, 21)],
            allegiance: vec![
                (Allegiance::Stark, 26, 13),
                (Allegiance::Targaryen, 14, 9),
                (Allegiance::Lannister, 19, 11),
                (Allegiance::Baratheon, 13, 10),
                (Allegiance::Greyjoy, 5, 2),
                (Allegiance::Martell, 6, 5),
                (Allegiance::Tyrell, 4, 4),
                (Allegiance::Other, 45, 35),
            ],
            occupation: vec![
                (Occupation::HouseMember, 42, 29),
                (Occupation::KnightSoldier, 46, 33),
                (Occupation::Advisor, 13, 7),
                (Occupation::Other, 31, 20),
            ],
            region: vec![
                (Region::North, 59, 42),
                (Region::South, 49, 31),
                (Region::Essos, 24, 16),
            ],
            causes: vec![
                (CauseOfDeath::InvasiveInjury, 59),
                (CauseOfDeath::Burn, 12),
                (CauseOfDeath::Poison, 4),
                (CauseOfDeath::Natural, 1),
                (CauseOfDeath::Other, 13),
            ],
            age_mean: 35.1,
            age_sd: 18.3,
            median_follow_up: 32,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl CalibrationTargets {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: &str| {
            Err(SynthError::InconsistentTargets {
                reason: reason.to_string(),
            })
        };
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.deaths > self.n {
            return fail("more deaths than subjects");
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1");
        }
        if self.median_follow_up == 0 || self.median_follow_up > self.horizon {
            return fail("median follow-up must lie in 1..=horizon");
        }
        if !(self.age_mean.is_finite() && self.age_mean > 0.0) {
            return fail("age mean must be positive and finite");
        }
        if !(self.age_sd.is_finite() && self.age_sd >= 0.0) {
            return fail("age sd must be non-negative and finite");
        }
        check_variable("sex", &self.sex, self.n, self.deaths)?;
        check_variable("allegiance", &self.allegiance, self.n, self.deaths)?;
        check_variable("occupation", &self.occupation, self.n, self.deaths)?;
        check_variable("region", &self.region, self.n, self.deaths)?;
        let cause_total: usize = self.causes.iter().map(|(_, d)| d).sum();
        if cause_total != self.deaths {
            return fail("cause counts must sum to the total deaths");
        }
        Ok(())
    }
}

fn check_variable<T: Copy + PartialEq>(
    name: &str,
    levels: &[(T, usize, usize)],
    n: usize,
    deaths: usize,
) -> Result<(), SynthError> {
    let fail = |reason: String| Err(SynthError::InconsistentTargets { reason });
    let count: usize = levels.iter().map(|(_, c, _)| c).sum();
    if count != n {
        return fail(format!("{name} level counts sum to {count}, expected {n}"));
    }
    let dead: usize = levels.iter().map(|(_, _, d)| d).sum();
    if dead != deaths {
        return fail(format!("{name} death counts sum to {dead}, expected {deaths}"));
    }
    for (i, &(level, c, d)) in levels.iter().enumerate() {
        if d > c {
            return fail(format!("{name} level {i} has more deaths than subjects"));
        }
        if levels[..i].iter().any(|&(other, _, _)| other == level) {
            return fail(format!("{name} lists a level twice"));
        }
    }
    Ok(())
}

/// What [`generate_calibrated`] achieved beyond the exact marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    /// Death-count targets the greedy repair could not meet, as
    /// `(level, target, achieved)` over sex, occupation, and region.
    pub unmatched: Vec<(String, usize, usize)>,
    /// Sum of absolute death-count gaps across those three variables.
    pub total_gap: usize,
    /// Median inclusive follow-up of the generated cohort.
    pub median_follow_up: f64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

// One standard normal draw (Box-Muller, cosine branch).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn shuffled_levels<T: Copy>(levels: &[(T, usize, usize)], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = Vec::new();
    for &(level, count, _) in levels {
        out.extend(std::iter::repeat(level).take(count));
    }
    out.shuffle(rng);
    out
}

fn median_of(durations: &[u32]) -> f64 {
    let mut sorted = durations.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

// Per-variable bookkeeping for the greedy death-count repair.
struct RepairVariable {
    labels: Vec<String>,
    target: Vec<i64>,
    achieved: Vec<i64>,
    /// Level index of each subject.
    member: Vec<usize>,
}

impl RepairVariable {
    fn new<T: Copy + PartialEq + std::fmt::Display>(
        levels: &[(T, usize, usize)],
        assigned: &[T],
        dead: &[bool],
    ) -> Self {
        let member: Vec<usize> = assigned
            .iter()
            .map(|a| levels.iter().position(|(l, _, _)| l == a).expect("assigned level is declared"))
            .collect();
        let mut achieved = vec![0i64; levels.len()];
        for (i, &m) in member.iter().enumerate() {
            if dead[i] {
                achieved[m] += 1;
            }
        }
        Self {
            labels: levels.iter().map(|(l, _, _)| l.to_string()).collect(),
            target: levels.iter().map(|&(_, _, d)| d as i64).collect(),
            achieved,
            member,
        }
    }

    // Change in total absolute gap if the death moves from subject i to j.
    fn swap_delta(&self, i: usize, j: usize) -> i64 {
        let (from, to) = (self.member[i], self.member[j]);
        if from == to {
            return 0;
        }
        let gap = |a: i64, t: i64| (a - t).abs();
        gap(self.achieved[from] - 1, self.target[from]) - gap(self.achieved[from], self.target[from])
            + gap(self.achieved[to] + 1, self.target[to])
            - gap(self.achieved[to], self.target[to])
    }

    fn apply_swap(&mut self, i: usize, j: usize) {
        self.achieved[self.member[i]] -= 1;
        self.achieved[self.member[j]] += 1;
    }

    fn report_gaps(&self, unmatched: &mut Vec<(String, usize, usize)>, total: &mut usize) {
        for (k, label) in self.labels.iter().enumerate() {
            if self.achieved[k] != self.target[k] {
                unmatched.push((label.clone(), self.target[k] as usize, self.achieved[k] as usize));
                *total += (self.achieved[k] - self.target[k]).unsigned_abs() as usize;
            }
        }
    }
}

/// Generates a cohort whose marginals match `targets`.
///
/// Population counts match exactly for every variable: each variable's
/// level column is laid out to the exact counts and shuffled independently,
/// so the joint distribution is whatever the seed produces. Death counts
/// match exactly for allegiance; sex, occupation, and region death counts
/// are then approached by greedily swapping death status between subjects
/// of the same allegiance, and whatever gap remains is listed in the
/// report. Causes of death are assigned to the exact target counts. Entry
/// and exit episodes are drawn so that survivors are censored at the
/// horizon and the median follow-up lands within 3 episodes of the target.
///
/// The same `targets` and `seed` always produce the same cohort.
///
/// # Errors
///
/// Rejects inconsistent targets (counts that do not sum, more deaths than
/// subjects, causes that do not cover the deaths).
pub fn generate_calibrated(
    targets: &CalibrationTargets,
    seed: u64,
) -> Result<(Cohort, CalibrationReport), SynthError> {
    targets.validate()?;
    let n = targets.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sexes = shuffled_levels(&targets.sex, &mut rng);
    let allegiances = shuffled_levels(&targets.allegiance, &mut rng);
    let occupations = shuffled_levels(&targets.occupation, &mut rng);
    let regions = shuffled_levels(&targets.region, &mut rng);

    let ages: Vec<f64> = (0..n)
        .map(|_| loop {
            let a = targets.age_mean + targets.age_sd * standard_normal(&mut rng);
            if a >= 0.0 {
                break round1(a);
            }
        })
        .collect();

    // Deaths: exact per allegiance level.
    let mut dead = vec![false; n];
    for &(level, _, level_deaths) in &targets.allegiance {
        let members: Vec<usize> = (0..n).filter(|&i| allegiances[i] == level).collect();
        for &i in members.choose_multiple(&mut rng, level_deaths) {
            dead[i] = true;
        }
    }

    // Greedy repair: swap death status within an allegiance whenever that
    // lowers the total gap on the sex, occupation, and region death targets.
    let mut vars = [
        RepairVariable::new(&targets.sex, &sexes, &dead),
        RepairVariable::new(&targets.occupation, &occupations, &dead),
        RepairVariable::new(&targets.region, &regions, &dead),
    ];
    loop {
        let mut improved = false;
        'outer: for i in 0..n {
            if !dead[i] {
                continue;
            }
            for j in 0..n {
                if dead[j] || allegiances[j] != allegiances[i] {
                    continue;
                }
                let delta: i64 = vars.iter().map(|v| v.swap_delta(i, j)).sum();
                if delta < 0 {
                    for v in &mut vars {
                        v.apply_swap(i, j);
                    }
                    dead[i] = false;
                    dead[j] = true;
                    improved = true;
                    continue 'outer;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let mut unmatched = Vec::new();
    let mut total_gap = 0usize;
    for v in &vars {
        v.report_gaps(&mut unmatched, &mut total_gap);
    }

    // Causes: exact counts, shuffled over the dead.
    let mut cause_pool: Vec<CauseOfDeath> = Vec::new();
    for &(cause, count) in &targets.causes {
        cause_pool.extend(std::iter::repeat(cause).take(count));
    }
    cause_pool.shuffle(&mut rng);
    let mut causes = vec![None; n];
    let mut next_cause = cause_pool.into_iter();
    for i in 0..n {
        if dead[i] {
            causes[i] = Some(next_cause.next().expect("one cause per death"));
        }
    }

    // Follow-up durations around the target median, then repaired until the
    // median lands within 3 episodes of it.
    let hi = targets.horizon.min(56);
    let lo = 8.min(hi);
    let mut durations: Vec<u32> = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
    let target_med = targets.median_follow_up as f64;
    while (median_of(&durations) - target_med).abs() > 3.0 {
        let farthest = (0..n)
            .max_by_key(|&k| (durations[k] as i64 - targets.median_follow_up as i64).abs())
            .expect("n >= 1");
        durations[farthest] = targets.median_follow_up.clamp(lo, hi);
    }

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let d = durations[i];
        let (entry, exit) = if dead[i] {
            let entry = rng.gen_range(1..=targets.horizon - d + 1);
            (entry, entry + d - 1)
        } else {
            (targets.horizon - d + 1, targets.horizon)
        };
        let screen = round1(rng.gen_range(5.0..=600.0));
        subjects.push(Subject {
            id: format!("c{:03}", i + 1),
            name: format!("Subject {:03}", i + 1),
            age_years: ages[i],
            sex: sexes[i],
            allegiance: allegiances[i],
            occupation: occupations[i],
            region: regions[i],
            entry_episode: entry,
            exit_episode: exit,
            event: dead[i],
            cause: causes[i],
            screen_minutes: Some(screen),
            killed_by_white_walker: false,
            supernatural_non_aging: false,
        });
    }
    let median_follow_up = median_of(&durations);
    let cohort = Cohort::new(subjects, targets.horizon)?;
    Ok((
        cohort,
        CalibrationReport {
            unmatched,
            total_gap,
            median_follow_up,
        },
    ))
}

// ── Proportional-hazards simulation ──────────────────────────────────────────

/// How simulated covariates are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateScheme {
    /// Exactly balanced 0/1 columns (column `j` alternates in blocks of
    /// `2^j`, so multiple columns are balanced and orthogonal).
    Binary,
    /// Independent draws from the unit interval.
    Uniform,
}

/// A simulation scenario with known coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhScenario {
    pub n: usize,
    pub true_coefficients: Vec<f64>,
    /// Constant per-episode baseline hazard.
    pub baseline_hazard: f64,
    pub scheme: CovariateScheme,
    /// Administrative censoring episode; survivors exit here.
    pub horizon: u32,
    pub seed: u64,
}

/// Simulated survival data ready for the proportional-hazards fitter.
#[derive(Debug, Clone, PartialEq)]
pub struct PhDataset {
    pub design: DesignMatrix<f64>,
    pub entries: Vec<u32>,
    pub exits: Vec<u32>,
    pub events: Vec<bool>,
}

/// Simulates discrete-time survival under a proportional-hazards law.
///
/// Every subject enters at episode 1. At each episode the subject dies
/// with probability `1 - exp(-h0 * exp(x' beta))`; survivors are censored
/// at the horizon. Returns the dataset together with the coefficients that
/// generated it.
///
/// # Errors
///
/// Rejects empty or non-finite scenarios; reports the first subject whose
/// per-episode death probability reaches 1; reports zero events when the
/// horizon is 0 or no subject happens to die.
pub fn generate_ph(scenario: &PhScenario) -> Result<(PhDataset, Vec<f64>), SynthError> {
    let fail = |reason: &str| {
        Err(SynthError::BadScenario {
            reason: reason.to_string(),
        })
    };
    if scenario.n == 0 {
        return fail("n must be at least 1");
    }
    if scenario.true_coefficients.is_empty() {
        return fail("at least one coefficient is required");
    }
    if !scenario.true_coefficients.iter().all(|b| b.is_finite()) {
        return fail("coefficients must be finite");
    }
    if !(scenario.baseline_hazard.is_finite() && scenario.baseline_hazard > 0.0) {
        return fail("baseline hazard must be positive and finite");
    }
    if scenario.horizon == 0 {
        return Err(SynthError::ZeroEvents);
    }
    let p = scenario.true_coefficients.len();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut rows = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let row: Vec<f64> = (0..p)
            .map(|j| match scenario.scheme {
                CovariateScheme::Binary => ((i >> j) & 1) as f64,
                CovariateScheme::Uniform => rng.gen(),
            })
            .collect();
        rows.push(row);
    }
    let mut entries = Vec::with_capacity(scenario.n);
    let mut exits = Vec::with_capacity(scenario.n);
    let mut events = Vec::with_capacity(scenario.n);
    for (i, row) in rows.iter().enumerate() {
        let eta: f64 = row
            .iter()
            .zip(&scenario.true_coefficients)
            .map(|(x, b)| x * b)
            .sum();
        let prob = 1.0 - (-scenario.baseline_hazard * eta.exp()).exp();
        if prob >= 1.0 {
            return Err(SynthError::HazardTooLarge { index: i });
        }
        let mut exit = scenario.horizon;
        let mut event = false;
        for t in 1..=scenario.horizon {
            if rng.gen::<f64>() < prob {
                exit = t;
                event = true;
                break;
            }
        }
        entries.push(1);
        exits.push(exit);
        events.push(event);
    }
    if !events.iter().any(|&e| e) {
        return Err(SynthError::ZeroEvents);
    }
    let design = DesignMatrix::from_rows(
        (1..=p).map(|j| format!("x{j}")).collect(),
        (1..=scenario.n).map(|i| format!("p{i:05}")).collect(),
        &rows,
    )?;
    Ok((
        PhDataset {
            design,
            entries,
            exits,
            events,
        },
        scenario.true_coefficients.clone(),
    ))
}

// ── Grid-search oracles ──────────────────────────────────────────────────────

/// Data for one grid-search problem.
pub enum OracleData<'a> {
    /// Partial-likelihood maximization; free coefficients are the design
    /// columns.
    Cox {
        design: &'a DesignMatrix<f64>,
        entries: &'a [u32],
        exits: &'a [u32],
        events: &'a [bool],
        ties: TiesMethod,
    },
    /// Bernoulli-likelihood maximization; free coefficients are the
    /// intercept followed by the design columns.
    Logit {
        design: &'a DesignMatrix<f64>,
        outcomes: &'a [bool],
    },
}

// Partial log-likelihood written the long way: risk sums recomputed per
// death episode with plain exponentials and no stabilization. This is the
// independent reference the Newton fitter is checked against.
fn naive_cox_loglik(
    design: &DesignMatrix<f64>,
    entries: &[u32],
    exits: &[u32],
    events: &[bool],
    ties: TiesMethod,
    beta: &[f64],
) -> f64 {
    let n = design.n_rows();
    let eta: Vec<f64> = (0..n)
        .map(|i| design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let mut times: Vec<u32> = (0..n).filter(|&i| events[i]).map(|i| exits[i]).collect();
    times.sort_unstable();
    times.dedup();
    let mut ll = 0.0;
    for t in times {
        let deaths: Vec<usize> = (0..n).filter(|&i| events[i] && exits[i] == t).collect();
        let risk_sum: f64 = (0..n)
            .filter(|&i| entries[i] <= t && t <= exits[i])
            .map(|i| eta[i].exp())
            .sum();
        let death_sum: f64 = deaths.iter().map(|&i| eta[i].exp()).sum();
        let d = deaths.len();
        for &i in &deaths {
            ll += eta[i];
        }
        match ties {
            TiesMethod::Breslow => ll -= d as f64 * risk_sum.ln(),
            TiesMethod::Efron => {
                for l in 0..d {
                    ll -= (risk_sum - (l as f64 / d as f64) * death_sum).ln();
                }
            }
        }
    }
    ll
}

fn naive_logit_loglik(design: &DesignMatrix<f64>, outcomes: &[bool], beta: &[f64]) -> f64 {
    (0..design.n_rows())
        .map(|i| {
            let eta: f64 = beta[0]
                + design
                    .row(i)
                    .iter()
                    .zip(&beta[1..])
                    .map(|(x, b)| x * b)
                    .sum::<f64>();
            let p = 1.0 / (1.0 + (-eta).exp());
            if outcomes[i] { p.ln() } else { (1.0 - p).ln() }
        })
        .sum()
}

/// Maximizes the exact likelihood over an exhaustive coefficient grid.
///
/// Each coordinate `j` ranges over `bounds[j].0, bounds[j].0 + step, ...`
/// up to `bounds[j].1`. The argmax over all grid points with a finite
/// objective is returned; this brute-force path shares no code with the
/// Newton fitters and is used to cross-check them.
///
/// # Errors
///
/// Rejects models with more than two free coefficients, malformed bounds
/// or step, and grids on which the objective is nowhere finite.
pub fn oracle_grid_fit(
    data: &OracleData<'_>,
    bounds: &[(f64, f64)],
    step: f64,
) -> Result<Vec<f64>, SynthError> {
    let free = match data {
        OracleData::Cox { design, .. } => design.n_cols(),
        OracleData::Logit { design, .. } => design.n_cols() + 1,
    };
    if free > 2 {
        return Err(SynthError::TooManyCoefficients { got: free });
    }
    let fail = |reason: &str| {
        Err(SynthError::BadGrid {
            reason: reason.to_string(),
        })
    };
    if bounds.len() != free {
        return fail("bounds length must match the number of free coefficients");
    }
    if !(step.is_finite() && step > 0.0) {
        return fail("step must be positive and finite");
    }
    if bounds
        .iter()
        .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo > hi)
    {
        return fail("each bound must be a finite, ordered interval");
    }
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let count = ((hi - lo) / step).floor() as usize + 1;
            (0..count).map(|k| lo + k as f64 * step).collect()
        })
        .collect();
    let objective = |beta: &[f64]| match data {
        OracleData::Cox {
            design,
            entries,
            exits,
            events,
            ties,
        } => naive_cox_loglik(design, entries, exits, events, *ties, beta),
        OracleData::Logit { design, outcomes } => naive_logit_loglik(design, outcomes, beta),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |beta: &[f64]| {
        let value = objective(beta);
        if value.is_finite() && best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, beta.to_vec()));
        }
    };
    match axes.len() {
        1 => {
            for &a in &axes[0] {
                consider(&[a]);
            }
        }
        2 => {
            for &a in &axes[0] {
                for &b in &axes[1] {
                    consider(&[a, b]);
                }
            }
        }
        _ => unreachable!("free coefficient count is 1 or 2"),
    }
    best.map(|(_, beta)| beta).ok_or(SynthError::NonFiniteObjective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{self, GroupVariable};
    use crate::coxph::{self, TiesMethod};
    use crate::logit;
    use approx::assert_relative_eq;

    fn level_counts(cohort: &Cohort, variable: GroupVariable) -> Vec<(String, usize, usize)> {
        cohort
            .strata(variable)
            .into_iter()
            .map(|(label, idx)| {
                let deaths = idx
                    .iter()
                    .filter(|&&i| cohort.subjects()[i].event)
                    .count();
                (label, idx.len(), deaths)
            })
            .collect()
    }

    #[test]
    fn default_targets_produce_exact_population_marginals() {
        let targets = CalibrationTargets::default();
        let (cohort, report) = generate_calibrated(&targets, 42).unwrap();
        assert_eq!(cohort.len(), 132);
        assert_eq!(cohort.horizon(), 67);
        let deaths = cohort.subjects().iter().filter(|s| s.event).count();
        assert_eq!(deaths, 89);

        let by_allegiance = level_counts(&cohort, GroupVariable::Allegiance);
        for &(level, count, level_deaths) in &targets.allegiance {
            let row = by_allegiance
                .iter()
                .find(|(label, _, _)| *label == level.to_string())
                .unwrap();
            assert_eq!(row.1, count, "{level} population");
            assert_eq!(row.2, level_deaths, "{level} deaths");
        }
        // The smallest house is wiped out entirely.
        let tyrell = by_allegiance
            .iter()
            .find(|(label, _, _)| label == "Tyrell")
            .unwrap();
        assert_eq!((tyrell.1, tyrell.2), (4, 4));

        for (variable, want) in [
            (
                GroupVariable::Sex,
                targets
                    .sex
                    .iter()
                    .map(|&(l, c, _)| (l.to_string(), c))
                    .collect::<Vec<_>>(),
            ),
            (
                GroupVariable::Occupation,
                targets
                    .occupation
                    .iter()
                    .map(|&(l, c, _)| (l.to_string(), c))
                    .collect(),
            ),
            (
                GroupVariable::Region,
                targets
                    .region
                    .iter()
                    .map(|&(l, c, _)| (l.to_string(), c))
                    .collect(),
            ),
        ] {
            let got = level_counts(&cohort, variable);
            for (label, count) in want {
                let row = got.iter().find(|(l, _, _)| *l == label).unwrap();
                assert_eq!(row.1, count, "{label} population");
            }
        }

        // Causes cover the deaths to the exact counts.
        for &(cause, count) in &targets.causes {
            let got = cohort
                .subjects()
                .iter()
                .filter(|s| s.cause == Some(cause))
                .count();
            assert_eq!(got, count, "{cause} count");
        }
        assert!(report.median_follow_up >= 29.0 && report.median_follow_up <= 35.0);
        // The report's gap equals what the cohort actually shows.
        let mut recomputed = 0usize;
        for (variable, want) in [
            (GroupVariable::Sex, &targets.sex.iter().map(|&(l, _, d)| (l.to_string(), d)).collect::<Vec<_>>()),
            (GroupVariable::Occupation, &targets.occupation.iter().map(|&(l, _, d)| (l.to_string(), d)).collect()),
            (GroupVariable::Region, &targets.region.iter().map(|&(l, _, d)| (l.to_string(), d)).collect()),
        ] {
            let got = level_counts(&cohort, variable);
            for (label, d) in want {
                let row = got.iter().find(|(l, _, _)| l == label).unwrap();
                recomputed += row.2.abs_diff(*d);
            }
        }
        assert_eq!(report.total_gap, recomputed);
    }

    #[test]
    fn generated_cohort_round_trips_and_needs_no_exclusions() {
        let (cohort, _) = generate_calibrated(&CalibrationTargets::default(), 42).unwrap();
        let text = cohort::write_cohort(&cohort);
        let reparsed = cohort::parse_cohort(&text, cohort.horizon()).unwrap();
        assert_eq!(cohort::write_cohort(&reparsed), text);
        let (kept, report) = cohort::apply_exclusions(&cohort, 5.0);
        assert_eq!(kept.len(), cohort.len());
        assert!(report.removed.is_empty());
    }

    #[test]
    fn seeds_control_arrangement_but_not_marginals() {
        let targets = CalibrationTargets::default();
        let (a1, _) = generate_calibrated(&targets, 42).unwrap();
        let (a2, _) = generate_calibrated(&targets, 42).unwrap();
        assert_eq!(cohort::write_cohort(&a1), cohort::write_cohort(&a2));
        let (b, _) = generate_calibrated(&targets, 7).unwrap();
        assert_ne!(cohort::write_cohort(&a1), cohort::write_cohort(&b));
        // Allegiance-level death counts stay exact under any seed.
        for cohort in [&a1, &b] {
            let got = level_counts(cohort, GroupVariable::Allegiance);
            for &(level, count, deaths) in &targets.allegiance {
                let row = got
                    .iter()
                    .find(|(label, _, _)| *label == level.to_string())
                    .unwrap();
                assert_eq!((row.1, row.2), (count, deaths));
            }
        }
    }

    #[test]
    fn median_follow_up_lands_near_target_across_seeds() {
        let targets = CalibrationTargets::default();
        for seed in [42, 7, 99, 1234] {
            let (cohort, report) = generate_calibrated(&targets, seed).unwrap();
            let summary = cohort::follow_up_summary(&cohort).unwrap();
            assert!(
                (summary.median - 32.0).abs() <= 3.0,
                "seed {seed}: median {}",
                summary.median
            );
            assert_eq!(summary.median, report.median_follow_up);
        }
    }

    #[test]
    fn inconsistent_targets_are_rejected() {
        let mut t = CalibrationTargets::default();
        t.sex = vec![(Sex::Male, 100, 68), (Sex::Female, 30, 21)];
        assert!(matches!(
            generate_calibrated(&t, 42).unwrap_err(),
            SynthError::InconsistentTargets { .. }
        ));
        let mut t = CalibrationTargets::default();
        t.causes[0].1 += 1;
        assert!(matches!(
            generate_calibrated(&t, 42).unwrap_err(),
            SynthError::InconsistentTargets { .. }
        ));
        let mut t = CalibrationTargets::default();
        t.allegiance[6] = (Allegiance::Tyrell, 4, 5);
        assert!(matches!(
            generate_calibrated(&t, 42).unwrap_err(),
            SynthError::InconsistentTargets { .. }
        ));
    }

    #[test]
    fn null_simulation_matches_the_nominal_rate() {
        let scenario = PhScenario {
            n: 1000,
            true_coefficients: vec![0.0],
            baseline_hazard: 0.05,
            scheme: CovariateScheme::Binary,
            horizon: 67,
            seed: 1,
        };
        let (data, _) = generate_ph(&scenario).unwrap();
        let deaths = data.events.iter().filter(|&&e| e).count() as f64;
        let person_episodes: f64 = data.exits.iter().map(|&t| t as f64).sum();
        let rate = deaths / person_episodes;
        let nominal = 1.0 - (-0.05f64).exp();
        let se = (nominal * (1.0 - nominal) / person_episodes).sqrt();
        assert!(
            (rate - nominal).abs() <= 3.0 * se,
            "rate {rate}, nominal {nominal}, se {se}"
        );
    }

    #[test]
    fn fitter_recovers_a_known_log_hazard_ratio() {
        let scenario = PhScenario {
            n: 10000,
            true_coefficients: vec![std::f64::consts::LN_2],
            baseline_hazard: 0.01,
            scheme: CovariateScheme::Binary,
            horizon: 67,
            seed: 2,
        };
        let (data, truth) = generate_ph(&scenario).unwrap();
        let fit = coxph::cox_fit(
            &data.design,
            &data.entries,
            &data.exits,
            &data.events,
            TiesMethod::Efron,
        )
        .unwrap();
        assert!(fit.converged);
        assert!(
            (fit.coefficients[0] - truth[0]).abs() <= 0.07,
            "estimate {}",
            fit.coefficients[0]
        );
    }

    #[test]
    fn simulation_error_cases_are_reported() {
        let base = PhScenario {
            n: 4,
            true_coefficients: vec![0.0],
            baseline_hazard: 0.05,
            scheme: CovariateScheme::Binary,
            horizon: 67,
            seed: 3,
        };
        let mut s = base.clone();
        s.horizon = 0;
        assert_eq!(generate_ph(&s).unwrap_err(), SynthError::ZeroEvents);
        let mut s = base.clone();
        s.baseline_hazard = 50.0;
        assert_eq!(
            generate_ph(&s).unwrap_err(),
            SynthError::HazardTooLarge { index: 0 }
        );
        let mut s = base.clone();
        s.n = 0;
        assert!(matches!(
            generate_ph(&s).unwrap_err(),
            SynthError::BadScenario { .. }
        ));
        let mut s = base;
        s.baseline_hazard = -1.0;
        assert!(matches!(
            generate_ph(&s).unwrap_err(),
            SynthError::BadScenario { .. }
        ));
    }

    #[test]
    fn null_fits_are_calibrated_over_many_seeds() {
        // With the true coefficient at zero, the Wald statistic should
        // exceed 1.96 in roughly 5% of independent simulations.
        let mut exceedances = 0;
        for seed in 0..100 {
            let scenario = PhScenario {
                n: 200,
                true_coefficients: vec![0.0],
                baseline_hazard: 0.02,
                scheme: CovariateScheme::Binary,
                horizon: 67,
                seed,
            };
            let (data, _) = generate_ph(&scenario).unwrap();
            let fit = coxph::cox_fit(
                &data.design,
                &data.entries,
                &data.exits,
                &data.events,
                TiesMethod::Efron,
            )
            .unwrap();
            let z = fit.coefficients[0] / fit.covariance[0].sqrt();
            if z.abs() > 1.96 {
                exceedances += 1;
            }
        }
        assert!(exceedances <= 10, "{exceedances} of 100 exceeded");
    }

    fn alternating() -> (DesignMatrix<f64>, Vec<u32>, Vec<u32>, Vec<bool>) {
        let design = DesignMatrix::from_rows(
            vec!["x".to_string()],
            (0..4).map(|i| format!("s{i}")).collect(),
            &[vec![1.0], vec![0.0], vec![1.0], vec![0.0]],
        )
        .unwrap();
        (design, vec![1; 4], vec![1, 2, 3, 4], vec![true; 4])
    }

    #[test]
    fn cox_grid_oracle_matches_the_stationarity_root() {
        let (design, entries, exits, events) = alternating();
        let data = OracleData::Cox {
            design: &design,
            entries: &entries,
            exits: &exits,
            events: &events,
            ties: TiesMethod::Efron,
        };
        let beta = oracle_grid_fit(&data, &[(-5.0, 5.0)], 1e-4).unwrap();
        // Root of 2 = 2u/(u+1) + u/(u+2) with u = exp(beta).
        assert!((beta[0] - 0.94061364210720876).abs() <= 1e-4);
        // And it agrees with the Newton fitter.
        let fit = coxph::cox_fit(&design, &entries, &exits, &events, TiesMethod::Efron).unwrap();
        assert!((beta[0] - fit.coefficients[0]).abs() <= 1e-3);
    }

    #[test]
    fn logit_grid_oracle_matches_the_cross_product_ratio() {
        // Unexposed 5 events / 10 non-events, exposed 8 / 4: odds ratio 4.
        let mut rows = Vec::new();
        let mut outcomes = Vec::new();
        for i in 0..15 {
            rows.push(vec![0.0]);
            outcomes.push(i < 5);
        }
        for i in 0..12 {
            rows.push(vec![1.0]);
            outcomes.push(i < 8);
        }
        let design = DesignMatrix::from_rows(
            vec!["exposed".to_string()],
            (0..27).map(|i| format!("s{i}")).collect(),
            &rows,
        )
        .unwrap();
        let data = OracleData::Logit {
            design: &design,
            outcomes: &outcomes,
        };
        let beta = oracle_grid_fit(&data, &[(-2.0, 0.0), (0.0, 2.0)], 0.01).unwrap();
        assert!((beta[1] - 4.0f64.ln()).abs() <= 0.01);
        let fit = logit::logit_fit(&design, &outcomes).unwrap();
        assert!((beta[0] - fit.coefficients[0]).abs() <= 0.01);
        assert!((beta[1] - fit.coefficients[1]).abs() <= 0.01);
    }

    #[test]
    fn randomized_small_cox_fits_agree_with_the_grid() {
        // On tiny generated datasets the Newton fitter and an exhaustive
        // grid search of the naive partial likelihood must land on the
        // same maximizer to within the grid resolution.
        let mut checked = 0;
        for seed in 0..6 {
            let scenario = PhScenario {
                n: 8,
                true_coefficients: vec![0.5],
                baseline_hazard: 0.3,
                scheme: CovariateScheme::Uniform,
                horizon: 10,
                seed,
            };
            let Ok((data, _)) = generate_ph(&scenario) else {
                continue;
            };
            let Ok(fit) = coxph::cox_fit(
                &data.design,
                &data.entries,
                &data.exits,
                &data.events,
                TiesMethod::Efron,
            ) else {
                continue;
            };
            assert!(fit.converged, "seed {seed}");
            let oracle = OracleData::Cox {
                design: &data.design,
                entries: &data.entries,
                exits: &data.exits,
                events: &data.events,
                ties: TiesMethod::Efron,
            };
            let beta = oracle_grid_fit(&oracle, &[(-16.0, 16.0)], 1e-3).unwrap();
            assert!(
                (beta[0] - fit.coefficients[0]).abs() <= 1e-3,
                "seed {seed}: grid {} vs fit {}",
                beta[0],
                fit.coefficients[0]
            );
            checked += 1;
        }
        assert!(checked >= 2, "only {checked} scenarios were fittable");
    }

    #[test]
    fn logit_fit_agrees_with_a_fine_grid() {
        // Two exposure levels, six subjects each: 2/6 and 4/6 events. The
        // maximizer sits at (-ln 2, ln 4); a fine grid around it must match
        // the Newton fit coordinate by coordinate.
        let mut rows = Vec::new();
        let mut outcomes = Vec::new();
        for i in 0..6 {
            rows.push(vec![0.0]);
            outcomes.push(i < 2);
        }
        for i in 0..6 {
            rows.push(vec![1.0]);
            outcomes.push(i < 4);
        }
        let design = DesignMatrix::from_rows(
            vec!["exposed".to_string()],
            (0..12).map(|i| format!("s{i}")).collect(),
            &rows,
        )
        .unwrap();
        let data = OracleData::Logit {
            design: &design,
            outcomes: &outcomes,
        };
        let beta = oracle_grid_fit(&data, &[(-0.9, -0.5), (1.2, 1.6)], 1e-3).unwrap();
        let fit = logit::logit_fit(&design, &outcomes).unwrap();
        assert!(fit.converged);
        assert!((beta[0] - fit.coefficients[0]).abs() <= 1e-3);
        assert!((beta[1] - fit.coefficients[1]).abs() <= 1e-3);
    }

    #[test]
    fn symmetric_data_put_the_grid_argmax_at_zero() {
        let design = DesignMatrix::from_rows(
            vec!["x".to_string()],
            (0..4).map(|i| format!("s{i}")).collect(),
            &[vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]],
        )
        .unwrap();
        let outcomes = vec![true, false, true, false];
        let data = OracleData::Logit {
            design: &design,
            outcomes: &outcomes,
        };
        let beta = oracle_grid_fit(&data, &[(-1.0, 1.0), (-1.0, 1.0)], 0.05).unwrap();
        assert!(beta[0].abs() <= 0.05);
        assert!(beta[1].abs() <= 0.05);
    }

    #[test]
    fn grid_oracle_rejects_bad_specifications() {
        let (design, entries, exits, events) = alternating();
        let wide = DesignMatrix::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            (0..4).map(|i| format!("s{i}")).collect(),
            &[
                vec![1.0, 0.0, 0.5],
                vec![0.0, 1.0, 0.2],
                vec![1.0, 1.0, 0.9],
                vec![0.0, 0.0, 0.4],
            ],
        )
        .unwrap();
        let data = OracleData::Cox {
            design: &wide,
            entries: &entries,
            exits: &exits,
            events: &events,
            ties: TiesMethod::Efron,
        };
        assert_eq!(
            oracle_grid_fit(&data, &[(-1.0, 1.0); 3], 0.1).unwrap_err(),
            SynthError::TooManyCoefficients { got: 3 }
        );
        let data = OracleData::Cox {
            design: &design,
            entries: &entries,
            exits: &exits,
            events: &events,
            ties: TiesMethod::Efron,
        };
        assert!(matches!(
            oracle_grid_fit(&data, &[(-1.0, 1.0), (-1.0, 1.0)], 0.1).unwrap_err(),
            SynthError::BadGrid { .. }
        ));
        assert!(matches!(
            oracle_grid_fit(&data, &[(-1.0, 1.0)], 0.0).unwrap_err(),
            SynthError::BadGrid { .. }
        ));
        assert!(matches!(
            oracle_grid_fit(&data, &[(1.0, -1.0)], 0.1).unwrap_err(),
            SynthError::BadGrid { .. }
        ));
    }

    #[test]
    fn ages_are_plausible_and_rounded() {
        let (cohort, _) = generate_calibrated(&CalibrationTargets::default(), 42).unwrap();
        let ages: Vec<f64> = cohort.subjects().iter().map(|s| s.age_years).collect();
        assert!(ages.iter().all(|&a| a >= 0.0));
        for &a in &ages {
            assert_relative_eq!(a, round1(a));
        }
        let mean = ages.iter().sum::<f64>() / ages.len() as f64;
        // Sampling noise at n = 132 keeps the mean within a few years.
        assert!((mean - 35.1).abs() < 6.0, "mean {mean}");
    }
}
