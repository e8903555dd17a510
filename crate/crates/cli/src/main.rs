//! Command-line cohort analysis over discrete episode time.
//!
//! Subcommands cover the full pipeline: `synth` writes a calibrated
//! synthetic cohort, `table1` summarizes baseline characteristics, `km`
//! exports survival curves with a log-rank comparison, `cox` and `logit`
//! fit the hazard and odds models, and `report` stitches everything into
//! one document.
//!
//! Runs are reproducible from the shell line alone: identical inputs and
//! flags produce byte-identical outputs. Every output is assembled in
//! memory first and written once, so a failing run leaves no partial file.
//! Exit codes: 0 success, 2 usage error, 1 data or model error.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use episurv::cohort::{
    apply_exclusions, baseline_table, encode_design, follow_up_summary, parse_cohort,
    write_cohort, BaselineTable, Cohort, CovariateSpec, FollowUpSummary, GroupVariable,
    DEFAULT_HORIZON,
};
use episurv::coxph::{cox_fit, wald_table, TiesMethod};
use episurv::logit::{logit_fit, odds_table};
use episurv::survfit::{km_curve_csv, km_fit, log_rank, GroupData, LogRank};
use episurv::synth::{generate_calibrated, CalibrationTargets};
use episurv::table::{render_baseline, render_model_table, ModelTable, OutputFormat, TableError};

// ── Argument parsing ─────────────────────────────────────────────────────────

/// Cohort survival analysis: baseline tables, survival curves, hazard and
/// odds models, and calibrated synthetic cohorts.
#[derive(Parser)]
#[command(name = "episurv", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a calibrated synthetic cohort CSV.
    Synth(Flags),
    /// Render the baseline characteristics table.
    Table1(Flags),
    /// Export survival curves per stratum and compare them.
    Km(Flags),
    /// Fit the proportional-hazards model and render its table.
    Cox(Flags),
    /// Fit the logistic model and render its table.
    Logit(Flags),
    /// Render baseline, survival, and model tables as one document.
    Report(Flags),
}

/// Raw flag values shared by every subcommand; unset flags fall back to the
/// config file, then to built-in defaults.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Input cohort CSV.
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Output file; a directory for `km`. Tables print to stdout when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Table format: markdown, csv, or json.
    #[arg(long, value_name = "FORMAT")]
    format: Option<String>,
    /// Tie handling for the hazard model: efron or breslow.
    #[arg(long, value_name = "METHOD")]
    ties: Option<String>,
    /// Risk-set entry: staggered (first appearance) or origin (all at episode 1).
    #[arg(long, value_name = "MODE")]
    entry_mode: Option<String>,
    /// Confidence level, strictly between 0 and 1.
    #[arg(long, value_name = "LEVEL")]
    conf: Option<f64>,
    /// Generator seed for `synth`.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Last episode of the study window.
    #[arg(long, value_name = "EPISODE")]
    horizon: Option<u32>,
    /// Screen-time eligibility threshold in minutes.
    #[arg(long, value_name = "MINUTES")]
    min_screen_minutes: Option<f64>,
    /// Stratifying variable for `km`: sex, allegiance, occupation, or region.
    #[arg(long, value_name = "VARIABLE")]
    by: Option<String>,
    /// Comma-separated stratum levels to keep (with --by).
    #[arg(long, value_name = "LEVELS")]
    only: Option<String>,
    /// Key=value file supplying defaults for any of the above flags.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

/// How entry episodes shape risk sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntryMode {
    /// Subjects join the risk set at their first observed episode.
    Staggered,
    /// All subjects are treated as observed from episode 1.
    Origin,
}

/// One resolved run: every option carries its final value.
#[derive(Debug)]
struct RunConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    format: OutputFormat,
    ties: TiesMethod,
    entry_mode: EntryMode,
    conf: f64,
    seed: u64,
    horizon: u32,
    min_screen_minutes: f64,
    by: Option<GroupVariable>,
    only: Option<Vec<String>>,
}

/// A failed run, split by exit code.
#[derive(Debug, PartialEq, Eq)]
enum CliError {
    /// Bad value for a named flag; exits 2.
    Usage { flag: &'static str, message: String },
    /// Data or model failure; exits 1.
    Run(String),
}

impl CliError {
    fn usage(flag: &'static str, message: impl Into<String>) -> Self {
        CliError::Usage {
            flag,
            message: message.into(),
        }
    }
}

fn run_error(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

// Plain key=value lines; `#` starts a comment. Keys use the flag spellings.
fn parse_config_file(path: &PathBuf) -> Result<Vec<(String, String)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::usage("--config", format!("cannot read {}: {e}", path.display()))
    })?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::usage(
                "--config",
                format!("line `{line}` is not key=value"),
            ));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

// Fills unset flags from the config file; explicit flags win.
fn apply_config(flags: &mut Flags, pairs: Vec<(String, String)>) -> Result<(), CliError> {
    let bad_number = |flag: &'static str, value: &str| {
        CliError::usage(flag, format!("`{value}` is not a number"))
    };
    for (key, value) in pairs {
        match key.as_str() {
            "data" => flags.data.get_or_insert_with(|| PathBuf::from(&value)),
            "out" => flags.out.get_or_insert_with(|| PathBuf::from(&value)),
            "format" => flags.format.get_or_insert_with(|| value.clone()),
            "ties" => flags.ties.get_or_insert_with(|| value.clone()),
            "entry-mode" => flags.entry_mode.get_or_insert_with(|| value.clone()),
            "conf" => flags
                .conf
                .get_or_insert(value.parse().map_err(|_| bad_number("--conf", &value))?),
            "seed" => flags
                .seed
                .get_or_insert(value.parse().map_err(|_| bad_number("--seed", &value))?),
            "horizon" => flags
                .horizon
                .get_or_insert(value.parse().map_err(|_| bad_number("--horizon", &value))?),
            "min-screen-minutes" => flags.min_screen_minutes.get_or_insert(
                value
                    .parse()
                    .map_err(|_| bad_number("--min-screen-minutes", &value))?,
            ),
            "by" => flags.by.get_or_insert_with(|| value.clone()),
            "only" => flags.only.get_or_insert_with(|| value.clone()),
            other => {
                return Err(CliError::usage(
                    "--config",
                    format!("unknown key `{other}`"),
                ));
            }
        };
    }
    Ok(())
}

fn resolve(mut flags: Flags) -> Result<RunConfig, CliError> {
    if let Some(path) = flags.config.take() {
        let pairs = parse_config_file(&path)?;
        apply_config(&mut flags, pairs)?;
    }
    let format = match flags.format {
        Some(s) => OutputFormat::from_str(&s).map_err(|e| CliError::usage("--format", e.to_string()))?,
        None => OutputFormat::Markdown,
    };
    let ties = match flags.ties {
        Some(s) => TiesMethod::from_str(&s).map_err(|e| CliError::usage("--ties", e.to_string()))?,
        None => TiesMethod::Efron,
    };
    let entry_mode = match flags.entry_mode.as_deref() {
        None | Some("staggered") => EntryMode::Staggered,
        Some("origin") => EntryMode::Origin,
        Some(other) => {
            return Err(CliError::usage(
                "--entry-mode",
                format!("unknown mode `{other}`; expected staggered or origin"),
            ));
        }
    };
    let conf = flags.conf.unwrap_or(0.95);
    if !(conf > 0.0 && conf < 1.0) {
        return Err(CliError::usage(
            "--conf",
            "confidence level must be strictly between 0 and 1",
        ));
    }
    let horizon = flags.horizon.unwrap_or(DEFAULT_HORIZON);
    if horizon == 0 {
        return Err(CliError::usage("--horizon", "must be at least 1"));
    }
    let min_screen_minutes = flags.min_screen_minutes.unwrap_or(5.0);
    if !(min_screen_minutes >= 0.0) {
        return Err(CliError::usage(
            "--min-screen-minutes",
            "must be non-negative",
        ));
    }
    let by = match flags.by {
        Some(s) => Some(GroupVariable::from_str(&s).map_err(|()| {
            CliError::usage(
                "--by",
                format!("unknown variable `{s}`; expected sex, allegiance, occupation, or region"),
            )
        })?),
        None => None,
    };
    let only = match flags.only {
        Some(s) => {
            let levels: Vec<String> = s
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if levels.is_empty() {
                return Err(CliError::usage("--only", "no levels given"));
            }
            if by.is_none() {
                return Err(CliError::usage("--only", "requires --by"));
            }
            Some(levels)
        }
        None => None,
    };
    Ok(RunConfig {
        data: flags.data,
        out: flags.out,
        format,
        ties,
        entry_mode,
        conf,
        seed: flags.seed.unwrap_or(42),
        horizon,
        min_screen_minutes,
        by,
        only,
    })
}

// ── Run outputs ──────────────────────────────────────────────────────────────

/// Everything a successful run emits, buffered so that writes happen only
/// after the whole run has succeeded.
#[derive(Debug, Default)]
struct Emit {
    files: Vec<(PathBuf, String)>,
    stdout: String,
    stderr: String,
}

impl Emit {
    // Routes a rendered table to --out or stdout.
    fn table(&mut self, out: &Option<PathBuf>, text: String) {
        match out {
            Some(path) => self.files.push((path.clone(), text)),
            None => self.stdout.push_str(&text),
        }
    }
}

// ── Cohort loading ───────────────────────────────────────────────────────────

fn load_cohort(cfg: &RunConfig, emit: &mut Emit) -> Result<Cohort, CliError> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("--data", "required for this command"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Run(format!("cannot read {}: {e}", path.display())))?;
    let cohort = parse_cohort(&text, cfg.horizon).map_err(run_error)?;
    let (cohort, exclusions) = apply_exclusions(&cohort, cfg.min_screen_minutes);
    for (id, rule) in &exclusions.removed {
        let _ = writeln!(emit.stderr, "excluded {id}: {rule}");
    }
    if cohort.is_empty() {
        return Err(CliError::Run(
            "every subject was excluded; nothing to analyze".to_string(),
        ));
    }
    match cfg.entry_mode {
        EntryMode::Staggered => Ok(cohort),
        EntryMode::Origin => {
            let subjects = cohort
                .subjects()
                .iter()
                .cloned()
                .map(|mut s| {
                    s.entry_episode = 1;
                    s
                })
                .collect();
            Cohort::new(subjects, cohort.horizon()).map_err(run_error)
        }
    }
}

fn group_data(cohort: &Cohort, label: &str, indices: &[usize]) -> GroupData {
    GroupData::new(
        label,
        indices.iter().map(|&i| {
            let s = &cohort.subjects()[i];
            (s.entry_episode, s.exit_episode, s.event)
        }),
    )
}

// Strata selected by --by/--only, or the whole cohort as one group.
fn selected_groups(cohort: &Cohort, cfg: &RunConfig) -> Result<Vec<GroupData>, CliError> {
    let Some(variable) = cfg.by else {
        let all: Vec<usize> = (0..cohort.len()).collect();
        return Ok(vec![group_data(cohort, "all", &all)]);
    };
    let keep: Option<Vec<&'static str>> = match &cfg.only {
        Some(tokens) => Some(
            tokens
                .iter()
                .map(|t| {
                    Cohort::canonical_level(variable, t)
                        .map_err(|e| CliError::usage("--only", e.to_string()))
                })
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let groups: Vec<GroupData> = cohort
        .strata(variable)
        .into_iter()
        .filter(|(label, _)| {
            keep.as_ref()
                .map_or(true, |k| k.iter().any(|&l| l == label))
        })
        .map(|(label, idx)| group_data(cohort, &label, &idx))
        .collect();
    if groups.is_empty() {
        return Err(CliError::Run(
            "no subjects fall in the selected strata".to_string(),
        ));
    }
    Ok(groups)
}

fn log_rank_text(lr: &LogRank<f64>) -> String {
    let mut out = format!(
        "log-rank: chi-square {:.4}, df {}, p {:.4}\n",
        lr.chi_square, lr.df, lr.p_value
    );
    for ((label, obs), exp) in lr.labels.iter().zip(&lr.observed).zip(&lr.expected) {
        let _ = writeln!(out, "  {label}: observed {obs:.0}, expected {exp:.2}");
    }
    out
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn cmd_synth(cfg: &RunConfig) -> Result<Emit, CliError> {
    let targets = CalibrationTargets {
        horizon: cfg.horizon,
        ..CalibrationTargets::default()
    };
    let (cohort, report) = generate_calibrated(&targets, cfg.seed).map_err(run_error)?;
    let path = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("calibrated.csv"));
    let mut emit = Emit::default();
    let deaths = cohort.events().iter().filter(|&&e| e).count();
    let _ = writeln!(
        emit.stdout,
        "wrote {} subjects ({deaths} deaths) to {}",
        cohort.len(),
        path.display()
    );
    let _ = writeln!(
        emit.stdout,
        "median follow-up: {} episodes",
        report.median_follow_up
    );
    if report.unmatched.is_empty() {
        let _ = writeln!(emit.stdout, "all death targets matched");
    } else {
        for (level, target, achieved) in &report.unmatched {
            let _ = writeln!(
                emit.stdout,
                "death target missed for {level}: target {target}, achieved {achieved}"
            );
        }
    }
    emit.files.push((path, write_cohort(&cohort)));
    Ok(emit)
}

fn cmd_table1(cfg: &RunConfig) -> Result<Emit, CliError> {
    let mut emit = Emit::default();
    let cohort = load_cohort(cfg, &mut emit)?;
    let table = baseline_table(&cohort).map_err(run_error)?;
    let text = render_baseline(&table, cfg.format).map_err(run_error)?;
    emit.table(&cfg.out, text);
    Ok(emit)
}

fn cmd_km(cfg: &RunConfig) -> Result<Emit, CliError> {
    let mut emit = Emit::default();
    let cohort = load_cohort(cfg, &mut emit)?;
    let groups = selected_groups(&cohort, cfg)?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    for g in &groups {
        let curve = km_fit::<f64>(&g.entries, &g.exits, &g.events, cfg.conf).map_err(run_error)?;
        let path = out_dir.join(format!("km_{}.csv", g.label));
        let _ = writeln!(emit.stdout, "wrote {}", path.display());
        emit.files.push((path, km_curve_csv(&curve)));
    }
    if groups.len() >= 2 {
        let lr = log_rank::<f64>(&groups).map_err(run_error)?;
        emit.stdout.push_str(&log_rank_text(&lr));
    }
    Ok(emit)
}

fn cmd_cox(cfg: &RunConfig) -> Result<Emit, CliError> {
    let mut emit = Emit::default();
    let cohort = load_cohort(cfg, &mut emit)?;
    let design = encode_design::<f64>(&cohort, &CovariateSpec::default()).map_err(run_error)?;
    let fit = cox_fit(
        &design,
        &cohort.entries(),
        &cohort.exits(),
        &cohort.events(),
        cfg.ties,
    )
    .map_err(run_error)?;
    for w in &fit.warnings {
        let _ = writeln!(emit.stderr, "warning: {w}");
    }
    let table = wald_table(&fit, cfg.conf).map_err(run_error)?;
    let text = render_model_table(&table, cfg.format).map_err(run_error)?;
    emit.table(&cfg.out, text);
    Ok(emit)
}

fn cmd_logit(cfg: &RunConfig) -> Result<Emit, CliError> {
    let mut emit = Emit::default();
    let cohort = load_cohort(cfg, &mut emit)?;
    let design = encode_design::<f64>(&cohort, &CovariateSpec::default()).map_err(run_error)?;
    let fit = logit_fit(&design, &cohort.events()).map_err(run_error)?;
    let table = odds_table(&fit, cfg.conf).map_err(run_error)?;
    let text = render_model_table(&table, cfg.format).map_err(run_error)?;
    emit.table(&cfg.out, text);
    Ok(emit)
}

// ── Combined report ──────────────────────────────────────────────────────────

/// Per-stratum survival summary feeding the combined report.
#[derive(Debug, Clone)]
struct SurvivalSection {
    variable: String,
    /// Label, subject count, event count, survival at the last step.
    groups: Vec<(String, usize, usize, f64)>,
    log_rank: Option<LogRank<f64>>,
}

/// Inputs to the combined document; any subset may be present.
#[derive(Debug, Default)]
struct ReportParts {
    baseline: Option<(BaselineTable, FollowUpSummary)>,
    survival: Option<SurvivalSection>,
    cox: Option<(ModelTable<f64>, Vec<String>)>,
    /// A fitted table, or the reason the model could not be estimated.
    logit: Option<Result<ModelTable<f64>, String>>,
}

impl ReportParts {
    fn is_empty(&self) -> bool {
        self.baseline.is_none()
            && self.survival.is_none()
            && self.cox.is_none()
            && self.logit.is_none()
    }
}

/// Renders the combined document.
///
/// # Errors
///
/// Rejects an all-empty part set and propagates table rendering failures.
fn render_report(parts: &ReportParts, format: OutputFormat) -> Result<String, TableError> {
    if parts.is_empty() {
        return Err(TableError::Empty);
    }
    match format {
        OutputFormat::Markdown => report_markdown(parts),
        OutputFormat::Csv => report_csv(parts),
        OutputFormat::Json => report_json(parts),
    }
}

fn report_markdown(parts: &ReportParts) -> Result<String, TableError> {
    let mut out = String::from("# Cohort analysis\n");
    if let Some((baseline, follow_up)) = &parts.baseline {
        out.push_str("\n## Baseline characteristics\n\n");
        out.push_str(&render_baseline(baseline, OutputFormat::Markdown)?);
        let _ = writeln!(
            out,
            "\nMedian follow-up {} episodes (range {} to {}).",
            follow_up.median, follow_up.min, follow_up.max
        );
    }
    if let Some(survival) = &parts.survival {
        let _ = writeln!(out, "\n## Survival by {}\n", survival.variable);
        out.push_str("| stratum | subjects | events | survival at last step |\n");
        out.push_str("| --- | --- | --- | --- |\n");
        for (label, n, events, last) in &survival.groups {
            let _ = writeln!(out, "| {label} | {n} | {events} | {last:.3} |");
        }
        if let Some(lr) = &survival.log_rank {
            out.push('\n');
            out.push_str(&log_rank_text(lr));
        }
    }
    if let Some((table, warnings)) = &parts.cox {
        out.push_str("\n## Proportional-hazards model\n\n");
        out.push_str(&render_model_table(table, OutputFormat::Markdown)?);
        for w in warnings {
            let _ = writeln!(out, "\nNote: {w}.");
        }
    }
    if let Some(logit) = &parts.logit {
        out.push_str("\n## Logistic model\n\n");
        match logit {
            Ok(table) => out.push_str(&render_model_table(table, OutputFormat::Markdown)?),
            Err(reason) => {
                let _ = writeln!(out, "Not estimable: {reason}.");
            }
        }
    }
    Ok(out)
}

fn report_csv(parts: &ReportParts) -> Result<String, TableError> {
    let mut blocks: Vec<String> = Vec::new();
    if let Some((baseline, follow_up)) = &parts.baseline {
        blocks.push(format!(
            "# baseline\n{}",
            render_baseline(baseline, OutputFormat::Csv)?
        ));
        blocks.push(format!(
            "# follow_up\nmedian,min,max\n{},{},{}\n",
            follow_up.median, follow_up.min, follow_up.max
        ));
    }
    if let Some(survival) = &parts.survival {
        let mut block = format!(
            "# survival by {}\nstratum,subjects,events,last_survival\n",
            survival.variable
        );
        for (label, n, events, last) in &survival.groups {
            let _ = writeln!(block, "{label},{n},{events},{last}");
        }
        if let Some(lr) = &survival.log_rank {
            let _ = writeln!(block, "\n# log_rank\nchi_square,df,p_value");
            let _ = writeln!(block, "{},{},{}", lr.chi_square, lr.df, lr.p_value);
        }
        blocks.push(block);
    }
    if let Some((table, _)) = &parts.cox {
        blocks.push(format!(
            "# hazard_model\n{}",
            render_model_table(table, OutputFormat::Csv)?
        ));
    }
    if let Some(logit) = &parts.logit {
        blocks.push(match logit {
            Ok(table) => format!(
                "# odds_model\n{}",
                render_model_table(table, OutputFormat::Csv)?
            ),
            Err(reason) => format!("# odds_model\nnote,{reason}\n"),
        });
    }
    Ok(blocks.join("\n"))
}

fn report_json(parts: &ReportParts) -> Result<String, TableError> {
    // Section renderers already emit JSON; re-parse to nest them losslessly.
    let parse = |s: String| -> serde_json::Value {
        serde_json::from_str(&s).expect("section renderers emit valid json")
    };
    let mut root = serde_json::Map::new();
    if let Some((baseline, follow_up)) = &parts.baseline {
        root.insert(
            "baseline".to_string(),
            parse(render_baseline(baseline, OutputFormat::Json)?),
        );
        root.insert(
            "follow_up".to_string(),
            serde_json::json!({
                "median": follow_up.median,
                "min": follow_up.min,
                "max": follow_up.max,
            }),
        );
    }
    if let Some(survival) = &parts.survival {
        let groups: Vec<serde_json::Value> = survival
            .groups
            .iter()
            .map(|(label, n, events, last)| {
                serde_json::json!({
                    "stratum": label,
                    "subjects": n,
                    "events": events,
                    "last_survival": last,
                })
            })
            .collect();
        let lr = survival.log_rank.as_ref().map(|lr| {
            serde_json::json!({
                "chi_square": lr.chi_square,
                "df": lr.df,
                "p_value": lr.p_value,
            })
        });
        root.insert(
            "survival".to_string(),
            serde_json::json!({
                "by": survival.variable,
                "groups": groups,
                "log_rank": lr,
            }),
        );
    }
    if let Some((table, warnings)) = &parts.cox {
        let mut value = parse(render_model_table(table, OutputFormat::Json)?);
        value["warnings"] = serde_json::json!(warnings);
        root.insert("hazard_model".to_string(), value);
    }
    if let Some(logit) = &parts.logit {
        let value = match logit {
            Ok(table) => parse(render_model_table(table, OutputFormat::Json)?),
            Err(reason) => serde_json::json!({ "error": reason }),
        };
        root.insert("odds_model".to_string(), value);
    }
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(root))
        .expect("report value serializes");
    Ok(text)
}

fn cmd_report(cfg: &RunConfig) -> Result<Emit, CliError> {
    let mut emit = Emit::default();
    let cohort = load_cohort(cfg, &mut emit)?;
    let mut parts = ReportParts::default();

    let baseline = baseline_table(&cohort).map_err(run_error)?;
    let follow_up = follow_up_summary(&cohort).map_err(run_error)?;
    parts.baseline = Some((baseline, follow_up));

    let variable = cfg.by.unwrap_or(GroupVariable::Allegiance);
    let strata_cfg = RunConfig {
        by: Some(variable),
        ..RunConfig {
            data: cfg.data.clone(),
            out: cfg.out.clone(),
            format: cfg.format,
            ties: cfg.ties,
            entry_mode: cfg.entry_mode,
            conf: cfg.conf,
            seed: cfg.seed,
            horizon: cfg.horizon,
            min_screen_minutes: cfg.min_screen_minutes,
            by: cfg.by,
            only: cfg.only.clone(),
        }
    };
    let groups = selected_groups(&cohort, &strata_cfg)?;
    let mut summaries = Vec::with_capacity(groups.len());
    for g in &groups {
        let curve = km_fit::<f64>(&g.entries, &g.exits, &g.events, cfg.conf).map_err(run_error)?;
        let last = curve
            .points
            .last()
            .map_or(1.0, |p| p.survival);
        let events = g.events.iter().filter(|&&e| e).count();
        summaries.push((g.label.clone(), g.entries.len(), events, last));
    }
    let lr = if groups.len() >= 2 {
        Some(log_rank::<f64>(&groups).map_err(run_error)?)
    } else {
        None
    };
    parts.survival = Some(SurvivalSection {
        variable: variable.to_string(),
        groups: summaries,
        log_rank: lr,
    });

    let design = encode_design::<f64>(&cohort, &CovariateSpec::default()).map_err(run_error)?;
    let cox = cox_fit(
        &design,
        &cohort.entries(),
        &cohort.exits(),
        &cohort.events(),
        cfg.ties,
    )
    .map_err(run_error)?;
    let cox_table = wald_table(&cox, cfg.conf).map_err(run_error)?;
    parts.cox = Some((cox_table, cox.warnings.clone()));

    // A separating column is a property of the cohort worth reporting, not a
    // reason to abort the document.
    parts.logit = Some(match logit_fit(&design, &cohort.events()) {
        Ok(fit) => Ok(odds_table(&fit, cfg.conf).map_err(run_error)?),
        Err(e) => Err(e.to_string()),
    });

    let text = render_report(&parts, cfg.format).map_err(run_error)?;
    emit.table(&cfg.out, text);
    Ok(emit)
}

// ── Entry point ──────────────────────────────────────────────────────────────

fn dispatch(command: Command) -> Result<Emit, CliError> {
    let (run, flags) = match command {
        Command::Synth(f) => (cmd_synth as fn(&RunConfig) -> Result<Emit, CliError>, f),
        Command::Table1(f) => (cmd_table1 as fn(&RunConfig) -> _, f),
        Command::Km(f) => (cmd_km as fn(&RunConfig) -> _, f),
        Command::Cox(f) => (cmd_cox as fn(&RunConfig) -> _, f),
        Command::Logit(f) => (cmd_logit as fn(&RunConfig) -> _, f),
        Command::Report(f) => (cmd_report as fn(&RunConfig) -> _, f),
    };
    let cfg = resolve(flags)?;
    run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(emit) => {
            eprint!("{}", emit.stderr);
            for (path, content) in &emit.files {
                if let Some(parent) = path.parent() {
                    if !parent.as_os_str().is_empty() {
                        if let Err(e) = fs::create_dir_all(parent) {
                            eprintln!("error: cannot create {}: {e}", parent.display());
                            return ExitCode::from(1);
                        }
                    }
                }
                if let Err(e) = fs::write(path, content) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            print!("{}", emit.stdout);
            ExitCode::SUCCESS
        }
        Err(CliError::Usage { flag, message }) => {
            eprintln!("error: {flag}: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Run(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
