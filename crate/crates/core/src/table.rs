//! Rendering of model inference tables and baseline summaries.
//!
//! Markdown output rounds to two decimals for reading; CSV and JSON keep
//! full precision (shortest round-trip form) for downstream tooling.

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::json;
use thiserror::Error;

use crate::cohort::BaselineTable;
use crate::num::Real;
use crate::statfn;

/// Errors raised while rendering tables.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    /// The table has nothing to render.
    #[error("table has no rows")]
    Empty,
    /// The requested output format is not recognized.
    #[error("unknown output format `{0}`; expected markdown, csv, or json")]
    UnknownFormat(String),
}

/// Output formats shared by all renderers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, TableError> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(TableError::UnknownFormat(other.to_string())),
        }
    }
}

// ── Model tables ─────────────────────────────────────────────────────────────

/// One inference row: a model term with its Wald statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow<R> {
    /// Term (design column) name.
    pub term: String,
    /// Estimated coefficient on the log scale.
    pub coefficient: R,
    /// Exponentiated coefficient (hazard or odds ratio).
    pub ratio: R,
    /// Lower confidence bound of the ratio.
    pub ci_lower: R,
    /// Upper confidence bound of the ratio.
    pub ci_upper: R,
    /// Wald statistic, coefficient over its standard error.
    pub z: R,
    /// Two-sided p-value of the Wald statistic.
    pub p_value: R,
}

/// A rendered-ready inference table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTable<R> {
    /// Column header for the exponentiated coefficient, e.g. "hazard ratio".
    pub ratio_label: String,
    pub rows: Vec<ModelRow<R>>,
    pub n_subjects: usize,
    pub n_events: usize,
    pub conf_level: f64,
}

impl<R> ModelTable<R> {
    // Short column key for the ratio in machine-readable formats.
    fn ratio_key(&self) -> &'static str {
        match self.ratio_label.as_str() {
            "hazard ratio" => "hr",
            "odds ratio" => "or",
            _ => "ratio",
        }
    }
}

/// Builds Wald inference rows from coefficients and their covariance.
///
/// The ratio confidence interval is `exp(coef +/- z* se)` with `z*` the
/// two-sided normal critical value for `conf_level`, and the p-value is the
/// two-sided tail of the Wald statistic.
pub(crate) fn inference_rows<R: Real>(
    terms: &[String],
    coefficients: &[R],
    covariance: &[R],
    conf_level: f64,
) -> Vec<ModelRow<R>> {
    let p = terms.len();
    let z_crit = statfn::std_normal_quantile(R::of((1.0 + conf_level) / 2.0));
    let mut rows = Vec::with_capacity(p);
    for j in 0..p {
        let coef = coefficients[j];
        let se = covariance[j * p + j].sqrt();
        let z = coef / se;
        let two = R::of(2.0);
        rows.push(ModelRow {
            term: terms[j].clone(),
            coefficient: coef,
            ratio: coef.exp(),
            ci_lower: (coef - z_crit * se).exp(),
            ci_upper: (coef + z_crit * se).exp(),
            z,
            p_value: two * statfn::std_normal_cdf(-z.abs()),
        });
    }
    rows
}

fn fmt_p<R: Real>(p: R) -> String {
    let p = p.widen();
    if p < 1e-4 {
        "<0.0001".to_string()
    } else if p < 0.01 {
        format!("{p:.4}")
    } else {
        format!("{p:.2}")
    }
}

fn fmt_conf_pct(conf_level: f64) -> String {
    let pct = (conf_level * 100.0 * 1e6).round() / 1e6;
    if pct.fract() == 0.0 {
        format!("{}", pct as u32)
    } else {
        format!("{pct}")
    }
}

/// Renders an inference table in the requested format.
///
/// # Errors
///
/// Returns [`TableError::Empty`] when the table has no rows.
pub fn render_model_table<R: Real>(
    table: &ModelTable<R>,
    format: OutputFormat,
) -> Result<String, TableError> {
    if table.rows.is_empty() {
        return Err(TableError::Empty);
    }
    Ok(match format {
        OutputFormat::Markdown => model_markdown(table),
        OutputFormat::Csv => model_csv(table),
        OutputFormat::Json => model_json(table),
    })
}

fn model_markdown<R: Real>(table: &ModelTable<R>) -> String {
    let pct = fmt_conf_pct(table.conf_level);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "| term | coef | {} | lower {pct}% | upper {pct}% | z | p |",
        table.ratio_label
    );
    out.push_str("| --- | --- | --- | --- | --- | --- | --- |\n");
    for row in &table.rows {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {} |",
            row.term,
            row.coefficient,
            row.ratio,
            row.ci_lower,
            row.ci_upper,
            row.z,
            fmt_p(row.p_value)
        );
    }
    let _ = writeln!(
        out,
        "\n{} subjects, {} events.",
        table.n_subjects, table.n_events
    );
    out
}

fn model_csv<R: Real>(table: &ModelTable<R>) -> String {
    let mut out = format!("term,coef,{},ci_lower,ci_upper,z,p\n", table.ratio_key());
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.term, row.coefficient, row.ratio, row.ci_lower, row.ci_upper, row.z, row.p_value
        );
    }
    out
}

fn model_json<R: Real>(table: &ModelTable<R>) -> String {
    let key = table.ratio_key();
    let terms: Vec<serde_json::Value> = table
        .rows
        .iter()
        .map(|row| {
            json!({
                "term": row.term,
                "coef": row.coefficient.widen(),
                key: row.ratio.widen(),
                "ci_lower": row.ci_lower.widen(),
                "ci_upper": row.ci_upper.widen(),
                "z": row.z.widen(),
                "p": row.p_value.widen(),
            })
        })
        .collect();
    let value = json!({
        "ratio_label": table.ratio_label,
        "n_subjects": table.n_subjects,
        "n_events": table.n_events,
        "conf_level": table.conf_level,
        "terms": terms,
    });
    serde_json::to_string_pretty(&value).expect("json value serializes")
}

// ── Baseline tables ──────────────────────────────────────────────────────────

/// Renders a baseline summary in the requested format.
///
/// # Errors
///
/// Returns [`TableError::Empty`] when the summary has no strata.
pub fn render_baseline(table: &BaselineTable, format: OutputFormat) -> Result<String, TableError> {
    if table.strata.is_empty() {
        return Err(TableError::Empty);
    }
    Ok(match format {
        OutputFormat::Markdown => baseline_markdown(table),
        OutputFormat::Csv => baseline_csv(table),
        OutputFormat::Json => baseline_json(table),
    })
}

fn baseline_markdown(table: &BaselineTable) -> String {
    let mut out = String::from("| variable | level | n | % of cohort | deaths | % died |\n");
    out.push_str("| --- | --- | --- | --- | --- | --- |\n");
    let _ = writeln!(
        out,
        "| total | all | {} | 100.0 | {} | {:.1} |",
        table.total_n, table.total_deaths, table.total_death_pct
    );
    for s in &table.strata {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.1} | {} | {:.1} |",
            s.variable, s.level, s.population, s.population_pct, s.deaths, s.death_pct
        );
    }
    let _ = writeln!(
        out,
        "\nAge: mean {:.1} (SD {:.1})\n",
        table.age_mean, table.age_sd
    );
    out.push_str("| cause | deaths | % of deaths | % of cohort |\n");
    out.push_str("| --- | --- | --- | --- |\n");
    for c in &table.causes {
        let _ = writeln!(
            out,
            "| {} | {} | {:.1} | {:.1} |",
            c.cause, c.count, c.pct_of_deaths, c.pct_of_cohort
        );
    }
    out
}

fn baseline_csv(table: &BaselineTable) -> String {
    let mut out = String::from("variable,level,population,population_pct,deaths,death_pct\n");
    let _ = writeln!(
        out,
        "total,all,{},100,{},{}",
        table.total_n, table.total_deaths, table.total_death_pct
    );
    for s in &table.strata {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.variable, s.level, s.population, s.population_pct, s.deaths, s.death_pct
        );
    }
    out.push_str("\ncause,count,pct_of_deaths,pct_of_cohort\n");
    for c in &table.causes {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.cause, c.count, c.pct_of_deaths, c.pct_of_cohort
        );
    }
    out.push_str("\nage_mean,age_sd\n");
    let _ = writeln!(out, "{},{}", table.age_mean, table.age_sd);
    out
}

fn baseline_json(table: &BaselineTable) -> String {
    let strata: Vec<serde_json::Value> = table
        .strata
        .iter()
        .map(|s| {
            json!({
                "variable": s.variable,
                "level": s.level,
                "population": s.population,
                "population_pct": s.population_pct,
                "deaths": s.deaths,
                "death_pct": s.death_pct,
            })
        })
        .collect();
    let causes: Vec<serde_json::Value> = table
        .causes
        .iter()
        .map(|c| {
            json!({
                "cause": c.cause,
                "count": c.count,
                "pct_of_deaths": c.pct_of_deaths,
                "pct_of_cohort": c.pct_of_cohort,
            })
        })
        .collect();
    let value = json!({
        "n_subjects": table.total_n,
        "deaths": table.total_deaths,
        "death_pct": table.total_death_pct,
        "age": { "mean": table.age_mean, "sd": table.age_sd },
        "strata": strata,
        "causes": causes,
    });
    serde_json::to_string_pretty(&value).expect("json value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{baseline_table, parse_cohort};
    use approx::assert_relative_eq;

    fn sample_table() -> ModelTable<f64> {
        let terms = vec!["age_dec".to_string(), "male".to_string()];
        let coefficients = vec![0.2185, 0.0234];
        // Diagonal covariance with standard errors 0.07 and 0.31.
        let covariance = vec![0.07f64 * 0.07, 0.0, 0.0, 0.31 * 0.31];
        let rows = inference_rows(&terms, &coefficients, &covariance, 0.95);
        ModelTable {
            ratio_label: "hazard ratio".to_string(),
            rows,
            n_subjects: 132,
            n_events: 89,
            conf_level: 0.95,
        }
    }

    #[test]
    fn inference_rows_expose_wald_statistics() {
        let table = sample_table();
        let row = &table.rows[0];
        assert_eq!(row.term, "age_dec");
        assert_eq!(row.ratio, 0.2185f64.exp());
        // The interval is symmetric around the coefficient on the log scale.
        assert_relative_eq!(
            row.ci_lower.ln() + row.ci_upper.ln(),
            2.0 * row.coefficient,
            epsilon = 1e-12
        );
        assert_relative_eq!(row.z, 0.2185 / 0.07, epsilon = 1e-12);
        assert!(row.p_value > 0.0 && row.p_value < 1.0);
        // A coefficient this many standard errors out is highly significant;
        // the male term is not.
        assert!(table.rows[0].p_value < 0.01);
        assert!(table.rows[1].p_value > 0.9);
    }

    #[test]
    fn markdown_rounds_to_two_decimals_and_formats_p() {
        let mut table = sample_table();
        table.rows[0].p_value = 0.000023;
        table.rows[1].p_value = 0.0042;
        let md = render_model_table(&table, OutputFormat::Markdown).unwrap();
        assert!(md.starts_with(
            "| term | coef | hazard ratio | lower 95% | upper 95% | z | p |"
        ));
        assert!(md.contains("| age_dec | 0.22 | 1.24 |"));
        assert!(md.contains("| <0.0001 |"));
        assert!(md.contains("| 0.0042 |"));
        assert!(md.contains("132 subjects, 89 events."));
        // Moderate p-values print with two decimals.
        table.rows[1].p_value = 0.27;
        let md = render_model_table(&table, OutputFormat::Markdown).unwrap();
        assert!(md.contains("| 0.27 |"));
    }

    #[test]
    fn markdown_header_follows_confidence_level() {
        let mut table = sample_table();
        table.conf_level = 0.9;
        let md = render_model_table(&table, OutputFormat::Markdown).unwrap();
        assert!(md.contains("lower 90% | upper 90%"));
    }

    #[test]
    fn csv_keeps_full_precision() {
        let table = sample_table();
        let csv = render_model_table(&table, OutputFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "term,coef,hr,ci_lower,ci_upper,z,p"
        );
        let first = lines.next().unwrap();
        let cells: Vec<&str> = first.split(',').collect();
        assert_eq!(cells[0], "age_dec");
        // Shortest round-trip form parses back to the identical value.
        assert_eq!(cells[1].parse::<f64>().unwrap(), 0.2185);
        assert_eq!(cells[2].parse::<f64>().unwrap(), 0.2185f64.exp());
    }

    #[test]
    fn json_is_structured_and_lossless() {
        let table = sample_table();
        let text = render_model_table(&table, OutputFormat::Json).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["ratio_label"], "hazard ratio");
        assert_eq!(value["n_subjects"], 132);
        assert_eq!(value["terms"][0]["term"], "age_dec");
        assert_eq!(
            value["terms"][0]["hr"].as_f64().unwrap(),
            0.2185f64.exp()
        );
        // An odds-ratio table keys its ratio column accordingly.
        let mut odds = sample_table();
        odds.ratio_label = "odds ratio".to_string();
        let csv = render_model_table(&odds, OutputFormat::Csv).unwrap();
        assert!(csv.starts_with("term,coef,or,"));
    }

    #[test]
    fn empty_tables_are_rejected() {
        let table = ModelTable::<f64> {
            ratio_label: "hazard ratio".to_string(),
            rows: Vec::new(),
            n_subjects: 0,
            n_events: 0,
            conf_level: 0.95,
        };
        assert_eq!(
            render_model_table(&table, OutputFormat::Markdown).unwrap_err(),
            TableError::Empty
        );
    }

    #[test]
    fn format_tokens_parse_case_insensitively() {
        assert_eq!("Markdown".parse::<OutputFormat>(), Ok(OutputFormat::Markdown));
        assert_eq!("CSV".parse::<OutputFormat>(), Ok(OutputFormat::Csv));
        assert_eq!("json".parse::<OutputFormat>(), Ok(OutputFormat::Json));
        assert_eq!(
            "xml".parse::<OutputFormat>(),
            Err(TableError::UnknownFormat("xml".to_string()))
        );
    }

    fn small_baseline() -> BaselineTable {
        let csv = "id,name,age_years,sex,allegiance,occupation,region,entry_episode,exit_episode,event,cause\n\
                   a,A,30,male,Stark,HouseMember,North,1,10,1,burn\n\
                   b,B,40,female,Martell,Advisor,South,1,67,0,\n";
        let cohort = parse_cohort(csv, 67).unwrap();
        baseline_table(&cohort).unwrap()
    }

    #[test]
    fn baseline_markdown_lists_totals_strata_and_causes() {
        let md = render_baseline(&small_baseline(), OutputFormat::Markdown).unwrap();
        assert!(md.contains("| total | all | 2 | 100.0 | 1 | 50.0 |"));
        assert!(md.contains("| sex | male | 1 | 50.0 | 1 | 100.0 |"));
        assert!(md.contains("Age: mean 35.0 (SD 7.1)"));
        assert!(md.contains("| burn | 1 | 100.0 | 50.0 |"));
    }

    #[test]
    fn baseline_csv_has_three_blocks() {
        let csv = render_baseline(&small_baseline(), OutputFormat::Csv).unwrap();
        let blocks: Vec<&str> = csv.split("\n\n").collect();
        assert_eq!(blocks.len(), 3);
        assert!(blocks[0].starts_with("variable,level,population"));
        assert!(blocks[1].starts_with("cause,count,pct_of_deaths,pct_of_cohort"));
        assert!(blocks[2].starts_with("age_mean,age_sd"));
    }

    #[test]
    fn baseline_json_round_trips() {
        let text = render_baseline(&small_baseline(), OutputFormat::Json).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["n_subjects"], 2);
        assert_eq!(value["deaths"], 1);
        assert_eq!(value["age"]["mean"].as_f64().unwrap(), 35.0);
        assert!(value["strata"].as_array().unwrap().len() >= 17);
        assert_eq!(value["causes"][1]["cause"], "burn");
    }
}
