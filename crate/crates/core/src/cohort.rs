//! Cohort data model: subject records, CSV input and output, exclusion
//! rules, dummy-coded design matrices, and baseline summaries.
//!
//! A cohort observes each subject over a closed episode interval
//! `[entry_episode, exit_episode]` inside a fixed horizon. `event = true`
//! means death at the exit episode; otherwise the subject is censored there.
//! Follow-up duration is inclusive: `exit - entry + 1`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::num::Real;

/// Last observed episode unless a caller overrides it.
pub const DEFAULT_HORIZON: u32 = 67;

/// Errors raised while reading, validating, or transforming cohorts.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CohortError {
    /// The header is missing a required column.
    #[error("missing required column `{column}` in header")]
    MissingHeader { column: String },
    /// A row is too short for a required column.
    #[error("row {row}: missing value for column `{column}`")]
    MissingValue { row: u64, column: String },
    /// A numeric field failed to parse.
    #[error("row {row}: cannot parse `{value}` as a number for column `{column}`")]
    BadNumber {
        row: u64,
        column: String,
        value: String,
    },
    /// An enumerated field holds an unknown token.
    #[error("row {row}: unknown {variable} token `{value}`")]
    UnknownToken {
        row: u64,
        variable: String,
        value: String,
    },
    /// Two rows share an id.
    #[error("row {row}: duplicate subject id `{id}`")]
    DuplicateId { row: u64, id: String },
    /// Entry after exit.
    #[error("row {row}: entry episode {entry} is after exit episode {exit}")]
    EntryAfterExit { row: u64, entry: u32, exit: u32 },
    /// Entry episode below 1.
    #[error("row {row}: entry episode must be at least 1")]
    EntryBeforeStart { row: u64 },
    /// Exit episode beyond the horizon.
    #[error("row {row}: exit episode {exit} is beyond horizon {horizon}")]
    ExitPastHorizon { row: u64, exit: u32, horizon: u32 },
    /// Cause of death recorded for a surviving subject.
    #[error("row {row}: cause of death given for a subject without an event")]
    CauseWithoutEvent { row: u64 },
    /// Underlying CSV reader error (malformed quoting and similar).
    #[error("csv: {0}")]
    Csv(String),
    /// Operation needs at least one subject.
    #[error("cohort has no subjects")]
    Empty,
    /// Group-by variable name is not one of the stratifying variables.
    #[error("unknown grouping variable `{name}`")]
    UnknownVariable { name: String },
    /// A level token does not belong to the named variable.
    #[error("unknown {variable} level `{value}`")]
    UnknownLevel { variable: String, value: String },
    /// Design matrix rows have inconsistent lengths.
    #[error("design rows have inconsistent lengths")]
    RaggedRows,
}

// ── Categorical variables ────────────────────────────────────────────────────

/// Recorded sex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    /// Declared levels in table order.
    pub const ALL: [Sex; 2] = [Sex::Male, Sex::Female];

    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl FromStr for Sex {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "male" => Ok(Sex::Male),
            "female" => Ok(Sex::Female),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// House or faction the subject is aligned with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Allegiance {
    Stark,
    Targaryen,
    Lannister,
    Baratheon,
    Greyjoy,
    Martell,
    Tyrell,
    Other,
}

impl Allegiance {
    /// Declared levels in table order.
    pub const ALL: [Allegiance; 8] = [
        Allegiance::Stark,
        Allegiance::Targaryen,
        Allegiance::Lannister,
        Allegiance::Baratheon,
        Allegiance::Greyjoy,
        Allegiance::Martell,
        Allegiance::Tyrell,
        Allegiance::Other,
    ];

    /// Dummy-column order used by design matrices, reference level first.
    pub const DESIGN_ORDER: [Allegiance; 8] = [
        Allegiance::Stark,
        Allegiance::Baratheon,
        Allegiance::Greyjoy,
        Allegiance::Lannister,
        Allegiance::Martell,
        Allegiance::Targaryen,
        Allegiance::Tyrell,
        Allegiance::Other,
    ];

    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            Allegiance::Stark => "Stark",
            Allegiance::Targaryen => "Targaryen",
            Allegiance::Lannister => "Lannister",
            Allegiance::Baratheon => "Baratheon",
            Allegiance::Greyjoy => "Greyjoy",
            Allegiance::Martell => "Martell",
            Allegiance::Tyrell => "Tyrell",
            Allegiance::Other => "Other",
        }
    }

    /// Design-matrix column label; `Other` is disambiguated.
    pub fn column_label(self) -> &'static str {
        match self {
            Allegiance::Other => "OtherAllegiance",
            other => other.as_str(),
        }
    }
}

impl FromStr for Allegiance {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "stark" => Ok(Allegiance::Stark),
            "targaryen" => Ok(Allegiance::Targaryen),
            "lannister" => Ok(Allegiance::Lannister),
            "baratheon" => Ok(Allegiance::Baratheon),
            "greyjoy" => Ok(Allegiance::Greyjoy),
            "martell" => Ok(Allegiance::Martell),
            "tyrell" => Ok(Allegiance::Tyrell),
            "other" => Ok(Allegiance::Other),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Allegiance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Primary social role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Occupation {
    HouseMember,
    KnightSoldier,
    Advisor,
    Other,
}

impl Occupation {
    /// Declared levels in table order.
    pub const ALL: [Occupation; 4] = [
        Occupation::HouseMember,
        Occupation::KnightSoldier,
        Occupation::Advisor,
        Occupation::Other,
    ];

    /// Dummy-column order used by design matrices, reference level first.
    pub const DESIGN_ORDER: [Occupation; 4] = [
        Occupation::HouseMember,
        Occupation::Advisor,
        Occupation::KnightSoldier,
        Occupation::Other,
    ];

    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            Occupation::HouseMember => "HouseMember",
            Occupation::KnightSoldier => "KnightSoldier",
            Occupation::Advisor => "Advisor",
            Occupation::Other => "Other",
        }
    }

    /// Design-matrix column label; `Other` is disambiguated.
    pub fn column_label(self) -> &'static str {
        match self {
            Occupation::Other => "OtherOccupation",
            other => other.as_str(),
        }
    }
}

impl FromStr for Occupation {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "housemember" => Ok(Occupation::HouseMember),
            "knightsoldier" => Ok(Occupation::KnightSoldier),
            "advisor" => Ok(Occupation::Advisor),
            "other" => Ok(Occupation::Other),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Region where the subject is primarily based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    North,
    South,
    Essos,
}

impl Region {
    /// Declared levels in table order; also the design order.
    pub const ALL: [Region; 3] = [Region::North, Region::South, Region::Essos];

    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            Region::North => "North",
            Region::South => "South",
            Region::Essos => "Essos",
        }
    }
}

impl FromStr for Region {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "north" => Ok(Region::North),
            "south" => Ok(Region::South),
            "essos" => Ok(Region::Essos),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Recorded cause of death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CauseOfDeath {
    InvasiveInjury,
    Burn,
    Poison,
    Natural,
    Other,
}

impl CauseOfDeath {
    /// Declared causes in reporting order.
    pub const ALL: [CauseOfDeath; 5] = [
        CauseOfDeath::InvasiveInjury,
        CauseOfDeath::Burn,
        CauseOfDeath::Poison,
        CauseOfDeath::Natural,
        CauseOfDeath::Other,
    ];

    /// Canonical token.
    pub fn as_str(self) -> &'static str {
        match self {
            CauseOfDeath::InvasiveInjury => "invasive_injury",
            CauseOfDeath::Burn => "burn",
            CauseOfDeath::Poison => "poison",
            CauseOfDeath::Natural => "natural",
            CauseOfDeath::Other => "other",
        }
    }
}

impl FromStr for CauseOfDeath {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "invasive_injury" => Ok(CauseOfDeath::InvasiveInjury),
            "burn" => Ok(CauseOfDeath::Burn),
            "poison" => Ok(CauseOfDeath::Poison),
            "natural" => Ok(CauseOfDeath::Natural),
            "other" => Ok(CauseOfDeath::Other),
            _ => Err(()),
        }
    }
}

impl fmt::Display for CauseOfDeath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Variables a cohort can be stratified by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupVariable {
    Sex,
    Allegiance,
    Occupation,
    Region,
}

impl GroupVariable {
    /// Canonical name.
    pub fn as_str(self) -> &'static str {
        match self {
            GroupVariable::Sex => "sex",
            GroupVariable::Allegiance => "allegiance",
            GroupVariable::Occupation => "occupation",
            GroupVariable::Region => "region",
        }
    }

    /// Declared level tokens in table order.
    pub fn levels(self) -> Vec<&'static str> {
        match self {
            GroupVariable::Sex => Sex::ALL.iter().map(|v| v.as_str()).collect(),
            GroupVariable::Allegiance => Allegiance::ALL.iter().map(|v| v.as_str()).collect(),
            GroupVariable::Occupation => Occupation::ALL.iter().map(|v| v.as_str()).collect(),
            GroupVariable::Region => Region::ALL.iter().map(|v| v.as_str()).collect(),
        }
    }
}

impl FromStr for GroupVariable {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "sex" => Ok(GroupVariable::Sex),
            "allegiance" => Ok(GroupVariable::Allegiance),
            "occupation" => Ok(GroupVariable::Occupation),
            "region" => Ok(GroupVariable::Region),
            _ => Err(()),
        }
    }
}

impl fmt::Display for GroupVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ── Subjects and cohorts ─────────────────────────────────────────────────────

/// One observed subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub name: String,
    pub age_years: f64,
    pub sex: Sex,
    pub allegiance: Allegiance,
    pub occupation: Occupation,
    pub region: Region,
    /// First episode the subject is observed in, 1-based.
    pub entry_episode: u32,
    /// Last episode the subject is observed in.
    pub exit_episode: u32,
    /// True if the subject died at `exit_episode`.
    pub event: bool,
    /// Present only when `event` is true, and may still be unrecorded.
    pub cause: Option<CauseOfDeath>,
    /// Total screen exposure; absent when unmeasured.
    pub screen_minutes: Option<f64>,
    pub killed_by_white_walker: bool,
    pub supernatural_non_aging: bool,
}

impl Subject {
    /// Inclusive follow-up duration in episodes.
    pub fn duration(&self) -> u32 {
        self.exit_episode - self.entry_episode + 1
    }

    fn validate(&self, row: u64, horizon: u32) -> Result<(), CohortError> {
        if self.entry_episode < 1 {
            return Err(CohortError::EntryBeforeStart { row });
        }
        if self.entry_episode > self.exit_episode {
            return Err(CohortError::EntryAfterExit {
                row,
                entry: self.entry_episode,
                exit: self.exit_episode,
            });
        }
        if self.exit_episode > horizon {
            return Err(CohortError::ExitPastHorizon {
                row,
                exit: self.exit_episode,
                horizon,
            });
        }
        if self.cause.is_some() && !self.event {
            return Err(CohortError::CauseWithoutEvent { row });
        }
        Ok(())
    }
}

/// A validated collection of subjects observed inside one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    subjects: Vec<Subject>,
    horizon: u32,
}

impl Cohort {
    /// Validates subject invariants and id uniqueness.
    ///
    /// Errors report the 1-based position of the offending subject.
    pub fn new(subjects: Vec<Subject>, horizon: u32) -> Result<Self, CohortError> {
        let mut seen = BTreeSet::new();
        for (idx, s) in subjects.iter().enumerate() {
            let row = idx as u64 + 1;
            s.validate(row, horizon)?;
            if !seen.insert(s.id.clone()) {
                return Err(CohortError::DuplicateId {
                    row,
                    id: s.id.clone(),
                });
            }
        }
        Ok(Self { subjects, horizon })
    }

    /// Subjects in input order.
    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    /// Observation horizon (last episode).
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    /// Number of subjects.
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    /// True when the cohort has no subjects.
    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Entry episodes, aligned with `subjects()`.
    pub fn entries(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.entry_episode).collect()
    }

    /// Exit episodes, aligned with `subjects()`.
    pub fn exits(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.exit_episode).collect()
    }

    /// Event indicators, aligned with `subjects()`.
    pub fn events(&self) -> Vec<bool> {
        self.subjects.iter().map(|s| s.event).collect()
    }

    /// Non-empty strata of `variable` in declared level order.
    ///
    /// Each entry pairs the level token with the indices of its subjects.
    pub fn strata(&self, variable: GroupVariable) -> Vec<(String, Vec<usize>)> {
        let level_of = |s: &Subject| -> &'static str {
            match variable {
                GroupVariable::Sex => s.sex.as_str(),
                GroupVariable::Allegiance => s.allegiance.as_str(),
                GroupVariable::Occupation => s.occupation.as_str(),
                GroupVariable::Region => s.region.as_str(),
            }
        };
        variable
            .levels()
            .into_iter()
            .filter_map(|level| {
                let idx: Vec<usize> = self
                    .subjects
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| level_of(s) == level)
                    .map(|(i, _)| i)
                    .collect();
                if idx.is_empty() {
                    None
                } else {
                    Some((level.to_string(), idx))
                }
            })
            .collect()
    }

    /// Checks that a level token belongs to `variable`, returning its
    /// canonical spelling.
    pub fn canonical_level(
        variable: GroupVariable,
        token: &str,
    ) -> Result<&'static str, CohortError> {
        let canonical = match variable {
            GroupVariable::Sex => Sex::from_str(token).map(Sex::as_str).ok(),
            GroupVariable::Allegiance => Allegiance::from_str(token).map(Allegiance::as_str).ok(),
            GroupVariable::Occupation => Occupation::from_str(token).map(Occupation::as_str).ok(),
            GroupVariable::Region => Region::from_str(token).map(Region::as_str).ok(),
        };
        canonical.ok_or_else(|| CohortError::UnknownLevel {
            variable: variable.as_str().to_string(),
            value: token.to_string(),
        })
    }
}

// ── CSV input and output ─────────────────────────────────────────────────────

const REQUIRED_COLUMNS: [&str; 11] = [
    "id",
    "name",
    "age_years",
    "sex",
    "allegiance",
    "occupation",
    "region",
    "entry_episode",
    "exit_episode",
    "event",
    "cause",
];

const OPTIONAL_COLUMNS: [&str; 3] = [
    "screen_minutes",
    "killed_by_white_walker",
    "supernatural_non_aging",
];

/// Parses a cohort from CSV text.
///
/// The schema is `id,name,age_years,sex,allegiance,occupation,region,
/// entry_episode,exit_episode,event,cause` with optional trailing columns
/// `screen_minutes,killed_by_white_walker,supernatural_non_aging`.
/// Enum tokens are case-insensitive. Errors carry the offending file line.
///
/// # Errors
///
/// Missing required columns, unparseable numbers, unknown enum tokens,
/// duplicate ids, and interval violations (`entry > exit`, exit beyond the
/// horizon) are all rejected.
pub fn parse_cohort(text: &str, horizon: u32) -> Result<Cohort, CohortError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CohortError::Csv(e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut required_idx = Vec::with_capacity(REQUIRED_COLUMNS.len());
    for column in REQUIRED_COLUMNS {
        match find(column) {
            Some(i) => required_idx.push(i),
            None => {
                return Err(CohortError::MissingHeader {
                    column: column.to_string(),
                })
            }
        }
    }
    let optional_idx: Vec<Option<usize>> = OPTIONAL_COLUMNS.iter().map(|c| find(c)).collect();

    let mut subjects = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| CohortError::Csv(e.to_string()))?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |col: usize, name: &str| -> Result<&str, CohortError> {
            record.get(col).ok_or_else(|| CohortError::MissingValue {
                row,
                column: name.to_string(),
            })
        };
        let required = |slot: usize| -> Result<&str, CohortError> {
            field(required_idx[slot], REQUIRED_COLUMNS[slot])
        };

        let id = required(0)?.to_string();
        let name = required(1)?.to_string();
        let age_years = parse_number(required(2)?, row, "age_years")?;
        let sex = parse_token::<Sex>(required(3)?, row, "sex")?;
        let allegiance = parse_token::<Allegiance>(required(4)?, row, "allegiance")?;
        let occupation = parse_token::<Occupation>(required(5)?, row, "occupation")?;
        let region = parse_token::<Region>(required(6)?, row, "region")?;
        let entry_episode = parse_episode(required(7)?, row, "entry_episode")?;
        let exit_episode = parse_episode(required(8)?, row, "exit_episode")?;
        let event = match required(9)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(CohortError::BadNumber {
                    row,
                    column: "event".to_string(),
                    value: other.to_string(),
                })
            }
        };
        let cause_raw = required(10)?;
        let cause = if cause_raw.is_empty() {
            None
        } else {
            Some(parse_token::<CauseOfDeath>(cause_raw, row, "cause")?)
        };

        let optional = |slot: usize| -> Result<Option<&str>, CohortError> {
            match optional_idx[slot] {
                Some(col) => {
                    let v = field(col, OPTIONAL_COLUMNS[slot])?;
                    Ok(if v.is_empty() { None } else { Some(v) })
                }
                None => Ok(None),
            }
        };
        let screen_minutes = match optional(0)? {
            Some(v) => Some(parse_number(v, row, "screen_minutes")?),
            None => None,
        };
        let killed_by_white_walker = match optional(1)? {
            Some(v) => parse_flag(v, row, "killed_by_white_walker")?,
            None => false,
        };
        let supernatural_non_aging = match optional(2)? {
            Some(v) => parse_flag(v, row, "supernatural_non_aging")?,
            None => false,
        };

        if !seen.insert(id.clone()) {
            return Err(CohortError::DuplicateId { row, id });
        }
        let subject = Subject {
            id,
            name,
            age_years,
            sex,
            allegiance,
            occupation,
            region,
            entry_episode,
            exit_episode,
            event,
            cause,
            screen_minutes,
            killed_by_white_walker,
            supernatural_non_aging,
        };
        subject.validate(row, horizon)?;
        subjects.push(subject);
    }
    Ok(Cohort { subjects, horizon })
}

/// Serializes a cohort back to the CSV schema, optional columns included.
///
/// Numbers are written in shortest round-trip form, so `parse_cohort` of the
/// output reproduces the cohort exactly.
pub fn write_cohort(cohort: &Cohort) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let header: Vec<&str> = REQUIRED_COLUMNS
        .iter()
        .chain(OPTIONAL_COLUMNS.iter())
        .copied()
        .collect();
    w.write_record(&header).expect("write to memory");
    for s in &cohort.subjects {
        let record = [
            s.id.clone(),
            s.name.clone(),
            s.age_years.to_string(),
            s.sex.to_string(),
            s.allegiance.to_string(),
            s.occupation.to_string(),
            s.region.to_string(),
            s.entry_episode.to_string(),
            s.exit_episode.to_string(),
            if s.event { "1" } else { "0" }.to_string(),
            s.cause.map(|c| c.to_string()).unwrap_or_default(),
            s.screen_minutes.map(|m| m.to_string()).unwrap_or_default(),
            if s.killed_by_white_walker { "1" } else { "0" }.to_string(),
            if s.supernatural_non_aging { "1" } else { "0" }.to_string(),
        ];
        w.write_record(&record).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

fn parse_number(value: &str, row: u64, column: &str) -> Result<f64, CohortError> {
    value.parse::<f64>().map_err(|_| CohortError::BadNumber {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_episode(value: &str, row: u64, column: &str) -> Result<u32, CohortError> {
    value.parse::<u32>().map_err(|_| CohortError::BadNumber {
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn parse_flag(value: &str, row: u64, column: &str) -> Result<bool, CohortError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(CohortError::BadNumber {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

fn parse_token<T: FromStr>(value: &str, row: u64, variable: &str) -> Result<T, CohortError> {
    T::from_str(value).map_err(|_| CohortError::UnknownToken {
        row,
        variable: variable.to_string(),
        value: value.to_string(),
    })
}

// ── Exclusions ───────────────────────────────────────────────────────────────

/// Why a subject was removed before analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionRule {
    /// Killed by a White Walker.
    WhiteWalkerKill,
    /// Does not age by supernatural means.
    SupernaturalNonAging,
    /// Measured screen exposure below the threshold.
    ShortScreenTime,
}

impl fmt::Display for ExclusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionRule::WhiteWalkerKill => "white_walker",
            ExclusionRule::SupernaturalNonAging => "supernatural_non_aging",
            ExclusionRule::ShortScreenTime => "screen_time",
        })
    }
}

/// Removals performed by [`apply_exclusions`], in input order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExclusionReport {
    pub removed: Vec<(String, ExclusionRule)>,
}

/// Applies the analysis exclusion rules and reports every removal.
///
/// Rules, checked in this order per subject: death by White Walker,
/// supernatural non-aging, and measured screen time strictly below
/// `min_screen_minutes`. Subjects without a screen-time measurement are
/// retained. The operation is idempotent.
pub fn apply_exclusions(cohort: &Cohort, min_screen_minutes: f64) -> (Cohort, ExclusionReport) {
    let mut kept = Vec::with_capacity(cohort.subjects.len());
    let mut report = ExclusionReport::default();
    for s in &cohort.subjects {
        let rule = if s.killed_by_white_walker {
            Some(ExclusionRule::WhiteWalkerKill)
        } else if s.supernatural_non_aging {
            Some(ExclusionRule::SupernaturalNonAging)
        } else {
            match s.screen_minutes {
                Some(m) if m < min_screen_minutes => Some(ExclusionRule::ShortScreenTime),
                _ => None,
            }
        };
        match rule {
            Some(rule) => report.removed.push((s.id.clone(), rule)),
            None => kept.push(s.clone()),
        }
    }
    (
        Cohort {
            subjects: kept,
            horizon: cohort.horizon,
        },
        report,
    )
}

// ── Design matrices ──────────────────────────────────────────────────────────

/// How covariates are encoded into model columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    /// Age divisor; the age column is `age_years / age_scale`.
    pub age_scale: f64,
    /// Sex level absorbed into the baseline.
    pub reference_sex: Sex,
    /// Allegiance level absorbed into the baseline.
    pub reference_allegiance: Allegiance,
    /// Occupation level absorbed into the baseline.
    pub reference_occupation: Occupation,
    /// Region level absorbed into the baseline.
    pub reference_region: Region,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            age_scale: 10.0,
            reference_sex: Sex::Female,
            reference_allegiance: Allegiance::Stark,
            reference_occupation: Occupation::HouseMember,
            reference_region: Region::North,
        }
    }
}

/// Rows of model covariates with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<R> {
    column_names: Vec<String>,
    row_ids: Vec<String>,
    n_rows: usize,
    n_cols: usize,
    data: Vec<R>,
}

impl<R: Real> DesignMatrix<R> {
    /// Builds a matrix from explicit rows.
    pub fn from_rows(
        column_names: Vec<String>,
        row_ids: Vec<String>,
        rows: &[Vec<R>],
    ) -> Result<Self, CohortError> {
        let n_cols = column_names.len();
        if row_ids.len() != rows.len() || rows.iter().any(|r| r.len() != n_cols) {
            return Err(CohortError::RaggedRows);
        }
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(Self {
            column_names,
            row_ids,
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    /// Ordered column labels.
    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Subject ids aligned with the rows.
    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    /// Number of rows.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of columns.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// One row as a slice.
    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Entry at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> R {
        self.data[row * self.n_cols + col]
    }
}

/// Encodes a cohort into the fixed 14-column model matrix.
///
/// Column order: scaled age, the non-reference sex dummy, allegiance dummies,
/// occupation dummies, region dummies. Each categorical variable contributes
/// one column per non-reference level, so the count never depends on which
/// levels are chosen as references.
///
/// # Example
///
/// ```
/// use episurv::cohort::{parse_cohort, encode_design, CovariateSpec};
///
/// let csv = "id,name,age_years,sex,allegiance,occupation,region,entry_episode,exit_episode,event,cause\n\
///            a1,Alys,35,female,Stark,HouseMember,North,1,67,0,\n";
/// let cohort = parse_cohort(csv, 67).unwrap();
/// let design = encode_design::<f64>(&cohort, &CovariateSpec::default()).unwrap();
/// assert_eq!(design.n_cols(), 14);
/// // A reference-level subject carries only the scaled age.
/// assert_eq!(design.row(0)[0], 3.5);
/// assert!(design.row(0)[1..].iter().all(|&v| v == 0.0));
/// ```
pub fn encode_design<R: Real>(
    cohort: &Cohort,
    spec: &CovariateSpec,
) -> Result<DesignMatrix<R>, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::Empty);
    }
    let mut column_names = vec!["age_dec".to_string()];
    let sex_dummy: Vec<Sex> = Sex::ALL
        .iter()
        .copied()
        .filter(|&s| s != spec.reference_sex)
        .collect();
    let allegiance_dummies: Vec<Allegiance> = Allegiance::DESIGN_ORDER
        .iter()
        .copied()
        .filter(|&a| a != spec.reference_allegiance)
        .collect();
    let occupation_dummies: Vec<Occupation> = Occupation::DESIGN_ORDER
        .iter()
        .copied()
        .filter(|&o| o != spec.reference_occupation)
        .collect();
    let region_dummies: Vec<Region> = Region::ALL
        .iter()
        .copied()
        .filter(|&r| r != spec.reference_region)
        .collect();
    column_names.extend(sex_dummy.iter().map(|s| s.as_str().to_string()));
    column_names.extend(allegiance_dummies.iter().map(|a| a.column_label().to_string()));
    column_names.extend(occupation_dummies.iter().map(|o| o.column_label().to_string()));
    column_names.extend(region_dummies.iter().map(|r| r.as_str().to_string()));

    let n_cols = column_names.len();
    let mut data = Vec::with_capacity(cohort.len() * n_cols);
    let mut row_ids = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        row_ids.push(s.id.clone());
        data.push(R::of(s.age_years / spec.age_scale));
        for &level in &sex_dummy {
            data.push(if s.sex == level { R::one() } else { R::zero() });
        }
        for &level in &allegiance_dummies {
            data.push(if s.allegiance == level { R::one() } else { R::zero() });
        }
        for &level in &occupation_dummies {
            data.push(if s.occupation == level { R::one() } else { R::zero() });
        }
        for &level in &region_dummies {
            data.push(if s.region == level { R::one() } else { R::zero() });
        }
    }
    Ok(DesignMatrix {
        column_names,
        row_ids,
        n_rows: cohort.len(),
        n_cols,
        data,
    })
}

// ── Baseline summaries ───────────────────────────────────────────────────────

/// One stratum row of the baseline table.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStratum {
    pub variable: String,
    pub level: String,
    pub population: usize,
    /// Percent of the cohort, rounded to one decimal.
    pub population_pct: f64,
    pub deaths: usize,
    /// Percent of the stratum that died, rounded to one decimal.
    pub death_pct: f64,
}

/// One cause-of-death row.
///
/// Counts are reported against both denominators because they answer
/// different questions: share of deaths and share of the whole cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseRow {
    pub cause: String,
    pub count: usize,
    /// Percent of all deaths, rounded to one decimal.
    pub pct_of_deaths: f64,
    /// Percent of the cohort, rounded to one decimal.
    pub pct_of_cohort: f64,
}

/// Population and death counts per stratum, plus cause composition.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    pub strata: Vec<BaselineStratum>,
    pub causes: Vec<CauseRow>,
    pub total_n: usize,
    pub total_deaths: usize,
    /// Percent of the cohort that died, rounded to one decimal.
    pub total_death_pct: f64,
    pub age_mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub age_sd: f64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn pct(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        round1(100.0 * numerator as f64 / denominator as f64)
    }
}

/// Builds the baseline characteristics table.
///
/// Every declared level of sex, allegiance, occupation, and region appears,
/// in declared order, with population and death counts and one-decimal
/// percentages. Population percentages are taken against the cohort size,
/// death percentages against the stratum population.
pub fn baseline_table(cohort: &Cohort) -> Result<BaselineTable, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::Empty);
    }
    let n = cohort.len();
    let total_deaths = cohort.subjects.iter().filter(|s| s.event).count();
    let mut strata = Vec::new();
    for variable in [
        GroupVariable::Sex,
        GroupVariable::Allegiance,
        GroupVariable::Occupation,
        GroupVariable::Region,
    ] {
        for level in variable.levels() {
            let members: Vec<&Subject> = cohort
                .subjects
                .iter()
                .filter(|s| match variable {
                    GroupVariable::Sex => s.sex.as_str() == level,
                    GroupVariable::Allegiance => s.allegiance.as_str() == level,
                    GroupVariable::Occupation => s.occupation.as_str() == level,
                    GroupVariable::Region => s.region.as_str() == level,
                })
                .collect();
            let deaths = members.iter().filter(|s| s.event).count();
            strata.push(BaselineStratum {
                variable: variable.as_str().to_string(),
                level: level.to_string(),
                population: members.len(),
                population_pct: pct(members.len(), n),
                deaths,
                death_pct: pct(deaths, members.len()),
            });
        }
    }

    let mut causes = Vec::new();
    for cause in CauseOfDeath::ALL {
        let count = cohort
            .subjects
            .iter()
            .filter(|s| s.cause == Some(cause))
            .count();
        causes.push(CauseRow {
            cause: cause.as_str().to_string(),
            count,
            pct_of_deaths: pct(count, total_deaths),
            pct_of_cohort: pct(count, n),
        });
    }
    let unrecorded = cohort
        .subjects
        .iter()
        .filter(|s| s.event && s.cause.is_none())
        .count();
    if unrecorded > 0 {
        causes.push(CauseRow {
            cause: "unrecorded".to_string(),
            count: unrecorded,
            pct_of_deaths: pct(unrecorded, total_deaths),
            pct_of_cohort: pct(unrecorded, n),
        });
    }

    let age_mean = cohort.subjects.iter().map(|s| s.age_years).sum::<f64>() / n as f64;
    let age_sd = if n > 1 {
        let ss = cohort
            .subjects
            .iter()
            .map(|s| (s.age_years - age_mean).powi(2))
            .sum::<f64>();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };

    Ok(BaselineTable {
        strata,
        causes,
        total_n: n,
        total_deaths,
        total_death_pct: pct(total_deaths, n),
        age_mean,
        age_sd,
    })
}

/// Follow-up duration summary in episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowUpSummary {
    /// Median duration; midpoint of the two central values for even counts.
    pub median: f64,
    pub min: u32,
    pub max: u32,
}

/// Summarizes inclusive follow-up durations.
pub fn follow_up_summary(cohort: &Cohort) -> Result<FollowUpSummary, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::Empty);
    }
    let mut durations: Vec<u32> = cohort.subjects.iter().map(Subject::duration).collect();
    durations.sort_unstable();
    let n = durations.len();
    let median = if n % 2 == 1 {
        durations[n / 2] as f64
    } else {
        (durations[n / 2 - 1] as f64 + durations[n / 2] as f64) / 2.0
    };
    Ok(FollowUpSummary {
        median,
        min: durations[0],
        max: durations[n - 1],
    })
}
