//! Board geometry, problems, grade scales and the per-hold feature table.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const COLS: u8 = 11;
pub const ROWS: u8 = 18;
pub const TOP_ROW: u8 = ROWS - 1;
pub const BOARD_CELLS: usize = COLS as usize * ROWS as usize;

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("malformed coordinate {0:?}")]
    BadPosition(String),
    #[error("unknown hold role {0:?}")]
    BadRole(String),
    #[error("unknown Font grade {0:?}")]
    UnknownFontGrade(String),
    #[error("grade {0:?} out of range V4-V14")]
    GradeOutOfRange(String),
    #[error("grade_font {font} maps to V{mapped} but grade_hueco is {hueco}")]
    GradeMismatch { font: String, mapped: u8, hueco: Grade },
    #[error("invalid problem: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("hold feature table is missing {}", .0.join(", "))]
    MissingFeatures(Vec<String>),
    #[error("{field} of {position} is {value}, outside {range}")]
    FeatureOutOfRange {
        position: GridCoord,
        field: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Zero-based board cell. Column 0 is `A`, row 0 is the bottom row `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoord {
    col: u8,
    row: u8,
}

impl GridCoord {
    pub fn new(col: u8, row: u8) -> Option<Self> {
        (col < COLS && row < ROWS).then_some(Self { col, row })
    }

    pub fn col(self) -> u8 {
        self.col
    }

    pub fn row(self) -> u8 {
        self.row
    }

    pub fn index(self) -> usize {
        self.row as usize * COLS as usize + self.col as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        (index < BOARD_CELLS).then(|| Self {
            col: (index % COLS as usize) as u8,
            row: (index / COLS as usize) as u8,
        })
    }

    /// Every board cell in index order.
    pub fn all() -> impl Iterator<Item = GridCoord> {
        (0..BOARD_CELLS).filter_map(GridCoord::from_index)
    }

    /// `(Δcol, Δrow)` from `self` to `other`.
    pub fn offset_to(self, other: GridCoord) -> (f64, f64) {
        (
            other.col as f64 - self.col as f64,
            other.row as f64 - self.row as f64,
        )
    }

    /// Row shifted by `delta`, if it stays on the board.
    pub fn shifted(self, dcol: i32, drow: i32) -> Option<Self> {
        let col = u8::try_from(self.col as i32 + dcol).ok()?;
        let row = u8::try_from(self.row as i32 + drow).ok()?;
        Self::new(col, row)
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'A' + self.col) as char, self.row + 1)
    }
}

impl FromStr for GridCoord {
    type Err = BoardError;

    /// MoonBoard notation, `A1` through `K18`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BoardError::BadPosition(s.to_string());
        let mut chars = s.chars();
        let letter = chars.next().ok_or_else(bad)?.to_ascii_uppercase();
        if !letter.is_ascii_uppercase() {
            return Err(bad());
        }
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0')
        {
            return Err(bad());
        }
        let row: u8 = digits.parse().map_err(|_| bad())?;
        GridCoord::new(letter as u8 - b'A', row.wrapping_sub(1)).ok_or_else(bad)
    }
}

impl Serialize for GridCoord {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridCoord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldRole {
    Start,
    Intermediate,
    Finish,
}

impl FromStr for HoldRole {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "start" => Ok(HoldRole::Start),
            "intermediate" => Ok(HoldRole::Intermediate),
            "finish" => Ok(HoldRole::Finish),
            _ => Err(BoardError::BadRole(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hold {
    pub position: GridCoord,
    pub role: HoldRole,
}

impl Hold {
    pub fn new(position: GridCoord, role: HoldRole) -> Self {
        Self { position, role }
    }
}

/// Hueco V-grade on the board's V4–V14 scale.
///
/// V14 is representable so that raw datasets can be ingested and then
/// filtered; the classifier only models V4–V13 (see [`Grade::class_index`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grade(u8);

impl Grade {
    pub const MIN: u8 = 4;
    pub const MAX: u8 = 14;
    /// Number of grades the classifier predicts (V4–V13).
    pub const CLASSES: usize = 10;

    pub fn new(v: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&v).then_some(Self(v))
    }

    pub fn v(self) -> u8 {
        self.0
    }

    /// Class index in `0..10` for V4–V13, `None` for V14.
    pub fn class_index(self) -> Option<usize> {
        let idx = (self.0 - Self::MIN) as usize;
        (idx < Self::CLASSES).then_some(idx)
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        (index < Self::CLASSES).then(|| Self(Self::MIN + index as u8))
    }

    pub fn class_labels() -> Vec<String> {
        (0..Self::CLASSES)
            .map(|i| Self::from_class_index(i).expect("in range").to_string())
            .collect()
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

impl FromStr for Grade {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches(['V', 'v']);
        digits
            .parse::<u8>()
            .ok()
            .and_then(Grade::new)
            .ok_or_else(|| BoardError::GradeOutOfRange(s.to_string()))
    }
}

impl Serialize for Grade {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Grade {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u8),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Grade::new(v)
                .ok_or_else(|| serde::de::Error::custom(BoardError::GradeOutOfRange(v.to_string()))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Font labels in ascending order with their Hueco equivalents.
pub const FONT_TO_HUECO: [(&str, u8); 14] = [
    ("6B", 4),
    ("6B+", 4),
    ("6C", 5),
    ("6C+", 5),
    ("7A", 6),
    ("7A+", 7),
    ("7B", 8),
    ("7B+", 8),
    ("7C", 9),
    ("7C+", 10),
    ("8A", 11),
    ("8A+", 12),
    ("8B", 13),
    ("8B+", 14),
];

/// Converts a Font-scale label to the Hueco scale. `8B+` yields V14, which
/// dataset filtering removes.
pub fn font_to_hueco(font: &str) -> Result<Grade, BoardError> {
    let key = font.trim().to_ascii_uppercase();
    FONT_TO_HUECO
        .iter()
        .find(|(label, _)| *label == key)
        .and_then(|(_, v)| Grade::new(*v))
        .ok_or_else(|| BoardError::UnknownFontGrade(font.to_string()))
}

/// A route on the board plus whatever metadata came with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: Option<String>,
    pub name: Option<String>,
    pub holds: Vec<Hold>,
    pub grade: Option<Grade>,
    pub repeats: Option<u32>,
    pub is_benchmark: Option<bool>,
}

impl Problem {
    pub fn new(holds: Vec<Hold>) -> Self {
        Self {
            id: None,
            name: None,
            holds,
            grade: None,
            repeats: None,
            is_benchmark: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_grade(mut self, grade: Grade) -> Self {
        self.grade = Some(grade);
        self
    }

    pub fn positions(&self) -> impl Iterator<Item = GridCoord> + '_ {
        self.holds.iter().map(|h| h.position)
    }

    pub fn holds_with_role(&self, role: HoldRole) -> impl Iterator<Item = GridCoord> + '_ {
        self.holds
            .iter()
            .filter(move |h| h.role == role)
            .map(|h| h.position)
    }

    pub fn role_of(&self, position: GridCoord) -> Option<HoldRole> {
        self.holds
            .iter()
            .find(|h| h.position == position)
            .map(|h| h.role)
    }

    pub fn id_or_empty(&self) -> &str {
        self.id.as_deref().unwrap_or("")
    }
}

/// Thresholds behind [`validate_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationRules {
    /// Highest zero-based row a start hold may sit on.
    pub max_start_row: u8,
    pub min_holds: usize,
    pub max_holds: usize,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            max_start_row: 5,
            min_holds: 3,
            max_holds: 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    MissingStart,
    TooManyStarts { count: usize },
    MissingFinish,
    FinishNotOnTopRow { position: GridCoord },
    StartAboveRowCap { position: GridCoord, max_row: u8 },
    DuplicateHold { position: GridCoord },
    TooFewHolds { count: usize, min: usize },
    TooManyHolds { count: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingStart => write!(f, "missing start"),
            Violation::TooManyStarts { count } => write!(f, "too many start holds ({count} > 2)"),
            Violation::MissingFinish => write!(f, "missing finish"),
            Violation::FinishNotOnTopRow { position } => {
                write!(f, "finish not on top row: {position}")
            }
            Violation::StartAboveRowCap { position, max_row } => {
                write!(f, "start above row {}: {position}", max_row + 1)
            }
            Violation::DuplicateHold { position } => write!(f, "duplicate hold: {position}"),
            Violation::TooFewHolds { count, min } => {
                write!(f, "hold count {count} below min {min}")
            }
            Violation::TooManyHolds { max, .. } => write!(f, "hold count exceeds max {max}"),
        }
    }
}

/// Lists every broken problem invariant; empty means the problem is valid.
pub fn validate_problem(p: &Problem, rules: &ValidationRules) -> Vec<Violation> {
    let mut out = Vec::new();
    let starts: Vec<GridCoord> = p.holds_with_role(HoldRole::Start).collect();
    let finishes: Vec<GridCoord> = p.holds_with_role(HoldRole::Finish).collect();
    match starts.len() {
        0 => out.push(Violation::MissingStart),
        1 | 2 => {}
        count => out.push(Violation::TooManyStarts { count }),
    }
    if finishes.is_empty() {
        out.push(Violation::MissingFinish);
    }
    for &position in &finishes {
        if position.row() != TOP_ROW {
            out.push(Violation::FinishNotOnTopRow { position });
        }
    }
    for &position in &starts {
        if position.row() > rules.max_start_row {
            out.push(Violation::StartAboveRowCap {
                position,
                max_row: rules.max_start_row,
            });
        }
    }
    let mut seen = HashSet::new();
    for h in &p.holds {
        if !seen.insert(h.position) {
            out.push(Violation::DuplicateHold {
                position: h.position,
            });
        }
    }
    let count = p.holds.len();
    if count < rules.min_holds {
        out.push(Violation::TooFewHolds {
            count,
            min: rules.min_holds,
        });
    }
    if count > rules.max_holds {
        out.push(Violation::TooManyHolds {
            count,
            max: rules.max_holds,
        });
    }
    out
}

/// One problem as it appears in a dataset file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProblemRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub holds: Vec<HoldRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_font: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_hueco: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_benchmark: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldRecord {
    pub position: String,
    pub role: String,
}

impl Problem {
    /// Structural conversion: positions, roles and grade labels are parsed
    /// but problem invariants are not checked.
    pub fn from_record(record: &ProblemRecord) -> Result<Self, BoardError> {
        let holds = record
            .holds
            .iter()
            .map(|h| Ok(Hold::new(h.position.parse()?, h.role.parse()?)))
            .collect::<Result<Vec<_>, BoardError>>()?;
        let hueco = match &record.grade_hueco {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(s.parse::<Grade>()?),
            Some(serde_json::Value::Number(n)) => Some(
                n.as_u64()
                    .and_then(|v| u8::try_from(v).ok())
                    .and_then(Grade::new)
                    .ok_or_else(|| BoardError::GradeOutOfRange(n.to_string()))?,
            ),
            Some(other) => return Err(BoardError::GradeOutOfRange(other.to_string())),
        };
        let font = record.grade_font.as_deref().map(font_to_hueco).transpose()?;
        let grade = match (font, hueco) {
            (Some(f), Some(h)) if f != h => {
                return Err(BoardError::GradeMismatch {
                    font: record.grade_font.clone().unwrap_or_default(),
                    mapped: f.v(),
                    hueco: h,
                })
            }
            (f, h) => h.or(f),
        };
        Ok(Self {
            id: record.id.clone(),
            name: record.name.clone(),
            holds,
            grade,
            repeats: record.repeats,
            is_benchmark: record.is_benchmark,
        })
    }

    pub fn to_record(&self) -> ProblemRecord {
        ProblemRecord {
            id: self.id.clone(),
            name: self.name.clone(),
            holds: self
                .holds
                .iter()
                .map(|h| HoldRecord {
                    position: h.position.to_string(),
                    role: serde_json::to_value(h.role)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                })
                .collect(),
            grade_font: None,
            grade_hueco: self.grade.map(|g| serde_json::Value::String(g.to_string())),
            repeats: self.repeats,
            is_benchmark: self.is_benchmark,
        }
    }
}

/// Parses and validates one record.
pub fn parse_problem(record: &ProblemRecord, rules: &ValidationRules) -> Result<Problem, BoardError> {
    let problem = Problem::from_record(record)?;
    let violations = validate_problem(&problem, rules);
    if violations.is_empty() {
        Ok(problem)
    } else {
        Err(BoardError::Invalid(violations))
    }
}

pub fn serialize_problem(p: &Problem) -> ProblemRecord {
    p.to_record()
}

/// Reads a dataset file (a JSON list of records) without validating problems.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<ProblemRecord>, BoardError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_dataset<'a>(
    path: impl AsRef<Path>,
    problems: impl IntoIterator<Item = &'a Problem>,
) -> Result<(), BoardError> {
    let records: Vec<ProblemRecord> = problems.into_iter().map(Problem::to_record).collect();
    std::fs::write(path, serde_json::to_string_pretty(&records)?)?;
    Ok(())
}

/// Per-hold grip values. Difficulties are ease-of-grip in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldFeatures {
    pub difficulty_left: f64,
    pub difficulty_right: f64,
    pub foot_quality: f64,
}

impl HoldFeatures {
    fn check(&self, position: GridCoord) -> Result<(), BoardError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        for (field, value) in [
            ("difficulty_left", self.difficulty_left),
            ("difficulty_right", self.difficulty_right),
        ] {
            if !unit(value) {
                return Err(BoardError::FeatureOutOfRange {
                    position,
                    field,
                    value,
                    range: "(0, 1]",
                });
            }
        }
        if !(0.0..=1.0).contains(&self.foot_quality) {
            return Err(BoardError::FeatureOutOfRange {
                position,
                field: "foot_quality",
                value: self.foot_quality,
                range: "[0, 1]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldFeatureTable {
    entries: Vec<HoldFeatures>,
}

impl Default for HoldFeatureTable {
    fn default() -> Self {
        Self::uniform(HoldFeatures {
            difficulty_left: 0.5,
            difficulty_right: 0.5,
            foot_quality: 0.5,
        })
    }
}

impl HoldFeatureTable {
    pub fn uniform(features: HoldFeatures) -> Self {
        Self {
            entries: vec![features; BOARD_CELLS],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, position: GridCoord) -> &HoldFeatures {
        &self.entries[position.index()]
    }

    pub fn set(&mut self, position: GridCoord, features: HoldFeatures) -> Result<(), BoardError> {
        features.check(position)?;
        self.entries[position.index()] = features;
        Ok(())
    }

    /// Builds a table from a `"A1".."K18"` keyed map; every cell is required.
    pub fn from_map(map: &BTreeMap<String, HoldFeatures>) -> Result<Self, BoardError> {
        let mut entries: Vec<Option<HoldFeatures>> = vec![None; BOARD_CELLS];
        for (key, features) in map {
            let position: GridCoord = key.parse()?;
            features.check(position)?;
            entries[position.index()] = Some(*features);
        }
        let missing: Vec<String> = GridCoord::all()
            .filter(|c| entries[c.index()].is_none())
            .map(|c| c.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(BoardError::MissingFeatures(missing));
        }
        Ok(Self {
            entries: entries.into_iter().map(|e| e.expect("checked")).collect(),
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, HoldFeatures> {
        GridCoord::all()
            .map(|c| (c.to_string(), *self.get(c)))
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, BoardError> {
        Self::from_map(&serde_json::from_str(text)?)
    }
}

pub fn load_hold_features(path: impl AsRef<Path>) -> Result<HoldFeatureTable, BoardError> {
    HoldFeatureTable::from_json_str(&std::fs::read_to_string(path)?)
}
