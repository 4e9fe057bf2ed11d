//! Dataset filtering, stratified splitting and evaluation metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{
    validate_problem, Grade, Problem, ProblemRecord, ValidationRules, Violation,
};
use crate::gradenet::GradeDistribution;

pub const CLASSES: usize = Grade::CLASSES;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("{predictions} predictions for {truths} labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("grade {0} is outside V4-V13")]
    GradeOutOfRange(String),
    #[error("split fractions must be nonnegative and sum to 1")]
    BadFractions,
    #[error("malformed report record: {0}")]
    BadRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub v14_removed: usize,
    pub no_repeats_removed: usize,
    pub bad_start_removed: usize,
    pub too_many_holds_removed: usize,
    pub kept: usize,
}

impl FilterReport {
    pub fn total(&self) -> usize {
        self.v14_removed
            + self.no_repeats_removed
            + self.bad_start_removed
            + self.too_many_holds_removed
            + self.kept
    }
}

/// Records that could not be turned into problems at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub index: usize,
    pub id: Option<String>,
    pub error: String,
}

/// Structural parse of raw records. Rule violations are left for
/// [`filter_dataset`]; only unreadable records are dropped here.
pub fn ingest(records: &[ProblemRecord]) -> (Vec<Problem>, Vec<IngestFailure>) {
    let mut problems = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    for (index, r) in records.iter().enumerate() {
        match Problem::from_record(r) {
            Ok(p) => problems.push(p),
            Err(e) => failures.push(IngestFailure {
                index,
                id: r.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    (problems, failures)
}

/// Applies, in order: drop V14, drop problems without repeats, drop rule
/// violations other than the hold-count cap, drop problems above the cap.
pub fn filter_dataset(problems: Vec<Problem>, rules: &ValidationRules) -> (Vec<Problem>, FilterReport) {
    let mut report = FilterReport::default();
    let mut kept = Vec::with_capacity(problems.len());
    for p in problems {
        if p.grade == Grade::new(14) {
            report.v14_removed += 1;
        } else if p.repeats.unwrap_or(0) == 0 {
            report.no_repeats_removed += 1;
        } else if validate_problem(&p, rules)
            .iter()
            .any(|v| !matches!(v, Violation::TooManyHolds { .. }))
        {
            report.bad_start_removed += 1;
        } else if p.holds.len() > rules.max_holds {
            report.too_many_holds_removed += 1;
        } else {
            kept.push(p);
        }
    }
    report.kept = kept.len();
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.803,
            dev: 0.097,
            test: 0.100,
            seed: 0,
            stratify: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::BadFractions);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<Problem>,
    pub dev: Vec<Problem>,
    pub test: Vec<Problem>,
}

/// Seeded split, stratified by grade unless disabled. Each stratum is put in
/// a canonical order (by id, then serialized form) before shuffling, so the
/// result does not depend on input order.
pub fn split(problems: &[Problem], spec: &SplitSpec) -> Result<Split, PipelineError> {
    spec.validate()?;
    let mut strata: BTreeMap<Option<u8>, Vec<&Problem>> = BTreeMap::new();
    for p in problems {
        let key = if spec.stratify { p.grade.map(Grade::v) } else { None };
        strata.entry(key).or_default().push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Split::default();
    for (_, mut items) in strata {
        items.sort_by_cached_key(|p| {
            (
                p.id.clone(),
                serde_json::to_string(&p.to_record()).expect("records serialize"),
            )
        });
        items.shuffle(&mut rng);
        let n = items.len();
        let n_train = ((n as f64) * spec.train).round() as usize;
        let n_dev = (((n as f64) * spec.dev).round() as usize).min(n - n_train);
        for (i, p) in items.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut out.train
            } else if i < n_train + n_dev {
                &mut out.dev
            } else {
                &mut out.test
            };
            dst.push(p.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub pm1_accuracy: f64,
    pub macro_f1: f64,
    /// `None` when no class has both positive and negative examples.
    pub macro_ovr_auc: Option<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: [[u64; CLASSES]; CLASSES],
}

fn class_of(g: Grade) -> Result<usize, PipelineError> {
    g.class_index()
        .ok_or_else(|| PipelineError::GradeOutOfRange(g.to_string()))
}

/// Metrics of predicted distributions against true grades. The predicted
/// grade is the distribution's argmax.
pub fn evaluate(pred: &[GradeDistribution], truth: &[Grade]) -> Result<EvalReport, PipelineError> {
    if pred.len() != truth.len() {
        return Err(PipelineError::LengthMismatch {
            predictions: pred.len(),
            truths: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(PipelineError::Empty);
    }
    let labels: Vec<usize> = truth.iter().map(|g| class_of(*g)).collect::<Result<_, _>>()?;
    let mut confusion = [[0u64; CLASSES]; CLASSES];
    for (d, &t) in pred.iter().zip(&labels) {
        confusion[t][d.argmax()] += 1;
    }
    let n = labels.len();
    let trace: u64 = (0..CLASSES).map(|k| confusion[k][k]).sum();
    let near: u64 = (0..CLASSES)
        .flat_map(|t| (0..CLASSES).map(move |p| (t, p)))
        .filter(|(t, p)| t.abs_diff(*p) <= 1)
        .map(|(t, p)| confusion[t][p])
        .sum();

    let mut f1s = Vec::new();
    for k in 0..CLASSES {
        let tp = confusion[k][k] as f64;
        let support: u64 = confusion[k].iter().sum();
        let predicted: u64 = (0..CLASSES).map(|t| confusion[t][k]).sum();
        if support == 0 && predicted == 0 {
            continue;
        }
        f1s.push(2.0 * tp / (support + predicted) as f64);
    }
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;

    let mut aucs = Vec::new();
    for k in 0..CLASSES {
        let scores: Vec<f64> = pred.iter().map(|d| d.probs[k]).collect();
        let positive: Vec<bool> = labels.iter().map(|&t| t == k).collect();
        if let Some(a) = binary_auc(&scores, &positive) {
            aucs.push(a);
        }
    }
    let macro_ovr_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);

    Ok(EvalReport {
        n,
        accuracy: trace as f64 / n as f64,
        pm1_accuracy: near as f64 / n as f64,
        macro_f1,
        macro_ovr_auc,
        confusion,
    })
}

/// Mann-Whitney AUC with tied scores counted as one half. `None` without
/// both classes present.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += mean_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Text table, flat JSON record and SVG confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub record: String,
    pub svg: String,
}

fn labels() -> Vec<String> {
    Grade::class_labels()
}

/// Flat key/value form: scalar metrics plus `confusion.<truth>.<pred>`.
pub fn report_record(report: &EvalReport) -> BTreeMap<String, serde_json::Value> {
    let mut m = BTreeMap::new();
    m.insert("n".into(), serde_json::json!(report.n));
    m.insert("accuracy".into(), serde_json::json!(report.accuracy));
    m.insert("pm1_accuracy".into(), serde_json::json!(report.pm1_accuracy));
    m.insert("macro_f1".into(), serde_json::json!(report.macro_f1));
    m.insert("macro_ovr_auc".into(), serde_json::json!(report.macro_ovr_auc));
    let names = labels();
    for (t, row) in report.confusion.iter().enumerate() {
        for (p, count) in row.iter().enumerate() {
            m.insert(
                format!("confusion.{}.{}", names[t], names[p]),
                serde_json::json!(count),
            );
        }
    }
    m
}

pub fn report_from_record(
    record: &BTreeMap<String, serde_json::Value>,
) -> Result<EvalReport, PipelineError> {
    let bad = |k: &str| PipelineError::BadRecord(k.to_string());
    let num = |k: &str| record.get(k).and_then(|v| v.as_f64()).ok_or_else(|| bad(k));
    let names = labels();
    let mut confusion = [[0u64; CLASSES]; CLASSES];
    for (t, row) in confusion.iter_mut().enumerate() {
        for (p, cell) in row.iter_mut().enumerate() {
            let key = format!("confusion.{}.{}", names[t], names[p]);
            *cell = record.get(&key).and_then(|v| v.as_u64()).ok_or_else(|| bad(&key))?;
        }
    }
    let auc = match record.get("macro_ovr_auc") {
        Some(serde_json::Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or_else(|| bad("macro_ovr_auc"))?),
        None => return Err(bad("macro_ovr_auc")),
    };
    Ok(EvalReport {
        n: record.get("n").and_then(|v| v.as_u64()).ok_or_else(|| bad("n"))? as usize,
        accuracy: num("accuracy")?,
        pm1_accuracy: num("pm1_accuracy")?,
        macro_f1: num("macro_f1")?,
        macro_ovr_auc: auc,
        confusion,
    })
}

pub fn render_report(report: &EvalReport) -> RenderedReport {
    let names = labels();
    let mut text = String::new();
    let auc = report
        .macro_ovr_auc
        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    writeln!(text, "problems      {}", report.n).unwrap();
    writeln!(text, "accuracy      {:.4}", report.accuracy).unwrap();
    writeln!(text, "+/-1 accuracy {:.4}", report.pm1_accuracy).unwrap();
    writeln!(text, "macro F1      {:.4}", report.macro_f1).unwrap();
    writeln!(text, "macro AUC     {auc}").unwrap();
    writeln!(text).unwrap();
    write!(text, "truth\\pred").unwrap();
    for n in &names {
        write!(text, "{n:>6}").unwrap();
    }
    writeln!(text).unwrap();
    for (t, row) in report.confusion.iter().enumerate() {
        write!(text, "{:<10}", names[t]).unwrap();
        for c in row {
            write!(text, "{c:>6}").unwrap();
        }
        writeln!(text).unwrap();
    }

    let record = serde_json::to_string_pretty(&report_record(report)).expect("record serializes") + "\n";

    RenderedReport {
        text,
        record,
        svg: confusion_svg(&report.confusion),
    }
}

/// Row-normalized confusion matrix. Empty cells are left white.
pub fn confusion_svg(confusion: &[[u64; CLASSES]; CLASSES]) -> String {
    const CELL: usize = 40;
    const MARGIN: usize = 50;
    let size = MARGIN + CELL * CLASSES + 10;
    let names = labels();
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{size}" height="{size}" fill="white"/>"#).unwrap();
    for (i, name) in names.iter().enumerate() {
        let mid = MARGIN + i * CELL + CELL / 2;
        writeln!(s, r#"<text x="{mid}" y="{}" text-anchor="middle">{name}</text>"#, MARGIN - 8).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{name}</text>"#, MARGIN - 6, mid + 4).unwrap();
    }
    for (t, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (p, &count) in row.iter().enumerate() {
            let x = MARGIN + p * CELL;
            let y = MARGIN + t * CELL;
            if count == 0 {
                writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="white" stroke="#ccc"/>"##
                )
                .unwrap();
                continue;
            }
            let share = count as f64 / total as f64;
            writeln!(
                s,
                r##"<rect class="filled" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#1f4e99" fill-opacity="{share:.3}" stroke="#ccc"/>"##
            )
            .unwrap();
            let color = if share > 0.5 { "white" } else { "black" };
            writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{color}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
