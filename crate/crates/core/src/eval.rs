//! Dataset adapters, seeded test-split sampling, metrics and reports.
//!
//! Hallucination is the positive class throughout.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{self, RecordError};
use crate::types::{Claim, Label};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Format { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("cannot sample {n} claims from {len}")]
    Split { n: usize, len: usize },
    #[error("unknown dataset format {0:?}: expected native, halueval_qa or generic_pairs")]
    UnknownFormat(String),
    #[error("unknown report format {0:?}: expected text_table or machine")]
    UnknownReportFormat(String),
    #[error("bad machine report: {0}")]
    Report(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Native,
    HaluevalQa,
    GenericPairs,
}

impl FromStr for DatasetFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "native" => Ok(DatasetFormat::Native),
            "halueval_qa" => Ok(DatasetFormat::HaluevalQa),
            "generic_pairs" => Ok(DatasetFormat::GenericPairs),
            _ => Err(EvalError::UnknownFormat(s.to_string())),
        }
    }
}

/// Canonical labels plus the `hallucinated` / `faithful` aliases.
pub fn parse_label_alias(text: &str) -> Option<Label> {
    match text.trim().to_ascii_lowercase().as_str() {
        "hallucinated" => Some(Label::Hallucination),
        "faithful" => Some(Label::NotHallucination),
        _ => Label::parse(text).ok(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRow {
    #[serde(default)]
    id: Option<String>,
    query: String,
    response: String,
    #[serde(default)]
    label: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HaluEvalRow {
    Paired {
        #[serde(default)]
        #[allow(dead_code)]
        knowledge: Option<String>,
        question: String,
        right_answer: String,
        hallucinated_answer: String,
    },
    Single {
        #[serde(default)]
        #[allow(dead_code)]
        knowledge: Option<String>,
        question: String,
        answer: String,
        label: String,
    },
}

fn excerpt(line: &str) -> String {
    let t = line.trim();
    match t.char_indices().nth(80) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}

/// Loads claims and normalizes external layouts. Ids are checked for
/// uniqueness; rows without an id get their 1-based line number.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<Claim>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let claims = match format {
        DatasetFormat::Native => records::parse_records::<Claim>(&text, 1).map_err(|e| match e {
            RecordError::Parse { line, message, .. } => EvalError::Format {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other.into(),
        })?,
        DatasetFormat::GenericPairs | DatasetFormat::HaluevalQa => {
            let fail = |line: usize, raw: &str, why: String| EvalError::Format {
                path: path.to_path_buf(),
                line,
                message: format!("{why} in record {}", excerpt(raw)),
            };
            let mut out = Vec::new();
            for (i, raw) in text.lines().enumerate() {
                let line = i + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                if format == DatasetFormat::GenericPairs {
                    let row: PairRow =
                        serde_json::from_str(raw).map_err(|e| fail(line, raw, format!("unrecognized layout ({e})")))?;
                    let gold = match &row.label {
                        None => None,
                        Some(l) => Some(parse_label_alias(l).ok_or_else(|| fail(line, raw, format!("unknown label {l:?}")))?),
                    };
                    let id = row.id.unwrap_or_else(|| line.to_string());
                    out.push(Claim::new(id, row.query, row.response, gold).map_err(|e| fail(line, raw, e.to_string()))?);
                } else {
                    let row: HaluEvalRow = serde_json::from_str(raw)
                        .map_err(|_| fail(line, raw, "unrecognized HaluEval QA layout".into()))?;
                    match row {
                        HaluEvalRow::Paired {
                            question,
                            right_answer,
                            hallucinated_answer,
                            ..
                        } => {
                            let mk = |suffix: &str, answer: String, label| {
                                Claim::new(format!("{line}-{suffix}"), question.clone(), answer, Some(label))
                                    .map_err(|e| fail(line, raw, e.to_string()))
                            };
                            out.push(mk("right", right_answer, Label::NotHallucination)?);
                            out.push(mk("hallucinated", hallucinated_answer, Label::Hallucination)?);
                        }
                        HaluEvalRow::Single { question, answer, label, .. } => {
                            let gold = parse_label_alias(&label)
                                .ok_or_else(|| fail(line, raw, format!("unknown label {label:?}")))?;
                            out.push(
                                Claim::new(line.to_string(), question, answer, Some(gold))
                                    .map_err(|e| fail(line, raw, e.to_string()))?,
                            );
                        }
                    }
                }
            }
            out
        }
    };
    let mut seen = HashSet::new();
    for c in &claims {
        if !seen.insert(c.id.as_str()) {
            return Err(EvalError::Format {
                path: path.to_path_buf(),
                line: 0,
                message: format!("duplicate claim id {:?}", c.id),
            });
        }
    }
    Ok(claims)
}

/// Uniform sample of `n` claims without replacement, ChaCha8 seeded from
/// `seed`. Order is the sampling order.
pub fn sample_split(claims: &[Claim], n: usize, seed: u64) -> Result<Vec<Claim>, EvalError> {
    if n == 0 || n > claims.len() {
        return Err(EvalError::Split { n, len: claims.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..claims.len()).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, n);
    Ok(chosen.iter().map(|&i| claims[i].clone()).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: &[(Label, Label)]) -> Self {
        let mut c = Confusion::default();
        for &(gold, pred) in pairs {
            match (gold, pred) {
                (Label::Hallucination, Label::Hallucination) => c.tp += 1,
                (Label::NotHallucination, Label::Hallucination) => c.fp += 1,
                (Label::NotHallucination, Label::NotHallucination) => c.tn += 1,
                (Label::Hallucination, Label::NotHallucination) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            confusion: c,
            accuracy: ratio(c.tp + c.tn, c.n()),
            precision,
            recall,
            f1,
        }
    }
}

/// Metrics over (gold, predicted) pairs. Zero denominators yield 0.
pub fn compute_metrics(pairs: &[(Label, Label)]) -> Metrics {
    Metrics::from_confusion(Confusion::from_pairs(pairs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerClaim {
    pub id: String,
    pub gold: Label,
    pub predicted: Label,
    pub n_steps: usize,
    pub corrected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub dataset: String,
    pub positive_class: Label,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Claims whose detection failed; not counted in `n`.
    pub failed: usize,
    pub per_claim: Vec<PerClaim>,
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>, per_claim: Vec<PerClaim>, failed: usize) -> Self {
        let pairs: Vec<(Label, Label)> = per_claim.iter().map(|p| (p.gold, p.predicted)).collect();
        let m = compute_metrics(&pairs);
        EvalReport {
            dataset: dataset.into(),
            positive_class: Label::Hallucination,
            n: m.confusion.n(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            confusion: m.confusion,
            failed,
            per_claim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    TextTable,
    Machine,
}

impl FromStr for ReportFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "text_table" => Ok(ReportFormat::TextTable),
            "machine" => Ok(ReportFormat::Machine),
            _ => Err(EvalError::UnknownReportFormat(s.to_string())),
        }
    }
}

/// `acc / f1` as percentages with two decimals, e.g. `74.19 / 75.00`.
pub fn percent_cell(accuracy: f64, f1: f64) -> String {
    format!("{:.2} / {:.2}", accuracy * 100.0, f1 * 100.0)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Machine => {
            let mut s = serde_json::to_string(report).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::TextTable => {
            let c = &report.confusion;
            let name_w = report.dataset.chars().count().max("dataset".len());
            let cell = percent_cell(report.accuracy, report.f1);
            let cell_w = cell.len().max("Acc / F1".len());
            let mut out = format!("# positive class: {}\n", report.positive_class);
            out.push_str(&format!("{:<name_w$}  {:>6}  {:>cell_w$}\n", "dataset", "n", "Acc / F1"));
            out.push_str(&format!("{:<name_w$}  {:>6}  {:>cell_w$}\n", report.dataset, report.n, cell));
            out.push_str(&format!(
                "# tp={} fp={} tn={} fn={} failed={}\n",
                c.tp, c.fp, c.tn, c.fn_, report.failed
            ));
            out
        }
    }
}

pub fn parse_machine_report(text: &str) -> Result<EvalReport, EvalError> {
    serde_json::from_str(text.trim()).map_err(|e| EvalError::Report(e.to_string()))
}
