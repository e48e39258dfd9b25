//! Rejection-aware confusion matrices, precision/recall/F1, aggregation,
//! and results tables.
//!
//! Rejected predictions never enter the matrix: they only raise
//! `rejected`, which lowers coverage. Every ratio with a zero denominator is
//! reported as 0 and noted in the report's warnings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TlaError};
use crate::text::Language;
use crate::wisdomnet::Classification;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    /// `counts[gold][predicted]`
    pub counts: Vec<Vec<usize>>,
    pub rejected: usize,
    pub total: usize,
    /// Gold-label tallies including rejected samples.
    pub gold_counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![vec![0; num_classes]; num_classes],
            rejected: 0,
            total: 0,
            gold_counts: vec![0; num_classes],
        }
    }

    /// Builds a matrix from raw counts with no rejections.
    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(TlaError::dim("confusion matrix must be square"));
        }
        let gold_counts: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
        let total = gold_counts.iter().sum();
        Ok(ConfusionMatrix {
            num_classes: n,
            counts,
            rejected: 0,
            total,
            gold_counts,
        })
    }

    pub fn accepted(&self) -> usize {
        self.total - self.rejected
    }

    pub fn tp(&self, c: usize) -> usize {
        self.counts[c][c]
    }

    /// Accepted samples predicted as `c` whose gold label differs.
    pub fn fp(&self, c: usize) -> usize {
        (0..self.num_classes).map(|g| self.counts[g][c]).sum::<usize>() - self.tp(c)
    }

    /// Accepted samples of gold class `c` predicted as another class.
    pub fn fn_(&self, c: usize) -> usize {
        self.counts[c].iter().sum::<usize>() - self.tp(c)
    }

    /// Accepted samples with gold label `c`.
    pub fn support(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    pub fn diagonal(&self) -> usize {
        (0..self.num_classes).map(|c| self.tp(c)).sum()
    }

    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.accepted() as f64 / self.total as f64
        }
    }
}

/// Tallies predictions against gold labels. `Rejected` only increments
/// `rejected`.
pub fn confusion(preds: &[Classification], gold: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != gold.len() {
        return Err(TlaError::dim(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&p, &g) in preds.iter().zip(gold) {
        if g >= num_classes {
            return Err(TlaError::domain(format!("gold label {g} out of range for {num_classes} classes")));
        }
        cm.total += 1;
        cm.gold_counts[g] += 1;
        match p {
            Classification::Rejected => cm.rejected += 1,
            Classification::Class(c) if c < num_classes => cm.counts[g][c] += 1,
            Classification::Class(c) => {
                return Err(TlaError::domain(format!(
                    "predicted class {c} out of range for {num_classes} classes"
                )))
            }
        }
    }
    Ok(cm)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `TP / (TP + FP)`, 0 when nothing was predicted as `class`.
pub fn precision(cm: &ConfusionMatrix, class: usize) -> f64 {
    ratio(cm.tp(class), cm.tp(class) + cm.fp(class))
}

/// `TP / (TP + FN)`, 0 when `class` has no accepted samples.
pub fn recall(cm: &ConfusionMatrix, class: usize) -> f64 {
    ratio(cm.tp(class), cm.tp(class) + cm.fn_(class))
}

/// Harmonic mean `2pr / (p + r)`, 0 when `p + r = 0`.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub coverage: f64,
    pub rejected: usize,
    pub total: usize,
    pub per_class: Vec<ClassMetrics>,
    pub gold_counts: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Per-class metrics plus their macro or support-weighted mean. Accuracy is
/// `diagonal / (total − rejected)`.
pub fn aggregate(cm: &ConfusionMatrix, scheme: Averaging) -> EvalReport {
    let mut warnings = Vec::new();
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes)
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            if tp + fp == 0 {
                warnings.push(format!("precision of class {c} is 0/0, reported as 0"));
            }
            if tp + fn_ == 0 {
                warnings.push(format!("recall of class {c} is 0/0, reported as 0"));
            }
            let (p, r) = (precision(cm, c), recall(cm, c));
            ClassMetrics {
                class: c,
                precision: p,
                recall: r,
                f1: f1(p, r),
                support: cm.support(c),
            }
        })
        .collect();
    let accepted = cm.accepted();
    if accepted == 0 {
        warnings.push("no accepted samples; accuracy reported as 0".into());
    }
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| -> f64 {
        match scheme {
            Averaging::Macro => {
                if per_class.is_empty() {
                    0.0
                } else {
                    per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
                }
            }
            Averaging::Weighted => {
                if accepted == 0 {
                    0.0
                } else {
                    per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / accepted as f64
                }
            }
        }
    };
    EvalReport {
        averaging: scheme,
        accuracy: ratio(cm.diagonal(), accepted),
        precision: mean(&|m| m.precision),
        recall: mean(&|m| m.recall),
        f1: mean(&|m| m.f1),
        coverage: cm.coverage(),
        rejected: cm.rejected,
        total: cm.total,
        per_class: per_class.clone(),
        gold_counts: cm.gold_counts.clone(),
        confusion: cm.counts.clone(),
        warnings,
    }
}

/// One row of a results table. `model` is free text so externally produced
/// rows can sit next to ours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub model: String,
    pub language: Language,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Text,
}

impl std::str::FromStr for TableFormat {
    type Err = TlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "text" => Ok(TableFormat::Text),
            other => Err(TlaError::Config(format!("unknown table format '{other}'"))),
        }
    }
}

/// Flat record of one results row, as written to CSV and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    pub set: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub coverage: f64,
    pub rejected: usize,
    pub total: usize,
}

const CSV_HEADER: [&str; 9] = [
    "model", "set", "accuracy", "precision", "recall", "f1", "coverage", "rejected", "total",
];

/// Rows grouped by model in order of first appearance, then by language in
/// table order (English, Bangla, Hindi).
pub fn order_rows(entries: &[ResultEntry]) -> Vec<ResultRecord> {
    let mut models: Vec<&str> = Vec::new();
    for e in entries {
        if !models.contains(&e.model.as_str()) {
            models.push(&e.model);
        }
    }
    let mut rows = Vec::with_capacity(entries.len());
    for m in models {
        for lang in Language::ALL {
            for e in entries.iter().filter(|e| e.model == m && e.language == lang) {
                rows.push(ResultRecord {
                    model: e.model.clone(),
                    set: lang.title().to_string(),
                    accuracy: e.report.accuracy,
                    precision: e.report.precision,
                    recall: e.report.recall,
                    f1: e.report.f1,
                    coverage: e.report.coverage,
                    rejected: e.report.rejected,
                    total: e.report.total,
                });
            }
        }
    }
    rows
}

/// Serializes a results table. Text uses two decimals; CSV and JSON keep
/// full precision (shortest round-trip representation).
pub fn emit_results_table(entries: &[ResultEntry], format: TableFormat) -> Result<String> {
    let rows = order_rows(entries);
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(CSV_HEADER).map_err(|e| TlaError::Format(e.to_string()))?;
            for r in &rows {
                w.serialize(r).map_err(|e| TlaError::Format(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| TlaError::Format(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| TlaError::Format(e.to_string()))
        }
        TableFormat::Json => Ok(serde_json::to_string_pretty(&rows)? + "\n"),
        TableFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "{:<20} {:<8} {:>8} {:>9} {:>6} {:>8} {:>8}",
                "Models", "Set", "Accuracy", "Precision", "Recall", "F1 Score", "Coverage"
            );
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{:<20} {:<8} {:>8.2} {:>9.2} {:>6.2} {:>8.2} {:>8.2}",
                    r.model, r.set, r.accuracy, r.precision, r.recall, r.f1, r.coverage
                );
            }
            Ok(s)
        }
    }
}

/// Parses a table written by [`emit_results_table`] in CSV form.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| TlaError::Format(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(TlaError::Format(format!("unexpected results header {:?}", header)));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| TlaError::Format(e.to_string())))
        .collect()
}
