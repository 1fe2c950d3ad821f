use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::probe::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    /// Probe trained on hidden-layer activations.
    Probe,
    /// Same probe trained on sentence-embedding vectors.
    EmbeddingBaseline,
    /// True/false token probability ratio after k exemplars.
    FewShot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    LeaveOneTopicOut,
    Generated,
    GeneratedCalibrated,
}

/// Proof that a leave-one-topic-out cell never trained on its held-out topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub held_out: String,
    pub train_topics: Vec<String>,
    pub train_count: usize,
    pub test_count: usize,
    /// sha256 over the training ids in row order, one per line.
    pub train_ids_sha256: String,
    pub held_out_rows_in_train: usize,
}

/// One reported number: a topic or evaluation set, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub name: String,
    pub layer: Option<u32>,
    pub seeds: Vec<u64>,
    pub accuracy_mean: f64,
    pub accuracies: Vec<f64>,
    pub auc_mean: Option<f64>,
    pub aucs: Vec<f64>,
    /// Mean decision threshold across seeds.
    pub threshold: f64,
    pub thresholds: Vec<f64>,
    pub config_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<SplitAudit>,
    #[serde(default)]
    pub test_count: usize,
}

/// Checksum of one input file the report depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputChecksum {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Row label in rendered tables, e.g. "20th-layer", "BERT", "3-shot".
    pub label: String,
    pub scorer: ScorerKind,
    pub protocol: Protocol,
    pub source_model: String,
    pub layer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u32>,
    /// Training hyperparameters; absent for scorers that do not train.
    pub config: Option<TrainConfig>,
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<EvalCell>,
    /// Unweighted mean of the cell accuracies (the "Average" column).
    pub average_accuracy: f64,
    #[serde(default)]
    pub inputs: Vec<InputChecksum>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn cell(&self, name: &str) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.name == name)
    }

    pub fn mean_auc(&self) -> Option<f64> {
        let aucs: Vec<f64> = self.cells.iter().filter_map(|c| c.auc_mean).collect();
        if aucs.is_empty() {
            None
        } else {
            Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }

    pub fn mean_threshold(&self) -> f64 {
        self.cells.iter().map(|c| c.threshold).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn provenance_lines(reports: &[&EvalReport], out: &mut String) {
    for r in reports {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "  {}: scorer={:?} model={} config={} seeds=[{}]",
            r.label,
            r.scorer,
            r.source_model,
            r.config_fingerprint,
            seeds.join(",")
        );
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.4}"),
        _ => "-".to_string(),
    }
}

/// Model × topic accuracy matrix with an "Average" column. Topics appear in
/// first-seen order across the reports.
pub fn render_topic_table(reports: &[&EvalReport]) -> String {
    let mut topics: Vec<String> = Vec::new();
    for r in reports {
        for c in &r.cells {
            if !topics.contains(&c.name) {
                topics.push(c.name.clone());
            }
        }
    }
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let col_w: Vec<usize> = topics.iter().map(|t| t.len().max(6)).collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Model");
    for (t, w) in topics.iter().zip(&col_w) {
        let _ = write!(out, " | {t:>w$}");
    }
    let _ = writeln!(out, " | {:>7}", "Average");
    let total = label_w + col_w.iter().map(|w| w + 3).sum::<usize>() + 10;
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in reports {
        let _ = write!(out, "{:<label_w$}", r.label);
        for (t, w) in topics.iter().zip(&col_w) {
            let v = r.cell(t).map(|c| c.accuracy_mean);
            let _ = write!(out, " | {:>w$}", fmt_cell(v));
        }
        let _ = writeln!(out, " | {:>7}", fmt_cell(Some(r.average_accuracy)));
    }
    provenance_lines(reports, &mut out);
    out
}

/// Model | Accuracy | AUC, one row per report (first cell of each).
pub fn render_generated_table(reports: &[&EvalReport]) -> String {
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<label_w$} | {:>8} | {:>6}", "Model", "Accuracy", "AUC");
    let _ = writeln!(out, "{}", "-".repeat(label_w + 22));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<label_w$} | {:>8} | {:>6}",
            r.label,
            fmt_cell(Some(r.average_accuracy)),
            fmt_cell(r.mean_auc())
        );
    }
    provenance_lines(reports, &mut out);
    out
}

/// Model | Avg Threshold | Accuracy for calibrated runs.
pub fn render_calibrated_table(reports: &[&EvalReport]) -> String {
    let label_w = reports.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<label_w$} | {:>13} | {:>8}", "Model", "Avg Threshold", "Accuracy");
    let _ = writeln!(out, "{}", "-".repeat(label_w + 29));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<label_w$} | {:>13} | {:>8}",
            r.label,
            fmt_cell(Some(r.mean_threshold())),
            fmt_cell(Some(r.average_accuracy))
        );
    }
    provenance_lines(reports, &mut out);
    out
}

/// Renders each protocol's reports as its own table, in a fixed protocol order.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for (protocol, title, render) in [
        (
            Protocol::LeaveOneTopicOut,
            "Leave-one-topic-out accuracy",
            render_topic_table as fn(&[&EvalReport]) -> String,
        ),
        (Protocol::Generated, "Generated statements", render_generated_table),
        (
            Protocol::GeneratedCalibrated,
            "Generated statements, calibrated threshold",
            render_calibrated_table,
        ),
    ] {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.protocol == protocol).collect();
        if group.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{title}");
        out.push_str(&render(&group));
    }
    out
}
