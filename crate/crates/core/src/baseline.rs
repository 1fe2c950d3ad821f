//! Baselines: few-shot true/false token ratio scoring and the
//! sentence-embedding probe.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    accuracy, eval_generated, eval_generated_calibrated, leave_one_topic_out_with, roc_auc, EvalCell, EvalReport,
    LotoOptions, Protocol, RunLabel, ScorerKind,
};
use crate::probe::TrainConfig;
use crate::store::{ActivationMatrix, DatasetIndex, FewShotRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioScore {
    pub id: String,
    pub ratio: f64,
}

/// `p_true / p_false` for one statement.
pub fn few_shot_ratio(record: &FewShotRecord) -> Result<RatioScore> {
    for (name, p) in [("p_true", record.p_true), ("p_false", record.p_false)] {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Data(format!("{name} = {p} for {} must be positive", record.id)));
        }
    }
    let ratio = record.p_true / record.p_false;
    if !ratio.is_finite() {
        return Err(Error::Data(format!("ratio for {} is not finite", record.id)));
    }
    Ok(RatioScore {
        id: record.id.clone(),
        ratio,
    })
}

/// A statement is predicted true iff its ratio is strictly above the mean
/// ratio of the evaluated set.
pub fn few_shot_classify(ratios: &[RatioScore]) -> Result<Vec<bool>> {
    if ratios.is_empty() {
        return Err(Error::Parameter("no ratios to classify".into()));
    }
    let mean = ratios.iter().map(|r| r.ratio).sum::<f64>() / ratios.len() as f64;
    Ok(ratios.iter().map(|r| r.ratio > mean).collect())
}

fn score_group(records: &[&FewShotRecord], label_of: &HashMap<&str, bool>) -> Result<(f64, Option<f64>, f64, usize)> {
    let ratios = records.iter().map(|r| few_shot_ratio(r)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = ratios.iter().map(|r| label_of[r.id.as_str()]).collect();
    let preds = few_shot_classify(&ratios)?;
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    let scores: Vec<f64> = ratios.iter().map(|r| r.ratio).collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    // Cross-check against the thresholded accuracy at the mean ratio.
    debug_assert_eq!(accuracy(&scores, &labels, mean)?, correct as f64 / labels.len() as f64);
    let auc = roc_auc(&scores, &labels).ok();
    Ok((correct as f64 / labels.len() as f64, auc, mean, labels.len()))
}

/// Scores k-shot records per topic of `index`; the mean-ratio rule is applied
/// within each topic. Records with a different shot count are ignored.
pub fn few_shot_topic_report(index: &DatasetIndex, records: &[FewShotRecord], shots: u32) -> Result<EvalReport> {
    let label_of: HashMap<&str, bool> = index.entries().iter().map(|e| (e.id.as_str(), e.label)).collect();
    let topic_of: HashMap<&str, &str> = index
        .entries()
        .iter()
        .map(|e| (e.id.as_str(), e.topic.as_str()))
        .collect();
    let selected: Vec<&FewShotRecord> = records.iter().filter(|r| r.shots == shots).collect();
    for r in &selected {
        if !label_of.contains_key(r.id.as_str()) {
            return Err(Error::Data(format!("few-shot id {} not in index", r.id)));
        }
    }
    let mut cells = Vec::new();
    for topic in index.topics() {
        let group: Vec<&FewShotRecord> = selected
            .iter()
            .copied()
            .filter(|r| topic_of[r.id.as_str()] == topic)
            .collect();
        if group.is_empty() {
            continue;
        }
        let (acc, auc, mean, n) = score_group(&group, &label_of)?;
        cells.push(few_shot_cell(topic, acc, auc, mean, n));
    }
    if cells.is_empty() {
        return Err(Error::Data(format!("no {shots}-shot records match the index")));
    }
    Ok(few_shot_report(Protocol::LeaveOneTopicOut, shots, cells))
}

/// Scores k-shot records over a whole evaluation set (e.g. generated statements).
pub fn few_shot_set_report(index: &DatasetIndex, records: &[FewShotRecord], shots: u32) -> Result<EvalReport> {
    let label_of: HashMap<&str, bool> = index.entries().iter().map(|e| (e.id.as_str(), e.label)).collect();
    let selected: Vec<&FewShotRecord> = records.iter().filter(|r| r.shots == shots).collect();
    if let Some(r) = selected.iter().find(|r| !label_of.contains_key(r.id.as_str())) {
        return Err(Error::Data(format!("few-shot id {} not in index", r.id)));
    }
    if selected.is_empty() {
        return Err(Error::Data(format!("no {shots}-shot records match the index")));
    }
    let (acc, auc, mean, n) = score_group(&selected, &label_of)?;
    Ok(few_shot_report(
        Protocol::Generated,
        shots,
        vec![few_shot_cell("generated".into(), acc, auc, mean, n)],
    ))
}

fn few_shot_cell(name: String, acc: f64, auc: Option<f64>, mean_ratio: f64, n: usize) -> EvalCell {
    EvalCell {
        name,
        layer: None,
        seeds: Vec::new(),
        accuracy_mean: acc,
        accuracies: vec![acc],
        auc_mean: auc,
        aucs: auc.into_iter().collect(),
        threshold: mean_ratio,
        thresholds: vec![mean_ratio],
        config_fingerprint: "none".into(),
        audit: None,
        test_count: n,
    }
}

fn few_shot_report(protocol: Protocol, shots: u32, cells: Vec<EvalCell>) -> EvalReport {
    let average_accuracy = cells.iter().map(|c| c.accuracy_mean).sum::<f64>() / cells.len() as f64;
    EvalReport {
        label: format!("{shots}-shot"),
        scorer: ScorerKind::FewShot,
        protocol,
        source_model: String::new(),
        layer: None,
        shots: Some(shots),
        config: None,
        config_fingerprint: "none".into(),
        seeds: Vec::new(),
        cells,
        average_accuracy,
        inputs: Vec::new(),
        notes: vec![
            "prediction is true iff p_true/p_false exceeds the arithmetic mean ratio of the evaluated statements"
                .into(),
            "threshold column holds that mean ratio".into(),
        ],
    }
}

/// Which protocol the embedding baseline runs under.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingProtocol<'a> {
    LeaveOneTopicOut,
    Generated {
        index: &'a DatasetIndex,
        matrix: &'a ActivationMatrix,
    },
    GeneratedCalibrated {
        index: &'a DatasetIndex,
        matrix: &'a ActivationMatrix,
        split_seed: u64,
    },
}

/// Runs the unchanged probe pipeline on sentence-embedding vectors. Any
/// embedding width is accepted.
pub fn embedding_baseline(
    index: &DatasetIndex,
    embeddings: &ActivationMatrix,
    protocol: EmbeddingProtocol<'_>,
    seeds: &[u64],
    config: &TrainConfig,
    label: &str,
) -> Result<EvalReport> {
    let run = RunLabel {
        label: label.to_string(),
        scorer: ScorerKind::EmbeddingBaseline,
    };
    let mut report = match protocol {
        EmbeddingProtocol::LeaveOneTopicOut => leave_one_topic_out_with(
            index,
            embeddings,
            seeds,
            config,
            &LotoOptions {
                held_out: Vec::new(),
                run: Some(run),
            },
        )?,
        EmbeddingProtocol::Generated { index: gi, matrix: gm } => {
            eval_generated(index, embeddings, gi, gm, seeds, config, Some(run))?
        }
        EmbeddingProtocol::GeneratedCalibrated {
            index: gi,
            matrix: gm,
            split_seed,
        } => eval_generated_calibrated(index, embeddings, gi, gm, seeds, config, split_seed, Some(run))?,
    };
    report.layer = None;
    for c in &mut report.cells {
        c.layer = None;
    }
    report.notes.push(format!("baseline: probe trained on {}-dim sentence embeddings", embeddings.dim()));
    Ok(report)
}
