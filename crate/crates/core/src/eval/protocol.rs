//! Evaluation protocols over a bound (index, matrix) pair.

use std::collections::HashSet;

use log::info;
use rayon::prelude::*;

use super::calibrate::{calibrate_threshold, split_validation};
use super::metrics::{accuracy, roc_auc};
use super::report::{mean, EvalCell, EvalReport, Protocol, ScorerKind, SplitAudit};
use crate::error::{Error, Result};
use crate::probe::{predict_rows, train_probe_on, TrainConfig};
use crate::store::{split_by_topic, ActivationMatrix, DatasetIndex};
use crate::util::sha256_hex;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const VALIDATION_FRACTION: f64 = 0.30;

/// Labels and scorer identity stamped on a report.
#[derive(Debug, Clone)]
pub struct RunLabel {
    pub label: String,
    pub scorer: ScorerKind,
}

impl RunLabel {
    pub fn probe(matrix: &ActivationMatrix) -> Self {
        Self {
            label: crate::store::layer_label(matrix.layer, None),
            scorer: ScorerKind::Probe,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LotoOptions {
    /// Restrict evaluation to these held-out topics (all topics when empty).
    pub held_out: Vec<String>,
    pub run: Option<RunLabel>,
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one seed is required".into()));
    }
    Ok(())
}

fn ids_digest<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let mut buf = String::new();
    for id in ids {
        buf.push_str(id);
        buf.push('\n');
    }
    sha256_hex(buf.as_bytes())
}

/// Trains on every topic but one and tests on the held-out topic, for each
/// topic and each seed. Accuracy uses the fixed 0.5 threshold.
pub fn leave_one_topic_out(
    index: &DatasetIndex,
    matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<EvalReport> {
    leave_one_topic_out_with(index, matrix, seeds, config, &LotoOptions::default())
}

pub fn leave_one_topic_out_with(
    index: &DatasetIndex,
    matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
    options: &LotoOptions,
) -> Result<EvalReport> {
    config.validate()?;
    check_seeds(seeds)?;
    matrix.check_bound_to(index)?;
    let topics = index.topics();
    if topics.len() < 2 {
        return Err(Error::Protocol(format!(
            "leave-one-topic-out needs at least 2 topics, found {}",
            topics.len()
        )));
    }
    let held_out: Vec<String> = if options.held_out.is_empty() {
        topics.clone()
    } else {
        for t in &options.held_out {
            if !topics.contains(t) {
                return Err(Error::UnknownTopic(t.clone()));
            }
        }
        topics.iter().filter(|t| options.held_out.contains(t)).cloned().collect()
    };

    let entries = index.entries();
    let labels = index.labels();
    let splits = held_out
        .iter()
        .map(|t| split_by_topic(index, t))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64)> = (0..held_out.len())
        .flat_map(|t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let results: Vec<(f64, Option<f64>)> = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let split = &splits[t];
            let train_labels: Vec<bool> = split.train.iter().map(|&r| labels[r]).collect();
            let test_labels: Vec<bool> = split.test.iter().map(|&r| labels[r]).collect();
            let trained = train_probe_on(matrix, &split.train, &train_labels, &config.with_seed(seed))?;
            let scores = predict_rows(&trained.model, matrix, &split.test)?;
            let acc = accuracy(&scores, &test_labels, DEFAULT_THRESHOLD)?;
            let auc = match roc_auc(&scores, &test_labels) {
                Ok(a) => Some(a),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            info!("held out {:?} seed {seed}: accuracy {acc:.4}", held_out[t]);
            Ok((acc, auc))
        })
        .collect::<Result<Vec<_>>>()?;

    let fingerprint = config.fingerprint();
    let mut notes = Vec::new();
    let mut cells = Vec::with_capacity(held_out.len());
    for (t, topic) in held_out.iter().enumerate() {
        let split = &splits[t];
        let cell_results = &results[t * seeds.len()..(t + 1) * seeds.len()];
        let accuracies: Vec<f64> = cell_results.iter().map(|r| r.0).collect();
        let aucs: Vec<f64> = cell_results.iter().filter_map(|r| r.1).collect();
        if aucs.len() != seeds.len() {
            notes.push(format!("AUC undefined for {topic:?}: held-out topic has a single class"));
        }
        let mut train_topics: Vec<String> = Vec::new();
        for &r in &split.train {
            if !train_topics.contains(&entries[r].topic) {
                train_topics.push(entries[r].topic.clone());
            }
        }
        let audit = SplitAudit {
            held_out: topic.clone(),
            train_topics,
            train_count: split.train.len(),
            test_count: split.test.len(),
            train_ids_sha256: ids_digest(split.train.iter().map(|&r| entries[r].id.as_str())),
            held_out_rows_in_train: split.train.iter().filter(|&&r| entries[r].topic == *topic).count(),
        };
        cells.push(EvalCell {
            name: topic.clone(),
            layer: Some(matrix.layer),
            seeds: seeds.to_vec(),
            accuracy_mean: mean(&accuracies),
            accuracies,
            auc_mean: (aucs.len() == seeds.len()).then(|| mean(&aucs)),
            aucs,
            threshold: DEFAULT_THRESHOLD,
            thresholds: vec![DEFAULT_THRESHOLD; seeds.len()],
            config_fingerprint: fingerprint.clone(),
            audit: Some(audit),
            test_count: split.test.len(),
        });
    }
    let run = options.run.clone().unwrap_or_else(|| RunLabel::probe(matrix));
    let average_accuracy = mean(&cells.iter().map(|c| c.accuracy_mean).collect::<Vec<_>>());
    Ok(EvalReport {
        label: run.label,
        scorer: run.scorer,
        protocol: Protocol::LeaveOneTopicOut,
        source_model: matrix.source_model.clone(),
        layer: Some(matrix.layer),
        shots: None,
        config: Some(config.clone()),
        config_fingerprint: fingerprint,
        seeds: seeds.to_vec(),
        cells,
        average_accuracy,
        inputs: Vec::new(),
        notes,
    })
}

/// Rejects a generated evaluation set that shares ids or topics with the
/// training set.
pub fn check_generated_disjoint(train: &DatasetIndex, generated: &DatasetIndex) -> Result<()> {
    let train_ids = train.id_set();
    if let Some(e) = generated.entries().iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(Error::Protocol(format!(
            "generated statement {} ({:?}) also appears in the training set",
            e.id, e.text
        )));
    }
    let train_topics: HashSet<String> = train.topics().into_iter().collect();
    if let Some(t) = generated.topics().into_iter().find(|t| train_topics.contains(t)) {
        return Err(Error::Protocol(format!(
            "generated set topic {t:?} is also a training topic"
        )));
    }
    Ok(())
}

/// Trains one probe per seed on the whole training set and scores every
/// generated statement. Returns one score vector per seed.
pub fn generated_scores(
    train_index: &DatasetIndex,
    train_matrix: &ActivationMatrix,
    generated_index: &DatasetIndex,
    generated_matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    check_seeds(seeds)?;
    train_matrix.check_bound_to(train_index)?;
    generated_matrix.check_bound_to(generated_index)?;
    check_generated_disjoint(train_index, generated_index)?;
    if generated_index.is_empty() {
        return Err(Error::Parameter("generated set is empty".into()));
    }
    if train_matrix.dim() != generated_matrix.dim() {
        return Err(Error::Shape(format!(
            "training width {} differs from generated width {}",
            train_matrix.dim(),
            generated_matrix.dim()
        )));
    }
    let train_rows: Vec<usize> = (0..train_index.len()).collect();
    let train_labels = train_index.labels();
    let gen_rows: Vec<usize> = (0..generated_index.len()).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let trained = train_probe_on(train_matrix, &train_rows, &train_labels, &config.with_seed(seed))?;
            predict_rows(&trained.model, generated_matrix, &gen_rows)
        })
        .collect()
}

fn generated_report(
    run: RunLabel,
    protocol: Protocol,
    matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
    cell: EvalCell,
    notes: Vec<String>,
) -> EvalReport {
    EvalReport {
        label: run.label,
        scorer: run.scorer,
        protocol,
        source_model: matrix.source_model.clone(),
        layer: Some(matrix.layer),
        shots: None,
        config: Some(config.clone()),
        config_fingerprint: config.fingerprint(),
        seeds: seeds.to_vec(),
        average_accuracy: cell.accuracy_mean,
        cells: vec![cell],
        inputs: Vec::new(),
        notes,
    }
}

/// Accuracy at 0.5 and AUC on the full generated set, averaged over seeds.
pub fn eval_generated(
    train_index: &DatasetIndex,
    train_matrix: &ActivationMatrix,
    generated_index: &DatasetIndex,
    generated_matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
    run: Option<RunLabel>,
) -> Result<EvalReport> {
    let scores = generated_scores(train_index, train_matrix, generated_index, generated_matrix, seeds, config)?;
    Ok(summarize_generated(generated_index, generated_matrix, &scores, seeds, config, run))
}

/// Builds the generated-set report from per-seed scores.
pub fn summarize_generated(
    generated_index: &DatasetIndex,
    generated_matrix: &ActivationMatrix,
    scores: &[Vec<f64>],
    seeds: &[u64],
    config: &TrainConfig,
    run: Option<RunLabel>,
) -> EvalReport {
    let labels = generated_index.labels();
    let mut notes = Vec::new();
    let accuracies: Vec<f64> = scores
        .iter()
        .map(|s| accuracy(s, &labels, DEFAULT_THRESHOLD).unwrap_or(f64::NAN))
        .collect();
    let aucs: Vec<f64> = scores.iter().filter_map(|s| roc_auc(s, &labels).ok()).collect();
    if aucs.len() != scores.len() {
        notes.push("AUC undefined: generated set has a single class".into());
    }
    let cell = EvalCell {
        name: "generated".into(),
        layer: Some(generated_matrix.layer),
        seeds: seeds.to_vec(),
        accuracy_mean: mean(&accuracies),
        accuracies,
        auc_mean: (aucs.len() == scores.len()).then(|| mean(&aucs)),
        aucs,
        threshold: DEFAULT_THRESHOLD,
        thresholds: vec![DEFAULT_THRESHOLD; seeds.len()],
        config_fingerprint: config.fingerprint(),
        audit: None,
        test_count: labels.len(),
    };
    let run = run.unwrap_or_else(|| RunLabel::probe(generated_matrix));
    generated_report(run, Protocol::Generated, generated_matrix, seeds, config, cell, notes)
}

/// Threshold calibration on a stratified validation split of the generated
/// set; accuracy and AUC are measured on the remaining rows only.
#[allow(clippy::too_many_arguments)]
pub fn eval_generated_calibrated(
    train_index: &DatasetIndex,
    train_matrix: &ActivationMatrix,
    generated_index: &DatasetIndex,
    generated_matrix: &ActivationMatrix,
    seeds: &[u64],
    config: &TrainConfig,
    split_seed: u64,
    run: Option<RunLabel>,
) -> Result<EvalReport> {
    let labels = generated_index.labels();
    let split = split_validation(&labels, VALIDATION_FRACTION, split_seed)?;
    let scores = generated_scores(train_index, train_matrix, generated_index, generated_matrix, seeds, config)?;
    summarize_calibrated(generated_index, generated_matrix, &scores, &split, seeds, config, split_seed, run)
}

#[allow(clippy::too_many_arguments)]
pub fn summarize_calibrated(
    generated_index: &DatasetIndex,
    generated_matrix: &ActivationMatrix,
    scores: &[Vec<f64>],
    split: &super::calibrate::ValidationSplit,
    seeds: &[u64],
    config: &TrainConfig,
    split_seed: u64,
    run: Option<RunLabel>,
) -> Result<EvalReport> {
    let labels = generated_index.labels();
    let val_labels: Vec<bool> = split.validation.iter().map(|&r| labels[r]).collect();
    let test_labels: Vec<bool> = split.test.iter().map(|&r| labels[r]).collect();
    let mut thresholds = Vec::with_capacity(scores.len());
    let mut accuracies = Vec::with_capacity(scores.len());
    let mut aucs = Vec::with_capacity(scores.len());
    for s in scores {
        let val: Vec<f64> = split.validation.iter().map(|&r| s[r]).collect();
        let test: Vec<f64> = split.test.iter().map(|&r| s[r]).collect();
        let cal = calibrate_threshold(&val, &val_labels)?;
        thresholds.push(cal.threshold);
        accuracies.push(accuracy(&test, &test_labels, cal.threshold)?);
        if let Ok(a) = roc_auc(&test, &test_labels) {
            aucs.push(a);
        }
    }
    let mut notes = vec![format!(
        "threshold calibrated on {} validation rows (split seed {split_seed}); tested on {} rows",
        split.validation.len(),
        split.test.len()
    )];
    if aucs.len() != scores.len() {
        notes.push("AUC undefined: test split has a single class".into());
    }
    let cell = EvalCell {
        name: "generated".into(),
        layer: Some(generated_matrix.layer),
        seeds: seeds.to_vec(),
        accuracy_mean: mean(&accuracies),
        accuracies,
        auc_mean: (aucs.len() == scores.len()).then(|| mean(&aucs)),
        aucs,
        threshold: mean(&thresholds),
        thresholds,
        config_fingerprint: config.fingerprint(),
        audit: None,
        test_count: split.test.len(),
    };
    let run = run.unwrap_or_else(|| RunLabel::probe(generated_matrix));
    Ok(generated_report(
        run,
        Protocol::GeneratedCalibrated,
        generated_matrix,
        seeds,
        config,
        cell,
        notes,
    ))
}
