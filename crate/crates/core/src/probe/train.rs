use log::debug;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::model::{init_probe, InputScaling, ProbeModel};
use crate::error::{Error, Result};
use crate::store::ActivationMatrix;
use crate::util::{seeded_rng, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Standardize each input feature with training-set statistics.
    pub normalize_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            normalize_inputs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Parameter("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Short hash of every hyperparameter except the seed, so runs that differ
    /// only by seed share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.with_seed(0)).expect("config serializes");
        sha256_hex(&canonical)[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub model: ProbeModel,
    pub history: Vec<EpochLog>,
}

fn gather(features: &ActivationMatrix, rows: &[usize]) -> Array2<f64> {
    let dim = features.dim();
    let mut out = Array2::zeros((rows.len(), dim));
    for (dst, &r) in out.rows_mut().into_iter().zip(rows) {
        for (d, &s) in dst.into_iter().zip(features.row(r)) {
            *d = f64::from(s);
        }
    }
    out
}

fn fit_scaling(features: &ActivationMatrix, rows: &[usize]) -> InputScaling {
    let n = rows.len().max(1) as f64;
    let dim = features.dim();
    let mut mean = vec![0.0; dim];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(features.row(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for &i in rows {
        for ((s, &v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
            let d = f64::from(v) - m;
            *s += d * d;
        }
    }
    let inv_std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    InputScaling { mean, inv_std }
}

/// Trains a fresh probe on every row of `features`.
pub fn train_probe(features: &ActivationMatrix, labels: &[bool], config: &TrainConfig) -> Result<TrainedProbe> {
    let rows: Vec<usize> = (0..features.count()).collect();
    train_probe_on(features, &rows, labels, config)
}

/// Trains a fresh probe for exactly `config.epochs` passes of mini-batch Adam
/// over the given rows of `features` (`labels[k]` belongs to `rows[k]`).
/// Rows are reshuffled every epoch from a stream derived from the seed;
/// initial weights come from the same seed.
pub fn train_probe_on(
    features: &ActivationMatrix,
    rows: &[usize],
    labels: &[bool],
    config: &TrainConfig,
) -> Result<TrainedProbe> {
    config.validate()?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parameter("no training rows".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= features.count()) {
        return Err(Error::Shape(format!(
            "row {bad} out of range for {} rows",
            features.count()
        )));
    }
    let mut model = init_probe(features.dim(), config.seed)?;
    if config.normalize_inputs {
        model.scaling = Some(fit_scaling(features, rows));
    }
    let mut state = AdamState::new(&model);
    let mut shuffle_rng = seeded_rng(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_rows = Vec::with_capacity(config.batch_size);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            batch_rows.clear();
            batch_labels.clear();
            batch_rows.extend(batch.iter().map(|&k| rows[k]));
            batch_labels.extend(batch.iter().map(|&k| labels[k]));
            let x = gather(features, &batch_rows);
            let (loss, grads) = model.loss_and_gradients(x.view(), &batch_labels)?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut model, &mut state, &grads, config)?;
        }
        let scores = predict_rows(&model, features, rows)?;
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &y)| (s > 0.5) == y)
            .count();
        let log = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / n as f64,
            train_accuracy: correct as f64 / n as f64,
        };
        debug!(
            "seed {} epoch {}/{}: loss {:.5} train acc {:.4}",
            config.seed, log.epoch, config.epochs, log.mean_loss, log.train_accuracy
        );
        history.push(log);
    }
    if !model.params.all_finite() {
        return Err(Error::Validation("training diverged to non-finite parameters".into()));
    }
    Ok(TrainedProbe { model, history })
}

/// Probability of "true" for every row of `features`.
pub fn predict(model: &ProbeModel, features: &ActivationMatrix) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..features.count()).collect();
    predict_rows(model, features, &rows)
}

/// Probability of "true" for the given rows, in order.
pub fn predict_rows(model: &ProbeModel, features: &ActivationMatrix, rows: &[usize]) -> Result<Vec<f64>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(CHUNK) {
        let x = gather(features, chunk);
        out.extend(model.forward_batch(x.view())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_set(n: usize, dim: usize, seed: u64) -> (ActivationMatrix, Vec<bool>) {
        let mut rng = seeded_rng(seed);
        let data: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        (ActivationMatrix::new("synthetic", 0, dim, data).unwrap(), labels)
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = random_set(50, 12, 1);
        let cfg = TrainConfig { seed: 4, ..Default::default() };
        let a = train_probe(&x, &y, &cfg).unwrap();
        let b = train_probe(&x, &y, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        let c = train_probe(&x, &y, &cfg.with_seed(5)).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn default_run_logs_five_epochs() {
        let (x, y) = random_set(40, 6, 2);
        let t = train_probe(&x, &y, &TrainConfig::default()).unwrap();
        assert_eq!(t.history.len(), 5);
        assert_eq!(t.history.last().unwrap().epoch, 5);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { beta2: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn fingerprint_ignores_seed_only() {
        let a = TrainConfig::default();
        assert_eq!(a.fingerprint(), a.with_seed(99).fingerprint());
        let b = TrainConfig { batch_size: 16, ..Default::default() };
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn label_mismatch_is_shape_error() {
        let (x, _) = random_set(4, 3, 0);
        assert!(matches!(
            train_probe(&x, &[true], &TrainConfig::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn normalization_toggle_fits_scaling() {
        let (x, y) = random_set(30, 4, 3);
        let cfg = TrainConfig { normalize_inputs: true, ..Default::default() };
        let t = train_probe(&x, &y, &cfg).unwrap();
        let s = t.model.scaling.as_ref().unwrap();
        assert_eq!(s.mean.len(), 4);
        assert!(train_probe(&x, &y, &TrainConfig::default()).unwrap().model.scaling.is_none());
    }
}
