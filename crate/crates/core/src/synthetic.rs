//! Synthetic activation sets with known cross-topic behaviour, used to check
//! that the leave-one-topic-out harness measures transfer.
//!
//! * [`shared_signal`]: every topic labels rows by the same linear direction
//!   in a 10-dim subspace; the remaining coordinates carry topic-specific
//!   offsets and noise. A probe trained on other topics transfers.
//! * [`orthogonal_signal`]: topic `t` labels rows by a direction confined to
//!   its own block of coordinates; all other blocks are label-independent
//!   noise. Nothing learned on other topics transfers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::forge::statement_id;
use crate::store::{ActivationMatrix, DatasetIndex, IndexEntry};
use crate::util::seeded_rng;

pub const SIGNAL_DIM: usize = 10;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub topics: usize,
    pub rows_per_topic: usize,
    /// Minimum |projection| onto the labelling direction.
    pub margin: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            topics: 6,
            rows_per_topic: 200,
            margin: 1.0,
            seed: 0,
        }
    }
}

fn topic_name(t: usize) -> String {
    format!("topic-{}", t + 1)
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Draws a standard-normal vector whose projection on `dir` has the wanted
/// sign and at least `margin` magnitude.
fn labelled_gaussian<R: Rng>(rng: &mut R, dir: &[f64], label: bool, margin: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dir.len()).map(|_| StandardNormal.sample(rng)).collect();
        let proj: f64 = v.iter().zip(dir).map(|(a, b)| a * b).sum();
        if proj.abs() >= margin && (proj > 0.0) == label {
            return v;
        }
    }
}

fn build(spec: &SyntheticSpec, dim: usize, name: &str, rows: Vec<(usize, bool, Vec<f64>)>) -> Result<(DatasetIndex, ActivationMatrix)> {
    let mut entries = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * dim);
    for (i, (t, label, x)) in rows.into_iter().enumerate() {
        let topic = topic_name(t);
        let text = format!("{name} statement {i} ({topic}, seed {})", spec.seed);
        entries.push(IndexEntry {
            id: statement_id(&topic, &text),
            topic,
            label,
            text,
        });
        data.extend(x.into_iter().map(|v| v as f32));
    }
    Ok((DatasetIndex::new(entries)?, ActivationMatrix::new(name, 0, dim, data)?))
}

fn check(spec: &SyntheticSpec) -> Result<()> {
    if spec.topics < 2 || spec.rows_per_topic < 2 {
        return Err(Error::Parameter("need at least 2 topics with 2 rows each".into()));
    }
    Ok(())
}

/// Shared-signal construction. `dim` must be at least [`SIGNAL_DIM`].
pub fn shared_signal(spec: &SyntheticSpec, dim: usize) -> Result<(DatasetIndex, ActivationMatrix)> {
    check(spec)?;
    if dim < SIGNAL_DIM {
        return Err(Error::Parameter(format!("dim must be >= {SIGNAL_DIM}")));
    }
    let mut rng = seeded_rng(spec.seed);
    let direction = unit_vector(&mut rng, SIGNAL_DIM);
    let nuisance = dim - SIGNAL_DIM;
    let offsets: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| (0..nuisance).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut rows = Vec::with_capacity(spec.topics * spec.rows_per_topic);
    for (t, offset) in offsets.iter().enumerate() {
        for i in 0..spec.rows_per_topic {
            let label = i % 2 == 0;
            let mut x = labelled_gaussian(&mut rng, &direction, label, spec.margin);
            x.extend(offset.iter().map(|o| o + rng.sample::<f64, _>(StandardNormal)));
            rows.push((t, label, x));
        }
    }
    build(spec, dim, "shared-signal", rows)
}

/// Orthogonal construction: `topics` blocks of [`SIGNAL_DIM`] coordinates.
pub fn orthogonal_signal(spec: &SyntheticSpec) -> Result<(DatasetIndex, ActivationMatrix)> {
    check(spec)?;
    let dim = spec.topics * SIGNAL_DIM;
    let mut rng = seeded_rng(spec.seed);
    let directions: Vec<Vec<f64>> = (0..spec.topics).map(|_| unit_vector(&mut rng, SIGNAL_DIM)).collect();
    let mut rows = Vec::with_capacity(spec.topics * spec.rows_per_topic);
    for (t, dir) in directions.iter().enumerate() {
        for i in 0..spec.rows_per_topic {
            let label = i % 2 == 0;
            let mut x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let block = labelled_gaussian(&mut rng, dir, label, spec.margin);
            x[t * SIGNAL_DIM..(t + 1) * SIGNAL_DIM].copy_from_slice(&block);
            rows.push((t, label, x));
        }
    }
    build(spec, dim, "orthogonal-signal", rows)
}

/// Random matrix with random labels for capacity checks.
pub fn random_labelled(rows: usize, dim: usize, seed: u64) -> Result<(ActivationMatrix, Vec<bool>)> {
    let mut rng = seeded_rng(seed);
    let data: Vec<f32> = (0..rows * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let labels = (0..rows).map(|_| rng.gen_bool(0.5)).collect();
    Ok((ActivationMatrix::new("random", 0, dim, data)?, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_balance() {
        let spec = SyntheticSpec { rows_per_topic: 20, ..Default::default() };
        let (idx, m) = shared_signal(&spec, 16).unwrap();
        assert_eq!(idx.len(), 120);
        assert_eq!(m.count(), 120);
        assert_eq!(m.dim(), 16);
        assert_eq!(idx.topics().len(), 6);
        assert_eq!(idx.labels().iter().filter(|&&l| l).count(), 60);
        let (idx, m) = orthogonal_signal(&spec).unwrap();
        assert_eq!(m.dim(), 60);
        assert_eq!(idx.len(), 120);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec { rows_per_topic: 10, ..Default::default() };
        assert_eq!(shared_signal(&spec, 12).unwrap().1, shared_signal(&spec, 12).unwrap().1);
    }
}
