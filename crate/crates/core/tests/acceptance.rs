//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without any language model: it uses random probes,
//! synthetic activation sets and the bundled sample tables.
//!
//! Run with `cargo test -p truthprobe --test acceptance -- --nocapture`
//! (the target has no libtest harness, so output is printed either way).

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use truthprobe::eval::{calibrate_threshold, candidate_thresholds, cohens_kappa, leave_one_topic_out, roc_auc};
use truthprobe::forge::{dataset_to_jsonl, load_property_table, Origin};
use truthprobe::probe::{bce, init_probe, predict, train_probe, TrainConfig};
use truthprobe::recipe::ForgeRecipe;
use truthprobe::store::{activation_matrix_from_bytes, read_activation_matrix, write_activation_matrix, ActivationMatrix};
use truthprobe::synthetic::{orthogonal_signal, random_labelled, shared_signal, SyntheticSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// ---------------------------------------------------------------------------
// Gradient oracle
// ---------------------------------------------------------------------------

/// 20 random [8,256,128,64,1] probes, batches of 4: every parameter's
/// analytic gradient against a central difference (h = 1e-3) computed by the
/// reference network. Stencils that cross a ReLU kink or touch the clamp band
/// are not differentiable there and are counted as skipped.
fn gradient_oracle() -> Outcome {
    const PROBES: u64 = 20;
    const TOL: f64 = 1e-4;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut total = 0usize;
    for seed in 0..PROBES {
        let mut r = rng(1000 + seed);
        let model = init_probe(8, seed).expect("init");
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..8).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        let ys: Vec<bool> = (0..4).map(|_| r.gen_bool(0.5)).collect();
        let x = Array2::from_shape_vec((4, 8), xs.concat()).expect("shape");
        let (_, grads) = model.loss_and_gradients(x.view(), &ys).expect("gradients");
        let net = RefNet::from_model(&model);
        let coords = sample_coords(&net, usize::MAX, &mut r);
        let check = central_difference_check_cached(&net, &xs, &ys, &grads, &coords, 1e-3);
        worst = worst.max(check.max_rel_err);
        checked += check.checked;
        skipped += check.skipped;
        total += coords.len();
    }
    let elapsed = start.elapsed();
    let enough = checked * 100 >= total * 95;
    outcome(
        worst < TOL && elapsed < Duration::from_secs(60) && enough,
        format!(
            "{PROBES} probes, {checked}/{total} coordinates checked ({skipped} non-differentiable stencils skipped), \
             max rel err {worst:.2e} (< {TOL:e}), {:.1} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

fn auc_oracle() -> Outcome {
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (scores, labels) = random_scored_set(&mut r, 50);
        let got = roc_auc(&scores, &labels).expect("both classes");
        worst = worst.max((got - pairwise_auc(&scores, &labels)).abs());
    }
    outcome(worst <= 1e-12, format!("200 sets (n <= 50), max |rank - pairs| = {worst:.1e} (<= 1e-12)"))
}

fn threshold_oracle() -> Outcome {
    let mut r = rng(77);
    let mut beaten = 0;
    let mut misreported = 0;
    for _ in 0..200 {
        let (scores, labels) = random_scored_set(&mut r, 50);
        let cal = calibrate_threshold(&scores, &labels).expect("both classes");
        let achieved = count_accuracy(&scores, &labels, cal.threshold);
        if achieved != cal.accuracy {
            misreported += 1;
        }
        // Brute force over every candidate and over every observed score.
        let best_candidate = candidate_thresholds(&scores)
            .into_iter()
            .map(|t| count_accuracy(&scores, &labels, t))
            .fold(0.0, f64::max);
        let best_any = best_candidate.max(brute_force_best_accuracy(&scores, &labels));
        if best_any > achieved {
            beaten += 1;
        }
    }
    outcome(
        beaten == 0 && misreported == 0,
        format!("200 validation sets, beaten {beaten} times, accuracy misreported {misreported} times"),
    )
}

// ---------------------------------------------------------------------------
// Probe capacity
// ---------------------------------------------------------------------------

fn capacity_check() -> Outcome {
    let (m, labels) = random_labelled(64, 128, 9).expect("matrix");
    let cfg = TrainConfig {
        epochs: 500,
        seed: 9,
        ..TrainConfig::default()
    };
    let trained = train_probe(&m, &labels, &cfg).expect("train");
    let scores = predict(&trained.model, &m).expect("predict");
    let acc = count_accuracy(&scores, &labels, 0.5);
    let first = trained
        .history
        .iter()
        .find(|e| e.train_accuracy == 1.0)
        .map(|e| e.epoch.to_string())
        .unwrap_or_else(|| "never".into());
    outcome(
        acc == 1.0,
        format!("64 random 128-dim vectors: train accuracy {acc:.4} after 500 epochs (first perfect epoch: {first})"),
    )
}

// ---------------------------------------------------------------------------
// Transfer harness
// ---------------------------------------------------------------------------

fn transfer_check() -> Outcome {
    let spec = SyntheticSpec::default();
    let seeds = [0, 1, 2];
    let cfg = TrainConfig::default();
    let (idx, m) = shared_signal(&spec, 64).expect("shared");
    let shared = leave_one_topic_out(&idx, &m, &seeds, &cfg).expect("loto");
    let (idx, m) = orthogonal_signal(&spec).expect("orthogonal");
    let orthogonal = leave_one_topic_out(&idx, &m, &seeds, &cfg).expect("loto");
    let leaks: usize = shared
        .cells
        .iter()
        .chain(&orthogonal.cells)
        .filter_map(|c| c.audit.as_ref())
        .map(|a| a.held_out_rows_in_train)
        .sum();
    let (s, o) = (shared.average_accuracy, orthogonal.average_accuracy);
    outcome(
        s >= 0.95 && (o - 0.5).abs() <= 0.1 && leaks == 0,
        format!(
            "{} topics x {} rows, 3 seeds: shared-signal LOTO mean {s:.4} (>= 0.95), \
             orthogonal LOTO mean {o:.4} (0.5 +/- 0.1), held-out rows in train {leaks}",
            spec.topics, spec.rows_per_topic
        ),
    )
}

// ---------------------------------------------------------------------------
// Dataset generator
// ---------------------------------------------------------------------------

fn fill(pattern: &str, entity: &str, value: &str) -> String {
    pattern.replace("{e}", entity).replace("{v}", value)
}

fn generator_check() -> Outcome {
    let path = data_dir().join("forge.toml");
    let recipe = match ForgeRecipe::load(&path) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("cannot load {}: {e}", path.display())),
    };
    let first = recipe.forge().expect("forge");
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    let mut false_checked = 0usize;

    for topic in &first {
        let (t, f, k) = (
            topic.dataset.true_count(),
            topic.dataset.false_count(),
            topic.dataset.skipped.len(),
        );
        summary.push(format!("{} {t}/{f}", topic.topic));
        if t.abs_diff(f) > k {
            problems.push(format!("{}: {t} true vs {f} false with {k} skips", topic.topic));
        }
    }

    // Independent recount of legal false statements, straight from the CSVs.
    for spec in &recipe.topics {
        let table = load_property_table(&recipe.resolve(&spec.table), &spec.name, &spec.entity_column).expect("table");
        let rows: Vec<HashMap<&str, &str>> = table
            .records()
            .map(|r| table.columns().iter().map(|c| (c.as_str(), r.get(c).unwrap())).collect())
            .collect();
        let mut legal_false: HashMap<String, ()> = HashMap::new();
        let mut true_texts: HashMap<String, ()> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            let entity = row[spec.entity_column.as_str()];
            for tpl in &spec.templates {
                let own = row[tpl.attribute.as_str()];
                true_texts.insert(fill(&tpl.pattern, entity, own), ());
                for (j, other) in rows.iter().enumerate() {
                    let v = other[tpl.attribute.as_str()];
                    if j != i && v != own {
                        legal_false.insert(fill(&tpl.pattern, entity, v), ());
                    }
                }
            }
        }
        let forged = first.iter().find(|t| t.topic == spec.name).expect("topic present");
        for s in &forged.dataset.statements {
            match (s.label, s.origin) {
                (true, Origin::TableTrue) if true_texts.contains_key(&s.text) => {}
                (false, Origin::TableFalse) if legal_false.contains_key(&s.text) => false_checked += 1,
                _ => problems.push(format!("{}: illegal statement {:?} ({})", spec.name, s.text, s.label)),
            }
        }
    }

    // Byte-identical regeneration.
    let second = recipe.forge().expect("forge");
    let bytes = |ts: &[truthprobe::recipe::ForgedTopic]| -> Vec<Vec<u8>> {
        ts.iter().map(|t| dataset_to_jsonl(&t.dataset.statements).unwrap()).collect()
    };
    let identical = bytes(&first) == bytes(&second);
    if !identical {
        problems.push("regeneration differs".into());
    }
    let mut other_seed = recipe.clone();
    other_seed.seed ^= 1;
    let reseeded = bytes(&other_seed.forge().expect("forge")) != bytes(&first);

    outcome(
        problems.is_empty() && reseeded,
        format!(
            "true/false per topic [{}]; {false_checked} false values traced to other rows; \
             regeneration identical: {identical}; other seed differs: {reseeded}{}",
            summary.join(", "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// Activation store
// ---------------------------------------------------------------------------

fn random_finite_f32<R: Rng>(r: &mut R) -> f32 {
    loop {
        let v = f32::from_bits(r.gen());
        if v.is_finite() {
            return v;
        }
    }
}

fn store_round_trip() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let mut r = rng(31);
    let mut failures = 0;
    let mut empty = 0;
    for i in 0..100 {
        let dim = r.gen_range(1..=64);
        let count = if i % 10 == 0 { 0 } else { r.gen_range(1..=40) };
        if count == 0 {
            empty += 1;
        }
        let data: Vec<f32> = (0..dim * count).map(|_| random_finite_f32(&mut r)).collect();
        let m = ActivationMatrix::new("round-trip", i as u32, dim, data).expect("matrix");
        let path = dir.path().join(format!("m{i}.bin"));
        write_activation_matrix(&m, &path).expect("write");
        let on_disk = std::fs::read(&path).expect("read bytes");
        let back = read_activation_matrix(&path).expect("read");
        let same_bits = back.dim() == dim
            && back.count() == count
            && back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.data().len() == m.data().len();
        let reparsed = activation_matrix_from_bytes(&on_disk).expect("parse");
        if !same_bits || on_disk != back.to_bytes() || reparsed.to_bytes() != on_disk {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("100 random matrices ({empty} with count = 0, arbitrary finite bit patterns), {failures} mismatches"),
    )
}

// ---------------------------------------------------------------------------
// Spot values
// ---------------------------------------------------------------------------

fn spot_values() -> Outcome {
    let kappa = cohens_kappa(&[true, true, false, false], &[true, false, false, false]).expect("kappa");
    let auc = roc_auc(&[0.9, 0.6, 0.4, 0.2], &[true, false, true, false]).expect("auc");
    let loss = bce(0.5, true);
    let ln2 = std::f64::consts::LN_2;
    outcome(
        (kappa - 0.5).abs() < 1e-12 && (auc - 0.75).abs() < 1e-12 && (loss - ln2).abs() < 1e-12,
        format!("kappa {kappa} (0.5), AUC {auc} (0.75), BCE(0.5, 1) {loss:.15} (ln 2 = {ln2:.15})"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient oracle", gradient_oracle),
        ("AUC oracle", auc_oracle),
        ("threshold oracle", threshold_oracle),
        ("capacity check", capacity_check),
        ("transfer harness check", transfer_check),
        ("dataset generator", generator_check),
        ("store round trip", store_round_trip),
        ("metric spot values", spot_values),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
