//! `synth`: writes a complete synthetic store (index, per-layer matrices,
//! embeddings, few-shot scores, a held-aside evaluation set, an extraction
//! manifest and a ready-to-run pipeline configuration) so that every stage
//! can be exercised without a language model.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use truthprobe::forge::{dataset_to_jsonl, LabeledStatement, Origin};
use truthprobe::probe::sigmoid;
use truthprobe::store::{
    write_activation_matrix, write_few_shot, ActivationMatrix, DatasetIndex, ExtractionManifest, FewShotRecord,
    ManifestFile, ManifestFileKind,
};
use truthprobe::synthetic::{orthogonal_signal, shared_signal, SyntheticSpec};
use truthprobe::util::{file_sha256, seeded_rng, write_atomic};

use crate::commands::Output;
use crate::error::{CliError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    /// Every topic shares one labelling direction: probes transfer.
    Shared,
    /// Each topic has its own labelling block: probes do not transfer.
    Orthogonal,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub out: PathBuf,
    pub kind: SynthKind,
    pub topics: usize,
    pub rows_per_topic: usize,
    pub dim: usize,
    pub depth: u32,
    pub layers: Vec<u32>,
    pub seed: u64,
}

const EMBEDDING_DIM: usize = 24;

fn build(kind: SynthKind, spec: &SyntheticSpec, dim: usize) -> truthprobe::Result<(DatasetIndex, ActivationMatrix)> {
    match kind {
        SynthKind::Shared => shared_signal(spec, dim),
        SynthKind::Orthogonal => orthogonal_signal(spec),
    }
}

/// Splits rows of the last topic off as the held-aside evaluation set.
fn split_last_topic(index: &DatasetIndex) -> (Vec<usize>, Vec<usize>) {
    let last = index.topics().pop().expect("at least one topic");
    (0..index.len()).partition(|&i| index.entries()[i].topic != last)
}

fn statements(index: &DatasetIndex, origin: Origin) -> truthprobe::Result<Vec<LabeledStatement>> {
    index
        .entries()
        .iter()
        .map(|e| LabeledStatement::new(e.topic.clone(), e.text.clone(), e.label, origin))
        .collect()
}

fn few_shot(index: &DatasetIndex, seed: u64) -> Vec<FewShotRecord> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    for shots in [3, 5] {
        for e in index.entries() {
            // A weak, noisy preference for the right answer.
            let signal = if e.label { 0.4 } else { -0.4 } + rng.sample::<f64, _>(StandardNormal);
            let p = sigmoid(signal);
            out.push(FewShotRecord {
                id: e.id.clone(),
                p_true: 0.9 * p + 0.05,
                p_false: 0.9 * (1.0 - p) + 0.05,
                shots,
            });
        }
    }
    out
}

fn manifest_entry(base: &Path, kind: ManifestFileKind, layer: Option<u32>, name: &str) -> truthprobe::Result<ManifestFile> {
    Ok(ManifestFile {
        kind,
        layer,
        path: PathBuf::from(name),
        sha256: file_sha256(&base.join(name))?,
    })
}

pub fn synth(o: &SynthOptions) -> Result<Output, CliError> {
    if o.layers.is_empty() {
        return Err(CliError::Config("synth needs at least one layer".into()));
    }
    let spec = SyntheticSpec {
        topics: o.topics + 1,
        rows_per_topic: o.rows_per_topic,
        seed: o.seed,
        ..SyntheticSpec::default()
    };
    let (full_index, _) = build(o.kind, &spec, o.dim).stage("synth")?;
    let (train_rows, gen_rows) = split_last_topic(&full_index);
    let train_index = full_index.select(&train_rows);
    let gen_index = full_index.select(&gen_rows);
    let dir = &o.out;
    let gen_dir = dir.join("generated");

    write_atomic(&dir.join("statements.jsonl"), &dataset_to_jsonl(&statements(&train_index, Origin::Curated).stage("synth")?).stage("synth")?)
        .stage("write")?;
    write_atomic(&gen_dir.join("statements.jsonl"), &dataset_to_jsonl(&statements(&gen_index, Origin::Generated).stage("synth")?).stage("synth")?)
        .stage("write")?;

    let mut files = Vec::new();
    let mut gen_files = Vec::new();
    for &layer in &o.layers {
        // Each layer is an independent draw; labels follow the same row pattern.
        let layer_spec = SyntheticSpec {
            seed: o.seed.wrapping_add(u64::from(layer)),
            ..spec.clone()
        };
        let (_, m) = build(o.kind, &layer_spec, o.dim).stage("synth")?;
        let name = format!("layer-{layer}.bin");
        write_activation_matrix(&m.select(&train_rows).with_provenance("synthetic", layer), &dir.join(&name)).stage("write")?;
        write_activation_matrix(&m.select(&gen_rows).with_provenance("synthetic", layer), &gen_dir.join(&name)).stage("write")?;
        files.push(manifest_entry(dir, ManifestFileKind::Activations, Some(layer), &name).stage("synth")?);
        gen_files.push(manifest_entry(&gen_dir, ManifestFileKind::Activations, Some(layer), &name).stage("synth")?);
    }

    let emb_spec = SyntheticSpec {
        seed: o.seed.wrapping_add(10_000),
        margin: 0.1,
        ..spec.clone()
    };
    let (_, emb) = build(SynthKind::Shared, &emb_spec, EMBEDDING_DIM).stage("synth")?;
    write_activation_matrix(&emb.select(&train_rows), &dir.join("embeddings.bin")).stage("write")?;
    write_activation_matrix(&emb.select(&gen_rows), &gen_dir.join("embeddings.bin")).stage("write")?;
    files.push(manifest_entry(dir, ManifestFileKind::Embeddings, None, "embeddings.bin").stage("synth")?);
    gen_files.push(manifest_entry(&gen_dir, ManifestFileKind::Embeddings, None, "embeddings.bin").stage("synth")?);

    write_few_shot(&dir.join("few-shot.csv"), &few_shot(&train_index, o.seed)).stage("write")?;
    write_few_shot(&gen_dir.join("few-shot.csv"), &few_shot(&gen_index, o.seed ^ 1)).stage("write")?;
    files.push(manifest_entry(dir, ManifestFileKind::FewShot, None, "few-shot.csv").stage("synth")?);
    gen_files.push(manifest_entry(&gen_dir, ManifestFileKind::FewShot, None, "few-shot.csv").stage("synth")?);

    for (base, index, files) in [(dir, &train_index, files), (&gen_dir, &gen_index, gen_files)] {
        let manifest = ExtractionManifest {
            model_id: "synthetic".into(),
            depth: Some(o.depth),
            layer_convention: "decoder block outputs numbered 1..depth".into(),
            token_position: "final".into(),
            prompt_template: None,
            index_ids_sha256: index.ids_checksum(),
            files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&base.join("manifest.json"), &bytes).stage("write")?;
    }

    let layers: Vec<String> = o.layers.iter().map(u32::to_string).collect();
    let config = format!(
        r#"# Pipeline configuration for a synthetic store. Paths are relative to this file.
[paths]
index = "statements.jsonl"
activations = "layer-{{layer}}.bin"
manifest = "manifest.json"
embeddings = "embeddings.bin"
few_shot = "few-shot.csv"
generated_index = "generated/statements.jsonl"
generated_activations = "generated/layer-{{layer}}.bin"
generated_embeddings = "generated/embeddings.bin"
generated_few_shot = "generated/few-shot.csv"
reports = "reports"

[model]
name = "synthetic"
depth = {depth}
layers = [{layers}]

[train]
epochs = 5
batch_size = 32
learning_rate = 0.001

[eval]
seeds = [0, 1, 2]
generated_seeds = [0, 1, 2]
split_seed = 0
shots = [3, 5]
"#,
        depth = o.depth,
        layers = layers.join(", ")
    );
    let config_path = dir.join("pipeline.toml");
    write_atomic(&config_path, config.as_bytes()).stage("write")?;

    let text = format!(
        "wrote synthetic store: {} training rows in {} topics, {} held-aside rows, {} layer(s) of dim {}\nconfig: {}\n",
        train_index.len(),
        train_index.topics().len(),
        gen_index.len(),
        o.layers.len(),
        if o.kind == SynthKind::Orthogonal { spec.topics * truthprobe::synthetic::SIGNAL_DIM } else { o.dim },
        config_path.display()
    );
    let json = json!({
        "config": config_path.display().to_string(),
        "train_rows": train_index.len(),
        "generated_rows": gen_index.len(),
        "layers": o.layers,
    });
    Ok(Output { text, json })
}
