//! One function per subcommand. Each returns a [`Output`] holding both the
//! human-readable text and the JSON form; `main` prints whichever was asked.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};
use truthprobe::baseline::{embedding_baseline, few_shot_set_report, few_shot_topic_report, EmbeddingProtocol};
use truthprobe::eval::{
    check_generated_disjoint, eval_generated, eval_generated_calibrated, leave_one_topic_out_with, render_reports,
    EvalReport, InputChecksum, LotoOptions, RunLabel, ScorerKind,
};
use truthprobe::forge::dataset_to_jsonl;
use truthprobe::recipe::{combined_statements, ForgeRecipe};
use truthprobe::store::{
    layer_label, read_activation_matrix, read_activation_matrix_raw, read_few_shot, ActivationMatrix, DatasetIndex,
    ExtractionManifest, FewShotRecord, LayerSet,
};
use truthprobe::util::{file_sha256, sha256_hex, write_atomic};

use crate::config::{layer_path, PipelineConfig};
use crate::error::{CliError, Stage};

pub struct Output {
    pub text: String,
    pub json: Value,
}

fn checksum(role: &str, path: &Path) -> Result<InputChecksum, CliError> {
    Ok(InputChecksum {
        role: role.to_string(),
        path: path.display().to_string(),
        sha256: file_sha256(path).stage("checksum")?,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes).stage("write")
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TopicSummary {
    topic: String,
    source: String,
    true_count: usize,
    false_count: usize,
    skipped: usize,
    total: usize,
    file: String,
    sha256: String,
}

pub fn generate(cfg: &PipelineConfig, recipe_path: Option<&Path>) -> Result<Output, CliError> {
    let recipe_path = match recipe_path {
        Some(p) => p,
        None => cfg.require(&cfg.paths.recipe, "recipe")?.as_path(),
    };
    let out_dir = cfg.require(&cfg.paths.datasets, "datasets")?;
    let recipe = ForgeRecipe::load(recipe_path).stage("recipe")?;
    let forged = recipe.forge().stage("generate")?;
    let all = combined_statements(&forged).stage("generate")?;

    let mut topics = Vec::new();
    for t in &forged {
        let bytes = dataset_to_jsonl(&t.dataset.statements).stage("generate")?;
        let file = out_dir.join(format!("{}.jsonl", t.topic));
        write_atomic(&file, &bytes).stage("write")?;
        topics.push(TopicSummary {
            topic: t.topic.clone(),
            source: t.source.display().to_string(),
            true_count: t.dataset.true_count(),
            false_count: t.dataset.false_count(),
            skipped: t.dataset.skipped.len(),
            total: t.dataset.statements.len(),
            file: file.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
    }
    let combined = dataset_to_jsonl(&all).stage("generate")?;
    let combined_path = out_dir.join("statements.jsonl");
    write_atomic(&combined_path, &combined).stage("write")?;

    let mut inputs = vec![checksum("recipe", recipe_path)?];
    for p in recipe.input_paths() {
        inputs.push(checksum("table", &p)?);
    }
    let skipped: Vec<_> = forged.iter().flat_map(|t| t.dataset.skipped.clone()).collect();
    let summary = json!({
        "seed": recipe.seed,
        "statements": combined_path.display().to_string(),
        "statements_sha256": sha256_hex(&combined),
        "total": all.len(),
        "topics": topics,
        "skipped": skipped,
        "inputs": inputs,
    });
    write_json(&out_dir.join("generate-summary.json"), &summary)?;

    let mut text = String::new();
    let _ = writeln!(text, "{:<14} {:>6} {:>6} {:>8} {:>6}", "topic", "true", "false", "skipped", "total");
    for t in &topics {
        let _ = writeln!(
            text,
            "{:<14} {:>6} {:>6} {:>8} {:>6}",
            t.topic, t.true_count, t.false_count, t.skipped, t.total
        );
    }
    let _ = writeln!(text, "{:<14} {:>6} {:>6} {:>8} {:>6}", "total",
        topics.iter().map(|t| t.true_count).sum::<usize>(),
        topics.iter().map(|t| t.false_count).sum::<usize>(),
        skipped.len(),
        all.len());
    let _ = writeln!(text, "wrote {} (seed {})", combined_path.display(), recipe.seed);
    Ok(Output { text, json: summary })
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Default, Serialize)]
struct Validation {
    checked: Vec<String>,
    violations: Vec<String>,
}

impl Validation {
    fn check_matrix(&mut self, role: &str, path: &Path, index: Option<&DatasetIndex>) -> Option<ActivationMatrix> {
        let m = match read_activation_matrix_raw(path) {
            Ok(m) => m,
            Err(e) => {
                self.violations.push(format!("{role}: {e}"));
                return None;
            }
        };
        self.checked.push(format!("{role}: {} ({} x {})", path.display(), m.count(), m.dim()));
        if let Some(index) = index {
            if m.count() != index.len() {
                self.violations.push(format!(
                    "{role}: matrix has {} rows but the index has {} entries ({})",
                    m.count(),
                    index.len(),
                    path.display()
                ));
            }
        }
        for row in m.non_finite_rows() {
            let id = index
                .and_then(|ix| ix.entries().get(row))
                .map(|e| e.id.as_str())
                .unwrap_or("?");
            self.violations.push(format!("{role}: non-finite value in row {row} (id {id})"));
        }
        Some(m)
    }

    fn load_index(&mut self, role: &str, path: &Path) -> Option<DatasetIndex> {
        match DatasetIndex::load(path) {
            Ok(ix) => {
                self.checked.push(format!("{role}: {} ({} entries)", path.display(), ix.len()));
                Some(ix)
            }
            Err(e) => {
                self.violations.push(format!("{role}: {e}"));
                None
            }
        }
    }

    fn check_few_shot(&mut self, role: &str, path: &Path, index: Option<&DatasetIndex>) {
        if let Some(index) = index {
            match read_few_shot(path, index) {
                Ok(r) => self.checked.push(format!("{role}: {} ({} records)", path.display(), r.len())),
                Err(e) => self.violations.push(format!("{role}: {e}")),
            }
        }
    }
}

pub fn validate(cfg: &PipelineConfig) -> Result<Output, CliError> {
    let mut v = Validation::default();
    let index_path = cfg.require(&cfg.paths.index, "index")?;
    let index = v.load_index("index", index_path);

    if let Some(depth) = cfg.model.depth {
        if let Err(e) = LayerSet::new(depth, cfg.model.layers.clone()) {
            v.violations.push(format!("layers: {e}"));
        }
    }
    let mut dims = Vec::new();
    if let Some(pattern) = &cfg.paths.activations {
        for &layer in &cfg.model.layers {
            let role = format!("layer {layer}");
            if let Some(m) = v.check_matrix(&role, &layer_path(pattern, layer), index.as_ref()) {
                dims.push((role, m.dim()));
            }
        }
    }
    if let Some((_, d0)) = dims.first() {
        for (role, d) in &dims[1..] {
            if d != d0 {
                v.violations.push(format!("{role}: dim {d} differs from {} of the first layer", d0));
            }
        }
    }
    if let Some(p) = &cfg.paths.embeddings {
        v.check_matrix("embeddings", p, index.as_ref());
    }
    if let Some(p) = &cfg.paths.few_shot {
        v.check_few_shot("few-shot", p, index.as_ref());
    }
    if let Some(p) = &cfg.paths.manifest {
        match ExtractionManifest::load(p) {
            Ok(manifest) => {
                if let Some(index) = &index {
                    let base = p.parent().unwrap_or_else(|| Path::new("."));
                    let problems = manifest.verify(index, base);
                    v.violations.extend(problems.into_iter().map(|m| format!("manifest: {m}")));
                }
                v.checked.push(format!("manifest: {} ({} files)", p.display(), manifest.files.len()));
            }
            Err(e) => v.violations.push(format!("manifest: {e}")),
        }
    }
    if let Some(p) = &cfg.paths.generated_index {
        let generated = v.load_index("generated index", p);
        if let (Some(train), Some(gen)) = (&index, &generated) {
            if let Err(e) = check_generated_disjoint(train, gen) {
                v.violations.push(format!("generated index: {e}"));
            }
        }
        if let Some(pattern) = &cfg.paths.generated_activations {
            for &layer in &cfg.model.layers {
                v.check_matrix(&format!("generated layer {layer}"), &layer_path(pattern, layer), generated.as_ref());
            }
        }
        if let Some(e) = &cfg.paths.generated_embeddings {
            v.check_matrix("generated embeddings", e, generated.as_ref());
        }
        if let Some(f) = &cfg.paths.generated_few_shot {
            v.check_few_shot("generated few-shot", f, generated.as_ref());
        }
    }

    let mut text = String::new();
    for c in &v.checked {
        let _ = writeln!(text, "checked  {c}");
    }
    for m in &v.violations {
        let _ = writeln!(text, "VIOLATION  {m}");
    }
    let ok = v.violations.is_empty();
    let _ = writeln!(
        text,
        "{}: {} violation(s)",
        if ok { "pass" } else { "fail" },
        v.violations.len()
    );
    let json = json!({ "ok": ok, "checked": v.checked, "violations": v.violations });
    Ok(Output { text, json })
}

// ---------------------------------------------------------------------------
// train-eval and calibrate
// ---------------------------------------------------------------------------

struct Loaded {
    index: DatasetIndex,
    inputs: Vec<InputChecksum>,
}

fn load_index(role: &str, path: &Path) -> Result<Loaded, CliError> {
    Ok(Loaded {
        index: DatasetIndex::load(path).stage(role)?,
        inputs: vec![checksum(role, path)?],
    })
}

fn load_matrix(cfg: &PipelineConfig, role: &str, path: &Path, layer: u32) -> Result<(ActivationMatrix, InputChecksum), CliError> {
    let m = read_activation_matrix(path)
        .stage(role)?
        .with_provenance(cfg.model.name.clone(), layer);
    Ok((m, checksum(role, path)?))
}

fn finish(cfg: &PipelineConfig, mut report: EvalReport, inputs: Vec<InputChecksum>) -> Result<EvalReport, CliError> {
    if let Some(src) = &cfg.source {
        report.inputs.push(checksum("config", src)?);
    }
    report.inputs.extend(inputs);
    if report.source_model.is_empty() {
        report.source_model = cfg.model.name.clone();
    }
    Ok(report)
}

fn report_file_name(r: &EvalReport) -> String {
    let protocol = serde_json::to_value(r.protocol).expect("protocol serializes");
    format!("{}--{}.json", protocol.as_str().unwrap_or("protocol"), r.label)
}

fn emit(cfg: &PipelineConfig, reports: Vec<EvalReport>) -> Result<Output, CliError> {
    let dir = cfg.require(&cfg.paths.reports, "reports")?;
    let mut files = Vec::new();
    for r in &reports {
        let path = dir.join(report_file_name(r));
        write_json(&path, r)?;
        files.push(path);
    }
    let mut text = render_reports(&reports);
    for f in &files {
        let _ = writeln!(text, "wrote {}", f.display());
    }
    Ok(Output {
        text,
        json: serde_json::to_value(&reports).expect("reports serialize"),
    })
}

fn few_shot_records(path: &Path, index: &DatasetIndex, role: &str) -> Result<(Vec<FewShotRecord>, InputChecksum), CliError> {
    Ok((read_few_shot(path, index).stage(role)?, checksum(role, path)?))
}

fn generated_set(cfg: &PipelineConfig) -> Result<Option<(Loaded, &str)>, CliError> {
    match &cfg.paths.generated_index {
        None => Ok(None),
        Some(p) => {
            let pattern = cfg.require(&cfg.paths.generated_activations, "generated_activations")?;
            Ok(Some((load_index("generated index", p)?, pattern.as_str())))
        }
    }
}

fn embedding_label() -> RunLabel {
    RunLabel {
        label: "embedding-baseline".into(),
        scorer: ScorerKind::EmbeddingBaseline,
    }
}

pub fn train_eval(cfg: &PipelineConfig) -> Result<Output, CliError> {
    let train = load_index("index", cfg.require(&cfg.paths.index, "index")?)?;
    let pattern = cfg.require(&cfg.paths.activations, "activations")?;
    if cfg.model.layers.is_empty() {
        return Err(CliError::Config("no layers selected (model.layers or --layer)".into()));
    }
    let generated = generated_set(cfg)?;
    let mut reports = Vec::new();
    let loto = LotoOptions {
        held_out: cfg.eval.held_out.clone(),
        run: None,
    };

    for &layer in &cfg.model.layers {
        let (m, m_sum) = load_matrix(cfg, "activations", &layer_path(pattern, layer), layer)?;
        let label = layer_label(layer, cfg.model.depth);
        info!("leave-one-topic-out on {label}");
        let run = RunLabel {
            label: label.clone(),
            scorer: ScorerKind::Probe,
        };
        let opts = LotoOptions {
            run: Some(run.clone()),
            ..loto.clone()
        };
        let r = leave_one_topic_out_with(&train.index, &m, &cfg.eval.seeds, &cfg.train, &opts).stage("leave-one-topic-out")?;
        let inputs = [train.inputs.clone(), vec![m_sum.clone()]].concat();
        reports.push(finish(cfg, r, inputs)?);

        if let Some((gen, gen_pattern)) = &generated {
            let (gm, gm_sum) = load_matrix(cfg, "generated activations", &layer_path(gen_pattern, layer), layer)?;
            info!("generated-set evaluation on {label}");
            let r = eval_generated(&train.index, &m, &gen.index, &gm, &cfg.eval.generated_seeds, &cfg.train, Some(run))
                .stage("generated")?;
            let inputs = [train.inputs.clone(), vec![m_sum], gen.inputs.clone(), vec![gm_sum]].concat();
            reports.push(finish(cfg, r, inputs)?);
        }
    }

    if let Some(p) = &cfg.paths.embeddings {
        let (e, e_sum) = load_matrix(cfg, "embeddings", p, 0)?;
        let protocol = EmbeddingProtocol::LeaveOneTopicOut;
        let mut r = embedding_baseline(&train.index, &e, protocol, &cfg.eval.seeds, &cfg.train, &embedding_label().label)
            .stage("embedding baseline")?;
        if !cfg.eval.held_out.is_empty() {
            r.cells.retain(|c| cfg.eval.held_out.contains(&c.name));
            r.average_accuracy = r.cells.iter().map(|c| c.accuracy_mean).sum::<f64>() / r.cells.len().max(1) as f64;
        }
        reports.push(finish(cfg, r, [train.inputs.clone(), vec![e_sum.clone()]].concat())?);
        if let (Some((gen, _)), Some(gp)) = (&generated, &cfg.paths.generated_embeddings) {
            let (ge, ge_sum) = load_matrix(cfg, "generated embeddings", gp, 0)?;
            let protocol = EmbeddingProtocol::Generated {
                index: &gen.index,
                matrix: &ge,
            };
            let r = embedding_baseline(&train.index, &e, protocol, &cfg.eval.generated_seeds, &cfg.train, &embedding_label().label)
                .stage("embedding baseline")?;
            let inputs = [train.inputs.clone(), vec![e_sum], gen.inputs.clone(), vec![ge_sum]].concat();
            reports.push(finish(cfg, r, inputs)?);
        }
    }

    if let Some(p) = &cfg.paths.few_shot {
        let (records, sum) = few_shot_records(p, &train.index, "few-shot")?;
        for &k in &cfg.eval.shots {
            if records.iter().any(|r| r.shots == k) {
                let mut r = few_shot_topic_report(&train.index, &records, k).stage("few-shot")?;
                if !cfg.eval.held_out.is_empty() {
                    r.cells.retain(|c| cfg.eval.held_out.contains(&c.name));
                    r.average_accuracy = r.cells.iter().map(|c| c.accuracy_mean).sum::<f64>() / r.cells.len().max(1) as f64;
                }
                reports.push(finish(cfg, r, [train.inputs.clone(), vec![sum.clone()]].concat())?);
            }
        }
    }
    if let (Some((gen, _)), Some(p)) = (&generated, &cfg.paths.generated_few_shot) {
        let (records, sum) = few_shot_records(p, &gen.index, "generated few-shot")?;
        for &k in &cfg.eval.shots {
            if records.iter().any(|r| r.shots == k) {
                let r = few_shot_set_report(&gen.index, &records, k).stage("few-shot")?;
                reports.push(finish(cfg, r, [gen.inputs.clone(), vec![sum.clone()]].concat())?);
            }
        }
    }
    emit(cfg, reports)
}

pub fn calibrate(cfg: &PipelineConfig) -> Result<Output, CliError> {
    let train = load_index("index", cfg.require(&cfg.paths.index, "index")?)?;
    let pattern = cfg.require(&cfg.paths.activations, "activations")?;
    let Some((gen, gen_pattern)) = generated_set(cfg)? else {
        return Err(CliError::Protocol(
            "threshold calibration needs a held-aside evaluation set (paths.generated_index)".into(),
        ));
    };
    if cfg.model.layers.is_empty() {
        return Err(CliError::Config("no layers selected (model.layers or --layer)".into()));
    }
    let mut reports = Vec::new();
    for &layer in &cfg.model.layers {
        let (m, m_sum) = load_matrix(cfg, "activations", &layer_path(pattern, layer), layer)?;
        let (gm, gm_sum) = load_matrix(cfg, "generated activations", &layer_path(gen_pattern, layer), layer)?;
        let run = RunLabel {
            label: layer_label(layer, cfg.model.depth),
            scorer: ScorerKind::Probe,
        };
        info!("calibrated generated-set evaluation on {}", run.label);
        let r = eval_generated_calibrated(
            &train.index,
            &m,
            &gen.index,
            &gm,
            &cfg.eval.generated_seeds,
            &cfg.train,
            cfg.eval.split_seed,
            Some(run),
        )
        .stage("calibrate")?;
        let inputs = [train.inputs.clone(), vec![m_sum], gen.inputs.clone(), vec![gm_sum]].concat();
        reports.push(finish(cfg, r, inputs)?);
    }
    if let (Some(p), Some(gp)) = (&cfg.paths.embeddings, &cfg.paths.generated_embeddings) {
        let (e, e_sum) = load_matrix(cfg, "embeddings", p, 0)?;
        let (ge, ge_sum) = load_matrix(cfg, "generated embeddings", gp, 0)?;
        let protocol = EmbeddingProtocol::GeneratedCalibrated {
            index: &gen.index,
            matrix: &ge,
            split_seed: cfg.eval.split_seed,
        };
        let r = embedding_baseline(&train.index, &e, protocol, &cfg.eval.generated_seeds, &cfg.train, &embedding_label().label)
            .stage("calibrate")?;
        let inputs = [train.inputs.clone(), vec![e_sum], gen.inputs.clone(), vec![ge_sum]].concat();
        reports.push(finish(cfg, r, inputs)?);
    }
    emit(cfg, reports)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn report(dir: &Path) -> Result<Output, CliError> {
    let listing = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
        let r: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{} is not an evaluation report: {e}", p.display())))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Config(format!("no reports found in {}", dir.display())));
    }
    Ok(Output {
        text: render_reports(&reports),
        json: serde_json::to_value(&reports).expect("reports serialize"),
    })
}
