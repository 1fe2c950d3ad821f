//! On-disk activation store.
//!
//! Layout of an activation file (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SAPLACT1"
//! 8       4     u32 version (1 = binary32 payload)
//! 12      4     u32 dim
//! 16      8     u64 count
//! 24      ...   count * dim values, row-major, row i <-> index entry i
//! ```
//!
//! Version 2 uses the same header with a binary64 payload; it is only used
//! for probe checkpoint parameter blocks, never for activation files.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{self, LabeledStatement};
use crate::util::{sha256_hex, write_atomic};

pub const MAGIC: [u8; 8] = *b"SAPLACT1";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub topic: String,
    pub label: bool,
    pub text: String,
}

/// Ordered statement metadata. Entry `i` describes row `i` of every matrix bound to it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetIndex {
    entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id {} in index", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_statements(statements: &[LabeledStatement]) -> Result<Self> {
        Self::new(
            statements
                .iter()
                .map(|s| IndexEntry {
                    id: s.id.clone(),
                    topic: s.topic.clone(),
                    label: s.label,
                    text: s.text.clone(),
                })
                .collect(),
        )
    }

    /// Reads the JSON-lines dataset file produced by the generator.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_statements(&forge::read_dataset(path)?)
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.label).collect()
    }

    /// Topics in first-appearance order.
    pub fn topics(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.topic.as_str()))
            .map(|e| e.topic.clone())
            .collect()
    }

    pub fn topic_counts(&self) -> Vec<(String, usize)> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in &self.entries {
            *counts.entry(e.topic.as_str()).or_default() += 1;
        }
        self.topics()
            .into_iter()
            .map(|t| {
                let n = counts[t.as_str()];
                (t, n)
            })
            .collect()
    }

    pub fn id_set(&self) -> HashSet<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Sub-index over the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            entries: rows.iter().map(|&r| self.entries[r].clone()).collect(),
        }
    }

    /// sha256 over the ids, each followed by `\n`. Used to bind sidecar
    /// manifests to a specific row order.
    pub fn ids_checksum(&self) -> String {
        let mut buf = String::with_capacity(self.entries.len() * 17);
        for e in &self.entries {
            buf.push_str(&e.id);
            buf.push('\n');
        }
        sha256_hex(buf.as_bytes())
    }
}

/// Dense row-per-statement features for one (source model, layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub source_model: String,
    pub layer: u32,
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl ActivationMatrix {
    pub fn new(source_model: impl Into<String>, layer: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        let m = Self::new_unchecked(source_model, layer, dim, data)?;
        m.check_finite()?;
        Ok(m)
    }

    fn new_unchecked(source_model: impl Into<String>, layer: u32, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dim must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values is not a whole number of rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self {
            source_model: source_model.into(),
            layer,
            dim,
            count: data.len() / dim,
            data,
        })
    }

    pub fn from_rows(source_model: impl Into<String>, layer: u32, dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Shape(format!("row {i} has width {}, expected {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(source_model, layer, dim, data)
    }

    pub fn with_provenance(mut self, source_model: impl Into<String>, layer: u32) -> Self {
        self.source_model = source_model.into();
        self.layer = layer;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows containing NaN or infinite values.
    pub fn non_finite_rows(&self) -> Vec<usize> {
        (0..self.count)
            .filter(|&i| self.row(i).iter().any(|v| !v.is_finite()))
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(&row) = self.non_finite_rows().first() {
            let col = self.row(row).iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::Validation(format!(
                "non-finite value at row {row}, column {col}"
            )));
        }
        Ok(())
    }

    /// Copies the selected rows into a new matrix.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            source_model: self.source_model.clone(),
            layer: self.layer,
            dim: self.dim,
            count: rows.len(),
            data,
        }
    }

    /// Rejects a matrix whose row count differs from the index it is bound to.
    pub fn check_bound_to(&self, index: &DatasetIndex) -> Result<()> {
        if self.count != index.len() {
            return Err(Error::Validation(format!(
                "matrix has {} rows but index has {} entries",
                self.count,
                index.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        write_header(&mut buf, VERSION_F32, self.dim, self.count);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }
}

fn write_header(buf: &mut Vec<u8>, version: u32, dim: usize, count: usize) {
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(count as u64).to_le_bytes());
}

struct Header {
    version: u32,
    dim: usize,
    count: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    Ok(Header { version, dim, count })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, width: usize) -> Result<&'a [u8]> {
    let expected = (header.count as u64)
        .checked_mul(header.dim as u64)
        .and_then(|n| n.checked_mul(width as u64))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::Format(format!(
            "{} trailing byte(s) after payload",
            found - expected
        )));
    }
    Ok(&bytes[HEADER_LEN..])
}

/// Parses an activation file without checking value finiteness.
pub fn activation_matrix_from_bytes(bytes: &[u8]) -> Result<ActivationMatrix> {
    let header = parse_header(bytes)?;
    if header.version != VERSION_F32 {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: VERSION_F32,
        });
    }
    if header.dim == 0 {
        return Err(Error::Format("dim is zero".into()));
    }
    let body = payload(bytes, &header, 4)?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ActivationMatrix {
        source_model: String::new(),
        layer: 0,
        dim: header.dim,
        count: header.count,
        data,
    })
}

pub fn write_activation_matrix(matrix: &ActivationMatrix, path: &Path) -> Result<()> {
    matrix.check_finite()?;
    write_atomic(path, &matrix.to_bytes())
}

/// Reads and fully validates an activation file. The returned matrix carries
/// no model/layer tag; attach one with [`ActivationMatrix::with_provenance`].
pub fn read_activation_matrix(path: &Path) -> Result<ActivationMatrix> {
    let m = read_activation_matrix_raw(path)?;
    m.check_finite()?;
    Ok(m)
}

/// Like [`read_activation_matrix`] but leaves non-finite values in place for
/// diagnostics.
pub fn read_activation_matrix_raw(path: &Path) -> Result<ActivationMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    activation_matrix_from_bytes(&bytes)
}

/// Appends a binary64 block (`version 2`) holding a `rows x cols` matrix.
pub(crate) fn encode_f64_block(buf: &mut Vec<u8>, cols: usize, values: &[f64]) {
    let rows = values.len().checked_div(cols).unwrap_or(0);
    write_header(buf, VERSION_F64, cols, rows);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes a binary64 block at the front of `bytes`; returns (cols, rows, values, bytes consumed).
pub(crate) fn decode_f64_block(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>, usize)> {
    let header = parse_header(bytes)?;
    if header.version != VERSION_F64 {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: VERSION_F64,
        });
    }
    let need = header.count * header.dim * 8;
    let available = bytes.len() - HEADER_LEN;
    if available < need {
        return Err(Error::Truncated {
            expected: need as u64,
            found: available as u64,
        });
    }
    let values = bytes[HEADER_LEN..HEADER_LEN + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header.dim, header.count, values, HEADER_LEN + need))
}

/// Row positions for a leave-one-topic-out split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_by_topic(index: &DatasetIndex, held_out: &str) -> Result<TopicSplit> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..index.len()).partition(|&i| index.entries()[i].topic == held_out);
    if test.is_empty() {
        return Err(Error::UnknownTopic(held_out.to_string()));
    }
    Ok(TopicSplit { train, test })
}

/// Layer ids drawn from {last, last-4, last-8, last-12, middle} of a decoder stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSet {
    depth: u32,
    layers: Vec<u32>,
}

impl LayerSet {
    pub fn new(depth: u32, layers: Vec<u32>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("layer set is empty".into()));
        }
        let allowed = Self::candidates(depth);
        for &l in &layers {
            if !allowed.contains(&l) {
                return Err(Error::Parameter(format!(
                    "layer {l} is not one of {allowed:?} for a {depth}-layer model"
                )));
            }
        }
        Ok(Self { depth, layers })
    }

    /// All five standard probe layers, deepest first. Layers are numbered
    /// 1..=depth as outputs of each block.
    pub fn standard(depth: u32) -> Result<Self> {
        Self::new(depth, Self::candidates(depth).into_iter().rev().collect())
    }

    fn candidates(depth: u32) -> BTreeSet<u32> {
        let mut set = BTreeSet::new();
        for back in [0u32, 4, 8, 12] {
            if depth > back {
                set.insert(depth - back);
            }
        }
        if depth >= 2 {
            set.insert(depth / 2);
        }
        set
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn layers(&self) -> &[u32] {
        &self.layers
    }
}

/// Row label used in rendered tables: "last-layer", "28th-layer", "middle-layer".
pub fn layer_label(layer: u32, depth: Option<u32>) -> String {
    match depth {
        Some(d) if layer == d => "last-layer".to_string(),
        Some(d) if layer == d / 2 => "middle-layer".to_string(),
        _ => format!("{}{}-layer", layer, ordinal_suffix(layer)),
    }
}

fn ordinal_suffix(n: u32) -> &'static str {
    match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    }
}

/// Next-token probabilities of "true"/"false" after a k-shot prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRecord {
    pub id: String,
    pub p_true: f64,
    pub p_false: f64,
    pub shots: u32,
}

impl FewShotRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_true", self.p_true), ("p_false", self.p_false)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Data(format!(
                    "{name} = {p} for {} is outside (0, 1]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Reads a CSV with header `id,p_true,p_false,shots`, checking each row's
/// probabilities and that every id is present in `index`.
pub fn read_few_shot(path: &Path, index: &DatasetIndex) -> Result<Vec<FewShotRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "p_true", "p_false", "shots"] {
        return Err(Error::Schema(format!(
            "few-shot header must be id,p_true,p_false,shots; found {}",
            header.join(",")
        )));
    }
    let ids = index.id_set();
    let mut out = Vec::new();
    for rec in reader.deserialize::<FewShotRecord>() {
        let rec = rec?;
        rec.validate()?;
        if !ids.contains(rec.id.as_str()) {
            return Err(Error::Data(format!("few-shot id {} not in index", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_few_shot(path: &Path, records: &[FewShotRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    write_atomic(path, &bytes)
}

/// Kind of file listed in an extraction manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestFileKind {
    Activations,
    Embeddings,
    FewShot,
    SentenceLogprob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub kind: ManifestFileKind,
    #[serde(default)]
    pub layer: Option<u32>,
    pub path: PathBuf,
    pub sha256: String,
}

/// Sidecar JSON written by the extractor next to the files it emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionManifest {
    pub model_id: String,
    #[serde(default)]
    pub depth: Option<u32>,
    pub layer_convention: String,
    pub token_position: String,
    #[serde(default)]
    pub prompt_template: Option<String>,
    pub index_ids_sha256: String,
    pub files: Vec<ManifestFile>,
}

impl ExtractionManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks the ids checksum and every listed file's sha256. Relative paths
    /// resolve against `base`. Returns one message per violation.
    pub fn verify(&self, index: &DatasetIndex, base: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        let ids = index.ids_checksum();
        if ids != self.index_ids_sha256 {
            problems.push(format!(
                "manifest index checksum {} does not match index ({ids})",
                self.index_ids_sha256
            ));
        }
        for f in &self.files {
            let path = if f.path.is_absolute() {
                f.path.clone()
            } else {
                base.join(&f.path)
            };
            match crate::util::file_sha256(&path) {
                Ok(sum) if sum == f.sha256 => {}
                Ok(sum) => problems.push(format!(
                    "{}: checksum {sum} does not match manifest {}",
                    path.display(),
                    f.sha256
                )),
                Err(e) => problems.push(e.to_string()),
            }
        }
        problems
    }
}
