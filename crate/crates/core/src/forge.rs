//! Balanced true/false statement generation from property tables.
//!
//! Each table row describes one entity (a city, an element, a company...).
//! A template turns `(entity, attribute value)` into a true statement; the
//! matching false statement reuses the template with the attribute value
//! taken from a different, uniformly resampled row whose value differs.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{sha256_hex, write_atomic};

pub const ENTITY_PLACEHOLDER: &str = "{e}";
pub const VALUE_PLACEHOLDER: &str = "{v}";

/// Rows of entity attributes loaded from a delimited file.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTable {
    topic: String,
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
    entity_column: String,
    entity_idx: usize,
}

/// Borrowed view of one table row.
#[derive(Debug, Clone, Copy)]
pub struct Record<'a> {
    topic: &'a str,
    columns: &'a [String],
    values: &'a [String],
    entity_idx: usize,
}

impl<'a> Record<'a> {
    pub fn entity(&self) -> &'a str {
        &self.values[self.entity_idx]
    }

    pub fn topic(&self) -> &'a str {
        self.topic
    }

    pub fn get(&self, column: &str) -> Option<&'a str> {
        self.columns
            .iter()
            .position(|c| c == column)
            .map(|i| self.values[i].as_str())
    }
}

impl PropertyTable {
    /// Builds a table from in-memory parts, enforcing every table invariant.
    pub fn new(
        topic: impl Into<String>,
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
        entity_column: impl Into<String>,
    ) -> Result<Self> {
        let topic = topic.into();
        let entity_column = entity_column.into();
        let entity_idx = columns
            .iter()
            .position(|c| *c == entity_column)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "entity column {entity_column:?} not in header {columns:?}"
                ))
            })?;
        let mut seen_cols = HashSet::new();
        for c in &columns {
            if !seen_cols.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate column {c:?}")));
            }
        }
        let rows: Vec<Vec<String>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.trim().to_string()).collect())
            .collect();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "row {} has {} field(s), header has {}",
                    i + 1,
                    row.len(),
                    columns.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| v.is_empty()) {
                return Err(Error::Schema(format!(
                    "row {} has no value for column {:?}",
                    i + 1,
                    columns[j]
                )));
            }
        }
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert(row[entity_idx].as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate entity {:?} in table {topic:?}",
                    row[entity_idx]
                )));
            }
        }
        if rows.len() < 2 {
            return Err(Error::TooFewRows {
                topic,
                rows: rows.len(),
            });
        }
        Ok(Self {
            topic,
            columns,
            rows,
            entity_column,
            entity_idx,
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn entity_column(&self) -> &str {
        &self.entity_column
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn record(&self, row: usize) -> Record<'_> {
        Record {
            topic: &self.topic,
            columns: &self.columns,
            values: &self.rows[row],
            entity_idx: self.entity_idx,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = Record<'_>> + '_ {
        (0..self.rows.len()).map(move |i| self.record(i))
    }

    fn column_index(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "column {column:?} not in table {:?}",
                    self.topic
                ))
            })
    }
}

/// Loads a comma-separated UTF-8 table with a header row. Row order is kept.
pub fn load_property_table(path: &Path, topic: &str, entity_column: &str) -> Result<PropertyTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { .. } => Error::Schema(e.to_string()),
            _ => Error::Csv(e),
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    PropertyTable::new(topic, columns, rows, entity_column)
}

/// A sentence pattern for one attribute, e.g. `"The atomic number of {e} is {v}"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementTemplate {
    pub attribute: String,
    pub pattern: String,
}

impl StatementTemplate {
    pub fn new(attribute: impl Into<String>, pattern: impl Into<String>) -> Result<Self> {
        let t = Self {
            attribute: attribute.into(),
            pattern: pattern.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.pattern.matches(ENTITY_PLACEHOLDER).count();
        let v = self.pattern.matches(VALUE_PLACEHOLDER).count();
        if e != 1 || v != 1 {
            return Err(Error::Validation(format!(
                "template {:?} needs exactly one {ENTITY_PLACEHOLDER} and one {VALUE_PLACEHOLDER} \
                 (found {e} and {v})",
                self.pattern
            )));
        }
        Ok(())
    }

    pub fn render(&self, entity: &str, value: &str) -> Result<String> {
        self.validate()?;
        // Substitute in positional order so an entity containing "{v}" is not re-expanded.
        let e_pos = self.pattern.find(ENTITY_PLACEHOLDER).unwrap_or_default();
        let v_pos = self.pattern.find(VALUE_PLACEHOLDER).unwrap_or_default();
        let (first, first_val, second, second_val) = if e_pos < v_pos {
            (ENTITY_PLACEHOLDER, entity, VALUE_PLACEHOLDER, value)
        } else {
            (VALUE_PLACEHOLDER, value, ENTITY_PLACEHOLDER, entity)
        };
        let (head, rest) = self.pattern.split_once(first).expect("validated");
        let (mid, tail) = rest.split_once(second).expect("validated");
        Ok(format!("{head}{first_val}{mid}{second_val}{tail}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    TableTrue,
    TableFalse,
    Curated,
    Generated,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::TableTrue => "table-true",
            Origin::TableFalse => "table-false",
            Origin::Curated => "curated",
            Origin::Generated => "generated",
        };
        f.write_str(s)
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledStatement {
    pub id: String,
    pub topic: String,
    pub text: String,
    #[serde(with = "label_bit")]
    pub label: bool,
    pub origin: Origin,
}

mod label_bit {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// Stable id: first 16 hex chars of sha256(topic ␟ text).
pub fn statement_id(topic: &str, text: &str) -> String {
    let mut buf = Vec::with_capacity(topic.len() + text.len() + 1);
    buf.extend_from_slice(topic.as_bytes());
    buf.push(0x1f);
    buf.extend_from_slice(text.as_bytes());
    sha256_hex(&buf)[..16].to_string()
}

impl LabeledStatement {
    pub fn new(topic: impl Into<String>, text: impl Into<String>, label: bool, origin: Origin) -> Result<Self> {
        let topic = topic.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Validation("statement text is empty".into()));
        }
        Ok(Self {
            id: statement_id(&topic, &text),
            topic,
            text,
            label,
            origin,
        })
    }
}

fn attribute_value<'a>(record: &Record<'a>, attribute: &str) -> Result<&'a str> {
    match record.get(attribute) {
        Some(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(Error::Validation(format!(
            "row {:?} has no value for attribute {attribute:?}",
            record.entity()
        ))),
    }
}

pub fn make_true_statement(record: &Record<'_>, template: &StatementTemplate) -> Result<LabeledStatement> {
    template.validate()?;
    let value = attribute_value(record, &template.attribute)?;
    let text = template.render(record.entity(), value)?;
    LabeledStatement::new(record.topic(), text, true, Origin::TableTrue)
}

/// Mints the false counterpart of row `row` by rejection-resampling other rows
/// until one has a different (trimmed) value for the template attribute.
pub fn make_false_statement<R: Rng + ?Sized>(
    table: &PropertyTable,
    row: usize,
    template: &StatementTemplate,
    rng: &mut R,
) -> Result<LabeledStatement> {
    template.validate()?;
    if row >= table.len() {
        return Err(Error::Parameter(format!(
            "row {row} out of range for table of {} rows",
            table.len()
        )));
    }
    let col = table.column_index(&template.attribute)?;
    let record = table.record(row);
    let true_value = attribute_value(&record, &template.attribute)?.trim();
    let has_distinct = table
        .rows
        .iter()
        .enumerate()
        .any(|(j, r)| j != row && r[col].trim() != true_value);
    if !has_distinct {
        return Err(Error::NoDistinctValue {
            entity: record.entity().to_string(),
            attribute: template.attribute.clone(),
        });
    }
    let n = table.len();
    let false_value = loop {
        // Uniform over the n - 1 other rows.
        let mut j = rng.gen_range(0..n - 1);
        if j >= row {
            j += 1;
        }
        let candidate = table.rows[j][col].trim();
        if candidate != true_value {
            break candidate;
        }
    };
    let text = template.render(record.entity(), false_value)?;
    LabeledStatement::new(table.topic(), text, false, Origin::TableFalse)
}

/// A false statement that could not be minted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedStatement {
    pub topic: String,
    pub entity: String,
    pub attribute: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicDataset {
    pub statements: Vec<LabeledStatement>,
    pub skipped: Vec<SkippedStatement>,
}

impl TopicDataset {
    pub fn true_count(&self) -> usize {
        self.statements.iter().filter(|s| s.label).count()
    }

    pub fn false_count(&self) -> usize {
        self.statements.len() - self.true_count()
    }
}

/// Emits, row by row and template by template, each true statement followed
/// by its false counterpart. Rows lacking a value for a template's attribute
/// are an error; counterparts with no distinct value are skipped and logged.
pub fn generate_topic_dataset<R: Rng + ?Sized>(
    table: &PropertyTable,
    templates: &[StatementTemplate],
    rng: &mut R,
) -> Result<TopicDataset> {
    if templates.is_empty() {
        return Err(Error::Parameter(format!(
            "topic {:?} has no templates",
            table.topic()
        )));
    }
    for t in templates {
        t.validate()?;
        table.column_index(&t.attribute)?;
    }
    let mut out = TopicDataset::default();
    for row in 0..table.len() {
        let record = table.record(row);
        for template in templates {
            out.statements.push(make_true_statement(&record, template)?);
            match make_false_statement(table, row, template, rng) {
                Ok(s) => out.statements.push(s),
                Err(Error::NoDistinctValue { entity, attribute }) => {
                    warn!(
                        "topic {:?}: no distinct {attribute:?} value for {entity:?}; false statement skipped",
                        table.topic()
                    );
                    out.skipped.push(SkippedStatement {
                        topic: table.topic().to_string(),
                        entity,
                        attribute,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CuratedRow {
    text: String,
    label: String,
}

/// Loads a hand-curated topic: CSV with columns `text,label` where label is
/// one of `1`/`0`/`true`/`false`.
pub fn load_curated(path: &Path, topic: &str) -> Result<Vec<LabeledStatement>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<CuratedRow>() {
        let row = row?;
        let label = match row.label.to_ascii_lowercase().as_str() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Validation(format!(
                    "curated label {other:?} is not a boolean"
                )))
            }
        };
        out.push(LabeledStatement::new(topic, row.text, label, Origin::Curated)?);
    }
    Ok(out)
}

/// Fails on the first repeated id.
pub fn check_unique_ids(statements: &[LabeledStatement]) -> Result<()> {
    let mut seen = HashSet::with_capacity(statements.len());
    for s in statements {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate statement id {} ({:?})",
                s.id, s.text
            )));
        }
    }
    Ok(())
}

pub fn dataset_to_jsonl(statements: &[LabeledStatement]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for s in statements {
        serde_json::to_writer(&mut buf, s)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_dataset(path: &Path, statements: &[LabeledStatement]) -> Result<()> {
    check_unique_ids(statements)?;
    write_atomic(path, &dataset_to_jsonl(statements)?)
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabeledStatement>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledStatement = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if s.text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "{}:{}: empty statement text",
                path.display(),
                lineno + 1
            )));
        }
        out.push(s);
    }
    check_unique_ids(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    fn elements() -> PropertyTable {
        PropertyTable::new(
            "Chemical Elements",
            vec!["name".into(), "atomic_number".into(), "state".into()],
            vec![
                vec!["Hydrogen".into(), "1".into(), "Gas".into()],
                vec!["Selenium".into(), "34".into(), "Gas".into()],
                vec!["Helium".into(), "2".into(), "Gas".into()],
            ],
            "name",
        )
        .unwrap()
    }

    #[test]
    fn true_statement_substitutes_both_placeholders() {
        let t = elements();
        let tpl = StatementTemplate::new("atomic_number", "The atomic number of {e} is {v}").unwrap();
        let s = make_true_statement(&t.record(0), &tpl).unwrap();
        assert_eq!(s.text, "The atomic number of Hydrogen is 1");
        assert!(s.label);
        assert_eq!(s.origin, Origin::TableTrue);
    }

    #[test]
    fn city_pattern_with_value_last() {
        let t = PropertyTable::new(
            "Cities",
            vec!["city".into(), "country".into()],
            vec![
                vec!["Oranjestad".into(), "Aruba".into()],
                vec!["Vaduz".into(), "Liechtenstein".into()],
            ],
            "city",
        )
        .unwrap();
        let tpl = StatementTemplate::new("country", "{e} is a city in {v}").unwrap();
        let s = make_true_statement(&t.record(0), &tpl).unwrap();
        assert_eq!(s.text, "Oranjestad is a city in Aruba");
    }

    #[test]
    fn template_without_placeholders_is_rejected() {
        assert!(matches!(
            StatementTemplate::new("atomic_number", "Hydrogen is an element"),
            Err(Error::Validation(_))
        ));
        let bad = StatementTemplate {
            attribute: "atomic_number".into(),
            pattern: "no placeholders".into(),
        };
        assert!(matches!(
            make_true_statement(&elements().record(0), &bad),
            Err(Error::Validation(_))
        ));
        assert!(StatementTemplate::new("a", "{e} {e} {v}").is_err());
    }

    #[test]
    fn value_before_entity_renders_in_order() {
        let tpl = StatementTemplate::new("x", "{v} is the value of {e}").unwrap();
        assert_eq!(tpl.render("A", "B").unwrap(), "B is the value of A");
        // Entity text that looks like a placeholder is not re-expanded.
        let tpl = StatementTemplate::new("x", "{e} has {v}").unwrap();
        assert_eq!(tpl.render("{v}", "z").unwrap(), "{v} has z");
    }

    #[test]
    fn false_statement_uses_other_row_value() {
        let t = elements();
        let tpl = StatementTemplate::new("atomic_number", "The atomic number of {e} is {v}").unwrap();
        let mut rng = seeded_rng(3);
        let s = make_false_statement(&t, 0, &tpl, &mut rng).unwrap();
        assert!(!s.label);
        assert_eq!(s.origin, Origin::TableFalse);
        assert!(
            s.text == "The atomic number of Hydrogen is 34"
                || s.text == "The atomic number of Hydrogen is 2"
        );
    }

    #[test]
    fn constant_column_has_no_distinct_value() {
        let t = elements();
        let tpl = StatementTemplate::new("state", "The standard state of {e} is {v}").unwrap();
        let err = make_false_statement(&t, 0, &tpl, &mut seeded_rng(0)).unwrap_err();
        assert!(matches!(err, Error::NoDistinctValue { .. }));
    }

    #[test]
    fn skips_are_recorded_and_balance_holds() {
        let t = elements();
        let tpls = vec![
            StatementTemplate::new("atomic_number", "The atomic number of {e} is {v}").unwrap(),
            StatementTemplate::new("state", "The standard state of {e} is {v}").unwrap(),
        ];
        let ds = generate_topic_dataset(&t, &tpls, &mut seeded_rng(1)).unwrap();
        assert_eq!(ds.true_count(), 6);
        assert_eq!(ds.false_count(), 3);
        assert_eq!(ds.skipped.len(), 3);
    }

    #[test]
    fn three_rows_one_template_gives_six() {
        let t = elements();
        let tpl = vec![StatementTemplate::new("atomic_number", "The atomic number of {e} is {v}").unwrap()];
        let ds = generate_topic_dataset(&t, &tpl, &mut seeded_rng(9)).unwrap();
        assert_eq!(ds.statements.len(), 6);
        assert_eq!(ds.true_count(), 3);
        assert_eq!(ds.false_count(), 3);
        assert!(ds.skipped.is_empty());
    }

    #[test]
    fn table_invariants() {
        let one = PropertyTable::new("t", vec!["a".into(), "b".into()], vec![vec!["x".into(), "1".into()]], "a");
        assert!(matches!(one, Err(Error::TooFewRows { rows: 1, .. })));
        let dup = PropertyTable::new(
            "t",
            vec!["name".into(), "n".into()],
            vec![vec!["Hydrogen".into(), "1".into()], vec!["Hydrogen".into(), "2".into()]],
            "name",
        );
        assert!(matches!(dup, Err(Error::Validation(_))));
        let missing = PropertyTable::new("t", vec!["a".into()], vec![vec!["x".into()], vec!["y".into()]], "name");
        assert!(matches!(missing, Err(Error::Schema(_))));
        let empty_cell = PropertyTable::new(
            "t",
            vec!["a".into(), "b".into()],
            vec![vec!["x".into(), " ".into()], vec!["y".into(), "2".into()]],
            "a",
        );
        assert!(matches!(empty_cell, Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_template_column_is_schema_error() {
        let t = elements();
        let tpl = vec![StatementTemplate::new("mass", "The mass of {e} is {v}").unwrap()];
        assert!(matches!(
            generate_topic_dataset(&t, &tpl, &mut seeded_rng(0)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn ids_are_stable_content_hashes() {
        let a = statement_id("Cities", "Vaduz is a city in Liechtenstein");
        assert_eq!(a.len(), 16);
        assert_eq!(a, statement_id("Cities", "Vaduz is a city in Liechtenstein"));
        assert_ne!(a, statement_id("Companies", "Vaduz is a city in Liechtenstein"));
    }

    #[test]
    fn jsonl_line_shape() {
        let s = LabeledStatement::new("Cities", "Vaduz is a city in Liechtenstein", true, Origin::TableTrue).unwrap();
        let line = String::from_utf8(dataset_to_jsonl(std::slice::from_ref(&s)).unwrap()).unwrap();
        assert_eq!(
            line,
            format!(
                "{{\"id\":\"{}\",\"topic\":\"Cities\",\"text\":\"Vaduz is a city in Liechtenstein\",\"label\":1,\"origin\":\"table-true\"}}\n",
                s.id
            )
        );
        let back: LabeledStatement = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LabeledStatement>(
            r#"{"id":"x","topic":"t","text":"y","label":2,"origin":"curated"}"#
        )
        .is_err());
    }

    #[test]
    fn empty_text_rejected() {
        assert!(LabeledStatement::new("t", "  ", true, Origin::Curated).is_err());
    }
}
