//! Declarative description of a whole statement dataset: which tables feed
//! which topics, the templates applied to each, and curated topics shipped as
//! static files. One recipe plus one seed pins every generated byte.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forge::{
    check_unique_ids, generate_topic_dataset, load_curated, load_property_table, LabeledStatement, StatementTemplate,
    TopicDataset,
};
use crate::util::{sha256_hex, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableTopic {
    pub name: String,
    /// Path of the CSV table, relative to the recipe file.
    pub table: PathBuf,
    pub entity_column: String,
    pub templates: Vec<StatementTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuratedTopic {
    pub name: String,
    /// Path of the `text,label` CSV, relative to the recipe file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeRecipe {
    pub seed: u64,
    #[serde(default, rename = "topic")]
    pub topics: Vec<TableTopic>,
    #[serde(default)]
    pub curated: Vec<CuratedTopic>,
    /// Directory relative paths resolve against; set by [`ForgeRecipe::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Output of one recipe topic.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgedTopic {
    pub topic: String,
    pub source: PathBuf,
    pub dataset: TopicDataset,
}

/// Random source for one topic. Keyed by the topic name so that adding or
/// reordering topics leaves the others untouched.
pub fn topic_rng(seed: u64, topic: &str) -> SeededRng {
    let digest = sha256_hex(topic.as_bytes());
    let salt = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    let mut rng = SeededRng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

impl ForgeRecipe {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut recipe: ForgeRecipe =
            toml::from_str(text).map_err(|e| Error::Schema(format!("forge recipe: {e}")))?;
        recipe.base_dir = base_dir.to_path_buf();
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.topics.iter().map(|t| t.name.as_str()).collect();
        names.extend(self.curated.iter().map(|c| c.name.as_str()));
        if names.is_empty() {
            return Err(Error::Schema("forge recipe lists no topics".into()));
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("topic {:?} listed twice", w[0])));
        }
        for t in &self.topics {
            if t.templates.is_empty() {
                return Err(Error::Schema(format!("topic {:?} has no templates", t.name)));
            }
            for tpl in &t.templates {
                tpl.validate()?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every input file the recipe reads, in recipe order.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.topics
            .iter()
            .map(|t| self.resolve(&t.table))
            .chain(self.curated.iter().map(|c| self.resolve(&c.path)))
            .collect()
    }

    /// Generates every topic: table topics first, then curated ones.
    pub fn forge(&self) -> Result<Vec<ForgedTopic>> {
        let mut out = Vec::with_capacity(self.topics.len() + self.curated.len());
        for t in &self.topics {
            let source = self.resolve(&t.table);
            let table = load_property_table(&source, &t.name, &t.entity_column)?;
            let mut rng = topic_rng(self.seed, &t.name);
            let dataset = generate_topic_dataset(&table, &t.templates, &mut rng)?;
            check_unique_ids(&dataset.statements)?;
            out.push(ForgedTopic {
                topic: t.name.clone(),
                source,
                dataset,
            });
        }
        for c in &self.curated {
            let source = self.resolve(&c.path);
            let statements = load_curated(&source, &c.name)?;
            check_unique_ids(&statements)?;
            out.push(ForgedTopic {
                topic: c.name.clone(),
                source,
                dataset: TopicDataset {
                    statements,
                    skipped: Vec::new(),
                },
            });
        }
        Ok(out)
    }
}

/// Concatenates forged topics in order, checking ids are unique overall.
pub fn combined_statements(topics: &[ForgedTopic]) -> Result<Vec<LabeledStatement>> {
    let all: Vec<LabeledStatement> = topics.iter().flat_map(|t| t.dataset.statements.clone()).collect();
    check_unique_ids(&all)?;
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_topics_and_curated() {
        let text = r#"
            seed = 7
            [[topic]]
            name = "cities"
            table = "tables/cities.csv"
            entity_column = "city"
            templates = [{ attribute = "country", pattern = "{e} is a city in {v}." }]
            [[curated]]
            name = "facts"
            path = "curated/facts.csv"
        "#;
        let r = ForgeRecipe::from_toml(text, Path::new("/data")).unwrap();
        assert_eq!(r.seed, 7);
        assert_eq!(r.topics[0].templates[0].attribute, "country");
        assert_eq!(r.input_paths()[1], PathBuf::from("/data/curated/facts.csv"));
    }

    #[test]
    fn rejects_bad_recipes() {
        assert!(ForgeRecipe::from_toml("seed = 1", Path::new(".")).is_err());
        let bad_template = r#"
            seed = 1
            [[topic]]
            name = "x"
            table = "x.csv"
            entity_column = "e"
            templates = [{ attribute = "a", pattern = "no placeholders" }]
        "#;
        assert!(ForgeRecipe::from_toml(bad_template, Path::new(".")).is_err());
        let dup = r#"
            seed = 1
            [[curated]]
            name = "x"
            path = "a.csv"
            [[curated]]
            name = "x"
            path = "b.csv"
        "#;
        assert!(ForgeRecipe::from_toml(dup, Path::new(".")).is_err());
    }

    #[test]
    fn topic_streams_are_independent_of_order() {
        use rand::Rng;
        let a: u64 = topic_rng(3, "cities").gen();
        let b: u64 = topic_rng(3, "cities").gen();
        let c: u64 = topic_rng(3, "animals").gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
