//! Knowledge-unit registry: named units, their category, and the anchor
//! phrases that seed one topic per unit.
//!
//! The registry is data, not code. It ships as a JSON or TOML file with a
//! top-level `language` and an ordered `units` array; unit order is the
//! canonical topic index order. Compound anchors are stored with spaces and
//! turned into underscored tokens by [`underscore_form`] at preprocessing
//! time.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::preprocess::Vocabulary;

/// The four-way taxonomy the category cross-tabs depend on. Unknown strings
/// are rejected at load time rather than mapped to an ad-hoc category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "Data types")]
    DataTypes,
    #[serde(rename = "Development tooling")]
    DevelopmentTooling,
    #[serde(rename = "Language features")]
    LanguageFeatures,
    #[serde(rename = "Programming niche")]
    ProgrammingNiche,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::DataTypes,
        Category::DevelopmentTooling,
        Category::LanguageFeatures,
        Category::ProgrammingNiche,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Category::DataTypes => "Data types",
            Category::DevelopmentTooling => "Development tooling",
            Category::LanguageFeatures => "Language features",
            Category::ProgrammingNiche => "Programming niche",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One knowledge unit: a named group of related concepts bound to a topic
/// through its anchor phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub name: String,
    pub category: Category,
    pub anchors: Vec<String>,
}

impl KnowledgeUnit {
    /// Anchor tokens as they appear in preprocessed text: the underscored,
    /// lowercased form of each phrase, deduplicated, order preserved.
    pub fn anchor_tokens(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.anchors
            .iter()
            .map(|p| underscore_form(p))
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read registry file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse registry: {0}")]
    Parse(String),
    #[error("empty registry: no units defined")]
    Empty,
    #[error("duplicate unit name `{0}`")]
    DuplicateName(String),
    #[error("units `{0}` and `{1}` share an identical anchor set")]
    DuplicateAnchorSet(String, String),
    #[error("unit `{0}` has an empty anchor list")]
    EmptyAnchors(String),
    #[error("unit `{0}` contains an empty anchor phrase")]
    EmptyAnchorPhrase(String),
}

/// Raw file shape, validated into a [`KuRegistry`].
#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    language: String,
    units: Vec<KnowledgeUnit>,
}

/// An ordered, validated collection of knowledge units for one language.
/// Immutable after load; unit `j` defines topic `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KuRegistry {
    language: String,
    units: Vec<KnowledgeUnit>,
}

impl KuRegistry {
    /// Validate and seal a registry. Anchor phrases are normalized to
    /// lowercase; anything else violating an invariant is an error naming
    /// the offending unit.
    pub fn new(language: String, units: Vec<KnowledgeUnit>) -> Result<Self, RegistryError> {
        if units.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut units = units;
        let mut names = HashSet::new();
        for unit in &mut units {
            if !names.insert(unit.name.clone()) {
                return Err(RegistryError::DuplicateName(unit.name.clone()));
            }
            if unit.anchors.is_empty() {
                return Err(RegistryError::EmptyAnchors(unit.name.clone()));
            }
            for anchor in &mut unit.anchors {
                let normalized = anchor.trim().to_lowercase();
                if normalized.is_empty() {
                    return Err(RegistryError::EmptyAnchorPhrase(unit.name.clone()));
                }
                *anchor = normalized;
            }
        }
        for i in 0..units.len() {
            for j in (i + 1)..units.len() {
                let a: BTreeSet<&str> = units[i].anchors.iter().map(String::as_str).collect();
                let b: BTreeSet<&str> = units[j].anchors.iter().map(String::as_str).collect();
                if a == b {
                    return Err(RegistryError::DuplicateAnchorSet(
                        units[i].name.clone(),
                        units[j].name.clone(),
                    ));
                }
            }
        }
        Ok(Self { language, units })
    }

    /// Load from a `.json` or `.toml` file; format picked by extension,
    /// falling back to JSON.
    pub fn from_path(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::new(file.language, file.units)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::new(file.language, file.units)
    }

    /// The Rust registry transcribed from the language's documentation
    /// survey: 47 units across the four categories.
    pub fn bundled_rust() -> Self {
        Self::from_json_str(include_str!("../data/rust-kus.json"))
            .expect("bundled registry is valid")
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn units(&self) -> &[KnowledgeUnit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn unit_names(&self) -> Vec<&str> {
        self.units.iter().map(|u| u.name.as_str()).collect()
    }

    /// Topic index -> anchor token set, in canonical unit order.
    pub fn anchor_token_sets(&self) -> Vec<BTreeSet<String>> {
        self.units
            .iter()
            .map(|u| u.anchor_tokens().into_iter().collect())
            .collect()
    }

    /// Every anchor phrase (spaced form) across all units.
    pub fn anchor_lexicon(&self) -> BTreeSet<String> {
        self.units
            .iter()
            .flat_map(|u| u.anchors.iter().cloned())
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        let file = RegistryFile {
            language: self.language.clone(),
            units: self.units.clone(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    /// Check which anchor tokens survive into a corpus vocabulary.
    pub fn validate_anchors(&self, vocabulary: &Vocabulary) -> AnchorCoverage {
        let mut per_unit = Vec::with_capacity(self.units.len());
        let mut present = 0usize;
        let mut total = 0usize;
        for unit in &self.units {
            let missing: Vec<String> = unit
                .anchor_tokens()
                .into_iter()
                .inspect(|_| total += 1)
                .filter(|t| {
                    let found = vocabulary.index_of(t).is_some();
                    if found {
                        present += 1;
                    }
                    !found
                })
                .collect();
            per_unit.push(UnitCoverage {
                unit: unit.name.clone(),
                missing,
            });
        }
        let coverage = if total == 0 {
            0.0
        } else {
            present as f64 / total as f64
        };
        AnchorCoverage { coverage, per_unit }
    }
}

/// Result of [`KuRegistry::validate_anchors`].
#[derive(Debug, Clone)]
pub struct AnchorCoverage {
    /// Fraction of anchor tokens found in the vocabulary, in [0, 1].
    pub coverage: f64,
    pub per_unit: Vec<UnitCoverage>,
}

#[derive(Debug, Clone)]
pub struct UnitCoverage {
    pub unit: String,
    /// Anchor tokens absent from the vocabulary.
    pub missing: Vec<String>,
}

impl AnchorCoverage {
    /// Units with at least one missing anchor token.
    pub fn units_with_missing(&self) -> impl Iterator<Item = &UnitCoverage> {
        self.per_unit.iter().filter(|u| !u.missing.is_empty())
    }
}

/// Collapse a spaced anchor phrase to its token form: internal whitespace
/// runs become single underscores, and the result is lowercased. Single
/// words pass through (lowercased). Idempotent.
pub fn underscore_form(phrase: &str) -> String {
    phrase
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(name: &str, category: Category, anchors: &[&str]) -> KnowledgeUnit {
        KnowledgeUnit {
            name: name.to_string(),
            category,
            anchors: anchors.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn underscore_form_replaces_spaces() {
        assert_eq!(underscore_form("primitive type"), "primitive_type");
        assert_eq!(underscore_form("tuple"), "tuple");
        assert_eq!(
            underscore_form("dynamically sized type"),
            "dynamically_sized_type"
        );
    }

    #[test]
    fn underscore_form_is_idempotent() {
        for phrase in ["primitive type", "tuple", "a b c", "Hash Map"] {
            let once = underscore_form(phrase);
            assert_eq!(underscore_form(&once), once);
        }
    }

    #[test]
    fn underscore_form_lowercases() {
        assert_eq!(underscore_form("Hello World"), "hello_world");
    }

    #[test]
    fn bundled_rust_has_expected_shape() {
        let reg = KuRegistry::bundled_rust();
        assert_eq!(reg.len(), 47);
        assert_eq!(reg.language(), "Rust");
        let count = |c: Category| reg.units().iter().filter(|u| u.category == c).count();
        assert_eq!(count(Category::DataTypes), 7);
        assert_eq!(count(Category::DevelopmentTooling), 10);
        assert_eq!(count(Category::LanguageFeatures), 18);
        assert_eq!(count(Category::ProgrammingNiche), 12);
    }

    #[test]
    fn bundled_rust_anchor_tokens_are_lowercase_and_nonempty() {
        let reg = KuRegistry::bundled_rust();
        for u in reg.units() {
            assert!(!u.anchors.is_empty(), "{} has anchors", u.name);
            for a in &u.anchors {
                assert!(!a.is_empty());
                assert_eq!(*a, a.to_lowercase());
            }
        }
    }

    #[test]
    fn round_trip_preserves_registry() {
        let reg = KuRegistry::bundled_rust();
        let json = reg.to_json_string();
        let back = KuRegistry::from_json_str(&json).unwrap();
        assert_eq!(reg, back);
        assert_eq!(reg.unit_names(), back.unit_names());
    }

    #[test]
    fn empty_registry_rejected() {
        let err = KuRegistry::new("X".into(), vec![]).unwrap_err();
        assert!(matches!(err, RegistryError::Empty));
    }

    #[test]
    fn duplicate_name_rejected_naming_unit() {
        let units = vec![
            unit("Macros", Category::LanguageFeatures, &["macro"]),
            unit("Macros", Category::LanguageFeatures, &["derive macro"]),
        ];
        let err = KuRegistry::new("X".into(), units).unwrap_err();
        match err {
            RegistryError::DuplicateName(name) => assert_eq!(name, "Macros"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_anchor_set_rejected() {
        let units = vec![
            unit("A", Category::DataTypes, &["tuple", "array"]),
            unit("B", Category::DataTypes, &["array", "tuple"]),
        ];
        let err = KuRegistry::new("X".into(), units).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateAnchorSet(_, _)));
    }

    #[test]
    fn empty_anchor_list_rejected() {
        let units = vec![unit("A", Category::DataTypes, &[])];
        let err = KuRegistry::new("X".into(), units).unwrap_err();
        match err {
            RegistryError::EmptyAnchors(name) => assert_eq!(name, "A"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_category_rejected() {
        let json = r#"{"language":"X","units":[{"name":"A","category":"Frobnication","anchors":["a"]}]}"#;
        let err = KuRegistry::from_json_str(json).unwrap_err();
        assert!(matches!(err, RegistryError::Parse(_)));
    }

    #[test]
    fn anchors_normalized_to_lowercase() {
        let units = vec![unit("A", Category::DataTypes, &["Primitive Type"])];
        let reg = KuRegistry::new("X".into(), units).unwrap();
        assert_eq!(reg.units()[0].anchors[0], "primitive type");
    }

    #[test]
    fn toml_registry_parses() {
        let text = r#"
language = "X"

[[units]]
name = "A"
category = "Data types"
anchors = ["tuple", "primitive type"]
"#;
        let reg = KuRegistry::from_toml_str(text).unwrap();
        assert_eq!(reg.len(), 1);
        assert_eq!(reg.units()[0].category, Category::DataTypes);
    }

    #[test]
    fn anchor_tokens_dedupe_preserving_order() {
        let units = vec![unit(
            "A",
            Category::LanguageFeatures,
            &["scope", "block", "scope"],
        )];
        let reg = KuRegistry::new("X".into(), units).unwrap();
        assert_eq!(reg.units()[0].anchor_tokens(), vec!["scope", "block"]);
    }
}
