use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Test => "test",
        }
    }
}

/// Top-level stimulus categories, in the block order used for RSM plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Animal,
    Food,
    Vehicle,
    Tool,
    Sports,
    Other,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::Animal,
        ClassLabel::Food,
        ClassLabel::Vehicle,
        ClassLabel::Tool,
        ClassLabel::Sports,
        ClassLabel::Other,
    ];
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptEntry {
    pub concept_id: usize,
    pub name: String,
    pub split: SplitKind,
    pub class_label: ClassLabel,
    pub image_ids: Vec<String>,
}

/// `catalog.json`: concept → (split, images, class). Embedding rows in
/// `embeddings.tensor` follow catalog order (concepts, then their images).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusCatalog {
    pub version: u32,
    pub embedding_dim: usize,
    pub concepts: Vec<ConceptEntry>,
}

impl StimulusCatalog {
    pub fn validate(&self) -> Result<()> {
        if self.version != CATALOG_VERSION {
            return Err(Error::Config(format!(
                "catalog version {} unsupported (expected {CATALOG_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.concepts {
            // a concept id appearing twice could sit in both splits
            if !seen.insert(c.concept_id) {
                return Err(Error::Config(format!(
                    "concept {} listed more than once; train/test concept sets must be disjoint",
                    c.concept_id
                )));
            }
            if c.image_ids.is_empty() {
                return Err(Error::Config(format!("concept {} has no images", c.concept_id)));
            }
        }
        Ok(())
    }

    pub fn concept(&self, concept_id: usize) -> Option<&ConceptEntry> {
        self.concepts.iter().find(|c| c.concept_id == concept_id)
    }

    pub fn concepts_in(&self, split: SplitKind) -> impl Iterator<Item = &ConceptEntry> {
        self.concepts.iter().filter(move |c| c.split == split)
    }

    pub fn n_images(&self) -> usize {
        self.concepts.iter().map(|c| c.image_ids.len()).sum()
    }

    /// Row of `(concept_id, image index)` in the embedding table.
    pub fn image_row(&self, concept_id: usize, image: usize) -> Option<usize> {
        let mut row = 0;
        for c in &self.concepts {
            if c.concept_id == concept_id {
                return (image < c.image_ids.len()).then_some(row + image);
            }
            row += c.image_ids.len();
        }
        None
    }

    /// Lookup table from concept id to its first embedding row; faster than
    /// repeated [`image_row`](Self::image_row) calls.
    pub fn row_index(&self) -> std::collections::HashMap<usize, (usize, usize)> {
        let mut row = 0;
        let mut out = std::collections::HashMap::new();
        for c in &self.concepts {
            out.insert(c.concept_id, (row, c.image_ids.len()));
            row += c.image_ids.len();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: usize, split: SplitKind, n: usize) -> ConceptEntry {
        ConceptEntry {
            concept_id: id,
            name: format!("c{id}"),
            split,
            class_label: ClassLabel::Other,
            image_ids: (0..n).map(|i| format!("c{id}_{i}")).collect(),
        }
    }

    #[test]
    fn duplicate_concepts_rejected() {
        let cat = StimulusCatalog {
            version: 1,
            embedding_dim: 4,
            concepts: vec![entry(0, SplitKind::Train, 2), entry(0, SplitKind::Test, 1)],
        };
        assert!(cat.validate().is_err());
    }

    #[test]
    fn rows_follow_catalog_order() {
        let cat = StimulusCatalog {
            version: 1,
            embedding_dim: 4,
            concepts: vec![entry(5, SplitKind::Train, 3), entry(2, SplitKind::Test, 1)],
        };
        cat.validate().unwrap();
        assert_eq!(cat.image_row(5, 2), Some(2));
        assert_eq!(cat.image_row(2, 0), Some(3));
        assert_eq!(cat.image_row(2, 1), None);
        assert_eq!(cat.n_images(), 4);
        let json = serde_json::to_string(&cat).unwrap();
        assert!(json.contains("\"split\":\"test\""));
        assert!(json.contains("\"class_label\":\"Other\""));
    }
}
