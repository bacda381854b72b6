//! Two-level label taxonomy: assessment items, each with three ordinal
//! outcome scores, under a single root summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of outcome scores per item.
pub const SCORES_PER_ITEM: usize = 3;

/// One ordinal outcome of an item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Score {
    /// Ordinal value, 0..=2.
    pub value: u8,
    /// Sentence describing how the movement is performed at this score.
    pub description: String,
}

/// One assessment item (first-level class).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Item {
    /// Stable identifier, e.g. `"I1"`.
    pub id: String,
    /// Short display name.
    pub name: String,
    /// Sentence describing the movement being assessed.
    pub description: String,
    /// Exactly three scores ordered by value 0, 1, 2.
    pub scores: Vec<Score>,
}

/// Full label hierarchy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Taxonomy {
    /// Root description covering every item.
    pub summary: String,
    pub items: Vec<Item>,
}

impl Taxonomy {
    /// Number of first-level classes.
    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Number of leaf classes (`items * 3`).
    pub fn num_leaves(&self) -> usize {
        self.items.len() * SCORES_PER_ITEM
    }

    /// Flat leaf index of `(item, score)` in item-major order.
    pub fn flat_index(&self, item: usize, score: usize) -> Result<usize> {
        if item >= self.num_items() || score >= SCORES_PER_ITEM {
            return Err(Error::Taxonomy(format!(
                "pair ({item},{score}) out of range for {} items",
                self.num_items()
            )));
        }
        Ok(item * SCORES_PER_ITEM + score)
    }

    /// Inverse of [`Taxonomy::flat_index`].
    pub fn parent_of(&self, leaf: usize) -> Result<(usize, usize)> {
        if leaf >= self.num_leaves() {
            return Err(Error::Taxonomy(format!(
                "leaf {leaf} out of range for {} leaves",
                self.num_leaves()
            )));
        }
        Ok((leaf / SCORES_PER_ITEM, leaf % SCORES_PER_ITEM))
    }

    /// Text used to embed each item, in item order.
    pub fn item_texts(&self) -> Vec<String> {
        self.items
            .iter()
            .map(|it| format!("{}: {}", it.name, it.description))
            .collect()
    }

    /// Text used to embed each leaf, in flat order.
    pub fn leaf_texts(&self) -> Vec<String> {
        self.items
            .iter()
            .flat_map(|it| {
                it.scores
                    .iter()
                    .map(move |s| format!("{}: {}", it.name, s.description))
            })
            .collect()
    }

    /// Validates structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Taxonomy("taxonomy has no items".into()));
        }
        if self.summary.trim().is_empty() {
            return Err(Error::Taxonomy("empty root summary".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (j, item) in self.items.iter().enumerate() {
            if item.id.trim().is_empty() {
                return Err(Error::Taxonomy(format!("item {j} has an empty id")));
            }
            if !seen.insert(item.id.clone()) {
                return Err(Error::Taxonomy(format!("duplicate item id {:?}", item.id)));
            }
            if item.scores.len() != SCORES_PER_ITEM {
                return Err(Error::Taxonomy(format!(
                    "item {:?} has {} scores, expected {SCORES_PER_ITEM}",
                    item.id,
                    item.scores.len()
                )));
            }
            for (k, s) in item.scores.iter().enumerate() {
                if s.value as usize != k {
                    return Err(Error::Taxonomy(format!(
                        "item {:?} score at position {k} has value {}, expected {k}",
                        item.id, s.value
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a taxonomy from JSON text.
pub fn parse_taxonomy(json: &str, origin: &str) -> Result<Taxonomy> {
    let tax: Taxonomy = serde_json::from_str(json).map_err(|e| Error::Json {
        path: origin.to_string(),
        source: e,
    })?;
    tax.validate()?;
    Ok(tax)
}

/// Loads and validates a taxonomy from a JSON file.
pub fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_taxonomy(&text, &path.display().to_string())
}

/// Built-in four-item upper-limb motor assessment hierarchy.
pub fn default_taxonomy() -> Taxonomy {
    parse_taxonomy(
        include_str!("../assets/default_taxonomy.json"),
        "assets/default_taxonomy.json",
    )
    .expect("bundled taxonomy is valid")
}

/// Hierarchy with `items` first-level classes: the bundled one when the count
/// matches, otherwise programmatically named items of the same shape.
pub fn taxonomy_for(items: usize) -> Result<Taxonomy> {
    let bundled = default_taxonomy();
    if items == bundled.num_items() {
        return Ok(bundled);
    }
    let items: Vec<Item> = (0..items)
        .map(|j| Item {
            id: format!("I{}", j + 1),
            name: format!("item {}", j + 1),
            description: format!("synthetic assessment movement {}", j + 1),
            scores: (0..SCORES_PER_ITEM as u8)
                .map(|v| Score {
                    value: v,
                    description: format!("movement {} performed at level {v}", j + 1),
                })
                .collect(),
        })
        .collect();
    let tax = Taxonomy {
        summary: "synthetic upper-limb assessment battery".into(),
        items,
    };
    tax.validate()?;
    Ok(tax)
}
