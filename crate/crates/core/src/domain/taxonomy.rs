//! The fixed component label set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered component label set. Index 0 is always the background; the
/// remaining `R` labels are the semantic regions that receive style codes.
///
/// Indices are contiguous from 0, so a mask pixel value is directly an index
/// into the label list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTaxonomy {
    labels: Vec<String>,
}

impl ComponentTaxonomy {
    /// Builds a taxonomy from ordered label names. The first entry is treated
    /// as the background class.
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidArgument(
                "taxonomy needs a background label and at least one component".into(),
            ));
        }
        if labels.len() > u8::MAX as usize + 1 {
            return Err(Error::InvalidArgument(
                "taxonomy has more labels than an 8-bit mask can store".into(),
            ));
        }
        Ok(Self { labels })
    }

    /// Number of labels including background.
    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Number of semantic regions `R` (labels excluding background).
    pub fn region_count(&self) -> usize {
        self.labels.len() - 1
    }

    /// Label name for an index, if the index is in range.
    pub fn name(&self, index: u8) -> Option<&str> {
        self.labels.get(index as usize).map(String::as_str)
    }

    /// Index for a label name.
    pub fn index_of(&self, name: &str) -> Option<u8> {
        self.labels.iter().position(|l| l == name).map(|i| i as u8)
    }

    /// Whether a mask pixel value is a valid label index.
    pub fn contains(&self, index: u8) -> bool {
        (index as usize) < self.labels.len()
    }

    /// Iterator over `(index, name)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (u8, &str)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, n)| (i as u8, n.as_str()))
    }

    /// Iterator over non-background `(index, name)` pairs.
    pub fn components(&self) -> impl Iterator<Item = (u8, &str)> {
        self.iter().skip(1)
    }
}

impl Default for ComponentTaxonomy {
    /// The default six-label satellite taxonomy.
    fn default() -> Self {
        Self {
            labels: vec![
                "background".into(),
                "main_body".into(),
                "solar_panel".into(),
                "antenna".into(),
                "nozzle".into(),
                "other".into(),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_taxonomy_layout() {
        let tax = ComponentTaxonomy::default();
        assert_eq!(tax.label_count(), 6);
        assert_eq!(tax.region_count(), 5);
        assert_eq!(tax.name(0), Some("background"));
        assert_eq!(tax.name(1), Some("main_body"));
        assert_eq!(tax.name(2), Some("solar_panel"));
        assert_eq!(tax.name(3), Some("antenna"));
        assert_eq!(tax.name(4), Some("nozzle"));
        assert_eq!(tax.name(5), Some("other"));
        assert_eq!(tax.index_of("nozzle"), Some(4));
        assert!(tax.contains(5));
        assert!(!tax.contains(6));
    }

    #[test]
    fn rejects_degenerate_label_sets() {
        assert!(ComponentTaxonomy::new(vec!["background".into()]).is_err());
        assert!(ComponentTaxonomy::new(vec![]).is_err());
    }

    #[test]
    fn components_skip_background() {
        let tax = ComponentTaxonomy::default();
        let comps: Vec<_> = tax.components().map(|(i, _)| i).collect();
        assert_eq!(comps, vec![1, 2, 3, 4, 5]);
    }
}
