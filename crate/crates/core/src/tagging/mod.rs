//! Tag sets, the pluggable tagger interface, Jaccard similarity, and
//! severity profiling of degradations by tag agreement.

mod severity;
mod surrogate;

pub use severity::{
    classify_four, select_by_threshold, severity_profile, Selection, SeverityClasses, SimilarityRecord,
    SimilarityReport,
};
pub use surrogate::{surrogate_tag, SurrogateTagger, CANONICAL_SIZE, MIN_SIZE};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imgproc::ImageTensor;

/// Deduplicated, lower-cased tag tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSet {
    tags: BTreeSet<String>,
}

impl TagSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tag: impl AsRef<str>) {
        let t = tag.as_ref().trim().to_lowercase();
        if !t.is_empty() {
            self.tags.insert(t);
        }
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(&tag.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.iter().filter(|t| t.starts_with(prefix)).count()
    }
}

impl<S: AsRef<str>> FromIterator<S> for TagSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut t = TagSet::new();
        for s in iter {
            t.insert(s);
        }
        t
    }
}

/// Anything that describes an image as a set of tags.
pub trait Tagger: Sync {
    fn name(&self) -> &str;
    fn tag(&self, img: &ImageTensor) -> Result<TagSet>;
}

/// |a ∩ b| / |a ∪ b|; two empty sets count as identical.
pub fn jaccard(a: &TagSet, b: &TagSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.tags.intersection(&b.tags).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&str]) -> TagSet {
        items.iter().collect()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&["x", "y", "z"]), &set(&["y", "z", "w"])), 0.5);
        assert_eq!(jaccard(&TagSet::new(), &TagSet::new()), 1.0);
        assert_eq!(jaccard(&TagSet::new(), &set(&["a"])), 0.0);
    }

    #[test]
    fn tokens_are_normalised() {
        let t = set(&["Sky", "sky ", "SKY", ""]);
        assert_eq!(t.len(), 1);
        assert!(t.contains("sky"));
    }

    proptest! {
        #[test]
        fn jaccard_is_symmetric_and_bounded(
            a in proptest::collection::vec("[a-e]{1,2}", 0..8),
            b in proptest::collection::vec("[a-e]{1,2}", 0..8),
        ) {
            let (a, b): (TagSet, TagSet) = (a.iter().collect(), b.iter().collect());
            let j = jaccard(&a, &b);
            prop_assert_eq!(j, jaccard(&b, &a));
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
    }
}
