//! Code similarity: tree edit distance, its normalized form, and BLEU.

mod bleu;
mod ted;

pub use bleu::{bleu, BleuError};
pub use ted::{tree_edit_distance, EditCosts};

use crate::codeparse::{parse_code, tree_size, CodeSample};

/// A similarity in [0, 1]; 1 means identical, 0 completely different.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Clamp into [0, 1]. NaN is rejected at construction.
    pub fn clamped(value: f64) -> Self {
        assert!(!value.is_nan(), "similarity score is NaN");
        SimilarityScore(value.clamp(0.0, 1.0))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Normalized syntax-tree similarity of two code samples.
///
/// Both samples are parsed, the unit-cost tree edit distance is divided by
/// the larger tree's node count, and the result is mapped to a similarity:
/// `max(0, 1 - distance / max(size1, size2))`.
pub fn tsed(c1: &CodeSample, c2: &CodeSample) -> SimilarityScore {
    tsed_trees(&parse_code(c1), &parse_code(c2))
}

/// [`tsed`] over already-parsed trees, for callers that score one parse
/// against many.
pub fn tsed_trees(
    t1: &crate::codeparse::SyntaxTree,
    t2: &crate::codeparse::SyntaxTree,
) -> SimilarityScore {
    let distance = tree_edit_distance(t1, t2, &EditCosts::unit());
    let denom = tree_size(t1).max(tree_size(t2)) as f64;
    SimilarityScore::clamped(1.0 - distance / denom)
}
