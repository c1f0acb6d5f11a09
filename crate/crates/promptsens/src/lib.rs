//! promptsens measures how sensitive code-generating language models are to
//! controlled prompt perturbations.
//!
//! The harness augments task prompts at increasing rates (keyboard typos,
//! synonym substitution, paraphrase buckets), samples generated code through
//! pluggable backends (live HTTP, record/replay cassettes, deterministic
//! mocks), scores structural divergence with a normalized syntax-tree edit
//! distance, and tests the significance of the resulting sensitivity curves
//! with Friedman and Kruskal-Wallis statistics.
//!
//! See the `book/` directory for a guided tour; every snippet there runs as
//! a doc-test of this crate.

pub mod augment;
pub mod backend;
pub mod codeparse;
pub mod config;
pub mod corpus;
pub mod hash;
pub mod pipeline;
pub mod report;
pub mod rundir;
pub mod similarity;
pub mod stats;

// Book chapters double as doc-tests so the guide cannot drift from the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(augmentation, "../../../book/src/augmentation.md");
    chapter!(parsing, "../../../book/src/parsing.md");
    chapter!(similarity, "../../../book/src/similarity.md");
    chapter!(backends, "../../../book/src/backends.md");
    chapter!(pipeline, "../../../book/src/pipeline.md");
    chapter!(statistics, "../../../book/src/statistics.md");
    chapter!(cli, "../../../book/src/cli.md");
}
