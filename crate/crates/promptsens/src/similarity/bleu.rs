//! BLEU with brevity penalty, used to bucket paraphrases by diversity.
//!
//! Tokens are maximal alphanumeric runs; every other non-whitespace
//! character is its own token. Modified n-gram precisions for n up to
//! min(4, candidate length) enter a uniform-weight geometric mean, with
//! zero precisions floored at 1e-9 before the log. The brevity penalty is
//! exp(1 - |ref|/|cand|) when the candidate is shorter than the reference.

use std::collections::HashMap;

use thiserror::Error;

use super::SimilarityScore;

const PRECISION_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BleuError {
    #[error("empty input: {0} has no tokens")]
    EmptyInput(&'static str),
}

fn bleu_tokens(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(idx);
        } else {
            if let Some(s) = start.take() {
                tokens.push(&text[s..idx]);
            }
            if !ch.is_whitespace() {
                tokens.push(&text[idx..idx + ch.len_utf8()]);
            }
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of `candidate` against a single `reference`, in [0, 1].
pub fn bleu(candidate: &str, reference: &str) -> Result<SimilarityScore, BleuError> {
    let cand = bleu_tokens(candidate);
    let refr = bleu_tokens(reference);
    if cand.is_empty() {
        return Err(BleuError::EmptyInput("candidate"));
    }
    if refr.is_empty() {
        return Err(BleuError::EmptyInput("reference"));
    }

    let n_max = cand.len().min(4);
    let weight = 1.0 / n_max as f64;
    let mut log_sum = 0.0;
    for n in 1..=n_max {
        let cand_grams = ngram_counts(&cand, n);
        let ref_grams = ngram_counts(&refr, n);
        let total: usize = cand_grams.values().sum();
        let clipped: usize = cand_grams
            .iter()
            .map(|(gram, &count)| count.min(ref_grams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = (clipped as f64 / total as f64).max(PRECISION_FLOOR);
        log_sum += weight * precision.ln();
    }

    let brevity = if cand.len() < refr.len() {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    } else {
        1.0
    };
    let score = brevity * log_sum.exp();
    Ok(SimilarityScore::clamped(score))
}
