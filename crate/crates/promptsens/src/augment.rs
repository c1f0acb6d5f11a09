//! Prompt augmentation: keyboard typos, synonym substitution, and
//! paraphrase bucketing.
//!
//! Both augmenters are pure functions of (prompt, rate, seed[, thesaurus]).
//! The edit budget is `round(rate * eligible_count)` with half-up rounding,
//! so the realized edit count is exact and testable. Randomness comes from
//! a ChaCha8 generator seeded per call; the same inputs always produce
//! byte-identical output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::bleu;

/// Fraction of eligible units (letters or words) to perturb.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AugmentationRate(f64);

impl AugmentationRate {
    pub fn new(value: f64) -> Result<Self, AugmentError> {
        if !(0.0..=1.0).contains(&value) || value.is_nan() {
            return Err(AugmentError::RateOutOfRange(value));
        }
        Ok(AugmentationRate(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    /// Edit budget for `eligible` perturbable units: round(rate * eligible),
    /// half rounding up.
    pub fn budget(&self, eligible: usize) -> usize {
        (self.0 * eligible as f64).round() as usize
    }
}

/// The augmentation methods the pipeline can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Typos,
    Synonyms,
    Paraphrase,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Typos => "typos",
            Method::Synonyms => "synonyms",
            Method::Paraphrase => "paraphrase",
        }
    }

    pub fn parse(s: &str) -> Result<Self, AugmentError> {
        match s {
            "typos" => Ok(Method::Typos),
            "synonyms" => Ok(Method::Synonyms),
            "paraphrase" => Ok(Method::Paraphrase),
            other => Err(AugmentError::UnknownMethod(other.to_string())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One perturbed prompt with full provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AugmentedPrompt {
    pub text: String,
    pub method: Method,
    pub rate: AugmentationRate,
    pub seed: u64,
    pub source_task: String,
}

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("augmentation rate {0} outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("unknown augmentation method {0:?}")]
    UnknownMethod(String),
    #[error("cannot read thesaurus {path}: {source}")]
    ThesaurusIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed thesaurus {path}: {message}")]
    ThesaurusMalformed { path: String, message: String },
}

/// Letters adjacent on a standard US QWERTY layout: horizontal neighbors on
/// the same row plus the staggered diagonal neighbors above and below.
/// Letters only; a replacement never equals the original key.
pub const QWERTY_ADJACENT: [(char, &str); 26] = [
    ('a', "qwsz"),
    ('b', "vghn"),
    ('c', "xdfv"),
    ('d', "ersfxc"),
    ('e', "wrsd"),
    ('f', "rtdgcv"),
    ('g', "tyfhvb"),
    ('h', "yugjbn"),
    ('i', "uojk"),
    ('j', "uihknm"),
    ('k', "iojlm"),
    ('l', "opk"),
    ('m', "jkn"),
    ('n', "hjbm"),
    ('o', "ipkl"),
    ('p', "ol"),
    ('q', "wa"),
    ('r', "etdf"),
    ('s', "weadzx"),
    ('t', "ryfg"),
    ('u', "yihj"),
    ('v', "fgcb"),
    ('w', "qeas"),
    ('x', "sdzc"),
    ('y', "tugh"),
    ('z', "asx"),
];

fn adjacent_keys(letter: char) -> &'static str {
    let lower = letter.to_ascii_lowercase();
    QWERTY_ADJACENT
        .iter()
        .find(|(k, _)| *k == lower)
        .map(|(_, adj)| *adj)
        .expect("ascii letter")
}

/// Replace `round(rate * letters)` ASCII letters with a QWERTY-adjacent key.
///
/// Positions are drawn uniformly without replacement; each replacement is a
/// uniform choice from the adjacency set of the original key with case
/// preserved. Non-letter characters are never touched, so the output has
/// the same length and the same non-letter bytes as the input.
pub fn typo_augment(prompt: &str, rate: AugmentationRate, seed: u64) -> AugmentedPrompt {
    let mut chars: Vec<char> = prompt.chars().collect();
    let letter_positions: Vec<usize> = chars
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_ascii_alphabetic())
        .map(|(i, _)| i)
        .collect();
    let k = rate.budget(letter_positions.len());
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = index_sample(&mut rng, letter_positions.len(), k).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let pos = letter_positions[idx];
            let original = chars[pos];
            let neighbors = adjacent_keys(original);
            let choice = neighbors.as_bytes()[rng.random_range(0..neighbors.len())] as char;
            chars[pos] = if original.is_ascii_uppercase() {
                choice.to_ascii_uppercase()
            } else {
                choice
            };
        }
    }
    AugmentedPrompt {
        text: chars.into_iter().collect(),
        method: Method::Typos,
        rate,
        seed,
        source_task: String::new(),
    }
}

/// Synonym map from lowercase lemma to replacement candidates.
///
/// Entries never contain the lemma itself, only single-token synonyms
/// (letters, digits, apostrophes), and no list is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thesaurus {
    entries: BTreeMap<String, Vec<String>>,
}

impl Thesaurus {
    /// Build from raw entries, enforcing the invariants: lemmas lowercased,
    /// self-synonyms and multi-token synonyms dropped, empty lists dropped.
    pub fn new(raw: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let mut entries = BTreeMap::new();
        for (lemma, synonyms) in raw {
            let lemma = lemma.to_lowercase();
            let kept: Vec<String> = synonyms
                .into_iter()
                .filter(|s| s.to_lowercase() != lemma && is_single_word(s))
                .collect();
            if !kept.is_empty() {
                entries.insert(lemma, kept);
            }
        }
        Thesaurus { entries }
    }

    pub fn synonyms(&self, lemma: &str) -> Option<&[String]> {
        self.entries.get(lemma).map(Vec::as_slice)
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.entries.contains_key(lemma)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

fn is_single_word(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_word_char)
}

/// Load a thesaurus from a JSON object file `{lemma: [synonyms, ...]}`.
pub fn load_thesaurus(path: impl AsRef<Path>) -> Result<Thesaurus, AugmentError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| AugmentError::ThesaurusIo {
        path: display.clone(),
        source,
    })?;
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&content).map_err(|e| AugmentError::ThesaurusMalformed {
            path: display.clone(),
            message: e.to_string(),
        })?;
    let thesaurus = Thesaurus::new(raw);
    if thesaurus.is_empty() {
        log::warn!("{display}: thesaurus has no usable entries");
    }
    Ok(thesaurus)
}

// A word span or the separator text between words.
enum Segment<'a> {
    Word(&'a str),
    Separator(&'a str),
}

fn segment_words(text: &str) -> Vec<Segment<'_>> {
    let mut segments = Vec::new();
    let mut start = 0;
    let mut in_word = None::<bool>;
    for (idx, ch) in text.char_indices() {
        let word = is_word_char(ch);
        match in_word {
            None => in_word = Some(word),
            Some(prev) if prev != word => {
                segments.push(if prev {
                    Segment::Word(&text[start..idx])
                } else {
                    Segment::Separator(&text[start..idx])
                });
                start = idx;
                in_word = Some(word);
            }
            _ => {}
        }
    }
    if start < text.len() {
        segments.push(match in_word {
            Some(true) => Segment::Word(&text[start..]),
            _ => Segment::Separator(&text[start..]),
        });
    }
    segments
}

/// Replace `round(rate * eligible)` words with a synonym from the thesaurus.
///
/// Words are maximal runs of letters, digits, and apostrophes; a word is
/// eligible when its lowercase form has a thesaurus entry. The replacement
/// is a uniform choice from the entry, with the original word's first-letter
/// capitalization carried over. Separators and ineligible words are copied
/// byte for byte.
pub fn synonym_augment(
    prompt: &str,
    rate: AugmentationRate,
    seed: u64,
    thesaurus: &Thesaurus,
) -> AugmentedPrompt {
    let segments = segment_words(prompt);
    let eligible: Vec<usize> = segments
        .iter()
        .enumerate()
        .filter_map(|(i, seg)| match seg {
            Segment::Word(w) if thesaurus.contains(&w.to_lowercase()) => Some(i),
            _ => None,
        })
        .collect();
    let k = rate.budget(eligible.len());

    let mut replacements: BTreeMap<usize, String> = BTreeMap::new();
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = index_sample(&mut rng, eligible.len(), k).into_vec();
        picked.sort_unstable();
        for idx in picked {
            let seg_idx = eligible[idx];
            let word = match segments[seg_idx] {
                Segment::Word(w) => w,
                Segment::Separator(_) => unreachable!("eligible indices are words"),
            };
            let options = thesaurus
                .synonyms(&word.to_lowercase())
                .expect("eligible word has entry");
            let choice = &options[rng.random_range(0..options.len())];
            replacements.insert(seg_idx, match_first_letter_case(word, choice));
        }
    }

    let mut text = String::with_capacity(prompt.len());
    for (i, seg) in segments.iter().enumerate() {
        match seg {
            Segment::Word(w) => match replacements.get(&i) {
                Some(replacement) => text.push_str(replacement),
                None => text.push_str(w),
            },
            Segment::Separator(s) => text.push_str(s),
        }
    }
    AugmentedPrompt {
        text,
        method: Method::Synonyms,
        rate,
        seed,
        source_task: String::new(),
    }
}

fn match_first_letter_case(original: &str, replacement: &str) -> String {
    let first_upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if first_upper => c.to_uppercase().chain(chars).collect(),
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Characters that differ between two equal-length strings (the typo
/// augmenter's edit count).
pub fn count_char_differences(a: &str, b: &str) -> usize {
    a.chars().zip(b.chars()).filter(|(x, y)| x != y).count()
        + a.chars().count().abs_diff(b.chars().count())
}

/// Words that differ between two strings under the augmenter's word rule
/// (the synonym augmenter's edit count).
pub fn count_word_differences(a: &str, b: &str) -> usize {
    let words = |s: &str| -> Vec<String> {
        segment_words(s)
            .into_iter()
            .filter_map(|seg| match seg {
                Segment::Word(w) => Some(w.to_string()),
                Segment::Separator(_) => None,
            })
            .collect()
    };
    let wa = words(a);
    let wb = words(b);
    wa.iter().zip(&wb).filter(|(x, y)| x != y).count() + wa.len().abs_diff(wb.len())
}

/// Diversity level of a paraphrase, assigned from its BLEU score against
/// the original prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BucketLabel {
    /// The unaltered prompt itself; never assigned by bucketing.
    Original,
    /// BLEU in [0.5, 1.0]: lightly reworded.
    Low,
    /// BLEU in [0.2, 0.5): moderately reworded.
    Medium,
    /// BLEU in [0.0, 0.2): heavily reworded.
    High,
}

impl BucketLabel {
    pub fn name(&self) -> &'static str {
        match self {
            BucketLabel::Original => "original",
            BucketLabel::Low => "low",
            BucketLabel::Medium => "medium",
            BucketLabel::High => "high",
        }
    }

    /// The bucket whose BLEU range contains `score`. Boundaries follow the
    /// half-open ranges above: 0.5 is low, 0.2 is medium.
    pub fn for_score(score: f64) -> BucketLabel {
        if score >= 0.5 {
            BucketLabel::Low
        } else if score >= 0.2 {
            BucketLabel::Medium
        } else {
            BucketLabel::High
        }
    }
}

impl fmt::Display for BucketLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Score each paraphrase with BLEU against the original (single reference)
/// and group by bucket. All four labels are present in the result; the
/// `original` bucket is always empty here and is populated by the pipeline
/// from fresh reference samples.
pub fn bucket_paraphrases(
    original: &str,
    paraphrases: &[String],
) -> BTreeMap<BucketLabel, Vec<String>> {
    let mut buckets: BTreeMap<BucketLabel, Vec<String>> = BTreeMap::new();
    for label in [
        BucketLabel::Original,
        BucketLabel::Low,
        BucketLabel::Medium,
        BucketLabel::High,
    ] {
        buckets.insert(label, Vec::new());
    }
    for paraphrase in paraphrases {
        let label = match bleu(paraphrase, original) {
            Ok(score) => BucketLabel::for_score(score.value()),
            // Token-free paraphrases share nothing with the original.
            Err(_) => BucketLabel::High,
        };
        buckets
            .get_mut(&label)
            .expect("prefilled")
            .push(paraphrase.clone());
    }
    buckets
}

/// One paraphrase record as stored in the paraphrase JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub task_id: String,
    pub text: String,
}

/// Load paraphrases grouped by task id from a JSON Lines file.
pub fn load_paraphrases(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, Vec<String>>, AugmentError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| AugmentError::ThesaurusIo {
        path: display.clone(),
        source,
    })?;
    let mut by_task: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ParaphraseRecord =
            serde_json::from_str(line).map_err(|e| AugmentError::ThesaurusMalformed {
                path: display.clone(),
                message: format!("line {}: {}", idx + 1, e),
            })?;
        by_task.entry(record.task_id).or_default().push(record.text);
    }
    Ok(by_task)
}
