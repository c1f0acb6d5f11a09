//! The sweep pipeline: reference baseline, rate sweep, pairwise scoring,
//! and aggregation with bootstrap intervals.
//!
//! For one task and method the pipeline generates `n` reference samples
//! from the unperturbed prompt, then for each rate r in {0, step, ..., 1}
//! generates `n` samples from freshly augmented prompts (a new seed per
//! sample index) and scores all n*n (reference, augmented) pairs with the
//! normalized tree similarity. The mean per rate is the curve value.
//!
//! Rate 0 is swept like every other rate, with fresh generation slots: on a
//! stochastic backend the rate-0 point may legitimately sit below 1, and
//! nothing here special-cases it.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::AugmentationRate;
use crate::augment::{
    bucket_paraphrases, synonym_augment, typo_augment, BucketLabel, Method, Thesaurus,
};
use crate::backend::{generate_batch, Backend, BackendError, GenerationRequest};
use crate::codeparse::{extract_code, parse_code, CodeSample, ExtractError, SampleOrigin};
use crate::corpus::{PromptEnvelope, TaskRecord};
use crate::hash::{augment_seed, stable_hash};
use crate::similarity::tsed_trees;

/// Swept-point key: a numeric augmentation rate or a paraphrase bucket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateKey {
    Rate(f64),
    Bucket(BucketLabel),
}

impl RateKey {
    /// Canonical string form, used in CSV columns and seed derivation.
    pub fn canonical(&self) -> String {
        self.to_string()
    }

    fn sort_key(&self) -> (u8, f64) {
        match self {
            RateKey::Rate(r) => (0, *r),
            RateKey::Bucket(BucketLabel::Original) => (1, 0.0),
            RateKey::Bucket(BucketLabel::Low) => (1, 1.0),
            RateKey::Bucket(BucketLabel::Medium) => (1, 2.0),
            RateKey::Bucket(BucketLabel::High) => (1, 3.0),
        }
    }
}

impl fmt::Display for RateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateKey::Rate(r) => write!(f, "{r}"),
            RateKey::Bucket(b) => write!(f, "{b}"),
        }
    }
}

/// Pipeline parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    /// Reference and per-rate sample count.
    pub n_samples: usize,
    /// Rate grid step; must divide 1 into an integer number of steps.
    pub rate_step: f64,
    /// Maximum in-flight generation requests.
    pub parallelism: usize,
    /// Base seed mixed into bootstrap interval derivation.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_samples: 5,
            rate_step: 0.1,
            parallelism: 4,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_samples < 2 {
            return Err(PipelineError::InvalidConfig(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        if !(self.rate_step > 0.0 && self.rate_step <= 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "rate_step must be in (0, 1], got {}",
                self.rate_step
            )));
        }
        let steps = (1.0 / self.rate_step).round();
        if (steps * self.rate_step - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidConfig(format!(
                "rate_step {} does not divide 1 into whole steps",
                self.rate_step
            )));
        }
        if self.parallelism == 0 {
            return Err(PipelineError::InvalidConfig(
                "parallelism must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// The swept rates {0, step, ..., 1}. Computed as i/steps so the values
    /// print cleanly and the last one is exactly 1.
    pub fn rates(&self) -> Vec<f64> {
        let steps = (1.0 / self.rate_step).round() as usize;
        (0..=steps).map(|i| i as f64 / steps as f64).collect()
    }
}

/// The n samples generated for one rate (or bucket).
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub rate: RateKey,
    pub samples: Vec<CodeSample>,
}

/// One point of a sensitivity curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub rate: RateKey,
    pub mean_similarity: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

/// One pairwise score, kept for audit and pooled aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub rate: RateKey,
    pub reference_index: usize,
    pub augmented_index: usize,
    pub score: f64,
}

/// Complete sweep output for one (task, method).
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub task_id: String,
    pub model: String,
    pub method: Method,
    pub points: Vec<RatePoint>,
    pub pairs: Vec<PairRecord>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("generation failed for task {task_id}: {source}")]
    Generation {
        task_id: String,
        #[source]
        source: BackendError,
    },
    #[error("empty response for task {task_id}: {source}")]
    Extract {
        task_id: String,
        #[source]
        source: ExtractError,
    },
    #[error("task {task_id} needs a thesaurus for synonym augmentation")]
    MissingThesaurus { task_id: String },
    #[error("task {task_id} has no paraphrases")]
    NoParaphrases { task_id: String },
    #[error("aggregation inputs disagree on the rate grid")]
    GridMismatch,
    #[error("aggregation inputs mix methods")]
    MethodMismatch,
    #[error("nothing to aggregate")]
    NothingToAggregate,
}

/// Everything a sweep needs besides the task itself.
pub struct SweepContext<'a> {
    pub backend: &'a dyn Backend,
    pub envelope: &'a PromptEnvelope,
    pub thesaurus: Option<&'a Thesaurus>,
    pub config: &'a PipelineConfig,
}

impl<'a> SweepContext<'a> {
    fn generate_set(
        &self,
        task: &TaskRecord,
        rate: RateKey,
        method: &str,
        bodies: &[String],
        slot_base: u32,
    ) -> Result<SampleSet, PipelineError> {
        let requests: Vec<GenerationRequest> = bodies
            .iter()
            .enumerate()
            .map(|(j, body)| GenerationRequest {
                model_name: self.backend.model_name().to_string(),
                prompt: self.envelope.wrap(body),
                temperature: 0.0,
                sample_index: slot_base + j as u32,
            })
            .collect();
        let responses = generate_batch(self.backend, &requests, self.config.parallelism);
        let mut samples = Vec::with_capacity(responses.len());
        for (j, response) in responses.into_iter().enumerate() {
            let response = response.map_err(|source| PipelineError::Generation {
                task_id: task.id.clone(),
                source,
            })?;
            let sample = extract_code(&response.text).map_err(|source| PipelineError::Extract {
                task_id: task.id.clone(),
                source,
            })?;
            samples.push(sample.with_origin(SampleOrigin {
                task_id: task.id.clone(),
                method: method.to_string(),
                rate: rate.canonical(),
                sample_index: j as u32,
            }));
        }
        Ok(SampleSet { rate, samples })
    }
}

/// Generate the reference baseline: n samples of the unperturbed prompt,
/// request slots 0..n-1.
pub fn run_reference(task: &TaskRecord, ctx: &SweepContext) -> Result<SampleSet, PipelineError> {
    ctx.config.validate()?;
    let bodies = vec![task.prompt.clone(); ctx.config.n_samples];
    ctx.generate_set(task, RateKey::Rate(0.0), "reference", &bodies, 0)
}

fn augmented_bodies(
    task: &TaskRecord,
    method: Method,
    rate: f64,
    rate_key: &RateKey,
    n: usize,
    thesaurus: Option<&Thesaurus>,
) -> Result<Vec<String>, PipelineError> {
    let rate = AugmentationRate::new(rate).expect("grid rate in range");
    let mut bodies = Vec::with_capacity(n);
    for j in 0..n {
        let seed = augment_seed(&task.id, method.name(), &rate_key.canonical(), j as u32);
        let text = match method {
            Method::Typos => typo_augment(&task.prompt, rate, seed).text,
            Method::Synonyms => {
                let thesaurus = thesaurus.ok_or_else(|| PipelineError::MissingThesaurus {
                    task_id: task.id.clone(),
                })?;
                synonym_augment(&task.prompt, rate, seed, thesaurus).text
            }
            Method::Paraphrase => {
                unreachable!("paraphrase sweeps go through run_paraphrase_eval")
            }
        };
        bodies.push(text);
    }
    Ok(bodies)
}

fn score_pairs(reference: &SampleSet, augmented: &SampleSet) -> Vec<PairRecord> {
    let ref_trees: Vec<_> = reference.samples.iter().map(parse_code).collect();
    let aug_trees: Vec<_> = augmented.samples.iter().map(parse_code).collect();
    let index_pairs: Vec<(usize, usize)> = (0..ref_trees.len())
        .flat_map(|i| (0..aug_trees.len()).map(move |j| (i, j)))
        .collect();
    index_pairs
        .par_iter()
        .map(|&(i, j)| PairRecord {
            rate: augmented.rate,
            reference_index: i,
            augmented_index: j,
            score: tsed_trees(&ref_trees[i], &aug_trees[j]).value(),
        })
        .collect()
}

fn point_from_scores(rate: RateKey, scores: &[f64], bootstrap_seed: u64) -> RatePoint {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let (ci_low, ci_high) = bootstrap_interval(scores, bootstrap_seed);
    RatePoint {
        rate,
        mean_similarity: mean,
        ci_low: ci_low.min(mean),
        ci_high: ci_high.max(mean),
        count: scores.len(),
    }
}

fn bootstrap_seed_for(task_id: &str, method: &str, rate_key: &str, base_seed: u64) -> u64 {
    stable_hash(&[
        b"bootstrap",
        task_id.as_bytes(),
        method.as_bytes(),
        rate_key.as_bytes(),
        &base_seed.to_le_bytes(),
    ])
}

/// Sweep one task with one augmentation method over the whole rate grid.
pub fn run_sweep(
    task: &TaskRecord,
    method: Method,
    ctx: &SweepContext,
) -> Result<SweepResult, PipelineError> {
    ctx.config.validate()?;
    let n = ctx.config.n_samples;
    let reference = run_reference(task, ctx)?;

    let mut points = Vec::new();
    let mut pairs = Vec::new();
    for (step, rate) in ctx.config.rates().into_iter().enumerate() {
        let rate_key = RateKey::Rate(rate);
        let bodies = augmented_bodies(task, method, rate, &rate_key, n, ctx.thesaurus)?;
        // Slots n*(step+1).. keep these requests distinct from the
        // reference slots even where the augmented prompt is unchanged.
        let slot_base = (n * (step + 1)) as u32;
        let augmented = ctx.generate_set(task, rate_key, method.name(), &bodies, slot_base)?;
        let mut rate_pairs = score_pairs(&reference, &augmented);
        let scores: Vec<f64> = rate_pairs.iter().map(|p| p.score).collect();
        let seed = bootstrap_seed_for(
            &task.id,
            method.name(),
            &rate_key.canonical(),
            ctx.config.seed,
        );
        points.push(point_from_scores(rate_key, &scores, seed));
        pairs.append(&mut rate_pairs);
    }
    Ok(SweepResult {
        task_id: task.id.clone(),
        model: ctx.backend.model_name().to_string(),
        method,
        points,
        pairs,
    })
}

/// Paraphrase-bucket variant: points are keyed by {original, low, medium,
/// high} instead of a numeric rate. The original bucket compares two fresh
/// reference sets; each other bucket cycles through its paraphrases to fill
/// n samples. Empty buckets are skipped with a warning.
pub fn run_paraphrase_eval(
    task: &TaskRecord,
    paraphrases: &[String],
    ctx: &SweepContext,
) -> Result<SweepResult, PipelineError> {
    ctx.config.validate()?;
    if paraphrases.is_empty() {
        return Err(PipelineError::NoParaphrases {
            task_id: task.id.clone(),
        });
    }
    let n = ctx.config.n_samples;
    let buckets = bucket_paraphrases(&task.prompt, paraphrases);
    let reference = run_reference(task, ctx)?;

    let mut points = Vec::new();
    let mut pairs = Vec::new();

    // Original bucket: a second, independent reference set in slots n..2n-1.
    let original_key = RateKey::Bucket(BucketLabel::Original);
    let bodies = vec![task.prompt.clone(); n];
    let fresh = ctx.generate_set(
        task,
        original_key,
        Method::Paraphrase.name(),
        &bodies,
        n as u32,
    )?;
    let mut original_pairs = score_pairs(&reference, &fresh);
    let scores: Vec<f64> = original_pairs.iter().map(|p| p.score).collect();
    let seed = bootstrap_seed_for(&task.id, "paraphrase", "original", ctx.config.seed);
    points.push(point_from_scores(original_key, &scores, seed));
    pairs.append(&mut original_pairs);

    for (bucket_index, label) in [BucketLabel::Low, BucketLabel::Medium, BucketLabel::High]
        .into_iter()
        .enumerate()
    {
        let texts = &buckets[&label];
        if texts.is_empty() {
            log::warn!(
                "task {}: paraphrase bucket {label} is empty, point omitted",
                task.id
            );
            continue;
        }
        let rate_key = RateKey::Bucket(label);
        let bodies: Vec<String> = (0..n).map(|j| texts[j % texts.len()].clone()).collect();
        let slot_base = ((bucket_index + 2) * n) as u32;
        let set = ctx.generate_set(
            task,
            rate_key,
            Method::Paraphrase.name(),
            &bodies,
            slot_base,
        )?;
        let mut bucket_pairs = score_pairs(&reference, &set);
        let scores: Vec<f64> = bucket_pairs.iter().map(|p| p.score).collect();
        let seed = bootstrap_seed_for(&task.id, "paraphrase", label.name(), ctx.config.seed);
        points.push(point_from_scores(rate_key, &scores, seed));
        pairs.append(&mut bucket_pairs);
    }

    Ok(SweepResult {
        task_id: task.id.clone(),
        model: ctx.backend.model_name().to_string(),
        method: Method::Paraphrase,
        points,
        pairs,
    })
}

const BOOTSTRAP_RESAMPLES: usize = 2000;

/// 95% percentile-bootstrap interval of the mean: 2000 seeded resamples,
/// 2.5th and 97.5th percentiles with linear interpolation.
pub fn bootstrap_interval(scores: &[f64], seed: u64) -> (f64, f64) {
    assert!(!scores.is_empty(), "bootstrap needs data");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut sum = 0.0;
        for _ in 0..scores.len() {
            sum += scores[rng.random_range(0..scores.len())];
        }
        means.push(sum / scores.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    (percentile(&means, 0.025), percentile(&means, 0.975))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Pool per-pair scores per rate across sweep results and compute pooled
/// means with bootstrap intervals.
///
/// All inputs must share the method and the rate grid. Pooled scores are
/// sorted before resampling, so the output is invariant under permutations
/// of the input list.
pub fn aggregate_curves(
    results: &[SweepResult],
    seed: u64,
) -> Result<Vec<RatePoint>, PipelineError> {
    if results.is_empty() {
        return Err(PipelineError::NothingToAggregate);
    }
    let method = results[0].method;
    if results.iter().any(|r| r.method != method) {
        return Err(PipelineError::MethodMismatch);
    }
    let grid: Vec<String> = results[0]
        .points
        .iter()
        .map(|p| p.rate.canonical())
        .collect();
    for result in results {
        let this: Vec<String> = result.points.iter().map(|p| p.rate.canonical()).collect();
        if this != grid {
            return Err(PipelineError::GridMismatch);
        }
    }

    let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let rate_keys: Vec<RateKey> = results[0].points.iter().map(|p| p.rate).collect();
    for result in results {
        for pair in &result.pairs {
            let idx = rate_keys
                .iter()
                .position(|k| k.canonical() == pair.rate.canonical())
                .ok_or(PipelineError::GridMismatch)?;
            pooled.entry(idx).or_default().push(pair.score);
        }
    }

    let mut points = Vec::new();
    for (idx, rate_key) in rate_keys.iter().enumerate() {
        let mut scores = pooled.remove(&idx).unwrap_or_default();
        if scores.is_empty() {
            return Err(PipelineError::GridMismatch);
        }
        scores.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
        let seed = stable_hash(&[
            b"aggregate",
            method.name().as_bytes(),
            rate_key.canonical().as_bytes(),
            &seed.to_le_bytes(),
        ]);
        points.push(point_from_scores(*rate_key, &scores, seed));
    }
    points.sort_by(|a, b| {
        a.rate
            .sort_key()
            .partial_cmp(&b.rate.sort_key())
            .expect("sortable keys")
    });
    Ok(points)
}
