//! Nonparametric significance tests over sweep outputs: Friedman for
//! matched blocks, Kruskal-Wallis for independent groups, both converted to
//! p-values through the chi-square upper tail.
//!
//! Ties get mean ranks plus the standard correction factors. TSED scores
//! tie often (clamped zeros, identical samples), so tie handling is load
//! bearing here, not a nicety.

use thiserror::Error;

/// N blocks by k treatments, no missing cells.
#[derive(Debug, Clone)]
pub struct RankMatrix {
    blocks: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn new(blocks: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if blocks.len() < 2 {
            return Err(StatsError::TooFewBlocks(blocks.len()));
        }
        let k = blocks[0].len();
        if k < 2 {
            return Err(StatsError::TooFewTreatments(k));
        }
        if blocks.iter().any(|row| row.len() != k) {
            return Err(StatsError::RaggedMatrix);
        }
        Ok(RankMatrix { blocks })
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_treatments(&self) -> usize {
        self.blocks[0].len()
    }
}

/// Outcome of an omnibus test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub tie_corrected: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("need at least 2 blocks, got {0}")]
    TooFewBlocks(usize),
    #[error("need at least 2 treatments/groups, got {0}")]
    TooFewTreatments(usize),
    #[error("blocks have differing lengths")]
    RaggedMatrix,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("need at least 3 observations in total, got {0}")]
    TooFewObservations(usize),
}

/// Mean ranks (1-based) with ties sharing the average of their positions.
/// Returns the ranks and the tie term `sum(t^3 - t)` over tie groups.
fn mean_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN ranks"));
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let tied = (j - i + 1) as f64;
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        tie_term += tied * tied * tied - tied;
        i = j + 1;
    }
    (ranks, tie_term)
}

/// Friedman test across matched blocks.
///
/// Values are ranked within each block (ties get mean ranks), the classic
/// chi-square statistic is computed from the rank sums, and the result is
/// divided by the tie correction `1 - sum(t^3 - t) / (N k (k^2 - 1))`.
/// A fully tied matrix has no effect to detect: statistic 0, p 1.
pub fn friedman(matrix: &RankMatrix) -> Result<TestResult, StatsError> {
    let n = matrix.n_blocks() as f64;
    let k = matrix.n_treatments() as f64;
    let mut rank_sums = vec![0.0; matrix.n_treatments()];
    let mut tie_total = 0.0;
    let mut any_ties = false;
    for block in &matrix.blocks {
        let (ranks, tie_term) = mean_ranks(block);
        if tie_term > 0.0 {
            any_ties = true;
        }
        tie_total += tie_term;
        for (sum, rank) in rank_sums.iter_mut().zip(&ranks) {
            *sum += rank;
        }
    }
    let ssbn: f64 = rank_sums.iter().map(|r| r * r).sum();
    let uncorrected = 12.0 / (n * k * (k + 1.0)) * ssbn - 3.0 * n * (k + 1.0);
    let correction = 1.0 - tie_total / (n * k * (k * k - 1.0));
    let df = matrix.n_treatments() - 1;
    if correction <= 0.0 {
        // Every block fully tied: no ordering information at all.
        return Ok(TestResult {
            statistic: 0.0,
            df,
            p_value: 1.0,
            tie_corrected: any_ties,
        });
    }
    let statistic = (uncorrected / correction).max(0.0);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
        tie_corrected: any_ties,
    })
}

/// Kruskal-Wallis H-test across independent groups.
///
/// All observations are ranked globally with mean-rank ties, H is computed
/// from per-group rank sums, and divided by the tie correction
/// `1 - sum(t^3 - t) / (N^3 - N)`.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewTreatments(groups.len()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(StatsError::EmptyGroup(i));
        }
    }
    let total: usize = groups.iter().map(Vec::len).sum();
    if total < 3 {
        return Err(StatsError::TooFewObservations(total));
    }

    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, tie_term) = mean_ranks(&pooled);
    let n = total as f64;
    let mut h = 0.0;
    let mut offset = 0;
    for group in groups {
        let rank_sum: f64 = ranks[offset..offset + group.len()].iter().sum();
        h += rank_sum * rank_sum / group.len() as f64;
        offset += group.len();
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term / (n * n * n - n);
    let df = groups.len() - 1;
    if correction <= 0.0 {
        // All observations identical.
        return Ok(TestResult {
            statistic: 0.0,
            df,
            p_value: 1.0,
            tie_corrected: tie_term > 0.0,
        });
    }
    let statistic = (h / correction).max(0.0);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
        tie_corrected: tie_term > 0.0,
    })
}

/// Upper tail of the chi-square distribution: P(X >= x) for X ~ chi2(df).
///
/// Computed through the regularized incomplete gamma functions Q(df/2, x/2),
/// using the series expansion for x below a+1 and a Lentz continued
/// fraction above it. Absolute error stays under 1e-10 over the tested
/// grid.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    assert!(x >= 0.0, "chi-square statistic must be nonnegative");
    assert!(df > 0, "degrees of freedom must be positive");
    if x == 0.0 {
        return 1.0;
    }
    let a = df as f64 / 2.0;
    let half_x = x / 2.0;
    if half_x < a + 1.0 {
        1.0 - lower_gamma_series(a, half_x)
    } else {
        upper_gamma_cf(a, half_x)
    }
}

const MAX_ITER: usize = 500;

/// ln Gamma(x) by the Lanczos approximation (g = 7, 9 coefficients).
/// Coefficients kept at published precision.
#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

// Regularized lower incomplete gamma P(a, x) via its power series.
fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    (log_prefactor + sum.ln()).exp()
}

// Regularized upper incomplete gamma Q(a, x) via the Lentz continued
// fraction, valid for x > a + 1.
fn upper_gamma_cf(a: f64, x: f64) -> f64 {
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut f = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (log_prefactor + f.ln()).exp()
}
