//! Class-balanced accuracy and the one-sided paired sign-flip permutation test.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Probabilities at or above this are classified attended.
pub const DECISION_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DRAWS: usize = 100_000;
/// Largest pair count handled by exhaustive enumeration.
pub const EXACT_MAX_PAIRS: usize = 12;

/// Mean of the true-positive and true-negative rates at the fixed threshold.
pub fn balanced_accuracy(probs: &[f32], labels: &[Label]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::shape("prediction and label counts differ"));
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in probs.iter().zip(labels) {
        let predicted_attended = p as f64 >= DECISION_THRESHOLD;
        match l {
            Label::Attended => {
                pos += 1;
                tp += predicted_attended as usize;
            }
            Label::Unattended => {
                neg += 1;
                tn += !predicted_attended as usize;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub p_value: f64,
    pub mean_diff: f64,
    pub n: usize,
    pub exact: bool,
    /// Sign patterns evaluated (2^n when exact).
    pub draws: usize,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("paired scores differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::invalid("a paired test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite paired score"));
    }
    Ok(d)
}

/// Permuted sums within this (relative) distance of the observed one count
/// as ties, so sign patterns that reproduce it are not lost to rounding.
fn tie_tolerance(d: &[f64]) -> f64 {
    1e-12 * d.iter().map(|v| v.abs()).sum::<f64>().max(1e-300)
}

/// Fraction of all 2^n sign flips whose mean difference is ≥ the observed.
pub fn exact_permutation_p(d: &[f64]) -> Result<f64> {
    if d.is_empty() || d.len() > 24 {
        return Err(Error::invalid(format!("exact enumeration over {} pairs", d.len())));
    }
    let observed: f64 = d.iter().sum();
    let tol = tie_tolerance(d);
    let total = 1u64 << d.len();
    let mut hits = 0u64;
    for mask in 0..total {
        let s: f64 = d.iter().enumerate().map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v }).sum();
        hits += (s >= observed - tol) as u64;
    }
    Ok(hits as f64 / total as f64)
}

/// Monte-Carlo sign-flip p-value with the +1 correction.
pub fn sampled_permutation_p(d: &[f64], draws: usize, rng: &mut RngStream) -> Result<f64> {
    if d.is_empty() || draws == 0 {
        return Err(Error::invalid("sampled test needs differences and draws"));
    }
    let observed: f64 = d.iter().sum();
    let tol = tie_tolerance(d);
    let mut hits = 0usize;
    let mut bits = 0u64;
    let mut left = 0;
    for _ in 0..draws {
        let mut s = 0.0;
        for &v in d {
            if left == 0 {
                bits = rng.next_u64();
                left = 64;
            }
            s += if bits & 1 == 1 { -v } else { v };
            bits >>= 1;
            left -= 1;
        }
        hits += (s >= observed - tol) as usize;
    }
    Ok((1 + hits) as f64 / (1 + draws) as f64)
}

/// One-sided test of mean(a − b) > 0: exact enumeration for up to 12 pairs,
/// otherwise `draws` random sign flips.
pub fn paired_permutation_test(a: &[f64], b: &[f64], draws: usize, rng: &mut RngStream) -> Result<PermutationResult> {
    let d = differences(a, b)?;
    let n = d.len();
    let mean_diff = d.iter().sum::<f64>() / n as f64;
    if n <= EXACT_MAX_PAIRS {
        return Ok(PermutationResult { p_value: exact_permutation_p(&d)?, mean_diff, n, exact: true, draws: 1 << n });
    }
    Ok(PermutationResult { p_value: sampled_permutation_p(&d, draws, rng)?, mean_diff, n, exact: false, draws })
}

/// Significance marker for summary tables: `**` p < 0.001, `*` p ≤ 0.05,
/// `ns` otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        "ns"
    }
}
