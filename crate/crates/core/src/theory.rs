//! Window-length theory for majority voting over independent detector outputs.
//!
//! A single-image detector that is correct with probability `p_hat > 0.5`
//! becomes strictly more accurate under a majority vote over `L + 1`
//! independent outputs once `L > 2 (ln 2 - ln(1 - p_hat)) / (2 p_hat - 1)^2`.
//! This module evaluates that bound, the Hoeffding misclassification bound it
//! comes from, the exact binomial accuracy, and a seeded Monte-Carlo check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::detectors::Verdict;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("p_hat = {0} must exceed 0.5 for the majority vote to help")]
    NotBetterThanChance(f64),
    #[error("p_hat = {0} is not a probability in (0, 1]")]
    NotAProbability(f64),
    #[error("window length must be positive")]
    EmptyWindow,
    #[error("trial count must be positive")]
    NoTrials,
}

pub type Result<T, E = TheoryError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundReport {
    pub p_hat: f64,
    /// Right-hand side of the window-length condition.
    pub raw_bound: f64,
    /// Smallest integer strictly greater than `raw_bound`.
    pub min_l: u64,
    /// Hoeffding misclassification bound at `min_l`.
    pub misclassification_at_min_l: f64,
}

fn check_p_hat(p_hat: f64) -> Result<()> {
    if !(p_hat > 0.0 && p_hat <= 1.0) {
        return Err(TheoryError::NotAProbability(p_hat));
    }
    if p_hat <= 0.5 {
        return Err(TheoryError::NotBetterThanChance(p_hat));
    }
    Ok(())
}

pub fn min_window_length(p_hat: f64) -> Result<BoundReport> {
    check_p_hat(p_hat)?;
    if p_hat == 1.0 {
        // a perfect detector stays perfect for any window; it never errs
        return Ok(BoundReport {
            p_hat,
            raw_bound: 0.0,
            min_l: 0,
            misclassification_at_min_l: 0.0,
        });
    }
    let margin = 2.0 * p_hat - 1.0;
    let raw_bound = 2.0 * (2f64.ln() - (1.0 - p_hat).ln()) / (margin * margin);
    let min_l = raw_bound.floor() as u64 + 1;
    Ok(BoundReport {
        p_hat,
        raw_bound,
        min_l,
        misclassification_at_min_l: misclassification_bound(p_hat, min_l)?,
    })
}

/// `min(1, 2 exp(-L (2 p_hat - 1)^2 / 2))`.
pub fn misclassification_bound(p_hat: f64, window: u64) -> Result<f64> {
    check_p_hat(p_hat)?;
    if window == 0 {
        return Err(TheoryError::EmptyWindow);
    }
    let margin = 2.0 * p_hat - 1.0;
    Ok((2.0 * (-(window as f64) * margin * margin / 2.0).exp()).min(1.0))
}

/// Smallest count of correct votes out of `n` that yields a correct decision.
///
/// The vote flags a frame when at least half the votes are adversarial, so a
/// tie is a correct decision only when the truth is adversarial.
fn correct_threshold(n: u64, truth: Verdict) -> u64 {
    match truth {
        Verdict::Adversarial => n.div_ceil(2),
        Verdict::Clean => n / 2 + 1,
    }
}

/// Probability that a majority vote over `window + 1` independent outputs,
/// each correct with probability `p_hat`, is correct.
pub fn exact_majority_accuracy(p_hat: f64, window: u64, truth: Verdict) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(TheoryError::NotAProbability(p_hat));
    }
    let n = window + 1;
    let k_min = correct_threshold(n, truth);
    if p_hat == 0.0 {
        return Ok(if k_min == 0 { 1.0 } else { 0.0 });
    }
    if p_hat == 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p_hat.ln(), (1.0 - p_hat).ln());
    // log C(n, k) accumulated incrementally, terms combined in log space
    let mut log_binom = 0.0;
    let mut log_terms = Vec::with_capacity((n - k_min + 1) as usize);
    for k in 0..=n {
        if k >= k_min {
            log_terms.push(log_binom + k as f64 * lp + (n - k) as f64 * lq);
        }
        if k < n {
            log_binom += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationReport {
    pub estimate: f64,
    pub trials: u64,
    /// Half-width of the 95% normal-approximation interval around the estimate.
    pub half_width: f64,
}

const TRIALS_PER_BLOCK: u64 = 4096;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte-Carlo estimate of [`exact_majority_accuracy`] under i.i.d. votes.
///
/// Trials are split into fixed-size blocks, each with its own generator
/// derived from `seed` and the block index, so the result does not depend on
/// how blocks are scheduled across threads.
pub fn simulate_majority(
    p_hat: f64,
    window: u64,
    trials: u64,
    seed: u64,
    truth: Verdict,
) -> Result<SimulationReport> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(TheoryError::NotAProbability(p_hat));
    }
    if trials == 0 {
        return Err(TheoryError::NoTrials);
    }
    let n = window + 1;
    let k_min = correct_threshold(n, truth);
    let blocks = trials.div_ceil(TRIALS_PER_BLOCK);
    let successes: u64 = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(block)));
            let count = TRIALS_PER_BLOCK.min(trials - block * TRIALS_PER_BLOCK);
            (0..count)
                .filter(|_| {
                    let correct = (0..n).filter(|_| rng.random::<f64>() < p_hat).count() as u64;
                    correct >= k_min
                })
                .count() as u64
        })
        .sum();
    let estimate = successes as f64 / trials as f64;
    Ok(SimulationReport {
        estimate,
        trials,
        half_width: 1.96 * (estimate * (1.0 - estimate) / trials as f64).sqrt(),
    })
}

/// One row of the window-length curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub report: BoundReport,
    /// Exact majority accuracy at `min_l`, taking the less favourable side
    /// of the tie rule.
    pub exact_p: f64,
}

pub fn bound_curve(grid: &[f64]) -> Result<Vec<CurveRow>> {
    grid.iter()
        .map(|&p| {
            if p >= 1.0 {
                return Err(TheoryError::NotAProbability(p));
            }
            let report = min_window_length(p)?;
            let exact_p = exact_majority_accuracy(p, report.min_l, Verdict::Clean)?.min(
                exact_majority_accuracy(p, report.min_l, Verdict::Adversarial)?,
            );
            Ok(CurveRow { report, exact_p })
        })
        .collect()
}

pub const CURVE_HEADER: &str = "p_hat,raw_bound,min_L,exact_p";

/// Formats with six significant digits, dropping trailing zeros.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            sig6(row.report.p_hat),
            sig6(row.report.raw_bound),
            row.report.min_l,
            sig6(row.exact_p)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        let r = min_window_length(0.6).unwrap();
        assert!((r.raw_bound - 80.4719).abs() < 0.01);
        assert_eq!(r.min_l, 81);
        let r = min_window_length(0.9).unwrap();
        assert!((r.raw_bound - 9.361_663).abs() < 0.001);
        assert_eq!(r.min_l, 10);
        assert!(r.misclassification_at_min_l < 0.1);
        assert_eq!(min_window_length(1.0).unwrap().min_l, 0);
    }

    #[test]
    fn bound_errors_are_distinct() {
        assert_eq!(
            min_window_length(0.5),
            Err(TheoryError::NotBetterThanChance(0.5))
        );
        assert_eq!(
            min_window_length(0.4),
            Err(TheoryError::NotBetterThanChance(0.4))
        );
        assert_eq!(
            min_window_length(1.2),
            Err(TheoryError::NotAProbability(1.2))
        );
        assert_eq!(
            min_window_length(0.0),
            Err(TheoryError::NotAProbability(0.0))
        );
        assert!(matches!(
            min_window_length(f64::NAN),
            Err(TheoryError::NotAProbability(_))
        ));
    }

    #[test]
    fn hoeffding_bound() {
        let b = misclassification_bound(0.9, 10).unwrap();
        assert!((b - 0.081_524_4).abs() < 1e-4);
        let (one, two) = (
            misclassification_bound(0.7, 40).unwrap(),
            misclassification_bound(0.7, 80).unwrap(),
        );
        assert!((two - one * one / 2.0).abs() < 1e-15);
        assert_eq!(misclassification_bound(0.55, 1).unwrap(), 1.0);
        assert!(misclassification_bound(0.4, 3).is_err());
        assert_eq!(
            misclassification_bound(0.9, 0),
            Err(TheoryError::EmptyWindow)
        );
    }

    #[test]
    fn exact_accuracy_small_cases() {
        assert_eq!(
            exact_majority_accuracy(0.9, 0, Verdict::Adversarial).unwrap(),
            0.9
        );
        assert!((exact_majority_accuracy(0.9, 0, Verdict::Clean).unwrap() - 0.9).abs() < 1e-15);
        for window in [0, 2, 10, 100] {
            let p = exact_majority_accuracy(0.5, window, Verdict::Adversarial).unwrap();
            assert!((p - 0.5).abs() < 1e-12, "window {window}: {p}");
        }
        let p = exact_majority_accuracy(0.9, 10, Verdict::Adversarial).unwrap();
        assert!((p - 0.999_704_293_92).abs() < 1e-5);
        // two votes: a tie is only correct for adversarial truth
        let adv = exact_majority_accuracy(0.9, 1, Verdict::Adversarial).unwrap();
        let clean = exact_majority_accuracy(0.9, 1, Verdict::Clean).unwrap();
        assert!((adv - (1.0 - 0.01)).abs() < 1e-12);
        assert!((clean - 0.81).abs() < 1e-12);
    }

    #[test]
    fn exact_accuracy_is_stable_for_long_windows() {
        let p = exact_majority_accuracy(0.51, 9999, Verdict::Clean).unwrap();
        assert!(p.is_finite() && p > 0.97 && p <= 1.0);
    }

    #[test]
    fn simulation_is_deterministic_and_partition_free() {
        let a = simulate_majority(0.7, 6, 10_000, 42, Verdict::Clean).unwrap();
        let b = simulate_majority(0.7, 6, 10_000, 42, Verdict::Clean).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| simulate_majority(0.7, 6, 10_000, 42, Verdict::Clean).unwrap());
        assert_eq!(a, c);
        assert_eq!(
            simulate_majority(1.0, 7, 100, 3, Verdict::Clean)
                .unwrap()
                .estimate,
            1.0
        );
        assert_eq!(
            simulate_majority(0.9, 3, 0, 1, Verdict::Clean),
            Err(TheoryError::NoTrials)
        );
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig6(9.361_663_354), "9.36166");
        assert_eq!(sig6(80.471_895), "80.4719");
        assert_eq!(sig6(0.999_704_29), "0.999704");
        assert_eq!(sig6(0.6), "0.6");
        assert_eq!(sig6(123_456_789.0), "123456789");
    }

    #[test]
    fn curve_rows() {
        assert_eq!(
            curve_csv(&bound_curve(&[]).unwrap()),
            "p_hat,raw_bound,min_L,exact_p\n"
        );
        let csv = curve_csv(&bound_curve(&[0.9, 0.6]).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[1].starts_with("0.9,9.36166,10,"));
        assert!(lines[2].starts_with("0.6,80.4719,81,"));
        assert!(bound_curve(&[0.5]).is_err());
        assert!(bound_curve(&[1.0]).is_err());
    }
}
