//! Self-contained statistical primitives: ROC-AUC, F1, Kendall's tau-b,
//! and the two-sided Mann-Whitney U test.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How a Mann-Whitney p-value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    /// Exact null distribution (tie-free samples, both sizes <= 12).
    Exact,
    /// Normal approximation with tie and continuity corrections.
    NormalApprox,
}

impl std::fmt::Display for UMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UMethod::Exact => write!(f, "exact"),
            UMethod::NormalApprox => write!(f, "normal-approx"),
        }
    }
}

/// Result of a two-sided Mann-Whitney U test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U statistic of the first sample.
    pub u_statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: UMethod,
}

/// Average ranks (1-based, midrank convention for ties).
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            ranks[order[k]] = avg;
        }
        i = j;
    }
    ranks
}

/// Probability that a random positive outscores a random negative,
/// ties counted 1/2 (midrank formulation).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "roc_auc needs both classes present".into(),
        ));
    }
    let ranks = midranks(scores);
    let rank_sum_pos: f64 = labels
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .sum();
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// F1 score of the positive class; `None` when TP, FP and FN are all zero
/// (no actual and no predicted positives), where the score is undefined.
pub fn f1_score(predicted: &[u8], actual: &[u8]) -> Option<f64> {
    assert_eq!(predicted.len(), actual.len(), "f1_score: length mismatch");
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    if tp + fp + fneg == 0 {
        return None;
    }
    Some(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fneg as f64))
}

/// Kendall's tau-b (tie-corrected rank correlation); `None` when either
/// vector is fully tied.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "kendall_tau: length mismatch");
    assert!(xs.len() >= 2, "kendall_tau needs at least 2 observations");

    let n = xs.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 {
                ties_x += 1;
            }
            if dy == 0.0 {
                ties_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / denom)
}

/// Two-sided Mann-Whitney U test.
///
/// The exact null distribution is used when both samples have at most 12
/// observations and the pooled sample is tie-free; otherwise the normal
/// approximation with tie and continuity corrections applies.
pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64]) -> Result<UTestResult> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::Contract("mann_whitney_u: empty sample".into()));
    }
    let n = sample_a.len();
    let m = sample_b.len();
    let total = n + m;

    let mut pooled = Vec::with_capacity(total);
    pooled.extend_from_slice(sample_a);
    pooled.extend_from_slice(sample_b);
    let ranks = midranks(&pooled);

    let rank_sum_a: f64 = ranks[..n].iter().sum();
    let u_a = rank_sum_a - (n * (n + 1)) as f64 / 2.0;
    let u_b = (n * m) as f64 - u_a;

    // Tie bookkeeping over the pooled sample.
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0; // sum of t^3 - t over tie groups
    let mut has_ties = false;
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
            tie_term += t * t * t - t;
        }
        i = j;
    }

    let (p_value, method) = if !has_ties && n.max(m) <= 12 {
        let u_min = u_a.min(u_b).round() as u64;
        (exact_two_sided_p(n, m, u_min), UMethod::Exact)
    } else {
        let mean = (n * m) as f64 / 2.0;
        let nf = total as f64;
        let variance = (n * m) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        let shifted = (u_a - mean).abs() - 0.5;
        if variance <= 0.0 || shifted <= 0.0 {
            // The continuity correction absorbs the whole deviation.
            (1.0, UMethod::NormalApprox)
        } else {
            let z = shifted / variance.sqrt();
            (2.0 * (1.0 - normal_cdf(z)), UMethod::NormalApprox)
        }
    };

    Ok(UTestResult {
        u_statistic: u_a,
        p_value: p_value.min(1.0),
        method,
    })
}

/// P(U <= u) doubled, for the exact tie-free null distribution of the
/// U statistic of a size-`n` sample pooled with a size-`m` sample.
fn exact_two_sided_p(n: usize, m: usize, u: u64) -> f64 {
    // count[k][s]: subsets of size k of ranks seen so far with rank sum s.
    let total = n + m;
    let max_sum: usize = (total - n + 1..=total).sum();
    let mut count = vec![vec![0.0f64; max_sum + 1]; n + 1];
    count[0][0] = 1.0;
    for rank in 1..=total {
        for k in (1..=n.min(rank)).rev() {
            for s in (rank..=max_sum).rev() {
                count[k][s] += count[k - 1][s - rank];
            }
        }
    }
    let offset = n * (n + 1) / 2; // U = rank_sum - offset
    let total_subsets: f64 = count[n].iter().sum();
    let below: f64 = count[n]
        .iter()
        .enumerate()
        .filter(|(s, _)| *s >= offset && (*s - offset) as u64 <= u)
        .map(|(_, &c)| c)
        .sum();
    2.0 * below / total_subsets
}

/// Standard normal CDF via the Abramowitz-Stegun erf approximation.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let a1 = 0.254829592;
    let a2 = -0.284496736;
    let a3 = 1.421413741;
    let a4 = -1.453152027;
    let a5 = 1.061405429;
    let p = 0.3275911;

    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + p * x);
    let y = 1.0 - (((((a5 * t + a4) * t) + a3) * t + a2) * t + a1) * t * (-x * x).exp();
    sign * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_perfect_separation() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_all_ties_is_half() {
        let auc = roc_auc(&[0.3, 0.3, 0.3, 0.3], &[1, 0, 1, 0]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_counts_concordant_pairs() {
        // positives {0.9, 0.4}, negatives {0.6, 0.1}: 3 of 4 pairs concordant
        let auc = roc_auc(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(auc, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn f1_perfect_predictions() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]), Some(1.0));
    }

    #[test]
    fn f1_hand_counts() {
        // TP=2, FP=1, FN=1 -> precision 2/3, recall 2/3, F1 = 2/3
        let f1 = f1_score(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]).unwrap();
        assert_abs_diff_eq!(f1, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn f1_zero_when_recall_zero() {
        assert_eq!(f1_score(&[0, 0, 0], &[1, 0, 1]), Some(0.0));
    }

    #[test]
    fn f1_undefined_without_positives() {
        assert_eq!(f1_score(&[0, 0], &[0, 0]), None);
    }

    #[test]
    fn tau_perfect_concordance() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(1.0));
    }

    #[test]
    fn tau_one_discordant_pair() {
        let tau = kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(tau, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn tau_perfect_discordance() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]),
            Some(-1.0)
        );
    }

    #[test]
    fn tau_undefined_when_fully_tied() {
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn mann_whitney_extreme_shift_exact() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u_statistic, 0.0);
        assert_eq!(r.method, UMethod::Exact);
        assert_abs_diff_eq!(r.p_value, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn mann_whitney_identical_samples() {
        let a = [0.4, 0.5, 0.6];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u_statistic, 4.5); // nm/2
        assert_eq!(r.method, UMethod::NormalApprox);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn mann_whitney_u_sum_identity() {
        let a = [3.0, 1.0, 4.0, 1.5];
        let b = [2.0, 2.6, 5.0];
        let ra = mann_whitney_u(&a, &b).unwrap();
        let rb = mann_whitney_u(&b, &a).unwrap();
        assert_abs_diff_eq!(
            ra.u_statistic + rb.u_statistic,
            (a.len() * b.len()) as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn normal_cdf_sanity() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-9);
        assert!(normal_cdf(-1.96) < 0.05);
        assert!(normal_cdf(1.96) > 0.95);
    }
}
