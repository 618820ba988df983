//! Neural-collapse metrics.
//!
//! NC1 measures intra-class variability as the mean Euclidean distance of
//! penultimate features to their class mean, globally and per subgroup.
//! NC2 measures how far the centered class means are from an equinorm,
//! equiangular (simplex ETF) configuration. NC3 measures alignment between
//! the centered class means and the classifier rows. NC4 measures
//! disagreement between the linear classifier and the nearest-class-center
//! rule. All metrics are zero exactly at their ideal-collapse limit.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::FeatureBatch;

/// Empirical class means and their normalized, centered counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStatistics {
    /// K x p matrix of class means.
    pub class_means: Array2<f64>,
    pub class_counts: Vec<usize>,
    /// Unweighted mean of the class means.
    pub global_mean: Array1<f64>,
    /// Rows (mu_k - mu_G) / ||mu_k - mu_G||; zero rows where degenerate.
    pub normalized_means: Array2<f64>,
    /// True where ||mu_k - mu_G|| == 0 and no direction exists.
    pub degenerate: Vec<bool>,
    pub num_classes: usize,
}

/// Per (class, group) cell mean and count.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub mean: Array1<f64>,
    pub count: usize,
}

/// Group-conditional class means, keyed by (class, group).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupClassStatistics {
    pub cells: BTreeMap<(u8, u8), CellStats>,
}

/// Scalar collapse metrics at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NCReport {
    pub nc1_global: f64,
    pub nc1_per_group: BTreeMap<u8, f64>,
    pub nc2_equinorm: f64,
    pub nc2_equiangular: f64,
    pub nc3_selfdual: f64,
    pub nc4_mismatch: f64,
    pub config_divergence: f64,
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

fn check_stats_match(fb: &FeatureBatch, stats: &ClassStatistics) -> Result<()> {
    if stats.class_means.ncols() != fb.feature_dim() {
        return Err(Error::Contract(format!(
            "stats are {}-dimensional but features are {}-dimensional",
            stats.class_means.ncols(),
            fb.feature_dim()
        )));
    }
    if let Some(&bad) = fb.labels.iter().find(|&&y| y as usize >= stats.num_classes) {
        return Err(Error::Contract(format!(
            "label {bad} outside the {} classes covered by stats",
            stats.num_classes
        )));
    }
    Ok(())
}

/// Empirical class means, the unweighted global mean, and normalized
/// centered means. Every class in `0..K` (K = max label + 1) must occur.
pub fn class_statistics(fb: &FeatureBatch) -> Result<ClassStatistics> {
    if fb.is_empty() {
        return Err(Error::Contract("empty feature batch".into()));
    }
    let k = *fb.labels.iter().max().unwrap() as usize + 1;
    let p = fb.feature_dim();

    let mut sums = Array2::<f64>::zeros((k, p));
    let mut counts = vec![0usize; k];
    for (row, &y) in fb.features.axis_iter(Axis(0)).zip(&fb.labels) {
        let mut target = sums.row_mut(y as usize);
        target += &row;
        counts[y as usize] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(missing));
    }

    let mut class_means = sums;
    for (mut row, &count) in class_means.axis_iter_mut(Axis(0)).zip(&counts) {
        row /= count as f64;
    }
    let global_mean = class_means.mean_axis(Axis(0)).expect("k >= 1");

    let mut normalized = Array2::<f64>::zeros((k, p));
    let mut degenerate = vec![false; k];
    for i in 0..k {
        let centered = &class_means.row(i) - &global_mean;
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            degenerate[i] = true;
        } else {
            normalized.row_mut(i).assign(&(&centered / norm));
        }
    }

    Ok(ClassStatistics {
        class_means,
        class_counts: counts,
        global_mean,
        normalized_means: normalized,
        degenerate,
        num_classes: k,
    })
}

fn distance_to_class_mean(fb: &FeatureBatch, stats: &ClassStatistics, i: usize) -> f64 {
    let mean = stats.class_means.row(fb.labels[i] as usize);
    fb.features
        .row(i)
        .iter()
        .zip(mean.iter())
        .map(|(&h, &mu)| (h - mu) * (h - mu))
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance of each feature to its own class mean.
pub fn nc1_variability(fb: &FeatureBatch, stats: &ClassStatistics) -> Result<f64> {
    check_stats_match(fb, stats)?;
    let total = kahan_sum((0..fb.len()).map(|i| distance_to_class_mean(fb, stats, i)));
    Ok(total / fb.len() as f64)
}

/// Per-group mean distance to the shared (group-agnostic) class means.
/// Groups not present in the batch are simply absent from the map.
pub fn nc1_per_group(fb: &FeatureBatch, stats: &ClassStatistics) -> Result<BTreeMap<u8, f64>> {
    check_stats_match(fb, stats)?;
    let mut sums: BTreeMap<u8, (f64, f64, usize)> = BTreeMap::new();
    for i in 0..fb.len() {
        let d = distance_to_class_mean(fb, stats, i);
        let entry = sums.entry(fb.groups[i]).or_insert((0.0, 0.0, 0));
        // Kahan update so the group sums re-aggregate to the global sum.
        let y = d - entry.1;
        let t = entry.0 + y;
        entry.1 = (t - entry.0) - y;
        entry.0 = t;
        entry.2 += 1;
    }
    if sums.len() < 2 {
        log::warn!("nc1_per_group: only {} group(s) present", sums.len());
    }
    Ok(sums
        .into_iter()
        .map(|(g, (sum, _, count))| (g, sum / count as f64))
        .collect())
}

fn centered_norms(stats: &ClassStatistics) -> Vec<f64> {
    (0..stats.num_classes)
        .map(|i| {
            (&stats.class_means.row(i) - &stats.global_mean)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Coefficient of variation (population std / mean) of the centered class
/// mean norms; zero iff all norms are equal.
pub fn nc2_equinorm(stats: &ClassStatistics) -> Result<f64> {
    let norms = centered_norms(stats);
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate(
            "all centered class-mean norms are zero".into(),
        ));
    }
    let var = norms.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / norms.len() as f64;
    Ok(var.sqrt() / mean)
}

/// Mean over unordered class pairs of |<mu~_k, mu~_k'> + 1/(K-1)|;
/// zero exactly when the pairwise cosines sit at the simplex-ETF value.
pub fn nc2_equiangularity(stats: &ClassStatistics) -> Result<f64> {
    let k = stats.num_classes;
    if k < 2 {
        return Err(Error::Degenerate("need at least two classes".into()));
    }
    if stats.degenerate.iter().any(|&d| d) {
        return Err(Error::Degenerate(
            "a centered class mean is zero; no direction to compare".into(),
        ));
    }
    let target = -1.0 / (k as f64 - 1.0);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            let dot = stats
                .normalized_means
                .row(i)
                .iter()
                .zip(stats.normalized_means.row(j).iter())
                .map(|(&a, &b)| a * b)
                .sum::<f64>();
            total += (dot - target).abs();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Frobenius distance between the unit-normalized centered-class-mean
/// matrix and the unit-normalized classifier weight matrix.
pub fn nc3_self_duality(stats: &ClassStatistics, classifier: &Array2<f64>) -> Result<f64> {
    if classifier.dim() != stats.class_means.dim() {
        return Err(Error::Contract(format!(
            "classifier is {:?} but class means are {:?}",
            classifier.dim(),
            stats.class_means.dim()
        )));
    }
    let centered = &stats.class_means - &stats.global_mean;
    let m_norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w_norm = classifier.iter().map(|v| v * v).sum::<f64>().sqrt();
    if m_norm == 0.0 || w_norm == 0.0 {
        return Err(Error::Degenerate(
            "zero-norm class-mean or classifier matrix".into(),
        ));
    }
    let diff = centered
        .iter()
        .zip(classifier.iter())
        .map(|(&m, &w)| {
            let d = m / m_norm - w / w_norm;
            d * d
        })
        .sum::<f64>();
    Ok(diff.sqrt())
}

/// Fraction of samples where argmax_k <h, w_k> disagrees with
/// argmin_k ||h - mu_k||; ties break toward the lower class index.
pub fn nc4_mismatch(
    fb: &FeatureBatch,
    stats: &ClassStatistics,
    classifier: &Array2<f64>,
) -> Result<f64> {
    check_stats_match(fb, stats)?;
    if classifier.dim() != stats.class_means.dim() {
        return Err(Error::Contract(format!(
            "classifier is {:?} but class means are {:?}",
            classifier.dim(),
            stats.class_means.dim()
        )));
    }
    let k = stats.num_classes;
    let mut mismatches = 0usize;
    for row in fb.features.axis_iter(Axis(0)) {
        let mut best_linear = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_center = 0usize;
        let mut best_dist = f64::INFINITY;
        for c in 0..k {
            let score: f64 = row
                .iter()
                .zip(classifier.row(c).iter())
                .map(|(&h, &w)| h * w)
                .sum();
            if score > best_score {
                best_score = score;
                best_linear = c;
            }
            let dist: f64 = row
                .iter()
                .zip(stats.class_means.row(c).iter())
                .map(|(&h, &mu)| (h - mu) * (h - mu))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best_center = c;
            }
        }
        if best_linear != best_center {
            mismatches += 1;
        }
    }
    Ok(mismatches as f64 / fb.len() as f64)
}

/// Exact per-(class, group) cell means and counts; empty cells are absent.
pub fn group_class_statistics(fb: &FeatureBatch) -> Result<GroupClassStatistics> {
    if fb.is_empty() {
        return Err(Error::Contract("empty feature batch".into()));
    }
    let p = fb.feature_dim();
    let mut cells: BTreeMap<(u8, u8), (Array1<f64>, usize)> = BTreeMap::new();
    for (row, (&y, &a)) in fb
        .features
        .axis_iter(Axis(0))
        .zip(fb.labels.iter().zip(&fb.groups))
    {
        let entry = cells
            .entry((y, a))
            .or_insert_with(|| (Array1::zeros(p), 0));
        entry.0 += &row;
        entry.1 += 1;
    }

    let classes: BTreeSet<u8> = fb.labels.iter().copied().collect();
    let groups: BTreeSet<u8> = fb.groups.iter().copied().collect();
    for &y in &classes {
        for &a in &groups {
            if !cells.contains_key(&(y, a)) {
                log::warn!("group_class_statistics: empty cell (class={y}, group={a})");
            }
        }
    }

    Ok(GroupClassStatistics {
        cells: cells
            .into_iter()
            .map(|(key, (sum, count))| {
                (
                    key,
                    CellStats {
                        mean: sum / count as f64,
                        count,
                    },
                )
            })
            .collect(),
    })
}

/// Mean over classes of the distance between the two groups' class means;
/// classes missing either group's cell are skipped.
pub fn nc_configuration_distance(gstats: &GroupClassStatistics) -> Result<f64> {
    let classes: BTreeSet<u8> = gstats.cells.keys().map(|&(y, _)| y).collect();
    let mut total = 0.0;
    let mut used = 0usize;
    for &y in &classes {
        match (gstats.cells.get(&(y, 0)), gstats.cells.get(&(y, 1))) {
            (Some(a), Some(b)) => {
                let dist = a
                    .mean
                    .iter()
                    .zip(b.mean.iter())
                    .map(|(&u, &v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt();
                total += dist;
                used += 1;
            }
            _ => log::warn!("nc_configuration_distance: class {y} misses a group cell"),
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "no class has both group cells populated".into(),
        ));
    }
    Ok(total / used as f64)
}

/// Compute every collapse metric for one feature batch and classifier.
pub fn nc_report(fb: &FeatureBatch, classifier: &Array2<f64>) -> Result<NCReport> {
    let stats = class_statistics(fb)?;
    let gstats = group_class_statistics(fb)?;
    Ok(NCReport {
        nc1_global: nc1_variability(fb, &stats)?,
        nc1_per_group: nc1_per_group(fb, &stats)?,
        nc2_equinorm: nc2_equinorm(&stats)?,
        nc2_equiangular: nc2_equiangularity(&stats)?,
        nc3_selfdual: nc3_self_duality(&stats, classifier)?,
        nc4_mismatch: nc4_mismatch(fb, &stats, classifier)?,
        config_divergence: nc_configuration_distance(&gstats)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn batch(features: Array2<f64>, labels: Vec<u8>, groups: Vec<u8>) -> FeatureBatch {
        FeatureBatch::new(features, labels, groups).unwrap()
    }

    #[test]
    fn class_means_by_hand() {
        let fb = batch(
            array![[1.0, 0.0], [3.0, 0.0], [0.0, 2.0], [0.0, 4.0]],
            vec![0, 0, 1, 1],
            vec![0, 0, 1, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        assert_eq!(stats.class_means, array![[2.0, 0.0], [0.0, 3.0]]);
        assert_eq!(stats.global_mean, array![1.0, 1.5]);
        assert_eq!(stats.class_counts, vec![2, 2]);
        assert!(!stats.degenerate.iter().any(|&d| d));
    }

    #[test]
    fn identical_features_are_degenerate() {
        let fb = batch(
            array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0]],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        assert_eq!(stats.class_means.row(0), stats.class_means.row(1));
        assert!(stats.degenerate.iter().all(|&d| d));
    }

    #[test]
    fn single_sample_classes() {
        let fb = batch(array![[0.5, -1.0], [2.0, 7.0]], vec![0, 1], vec![0, 1]);
        let stats = class_statistics(&fb).unwrap();
        assert_eq!(stats.class_means.row(0).to_vec(), vec![0.5, -1.0]);
        assert_eq!(stats.class_means.row(1).to_vec(), vec![2.0, 7.0]);
    }

    #[test]
    fn missing_class_is_an_error() {
        let fb = batch(array![[0.0], [1.0]], vec![0, 2], vec![0, 1]);
        assert!(matches!(
            class_statistics(&fb),
            Err(Error::MissingClass(1))
        ));
    }

    fn one_d_example() -> FeatureBatch {
        // class 0 at {0, 2} (mean 1), class 1 at {4, 6} (mean 5)
        batch(
            array![[0.0], [2.0], [4.0], [6.0]],
            vec![0, 0, 1, 1],
            vec![0, 0, 1, 1],
        )
    }

    #[test]
    fn nc1_zero_at_exact_collapse() {
        let fb = batch(
            array![[2.0, 0.0], [2.0, 0.0], [0.0, 3.0], [0.0, 3.0]],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        assert_eq!(nc1_variability(&fb, &stats).unwrap(), 0.0);
    }

    #[test]
    fn nc1_hand_arithmetic() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        assert_abs_diff_eq!(nc1_variability(&fb, &stats).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nc1_is_translation_invariant() {
        let fb = batch(
            array![[0.3, 1.0], [2.0, -0.5], [4.0, 2.2], [6.0, 0.1]],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        let s = nc1_variability(&fb, &stats).unwrap();
        let shifted = batch(
            fb.features.clone() + 13.7,
            fb.labels.clone(),
            fb.groups.clone(),
        );
        let stats2 = class_statistics(&shifted).unwrap();
        let s2 = nc1_variability(&shifted, &stats2).unwrap();
        assert_abs_diff_eq!(s, s2, epsilon = 1e-12);
    }

    #[test]
    fn per_group_reduces_to_global_for_single_group() {
        let mut fb = one_d_example();
        fb.groups = vec![0, 0, 0, 0];
        let stats = class_statistics(&fb).unwrap();
        let per_group = nc1_per_group(&fb, &stats).unwrap();
        assert_eq!(per_group.len(), 1);
        assert_abs_diff_eq!(
            per_group[&0],
            nc1_variability(&fb, &stats).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn per_group_hand_arithmetic() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        let per_group = nc1_per_group(&fb, &stats).unwrap();
        assert_abs_diff_eq!(per_group[&0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(per_group[&1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weighted_group_identity() {
        let fb = batch(
            array![[0.3, 1.0], [2.0, -0.5], [4.0, 2.2], [6.0, 0.1], [5.0, 5.0]],
            vec![0, 0, 1, 1, 1],
            vec![0, 1, 0, 1, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        let s = nc1_variability(&fb, &stats).unwrap();
        let per_group = nc1_per_group(&fb, &stats).unwrap();
        let n = fb.len() as f64;
        let weighted: f64 = per_group
            .iter()
            .map(|(&g, &sa)| {
                let na = fb.groups.iter().filter(|&&a| a == g).count() as f64;
                na / n * sa
            })
            .sum();
        assert_abs_diff_eq!(weighted, s, epsilon = 1e-12);
    }

    #[test]
    fn equinorm_is_zero_for_two_classes() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        // mu_0 - mu_G = -(mu_1 - mu_G) under the unweighted global mean.
        assert_abs_diff_eq!(nc2_equinorm(&stats).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn equinorm_three_class_hand_case() {
        let fb = batch(
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
            vec![0, 1, 2],
            vec![0, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        // Centered norms: sqrt(10)/3, 2/3, sqrt(10)/3.
        let norms = [10f64.sqrt() / 3.0, 2.0 / 3.0, 10f64.sqrt() / 3.0];
        let mean = norms.iter().sum::<f64>() / 3.0;
        let var = norms.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 3.0;
        let expected = var.sqrt() / mean;
        assert_abs_diff_eq!(nc2_equinorm(&stats).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn equinorm_is_scale_invariant() {
        let fb = batch(
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]],
            vec![0, 1, 2],
            vec![0, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        let scaled = batch(fb.features.clone() * 37.0, fb.labels.clone(), fb.groups.clone());
        let stats2 = class_statistics(&scaled).unwrap();
        assert_abs_diff_eq!(
            nc2_equinorm(&stats).unwrap(),
            nc2_equinorm(&stats2).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn equiangularity_exact_for_two_classes() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        assert_abs_diff_eq!(nc2_equiangularity(&stats).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn equiangularity_zero_on_simplex() {
        // Equilateral triangle centered at the origin.
        let fb = batch(
            array![
                [1.0, 0.0],
                [-0.5, 0.8660254037844386],
                [-0.5, -0.8660254037844386]
            ],
            vec![0, 1, 2],
            vec![0, 0, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        assert_abs_diff_eq!(nc2_equiangularity(&stats).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equiangularity_orthogonal_directions() {
        // Hand-built stats with orthonormal direction vectors: each pairwise
        // cosine is 0, so every pair contributes |0 + 1/2|.
        let stats = ClassStatistics {
            class_means: Array2::zeros((3, 3)),
            class_counts: vec![1, 1, 1],
            global_mean: Array1::zeros(3),
            normalized_means: Array2::eye(3),
            degenerate: vec![false, false, false],
            num_classes: 3,
        };
        assert_abs_diff_eq!(nc2_equiangularity(&stats).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn self_duality_zero_when_weights_equal_centered_means() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        let centered = &stats.class_means - &stats.global_mean;
        assert_abs_diff_eq!(
            nc3_self_duality(&stats, &centered).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // Re-scaling does not change the metric.
        let scaled = centered.clone() * 12.5;
        assert_abs_diff_eq!(
            nc3_self_duality(&stats, &scaled).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn self_duality_antipodal_is_two() {
        let fb = one_d_example();
        let stats = class_statistics(&fb).unwrap();
        let negated = (&stats.class_means - &stats.global_mean) * -1.0;
        assert_abs_diff_eq!(
            nc3_self_duality(&stats, &negated).unwrap(),
            2.0,
            epsilon = 1e-12
        );
    }

    fn separated_clusters() -> FeatureBatch {
        batch(
            array![
                [-3.0, 0.1],
                [-2.9, -0.1],
                [-3.1, 0.0],
                [3.0, 0.1],
                [2.9, -0.1],
                [3.1, 0.0]
            ],
            vec![0, 0, 0, 1, 1, 1],
            vec![0, 1, 0, 1, 0, 1],
        )
    }

    #[test]
    fn nc4_agrees_when_weights_are_centered_means() {
        let fb = separated_clusters();
        let stats = class_statistics(&fb).unwrap();
        let w = &stats.class_means - &stats.global_mean;
        assert_eq!(nc4_mismatch(&fb, &stats, &w).unwrap(), 0.0);
    }

    #[test]
    fn nc4_flips_under_negated_weights() {
        let fb = separated_clusters();
        let stats = class_statistics(&fb).unwrap();
        let w = (&stats.class_means - &stats.global_mean) * -1.0;
        assert_eq!(nc4_mismatch(&fb, &stats, &w).unwrap(), 1.0);
    }

    #[test]
    fn nc4_single_sample_is_zero_or_one() {
        let fb = batch(array![[1.0, 0.0], [-1.0, 0.0]], vec![0, 1], vec![0, 1]);
        let stats = class_statistics(&fb).unwrap();
        let w = array![[1.0, 0.0], [-1.0, 0.0]];
        let m = nc4_mismatch(&fb, &stats, &w).unwrap();
        assert!(m == 0.0 || m == 1.0 || m == 0.5);
    }

    #[test]
    fn group_cells_by_hand() {
        let fb = batch(
            array![[1.0, 0.0], [3.0, 0.0], [0.0, 2.0], [0.0, 4.0]],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
        );
        let g = group_class_statistics(&fb).unwrap();
        assert_eq!(g.cells.len(), 4);
        assert_eq!(g.cells[&(0, 0)].mean.to_vec(), vec![1.0, 0.0]);
        assert_eq!(g.cells[&(1, 1)].mean.to_vec(), vec![0.0, 4.0]);
        assert_eq!(g.cells[&(0, 1)].count, 1);
    }

    #[test]
    fn single_group_cells_equal_class_means() {
        let mut fb = one_d_example();
        fb.groups = vec![0, 0, 0, 0];
        let stats = class_statistics(&fb).unwrap();
        let g = group_class_statistics(&fb).unwrap();
        for ((class, _), cell) in &g.cells {
            assert_eq!(cell.mean, stats.class_means.row(*class as usize).to_owned());
        }
    }

    #[test]
    fn weighted_cell_consistency() {
        let fb = batch(
            array![[0.3, 1.0], [2.0, -0.5], [4.0, 2.2], [6.0, 0.1], [5.0, 5.0]],
            vec![0, 0, 1, 1, 1],
            vec![0, 1, 0, 1, 1],
        );
        let stats = class_statistics(&fb).unwrap();
        let g = group_class_statistics(&fb).unwrap();
        for class in 0..2u8 {
            let mut weighted = Array1::<f64>::zeros(2);
            let mut count = 0usize;
            for (&(y, _), cell) in &g.cells {
                if y == class {
                    weighted = weighted + &cell.mean * cell.count as f64;
                    count += cell.count;
                }
            }
            let recomposed = weighted / count as f64;
            for (a, b) in recomposed.iter().zip(stats.class_means.row(class as usize)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn configuration_distance_hand_case() {
        let mut cells = BTreeMap::new();
        cells.insert(
            (0u8, 0u8),
            CellStats {
                mean: array![0.0, 0.0],
                count: 1,
            },
        );
        cells.insert(
            (0, 1),
            CellStats {
                mean: array![3.0, 4.0],
                count: 1,
            },
        );
        cells.insert(
            (1, 0),
            CellStats {
                mean: array![1.0, 1.0],
                count: 1,
            },
        );
        cells.insert(
            (1, 1),
            CellStats {
                mean: array![1.0, 1.0],
                count: 1,
            },
        );
        let g = GroupClassStatistics { cells };
        assert_abs_diff_eq!(nc_configuration_distance(&g).unwrap(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn configuration_distance_zero_when_groups_agree() {
        let fb = separated_clusters();
        let mut same = fb.clone();
        // Make both groups cover identical feature placements per class.
        same.features = array![
            [-3.0, 0.0],
            [-3.0, 0.0],
            [-3.0, 0.0],
            [3.0, 0.0],
            [3.0, 0.0],
            [3.0, 0.0]
        ];
        let g = group_class_statistics(&same).unwrap();
        assert_eq!(nc_configuration_distance(&g).unwrap(), 0.0);
    }

    #[test]
    fn configuration_distance_symmetric_in_group_relabeling() {
        let fb = batch(
            array![[0.3, 1.0], [2.0, -0.5], [4.0, 2.2], [6.0, 0.1]],
            vec![0, 0, 1, 1],
            vec![0, 1, 0, 1],
        );
        let swapped = batch(
            fb.features.clone(),
            fb.labels.clone(),
            fb.groups.iter().map(|&a| 1 - a).collect(),
        );
        let d1 = nc_configuration_distance(&group_class_statistics(&fb).unwrap()).unwrap();
        let d2 = nc_configuration_distance(&group_class_statistics(&swapped).unwrap()).unwrap();
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-15);
    }

    #[test]
    fn full_report_is_finite_on_generic_data() {
        let fb = separated_clusters();
        let w = array![[-1.0, 0.3], [1.0, -0.3]];
        let report = nc_report(&fb, &w).unwrap();
        assert!(report.nc1_global.is_finite());
        assert!(report.nc2_equinorm.is_finite());
        assert!(report.nc3_selfdual.is_finite());
        assert!((0.0..=1.0).contains(&report.nc4_mismatch));
        assert_eq!(report.nc1_per_group.len(), 2);
    }
}
