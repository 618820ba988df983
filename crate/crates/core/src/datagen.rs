//! Synthetic subgroup-labeled binary-classification data.
//!
//! Generates the two-class, two-group Gaussian-mixture scenario, injects
//! under-diagnosis label bias (positives of a target group relabeled
//! negative), produces stratified splits, and reads/writes datasets as CSV.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A sample matrix with per-sample binary label, binary group attribute,
/// and pre-flip ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// n x d feature matrix.
    pub samples: Array2<f64>,
    /// Observed (possibly bias-corrupted) labels in {0, 1}.
    pub labels: Vec<u8>,
    /// Ground-truth labels in {0, 1}; differs from `labels` only at flips.
    pub clean_labels: Vec<u8>,
    /// Subgroup attribute in {0, 1}.
    pub groups: Vec<u8>,
}

impl Dataset {
    pub fn new(
        samples: Array2<f64>,
        labels: Vec<u8>,
        clean_labels: Vec<u8>,
        groups: Vec<u8>,
    ) -> Result<Self> {
        let n = samples.nrows();
        if labels.len() != n || clean_labels.len() != n || groups.len() != n {
            return Err(Error::Contract(format!(
                "dataset with {n} rows has {} labels, {} clean labels, {} groups",
                labels.len(),
                clean_labels.len(),
                groups.len()
            )));
        }
        for (i, ((&y, &c), &a)) in labels.iter().zip(&clean_labels).zip(&groups).enumerate() {
            if y > 1 || c > 1 || a > 1 {
                return Err(Error::Contract(format!(
                    "sample {i}: label={y} clean={c} group={a} not binary"
                )));
            }
            if y != c && !(y == 0 && c == 1) {
                return Err(Error::Contract(format!(
                    "sample {i}: only positive-to-negative flips are allowed"
                )));
            }
        }
        Ok(Self {
            samples,
            labels,
            clean_labels,
            groups,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn d(&self) -> usize {
        self.samples.ncols()
    }

    /// Copy of the rows at `indices`.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.samples.select(Axis(0), indices)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn clean_labels_at(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.clean_labels[i]).collect()
    }

    pub fn groups_at(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.groups[i]).collect()
    }
}

/// Configuration for [`generate_gaussian_mixture`].
///
/// Class means sit on the first axis at +/- `class_mean_separation`/2;
/// the two groups within a class are offset by `group_shift` along the
/// second axis (the first when d == 1). Noise is isotropic Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_per_cell: usize,
    pub d: usize,
    pub class_mean_separation: f64,
    pub group_shift: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_per_cell: 500,
            d: 2,
            class_mean_separation: 4.0,
            group_shift: 1.0,
            noise_sd: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_cell < 1 {
            return Err(Error::Config("n_per_cell must be >= 1".into()));
        }
        if self.d < 1 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::Config("noise_sd must be > 0".into()));
        }
        if !(self.class_mean_separation > 0.0) {
            return Err(Error::Config("class_mean_separation must be > 0".into()));
        }
        if !(self.group_shift >= 0.0) {
            return Err(Error::Config("group_shift must be >= 0".into()));
        }
        Ok(())
    }

    /// Mean of the (class, group) cell distribution.
    pub fn cell_mean(&self, class: u8, group: u8) -> Vec<f64> {
        let mut mean = vec![0.0; self.d];
        let class_term = (class as f64 - 0.5) * self.class_mean_separation;
        let group_term = (group as f64 - 0.5) * self.group_shift;
        mean[0] += class_term;
        mean[if self.d > 1 { 1 } else { 0 }] += group_term;
        mean
    }
}

/// Record of one bias-injection pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRecord {
    /// Sample indices whose label was flipped 1 -> 0, ascending.
    pub flipped_indices: Vec<usize>,
    pub target_group: u8,
    pub fraction: f64,
}

impl FlipRecord {
    pub fn is_empty(&self) -> bool {
        self.flipped_indices.is_empty()
    }
}

/// Disjoint train/val/test index lists covering a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Cells too small for the requested number of split parts.
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    /// Train plus validation indices, ascending.
    pub fn train_val(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Draw `2 * 2 * n_per_cell` samples, one isotropic Gaussian per
/// (class, group) cell. Deterministic in `cfg.seed`; `clean_labels == labels`.
pub fn generate_gaussian_mixture(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = 4 * cfg.n_per_cell;
    let mut samples = Array2::zeros((n, cfg.d));
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);

    let mut rng = rng_from_seed(cfg.seed);
    let normal = StandardNormal;
    let mut row = 0;
    for class in 0..2u8 {
        for group in 0..2u8 {
            let mean = cfg.cell_mean(class, group);
            for _ in 0..cfg.n_per_cell {
                for (j, &mu) in mean.iter().enumerate() {
                    let z: f64 = normal.sample(&mut rng);
                    samples[[row, j]] = mu + cfg.noise_sd * z;
                }
                labels.push(class);
                groups.push(group);
                row += 1;
            }
        }
    }
    Dataset::new(samples, labels.clone(), labels, groups)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Flip `round(fraction * P)` uniformly-chosen positives of `target_group`
/// to label 0, where P counts positives of that group among all samples.
pub fn inject_label_bias(
    ds: &Dataset,
    target_group: u8,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, FlipRecord)> {
    let all: Vec<usize> = (0..ds.n()).collect();
    inject_label_bias_within(ds, &all, target_group, fraction, seed)
}

/// As [`inject_label_bias`], but only samples listed in `eligible` may flip.
pub fn inject_label_bias_within(
    ds: &Dataset,
    eligible: &[usize],
    target_group: u8,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, FlipRecord)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "bias fraction {fraction} outside [0, 1]"
        )));
    }
    let mut candidates: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| ds.labels[i] == 1 && ds.groups[i] == target_group)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyPopulation(format!(
            "no positive samples in group {target_group}"
        )));
    }
    let flips = round_half_up(fraction * candidates.len() as f64).min(candidates.len());

    let mut rng = rng_from_seed(seed);
    candidates.shuffle(&mut rng);
    let mut flipped: Vec<usize> = candidates[..flips].to_vec();
    flipped.sort_unstable();

    let mut out = ds.clone();
    for &i in &flipped {
        out.labels[i] = 0;
    }
    Ok((
        out,
        FlipRecord {
            flipped_indices: flipped,
            target_group,
            fraction,
        },
    ))
}

/// Stratified split over (label, group) cells with largest-remainder
/// rounding; remainder ties go to the part furthest below its global target.
pub fn split_dataset(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| f < 0.0) {
        return Err(Error::Config("split fractions must be nonnegative".into()));
    }
    if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split fractions must sum to 1".into()));
    }
    if ds.n() == 0 {
        return Err(Error::EmptyPopulation("cannot split an empty dataset".into()));
    }

    let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n() {
        cells
            .entry((ds.labels[i], ds.groups[i]))
            .or_default()
            .push(i);
    }

    let nonzero_parts = fr.iter().filter(|&&f| f > 0.0).count();
    let mut rng = rng_from_seed(seed);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut warnings = Vec::new();
    // Running totals used to break remainder ties toward the most
    // under-allocated part, so whole-dataset proportions stay on target.
    let mut assigned = [0.0f64; 3];
    let mut target = [0.0f64; 3];

    for ((label, group), mut indices) in cells {
        if indices.len() < nonzero_parts {
            warnings.push(format!(
                "cell (label={label}, group={group}) has {} samples for {nonzero_parts} split parts",
                indices.len()
            ));
        }
        indices.shuffle(&mut rng);

        let m = indices.len() as f64;
        let mut counts = [0usize; 3];
        let mut fracs = [0.0f64; 3];
        for p in 0..3 {
            let exact = m * fr[p];
            counts[p] = exact.floor() as usize;
            fracs[p] = exact - exact.floor();
            target[p] += exact;
        }
        let mut leftover = indices.len() - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            fracs[b]
                .partial_cmp(&fracs[a])
                .unwrap()
                .then_with(|| {
                    let da = assigned[a] - target[a];
                    let db = assigned[b] - target[b];
                    da.partial_cmp(&db).unwrap()
                })
                .then(a.cmp(&b))
        });
        for &p in &order {
            if leftover == 0 {
                break;
            }
            if fr[p] > 0.0 {
                counts[p] += 1;
                leftover -= 1;
            }
        }
        // All parts zero-weighted except by rounding: dump any remainder
        // into the largest-fraction part.
        while leftover > 0 {
            counts[order[0]] += 1;
            leftover -= 1;
        }

        let mut cursor = 0;
        for p in 0..3 {
            parts[p].extend_from_slice(&indices[cursor..cursor + counts[p]]);
            cursor += counts[p];
            assigned[p] += counts[p] as f64;
        }
    }

    let [mut train, mut val, mut test] = parts;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        train,
        val,
        test,
        warnings,
    })
}

/// Read a dataset from CSV with header `f0..f{d-1},label,group[,clean_label]`.
pub fn load_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let d = cols.iter().take_while(|c| c.starts_with('f')).count();
    let expect_features: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    let has_clean = match &cols[d..] {
        ["label", "group"] => false,
        ["label", "group", "clean_label"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header f0..f{{d-1}},label,group[,clean_label], got {:?}",
                    cols.join(",")
                ),
            })
        }
    };
    if d == 0 || cols[..d] != expect_features[..] {
        return Err(Error::Parse {
            line: 1,
            message: "feature columns must be named f0, f1, ... in order".into(),
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut clean_labels = Vec::new();
    let mut groups = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != cols.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", cols.len(), record.len()),
            });
        }
        let parse_f64 = |field: &str, name: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid {name} value {field:?}"),
            })
        };
        let parse_bit = |field: &str, name: &str| -> Result<u8> {
            match field.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse {
                    line,
                    message: format!("{name} must be 0 or 1, got {other:?}"),
                }),
            }
        };
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            row.push(parse_f64(&record[j], &format!("f{j}"))?);
        }
        let label = parse_bit(&record[d], "label")?;
        let group = parse_bit(&record[d + 1], "group")?;
        let clean = if has_clean {
            parse_bit(&record[d + 2], "clean_label")?
        } else {
            label
        };
        rows.push(row);
        labels.push(label);
        clean_labels.push(clean);
        groups.push(group);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }

    let n = rows.len();
    let mut samples = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            samples[[i, j]] = v;
        }
    }
    Dataset::new(samples, labels, clean_labels, groups)
}

/// Write a dataset as CSV with the schema accepted by [`load_csv_dataset`]
/// (clean_label column included).
pub fn save_csv_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("f{j}")).collect();
    header.extend(["label".into(), "group".into(), "clean_label".into()]);
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = (0..ds.d()).map(|j| ds.samples[[i, j]].to_string()).collect();
        record.push(ds.labels[i].to_string());
        record.push(ds.groups[i].to_string());
        record.push(ds.clean_labels[i].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
