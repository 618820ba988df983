//! Subgroup-separability probes.
//!
//! A linear probe trained to predict the group attribute from penultimate
//! features measures how much subgroup information a classifier retains;
//! the same probe idea applied to raw inputs measures how much the data
//! carries in the first place.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::nnet::{init_model, train, Architecture, ModelState, TrainHyper};
use crate::rng::{derive_seed, Stream};
use crate::stats::roc_auc;

/// Training arm of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Clean,
    Biased,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Clean => write!(f, "clean"),
            Arm::Biased => write!(f, "biased"),
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Arm::Clean),
            "biased" => Ok(Arm::Biased),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown arm {other:?}"),
            }),
        }
    }
}

/// Checkpoint stage: the best-validation-loss snapshot or the last epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Early,
    Final,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Early => write!(f, "early"),
            Stage::Final => write!(f, "final"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Stage::Early),
            "final" => Ok(Stage::Final),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown stage {other:?}"),
            }),
        }
    }
}

/// Outcome of one subgroup-separability comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    /// Probe AUC on the classifier's penultimate features.
    pub feature_auc: f64,
    /// Reference AUC of a model trained on the raw inputs.
    pub raw_auc: f64,
    pub stage: Stage,
    pub arm: Arm,
}

/// Logistic-regression probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl ProbeModel {
    /// Sigmoid scores in (0, 1).
    pub fn scores(&self, inputs: &Array2<f64>) -> Vec<f64> {
        inputs
            .axis_iter(Axis(0))
            .map(|row| {
                let z: f64 = row
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(&x, &w)| x * w)
                    .sum::<f64>()
                    + self.bias;
                1.0 / (1.0 + (-z).exp())
            })
            .collect()
    }

    /// Hard labels at the 0.5 threshold.
    pub fn predict(&self, inputs: &Array2<f64>) -> Vec<u8> {
        self.scores(inputs)
            .into_iter()
            .map(|s| u8::from(s >= 0.5))
            .collect()
    }
}

/// Probe fitting controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeHyper {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-6,
        }
    }
}

/// Mean logistic loss and its gradient at (weights, bias).
pub fn logistic_loss_and_gradient(
    inputs: &Array2<f64>,
    targets: &[u8],
    weights: &Array1<f64>,
    bias: f64,
) -> (f64, Array1<f64>, f64) {
    let m = inputs.nrows() as f64;
    let mut loss = 0.0;
    let mut grad_w = Array1::<f64>::zeros(weights.len());
    let mut grad_b = 0.0;
    for (row, &y) in inputs.axis_iter(Axis(0)).zip(targets) {
        let z: f64 = row
            .iter()
            .zip(weights.iter())
            .map(|(&x, &w)| x * w)
            .sum::<f64>()
            + bias;
        // softplus(z) - y*z, computed stably on both tails
        loss += if z > 0.0 {
            z + (-z).exp().ln_1p() - f64::from(y) * z
        } else {
            z.exp().ln_1p() - f64::from(y) * z
        };
        let sigma = 1.0 / (1.0 + (-z).exp());
        let residual = sigma - f64::from(y);
        grad_w.scaled_add(residual, &row);
        grad_b += residual;
    }
    (loss / m, grad_w / m, grad_b / m)
}

/// Fit a logistic probe by full-batch gradient descent from zero init,
/// stopping when the gradient norm drops below `grad_tol` or after
/// `max_iters` iterations. Deterministic; `_seed` is accepted for interface
/// symmetry but unused because nothing is sampled.
pub fn train_linear_probe(
    inputs: &Array2<f64>,
    targets: &[u8],
    hyper: &ProbeHyper,
    _seed: u64,
) -> Result<ProbeModel> {
    if inputs.nrows() != targets.len() {
        return Err(Error::Contract(format!(
            "{} rows but {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    let positives = targets.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == targets.len() {
        return Err(Error::Degenerate(
            "probe targets must contain both values".into(),
        ));
    }

    // Standardize columns so a single safe step size works for any feature
    // scale; the scaler is folded back into the returned parameters.
    let q = inputs.ncols();
    let m = inputs.nrows() as f64;
    let means = inputs.mean_axis(Axis(0)).expect("nonempty");
    let mut sds = Array1::<f64>::zeros(q);
    for j in 0..q {
        let col = inputs.column(j);
        let var = col.iter().map(|&v| (v - means[j]) * (v - means[j])).sum::<f64>() / m;
        sds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut standardized = inputs.clone();
    for j in 0..q {
        let mut col = standardized.column_mut(j);
        col.mapv_inplace(|v| (v - means[j]) / sds[j]);
    }

    // lr = 4 / mean squared row norm (with the implicit bias column) bounds
    // the logistic Hessian's largest eigenvalue from above.
    let mean_sq_norm = standardized.iter().map(|&v| v * v).sum::<f64>() / m + 1.0;
    let lr = 4.0 / mean_sq_norm;

    let mut weights = Array1::<f64>::zeros(q);
    let mut bias = 0.0;
    for _ in 0..hyper.max_iters {
        let (_, grad_w, grad_b) = logistic_loss_and_gradient(&standardized, targets, &weights, bias);
        let grad_norm = (grad_w.iter().map(|g| g * g).sum::<f64>() + grad_b * grad_b).sqrt();
        if grad_norm < hyper.grad_tol {
            break;
        }
        weights.scaled_add(-lr, &grad_w);
        bias -= lr * grad_b;
    }

    // Undo the standardization: w_j / sd_j, b - sum_j w_j mean_j / sd_j.
    let mut folded_w = Array1::<f64>::zeros(q);
    let mut folded_b = bias;
    for j in 0..q {
        folded_w[j] = weights[j] / sds[j];
        folded_b -= weights[j] * means[j] / sds[j];
    }
    Ok(ProbeModel {
        weights: folded_w,
        bias: folded_b,
    })
}

fn check_disjoint(splits: &SplitAssignment) -> Result<()> {
    let train: std::collections::BTreeSet<usize> = splits.train.iter().copied().collect();
    if splits.test.iter().any(|i| train.contains(i)) {
        return Err(Error::Contract(
            "probe train and eval indices overlap".into(),
        ));
    }
    Ok(())
}

/// SPLIT test: fit a probe on the model's train-split features to predict
/// the group attribute, and return its ROC-AUC on test-split features.
pub fn split_test(
    model: &ModelState,
    ds: &Dataset,
    splits: &SplitAssignment,
    hyper: &ProbeHyper,
    seed: u64,
) -> Result<f64> {
    check_disjoint(splits)?;
    let train_features = model.forward(&ds.rows(&splits.train))?.features;
    let probe = train_linear_probe(&train_features, &ds.groups_at(&splits.train), hyper, seed)?;
    let test_features = model.forward(&ds.rows(&splits.test))?.features;
    let scores = probe.scores(&test_features);
    roc_auc(&scores, &ds.groups_at(&splits.test))
}

/// Reference separability of the raw data: train a fresh MLP (same hidden
/// widths as the disease model) to predict the group attribute from raw
/// inputs and return its held-out ROC-AUC at the best-validation checkpoint.
pub fn raw_data_probe(
    ds: &Dataset,
    splits: &SplitAssignment,
    arch: &Architecture,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<f64> {
    check_disjoint(splits)?;
    let probe_arch = Architecture {
        input_dim: ds.d(),
        hidden_widths: arch.hidden_widths.clone(),
        num_classes: 2,
    };
    let model = init_model(&probe_arch, derive_seed(seed, Stream::Init))?;
    let mut probe_hyper = hyper.clone();
    probe_hyper.seed = derive_seed(seed, Stream::Train);

    let train_x = ds.rows(&splits.train);
    let train_y = ds.groups_at(&splits.train);
    // Fall back to the training split when no validation indices exist.
    let (val_x, val_y) = if splits.val.is_empty() {
        (train_x.clone(), train_y.clone())
    } else {
        (ds.rows(&splits.val), ds.groups_at(&splits.val))
    };

    let outcome = train(model, &train_x, &train_y, &val_x, &val_y, &probe_hyper, |_| {})?;
    if let Some(msg) = outcome.divergence {
        return Err(Error::Numeric(format!("raw probe diverged: {msg}")));
    }
    let (_, scores) = outcome.early_stopped_state.predict(&ds.rows(&splits.test))?;
    roc_auc(&scores, &ds.groups_at(&splits.test))
}

/// Linear variant of [`raw_data_probe`]: a logistic probe on raw inputs.
pub fn raw_data_probe_linear(
    ds: &Dataset,
    splits: &SplitAssignment,
    hyper: &ProbeHyper,
    seed: u64,
) -> Result<f64> {
    check_disjoint(splits)?;
    let probe = train_linear_probe(
        &ds.rows(&splits.train),
        &ds.groups_at(&splits.train),
        hyper,
        seed,
    )?;
    let scores = probe.scores(&ds.rows(&splits.test));
    roc_auc(&scores, &ds.groups_at(&splits.test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_gaussian_mixture, split_dataset, GenConfig};
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn separable_targets_reach_full_accuracy() {
        let inputs = array![[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]];
        let targets = [0u8, 0, 0, 1, 1, 1];
        let probe = train_linear_probe(&inputs, &targets, &ProbeHyper::default(), 0).unwrap();
        assert_eq!(probe.predict(&inputs), targets.to_vec());
    }

    #[test]
    fn single_valued_targets_are_rejected() {
        let inputs = array![[1.0], [2.0]];
        assert!(matches!(
            train_linear_probe(&inputs, &[1, 1], &ProbeHyper::default(), 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn independent_targets_score_near_chance() {
        // Inputs carry no information about targets; held-out AUC should
        // hover around 0.5 on average.
        let mut aucs = Vec::new();
        for seed in 0..5u64 {
            let mut rng = rng_from_seed(seed);
            let normal = StandardNormal;
            let n = 400;
            let mut x = Array2::<f64>::zeros((2 * n, 3));
            for v in x.iter_mut() {
                let z: f64 = normal.sample(&mut rng);
                *v = z;
            }
            let y: Vec<u8> = (0..2 * n).map(|i| (i % 2) as u8).collect();
            let train_x = x.slice(ndarray::s![..n, ..]).to_owned();
            let eval_x = x.slice(ndarray::s![n.., ..]).to_owned();
            let probe =
                train_linear_probe(&train_x, &y[..n], &ProbeHyper::default(), seed).unwrap();
            let auc = roc_auc(&probe.scores(&eval_x), &y[n..]).unwrap();
            aucs.push(auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean held-out AUC {mean}");
    }

    #[test]
    fn probe_gradient_matches_finite_differences() {
        let inputs = array![[0.4, -1.2], [2.0, 0.3], [-0.7, 0.9], [1.1, 1.4]];
        let targets = [0u8, 1, 0, 1];
        let weights = array![0.3, -0.8];
        let bias = 0.25;
        let (_, grad_w, grad_b) = logistic_loss_and_gradient(&inputs, &targets, &weights, bias);

        let h = 1e-5;
        for j in 0..2 {
            let mut wp = weights.clone();
            wp[j] += h;
            let (lp, _, _) = logistic_loss_and_gradient(&inputs, &targets, &wp, bias);
            let mut wm = weights.clone();
            wm[j] -= h;
            let (lm, _, _) = logistic_loss_and_gradient(&inputs, &targets, &wm, bias);
            let numeric = (lp - lm) / (2.0 * h);
            let denom = grad_w[j].abs().max(numeric.abs()).max(1e-8);
            assert!(((grad_w[j] - numeric) / denom).abs() < 1e-5);
        }
        let (lp, _, _) = logistic_loss_and_gradient(&inputs, &targets, &weights, bias + h);
        let (lm, _, _) = logistic_loss_and_gradient(&inputs, &targets, &weights, bias - h);
        let numeric = (lp - lm) / (2.0 * h);
        let denom = grad_b.abs().max(numeric.abs()).max(1e-8);
        assert!(((grad_b - numeric) / denom).abs() < 1e-5);
    }

    /// Identity model: no hidden layers, so features are the raw inputs.
    fn identity_model(d: usize) -> ModelState {
        ModelState {
            hidden: vec![],
            classifier: crate::nnet::Layer {
                weights: Array2::eye(d.max(2)).slice(ndarray::s![..2, ..d]).to_owned(),
                bias: Array1::zeros(2),
            },
        }
    }

    #[test]
    fn constant_features_give_half_auc() {
        let cfg = GenConfig {
            n_per_cell: 20,
            seed: 1,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let splits = split_dataset(&ds, (0.6, 0.2, 0.2), 2).unwrap();
        // Hidden layer with zero weights maps everything to the zero vector.
        let model = ModelState {
            hidden: vec![crate::nnet::Layer {
                weights: Array2::zeros((4, 2)),
                bias: Array1::zeros(4),
            }],
            classifier: crate::nnet::Layer {
                weights: Array2::zeros((2, 4)),
                bias: Array1::zeros(2),
            },
        };
        let auc = split_test(&model, &ds, &splits, &ProbeHyper::default(), 3).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn group_revealing_features_give_full_auc() {
        // Features equal the raw inputs, and the second coordinate encodes
        // the group with a wide margin.
        let cfg = GenConfig {
            n_per_cell: 25,
            group_shift: 30.0,
            noise_sd: 0.5,
            seed: 4,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let splits = split_dataset(&ds, (0.6, 0.2, 0.2), 5).unwrap();
        let model = identity_model(2);
        let auc = split_test(&model, &ds, &splits, &ProbeHyper::default(), 6).unwrap();
        assert_abs_diff_eq!(auc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_group_signal_scores_near_chance() {
        let mut aucs = Vec::new();
        for seed in 0..4u64 {
            let cfg = GenConfig {
                n_per_cell: 50,
                group_shift: 0.0,
                seed,
                ..GenConfig::default()
            };
            let ds = generate_gaussian_mixture(&cfg).unwrap();
            let splits = split_dataset(&ds, (0.6, 0.2, 0.2), seed).unwrap();
            let model = init_model(&Architecture::default(), seed).unwrap();
            let auc = split_test(&model, &ds, &splits, &ProbeHyper::default(), seed).unwrap();
            aucs.push(auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.1, "mean AUC {mean}");
    }

    #[test]
    fn raw_probe_learns_sign_separated_groups() {
        let cfg = GenConfig {
            n_per_cell: 50,
            group_shift: 8.0,
            noise_sd: 1.0,
            seed: 7,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let splits = split_dataset(&ds, (0.6, 0.2, 0.2), 8).unwrap();
        let hyper = TrainHyper {
            max_epochs: 30,
            ..TrainHyper::default()
        };
        let auc = raw_data_probe(&ds, &splits, &Architecture::default(), &hyper, 9).unwrap();
        assert!(auc > 0.95, "AUC {auc}");
    }

    #[test]
    fn raw_probe_is_deterministic() {
        let cfg = GenConfig {
            n_per_cell: 30,
            seed: 10,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let splits = split_dataset(&ds, (0.6, 0.2, 0.2), 11).unwrap();
        let hyper = TrainHyper {
            max_epochs: 10,
            ..TrainHyper::default()
        };
        let a = raw_data_probe(&ds, &splits, &Architecture::default(), &hyper, 12).unwrap();
        let b = raw_data_probe(&ds, &splits, &Architecture::default(), &hyper, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_raw_probe_matches_signal_direction() {
        let cfg = GenConfig {
            n_per_cell: 50,
            group_shift: 8.0,
            seed: 13,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let splits = split_dataset(&ds, (0.6, 0.2, 0.2), 14).unwrap();
        let auc = raw_data_probe_linear(&ds, &splits, &ProbeHyper::default(), 15).unwrap();
        assert!(auc > 0.95, "AUC {auc}");
    }

    #[test]
    fn overlapping_probe_splits_are_rejected() {
        let cfg = GenConfig {
            n_per_cell: 10,
            seed: 1,
            ..GenConfig::default()
        };
        let ds = generate_gaussian_mixture(&cfg).unwrap();
        let mut splits = split_dataset(&ds, (0.6, 0.2, 0.2), 2).unwrap();
        splits.test[0] = splits.train[0];
        let model = identity_model(2);
        assert!(matches!(
            split_test(&model, &ds, &splits, &ProbeHyper::default(), 3),
            Err(Error::Contract(_))
        ));
    }
}
