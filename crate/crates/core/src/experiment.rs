//! Experiment harness: clean and biased training arms over many seeds,
//! per-epoch collapse tracking, early/final checkpoint evaluation on the
//! untouched test split, separability probes, and arm comparison with
//! rank statistics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collapse::{nc_report, NCReport};
use crate::datagen::{
    generate_gaussian_mixture, inject_label_bias_within, split_dataset, Dataset, FlipRecord,
    GenConfig, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::nnet::{init_model, train, Architecture, FeatureBatch, ModelState, TrainHyper};
use crate::probes::{
    raw_data_probe, raw_data_probe_linear, split_test, Arm, ProbeHyper, SplitResult, Stage,
};
use crate::rng::{derive_seed, Stream};
use crate::stats::{f1_score, kendall_tau, mann_whitney_u, UMethod};

/// Significance threshold for the arm comparison.
pub const P_CRITICAL: f64 = 0.05;

/// Everything needed to reproduce one suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    /// (train, val, test) fractions; must sum to 1.
    pub split_fractions: (f64, f64, f64),
    pub bias_fraction: f64,
    pub bias_target_group: u8,
    pub arch: Architecture,
    pub train: TrainHyper,
    pub probe: ProbeHyper,
    /// Use a logistic probe instead of an MLP for the raw-data reference.
    pub raw_probe_linear: bool,
    pub seeds: Vec<u64>,
    /// Final train NC1 is expected below this fraction of its epoch-1 value.
    pub nc1_collapse_ratio: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            split_fractions: (0.8, 0.1, 0.1),
            bias_fraction: 0.25,
            bias_target_group: 1,
            arch: Architecture::default(),
            train: TrainHyper::default(),
            probe: ProbeHyper::default(),
            raw_probe_linear: false,
            seeds: (0..10).collect(),
            nc1_collapse_ratio: 0.05,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.bias_fraction) {
            return Err(Error::Config("bias_fraction must be in [0, 1]".into()));
        }
        if self.bias_target_group > 1 {
            return Err(Error::Config("bias_target_group must be 0 or 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.nc1_collapse_ratio > 0.0) {
            return Err(Error::Config("nc1_collapse_ratio must be > 0".into()));
        }
        Ok(())
    }
}

/// One epoch of one run: losses plus the train-side collapse report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_nc: NCReport,
}

/// One evaluated checkpoint of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub stage: Stage,
    pub epoch: usize,
    /// Collapse metrics on test features with clean test labels.
    pub test_nc: NCReport,
    /// Per-group F1 on clean test labels; `None` marks the undefined 0/0 case.
    pub f1_per_group: BTreeMap<u8, Option<f64>>,
    pub split: SplitResult,
    /// Present on freshly-run records, absent after CSV round trips.
    #[serde(skip)]
    pub model: Option<ModelState>,
}

/// Full trace of one (arm, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub arm: Arm,
    pub seed: u64,
    pub epochs: Vec<EpochRow>,
    pub checkpoints: Vec<CheckpointRow>,
}

impl ExperimentRecord {
    pub fn checkpoint(&self, stage: Stage) -> Option<&CheckpointRow> {
        self.checkpoints.iter().find(|c| c.stage == stage)
    }
}

/// A run that could not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub arm: Arm,
    pub seed: u64,
    pub message: String,
}

/// All records (and failures) of one suite.
#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<ArmFailure>,
}

/// Data, split, and flip record shared by the two arms of one seed.
pub struct SeedData {
    pub dataset: Dataset,
    pub splits: SplitAssignment,
    pub flips: Option<FlipRecord>,
}

/// Regenerate the dataset and split a given run saw. Pure in (cfg, seed).
pub fn seed_data(cfg: &ExperimentConfig, biased: bool, seed: u64) -> Result<SeedData> {
    let mut gen_cfg = cfg.gen.clone();
    gen_cfg.seed = derive_seed(seed, Stream::Data);
    let clean = generate_gaussian_mixture(&gen_cfg)?;
    let splits = split_dataset(&clean, cfg.split_fractions, derive_seed(seed, Stream::Split))?;
    if !biased {
        return Ok(SeedData {
            dataset: clean,
            splits,
            flips: None,
        });
    }
    let eligible = splits.train_val();
    let (biased_ds, flips) = inject_label_bias_within(
        &clean,
        &eligible,
        cfg.bias_target_group,
        cfg.bias_fraction,
        derive_seed(seed, Stream::Bias),
    )?;
    debug_assert!(flips
        .flipped_indices
        .iter()
        .all(|i| !splits.test.contains(i)));
    Ok(SeedData {
        dataset: biased_ds,
        splits,
        flips: Some(flips),
    })
}

fn check_weighted_identity(report: &NCReport, groups: &[u8]) -> Result<()> {
    let n = groups.len() as f64;
    let weighted: f64 = report
        .nc1_per_group
        .iter()
        .map(|(&g, &sa)| {
            let na = groups.iter().filter(|&&a| a == g).count() as f64;
            na / n * sa
        })
        .sum();
    let tol = 1e-12 * report.nc1_global.abs().max(1.0);
    if (weighted - report.nc1_global).abs() > tol {
        return Err(Error::Numeric(format!(
            "group-weighted NC1 {weighted} deviates from global {}",
            report.nc1_global
        )));
    }
    Ok(())
}

/// Train one arm of one seed and evaluate both checkpoints.
pub fn run_arm(cfg: &ExperimentConfig, biased: bool, seed: u64) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let arm = if biased { Arm::Biased } else { Arm::Clean };
    let data = seed_data(cfg, biased, seed)?;
    let ds = &data.dataset;
    let splits = &data.splits;

    let train_x = ds.rows(&splits.train);
    let train_y = ds.labels_at(&splits.train);
    let train_groups = ds.groups_at(&splits.train);
    let val_x = ds.rows(&splits.val);
    let val_y = ds.labels_at(&splits.val);

    let model = init_model(&cfg.arch, derive_seed(seed, Stream::Init))?;
    let mut hyper = cfg.train.clone();
    hyper.seed = derive_seed(seed, Stream::Train);

    let mut epochs: Vec<EpochRow> = Vec::with_capacity(hyper.max_epochs);
    let mut epoch_error: Option<Error> = None;
    let outcome = train(model, &train_x, &train_y, &val_x, &val_y, &hyper, |view| {
        if epoch_error.is_some() {
            return;
        }
        let fb = match FeatureBatch::new(
            view.train_features.clone(),
            train_y.clone(),
            train_groups.clone(),
        ) {
            Ok(fb) => fb,
            Err(e) => {
                epoch_error = Some(e);
                return;
            }
        };
        match nc_report(&fb, &view.model.classifier.weights) {
            Ok(report) => {
                if let Err(e) = check_weighted_identity(&report, &train_groups) {
                    epoch_error = Some(e);
                    return;
                }
                epochs.push(EpochRow {
                    epoch: view.epoch,
                    train_loss: view.train_loss,
                    val_loss: view.val_loss,
                    train_nc: report,
                });
            }
            Err(e) => epoch_error = Some(e),
        }
    })?;
    if let Some(e) = epoch_error {
        return Err(e);
    }
    if let Some(msg) = outcome.divergence {
        return Err(Error::Numeric(format!(
            "{arm} arm, seed {seed}: training diverged after {} epochs: {msg}",
            epochs.len()
        )));
    }

    let raw_auc = if cfg.raw_probe_linear {
        raw_data_probe_linear(ds, splits, &cfg.probe, derive_seed(seed, Stream::RawProbe))?
    } else {
        raw_data_probe(
            ds,
            splits,
            &cfg.arch,
            &cfg.train,
            derive_seed(seed, Stream::RawProbe),
        )?
    };

    let evaluate = |stage: Stage, epoch: usize, model: &ModelState| -> Result<CheckpointRow> {
        let test_x = ds.rows(&splits.test);
        let test_y = ds.clean_labels_at(&splits.test);
        let test_groups = ds.groups_at(&splits.test);

        let pass = model.forward(&test_x)?;
        let fb = FeatureBatch::new(pass.features, test_y.clone(), test_groups.clone())?;
        let test_nc = nc_report(&fb, &model.classifier.weights)?;

        let (pred, _) = model.predict(&test_x)?;
        let mut f1_per_group = BTreeMap::new();
        for g in [0u8, 1] {
            let idx: Vec<usize> = (0..test_groups.len())
                .filter(|&i| test_groups[i] == g)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let pred_g: Vec<u8> = idx.iter().map(|&i| pred[i]).collect();
            let actual_g: Vec<u8> = idx.iter().map(|&i| test_y[i]).collect();
            f1_per_group.insert(g, f1_score(&pred_g, &actual_g));
        }

        let feature_auc = split_test(model, ds, splits, &cfg.probe, derive_seed(seed, Stream::Probe))?;
        Ok(CheckpointRow {
            stage,
            epoch,
            test_nc,
            f1_per_group,
            split: SplitResult {
                feature_auc,
                raw_auc,
                stage,
                arm,
            },
            model: Some(model.clone()),
        })
    };

    let checkpoints = vec![
        evaluate(
            Stage::Early,
            outcome.early_stopped_epoch,
            &outcome.early_stopped_state,
        )?,
        evaluate(Stage::Final, hyper.max_epochs, &outcome.final_state)?,
    ];

    Ok(ExperimentRecord {
        arm,
        seed,
        epochs,
        checkpoints,
    })
}

/// Run clean and biased arms for every seed. Arms of a seed share the
/// generated dataset, split, and initialization; the label flips are the
/// only difference. Records are written to `cfg.out_dir` when set.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    cfg.validate()?;
    let jobs: Vec<(u64, bool)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| [(seed, false), (seed, true)])
        .collect();

    let results: Vec<std::result::Result<ExperimentRecord, ArmFailure>> = jobs
        .par_iter()
        .map(|&(seed, biased)| {
            run_arm(cfg, biased, seed).map_err(|e| ArmFailure {
                arm: if biased { Arm::Biased } else { Arm::Clean },
                seed,
                message: e.to_string(),
            })
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(record) => records.push(record),
            Err(failure) => {
                log::error!(
                    "{} arm, seed {} failed: {}",
                    failure.arm,
                    failure.seed,
                    failure.message
                );
                failures.push(failure);
            }
        }
    }

    for record in &records {
        if let (Some(first), Some(last)) = (record.epochs.first(), record.epochs.last()) {
            let ratio = last.train_nc.nc1_global / first.train_nc.nc1_global;
            if ratio >= cfg.nc1_collapse_ratio {
                log::warn!(
                    "{} arm, seed {}: final train NC1 is {ratio:.3} of its epoch-1 value \
                     (expected < {})",
                    record.arm,
                    record.seed,
                    cfg.nc1_collapse_ratio
                );
            }
        }
    }

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_records_csv(&records, dir)?;
        write_manifest(cfg, &dir.join("manifest.json"))?;
        if !failures.is_empty() {
            let file = std::fs::File::create(dir.join("failures.json"))?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), &failures)?;
        }
    }

    Ok(SuiteOutput { records, failures })
}

/// One (stage, group) cell of the arm comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStageComparison {
    pub stage: Stage,
    pub group: u8,
    /// Seeds contributing paired F1 values.
    pub seeds_used: usize,
    /// Mean/std over seeds of (biased - clean) per-group test NC1.
    pub mean_delta_nc1: f64,
    pub std_delta_nc1: f64,
    /// Mean/std over seeds of (biased - clean) per-group test F1.
    pub mean_delta_f1: f64,
    pub std_delta_f1: f64,
    /// Mann-Whitney U of the biased arm's F1 sample against the clean arm's.
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: UMethod,
    pub significant: bool,
}

/// Rank association between raw-data and feature separability per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAssociation {
    pub stage: Stage,
    /// Kendall tau-b over the biased arm's per-seed (raw_auc, feature_auc)
    /// pairs; `None` when one side is fully tied.
    pub kendall_tau: Option<f64>,
    pub pairs: usize,
}

/// Clean-vs-biased comparison across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub cells: Vec<GroupStageComparison>,
    pub split_association: Vec<StageAssociation>,
    pub p_critical: f64,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Compare the two arms seed by seed: per-group, per-stage NC1 and F1
/// deltas with a two-sided Mann-Whitney U test on the F1 samples, plus the
/// per-stage rank association of the separability AUCs.
pub fn compare_arms(records: &[ExperimentRecord]) -> Result<ComparisonReport> {
    let mut by_seed: BTreeMap<u64, (Option<&ExperimentRecord>, Option<&ExperimentRecord>)> =
        BTreeMap::new();
    for record in records {
        let entry = by_seed.entry(record.seed).or_insert((None, None));
        match record.arm {
            Arm::Clean => entry.0 = Some(record),
            Arm::Biased => entry.1 = Some(record),
        }
    }
    let paired: Vec<(&ExperimentRecord, &ExperimentRecord)> = by_seed
        .values()
        .filter_map(|(clean, biased)| clean.zip(*biased))
        .collect();
    if paired.len() < 2 {
        return Err(Error::Contract(
            "compare_arms needs at least 2 seeds with both arms".into(),
        ));
    }

    let mut cells = Vec::new();
    let mut associations = Vec::new();
    for stage in [Stage::Early, Stage::Final] {
        for group in [0u8, 1] {
            let mut delta_nc1 = Vec::new();
            let mut delta_f1 = Vec::new();
            let mut clean_f1 = Vec::new();
            let mut biased_f1 = Vec::new();
            for (clean, biased) in &paired {
                let (Some(c), Some(b)) = (clean.checkpoint(stage), biased.checkpoint(stage))
                else {
                    log::warn!(
                        "seed {}: missing {stage} checkpoint, skipped in comparison",
                        clean.seed
                    );
                    continue;
                };
                if let (Some(&nc_c), Some(&nc_b)) = (
                    c.test_nc.nc1_per_group.get(&group),
                    b.test_nc.nc1_per_group.get(&group),
                ) {
                    delta_nc1.push(nc_b - nc_c);
                }
                match (
                    c.f1_per_group.get(&group).copied().flatten(),
                    b.f1_per_group.get(&group).copied().flatten(),
                ) {
                    (Some(fc), Some(fb)) => {
                        delta_f1.push(fb - fc);
                        clean_f1.push(fc);
                        biased_f1.push(fb);
                    }
                    _ => log::warn!(
                        "seed {}: undefined F1 for group {group} at {stage}, skipped",
                        clean.seed
                    ),
                }
            }
            if delta_f1.len() < 2 {
                log::warn!("group {group} at {stage}: fewer than 2 usable seeds, cell omitted");
                continue;
            }
            let (mean_delta_nc1, std_delta_nc1) = mean_and_std(&delta_nc1);
            let (mean_delta_f1, std_delta_f1) = mean_and_std(&delta_f1);
            let test = mann_whitney_u(&biased_f1, &clean_f1)?;
            cells.push(GroupStageComparison {
                stage,
                group,
                seeds_used: delta_f1.len(),
                mean_delta_nc1,
                std_delta_nc1,
                mean_delta_f1,
                std_delta_f1,
                u_statistic: test.u_statistic,
                p_value: test.p_value,
                method: test.method,
                significant: test.p_value < P_CRITICAL,
            });
        }

        let mut raw = Vec::new();
        let mut feature = Vec::new();
        for (_, biased) in &paired {
            if let Some(c) = biased.checkpoint(stage) {
                raw.push(c.split.raw_auc);
                feature.push(c.split.feature_auc);
            }
        }
        let tau = if raw.len() >= 2 {
            kendall_tau(&raw, &feature)
        } else {
            None
        };
        associations.push(StageAssociation {
            stage,
            kendall_tau: tau,
            pairs: raw.len(),
        });
    }

    Ok(ComparisonReport {
        cells,
        split_association: associations,
        p_critical: P_CRITICAL,
    })
}

// --- serialization -------------------------------------------------------

/// Nine significant digits, scientific notation.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => fmt_float(v),
        None => "NA".to_string(),
    }
}

fn parse_float(field: &str, line: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("invalid float {field:?}"),
    })
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>> {
    if field == "NA" {
        Ok(None)
    } else {
        parse_float(field, line).map(Some)
    }
}

pub const EPOCHS_HEADER: [&str; 13] = [
    "arm",
    "seed",
    "epoch",
    "train_loss",
    "val_loss",
    "nc1",
    "nc1_g0",
    "nc1_g1",
    "nc2_equinorm",
    "nc2_equiangular",
    "nc3",
    "nc4",
    "config_divergence",
];

pub const CHECKPOINTS_HEADER: [&str; 16] = [
    "arm",
    "seed",
    "stage",
    "epoch",
    "nc1",
    "nc1_g0",
    "nc1_g1",
    "nc2_equinorm",
    "nc2_equiangular",
    "nc3",
    "nc4",
    "config_divergence",
    "f1_g0",
    "f1_g1",
    "feature_auc",
    "raw_auc",
];

pub const COMPARISON_HEADER: [&str; 12] = [
    "stage",
    "group",
    "seeds",
    "mean_delta_nc1",
    "std_delta_nc1",
    "mean_delta_f1",
    "std_delta_f1",
    "u_statistic",
    "p_value",
    "method",
    "significant",
    "kendall_tau_split",
];

fn nc_fields(nc: &NCReport) -> Vec<String> {
    vec![
        fmt_float(nc.nc1_global),
        fmt_opt(nc.nc1_per_group.get(&0).copied()),
        fmt_opt(nc.nc1_per_group.get(&1).copied()),
        fmt_float(nc.nc2_equinorm),
        fmt_float(nc.nc2_equiangular),
        fmt_float(nc.nc3_selfdual),
        fmt_float(nc.nc4_mismatch),
        fmt_float(nc.config_divergence),
    ]
}

fn nc_from_fields(fields: &[&str], line: usize) -> Result<NCReport> {
    let mut per_group = BTreeMap::new();
    if let Some(v) = parse_opt(fields[1], line)? {
        per_group.insert(0u8, v);
    }
    if let Some(v) = parse_opt(fields[2], line)? {
        per_group.insert(1u8, v);
    }
    Ok(NCReport {
        nc1_global: parse_float(fields[0], line)?,
        nc1_per_group: per_group,
        nc2_equinorm: parse_float(fields[3], line)?,
        nc2_equiangular: parse_float(fields[4], line)?,
        nc3_selfdual: parse_float(fields[5], line)?,
        nc4_mismatch: parse_float(fields[6], line)?,
        config_divergence: parse_float(fields[7], line)?,
    })
}

/// Write `epochs.csv` and `checkpoints.csv` under `dir`, ordered by
/// (seed, arm) with clean before biased.
pub fn write_records_csv(records: &[ExperimentRecord], dir: &Path) -> Result<()> {
    let mut ordered: Vec<&ExperimentRecord> = records.iter().collect();
    ordered.sort_by_key(|r| (r.seed, r.arm));

    let mut epochs = csv::Writer::from_path(dir.join("epochs.csv"))?;
    epochs.write_record(EPOCHS_HEADER)?;
    for record in &ordered {
        for row in &record.epochs {
            let mut fields = vec![
                record.arm.to_string(),
                record.seed.to_string(),
                row.epoch.to_string(),
                fmt_float(row.train_loss),
                fmt_float(row.val_loss),
            ];
            fields.extend(nc_fields(&row.train_nc));
            epochs.write_record(&fields)?;
        }
    }
    epochs.flush()?;

    let mut checkpoints = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
    checkpoints.write_record(CHECKPOINTS_HEADER)?;
    for record in &ordered {
        for row in &record.checkpoints {
            let mut fields = vec![
                record.arm.to_string(),
                record.seed.to_string(),
                row.stage.to_string(),
                row.epoch.to_string(),
            ];
            fields.extend(nc_fields(&row.test_nc));
            fields.push(fmt_opt(row.f1_per_group.get(&0).copied().flatten()));
            fields.push(fmt_opt(row.f1_per_group.get(&1).copied().flatten()));
            fields.push(fmt_float(row.split.feature_auc));
            fields.push(fmt_float(row.split.raw_auc));
            checkpoints.write_record(&fields)?;
        }
    }
    checkpoints.flush()?;
    Ok(())
}

/// Read records back from `epochs.csv` and `checkpoints.csv` in `dir`.
/// Numeric fields carry the written 9-significant-digit precision and the
/// `model` field is absent.
pub fn read_records_csv(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut records: BTreeMap<(u64, Arm), ExperimentRecord> = BTreeMap::new();

    let mut epochs = csv::Reader::from_path(dir.join("epochs.csv"))?;
    for (idx, row) in epochs.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        let fields: Vec<&str> = row.iter().collect();
        if fields.len() != EPOCHS_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields", EPOCHS_HEADER.len()),
            });
        }
        let arm: Arm = fields[0].parse()?;
        let seed: u64 = fields[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid seed {:?}", fields[1]),
        })?;
        let record = records.entry((seed, arm)).or_insert(ExperimentRecord {
            arm,
            seed,
            epochs: Vec::new(),
            checkpoints: Vec::new(),
        });
        record.epochs.push(EpochRow {
            epoch: fields[2].parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid epoch {:?}", fields[2]),
            })?,
            train_loss: parse_float(fields[3], line)?,
            val_loss: parse_float(fields[4], line)?,
            train_nc: nc_from_fields(&fields[5..13], line)?,
        });
    }

    let mut checkpoints = csv::Reader::from_path(dir.join("checkpoints.csv"))?;
    for (idx, row) in checkpoints.records().enumerate() {
        let line = idx + 2;
        let row = row?;
        let fields: Vec<&str> = row.iter().collect();
        if fields.len() != CHECKPOINTS_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields", CHECKPOINTS_HEADER.len()),
            });
        }
        let arm: Arm = fields[0].parse()?;
        let seed: u64 = fields[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid seed {:?}", fields[1]),
        })?;
        let stage: Stage = fields[2].parse()?;
        let record = records.entry((seed, arm)).or_insert(ExperimentRecord {
            arm,
            seed,
            epochs: Vec::new(),
            checkpoints: Vec::new(),
        });
        let mut f1_per_group = BTreeMap::new();
        f1_per_group.insert(0u8, parse_opt(fields[12], line)?);
        f1_per_group.insert(1u8, parse_opt(fields[13], line)?);
        record.checkpoints.push(CheckpointRow {
            stage,
            epoch: fields[3].parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid epoch {:?}", fields[3]),
            })?,
            test_nc: nc_from_fields(&fields[4..12], line)?,
            f1_per_group,
            split: SplitResult {
                feature_auc: parse_float(fields[14], line)?,
                raw_auc: parse_float(fields[15], line)?,
                stage,
                arm,
            },
            model: None,
        });
    }

    let mut out: Vec<ExperimentRecord> = records.into_values().collect();
    out.sort_by_key(|r| (r.seed, r.arm));
    Ok(out)
}

/// Write `comparison.csv`; the per-stage Kendall tau is repeated on each
/// row of its stage.
pub fn write_comparison_csv(report: &ComparisonReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(COMPARISON_HEADER)?;
    for cell in &report.cells {
        let tau = report
            .split_association
            .iter()
            .find(|a| a.stage == cell.stage)
            .and_then(|a| a.kendall_tau);
        writer.write_record(&[
            cell.stage.to_string(),
            cell.group.to_string(),
            cell.seeds_used.to_string(),
            fmt_float(cell.mean_delta_nc1),
            fmt_float(cell.std_delta_nc1),
            fmt_float(cell.mean_delta_f1),
            fmt_float(cell.std_delta_f1),
            fmt_float(cell.u_statistic),
            fmt_float(cell.p_value),
            cell.method.to_string(),
            cell.significant.to_string(),
            fmt_opt(tau),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Write the fully-resolved configuration as pretty JSON.
pub fn write_manifest(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), cfg)?;
    Ok(())
}
