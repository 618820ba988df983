//! Scratch probe of suite dynamics (not part of the deliverable).
use nclab_core::experiment::*;
use nclab_core::nnet::{Architecture, TrainHyper};
use nclab_core::probes::{Arm, Stage};

fn env_f64(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn env_usize(k: &str, d: usize) -> usize { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let nseeds = env_usize("SEEDS", 2) as u64;
    let widths: Vec<usize> = std::env::var("WIDTHS").unwrap_or_else(|_| "64,64".into())
        .split(',').map(|v| v.parse().unwrap()).collect();
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = (0..nseeds).collect();
    cfg.train = TrainHyper {
        learning_rate: env_f64("LR", 0.05),
        momentum: env_f64("MOM", 0.9),
        batch_size: env_usize("BATCH", 64),
        max_epochs: env_usize("EPOCHS", 200),
        weight_decay: env_f64("WD", 0.0),
        ..TrainHyper::default()
    };
    cfg.arch = Architecture { input_dim: 2, hidden_widths: widths.clone(), num_classes: 2 };
    cfg.gen.group_shift = env_f64("SHIFT", 1.0);
    cfg.gen.class_mean_separation = env_f64("SEP", 4.0);
    cfg.gen.noise_sd = env_f64("NOISE", 1.0);
    cfg.train.early_stop_min_delta = env_f64("MINDELTA", 1e-4);
    cfg.train.early_stop_patience = env_usize("PATIENCE", 10);
    let test_frac = env_f64("TESTFRAC", 0.1);
    cfg.split_fractions = (0.9 - test_frac, 0.1, test_frac);
    let t0 = std::time::Instant::now();
    let out = run_suite(&cfg).unwrap();
    for f in &out.failures { println!("FAILURE {} seed {}: {}", f.arm, f.seed, f.message); }
    println!("wall {:?} | lr={} wd={} batch={} widths={} shift={}", t0.elapsed(),
        cfg.train.learning_rate, cfg.train.weight_decay, cfg.train.batch_size, format!("{widths:?}"), cfg.gen.group_shift);
    let mut agg = (0, 0, 0, 0); // clean_ratio_ok, biased_ratio_ok, early_nc1_higher, dnc1_pos_both
    for seed in &cfg.seeds {
        let Some(clean) = out.records.iter().find(|r| r.seed == *seed && r.arm == Arm::Clean) else { continue };
        let Some(biased) = out.records.iter().find(|r| r.seed == *seed && r.arm == Arm::Biased) else { continue };
        let ratio = |r: &ExperimentRecord| r.epochs.last().unwrap().train_nc.nc1_global / r.epochs[0].train_nc.nc1_global;
        let (rc, rb) = (ratio(clean), ratio(biased));
        if rc < 0.05 { agg.0 += 1 }
        if rb < 0.05 { agg.1 += 1 }
        // same-epoch comparison at the biased arm's early-stopped epoch
        let estar = biased.checkpoint(Stage::Early).unwrap().epoch;
        let nc1_b_star = biased.epochs[estar - 1].train_nc.nc1_global;
        let nc1_c_star = clean.epochs[estar - 1].train_nc.nc1_global;
        if nc1_b_star > nc1_c_star { agg.2 += 1 }
        let fin_c = clean.checkpoint(Stage::Final).unwrap();
        let fin_b = biased.checkpoint(Stage::Final).unwrap();
        let er_c = clean.checkpoint(Stage::Early).unwrap();
        let er_b = biased.checkpoint(Stage::Early).unwrap();
        let dnc1_g0 = fin_b.test_nc.nc1_per_group[&0] - fin_c.test_nc.nc1_per_group[&0];
        let dnc1_g1 = fin_b.test_nc.nc1_per_group[&1] - fin_c.test_nc.nc1_per_group[&1];
        if dnc1_g0 > 0.0 && dnc1_g1 > 0.0 { agg.3 += 1 }
        println!("seed {seed}: loss c={:.4} b={:.4} ratio c={rc:.4} b={rb:.4} | earlyEp c={} b={} | NC1@e* c={:.3} b={:.3} | nc4end c={:.4} b={:.4} | dNC1 g0={:+.3} g1={:+.3} | f1g1 final c={:.3} b={:.3} early c={:.3} b={:.3} | f1g0 final c={:.3} b={:.3} | feat/raw early {:.3}/{:.3}",
            clean.epochs.last().unwrap().train_loss, biased.epochs.last().unwrap().train_loss, er_c.epoch, er_b.epoch, nc1_c_star, nc1_b_star,
            clean.epochs.last().unwrap().train_nc.nc4_mismatch, biased.epochs.last().unwrap().train_nc.nc4_mismatch,
            dnc1_g0, dnc1_g1,
            fin_c.f1_per_group[&1].unwrap(), fin_b.f1_per_group[&1].unwrap(),
            er_c.f1_per_group[&1].unwrap(), er_b.f1_per_group[&1].unwrap(),
            fin_c.f1_per_group[&0].unwrap(), fin_b.f1_per_group[&0].unwrap(),
            er_b.split.feature_auc, er_b.split.raw_auc);
    }
    if std::env::var("TRACE").is_ok() {
        for r in &out.records {
            if r.seed != 0 { continue }
            let pts: Vec<String> = r.epochs.iter().step_by(20)
                .map(|e| format!("{}:{:.3}/{:.2}/{:.2}", e.epoch, e.train_loss, e.train_nc.nc1_global, e.train_nc.config_divergence)).collect();
            println!("{} trace (epoch:loss/nc1/cfgdiv): {}", r.arm, pts.join(" "));
            let pts: Vec<String> = r.epochs.iter().step_by(20)
                .map(|e| format!("{}:{:.2}", e.epoch, e.train_nc.nc3_selfdual)).collect();
            println!("{} nc3 trace: {}", r.arm, pts.join(" "));
        }
    }
    println!("tally over {nseeds} seeds: clean_ratio_ok={} biased_ratio_ok={} biased_early_nc1_higher={} dNC1_pos_both={}", agg.0, agg.1, agg.2, agg.3);
    if out.records.len() >= 4 {
        let report = compare_arms(&out.records).unwrap();
        for cell in &report.cells {
            println!("cmp {:?} g{}: dNC1 {:+.4}+-{:.4} dF1 {:+.4}+-{:.4} U={} p={:.4} sig={} ({:?})",
                cell.stage, cell.group, cell.mean_delta_nc1, cell.std_delta_nc1,
                cell.mean_delta_f1, cell.std_delta_f1, cell.u_statistic, cell.p_value, cell.significant, cell.method);
        }
        for a in &report.split_association {
            println!("tau {:?}: {:?} over {} pairs", a.stage, a.kendall_tau, a.pairs);
        }
    }
}
