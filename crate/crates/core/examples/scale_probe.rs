//! Scratch: feature-scale evolution of one run (not part of the deliverable).
use nclab_core::experiment::*;
use nclab_core::nnet::*;
use nclab_core::collapse::*;
use nclab_core::rng::{derive_seed, Stream};

fn env_f64(k: &str, d: f64) -> f64 { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }
fn env_usize(k: &str, d: usize) -> usize { std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d) }

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.gen.class_mean_separation = env_f64("SEP", 4.0);
    cfg.gen.group_shift = env_f64("SHIFT", 2.0);
    cfg.train.learning_rate = env_f64("LR", 0.1);
    cfg.train.weight_decay = env_f64("WD", 1e-3);
    cfg.train.batch_size = env_usize("BATCH", 32);
    cfg.train.max_epochs = env_usize("EPOCHS", 200);
    let w = env_usize("WIDTH", 128);
    cfg.arch = Architecture { input_dim: 2, hidden_widths: vec![w, w], num_classes: 2 };
    if let Ok(sp) = std::env::var("SPLITS") {
        let v: Vec<f64> = sp.split(',').map(|x| x.parse().unwrap()).collect();
        cfg.split_fractions = (v[0], v[1], v[2]);
    }
    let biased = std::env::var("BIASED").is_ok();
    let seed = 0u64;
    let data = seed_data(&cfg, biased, seed).unwrap();
    let ds = &data.dataset;
    let tr = &data.splits.train;
    let x = ds.rows(tr); let y = ds.labels_at(tr); let g = ds.groups_at(tr);
    let vx = ds.rows(&data.splits.val); let vy = ds.labels_at(&data.splits.val);
    let model = init_model(&cfg.arch, derive_seed(seed, Stream::Init)).unwrap();
    let mut hyper = cfg.train.clone();
    hyper.seed = derive_seed(seed, Stream::Train);
    let out = train(model, &x, &y, &vx, &vy, &hyper, |view| {
        let period = hyper.max_epochs / 10; if view.epoch % period == 1 || view.epoch == hyper.max_epochs {
            let fb = FeatureBatch::new(view.train_features.clone(), y.clone(), g.clone()).unwrap();
            let stats = class_statistics(&fb).unwrap();
            let d: f64 = (&stats.class_means.row(0) - &stats.class_means.row(1))
                .iter().map(|v| v * v).sum::<f64>().sqrt();
            let nc1 = nc1_variability(&fb, &stats).unwrap();
            // train accuracy
            let mut correct = 0usize;
            for (row, &lab) in view.train_logits.rows().into_iter().zip(&y) {
                let pred = if row[1] > row[0] { 1u8 } else { 0 };
                if pred == lab { correct += 1; }
            }
            println!("epoch {:3}: loss {:.4} val {:.4} acc {:.4} | D {:8.3} NC1 {:8.3} NC1/D {:.3}",
                view.epoch, view.train_loss, view.val_loss, correct as f64 / y.len() as f64, d, nc1, nc1 / d);
        }
    }).unwrap();
    println!("early epoch {} stopped_at {:?}", out.early_stopped_epoch, out.stopped_at);
}
