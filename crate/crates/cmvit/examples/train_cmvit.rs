//! End-to-end frequency-fusion transformer run: synthetic corpus, balanced
//! split, training with plateau stopping, checkpoint round trip, evaluation,
//! and the results report.
//!
//! ```bash
//! cargo run --example train_cmvit
//! ```

use cmvit::data::{balance_undersample, gen_synthetic, split};
use cmvit::models::{load_checkpoint, Arch, ModelConfig};
use cmvit::train::{evaluate, report, train, PaperBaseline, RunSummary, TrainConfig};

fn main() {
    let dir = std::env::temp_dir().join("cmvit_train_example");
    let manifest = gen_synthetic(64, 32, 7, &dir).unwrap();
    let balanced = balance_undersample(&manifest, 7).unwrap();
    let (train_set, val_set) = split(&balanced, 0.2, 7).unwrap();
    println!(
        "corpus: {} train / {} val samples at 32x32",
        train_set.len(),
        val_set.len()
    );

    let model_cfg = ModelConfig::desk(Arch::Cmvit);
    let ckpt = dir.join("cmvit_best.ckpt");
    let train_cfg = TrainConfig {
        epochs_max: 12,
        batch_size: 32,
        data_seed: 7,
        init_seed: 7,
        checkpoint_path: Some(ckpt.clone()),
        ..TrainConfig::default()
    };
    let (_, outcome) = train::<f32>(&model_cfg, &train_cfg, &train_set, &val_set).unwrap();
    for r in &outcome.history {
        println!(
            "epoch {:>2}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
    }
    println!(
        "stopped after {} epochs (early: {}), best val loss {:.4} at epoch {}",
        outcome.epochs_ran, outcome.stopped_early, outcome.best_val_loss, outcome.best_epoch
    );

    // evaluate the retained best checkpoint
    let mut best = load_checkpoint::<f32>(&ckpt).unwrap();
    let metrics = evaluate(&mut best, &val_set, 32).unwrap();
    println!(
        "best checkpoint: accuracy {:.3}, F1 {:.3}/{:.3}, {:.2} ms per file",
        metrics.accuracy,
        metrics.f1_per_class[0],
        metrics.f1_per_class[1],
        metrics.time_per_file * 1e3
    );

    let last = outcome.history.last().unwrap();
    let summary = RunSummary {
        model_name: "cmvit".into(),
        trainable_params: best.count_parameters(),
        epochs: outcome.epochs_ran,
        batch_size: train_cfg.batch_size,
        training_loss: last.train_loss,
        training_accuracy: last.train_acc,
        metrics,
    };
    println!("\n{}", report(&[summary], &PaperBaseline::default()));
}
