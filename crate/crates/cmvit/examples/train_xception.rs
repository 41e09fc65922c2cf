//! Depthwise-separable CNN baseline trained on the synthetic corpus,
//! including the texture-histogram transformer variant for comparison.
//!
//! ```bash
//! cargo run --example train_xception
//! ```

use cmvit::data::{gen_synthetic, split};
use cmvit::models::{Arch, ModelConfig};
use cmvit::train::{train, TrainConfig};

fn main() {
    let dir = std::env::temp_dir().join("cmvit_xception_example");
    let manifest = gen_synthetic(48, 32, 9, &dir).unwrap();
    let (train_set, val_set) = split(&manifest, 0.25, 9).unwrap();

    for arch in [Arch::Xception, Arch::CmvitLbp] {
        let cfg = TrainConfig {
            epochs_max: 6,
            batch_size: 24,
            data_seed: 9,
            init_seed: 9,
            ..TrainConfig::default()
        };
        let model_cfg = ModelConfig::desk(arch);
        let (model, outcome) = train::<f32>(&model_cfg, &cfg, &train_set, &val_set).unwrap();
        let last = outcome.history.last().unwrap();
        println!(
            "{:<10} {:>9} params | {} epochs | final val loss {:.4} acc {:.3}",
            arch.name(),
            model.count_parameters(),
            outcome.epochs_ran,
            last.val_loss,
            last.val_acc
        );
    }
}
