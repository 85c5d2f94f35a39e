//! Trains part segmentation on synthetic hemisphere-plus-disc composites
//! and reports test mIoU.
//!
//! ```text
//! cargo run --release --example train_segmentation -- [epochs] [seed]
//! ```

use pointseq::data::{generate_synthetic, SyntheticSpec};
use pointseq::geometry::ScaleSpec;
use pointseq::model::{ModelConfig, Task};
use pointseq::training::{evaluate_segmentation, train_with, TrainConfig};

fn main() -> pointseq::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(60, |a| a.parse().expect("epochs"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));

    let train_set = generate_synthetic(&SyntheticSpec::segmentation(128, 0.01, seed), 40)?;
    let test_set = generate_synthetic(&SyntheticSpec::segmentation(128, 0.01, seed + 1), 20)?;
    let model = ModelConfig {
        task: Task::Segmentation,
        centroids: 16,
        scales: ScaleSpec::new(vec![8, 16])?,
        feature_dim: 32,
        hidden_dim: 32,
        parts: 2,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train_with(&model, &config, &train_set, None, |r| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            println!("{}", r.to_line());
        }
    })?;
    let test = evaluate_segmentation(&outcome.best, &test_set)?;
    println!("best epoch {}\n{}", outcome.report.best_epoch, test.table());
    Ok(())
}
