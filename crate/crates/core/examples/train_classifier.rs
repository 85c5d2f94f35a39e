//! Trains a classifier on synthetic spheres, cubes and discs and reports
//! train and test accuracy.
//!
//! ```text
//! cargo run --release --example train_classifier -- [epochs] [seed]
//! ```

use std::time::Instant;

use pointseq::data::{generate_synthetic, SyntheticSpec};
use pointseq::geometry::ScaleSpec;
use pointseq::model::ModelConfig;
use pointseq::training::{evaluate_classification, train_with, TrainConfig};

fn main() -> pointseq::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(200, |a| a.parse().expect("epochs"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));

    let train_set = generate_synthetic(&SyntheticSpec::classification(64, 0.01, seed), 20)?;
    let test_set = generate_synthetic(&SyntheticSpec::classification(64, 0.01, seed + 1000), 10)?;

    let model = ModelConfig {
        centroids: 8,
        scales: ScaleSpec::new(vec![4, 8])?,
        feature_dim: 32,
        hidden_dim: 32,
        classes: 3,
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let outcome = train_with(&model, &config, &train_set, None, |r| {
        if r.epoch % 10 == 0 || r.epoch == 1 {
            println!("{}", r.to_line());
        }
    })?;
    println!("trained in {:.1?}, best epoch {}", start.elapsed(), outcome.report.best_epoch);

    let test = evaluate_classification(&outcome.best, &test_set)?;
    println!("test accuracy\n{}", test.table());
    for (name, acc) in test_set.names.iter().zip(&test.per_class) {
        println!("{name:>8} {:.3}", acc.unwrap_or(f64::NAN));
    }
    Ok(())
}
