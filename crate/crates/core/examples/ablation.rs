//! Compares the five sequence-aggregation variants on the synthetic
//! classification set with a short training budget.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs]
//! ```

use pointseq::cli::{ablate, ablation_table, default_values, Axis, RunConfig};

fn main() -> pointseq::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(30, |a| a.parse().expect("epochs"));
    let overrides: Vec<String> = [
        "model.centroids=8",
        "model.scales=[4, 8]",
        "model.feature_dim=32",
        "model.hidden_dim=32",
        "model.classes=3",
        "data.points=64",
        &format!("train.epochs={epochs}"),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let config = RunConfig::load(None, &overrides)?;
    let rows = ablate(&config, Axis::Aggregation, &default_values(Axis::Aggregation), |r| {
        println!("{:>7}: train {:.3} test {:.3}", r.value, r.train, r.test);
    })?;
    println!("\n{}", ablation_table(Axis::Aggregation, &rows));
    Ok(())
}
