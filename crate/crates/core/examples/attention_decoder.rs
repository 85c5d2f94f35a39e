//! Runs the encoder-decoder with attention on one region's area-feature
//! sequence and prints the attention weights over scales.

use pointseq::autograd::{Graph, Tensor};
use pointseq::geometry::ScaleSpec;
use pointseq::model::{decode_region, encode_sequence, ModelConfig, ModelParams, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pointseq::Result<()> {
    let config = ModelConfig {
        scales: ScaleSpec::new(vec![16, 32, 64, 128])?,
        feature_dim: 8,
        hidden_dim: 8,
        ..ModelConfig::tiny(Task::Classification)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = ModelParams::init(&config, &mut rng)?;

    // three regions, four scales, random area features
    let mut g = Graph::new(false);
    let steps: Vec<_> = (0..config.num_scales())
        .map(|_| {
            let data = (0..3 * config.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            g.constant(Tensor::from_vec(3, config.feature_dim, data).expect("shape"))
        })
        .collect();
    let trace = encode_sequence(&mut g, &params.store, &steps)?;
    let out = decode_region(&mut g, &params.store, &trace)?;

    let alpha = g.value(out.attention);
    println!("attention over scales {:?}", config.scales.sizes());
    for r in 0..alpha.rows() {
        let row: Vec<String> = alpha.row(r).iter().map(|a| format!("{a:.4}")).collect();
        println!("region {r}: [{}]  sum {:.12}", row.join(", "), alpha.row(r).iter().sum::<f64>());
    }
    println!("region feature shape {:?}", g.shape(out.feature));
    Ok(())
}
