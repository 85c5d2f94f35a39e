//! Saves freshly initialized parameters, loads them back and confirms the
//! bytes and predictions are identical.

use pointseq::data::{sample_shape, ShapeKind};
use pointseq::geometry::normalize_unit_ball;
use pointseq::model::{classify_forward, load_checkpoint, save_checkpoint, write_checkpoint};
use pointseq::model::{ModelConfig, ModelParams, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pointseq::Result<()> {
    let config = ModelConfig {
        centroids: 8,
        ..ModelConfig::tiny(Task::Classification)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParams::init(&config, &mut rng)?;

    let dir = std::env::temp_dir().join("pointseq-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| pointseq::Error::Data(e.to_string()))?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&params, &path)?;
    let loaded = load_checkpoint(&path)?;

    let bytes = write_checkpoint(&params);
    println!("{} tensors, {} bytes", params.store.len(), bytes.len());
    println!("bit-identical: {}", write_checkpoint(&loaded) == bytes);

    let cloud = normalize_unit_ball(&sample_shape(ShapeKind::Sphere, 32, 0.01, &mut rng)?);
    let a = classify_forward(&params, &cloud)?;
    let b = classify_forward(&loaded, &cloud)?;
    println!("logits {a:.4?}\nsame predictions: {}", a == b);
    Ok(())
}
