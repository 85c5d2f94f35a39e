//! Generates the synthetic classification and part-segmentation sets,
//! writes them as point files with a manifest and reads them back.

use pointseq::data::{generate_synthetic, load_manifest, write_manifest, Split, SyntheticSpec};

fn main() -> pointseq::Result<()> {
    let root = std::env::temp_dir().join("pointseq-synthetic-example");
    for spec in [
        SyntheticSpec::classification(128, 0.01, 5),
        SyntheticSpec::segmentation(128, 0.01, 5),
    ] {
        let train = generate_synthetic(&spec, 4)?;
        let test = generate_synthetic(&SyntheticSpec { seed: 6, ..spec.clone() }, 2)?;
        let dir = root.join(format!("{:?}", spec.task()).to_lowercase());
        let manifest = write_manifest(&dir, &[(Split::Train, &train), (Split::Test, &test)])?;
        let back = load_manifest(&manifest)?;
        println!("{}", manifest.display());
        println!(
            "  {:?}: labels {:?}, {} train / {} test clouds, counts {:?}",
            back.task(),
            back.train.names,
            back.train.len(),
            back.test.len(),
            back.train.label_counts()
        );
        if let Some(parts) = back.train.samples[0].cloud.labels() {
            let upper = parts.iter().filter(|&&p| p == 0).count();
            println!("  first shape: {upper} hemisphere points, {} disc points", parts.len() - upper);
        }
    }
    Ok(())
}
