//! Farthest point sampling, kd-tree neighbors and nested multi-scale
//! areas on one synthetic cloud, checked against the brute-force versions.

use pointseq::data::{sample_shape, ShapeKind};
use pointseq::geometry::{
    brute_force_fps, brute_force_knn, farthest_point_sample, group_areas, knn_search,
    normalize_unit_ball, PointCloud, ScaleSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pointseq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raw = sample_shape(ShapeKind::Cube, 256, 0.01, &mut rng)?;
    let cloud = normalize_unit_ball(&raw);
    println!("{} points, max norm {:.3}", cloud.len(), cloud.max_norm());

    let centroids = farthest_point_sample(&cloud, 16)?;
    assert_eq!(centroids.indices, brute_force_fps(&cloud, 16)?);
    println!("centroid  index  gain");
    for (j, (&i, g)) in centroids.indices.iter().zip(&centroids.gains).enumerate() {
        println!("{j:8} {i:6}  {g:.4}");
    }

    let q = centroids.coordinates[3];
    let near = knn_search(&cloud, q, 8)?;
    assert_eq!(near, brute_force_knn(&cloud, q, 8)?);
    println!("8 nearest to centroid 3: {near:?}");

    let scales = ScaleSpec::new(vec![8, 16, 32])?;
    let grouping = group_areas(&cloud, &centroids, &scales)?;
    for t in 0..scales.len() {
        let area = grouping.area(3, t);
        let rel = grouping.relative_area(&cloud, &centroids, 3, t);
        let radius = PointCloud::new(rel)?.max_norm();
        println!("scale {t}: K={:3} radius {radius:.3} first {:?}", area.len(), &area[..4]);
    }
    Ok(())
}
