use rand::Rng;

use super::config::{ModelConfig, Task};
use super::layers::{head, linear, mlp};
use super::params::ModelParams;
use super::seq2seq::{aggregate_sequence, Aggregated};
use crate::autograd::{Axis, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    dist2, farthest_point_sample, group_areas, Centroids, KdTree, MultiScaleGrouping, Point3,
    PointCloud,
};

/// Interpolation distance below which a target counts as coinciding with a source.
pub const EXACT_MATCH_EPS: f64 = 1e-10;

/// Per-target `(source index, weight)` lists for inverse-square-distance
/// interpolation over the `k` nearest sources. Weights sum to 1. A target
/// closer than [`EXACT_MATCH_EPS`] to a source takes that source alone.
pub fn interpolation_weights(
    targets: &[Point3],
    sources: &[Point3],
    k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if sources.is_empty() {
        return Err(Error::Argument("interpolation needs at least one source".into()));
    }
    if k == 0 || k > sources.len() {
        return Err(Error::Argument(format!(
            "cannot interpolate from {k} of {} sources",
            sources.len()
        )));
    }
    let tree = KdTree::build(&PointCloud::new(sources.to_vec())?);
    targets
        .iter()
        .map(|&t| {
            let near = tree.nearest(t, k)?;
            let d0 = dist2(t, sources[near[0]]);
            if d0.sqrt() < EXACT_MATCH_EPS {
                return Ok(vec![(near[0], 1.0)]);
            }
            let w: Vec<f64> = near.iter().map(|&s| 1.0 / dist2(t, sources[s])).collect();
            let total: f64 = w.iter().sum();
            Ok(near.into_iter().zip(w).map(|(s, w)| (s, w / total)).collect())
        })
        .collect()
}

/// Interpolates per-source feature rows onto `targets`.
pub fn interpolate_features(
    targets: &[Point3],
    sources: &[Point3],
    features: &Tensor,
    k: usize,
) -> Result<Tensor> {
    if features.rows() != sources.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} sources",
            features.rows(),
            sources.len()
        )));
    }
    let weights = interpolation_weights(targets, sources, k)?;
    let mut out = Tensor::zeros(targets.len(), features.cols());
    for (i, terms) in weights.iter().enumerate() {
        let row = out.row_mut(i);
        for &(s, w) in terms {
            for (o, f) in row.iter_mut().zip(features.row(s)) {
                *o += w * f;
            }
        }
    }
    Ok(out)
}

/// A cloud with its parameter-independent geometry precomputed: centroids,
/// multi-scale areas in centroid-relative coordinates, and (for
/// segmentation) the centroid-to-point interpolation weights.
#[derive(Clone, Debug)]
pub struct PreparedCloud {
    pub cloud: PointCloud,
    pub centroids: Centroids,
    pub grouping: MultiScaleGrouping,
    /// Relative coordinates of area `(t, j)` flattened in `t`, `j`, point order.
    relative: Vec<Vec<Point3>>,
    interp: Option<Vec<Vec<(usize, f64)>>>,
}

impl PreparedCloud {
    pub fn new(cloud: &PointCloud, config: &ModelConfig) -> Result<Self> {
        let n = cloud.len();
        if config.centroids > n {
            return Err(Error::Argument(format!(
                "{} centroids requested from a {n}-point cloud",
                config.centroids
            )));
        }
        let centroids = farthest_point_sample(cloud, config.centroids)?;
        let grouping = group_areas(cloud, &centroids, &config.scales)?;
        let t_count = config.num_scales();
        let mut relative = Vec::with_capacity(t_count);
        for t in 0..t_count {
            let mut rows = Vec::with_capacity(config.centroids * config.scales.sizes()[t]);
            for j in 0..config.centroids {
                rows.extend(grouping.relative_area(cloud, &centroids, j, t));
            }
            relative.push(rows);
        }
        let interp = match config.task {
            Task::Segmentation => Some(interpolation_weights(
                cloud.points(),
                &centroids.coordinates,
                config.interp_k,
            )?),
            Task::Classification => None,
        };
        Ok(PreparedCloud {
            cloud: cloud.clone(),
            centroids,
            grouping,
            relative,
            interp,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// Handles to the intermediate activations of a batched forward pass.
///
/// Region rows are ordered cloud-major (`b * M + j`). Area rows in
/// `pooled` and `sequence` are ordered scale-major (`t * B * M + b * M + j`).
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Max-pooled area features before centroid concatenation.
    pub pooled: Var,
    /// Area features after combining with centroid coordinates (`S_j` rows).
    pub sequence: Var,
    pub aggregated: Aggregated,
    /// `r_j` for every region.
    pub regions: Var,
    /// One global feature row per cloud.
    pub global: Var,
    /// `B x C` for classification, `(B * N) x P` for segmentation.
    pub logits: Var,
}

fn points_tensor(points: &[Point3]) -> Tensor {
    Tensor::from_vec(points.len(), 3, points.iter().flat_map(|p| *p).collect()).expect("shape")
}

/// Area features for every `(t, b, j)`: shared MLP, max pool, then centroid
/// concatenation and a linear map back to `D`. Returns `(pooled, sequence)`.
pub fn area_features(
    g: &mut Graph,
    p: &ParamStore,
    config: &ModelConfig,
    batch: &[&PreparedCloud],
    bn_momentum: f64,
) -> Result<(Var, Var)> {
    let m = config.centroids;
    let mut rows: Vec<Point3> = Vec::new();
    let mut segments = Vec::new();
    let mut centroid_rows: Vec<Point3> = Vec::new();
    for (t, &k) in config.scales.sizes().iter().enumerate() {
        for pc in batch {
            if pc.relative.len() != config.num_scales() || pc.centroids.len() != m {
                return Err(Error::Contract(
                    "cloud was prepared for a different configuration".into(),
                ));
            }
            for j in 0..m {
                segments.push((rows.len(), k));
                rows.extend_from_slice(&pc.relative[t][j * k..(j + 1) * k]);
                centroid_rows.push(pc.centroids.coordinates[j]);
            }
        }
    }
    let x = g.constant(points_tensor(&rows));
    let h = mlp(g, p, "area", config.area_mlp.len() + 1, bn_momentum, x)?;
    let pooled = g.segment_max(h, &segments)?;
    let cents = g.constant(points_tensor(&centroid_rows));
    let joined = g.concat(&[pooled, cents], Axis::Cols)?;
    let sequence = linear(g, p, "area.combine", joined)?;
    Ok((pooled, sequence))
}

/// Area feature of a single area given in centroid-relative coordinates.
pub fn area_feature(
    g: &mut Graph,
    p: &ParamStore,
    config: &ModelConfig,
    relative: &[Point3],
    centroid: Point3,
    bn_momentum: f64,
) -> Result<(Var, Var)> {
    if relative.is_empty() {
        return Err(Error::Contract("area feature of an empty area".into()));
    }
    let x = g.constant(points_tensor(relative));
    let h = mlp(g, p, "area", config.area_mlp.len() + 1, bn_momentum, x)?;
    let (pooled, _) = g.max_reduce(h)?;
    let c = g.constant(points_tensor(&[centroid]));
    let joined = g.concat(&[pooled, c], Axis::Cols)?;
    let s = linear(g, p, "area.combine", joined)?;
    Ok((pooled, s))
}

/// Global feature per cloud: each `[r_j; p'_j]` through the shared MLP, then
/// a max over the `regions_per_cloud` rows of each cloud.
pub fn aggregate_global(
    g: &mut Graph,
    p: &ParamStore,
    config: &ModelConfig,
    regions: Var,
    centroid_coords: Var,
    regions_per_cloud: usize,
    bn_momentum: f64,
) -> Result<Var> {
    let rows = g.shape(regions).0;
    if regions_per_cloud == 0 || !rows.is_multiple_of(regions_per_cloud) {
        return Err(Error::Dimension(format!(
            "{rows} region rows do not split into clouds of {regions_per_cloud}"
        )));
    }
    let joined = g.concat(&[regions, centroid_coords], Axis::Cols)?;
    let h = mlp(g, p, "global", config.global_mlp.len() + 1, bn_momentum, joined)?;
    let segments: Vec<(usize, usize)> = (0..rows / regions_per_cloud)
        .map(|b| (b * regions_per_cloud, regions_per_cloud))
        .collect();
    g.segment_max(h, &segments)
}

/// Records the full network for a batch of prepared clouds on `g`.
pub fn forward<R: Rng>(
    g: &mut Graph,
    params: &ModelParams,
    batch: &[&PreparedCloud],
    bn_momentum: f64,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let config = &params.config;
    let p = &params.store;
    if batch.is_empty() {
        return Err(Error::Contract("forward pass over an empty batch".into()));
    }
    let m = config.centroids;
    let bm = batch.len() * m;

    let (pooled, sequence) = area_features(g, p, config, batch, bn_momentum)?;
    let steps = (0..config.num_scales())
        .map(|t| g.slice(sequence, Axis::Rows, t * bm, bm))
        .collect::<Result<Vec<_>>>()?;
    let aggregated = aggregate_sequence(g, p, config, &steps)?;
    let regions = aggregated.feature;

    let cent: Vec<Point3> = batch
        .iter()
        .flat_map(|pc| pc.centroids.coordinates.iter().copied())
        .collect();
    let cent = g.constant(points_tensor(&cent));
    let global = aggregate_global(g, p, config, regions, cent, m, bn_momentum)?;

    let logits = match config.task {
        Task::Classification => head(
            g,
            p,
            "cls",
            config.classifier.len(),
            config.dropout,
            bn_momentum,
            rng,
            global,
        )?,
        Task::Segmentation => segment_head(g, params, batch, regions, global, bn_momentum, rng)?,
    };
    Ok(ForwardOutput {
        pooled,
        sequence,
        aggregated,
        regions,
        global,
        logits,
    })
}

/// Two propagation levels: global feature to regions, then regions to
/// points by interpolation, each followed by a shared MLP, then the
/// per-point classifier.
fn segment_head<R: Rng>(
    g: &mut Graph,
    params: &ModelParams,
    batch: &[&PreparedCloud],
    regions: Var,
    global: Var,
    bn_momentum: f64,
    rng: &mut R,
) -> Result<Var> {
    let config = &params.config;
    let p = &params.store;
    let m = config.centroids;

    let owner: Vec<usize> = (0..batch.len() * m).map(|r| r / m).collect();
    let spread = g.gather_rows(global, &owner)?;
    let joined = g.concat(&[spread, regions], Axis::Cols)?;
    let level1 = mlp(g, p, "seg.prop1", config.seg_region_mlp.len(), bn_momentum, joined)?;

    let mut weights = Vec::new();
    let mut all_points = Vec::new();
    for (b, pc) in batch.iter().enumerate() {
        let interp = pc.interp.as_ref().ok_or_else(|| {
            Error::Contract("cloud was prepared without interpolation weights".into())
        })?;
        weights.extend(
            interp
                .iter()
                .map(|terms| terms.iter().map(|&(s, w)| (b * m + s, w)).collect()),
        );
        all_points.extend_from_slice(pc.cloud.points());
    }
    let upsampled = g.row_combine(level1, weights)?;

    let x = g.constant(points_tensor(&all_points));
    let z = linear(g, p, "area.fc0", x)?;
    let skip = g.relu(z);
    let joined = g.concat(&[upsampled, skip], Axis::Cols)?;
    let level0 = mlp(g, p, "seg.prop2", config.seg_point_mlp.len(), bn_momentum, joined)?;
    head(
        g,
        p,
        "seg.head",
        config.seg_head.len(),
        config.dropout,
        bn_momentum,
        rng,
        level0,
    )
}

/// Evaluation-mode forward pass over one cloud; returns its logits
/// (`1 x C` or `N x P`).
pub fn predict(params: &ModelParams, cloud: &PreparedCloud) -> Result<Tensor> {
    let mut g = Graph::new(false);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = forward(&mut g, params, &[cloud], 0.0, &mut rng)?;
    Ok(g.value(out.logits).clone())
}

/// Classification logits for a raw (already normalized) cloud.
pub fn classify_forward(params: &ModelParams, cloud: &PointCloud) -> Result<Vec<f64>> {
    if params.config.task != Task::Classification {
        return Err(Error::Config("model was built for segmentation".into()));
    }
    let prepared = PreparedCloud::new(cloud, &params.config)?;
    Ok(predict(params, &prepared)?.into_vec())
}

/// Per-point part logits (`N x P`) for a raw (already normalized) cloud.
pub fn segment_forward(params: &ModelParams, cloud: &PointCloud) -> Result<Tensor> {
    if params.config.task != Task::Segmentation {
        return Err(Error::Config("model was built for classification".into()));
    }
    let prepared = PreparedCloud::new(cloud, &params.config)?;
    predict(params, &prepared)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coincident_target_takes_source_feature() {
        let sources = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let f = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let out = interpolate_features(&[[1.0, 0.0, 0.0]], &sources, &f, 3).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn equidistant_sources_average() {
        let sources = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]];
        let f = Tensor::from_rows(&[[3.0], [6.0], [9.0], [100.0]]);
        let out = interpolate_features(&[[0.0; 3]], &sources, &f, 3).unwrap();
        assert!((out.data()[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn weights_by_inverse_square_distance() {
        // distances 1 and 2, features 0 and 3: (1*0 + 0.25*3) / 1.25
        let sources = [[1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]];
        let f = Tensor::from_rows(&[[0.0], [3.0]]);
        let out = interpolate_features(&[[0.0; 3]], &sources, &f, 2).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn too_many_neighbors() {
        let sources = [[1.0, 0.0, 0.0]];
        let f = Tensor::from_rows(&[[0.0]]);
        assert!(matches!(
            interpolate_features(&[[0.0; 3]], &sources, &f, 2),
            Err(Error::Argument(_))
        ));
        assert!(interpolation_weights(&[[0.0; 3]], &[], 1).is_err());
    }
}
