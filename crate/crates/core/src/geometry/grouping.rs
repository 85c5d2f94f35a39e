use serde::{Deserialize, Serialize};

use super::{brute_force_knn, to_relative, Centroids, KdTree, Point3, PointCloud};
use crate::error::{Error, Result};

/// Area sizes `[K_1, ..., K_T]`, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ScaleSpec(Vec<usize>);

impl ScaleSpec {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("at least one area scale is required".into()));
        }
        if sizes[0] == 0 {
            return Err(Error::Config("area scales must be positive".into()));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "area scales must be strictly increasing, got {sizes:?}"
            )));
        }
        Ok(ScaleSpec(sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    /// Number of scales `T`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    /// Sum of all area sizes.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Keeps the `t` largest scales.
    pub fn keep_largest(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.0.len() {
            return Err(Error::Config(format!(
                "cannot keep {t} of {} scales",
                self.0.len()
            )));
        }
        Ok(ScaleSpec(self.0[self.0.len() - t..].to_vec()))
    }
}

impl TryFrom<Vec<usize>> for ScaleSpec {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        ScaleSpec::new(v)
    }
}

impl From<ScaleSpec> for Vec<usize> {
    fn from(s: ScaleSpec) -> Self {
        s.0
    }
}

/// For each region, its `K_T` nearest neighbors sorted by distance. The
/// area at scale `t` is the first `K_t` entries, so areas are nested.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleGrouping {
    scales: ScaleSpec,
    neighbors: Vec<Vec<usize>>,
}

impl MultiScaleGrouping {
    pub fn scales(&self) -> &ScaleSpec {
        &self.scales
    }

    pub fn num_regions(&self) -> usize {
        self.neighbors.len()
    }

    /// Point indices of area `t` (0-based) of region `j`.
    pub fn area(&self, j: usize, t: usize) -> &[usize] {
        &self.neighbors[j][..self.scales.sizes()[t]]
    }

    /// Coordinates of area `(j, t)` relative to the region centroid.
    pub fn relative_area(
        &self,
        cloud: &PointCloud,
        centroids: &Centroids,
        j: usize,
        t: usize,
    ) -> Vec<Point3> {
        let pts: Vec<Point3> = self.area(j, t).iter().map(|&i| cloud.point(i)).collect();
        to_relative(&pts, centroids.coordinates[j])
    }
}

fn check(cloud: &PointCloud, scales: &ScaleSpec) -> Result<()> {
    if scales.largest() > cloud.len() {
        return Err(Error::Argument(format!(
            "largest area ({}) exceeds the cloud size ({})",
            scales.largest(),
            cloud.len()
        )));
    }
    Ok(())
}

/// Builds the multi-scale areas of every centroid with one kNN query each.
pub fn group_areas(
    cloud: &PointCloud,
    centroids: &Centroids,
    scales: &ScaleSpec,
) -> Result<MultiScaleGrouping> {
    check(cloud, scales)?;
    let tree = KdTree::build(cloud);
    let neighbors = centroids
        .coordinates
        .iter()
        .map(|&c| tree.nearest(c, scales.largest()))
        .collect::<Result<_>>()?;
    Ok(MultiScaleGrouping {
        scales: scales.clone(),
        neighbors,
    })
}

/// Reference grouping: an independent full sort per region and per scale.
pub fn brute_force_grouping(
    cloud: &PointCloud,
    centroids: &Centroids,
    scales: &ScaleSpec,
) -> Result<Vec<Vec<Vec<usize>>>> {
    check(cloud, scales)?;
    centroids
        .coordinates
        .iter()
        .map(|&c| {
            scales
                .sizes()
                .iter()
                .map(|&k| brute_force_knn(cloud, c, k))
                .collect()
        })
        .collect()
}
