//! Deterministic point-set operations.
//!
//! Every tie in this module (farthest-point selection, nearest-neighbor
//! ordering, the sampling start point) is broken by comparing coordinates
//! lexicographically and only then by index. Results therefore depend on
//! the content of a cloud and not on the order its points are stored in.

mod fps;
mod grouping;
mod kdtree;

use std::cmp::Ordering;

pub use fps::{brute_force_fps, farthest_point_sample, Centroids};
pub use grouping::{brute_force_grouping, group_areas, MultiScaleGrouping, ScaleSpec};
pub use kdtree::{brute_force_knn, knn_search, KdTree};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// An ordered list of 3D points with optional per-point part labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Data("a point cloud needs at least one point".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Data(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            labels: None,
        })
    }

    pub fn with_labels(points: Vec<Point3>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != points.len() {
            return Err(Error::Data(format!(
                "{} labels for {} points",
                labels.len(),
                points.len()
            )));
        }
        let mut cloud = Self::new(points)?;
        cloud.labels = Some(labels);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Reorders points (and labels) so that new position `i` holds old
    /// point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> PointCloud {
        PointCloud {
            points: order.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| order.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn translated(&self, v: Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| add(*p, v)).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Content-deterministic mean: each axis is summed in sorted order so
    /// the result does not depend on point order.
    pub fn mean(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut m = [0.0; 3];
        let mut axis: Vec<f64> = Vec::with_capacity(self.points.len());
        for (a, slot) in m.iter_mut().enumerate() {
            axis.clear();
            axis.extend(self.points.iter().map(|p| p[a]));
            axis.sort_by(f64::total_cmp);
            *slot = axis.iter().sum::<f64>() / n;
        }
        m
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| norm(*p)).fold(0.0, f64::max)
    }
}

/// Translates the mean to the origin and scales so the farthest point has
/// norm 1. A cloud of identical points maps to all zeros.
pub fn normalize_unit_ball(cloud: &PointCloud) -> PointCloud {
    let mean = cloud.mean();
    let centered: Vec<Point3> = cloud.points.iter().map(|p| sub(*p, mean)).collect();
    let radius = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let points = if radius > 0.0 {
        centered
            .iter()
            .map(|p| [p[0] / radius, p[1] / radius, p[2] / radius])
            .collect()
    } else {
        vec![[0.0; 3]; centered.len()]
    };
    PointCloud {
        points,
        labels: cloud.labels.clone(),
    }
}

/// Expresses points relative to `centroid`.
pub fn to_relative(points: &[Point3], centroid: Point3) -> Vec<Point3> {
    points.iter().map(|p| sub(*p, centroid)).collect()
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
pub fn norm(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Lexicographic order on coordinates.
#[inline]
pub fn lex_cmp(a: &Point3, b: &Point3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let n = normalize_unit_ball(&c);
        assert_eq!(n.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_single_point() {
        let c = PointCloud::new(vec![[3.5, -2.0, 9.0]]).unwrap();
        assert_eq!(normalize_unit_ball(&c).points(), &[[0.0; 3]]);
        let dup = PointCloud::new(vec![[1.0, 1.0, 1.0]; 4]).unwrap();
        assert_eq!(normalize_unit_ball(&dup).points(), &[[0.0; 3]; 4]);
    }

    #[test]
    fn normalize_fixed_point() {
        let s = 1.0 / 3f64.sqrt();
        let pts = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, -0.5, 0.0],
            [s, s, s],
            [-s, -s, -s],
        ];
        let c = PointCloud::new(pts.clone()).unwrap();
        let n = normalize_unit_ball(&c);
        for (a, b) in n.points().iter().zip(&pts) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::with_labels(vec![[0.0; 3]], vec![0, 1]).is_err());
    }

    #[test]
    fn relative_coordinates() {
        assert_eq!(to_relative(&[[1.0, 2.0, 3.0]], [1.0, 0.0, 0.0]), vec![[0.0, 2.0, 3.0]]);
        assert_eq!(to_relative(&[[0.3, 0.1, -2.0]], [0.3, 0.1, -2.0]), vec![[0.0; 3]]);
    }

    #[test]
    fn mean_is_order_independent() {
        let pts: Vec<Point3> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.37;
                [t.sin() * 1e3, t.cos() * 1e-3, (t * 7.0).sin()]
            })
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let order: Vec<usize> = (0..50).rev().collect();
        assert_eq!(c.mean(), c.permuted(&order).mean());
    }
}
