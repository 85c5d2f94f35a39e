use std::cmp::Ordering;

use super::{dist2, lex_cmp, Point3, PointCloud};
use crate::error::{Error, Result};

/// Centroids chosen by farthest point sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    pub indices: Vec<usize>,
    pub coordinates: Vec<Point3>,
    /// Distance from each pick to the set selected before it. The first
    /// entry is the start point's distance to the cloud mean.
    pub gains: Vec<f64>,
}

impl Centroids {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Orders candidates: larger score first, then lexicographically smaller
/// coordinates, then lower index.
fn better(cloud: &PointCloud, a: (usize, f64), b: (usize, f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match lex_cmp(&cloud.point(a.0), &cloud.point(b.0)) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a.0 < b.0,
        },
    }
}

fn start_point(cloud: &PointCloud) -> (usize, f64) {
    let mean = cloud.mean();
    let mut best = (0, dist2(cloud.point(0), mean));
    for i in 1..cloud.len() {
        let cand = (i, dist2(cloud.point(i), mean));
        if better(cloud, cand, best) {
            best = cand;
        }
    }
    best
}

/// Selects `m` centroids, starting at the point farthest from the mean and
/// then repeatedly taking the point farthest from everything chosen so far.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Result<Centroids> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!(
            "cannot sample {m} centroids from {n} points"
        )));
    }
    let (start, d0) = start_point(cloud);
    let mut indices = Vec::with_capacity(m);
    let mut gains = Vec::with_capacity(m);
    indices.push(start);
    gains.push(d0.sqrt());

    let mut nearest: Vec<f64> = cloud
        .points()
        .iter()
        .map(|&p| dist2(p, cloud.point(start)))
        .collect();
    let mut taken = vec![false; n];
    taken[start] = true;

    while indices.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            let cand = (i, nearest[i]);
            if best.is_none_or(|b| better(cloud, cand, b)) {
                best = Some(cand);
            }
        }
        let (pick, d) = best.expect("m <= n leaves a candidate");
        taken[pick] = true;
        indices.push(pick);
        gains.push(d.sqrt());
        let pp = cloud.point(pick);
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = dist2(cloud.point(i), pp);
            if d < *slot {
                *slot = d;
            }
        }
    }

    let coordinates = indices.iter().map(|&i| cloud.point(i)).collect();
    Ok(Centroids {
        indices,
        coordinates,
        gains,
    })
}

/// Exhaustive greedy selection: recomputes every candidate's distance to
/// the whole selected set at each step. Test oracle for
/// [`farthest_point_sample`].
pub fn brute_force_fps(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Argument(format!(
            "cannot sample {m} centroids from {n} points"
        )));
    }
    let mut chosen = vec![start_point(cloud).0];
    while chosen.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let score = chosen
                .iter()
                .map(|&c| dist2(cloud.point(i), cloud.point(c)))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|b| better(cloud, (i, score), b)) {
                best = Some((i, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> PointCloud {
        PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn square_second_pick_is_opposite_corner() {
        let c = farthest_point_sample(&square(), 2).unwrap();
        assert_eq!(c.coordinates[0], [0.0, 0.0, 0.0]);
        assert_eq!(c.coordinates[1], [1.0, 1.0, 0.0]);
        assert_eq!(c.indices, brute_force_fps(&square(), 2).unwrap());
    }

    #[test]
    fn exhaustion_selects_every_point() {
        let c = farthest_point_sample(&square(), 4).unwrap();
        let mut idx = c.indices.clone();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_centroid_is_start_point() {
        let cloud =
            PointCloud::new(vec![[0.1, 0.0, 0.0], [-0.2, 0.0, 0.0], [3.0, 1.0, 0.0]]).unwrap();
        let c = farthest_point_sample(&cloud, 1).unwrap();
        assert_eq!(c.indices, vec![2]);
    }

    #[test]
    fn too_many_centroids() {
        assert!(matches!(
            farthest_point_sample(&square(), 5),
            Err(Error::Argument(_))
        ));
        assert!(farthest_point_sample(&square(), 0).is_err());
    }

    #[test]
    fn duplicate_points_are_distinct_picks() {
        let cloud = PointCloud::new(vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let c = farthest_point_sample(&cloud, 3).unwrap();
        assert_eq!(c.indices, vec![2, 0, 1]);
        assert_eq!(c.gains[2], 0.0);
    }
}
