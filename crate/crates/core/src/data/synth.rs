use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_ball, Point3, PointCloud};
use crate::model::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    /// Uniform on the unit sphere.
    Sphere,
    /// Uniform on the surface of `[-1, 1]^3`.
    Cube,
    /// Uniform on a unit disc with a random orientation.
    Plane,
    /// Upper unit hemisphere (part 0) closed by the unit disc at `z = 0`
    /// (part 1). Half the points, rounded up, go to the hemisphere.
    Composite,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Plane => "plane",
            ShapeKind::Composite => "composite",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// One class per kind; `[Composite]` alone produces a segmentation set.
    pub kinds: Vec<ShapeKind>,
    pub points: usize,
    /// Standard deviation of the Gaussian noise added to each coordinate.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn classification(points: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kinds: vec![ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Plane],
            points,
            noise,
            seed,
        }
    }

    pub fn segmentation(points: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kinds: vec![ShapeKind::Composite],
            points,
            noise,
            seed,
        }
    }

    pub fn task(&self) -> Task {
        if self.kinds == [ShapeKind::Composite] {
            Task::Segmentation
        } else {
            Task::Classification
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 8 {
            return Err(Error::Config(format!(
                "synthetic clouds need at least 8 points, got {}",
                self.points
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no shape kinds given".into()));
        }
        if self.kinds.len() > 1 && self.kinds.contains(&ShapeKind::Composite) {
            return Err(Error::Config(
                "the composite shape cannot be mixed with classification shapes".into(),
            ));
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return Err(Error::Config(format!("shape {} listed twice", k.name())));
            }
        }
        Ok(())
    }
}

fn unit_vector<R: Rng>(rng: &mut R) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn disc_point<R: Rng>(rng: &mut R) -> (f64, f64) {
    let r = rng.gen::<f64>().sqrt();
    let a = rng.gen::<f64>() * std::f64::consts::TAU;
    (r * a.cos(), r * a.sin())
}

/// Samples one raw (un-normalized) shape. The composite shape carries
/// part labels.
pub fn sample_shape<R: Rng>(
    kind: ShapeKind,
    points: usize,
    noise: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    let mut pts: Vec<Point3> = Vec::with_capacity(points);
    let mut labels = Vec::new();
    match kind {
        ShapeKind::Sphere => {
            for _ in 0..points {
                pts.push(unit_vector(rng));
            }
        }
        ShapeKind::Cube => {
            for _ in 0..points {
                let face = rng.gen_range(0..6);
                let axis = face / 2;
                let mut p = [0.0; 3];
                for (a, v) in p.iter_mut().enumerate() {
                    *v = if a == axis {
                        if face % 2 == 0 { -1.0 } else { 1.0 }
                    } else {
                        rng.gen_range(-1.0..=1.0)
                    };
                }
                pts.push(p);
            }
        }
        ShapeKind::Plane => {
            let n = unit_vector(rng);
            // any vector not parallel to n seeds the in-plane basis
            let seed = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let u = normalize(cross(n, seed));
            let v = cross(n, u);
            for _ in 0..points {
                let (a, b) = disc_point(rng);
                pts.push([
                    a * u[0] + b * v[0],
                    a * u[1] + b * v[1],
                    a * u[2] + b * v[2],
                ]);
            }
        }
        ShapeKind::Composite => {
            let dome = points - points / 2;
            for i in 0..points {
                if i < dome {
                    let p = unit_vector(rng);
                    pts.push([p[0], p[1], p[2].abs()]);
                    labels.push(0);
                } else {
                    let (a, b) = disc_point(rng);
                    pts.push([a, b, 0.0]);
                    labels.push(1);
                }
            }
        }
    }
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
        for p in &mut pts {
            for v in p.iter_mut() {
                *v += dist.sample(rng);
            }
        }
    }
    if kind == ShapeKind::Composite {
        PointCloud::with_labels(pts, labels)
    } else {
        PointCloud::new(pts)
    }
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Generates `count` normalized clouds per kind, interleaved by kind.
pub fn generate_synthetic(spec: &SyntheticSpec, count: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(count * spec.kinds.len());
    for _ in 0..count {
        for (label, &kind) in spec.kinds.iter().enumerate() {
            let raw = sample_shape(kind, spec.points, spec.noise, &mut rng)?;
            samples.push(Sample {
                cloud: normalize_unit_ball(&raw),
                label,
            });
        }
    }
    let task = spec.task();
    Ok(Dataset {
        task,
        names: spec.kinds.iter().map(|k| k.name().to_string()).collect(),
        part_ranges: match task {
            Task::Segmentation => vec![0..2],
            Task::Classification => Vec::new(),
        },
        samples,
    })
}
