use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trainer::cross_entropy_loss;
use crate::autograd::{Graph, ParamStore, Var};
use crate::data::{generate_synthetic, SyntheticSpec};
use crate::error::Result;
use crate::model::{forward, ModelConfig, ModelParams, PreparedCloud, Task};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Coordinates compared per tensor; smaller tensors are checked fully.
    pub samples_per_tensor: usize,
    /// Central-difference step.
    pub step: f64,
    /// Seeds parameter init, the probe clouds, coordinate sampling and the
    /// dropout mask (which is held fixed across evaluations).
    pub seed: u64,
    /// Points per probe cloud.
    pub points: usize,
    /// Probe clouds per batch.
    pub clouds: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            samples_per_tensor: 20,
            step: 1e-5,
            seed: 0,
            points: 16,
            clouds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    /// Largest `|a - n| / max(|a|, |n|, 1e-6)` over the checked coordinates.
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_error < self.tolerance)
    }

    pub fn table(&self) -> String {
        let w = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:<w$} {:>6} {:>12}\n", "tensor", "coords", "max rel err");
        for e in &self.entries {
            let flag = if e.max_error < self.tolerance { "" } else { "  FAIL" };
            writeln!(s, "{:<w$} {:>6} {:>12.3e}{flag}", e.name, e.coordinates, e.max_error).unwrap();
        }
        s
    }
}

/// Relative error with a floor that keeps near-zero gradients from
/// dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient of `loss` with central differences for
/// every trainable tensor in `store`. `corrupt` may tamper with the
/// analytic gradients before comparison.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    options: &GradCheckOptions,
    tolerance: f64,
    mut loss: F,
    corrupt: impl FnOnce(&mut ParamStore),
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new(true);
    let l = loss(&mut g, store)?;
    g.backward(l, store)?;
    corrupt(store);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(true);
        let l = loss(&mut g, store)?;
        g.value(l).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x6772_6164);
    let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).value.len();
        let coords: Vec<usize> = if n <= options.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, options.samples_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_error = 0.0f64;
        for &k in &coords {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + options.step;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - options.step;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * options.step);
            let analytic = store.get(id).grad.data()[k];
            max_error = max_error.max(relative_error(analytic, numeric));
        }
        entries.push(TensorCheck {
            name: store.get(id).name.clone(),
            coordinates: coords.len(),
            max_error,
        });
    }
    store.zero_grad();
    Ok(GradCheckReport { entries, tolerance })
}

/// Gradient check of the full network for `config` on a batch of small
/// synthetic clouds, in training mode (batch statistics, fixed dropout mask),
/// at a randomly perturbed initialization.
pub fn gradient_check(config: &ModelConfig, tolerance: f64) -> Result<GradCheckReport> {
    gradient_check_with(config, &GradCheckOptions::default(), tolerance, |_| {})
}

pub fn gradient_check_with(
    config: &ModelConfig,
    options: &GradCheckOptions,
    tolerance: f64,
    corrupt: impl FnOnce(&mut ParamStore),
) -> Result<GradCheckReport> {
    config.validate()?;
    let spec = match config.task {
        Task::Classification => SyntheticSpec::classification(options.points, 0.05, options.seed),
        Task::Segmentation => SyntheticSpec::segmentation(options.points, 0.05, options.seed),
    };
    let per_kind = options.clouds.div_ceil(spec.kinds.len());
    let mut data = generate_synthetic(&spec, per_kind)?;
    data.samples.truncate(options.clouds);
    let prepared = data
        .samples
        .iter()
        .map(|s| PreparedCloud::new(&s.cloud, config))
        .collect::<Result<Vec<_>>>()?;
    let batch: Vec<&PreparedCloud> = prepared.iter().collect();
    let targets: Vec<usize> = match config.task {
        Task::Classification => data.samples.iter().map(|s| s.label % config.classes).collect(),
        Task::Segmentation => data
            .samples
            .iter()
            .flat_map(|s| s.cloud.labels().unwrap_or_default().to_vec())
            .collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut params = ModelParams::init(config, &mut rng)?;
    // Zero biases put each centroid's own (origin) row exactly on a ReLU
    // kink; a small offset moves the check to a differentiable point.
    for p in params.store.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let dropout_seed = options.seed.wrapping_add(1);
    let shell = ModelParams {
        config: config.clone(),
        store: ParamStore::new(),
    };
    check_gradients(
        &mut params.store,
        options,
        tolerance,
        |g, store| {
            // forward borrows a whole ModelParams; swap the store in by value
            let mut p = shell.clone();
            p.store = store.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let out = forward(g, &p, &batch, 0.5, &mut drop_rng)?;
            cross_entropy_loss(g, out.logits, &targets)
        },
        corrupt,
    )
}
