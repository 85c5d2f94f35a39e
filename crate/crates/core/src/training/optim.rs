use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Lowest learning rate the step schedule decays to.
pub const LR_FLOOR: f64 = 1e-5;
/// Lowest batch-norm momentum the step schedule decays to.
pub const BN_MOMENTUM_FLOOR: f64 = 0.01;

/// Optimization settings. Model shape lives in [`crate::model::ModelConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Learning-rate multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    /// Initial batch-norm momentum (weight of the batch statistic).
    pub bn_momentum: f64,
    /// Batch-norm momentum multiplier applied every `decay_every` epochs.
    pub bn_decay: f64,
    pub decay_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            lr_decay: 0.3,
            bn_momentum: 0.5,
            bn_decay: 0.5,
            decay_every: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("bn_momentum", self.bn_momentum),
            ("bn_decay", self.bn_decay),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("train.{name} must be positive, got {v}")));
            }
        }
        if self.lr_decay > 1.0 || self.bn_decay > 1.0 || self.bn_momentum > 1.0 {
            return Err(Error::Config(
                "train.lr_decay, train.bn_decay and train.bn_momentum must not exceed 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("train.decay_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Learning rate and batch-norm momentum in effect for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub lr: f64,
    pub bn_momentum: f64,
}

/// Step schedules for a zero-based `epoch`: every `decay_every` epochs the
/// learning rate is multiplied by `lr_decay` and the batch-norm momentum by
/// `bn_decay`, each clamped at its floor.
pub fn apply_schedules(config: &TrainConfig, epoch: usize) -> Rates {
    let mut r = Rates {
        lr: config.lr,
        bn_momentum: config.bn_momentum,
    };
    for _ in 0..epoch / config.decay_every {
        r.lr = (r.lr * config.lr_decay).max(LR_FLOOR.min(r.lr));
        r.bn_momentum = (r.bn_momentum * config.bn_decay).max(BN_MOMENTUM_FLOOR.min(r.bn_momentum));
    }
    r
}

/// Adam moments for every tensor of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        OptimizerState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, index: usize) -> &Tensor {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor {
        &self.v[index]
    }
}

/// One bias-corrected Adam update of every trainable tensor from the
/// gradients accumulated in `store`.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    for (i, p) in store.iter_mut().enumerate() {
        if state.m[i].shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            return Err(Error::Contract(format!(
                "{}: missing or misshapen gradient or moment",
                p.name
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        for (k, w) in p.value.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::row_vector(values)).unwrap();
        s.get_mut(id).grad = Tensor::row_vector(grads);
        s.add_buffer("buf", Tensor::row_vector(&[5.0])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = store(&[1.0, -2.0], &[0.0, 0.0]);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, 0.1).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let g = [0.5, -3.0, 1e-3];
        let mut s = store(&[0.0; 3], &g);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, 0.01).unwrap();
        for (w, g) in s.by_name("w").unwrap().value.data().iter().zip(g) {
            // closed form: -lr * g / (|g| + eps)
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-15, "{w} vs {expect}");
        }
        assert_eq!(s.by_name("buf").unwrap().value.data(), &[5.0]);
    }

    #[test]
    fn second_identical_step_is_no_larger() {
        let mut s = store(&[0.0], &[0.7]);
        let mut st = OptimizerState::new(&s);
        adam_step(&mut s, &mut st, 0.01).unwrap();
        let first = s.by_name("w").unwrap().value.data()[0];
        adam_step(&mut s, &mut st, 0.01).unwrap();
        let second = s.by_name("w").unwrap().value.data()[0] - first;
        assert!(second.abs() <= first.abs() + 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_exact_identity() {
        let vals = [0.1, -7.25, 3e-9];
        let mut s = store(&vals, &[1.0, 2.0, -3.0]);
        let mut st = OptimizerState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 0.0).unwrap();
        }
        assert_eq!(s.by_name("w").unwrap().value.data(), &vals);
    }

    #[test]
    fn mismatched_state_is_a_contract_error() {
        let mut s = store(&[0.0], &[1.0]);
        let mut st = OptimizerState::new(&ParamStore::new());
        assert!(matches!(adam_step(&mut s, &mut st, 0.1), Err(Error::Contract(_))));
        let mut s = store(&[0.0, 1.0], &[1.0]);
        let mut st = OptimizerState::new(&s);
        assert!(matches!(adam_step(&mut s, &mut st, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn schedule_steps() {
        let c = TrainConfig::default();
        assert_eq!(apply_schedules(&c, 0), Rates { lr: 0.001, bn_momentum: 0.5 });
        assert_eq!(apply_schedules(&c, 19), apply_schedules(&c, 0));
        let r = apply_schedules(&c, 20);
        assert!((r.lr - 0.0003).abs() < 1e-18);
        assert_eq!(r.bn_momentum, 0.25);
        assert!((apply_schedules(&c, 40).lr - 0.00009).abs() < 1e-18);
        let late = apply_schedules(&c, 1000);
        assert_eq!((late.lr, late.bn_momentum), (LR_FLOOR, BN_MOMENTUM_FLOOR));
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { bn_decay: -0.5, ..Default::default() },
            TrainConfig { decay_every: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
