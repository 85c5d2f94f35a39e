//! Aggregation of a region's area-feature sequence into one vector.
//!
//! Every function works on a batch of regions at once: a `Var` holds one
//! row per region, and a sequence is a slice of such `Var`s in scale order.

use super::config::{Aggregation, ModelConfig};
use super::layers::{linear, lstm_step, project};
use crate::autograd::{Axis, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Per-step encoder state.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    /// `y_t = W_a h_t`; recorded but not consumed downstream.
    pub outputs: Vec<Var>,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn last_hidden(&self) -> Var {
        *self.hidden.last().expect("non-empty trace")
    }
}

/// Decoder result for a batch of regions.
#[derive(Clone, Debug)]
pub struct RegionFeature {
    /// `r_j = W_s h̃₁`.
    pub feature: Var,
    /// Attention weights, one row per region, `T` columns.
    pub attention: Var,
    /// Context `c = Σ_t α(t) h_t`.
    pub context: Var,
    /// Decoder hidden state `h̄₁`.
    pub decoder_hidden: Var,
    /// `ȳ₁ = W_b h̄₁`; recorded but not consumed downstream.
    pub decoder_output: Var,
}

fn zeros_like_rows(g: &mut Graph, rows: usize, cols: usize) -> Var {
    g.constant(Tensor::zeros(rows, cols))
}

/// Runs the encoder LSTM from a zero state over `steps` in order.
pub fn encode_sequence(g: &mut Graph, p: &ParamStore, steps: &[Var]) -> Result<EncoderTrace> {
    let first = *steps
        .first()
        .ok_or_else(|| Error::Contract("cannot encode an empty sequence".into()))?;
    let rows = g.shape(first).0;
    let hidden = p.by_name("encoder.lstm.weight")?.value.cols() / 4;
    let mut h = zeros_like_rows(g, rows, hidden);
    let mut c = zeros_like_rows(g, rows, hidden);
    let mut trace = EncoderTrace {
        hidden: Vec::with_capacity(steps.len()),
        cells: Vec::with_capacity(steps.len()),
        outputs: Vec::with_capacity(steps.len()),
    };
    for &x in steps {
        (h, c) = lstm_step(g, p, "encoder.lstm", h, c, x)?;
        let y = project(g, p, "encoder.wa", h)?;
        trace.hidden.push(h);
        trace.cells.push(c);
        trace.outputs.push(y);
    }
    Ok(trace)
}

/// `α = softmax_t(h̄₁ᵀ W_c h_t)`, one row per region.
pub fn attention_scores(
    g: &mut Graph,
    p: &ParamStore,
    decoder_hidden: Var,
    trace: &EncoderTrace,
) -> Result<Var> {
    if trace.is_empty() {
        return Err(Error::Contract("attention over an empty trace".into()));
    }
    let query = project(g, p, "decoder.wc", decoder_hidden)?;
    let mut scores = Vec::with_capacity(trace.len());
    for &h in &trace.hidden {
        if g.shape(h) != g.shape(query) {
            return Err(Error::Dimension(format!(
                "attention query {:?} against encoder state {:?}",
                g.shape(query),
                g.shape(h)
            )));
        }
        let prod = g.mul(query, h)?;
        scores.push(g.sum_cols(prod));
    }
    let scores = g.concat(&scores, Axis::Cols)?;
    g.softmax(scores)
}

/// `Σ_t α(t) h_t`.
pub fn context_vector(g: &mut Graph, attention: Var, trace: &EncoderTrace) -> Result<Var> {
    let mut ctx: Option<Var> = None;
    for (t, &h) in trace.hidden.iter().enumerate() {
        let a = g.slice(attention, Axis::Cols, t, 1)?;
        let term = g.mul(h, a)?;
        ctx = Some(match ctx {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    ctx.ok_or_else(|| Error::Contract("context over an empty trace".into()))
}

/// One decoding step from a zero state with `h_T` as input, followed by
/// attention over the encoder states.
pub fn decode_region(g: &mut Graph, p: &ParamStore, trace: &EncoderTrace) -> Result<RegionFeature> {
    if trace.is_empty() {
        return Err(Error::Contract("cannot decode an empty trace".into()));
    }
    let (decoder_hidden, decoder_output) = decoder_step(g, p, trace)?;
    let attention = attention_scores(g, p, decoder_hidden, trace)?;
    let context = context_vector(g, attention, trace)?;
    let joined = g.concat(&[context, decoder_hidden], Axis::Cols)?;
    let pre = project(g, p, "decoder.wd", joined)?;
    let attended = g.tanh(pre);
    let feature = project(g, p, "decoder.ws", attended)?;
    Ok(RegionFeature {
        feature,
        attention,
        context,
        decoder_hidden,
        decoder_output,
    })
}

fn decoder_step(g: &mut Graph, p: &ParamStore, trace: &EncoderTrace) -> Result<(Var, Var)> {
    let last = trace.last_hidden();
    let (rows, hidden) = g.shape(last);
    let z = zeros_like_rows(g, rows, hidden);
    let (h, _) = lstm_step(g, p, "decoder.lstm", z, z, last)?;
    let y = project(g, p, "decoder.wb", h)?;
    Ok((h, y))
}

/// Region features plus whatever intermediate state the variant produces.
#[derive(Clone, Debug)]
pub struct Aggregated {
    pub feature: Var,
    pub trace: Option<EncoderTrace>,
    pub decoded: Option<RegionFeature>,
}

/// Aggregates `steps` (one `rows x D` matrix per scale) according to the
/// configured variant.
pub fn aggregate_sequence(
    g: &mut Graph,
    p: &ParamStore,
    config: &ModelConfig,
    steps: &[Var],
) -> Result<Aggregated> {
    if steps.is_empty() {
        return Err(Error::Contract("empty area-feature sequence".into()));
    }
    let plain = |feature| Aggregated {
        feature,
        trace: None,
        decoded: None,
    };
    match config.aggregation {
        Aggregation::AttentionEd => {
            let trace = encode_sequence(g, p, steps)?;
            let decoded = decode_region(g, p, &trace)?;
            Ok(Aggregated {
                feature: decoded.feature,
                trace: Some(trace),
                decoded: Some(decoded),
            })
        }
        Aggregation::NoAttention => {
            let trace = encode_sequence(g, p, steps)?;
            let (_, y) = decoder_step(g, p, &trace)?;
            Ok(Aggregated {
                feature: y,
                trace: Some(trace),
                decoded: None,
            })
        }
        Aggregation::NoDecoder => {
            let trace = encode_sequence(g, p, steps)?;
            Ok(Aggregated {
                feature: trace.last_hidden(),
                trace: Some(trace),
                decoded: None,
            })
        }
        Aggregation::Concatenation => {
            let joined = g.concat(steps, Axis::Cols)?;
            Ok(plain(linear(g, p, "concat", joined)?))
        }
        Aggregation::MaxPooling => {
            let rows = g.shape(steps[0]).0;
            let stacked = g.concat(steps, Axis::Rows)?;
            // stacked row t*rows + i belongs to region i; regroup per region
            let t = steps.len();
            let order: Vec<usize> = (0..rows)
                .flat_map(|i| (0..t).map(move |s| s * rows + i))
                .collect();
            let grouped = g.gather_rows(stacked, &order)?;
            let segments: Vec<(usize, usize)> = (0..rows).map(|i| (i * t, t)).collect();
            Ok(plain(g.segment_max(grouped, &segments)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, Task};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(
            &ModelConfig::tiny(Task::Classification),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn random_steps(g: &mut Graph, rng: &mut ChaCha8Rng, t: usize, rows: usize) -> Vec<Var> {
        (0..t)
            .map(|_| {
                let d: Vec<f64> = (0..rows * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                g.constant(Tensor::from_vec(rows, 8, d).unwrap())
            })
            .collect()
    }

    #[test]
    fn single_step_trace() {
        let p = params(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new(false);
        let steps = random_steps(&mut g, &mut rng, 1, 1);
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        assert_eq!(trace.len(), 1);
        let z = g.constant(Tensor::zeros(1, 8));
        let (h, _) = lstm_step(&mut g, &p.store, "encoder.lstm", z, z, steps[0]).unwrap();
        assert_eq!(g.value(h), g.value(trace.last_hidden()));
    }

    #[test]
    fn trace_shapes() {
        let mut cfg = ModelConfig::tiny(Task::Classification);
        cfg.feature_dim = 128;
        cfg.hidden_dim = 128;
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = Graph::new(false);
        let steps: Vec<Var> = (0..4).map(|_| g.constant(Tensor::filled(1, 128, 0.1))).collect();
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        assert_eq!(trace.len(), 4);
        for &h in &trace.hidden {
            assert_eq!(g.shape(h), (1, 128));
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = params(0);
        let mut g = Graph::new(false);
        assert!(matches!(
            encode_sequence(&mut g, &p.store, &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn repeated_input_with_closed_forget_gate_is_constant() {
        // Forget gate pinned shut and no recurrent weights: every step
        // computes the same function of the same input.
        let mut p = params(3);
        {
            let w = &mut p.store.by_name_mut("encoder.lstm.weight").unwrap().value;
            for r in 0..8 {
                w.row_mut(r).fill(0.0);
            }
            let b = &mut p.store.by_name_mut("encoder.lstm.bias").unwrap().value;
            b.data_mut()[8..16].fill(-1e3);
        }
        let mut g = Graph::new(false);
        let x = g.constant(Tensor::row_vector(&[0.2, -0.1, 0.4, 0.3, -0.7, 0.05, 0.6, -0.2]));
        let trace = encode_sequence(&mut g, &p.store, &[x, x, x, x]).unwrap();

        // scalar evaluation of one step from zero state
        let w = &p.store.by_name("encoder.lstm.weight").unwrap().value;
        let b = &p.store.by_name("encoder.lstm.bias").unwrap().value;
        let xs = g.value(x).data().to_vec();
        let pre = |col: usize| (0..8).map(|k| xs[k] * w.get(8 + k, col)).sum::<f64>() + b.get(0, col);
        for u in 0..8 {
            let c = crate::autograd::sigmoid(pre(u)) * pre(16 + u).tanh();
            let h = crate::autograd::sigmoid(pre(24 + u)) * c.tanh();
            for &ht in &trace.hidden {
                assert!((g.value(ht).data()[u] - h).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn attention_single_step_is_one() {
        let p = params(0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new(false);
        let steps = random_steps(&mut g, &mut rng, 1, 3);
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        let dec = decode_region(&mut g, &p.store, &trace).unwrap();
        assert_eq!(g.value(dec.attention).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.value(dec.context), g.value(trace.hidden[0]));
    }

    #[test]
    fn zero_score_matrix_gives_uniform_attention() {
        let mut p = params(0);
        p.store.by_name_mut("decoder.wc").unwrap().value.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new(false);
        let steps = random_steps(&mut g, &mut rng, 4, 2);
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        let dec = decode_region(&mut g, &p.store, &trace).unwrap();
        for &a in g.value(dec.attention).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_score_matrix_with_basis_query() {
        let mut p = params(0);
        let mut eye = Tensor::zeros(8, 8);
        (0..8).for_each(|i| eye.set(i, i, 1.0));
        p.store.by_name_mut("decoder.wc").unwrap().value = eye;
        let mut g = Graph::new(false);
        let firsts = [0.3, -1.2, 2.0];
        let hidden: Vec<Var> = firsts
            .iter()
            .enumerate()
            .map(|(t, &f)| {
                let mut v = vec![0.0; 8];
                v[0] = f;
                v[1 + t] = 5.0;
                g.constant(Tensor::row_vector(&v))
            })
            .collect();
        let trace = EncoderTrace {
            hidden: hidden.clone(),
            cells: hidden.clone(),
            outputs: hidden,
        };
        let mut e1 = vec![0.0; 8];
        e1[0] = 1.0;
        let q = g.constant(Tensor::row_vector(&e1));
        let a = attention_scores(&mut g, &p.store, q, &trace).unwrap();
        let z: f64 = firsts.iter().map(|v: &f64| v.exp()).sum();
        for (t, &f) in firsts.iter().enumerate() {
            assert!((g.value(a).data()[t] - f.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_matrix_gives_zero_feature() {
        let mut p = params(4);
        p.store.by_name_mut("decoder.ws").unwrap().value.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new(false);
        let steps = random_steps(&mut g, &mut rng, 3, 2);
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        let dec = decode_region(&mut g, &p.store, &trace).unwrap();
        assert!(g.value(dec.feature).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaled_states_give_softmax_of_scaled_scores() {
        let p = params(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new(false);
        let steps = random_steps(&mut g, &mut rng, 3, 1);
        let trace = encode_sequence(&mut g, &p.store, &steps).unwrap();
        let q = g.constant(Tensor::row_vector(&[0.4, -0.3, 0.2, 0.1, -0.6, 0.5, 0.0, 0.3]));
        let wc = &p.store.by_name("decoder.wc").unwrap().value;
        let qv = g.value(q).clone();
        let raw: Vec<f64> = trace
            .hidden
            .iter()
            .map(|&h| {
                let hv = g.value(h);
                let mut s = 0.0;
                for a in 0..8 {
                    for b in 0..8 {
                        s += qv.get(0, a) * wc.get(a, b) * hv.get(0, b);
                    }
                }
                s
            })
            .collect();
        for scale in [0.5, 2.0, 7.0] {
            let scaled: Vec<Var> = trace.hidden.iter().map(|&h| g.scale(h, scale)).collect();
            let st = EncoderTrace {
                hidden: scaled.clone(),
                cells: scaled.clone(),
                outputs: scaled,
            };
            let a = attention_scores(&mut g, &p.store, q, &st).unwrap();
            let m = raw.iter().map(|s| s * scale).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = raw.iter().map(|s| (s * scale - m).exp()).sum();
            for (t, s) in raw.iter().enumerate() {
                let want = (s * scale - m).exp() / z;
                assert!((g.value(a).data()[t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pooling_variant_takes_elementwise_max() {
        let mut cfg = ModelConfig::tiny(Task::Classification);
        cfg.aggregation = Aggregation::MaxPooling;
        let p = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = Graph::new(false);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let steps = random_steps(&mut g, &mut rng, 3, 2);
        let agg = aggregate_sequence(&mut g, &p.store, &cfg, &steps).unwrap();
        for r in 0..2 {
            for c in 0..8 {
                let want = steps
                    .iter()
                    .map(|&s| g.value(s).get(r, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(g.value(agg.feature).get(r, c), want);
            }
        }
    }
}
