use rand::Rng;

use crate::autograd::{Axis, Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// `x W + b`. The bias is optional so bare matrices (`W_a` … `W_s`) share
/// the same helper.
pub fn linear(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(p, &format!("{name}.weight"))?;
    let y = g.matmul(x, w)?;
    let bias = format!("{name}.bias");
    if p.contains(&bias) {
        let b = g.param_named(p, &bias)?;
        g.add(y, b)
    } else {
        Ok(y)
    }
}

/// Multiplies by the bare matrix `name`.
pub fn project(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param_named(p, name)?;
    g.matmul(x, w)
}

/// Shared per-row MLP: every layer is linear, batch norm (when the store
/// has `{name}.bn{i}`) and ReLU.
pub fn mlp(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    layers: usize,
    bn_momentum: f64,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let mut z = linear(g, p, &format!("{name}.fc{i}"), h)?;
        let bn = format!("{name}.bn{i}");
        if p.contains(&format!("{bn}.gamma")) {
            z = g.batchnorm(z, p, &bn, bn_momentum)?;
        }
        h = g.relu(z);
    }
    Ok(h)
}

/// Fully connected head: each hidden layer is linear, batch norm, ReLU and
/// dropout; the output layer is linear.
pub fn head<R: Rng>(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    hidden: usize,
    dropout: f64,
    bn_momentum: f64,
    rng: &mut R,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for i in 0..hidden {
        let z = linear(g, p, &format!("{name}.fc{i}"), h)?;
        let z = g.batchnorm(z, p, &format!("{name}.bn{i}"), bn_momentum)?;
        let z = g.relu(z);
        h = g.dropout(z, dropout, rng)?;
    }
    linear(g, p, &format!("{name}.out"), h)
}

/// One LSTM step over a batch of rows.
///
/// With `z = [h_prev, x] W + b` split into gate blocks `[i, f, g, o]`:
/// `c = σ(f) ⊙ c_prev + σ(i) ⊙ tanh(g)` and `h = σ(o) ⊙ tanh(c)`.
pub fn lstm_step(
    g: &mut Graph,
    p: &ParamStore,
    name: &str,
    h_prev: Var,
    c_prev: Var,
    x: Var,
) -> Result<(Var, Var)> {
    let w = p.by_name(&format!("{name}.weight"))?.value.shape();
    let hidden = w.1 / 4;
    let (hr, hc) = g.shape(h_prev);
    let (xr, xc) = g.shape(x);
    if hc != hidden || g.shape(c_prev) != (hr, hidden) || xr != hr || hc + xc != w.0 {
        return Err(Error::Dimension(format!(
            "lstm {name}: state {:?}, cell {:?}, input {:?} against weight {w:?}",
            (hr, hc),
            g.shape(c_prev),
            (xr, xc)
        )));
    }
    let joined = g.concat(&[h_prev, x], Axis::Cols)?;
    let z = linear(g, p, name, joined)?;
    let zi = g.slice(z, Axis::Cols, 0, hidden)?;
    let zf = g.slice(z, Axis::Cols, hidden, hidden)?;
    let zg = g.slice(z, Axis::Cols, 2 * hidden, hidden)?;
    let zo = g.slice(z, Axis::Cols, 3 * hidden, hidden)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{sigmoid, Tensor};

    fn lstm_store(weight: Tensor, bias: Tensor) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("cell.weight", weight).unwrap();
        p.add("cell.bias", bias).unwrap();
        p
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let p = lstm_store(Tensor::zeros(5, 8), Tensor::zeros(1, 8));
        let mut g = Graph::new(false);
        let h0 = g.constant(Tensor::zeros(1, 2));
        let c0 = g.constant(Tensor::zeros(1, 2));
        let x = g.constant(Tensor::row_vector(&[0.3, -1.0, 2.0]));
        let (h, c) = lstm_step(&mut g, &p, "cell", h0, c0, x).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut bias = Tensor::zeros(1, 8);
        bias.data_mut()[2..4].fill(50.0); // forget
        bias.data_mut()[0..2].fill(-50.0); // input
        let p = lstm_store(Tensor::zeros(5, 8), bias);
        let mut g = Graph::new(false);
        let h0 = g.constant(Tensor::row_vector(&[0.1, 0.2]));
        let c0 = g.constant(Tensor::row_vector(&[0.7, -0.4]));
        let x = g.constant(Tensor::row_vector(&[1.0, 1.0, 1.0]));
        let (_, c) = lstm_step(&mut g, &p, "cell", h0, c0, x).unwrap();
        let cv = g.value(c).data();
        assert!((cv[0] - 0.7).abs() < 1e-12 && (cv[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn two_unit_cell_matches_scalar_evaluation() {
        // hidden 2, input 1: weight rows [h0, h1, x], columns [i0 i1 f0 f1 g0 g1 o0 o1]
        let w = Tensor::from_rows(&[
            [0.1, -0.2, 0.3, 0.0, -0.5, 0.4, 0.2, 0.1],
            [0.05, 0.3, -0.1, 0.2, 0.25, -0.3, 0.0, 0.4],
            [0.7, 0.6, -0.4, 0.5, 0.9, -0.8, 0.3, -0.2],
        ]);
        let b = Tensor::row_vector(&[0.0, 0.1, 1.0, 1.0, -0.1, 0.0, 0.2, -0.3]);
        let p = lstm_store(w.clone(), b.clone());
        let (hp, cp, x) = ([0.5, -0.25], [0.3, 0.8], 1.5);

        // independent scalar evaluation of the gate formulas
        let pre = |col: usize| hp[0] * w.get(0, col) + hp[1] * w.get(1, col) + x * w.get(2, col) + b.get(0, col);
        let mut want_h = [0.0; 2];
        let mut want_c = [0.0; 2];
        for u in 0..2 {
            let i = sigmoid(pre(u));
            let f = sigmoid(pre(2 + u));
            let cand = pre(4 + u).tanh();
            let o = sigmoid(pre(6 + u));
            want_c[u] = f * cp[u] + i * cand;
            want_h[u] = o * want_c[u].tanh();
        }

        let mut g = Graph::new(false);
        let h0 = g.constant(Tensor::row_vector(&hp));
        let c0 = g.constant(Tensor::row_vector(&cp));
        let xv = g.constant(Tensor::row_vector(&[x]));
        let (h, c) = lstm_step(&mut g, &p, "cell", h0, c0, xv).unwrap();
        for u in 0..2 {
            assert!((g.value(h).data()[u] - want_h[u]).abs() < 1e-15);
            assert!((g.value(c).data()[u] - want_c[u]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = lstm_store(Tensor::zeros(5, 8), Tensor::zeros(1, 8));
        let mut g = Graph::new(false);
        let h0 = g.constant(Tensor::zeros(1, 2));
        let c0 = g.constant(Tensor::zeros(1, 2));
        let x = g.constant(Tensor::zeros(1, 4));
        assert!(matches!(
            lstm_step(&mut g, &p, "cell", h0, c0, x),
            Err(Error::Dimension(_))
        ));
    }
}
