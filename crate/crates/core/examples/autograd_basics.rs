//! Fits a linear map with the tape autograd and Adam, then compares one
//! analytic gradient against a central difference.

use pointseq::autograd::{Graph, ParamStore, Tensor};
use pointseq::training::{adam_step, relative_error, OptimizerState};

fn loss_of(store: &ParamStore, x: &Tensor, y: &[usize]) -> pointseq::Result<f64> {
    let mut g = Graph::new(false);
    let xv = g.constant(x.clone());
    let w = g.param_named(store, "w")?;
    let logits = g.matmul(xv, w)?;
    let loss = g.cross_entropy(logits, y)?;
    g.value(loss).item()
}

fn main() -> pointseq::Result<()> {
    // two linearly separable classes in the plane
    let x = Tensor::from_rows(&[[1.0, 0.2], [0.9, -0.1], [-1.0, 0.3], [-0.8, -0.4]]);
    let y = [0, 0, 1, 1];

    let mut store = ParamStore::new();
    store.add("w", Tensor::from_rows(&[[0.1, -0.2], [0.05, 0.3]]))?;
    let mut opt = OptimizerState::new(&store);

    for step in 0..=100 {
        let mut g = Graph::new(true);
        let xv = g.constant(x.clone());
        let w = g.param_named(&store, "w")?;
        let logits = g.matmul(xv, w)?;
        let loss = g.cross_entropy(logits, &y)?;
        if step % 20 == 0 {
            println!("step {step:3} loss {:.6}", g.value(loss).item()?);
        }
        if step == 100 {
            break;
        }
        g.backward(loss, &mut store)?;
        adam_step(&mut store, &mut opt, 0.05)?;
        store.zero_grad();
    }

    // analytic vs numeric derivative for one weight
    let mut g = Graph::new(false);
    let xv = g.constant(x.clone());
    let w = g.param_named(&store, "w")?;
    let logits = g.matmul(xv, w)?;
    let loss = g.cross_entropy(logits, &y)?;
    g.backward(loss, &mut store)?;
    let analytic = store.by_name("w")?.grad.get(0, 1);

    let h = 1e-5;
    let base = store.by_name("w")?.value.get(0, 1);
    store.by_name_mut("w")?.value.set(0, 1, base + h);
    let up = loss_of(&store, &x, &y)?;
    store.by_name_mut("w")?.value.set(0, 1, base - h);
    let down = loss_of(&store, &x, &y)?;
    store.by_name_mut("w")?.value.set(0, 1, base);
    let numeric = (up - down) / (2.0 * h);
    println!(
        "dL/dw[0,1]: analytic {analytic:.9} numeric {numeric:.9} rel err {:.2e}",
        relative_error(analytic, numeric)
    );
    Ok(())
}
