//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of a forward pass as it executes.
//! [`Graph::backward`] then walks the record in reverse and accumulates
//! exact gradients into a [`ParamStore`].
//!
//! ```
//! use pointseq::autograd::{Graph, ParamStore, Tensor};
//!
//! let mut params = ParamStore::new();
//! let id = params.add("w", Tensor::row_vector(&[1.0, 2.0])).unwrap();
//! let mut g = Graph::new(true);
//! let w = g.param(&params, id);
//! let sq = g.mul(w, w).unwrap();
//! let s = g.sum(sq);
//! let loss = g.scale(s, 0.5);
//! g.backward(loss, &mut params).unwrap();
//! assert_eq!(params.get(id).grad.data(), &[1.0, 2.0]);
//! ```

mod graph;
mod params;
mod tensor;

pub use graph::{sigmoid, Axis, BnUpdate, Elementwise, Gradients, Graph, Var, BN_EPS};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tensor::Tensor;
