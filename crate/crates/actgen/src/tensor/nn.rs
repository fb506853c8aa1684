//! Layer building blocks and the per-step graph builder.
//!
//! Models hold [`ParamId`]s into a [`VarStore`]; a [`GraphBuilder`] binds
//! those parameters onto a fresh tape for each forward/backward pass.

use super::tape::{NodeId, Tape};
use super::{ParamId, Result, Scalar, Tensor, VarStore};
use crate::rng::normal;
use rand_chacha::ChaCha8Rng;

/// Binds store parameters onto a tape, memoizing one leaf per parameter.
pub struct GraphBuilder<'a, T: Scalar> {
    pub tape: Tape<T>,
    store: &'a VarStore<T>,
    bound: Vec<Option<NodeId>>,
    pub training: bool,
}

impl<'a, T: Scalar> GraphBuilder<'a, T> {
    pub fn new(store: &'a VarStore<T>, training: bool) -> Self {
        Self { tape: Tape::new(), store, bound: vec![None; store.len()], training }
    }

    /// Leaf for a model parameter; gradients flow to it only in training.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.bound[id.0] {
            return node;
        }
        let node = self.tape.leaf(self.store.get(id).clone().requires_grad(self.training));
        self.bound[id.0] = Some(node);
        node
    }

    /// Leaf for input data; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.tape.constant(t)
    }

    /// Gradients in store order after `tape.backward`. Unbound or unreached
    /// parameters yield `None`.
    pub fn grads(&self) -> Vec<Option<Vec<T>>> {
        self.bound
            .iter()
            .map(|slot| slot.and_then(|node| self.tape.grad(node).map(<[T]>::to_vec)))
            .collect()
    }
}

/// Weight init used across both GANs: N(0, 0.02) kernels, zero biases.
const INIT_STD: f64 = 0.02;

fn init_weights<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(normal(rng) * INIT_STD))
}

#[derive(Debug, Clone, Copy)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseLayer {
    pub fn new<T: Scalar>(
        vs: &mut VarStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = vs.add(&format!("{name}.w"), init_weights(rng, &[in_dim, out_dim]));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_dim]));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut GraphBuilder<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.tape.dense(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        vs: &mut VarStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        k: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = vs.add(&format!("{name}.w"), init_weights(rng, &[k, in_c, out_c]));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_c]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut GraphBuilder<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.conv1d(x, w, self.stride, self.pad)?;
        g.tape.bias_add(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        vs: &mut VarStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        k: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = vs.add(&format!("{name}.w"), init_weights(rng, &[k, k, in_c, out_c]));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_c]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut GraphBuilder<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.conv2d(x, w, self.stride, self.pad)?;
        g.tape.bias_add(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        vs: &mut VarStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        k: usize,
        in_c: usize,
        out_c: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = vs.add(&format!("{name}.w"), init_weights(rng, &[k, k, in_c, out_c]));
        let b = vs.add(&format!("{name}.b"), Tensor::zeros(&[out_c]));
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Scalar>(&self, g: &mut GraphBuilder<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.conv_transpose2d(x, w, self.stride, self.pad)?;
        g.tape.bias_add(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn graph_builder_binds_each_param_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vs = VarStore::<f64>::new();
        let layer = DenseLayer::new(&mut vs, &mut rng, "d", 3, 2);
        let mut g = GraphBuilder::new(&vs, true);
        let a = g.param(layer.w);
        let b = g.param(layer.w);
        assert_eq!(a, b);
    }

    #[test]
    fn dense_layer_forward_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut vs = VarStore::<f64>::new();
        let layer = DenseLayer::new(&mut vs, &mut rng, "d", 3, 2);
        let mut g = GraphBuilder::new(&vs, true);
        let x = g.input(Tensor::new(&[1, 3], vec![0.1, -0.2, 0.3]).unwrap());
        let y = layer.forward(&mut g, x).unwrap();
        let loss = g.tape.sum(y).unwrap();
        g.tape.backward(loss).unwrap();
        let grads = g.grads();
        assert_eq!(grads.len(), 2);
        assert!(grads.iter().all(|gr| gr.is_some()));
        // d(sum)/db = 1 for every bias element.
        assert_eq!(grads[1].as_ref().unwrap(), &vec![1.0, 1.0]);
    }
}
