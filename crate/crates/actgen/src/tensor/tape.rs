//! Reverse-mode tape: an append-only record of primitive ops with enough
//! saved state to replay the chain rule backwards.
//!
//! Node data is immutable once pushed; every op validates shapes and rejects
//! non-finite outputs at creation time, so a NaN can never propagate silently
//! through a training step.

use super::kernels::{self, Conv1dDims, Conv2dDims};
use super::{Result, Scalar, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `y = scale * x + shift`, elementwise; backward only needs the scale.
    Affine { x: NodeId, scale: T },
    /// `y[.., c] = x[.., c] + b[c]` broadcasting over leading dims.
    BiasAdd { x: NodeId, b: NodeId },
    Matmul { x: NodeId, w: NodeId },
    Conv1d { x: NodeId, w: NodeId, dims: Conv1dDims },
    Conv2d { x: NodeId, w: NodeId, dims: Conv2dDims },
    ConvTranspose2d { x: NodeId, w: NodeId, dims: Conv2dDims },
    Relu(NodeId),
    LeakyRelu { x: NodeId, alpha: T },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Ln(NodeId),
    Abs(NodeId),
    Clamp { x: NodeId, lo: T, hi: T },
    Mean(NodeId),
    Sum(NodeId),
    /// Per-item mean: `[B, rest..] -> [B]`.
    MeanRows { x: NodeId, rest: usize },
    Reshape(NodeId),
    /// Concatenation along the last (channel) axis.
    ConcatLast { xs: Vec<NodeId>, channels: Vec<usize> },
    /// Nearest-neighbour upsampling along the time axis of `[B,T,C]`.
    UpsampleTime { x: NodeId, factor: usize },
    /// `[B,F] -> [3,F]`: per-feature min / max / mean over the batch.
    BatchStats { x: NodeId },
    /// Inverted dropout; `mask` holds `0` or `1/keep` per element.
    Dropout { x: NodeId, mask: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    needs_grad: bool,
    op: Op<T>,
}

/// The tape itself. Build a fresh one per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn tensor(&self, id: NodeId) -> Tensor<T> {
        Tensor::new(&self.nodes[id.0].shape, self.nodes[id.0].data.clone())
            .expect("tape nodes hold validated data")
    }

    /// Gradient of the last `backward` target w.r.t. this node, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> NodeId {
        let needs = t.needs_grad();
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { shape: t.shape().to_vec(), data: t.into_data(), needs_grad: needs, op: Op::Leaf });
        id
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.leaf(t.requires_grad(false))
    }

    fn push(
        &mut self,
        op_name: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        needs_grad: bool,
        op: Op<T>,
    ) -> Result<NodeId> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { data, shape, needs_grad, op });
        Ok(id)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            });
        }
        Ok(())
    }

    // ------------------------------------------------------- elementwise --

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(&[a, b]);
        self.push("add", data, shape, needs, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(&[a, b]);
        self.push("sub", data, shape, needs, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(&[a, b]);
        self.push("mul", data, shape, needs, Op::Mul(a, b))
    }

    /// `scale * x + shift`, elementwise with constants.
    pub fn affine(&mut self, x: NodeId, scale: T, shift: T) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| scale * v + shift).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("affine", data, shape, needs, Op::Affine { x, scale })
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let c = *self.nodes[x.0].shape.last().unwrap_or(&0);
        if self.nodes[b.0].shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                detail: format!(
                    "bias {:?} does not match trailing channel dim {} of {:?}",
                    self.nodes[b.0].shape, c, self.nodes[x.0].shape
                ),
            });
        }
        let bias = &self.nodes[b.0].data;
        let data: Vec<T> = self.nodes[x.0]
            .data
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &bv)| v + bv))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x, b]);
        self.push("bias_add", data, shape, needs, Op::BiasAdd { x, b })
    }

    // ------------------------------------------------------- activations --

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<T> =
            self.nodes[x.0].data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("relu", data, shape, needs, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: T) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { alpha * v })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("leaky_relu", data, shape, needs, Op::LeakyRelu { x, alpha })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("tanh", data, shape, needs, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let one = T::one();
        let data: Vec<T> =
            self.nodes[x.0].data.iter().map(|&v| one / (one + (-v).exp())).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("sigmoid", data, shape, needs, Op::Sigmoid(x))
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v.ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("ln", data, shape, needs, Op::Ln(x))
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0].data.iter().map(|&v| v.abs()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("abs", data, shape, needs, Op::Abs(x))
    }

    pub fn clamp(&mut self, x: NodeId, lo: T, hi: T) -> Result<NodeId> {
        let data: Vec<T> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v < lo { lo } else if v > hi { hi } else { v })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("clamp", data, shape, needs, Op::Clamp { x, lo, hi })
    }

    // --------------------------------------------------------- reductions --

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x.0].data.len();
        if n == 0 {
            return Err(TensorError::EmptyBatch { op: "mean" });
        }
        let sum: T = self.nodes[x.0].data.iter().copied().sum();
        let data = vec![sum / T::from_f64(n as f64)];
        let needs = self.needs(&[x]);
        self.push("mean", data, vec![1], needs, Op::Mean(x))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let sum: T = self.nodes[x.0].data.iter().copied().sum();
        let needs = self.needs(&[x]);
        self.push("sum", vec![sum], vec![1], needs, Op::Sum(x))
    }

    /// `[B, rest..] -> [B]`: mean over everything but the leading axis.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = &self.nodes[x.0].shape;
        if shape.is_empty() || shape[0] == 0 {
            return Err(TensorError::EmptyBatch { op: "mean_rows" });
        }
        let b = shape[0];
        let rest: usize = shape[1..].iter().product::<usize>().max(1);
        let inv = T::one() / T::from_f64(rest as f64);
        let data: Vec<T> = self.nodes[x.0]
            .data
            .chunks(rest)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        let needs = self.needs(&[x]);
        self.push("mean_rows", data, vec![b], needs, Op::MeanRows { x, rest })
    }

    // ------------------------------------------------------------- shape --

    pub fn reshape(&mut self, x: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!(
                    "cannot view {:?} as {:?}",
                    self.nodes[x.0].shape, new_shape
                ),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let needs = self.needs(&[x]);
        self.push("reshape", data, new_shape.to_vec(), needs, Op::Reshape(x))
    }

    /// Concatenates along the last axis; all leading dims must agree.
    pub fn concat_last(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(TensorError::EmptyBatch { op: "concat_last" });
        }
        let lead = &self.nodes[xs[0].0].shape[..self.nodes[xs[0].0].shape.len() - 1];
        let mut channels = Vec::with_capacity(xs.len());
        for &x in xs {
            let shape = &self.nodes[x.0].shape;
            if shape.is_empty() || &shape[..shape.len() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    detail: format!("{:?} vs leading dims {:?}", shape, lead),
                });
            }
            channels.push(*shape.last().unwrap());
        }
        let out_c: usize = channels.iter().sum();
        let rows: usize = lead.iter().product::<usize>().max(1);
        let mut data = Vec::with_capacity(rows * out_c);
        for row in 0..rows {
            for (&x, &c) in xs.iter().zip(&channels) {
                data.extend_from_slice(&self.nodes[x.0].data[row * c..(row + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(out_c);
        let needs = self.needs(xs);
        self.push("concat_last", data, shape, needs, Op::ConcatLast { xs: xs.to_vec(), channels })
    }

    /// Nearest-neighbour upsampling along the time axis of `[B,T,C]`.
    pub fn upsample_time(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 3 || factor == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "upsample_time",
                detail: format!("expected [B,T,C] and factor >= 1, got {:?} x{}", shape, factor),
            });
        }
        let (b, t, c) = (shape[0], shape[1], shape[2]);
        let mut data = Vec::with_capacity(b * t * factor * c);
        for bi in 0..b {
            for ti in 0..t {
                let row = &self.nodes[x.0].data[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                for _ in 0..factor {
                    data.extend_from_slice(row);
                }
            }
        }
        let needs = self.needs(&[x]);
        self.push("upsample_time", data, vec![b, t * factor, c], needs, Op::UpsampleTime { x, factor })
    }

    // --------------------------------------------------------- structure --

    /// `x: [B,F] -> [3,F]`: rows are per-feature min, max, mean over the
    /// batch. Min/max ties break toward the lowest batch index.
    pub fn batch_stats(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "batch_stats",
                detail: format!("expected [B,F], got {:?}", shape),
            });
        }
        let (b, f) = (shape[0], shape[1]);
        if b == 0 {
            return Err(TensorError::EmptyBatch { op: "batch_stats" });
        }
        let xd = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); 3 * f];
        let inv_b = T::one() / T::from_f64(b as f64);
        for fi in 0..f {
            let mut mn = xd[fi];
            let mut mx = xd[fi];
            let mut sum = xd[fi];
            for bi in 1..b {
                let v = xd[bi * f + fi];
                if v < mn {
                    mn = v;
                }
                if v > mx {
                    mx = v;
                }
                sum = sum + v;
            }
            data[fi] = mn;
            data[f + fi] = mx;
            data[2 * f + fi] = sum * inv_b;
        }
        let needs = self.needs(&[x]);
        self.push("batch_stats", data, vec![3, f], needs, Op::BatchStats { x })
    }

    /// Inverted dropout. Active only when `training`; identity otherwise.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !training || rate <= 0.0 {
            return self.affine(x, T::one(), T::zero());
        }
        let keep = 1.0 - rate;
        let scale = T::from_f64(1.0 / keep);
        let mask: Vec<T> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
            .collect();
        let data: Vec<T> =
            self.nodes[x.0].data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(&[x]);
        self.push("dropout", data, shape, needs, Op::Dropout { x, mask })
    }

    // ------------------------------------------------------------ linear --

    pub fn matmul(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", xs, ws),
            });
        }
        let (b, i, o) = (xs[0], xs[1], ws[1]);
        let mut data = vec![T::zero(); b * o];
        kernels::matmul(&self.nodes[x.0].data, &self.nodes[w.0].data, b, i, o, &mut data);
        let needs = self.needs(&[x, w]);
        self.push("matmul", data, vec![b, o], needs, Op::Matmul { x, w })
    }

    /// `y = x.W + b` — the fully-connected layer as one call.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = self.matmul(x, w)?;
        self.bias_add(y, b)
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                detail: format!("x {:?} vs kernel {:?}", xs, ws),
            });
        }
        let dims = Conv1dDims::new(xs[0], xs[1], xs[2], ws[0], ws[2], stride, pad)?;
        let mut data = vec![T::zero(); dims.batch * dims.out_len * dims.out_c];
        kernels::conv1d_forward(&self.nodes[x.0].data, &self.nodes[w.0].data, dims, &mut data);
        let shape = vec![dims.batch, dims.out_len, dims.out_c];
        let needs = self.needs(&[x, w]);
        self.push("conv1d", data, shape, needs, Op::Conv1d { x, w, dims })
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {:?} vs kernel {:?}", xs, ws),
            });
        }
        let dims =
            Conv2dDims::conv(xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], ws[3], stride, pad)?;
        let mut data = vec![T::zero(); dims.batch * dims.out_h * dims.out_w * dims.out_c];
        kernels::conv2d_forward(&self.nodes[x.0].data, &self.nodes[w.0].data, dims, &mut data);
        let shape = vec![dims.batch, dims.out_h, dims.out_w, dims.out_c];
        let needs = self.needs(&[x, w]);
        self.push("conv2d", data, shape, needs, Op::Conv2d { x, w, dims })
    }

    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("x {:?} vs kernel {:?}", xs, ws),
            });
        }
        let dims = Conv2dDims::conv_transposed(
            xs[0], xs[1], xs[2], xs[3], ws[0], ws[1], ws[3], stride, pad,
        )?;
        let mut data = vec![T::zero(); dims.batch * dims.out_h * dims.out_w * dims.out_c];
        kernels::conv_transpose2d_forward(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            dims,
            &mut data,
        );
        let shape = vec![dims.batch, dims.out_h, dims.out_w, dims.out_c];
        let needs = self.needs(&[x, w]);
        self.push("conv_transpose2d", data, shape, needs, Op::ConvTranspose2d { x, w, dims })
    }

    // ---------------------------------------------------------- backward --

    /// Accumulates gradients of the scalar `loss` into every node that
    /// requires them, replaying ops in reverse order. Each leaf receives its
    /// gradient exactly once per call.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.nodes[loss.0].shape.clone() });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let alloc = |grads: &mut [Option<Vec<T>>], id: NodeId, len: usize| {
            grads[id.0].get_or_insert_with(|| vec![T::zero(); len]);
        };
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &x in [a, b] {
                    if self.nodes[x.0].needs_grad {
                        alloc(grads, x, self.nodes[x.0].data.len());
                        let buf = grads[x.0].as_mut().unwrap();
                        for (acc, &gv) in buf.iter_mut().zip(g) {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[a.0].needs_grad {
                    alloc(grads, *a, self.nodes[a.0].data.len());
                    let buf = grads[a.0].as_mut().unwrap();
                    for (acc, &gv) in buf.iter_mut().zip(g) {
                        *acc = *acc + gv;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    alloc(grads, *b, self.nodes[b.0].data.len());
                    let buf = grads[b.0].as_mut().unwrap();
                    for (acc, &gv) in buf.iter_mut().zip(g) {
                        *acc = *acc - gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    alloc(grads, *a, self.nodes[a.0].data.len());
                    let bd = &self.nodes[b.0].data;
                    let buf = grads[a.0].as_mut().unwrap();
                    for ((acc, &gv), &bv) in buf.iter_mut().zip(g).zip(bd) {
                        *acc = *acc + gv * bv;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    alloc(grads, *b, self.nodes[b.0].data.len());
                    let ad = &self.nodes[a.0].data;
                    let buf = grads[b.0].as_mut().unwrap();
                    for ((acc, &gv), &av) in buf.iter_mut().zip(g).zip(ad) {
                        *acc = *acc + gv * av;
                    }
                }
            }
            Op::Affine { x, scale } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let buf = grads[x.0].as_mut().unwrap();
                    for (acc, &gv) in buf.iter_mut().zip(g) {
                        *acc = *acc + gv * *scale;
                    }
                }
            }
            Op::BiasAdd { x, b } => {
                let c = self.nodes[b.0].data.len();
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let buf = grads[x.0].as_mut().unwrap();
                    for (acc, &gv) in buf.iter_mut().zip(g) {
                        *acc = *acc + gv;
                    }
                }
                if self.nodes[b.0].needs_grad {
                    alloc(grads, *b, c);
                    let buf = grads[b.0].as_mut().unwrap();
                    for row in g.chunks(c) {
                        for (acc, &gv) in buf.iter_mut().zip(row) {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::Matmul { x, w } => {
                let (b, i_dim) = (self.nodes[x.0].shape[0], self.nodes[x.0].shape[1]);
                let o = self.nodes[w.0].shape[1];
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, b * i_dim);
                    kernels::matmul_backward_x(
                        g,
                        &self.nodes[w.0].data,
                        b,
                        i_dim,
                        o,
                        grads[x.0].as_mut().unwrap(),
                    );
                }
                if self.nodes[w.0].needs_grad {
                    alloc(grads, *w, i_dim * o);
                    kernels::matmul_backward_w(
                        &self.nodes[x.0].data,
                        g,
                        b,
                        i_dim,
                        o,
                        grads[w.0].as_mut().unwrap(),
                    );
                }
            }
            Op::Conv1d { x, w, dims } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    kernels::conv1d_backward_x(
                        g,
                        &self.nodes[w.0].data,
                        *dims,
                        grads[x.0].as_mut().unwrap(),
                    );
                }
                if self.nodes[w.0].needs_grad {
                    alloc(grads, *w, self.nodes[w.0].data.len());
                    kernels::conv1d_backward_w(
                        &self.nodes[x.0].data,
                        g,
                        *dims,
                        grads[w.0].as_mut().unwrap(),
                    );
                }
            }
            Op::Conv2d { x, w, dims } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    kernels::conv2d_backward_x(
                        g,
                        &self.nodes[w.0].data,
                        *dims,
                        grads[x.0].as_mut().unwrap(),
                    );
                }
                if self.nodes[w.0].needs_grad {
                    alloc(grads, *w, self.nodes[w.0].data.len());
                    kernels::conv2d_backward_w(
                        &self.nodes[x.0].data,
                        g,
                        *dims,
                        grads[w.0].as_mut().unwrap(),
                    );
                }
            }
            Op::ConvTranspose2d { x, w, dims } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    kernels::conv_transpose2d_backward_x(
                        g,
                        &self.nodes[w.0].data,
                        *dims,
                        grads[x.0].as_mut().unwrap(),
                    );
                }
                if self.nodes[w.0].needs_grad {
                    alloc(grads, *w, self.nodes[w.0].data.len());
                    kernels::conv_transpose2d_backward_w(
                        &self.nodes[x.0].data,
                        g,
                        *dims,
                        grads[w.0].as_mut().unwrap(),
                    );
                }
            }
            Op::Relu(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let xd = &self.nodes[x.0].data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &xv) in buf.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::LeakyRelu { x, alpha } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let xd = &self.nodes[x.0].data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &xv) in buf.iter_mut().zip(g).zip(xd) {
                        let slope = if xv > T::zero() { T::one() } else { *alpha };
                        *acc = *acc + gv * slope;
                    }
                }
            }
            Op::Tanh(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let yd = &node.data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &yv) in buf.iter_mut().zip(g).zip(yd) {
                        *acc = *acc + gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let yd = &node.data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &yv) in buf.iter_mut().zip(g).zip(yd) {
                        *acc = *acc + gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Ln(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let xd = &self.nodes[x.0].data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &xv) in buf.iter_mut().zip(g).zip(xd) {
                        *acc = *acc + gv / xv;
                    }
                }
            }
            Op::Abs(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let xd = &self.nodes[x.0].data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &xv) in buf.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *acc = *acc + gv;
                        } else if xv < T::zero() {
                            *acc = *acc - gv;
                        }
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let xd = &self.nodes[x.0].data;
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &xv) in buf.iter_mut().zip(g).zip(xd) {
                        if xv >= *lo && xv <= *hi {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::Mean(x) => {
                if self.nodes[x.0].needs_grad {
                    let n = self.nodes[x.0].data.len();
                    alloc(grads, *x, n);
                    let gv = g[0] / T::from_f64(n as f64);
                    let buf = grads[x.0].as_mut().unwrap();
                    for acc in buf.iter_mut() {
                        *acc = *acc + gv;
                    }
                }
            }
            Op::Sum(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let gv = g[0];
                    let buf = grads[x.0].as_mut().unwrap();
                    for acc in buf.iter_mut() {
                        *acc = *acc + gv;
                    }
                }
            }
            Op::MeanRows { x, rest } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let inv = T::one() / T::from_f64(*rest as f64);
                    let buf = grads[x.0].as_mut().unwrap();
                    for (row, &gv) in buf.chunks_mut(*rest).zip(g) {
                        for acc in row {
                            *acc = *acc + gv * inv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let buf = grads[x.0].as_mut().unwrap();
                    for (acc, &gv) in buf.iter_mut().zip(g) {
                        *acc = *acc + gv;
                    }
                }
            }
            Op::ConcatLast { xs, channels } => {
                let out_c: usize = channels.iter().sum();
                let rows = node.data.len() / out_c;
                for (slot, &x) in xs.iter().enumerate() {
                    if !self.nodes[x.0].needs_grad {
                        continue;
                    }
                    let c = channels[slot];
                    let offset: usize = channels[..slot].iter().sum();
                    alloc(grads, x, self.nodes[x.0].data.len());
                    let buf = grads[x.0].as_mut().unwrap();
                    for row in 0..rows {
                        let src = &g[row * out_c + offset..row * out_c + offset + c];
                        let dst = &mut buf[row * c..(row + 1) * c];
                        for (acc, &gv) in dst.iter_mut().zip(src) {
                            *acc = *acc + gv;
                        }
                    }
                }
            }
            Op::UpsampleTime { x, factor } => {
                if self.nodes[x.0].needs_grad {
                    let shape = &self.nodes[x.0].shape;
                    let (b, t, c) = (shape[0], shape[1], shape[2]);
                    alloc(grads, *x, b * t * c);
                    let buf = grads[x.0].as_mut().unwrap();
                    for bi in 0..b {
                        for ti in 0..t {
                            let dst = &mut buf[(bi * t + ti) * c..(bi * t + ti + 1) * c];
                            for j in 0..*factor {
                                let src_row = (bi * t + ti) * factor + j;
                                let src = &g[src_row * c..(src_row + 1) * c];
                                for (acc, &gv) in dst.iter_mut().zip(src) {
                                    *acc = *acc + gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::BatchStats { x } => {
                if self.nodes[x.0].needs_grad {
                    let shape = &self.nodes[x.0].shape;
                    let (b, f) = (shape[0], shape[1]);
                    alloc(grads, *x, b * f);
                    let xd = &self.nodes[x.0].data;
                    let inv_b = T::one() / T::from_f64(b as f64);
                    let buf = grads[x.0].as_mut().unwrap();
                    for fi in 0..f {
                        // Recompute argmin/argmax with the same tie rule as
                        // the forward pass (lowest batch index wins).
                        let mut arg_mn = 0usize;
                        let mut arg_mx = 0usize;
                        for bi in 1..b {
                            let v = xd[bi * f + fi];
                            if v < xd[arg_mn * f + fi] {
                                arg_mn = bi;
                            }
                            if v > xd[arg_mx * f + fi] {
                                arg_mx = bi;
                            }
                        }
                        buf[arg_mn * f + fi] = buf[arg_mn * f + fi] + g[fi];
                        buf[arg_mx * f + fi] = buf[arg_mx * f + fi] + g[f + fi];
                        let gm = g[2 * f + fi] * inv_b;
                        for bi in 0..b {
                            buf[bi * f + fi] = buf[bi * f + fi] + gm;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.nodes[x.0].needs_grad {
                    alloc(grads, *x, self.nodes[x.0].data.len());
                    let buf = grads[x.0].as_mut().unwrap();
                    for ((acc, &gv), &m) in buf.iter_mut().zip(g).zip(mask) {
                        *acc = *acc + gv * m;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: Vec<f64>) -> NodeId {
        tape.leaf(Tensor::new(shape, data).unwrap().requires_grad(true))
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 2], vec![1.0, 2.0]);
        let w = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&mut tape, &[2], vec![0.0, 0.0]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_summable_case() {
        // x=[[1,1]], W=[[1],[1]], b=[1] -> [[3]]
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 2], vec![1.0, 1.0]);
        let w = leaf(&mut tape, &[2, 1], vec![1.0, 1.0]);
        let b = leaf(&mut tape, &[1], vec![1.0]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y), &[3.0]);
    }

    #[test]
    fn activation_fixed_points() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[4], vec![0.0, 0.0, -1.0, -1.0]);
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        let r = tape.relu(x).unwrap();
        let l = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(s)[0], 0.5);
        assert_eq!(tape.value(t)[0], 0.0);
        assert_eq!(tape.value(r)[2], 0.0);
        assert!((tape.value(l)[2] - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn batch_stats_single_item_batch() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 3], vec![0.5, -1.0, 2.0]);
        let s = tape.batch_stats(x).unwrap();
        assert_eq!(tape.value(s), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn batch_stats_two_rows() {
        // x = [[0],[2]] -> [[0],[2],[1]]
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2, 1], vec![0.0, 2.0]);
        let s = tape.batch_stats(x).unwrap();
        assert_eq!(tape.value(s), &[0.0, 2.0, 1.0]);
    }

    #[test]
    fn batch_stats_invariant_under_permutation() {
        let rows = [vec![0.3, -0.5], vec![0.9, 0.1], vec![-0.2, 0.4]];
        let orders: [[usize; 3]; 3] = [[0, 1, 2], [2, 0, 1], [1, 2, 0]];
        let mut outputs = Vec::new();
        for order in orders {
            let mut tape = Tape::<f64>::new();
            let data: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let x = leaf(&mut tape, &[3, 2], data);
            let s = tape.batch_stats(x).unwrap();
            outputs.push(tape.value(s).to_vec());
        }
        for other in &outputs[1..] {
            // Min and max rows are selections, hence bit-identical; the mean
            // row only sees a reordered summation.
            assert_eq!(outputs[0][..4], other[..4]);
            for (a, b) in outputs[0][4..].iter().zip(&other[4..]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[3], vec![0.4, -0.3, 1.7]);
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_target() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[3], vec![0.4, -0.3, 1.7]);
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1], vec![0.0]);
        assert!(matches!(tape.ln(x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn conv1d_identity_kernel_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        // K=1 kernel carrying the 2x2 identity channel map.
        let w = leaf(&mut tape, &[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let y = tape.conv1d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv1d_stride2_shrinks_8_to_4() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 8, 1], vec![1.0; 8]);
        let w = leaf(&mut tape, &[2, 1, 1], vec![0.5, 0.5]);
        let y = tape.conv1d(x, w, 2, 0).unwrap();
        assert_eq!(tape.shape_of(y), &[1, 4, 1]);
        assert_eq!(tape.value(y), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv2d_1x1_kernel_is_position_independent_channel_mix() {
        let mut tape = Tape::<f64>::new();
        // Two pixels with identical channel values must map identically.
        let x = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0, 2.0, 1.0, 2.0]);
        let w = leaf(&mut tape, &[1, 1, 2, 1], vec![0.3, 0.7]);
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        let out = tape.value(y);
        assert_eq!(out[0], out[1]);
        assert!((out[0] - (0.3 + 1.4)).abs() < 1e-12);
    }

    #[test]
    fn transposed_conv_doubles_even_spatial_dims() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1, 4, 6, 1], vec![0.1; 24]);
        let w = leaf(&mut tape, &[4, 4, 1, 1], vec![0.05; 16]);
        let y = tape.conv_transpose2d(x, w, 2, 1).unwrap();
        assert_eq!(tape.shape_of(y), &[1, 8, 12, 1]);
    }

    #[test]
    fn concat_last_then_split_recovers_components() {
        let mut tape = Tape::<f64>::new();
        let a = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, &[2, 1], vec![9.0, 8.0]);
        let y = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.shape_of(y), &[2, 3]);
        assert_eq!(tape.value(y), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[4], vec![0.1, 0.2, 0.3, 0.4]);
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn dropout_training_masks_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[1000], vec![1.0; 1000]);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let vals = tape.value(y);
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v == 2.0).count();
        assert!((350..650).contains(&kept), "kept {kept} of 1000 at rate 0.5");
    }

    #[test]
    fn mean_rows_reduces_each_item() {
        let mut tape = Tape::<f64>::new();
        let x = leaf(&mut tape, &[2, 2, 1], vec![1.0, 3.0, 5.0, 9.0]);
        let y = tape.mean_rows(x).unwrap();
        assert_eq!(tape.value(y), &[2.0, 7.0]);
    }
}
