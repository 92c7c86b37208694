//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its value plus whatever forward
//! context its adjoint needs. Nodes only reference earlier nodes, so the
//! node list is already a topological order and `backward` is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::losses::{bce_backward, bce_forward, iou_backward, iou_forward};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use crate::ops::norm::{self, BatchStats, BN_EPS};
use crate::ops::pool::{self, PoolGeom};
use crate::ops::resize::ResizePlan;
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// How batch normalization obtains its statistics.
#[derive(Clone, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with statistics of the current batch.
    Batch,
    /// Normalize with fixed running estimates.
    Running { mean: &'a [T], var: &'a [T] },
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    Act { x: Var, kind: Activation },
    AvgPool { x: Var, geom: PoolGeom },
    GlobalAvgPool { x: Var },
    Resize { x: Var, plan: ResizePlan },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Blend { attn: Var, a: Var, b: Var },
    Concat { xs: Vec<Var> },
    Slice { x: Var, start: usize },
    Sum { x: Var },
    WeightedBce { logits: Var, target: Vec<T>, weight: Vec<T> },
    WeightedIou { logits: Var, target: Vec<T>, weight: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Shape>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when `v` does not reach the loss.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("gradient length matches node"),
            None => Tensor::zeros(shape),
        }
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("operands {a} and {b} differ")));
    }
    Ok(())
}

/// `b` either matches `a` or is `(n, c, 1, 1)` and broadcasts over `(h, w)`.
fn broadcast_ok(op: &'static str, a: Shape, b: Shape) -> Result<bool> {
    if a == b {
        Ok(false)
    } else if b == Shape::new(a.n, a.c, 1, 1) {
        Ok(true)
    } else {
        Err(Error::shape(op, format!("cannot combine {a} with {b}")))
    }
}

fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Sign of every ReLU input, in tape order. Two passes with equal
    /// patterns sit on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Act { x, kind: Activation::Relu } = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, dilation: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, dilation)?;
        if let Some(b) = b {
            if self.value(b).len() != geom.output.c {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {} does not match {} output channels", self.shape(b), geom.output.c),
                ));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let out = conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), bias);
        let value = Tensor::from_vec(geom.output, out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Per-channel normalization. With [`NormStats::Batch`] the batch statistics
    /// are returned so the caller can update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let shape = self.shape(x);
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).len() != shape.c {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} {} does not match input {shape}", self.shape(p)),
                ));
            }
        }
        let (mean, inv_std, batch, out_stats) = match stats {
            NormStats::Batch => {
                let st = norm::batch_stats(shape, self.value(x).data())?;
                let mean: Vec<T> = st.mean.iter().map(|&m| T::lit(m)).collect();
                let inv: Vec<T> = st.var.iter().map(|&v| T::lit(1.0 / (v + BN_EPS).sqrt())).collect();
                (mean, inv, true, Some(st))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != shape.c || var.len() != shape.c {
                    return Err(Error::shape("batch_norm", format!("running stats do not match input {shape}")));
                }
                let inv = var.iter().map(|&v| T::lit(1.0 / (v.as_f64() + BN_EPS).sqrt())).collect();
                (mean.to_vec(), inv, false, None)
            }
        };
        let (y, xhat) = norm::affine_forward(
            shape,
            self.value(x).data(),
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let value = Tensor::from_vec(shape, y)?;
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch });
        Ok((v, out_stats))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = match kind {
            Activation::Relu => self.value(x).map(|v| v.max(T::zero())),
            Activation::Sigmoid => self.value(x).map(sigmoid),
        };
        self.push(value, Op::Act { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.shape(x), k, stride)?;
        let out = pool::avg_pool_forward(&geom, self.value(x).data());
        let value = Tensor::from_vec(geom.output, out)?;
        Ok(self.push(value, Op::AvgPool { x, geom }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let out = pool::global_avg_pool_forward(shape, self.value(x).data());
        let value = Tensor::from_vec(shape.with_hw(1, 1), out).expect("one value per plane");
        self.push(value, Op::GlobalAvgPool { x })
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(x);
        if out_h == 0 || out_w == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::param("resize", format!("cannot resize {shape} to {out_h}x{out_w}")));
        }
        let plan = ResizePlan::new(shape, out_h, out_w);
        let value = Tensor::from_vec(plan.output, plan.forward(self.value(x).data()))?;
        Ok(self.push(value, Op::Resize { x, plan }))
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::param("upsample_bilinear", "factor must be at least 1"));
        }
        let s = self.shape(x);
        self.resize(x, s.h * factor, s.w * factor)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = broadcast_ok("add", self.shape(a), self.shape(b))?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x + y);
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = broadcast_ok("mul", self.shape(a), self.shape(b))?;
        let value = self.zip_broadcast(a, b, bc, |x, y| x * y);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    fn zip_broadcast(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut out = av.clone();
        if broadcast {
            let plane = av.shape().plane();
            for (chunk, &s) in out.data_mut().chunks_mut(plane).zip(bv) {
                for v in chunk {
                    *v = f(*v, s);
                }
            }
        } else {
            for (v, &s) in out.data_mut().iter_mut().zip(bv) {
                *v = f(*v, s);
            }
        }
        out
    }

    /// `attn * a + (1 - attn) * b`, elementwise.
    ///
    /// The result is clamped into `[min(a, b), max(a, b)]`; for `attn` in
    /// `(0, 1)` this only absorbs rounding.
    pub fn blend(&mut self, attn: Var, a: Var, b: Var) -> Result<Var> {
        same_shape("blend", self.shape(attn), self.shape(a))?;
        same_shape("blend", self.shape(a), self.shape(b))?;
        let (av, bv, mv) = (self.value(a).data(), self.value(b).data(), self.value(attn).data());
        let data: Vec<T> = av
            .iter()
            .zip(bv)
            .zip(mv)
            .map(|((&x, &y), &m)| (y + m * (x - y)).max(x.min(y)).min(x.max(y)))
            .collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push(value, Op::Blend { attn, a, b }))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &x in xs {
            let s = self.shape(x);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape("concat_channels", format!("{s} does not align with {s0}")));
            }
            c += s.c;
        }
        let plane = s0.plane();
        let mut data = Vec::with_capacity(s0.n * c * plane);
        for n in 0..s0.n {
            for &x in xs {
                let v = self.value(x);
                let per = v.shape().c * plane;
                data.extend_from_slice(&v.data()[n * per..(n + 1) * per]);
            }
        }
        let value = Tensor::from_vec(s0.with_c(c), data)?;
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, count)?;
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    /// `sum(w * bce(z, g)) / sum(w)` on logits, computed stably.
    pub fn weighted_bce(&mut self, logits: Var, target: &Tensor<T>, weight: &Tensor<T>) -> Result<Var> {
        same_shape("weighted_bce", self.shape(logits), target.shape())?;
        same_shape("weighted_bce", target.shape(), weight.shape())?;
        let loss = bce_forward(self.value(logits).data(), target.data(), weight.data());
        Ok(self.push(
            Tensor::scalar(T::lit(loss)),
            Op::WeightedBce { logits, target: target.data().to_vec(), weight: weight.data().to_vec() },
        ))
    }

    /// `1 - (sum(w p g) + 1) / (sum(w (p + g - p g)) + 1)` with `p = sigmoid(z)`.
    pub fn weighted_iou(&mut self, logits: Var, target: &Tensor<T>, weight: &Tensor<T>) -> Result<Var> {
        same_shape("weighted_iou", self.shape(logits), target.shape())?;
        same_shape("weighted_iou", target.shape(), weight.shape())?;
        let loss = iou_forward(self.value(logits).data(), target.data(), weight.data());
        Ok(self.push(
            Tensor::scalar(T::lit(loss)),
            Op::WeightedIou { logits, target: target.data().to_vec(), weight: weight.data().to_vec() },
        ))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != Shape::scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..=loss.0].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g);
                accumulate(grads, *x, cg.dx);
                accumulate(grads, *w, cg.dweight);
                if let Some(b) = b {
                    accumulate(grads, *b, cg.dbias);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch } => {
                let shape = node.value.shape();
                let gm = self.value(*gamma).data();
                let ng = if *batch {
                    norm::train_backward(shape, g, xhat, inv_std, gm)
                } else {
                    norm::eval_backward(shape, g, xhat, inv_std, gm)
                };
                accumulate(grads, *x, ng.dx);
                accumulate(grads, *gamma, ng.dgamma);
                accumulate(grads, *beta, ng.dbeta);
            }
            Op::Act { x, kind } => {
                let dx = match kind {
                    Activation::Relu => self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                        .collect(),
                    Activation::Sigmoid => node
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&s, &d)| d * s * (T::one() - s))
                        .collect(),
                };
                accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, geom } => accumulate(grads, *x, pool::avg_pool_backward(geom, g)),
            Op::GlobalAvgPool { x } => {
                accumulate(grads, *x, pool::global_avg_pool_backward(self.shape(*x), g))
            }
            Op::Resize { x, plan } => accumulate(grads, *x, plan.backward(g)),
            Op::Add { a, b } => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, self.reduce_to(*b, node.value.shape(), g.to_vec()));
            }
            Op::Mul { a, b } => {
                let shape = node.value.shape();
                let bc = self.shape(*b) != shape;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let plane = shape.plane();
                let bat = |i: usize| if bc { bv[i / plane] } else { bv[i] };
                let da = g.iter().enumerate().map(|(i, &d)| d * bat(i)).collect();
                let db = g.iter().zip(av).map(|(&d, &x)| d * x).collect();
                accumulate(grads, *a, da);
                accumulate(grads, *b, self.reduce_to(*b, shape, db));
            }
            Op::Blend { attn, a, b } => {
                let (av, bv, mv) = (self.value(*a).data(), self.value(*b).data(), self.value(*attn).data());
                let dm = g.iter().zip(av.iter().zip(bv)).map(|(&d, (&x, &y))| d * (x - y)).collect();
                let da = g.iter().zip(mv).map(|(&d, &m)| d * m).collect();
                let db = g.iter().zip(mv).map(|(&d, &m)| d * (T::one() - m)).collect();
                accumulate(grads, *attn, dm);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Concat { xs } => {
                let shape = node.value.shape();
                let plane = shape.plane();
                let mut offset = 0;
                for &x in xs {
                    let cx = self.shape(x).c;
                    let mut dx = Vec::with_capacity(shape.n * cx * plane);
                    for n in 0..shape.n {
                        let base = (n * shape.c + offset) * plane;
                        dx.extend_from_slice(&g[base..base + cx * plane]);
                    }
                    accumulate(grads, x, dx);
                    offset += cx;
                }
            }
            Op::Slice { x, start } => {
                let src = self.shape(*x);
                let count = node.value.shape().c;
                let plane = src.plane();
                let mut dx = vec![T::zero(); src.numel()];
                for n in 0..src.n {
                    let dst = (n * src.c + start) * plane;
                    let from = n * count * plane;
                    dx[dst..dst + count * plane].copy_from_slice(&g[from..from + count * plane]);
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum { x } => accumulate(grads, *x, vec![g[0]; self.value(*x).len()]),
            Op::WeightedBce { logits, target, weight } => {
                let d = bce_backward(self.value(*logits).data(), target, weight, g[0]);
                accumulate(grads, *logits, d);
            }
            Op::WeightedIou { logits, target, weight } => {
                let d = iou_backward(self.value(*logits).data(), target, weight, g[0]);
                accumulate(grads, *logits, d);
            }
        }
    }

    /// Sums a full-shape gradient down to `v`'s broadcast shape when needed.
    fn reduce_to(&self, v: Var, full: Shape, g: Vec<T>) -> Vec<T> {
        if self.shape(v) == full {
            return g;
        }
        g.chunks(full.plane()).map(|c| c.iter().fold(T::zero(), |a, &b| a + b)).collect()
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(d) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(Shape::new(1, 2, 1, 2), &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::<f64>::new();
        let xs = [1.0, -2.0, 3.0, 0.5];
        let x = tape.leaf(t(Shape::new(1, 1, 2, 2), &xs));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        let expect: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.get(x).unwrap(), expect.as_slice());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreached_nodes_have_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::ones(Shape::new(1, 1, 1, 2)));
        let b = tape.leaf(Tensor::ones(Shape::new(1, 1, 1, 2)));
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.tensor(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn incompatible_broadcast_is_shape_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 2, 2, 2)));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 3, 1, 1)));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
    }
}
