use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{
    broadcast_shape, matmul_nt, matmul_raw, matmul_tn, reduce_to, split_axis, IndexMap, Tensor,
};
use crate::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Records primitive applications for a single reverse pass.
///
/// Nodes are appended in evaluation order, so node ids are already a
/// topological order. Values computed only from non-differentiable inputs
/// are stored without a backward closure and are skipped by
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if it did not participate.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let shape = var.value().shape().to_vec();
                Tensor::zeros(&shape)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(
        &self,
        value: Tensor,
        parents: Vec<usize>,
        backward: impl Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let backward: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            requires_grad,
            backward,
        });
        nodes.len() - 1
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad: true,
            backward: None,
        });
        let id = nodes.len() - 1;
        drop(nodes);
        self.var(id)
    }

    /// A detached input: never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad: false,
            backward: None,
        });
        let id = nodes.len() - 1;
        drop(nodes);
        self.var(id)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded nodes that take part in differentiation.
    pub fn grad_node_count(&self) -> usize {
        self.nodes.borrow().iter().filter(|n| n.requires_grad).count()
    }

    /// Reverse pass from a scalar output. Can be called repeatedly; each call
    /// is independent and deterministic.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got shape {:?}", out.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.id).map(|_| None).collect();
        if out.requires_grad {
            grads[output.id] = Some(Tensor::ones(out.value.shape()));
        }
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let parent_grads = backward(&g, &inputs, &node.value);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar output with respect to each of `leaves`.
///
/// Leaves that do not participate (or are detached) receive zeros.
pub fn grad<'t>(output: Var<'t>, leaves: &[Var<'t>]) -> Result<Vec<Tensor>> {
    let grads = output.tape.backward(output)?;
    Ok(leaves.iter().map(|&l| grads.wrt(l)).collect())
}

fn check_nan(t: &Tensor, op: &str) -> Result<()> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::domain(format!("{op}: NaN input")));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    fn unary(
        &self,
        value: Tensor,
        backward: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        let id = self.tape.push(value, vec![self.id], move |g, inputs, out| {
            vec![Some(backward(g, inputs[0], out))]
        });
        self.tape.var(id)
    }

    fn binary_broadcast(
        &self,
        other: Var<'t>,
        op: &'static str,
        forward: fn(f64, f64) -> f64,
        // Partial derivatives (d/da, d/db) at (a, b).
        partials: fn(f64, f64) -> (f64, f64),
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
            Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
        })?;
        let ma = IndexMap::new(a.shape(), &shape);
        let mb = IndexMap::new(b.shape(), &shape);
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|i| forward(a.data()[ma.get(i)], b.data()[mb.get(i)]))
            .collect();
        let value = Tensor::new(shape, data)?;
        let id = self
            .tape
            .push(value, vec![self.id, other.id], move |g, inputs, _| {
                let (a, b) = (inputs[0], inputs[1]);
                let mut ga = Vec::with_capacity(g.numel());
                let mut gb = Vec::with_capacity(g.numel());
                for (i, gi) in g.data().iter().enumerate() {
                    let (da, db) = partials(a.data()[ma.get(i)], b.data()[mb.get(i)]);
                    ga.push(gi * da);
                    gb.push(gi * db);
                }
                vec![
                    Some(reduce_to(ga, &ma, a.shape())),
                    Some(reduce_to(gb, &mb, b.shape())),
                ]
            });
        Ok(self.tape.var(id))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_broadcast(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = self.value().map(|v| v * c);
        self.unary(value, move |g, _, _| g.map(|v| v * c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let value = self.value().map(|v| v + c);
        self.unary(value, |g, _, _| g.clone())
    }

    /// Explicit broadcast to a larger shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        match broadcast_shape(x.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::shape(
                    "broadcast_to",
                    format!("{:?} -> {shape:?}", x.shape()),
                ))
            }
        }
        let map = IndexMap::new(x.shape(), shape);
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|i| x.data()[map.get(i)]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(value, move |g, _, _| {
            reduce_to(g.data().to_vec(), &map, &in_shape)
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let value = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.unary(value, move |g, _, _| {
            Tensor::new(in_shape.clone(), g.data().to_vec()).expect("reshape grad")
        }))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let value = Tensor::new(vec![n, m], matmul_raw(a.data(), b.data(), n, k, m))?;
        let id = self
            .tape
            .push(value, vec![self.id, other.id], move |g, inputs, _| {
                let (a, b) = (inputs[0], inputs[1]);
                let ga = matmul_nt(g.data(), b.data(), n, k, m);
                let gb = matmul_tn(a.data(), g.data(), n, k, m);
                vec![
                    Some(Tensor::new(vec![n, k], ga).expect("matmul grad")),
                    Some(Tensor::new(vec![k, m], gb).expect("matmul grad")),
                ]
            });
        Ok(self.tape.var(id))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", x.shape())));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let t = |d: &[f64], r: usize, c: usize| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            out
        };
        let value = Tensor::new(vec![c, r], t(x.data(), r, c))?;
        Ok(self.unary(value, move |g, _, _| {
            Tensor::new(vec![r, c], t(g.data(), c, r)).expect("transpose grad")
        }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let x = self.value();
        let value = Tensor::scalar(x.data().iter().sum());
        let shape = x.shape().to_vec();
        self.unary(value, move |g, _, _| Tensor::full(&shape, g.data()[0]))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {:?}", x.shape())));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let base = (o * n + j) * inner;
                for i in 0..inner {
                    out[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let in_shape = x.shape().to_vec();
        let value = Tensor::new(shape, out)?;
        Ok(self.unary(value, move |g, _, _| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for j in 0..n {
                    let base = (o * n + j) * inner;
                    for i in 0..inner {
                        gx[base + i] = g.data()[o * inner + i];
                    }
                }
            }
            Tensor::new(in_shape.clone(), gx).expect("sum_axis grad")
        }))
    }

    pub fn tanh(&self) -> Var<'t> {
        let value = self.value().map(f64::tanh);
        self.unary(value, |g, _, out| {
            let data = g.data().iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("tanh grad")
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let value = self.value().map(sigmoid);
        self.unary(value, |g, _, out| {
            let data = g.data().iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("sigmoid grad")
        })
    }

    pub fn softplus(&self) -> Var<'t> {
        let value = self.value().map(softplus);
        self.unary(value, |g, x, _| {
            let data = g.data().iter().zip(x.data()).map(|(g, x)| g * sigmoid(*x)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("softplus grad")
        })
    }

    pub fn exp(&self) -> Var<'t> {
        let value = self.value().map(f64::exp);
        self.unary(value, |g, _, out| {
            let data = g.data().iter().zip(out.data()).map(|(g, y)| g * y).collect();
            Tensor::new(g.shape().to_vec(), data).expect("exp grad")
        })
    }

    /// Natural log. Negative or NaN entries are a domain error.
    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.data().iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::domain("log of negative or NaN value"));
        }
        let value = x.map(f64::ln);
        Ok(self.unary(value, |g, x, _| {
            let data = g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect();
            Tensor::new(g.shape().to_vec(), data).expect("log grad")
        }))
    }

    pub fn square(&self) -> Var<'t> {
        let value = self.value().map(|v| v * v);
        self.unary(value, |g, x, _| {
            let data = g.data().iter().zip(x.data()).map(|(g, x)| 2.0 * g * x).collect();
            Tensor::new(g.shape().to_vec(), data).expect("square grad")
        })
    }

    /// Elementwise clamp; gradient is zero where the bound is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        let value = self.value().map(|v| v.clamp(lo, hi));
        self.unary(value, move |g, x, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                .collect();
            Tensor::new(g.shape().to_vec(), data).expect("clamp grad")
        })
    }

    /// `log Σ exp` over one axis, removing it.
    pub fn logsumexp_axis(&self, axis: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::shape(
                "logsumexp_axis",
                format!("axis {axis} of {:?}", x.shape()),
            ));
        }
        check_nan(&x, "logsumexp_axis")?;
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let mut buf = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = x.data()[(o * n + j) * inner + i];
                }
                out[o * inner + i] = crate::numerics::log_sum_exp_unchecked(&buf);
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let in_shape = x.shape().to_vec();
        let value = Tensor::new(shape, out)?;
        Ok(self.unary(value, move |g, x, out| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let lse = out.data()[o * inner + i];
                    let go = g.data()[o * inner + i];
                    if lse == f64::NEG_INFINITY {
                        continue;
                    }
                    for j in 0..n {
                        let idx = (o * n + j) * inner + i;
                        gx[idx] = go * (x.data()[idx] - lse).exp();
                    }
                }
            }
            Tensor::new(in_shape.clone(), gx).expect("logsumexp grad")
        }))
    }

    /// Prefix log-sum-exp of a rank-1 tensor.
    pub fn log_cumsum_exp(&self) -> Result<Var<'t>> {
        let x = self.value();
        if x.rank() != 1 || x.numel() == 0 {
            return Err(Error::shape("log_cumsum_exp", format!("{:?}", x.shape())));
        }
        let out = crate::numerics::log_cumsum_exp(x.data())?;
        let value = Tensor::vector(out);
        Ok(self.unary(value, |g, x, out| {
            // d out_i / d x_j = exp(x_j - out_i) for j <= i.
            let n = x.numel();
            let mut gx = vec![0.0; n];
            for (j, gxj) in gx.iter_mut().enumerate() {
                let xj = x.data()[j];
                if xj == f64::NEG_INFINITY {
                    continue;
                }
                let mut acc = 0.0;
                for i in j..n {
                    let gi = g.data()[i];
                    if gi != 0.0 {
                        acc += gi * (xj - out.data()[i]).exp();
                    }
                }
                *gxj = acc;
            }
            Tensor::vector(gx)
        }))
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let in_shape = x.shape().to_vec();
        let value = Tensor::new(shape, out)?;
        Ok(self.unary(value, move |g, _, _| {
            let mut gx = vec![0.0; outer * n * inner];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            Tensor::new(in_shape.clone(), gx).expect("narrow grad")
        }))
    }

    /// Elementwise `log N(self; mean, exp(log_std)^2)` with broadcasting.
    pub fn gaussian_log_pdf(&self, mean: Var<'t>, log_std: Var<'t>) -> Result<Var<'t>> {
        let (x, mu, ls) = (self.value(), mean.value(), log_std.value());
        for t in [&x, &mu, &ls] {
            check_nan(t, "gaussian_log_pdf")?;
        }
        if ls.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("gaussian_log_pdf: non-finite log_std"));
        }
        let shape = broadcast_shape(x.shape(), mu.shape())
            .and_then(|s| broadcast_shape(&s, ls.shape()))
            .ok_or_else(|| {
                Error::shape(
                    "gaussian_log_pdf",
                    format!("{:?}, {:?}, {:?}", x.shape(), mu.shape(), ls.shape()),
                )
            })?;
        let maps = [
            IndexMap::new(x.shape(), &shape),
            IndexMap::new(mu.shape(), &shape),
            IndexMap::new(ls.shape(), &shape),
        ];
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|i| {
                let l = ls.data()[maps[2].get(i)];
                let u = (x.data()[maps[0].get(i)] - mu.data()[maps[1].get(i)]) * (-l).exp();
                -0.5 * u * u - l - HALF_LN_2PI
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        let id = self.tape.push(
            value,
            vec![self.id, mean.id, log_std.id],
            move |g, inputs, _| {
                let (x, mu, ls) = (inputs[0], inputs[1], inputs[2]);
                let n = g.numel();
                let (mut gx, mut gm, mut gl) =
                    (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                for (i, gi) in g.data().iter().enumerate() {
                    let inv_sd = (-ls.data()[maps[2].get(i)]).exp();
                    let u = (x.data()[maps[0].get(i)] - mu.data()[maps[1].get(i)]) * inv_sd;
                    gx.push(-gi * u * inv_sd);
                    gm.push(gi * u * inv_sd);
                    gl.push(gi * (u * u - 1.0));
                }
                vec![
                    Some(reduce_to(gx, &maps[0], x.shape())),
                    Some(reduce_to(gm, &maps[1], mu.shape())),
                    Some(reduce_to(gl, &maps[2], ls.shape())),
                ]
            },
        );
        Ok(self.tape.var(id))
    }

    /// Elementwise `log Bernoulli(self; sigmoid(logits))`; `self` holds 0/1.
    pub fn bernoulli_log_pmf(&self, logits: Var<'t>) -> Result<Var<'t>> {
        check_nan(&self.value(), "bernoulli_log_pmf")?;
        check_nan(&logits.value(), "bernoulli_log_pmf")?;
        self.binary_broadcast(
            logits,
            "bernoulli_log_pmf",
            |x, l| x * l - softplus(l),
            |x, l| (l, x - sigmoid(l)),
        )
    }
}
