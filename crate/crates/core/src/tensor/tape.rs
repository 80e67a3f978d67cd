//! Tape-based reverse-mode differentiation over [`Tensor`] primitives.
//!
//! A [`Tape`] is built fresh for each forward evaluation. Nodes are appended
//! in evaluation order, so every node's inputs precede it and a single
//! reverse sweep from the root visits nodes in a valid order.

use super::{
    channel_moments, gemm, max_points_raw, mean_points_raw, normalize_affine, transpose_raw,
    RunningStats, Tensor, BN_EPSILON,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, inv_std: Vec<f64>, train: bool },
    MeanPoints(NodeId),
    MaxPoints(NodeId, Vec<usize>),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `id`, or `None` when `id` does not require a gradient.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `id`; zeros when the root does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        self.adjoints[id.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adds an input. Only leaves with `requires_grad` receive adjoints.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Sign pattern (`input > 0`) of every ReLU on the tape, in order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = super::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x[R×C] + bias[C]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (_, cols) = self.value(x).dims2()?;
        let b = self.value(bias);
        if b.len() != cols {
            return Err(Error::shape(format!("bias of length {} for {cols} columns", b.len())));
        }
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_exact_mut(cols) {
            for (v, &bv) in row.iter_mut().zip(self.nodes[bias.0].value.data()) {
                *v += bv;
            }
        }
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    fn zip_same(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same(a, b, |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same(a, b, |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.zip_same(a, b, |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let t = self.value(x);
        let value = Tensor {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v * factor).collect(),
        };
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = super::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Train-mode batch normalization over rows of `x[B×C]`.
    ///
    /// Returns the output node and the batch mean and variance; folding them
    /// into running statistics is left to the caller.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let (rows, cols) = self.value(x).dims2()?;
        let (mean, var) = channel_moments(self.value(x).data(), rows, cols);
        let node = self.batch_norm_with(x, gamma, beta, mean.clone(), &var, true)?;
        Ok((node, mean, var))
    }

    /// Eval-mode batch normalization using populated running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: &RunningStats,
    ) -> Result<NodeId> {
        if !running.is_populated() {
            return Err(Error::State("eval-mode batch_norm before running stats exist".into()));
        }
        self.batch_norm_with(x, gamma, beta, running.mean().to_vec(), running.var(), false)
    }

    fn batch_norm_with(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: &[f64],
        train: bool,
    ) -> Result<NodeId> {
        let (_, cols) = self.value(x).dims2()?;
        if self.value(gamma).len() != cols || self.value(beta).len() != cols || mean.len() != cols {
            return Err(Error::shape(format!("batch_norm: {cols} channels expected")));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let data = normalize_affine(
            self.value(x).data(),
            cols,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, rg))
    }

    /// Mean over the point axis of `x[B×M×C]`.
    pub fn mean_points(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, m, c) = self.value(x).dims3()?;
        let value = Tensor::new(vec![b, c], mean_points_raw(self.value(x).data(), b, m, c))?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MeanPoints(x), rg))
    }

    /// Max over the point axis of `x[B×M×C]`.
    pub fn max_points(&mut self, x: NodeId) -> Result<NodeId> {
        let (b, m, c) = self.value(x).dims3()?;
        let (data, arg) = max_points_raw(self.value(x).data(), b, m, c);
        let value = Tensor::new(vec![b, c], data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPoints(x, arg), rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.needs(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[root.0].requires_grad {
            adj[root.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        // Reachable nodes that require a gradient but received no flow (for
        // example through a ReLU that is off everywhere) get explicit zeros.
        let adjoints = (0..self.nodes.len())
            .map(|i| {
                let node = &self.nodes[i];
                if !node.requires_grad {
                    return None;
                }
                let data = adj
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor { shape: node.value.shape().to_vec(), data })
            })
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { adjoints, shapes })
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], id: NodeId, contribution: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut adj[id.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn accumulate_with(
        &self,
        adj: &mut [Option<Vec<f64>>],
        id: NodeId,
        f: impl FnOnce() -> Vec<f64>,
    ) {
        if self.nodes[id.0].requires_grad {
            let c = f();
            self.accumulate(adj, id, c);
        }
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = self.value(a).dims2()?;
                let (_, n) = self.value(b).dims2()?;
                self.accumulate_with(adj, a, || {
                    let bt = transpose_raw(self.value(b).data(), k, n);
                    gemm(g, &bt, m, n, k)
                });
                self.accumulate_with(adj, b, || {
                    let at = transpose_raw(self.value(a).data(), m, k);
                    gemm(&at, g, k, m, n)
                });
            }
            &Op::AddBias(x, bias) => {
                let cols = self.value(bias).len();
                self.accumulate_with(adj, bias, || {
                    let mut db = vec![0.0; cols];
                    for row in g.chunks_exact(cols) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    db
                });
                self.accumulate_with(adj, x, || g.to_vec());
            }
            &Op::Add(a, b) => {
                self.accumulate_with(adj, a, || g.to_vec());
                self.accumulate_with(adj, b, || g.to_vec());
            }
            &Op::Sub(a, b) => {
                self.accumulate_with(adj, a, || g.to_vec());
                self.accumulate_with(adj, b, || g.iter().map(|v| -v).collect());
            }
            &Op::Mul(a, b) => {
                self.accumulate_with(adj, a, || {
                    g.iter().zip(self.value(b).data()).map(|(u, v)| u * v).collect()
                });
                self.accumulate_with(adj, b, || {
                    g.iter().zip(self.value(a).data()).map(|(u, v)| u * v).collect()
                });
            }
            &Op::Scale(x, f) => self.accumulate_with(adj, x, || g.iter().map(|v| v * f).collect()),
            &Op::Relu(x) => self.accumulate_with(adj, x, || {
                g.iter()
                    .zip(self.value(x).data())
                    .map(|(&u, &v)| if v > 0.0 { u } else { 0.0 })
                    .collect()
            }),
            Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                self.batch_norm_backward(g, *x, *gamma, *beta, mean, inv_std, *train, adj)?;
            }
            &Op::MeanPoints(x) => self.accumulate_with(adj, x, || {
                let (b, m, c) = self.value(x).dims3().expect("checked at record time");
                let mut dx = Vec::with_capacity(b * m * c);
                for row in g.chunks_exact(c) {
                    for _ in 0..m {
                        dx.extend(row.iter().map(|v| v / m as f64));
                    }
                }
                dx
            }),
            Op::MaxPoints(x, arg) => self.accumulate_with(adj, *x, || {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &v) in arg.iter().zip(g) {
                    dx[src] += v;
                }
                dx
            }),
            &Op::Reshape(x) => self.accumulate_with(adj, x, || g.to_vec()),
            &Op::Sum(x) => self.accumulate_with(adj, x, || vec![g[0]; self.value(x).len()]),
            &Op::Mean(x) => self.accumulate_with(adj, x, || {
                let len = self.value(x).len();
                vec![g[0] / len as f64; len]
            }),
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_backward(
        &self,
        g: &[f64],
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[f64],
        inv_std: &[f64],
        train: bool,
        adj: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        let gam = self.value(gamma).data();
        let scale: Vec<f64> = gam.iter().zip(inv_std).map(|(g, s)| g * s).collect();
        let need_sums = train || self.nodes[gamma.0].requires_grad || self.nodes[beta.0].requires_grad;
        let mut sum_dy = vec![0.0; cols];
        let mut sum_dy_xhat = vec![0.0; cols];
        if need_sums {
            for (grow, xrow) in g.chunks_exact(cols).zip(xv.data().chunks_exact(cols)) {
                for c in 0..cols {
                    let xhat = (xrow[c] - mean[c]) * inv_std[c];
                    sum_dy[c] += grow[c];
                    sum_dy_xhat[c] += grow[c] * xhat;
                }
            }
        }
        self.accumulate_with(adj, x, || {
            let mut dx = vec![0.0; g.len()];
            let n = rows as f64;
            for ((drow, grow), xrow) in dx.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(xv.data().chunks_exact(cols)) {
                if train {
                    for c in 0..cols {
                        let xhat = (xrow[c] - mean[c]) * inv_std[c];
                        drow[c] = scale[c] * (grow[c] - sum_dy[c] / n - xhat * sum_dy_xhat[c] / n);
                    }
                } else {
                    for ((d, &gv), &s) in drow.iter_mut().zip(grow).zip(&scale) {
                        *d = s * gv;
                    }
                }
            }
            dx
        });
        self.accumulate_with(adj, gamma, || sum_dy_xhat.clone());
        self.accumulate_with(adj, beta, || sum_dy.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vec_leaf(tape: &mut Tape, v: &[f64], rg: bool) -> NodeId {
        tape.leaf(Tensor::vector(v.to_vec()).unwrap(), rg)
    }

    #[test]
    fn sum_of_squares() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0], true);
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_root_gives_zero_gradients() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, -2.0], true);
        let c = vec_leaf(&mut tape, &[5.0], false);
        let root = tape.sum(c);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_masks() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[3.0, -3.0], true);
        let y = tape.relu(x);
        let root = tape.sum(y);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 0.0]);

        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.0], true);
        let y = tape.relu(x);
        let root = tape.sum(y);
        assert_eq!(tape.backward(root).unwrap().wrt(x).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0], true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn reachable_nodes_all_get_adjoints() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[-1.0, -2.0], true);
        let y = tape.relu(x);
        let z = tape.scale(y, 3.0);
        let root = tape.sum(z);
        let grads = tape.backward(root).unwrap();
        for id in [x, y, z, root] {
            assert!(grads.get(id).is_some());
        }
    }

    /// `sum(relu(W x + b))` against central differences.
    #[test]
    fn affine_relu_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

        let eval = |x: &[f64]| -> (f64, Vec<f64>, Vec<bool>) {
            let mut tape = Tape::new();
            let xn = tape.leaf(Tensor::matrix(1, 5, x.to_vec()).unwrap(), true);
            let wn = tape.leaf(Tensor::matrix(5, 4, w.clone()).unwrap(), false);
            let bn = vec_leaf(&mut tape, &b, false);
            let h = tape.matmul(xn, wn).unwrap();
            let h = tape.add_bias(h, bn).unwrap();
            let h = tape.relu(h);
            let root = tape.sum(h);
            let g = tape.backward(root).unwrap().wrt(xn).into_data();
            (tape.value(root).item().unwrap(), g, tape.relu_pattern())
        };

        let (_, grad, pattern) = eval(&x0);
        let h = 1e-5;
        for i in 0..5 {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let (fp, _, pp) = eval(&xp);
            let (fm, _, pm) = eval(&xm);
            if pp != pattern || pm != pattern {
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "coord {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn batch_norm_train_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gamma = [1.3, -0.7, 0.4];
        let beta = [0.1, 0.2, -0.3];
        let weights: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();

        let eval = |x: &[f64], gam: &[f64]| -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
            let mut tape = Tape::new();
            let xn = tape.leaf(Tensor::matrix(4, 3, x.to_vec()).unwrap(), true);
            let gn = vec_leaf(&mut tape, gam, true);
            let bn = vec_leaf(&mut tape, &beta, true);
            let wn = tape.leaf(Tensor::matrix(4, 3, weights.clone()).unwrap(), false);
            let (y, _, _) = tape.batch_norm_train(xn, gn, bn).unwrap();
            let y = tape.mul(y, wn).unwrap();
            let root = tape.sum(y);
            let mut g = tape.backward(root).unwrap();
            (
                tape.value(root).item().unwrap(),
                g.take(xn).into_data(),
                g.take(gn).into_data(),
                g.take(bn).into_data(),
            )
        };
        let (_, gx, gg, gb) = eval(&x0, &gamma);
        let h = 1e-5;
        for i in 0..12 {
            let mut xp = x0.clone();
            xp[i] += h;
            let mut xm = x0.clone();
            xm[i] -= h;
            let fd = (eval(&xp, &gamma).0 - eval(&xm, &gamma).0) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-4 * fd.abs().max(1e-6), "{fd} vs {}", gx[i]);
        }
        for c in 0..3 {
            let mut gp = gamma;
            gp[c] += h;
            let mut gm = gamma;
            gm[c] -= h;
            let fd = (eval(&x0, &gp).0 - eval(&x0, &gm).0) / (2.0 * h);
            assert!((fd - gg[c]).abs() <= 1e-4 * fd.abs().max(1e-6));
        }
        // Beta enters linearly: its gradient is the column sum of the weights.
        for (c, g) in gb.iter().enumerate() {
            let col: f64 = weights.iter().skip(c).step_by(3).sum();
            assert!((g - col).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_gradients() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 5.0, 3.0, 4.0]).unwrap(), true);
        let mx = tape.max_points(x).unwrap();
        let mn = tape.mean_points(x).unwrap();
        let both = tape.add(mx, mn).unwrap();
        let root = tape.sum(both);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.5, 1.5, 1.5, 0.5]);
    }
}
