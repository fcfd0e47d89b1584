//! Tape-based reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value on the tape is viewed as a `rows x cols` matrix; a batch is a
//! matrix with one example per row and a scalar is `1 x 1`. Nodes are
//! appended in evaluation order, so a reverse sweep over indices is a valid
//! topological order for the backward pass.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // float methods come from std when it is linked
use num_traits::Float;

use crate::error::{ensure, invalid, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    /// `x * w^T + b` with `x: n x in`, `w: out x in`, `b: 1 x out`.
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { a: NodeId, scale: f64 },
    Silu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Square(NodeId),
    ConcatCols(NodeId, NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumCols(NodeId),
    SoftmaxRows(NodeId),
    SelectCol { a: NodeId, col: usize },
    Clamp { a: NodeId, lo: f64, hi: f64 },
}

impl Op {
    fn inputs(&self) -> [Option<NodeId>; 3] {
        use Op::*;
        match *self {
            Leaf => [None, None, None],
            Linear { x, w, b } => [Some(x), Some(w), b],
            Add(a, b) | Sub(a, b) | Mul(a, b) | ConcatCols(a, b) => [Some(a), Some(b), None],
            Affine { a, .. }
            | Silu(a)
            | Tanh(a)
            | Exp(a)
            | Ln(a)
            | Square(a)
            | SumAll(a)
            | MeanAll(a)
            | SumCols(a)
            | SoftmaxRows(a)
            | SelectCol { a, .. }
            | Clamp { a, .. } => [Some(a), None, None],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward sweep, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when `id` does not influence the seed.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zeros shaped like `like` when it was unreachable.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

fn silu_grad(v: f64) -> f64 {
    let s = 1.0 / (1.0 + (-v).exp());
    s * (1.0 + v * (1.0 - s))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let (r, c) = value.dims2();
        let value = if value.shape().len() == 2 { value } else { value.reshape(vec![r, c]).unwrap() };
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.dims2()
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        ensure!(
            self.dims(a) == self.dims(b),
            "operand shapes differ: {:?} vs {:?}",
            self.dims(a),
            self.dims(b)
        );
        Ok(())
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (n, fan_in) = self.dims(x);
        let (out, w_in) = self.dims(w);
        ensure!(fan_in == w_in, "linear: input has {} features, weight expects {}", fan_in, w_in);
        if let Some(b) = b {
            ensure!(self.dims(b) == (1, out), "linear: bias must be 1 x {}", out);
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y = vec![0.0; n * out];
        for i in 0..n {
            let xr = &xv[i * fan_in..(i + 1) * fan_in];
            for o in 0..out {
                let wr = &wv[o * fan_in..(o + 1) * fan_in];
                y[i * out + o] = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for i in 0..n {
                for o in 0..out {
                    y[i * out + o] += bv[o];
                }
            }
        }
        Ok(self.push(Tensor::matrix(n, out, y)?, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(v, Op::Affine { a, scale })
    }

    pub fn scale(&mut self, a: NodeId, scale: f64) -> NodeId {
        self.affine(a, scale, 0.0)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(silu);
        self.push(v, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::MeanAll(a))
    }

    /// Row sums: `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (n, _) = t.dims2();
        let data = (0..n).map(|i| t.row_slice(i).iter().sum()).collect();
        let v = Tensor::matrix(n, 1, data).unwrap();
        self.push(v, Op::SumCols(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (n, c) = t.dims2();
        let mut data = Vec::with_capacity(n * c);
        for i in 0..n {
            let row = t.row_slice(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            data.extend(e.iter().map(|v| v / z));
        }
        let v = Tensor::matrix(n, c, data).unwrap();
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn select_col(&mut self, a: NodeId, col: usize) -> Result<NodeId> {
        let t = self.value(a);
        let (n, c) = t.dims2();
        ensure!(col < c, "column {} out of range for {} columns", col, c);
        let data = (0..n).map(|i| t.get(i, col)).collect();
        Ok(self.push(Tensor::matrix(n, 1, data)?, Op::SelectCol { a, col }))
    }

    /// Elementwise clamp; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp { a, lo, hi })
    }

    /// Whether `target` is reachable backwards from `from`.
    pub fn depends_on(&self, from: NodeId, target: NodeId) -> bool {
        if !self.contains(from) || !self.contains(target) || target.0 > from.0 {
            return false;
        }
        let mut live = vec![false; from.0 + 1];
        live[from.0] = true;
        for i in (target.0..=from.0).rev() {
            if !live[i] {
                continue;
            }
            if i == target.0 {
                return true;
            }
            for inp in self.nodes[i].op.inputs().into_iter().flatten() {
                live[inp.0] = true;
            }
        }
        false
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        ensure!(self.contains(output), "node {} is not on this tape", output.0);
        ensure!(
            self.dims(output) == (1, 1),
            "backward needs a scalar output, got {:?}",
            self.dims(output)
        );
        self.backward_with_seed(output, Tensor::scalar(1.0))
    }

    /// Vector-Jacobian product: propagate `seed` (shaped like `output`) to every ancestor.
    pub fn backward_with_seed(&self, output: NodeId, seed: Tensor) -> Result<Gradients> {
        ensure!(self.contains(output), "node {} is not on this tape", output.0);
        ensure!(
            seed.dims2() == self.dims(output),
            "seed shape {:?} does not match node shape {:?}",
            seed.dims2(),
            self.dims(output)
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let (r, c) = seed.dims2();
        grads[output.0] = Some(seed.reshape(vec![r, c])?);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let mut acc = |id: NodeId, delta: Vec<f64>| {
            let slot = &mut grads[id.0];
            match slot {
                Some(t) => t.data_mut().iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                None => {
                    let shape = self.nodes[id.0].value.shape().to_vec();
                    *slot = Some(Tensor::new(shape, delta).unwrap());
                }
            }
        };
        let elementwise = |a: NodeId, f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<f64> {
            let x = self.nodes[a.0].value.data();
            let y = node.value.data();
            gd.iter().zip(x).zip(y).map(|((&g, &x), &y)| f(g, x, y)).collect()
        };
        match node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (n, fan_in) = self.dims(x);
                let (out, _) = self.dims(w);
                let xv = self.nodes[x.0].value.data();
                let wv = self.nodes[w.0].value.data();
                let mut gx = vec![0.0; n * fan_in];
                let mut gw = vec![0.0; out * fan_in];
                for s in 0..n {
                    for o in 0..out {
                        let go = gd[s * out + o];
                        if go == 0.0 {
                            continue;
                        }
                        let wr = &wv[o * fan_in..(o + 1) * fan_in];
                        let xr = &xv[s * fan_in..(s + 1) * fan_in];
                        let gxr = &mut gx[s * fan_in..(s + 1) * fan_in];
                        for k in 0..fan_in {
                            gxr[k] += go * wr[k];
                        }
                        let gwr = &mut gw[o * fan_in..(o + 1) * fan_in];
                        for k in 0..fan_in {
                            gwr[k] += go * xr[k];
                        }
                    }
                }
                if let Some(b) = b {
                    let mut gb = vec![0.0; out];
                    for s in 0..n {
                        for o in 0..out {
                            gb[o] += gd[s * out + o];
                        }
                    }
                    acc(b, gb);
                }
                acc(x, gx);
                acc(w, gw);
            }
            Op::Add(a, b) => {
                acc(a, gd.to_vec());
                acc(b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(a, gd.to_vec());
                acc(b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                acc(a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::Affine { a, scale } => acc(a, gd.iter().map(|g| g * scale).collect()),
            Op::Silu(a) => acc(a, elementwise(a, &|g, x, _| g * silu_grad(x))),
            Op::Tanh(a) => acc(a, elementwise(a, &|g, _, y| g * (1.0 - y * y))),
            Op::Exp(a) => acc(a, elementwise(a, &|g, _, y| g * y)),
            Op::Ln(a) => acc(a, elementwise(a, &|g, x, _| g / x)),
            Op::Square(a) => acc(a, elementwise(a, &|g, x, _| 2.0 * g * x)),
            Op::ConcatCols(a, b) => {
                let (n, ca) = self.dims(a);
                let (_, cb) = self.dims(b);
                let mut ga = Vec::with_capacity(n * ca);
                let mut gb = Vec::with_capacity(n * cb);
                for s in 0..n {
                    let row = &gd[s * (ca + cb)..(s + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(a, ga);
                acc(b, gb);
            }
            Op::SumAll(a) => acc(a, vec![gd[0]; self.nodes[a.0].value.len()]),
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len();
                acc(a, vec![gd[0] / n as f64; n]);
            }
            Op::SumCols(a) => {
                let (n, c) = self.dims(a);
                let delta = (0..n * c).map(|k| gd[k / c]).collect();
                acc(a, delta);
            }
            Op::SoftmaxRows(a) => {
                let (n, c) = self.dims(a);
                let y = node.value.data();
                let mut delta = vec![0.0; n * c];
                for s in 0..n {
                    let yr = &y[s * c..(s + 1) * c];
                    let gr = &gd[s * c..(s + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        delta[s * c + k] = yr[k] * (gr[k] - dot);
                    }
                }
                acc(a, delta);
            }
            Op::SelectCol { a, col } => {
                let (n, c) = self.dims(a);
                let mut delta = vec![0.0; n * c];
                for s in 0..n {
                    delta[s * c + col] = gd[s];
                }
                acc(a, delta);
            }
            Op::Clamp { a, lo, hi } => {
                acc(a, elementwise(a, &|g, x, _| if x < lo || x > hi { 0.0 } else { g }));
            }
        }
    }

    /// Gradient of a scalar `loss` with respect to an `intermediate` node.
    pub fn grad_wrt_intermediate(&self, loss: NodeId, intermediate: NodeId) -> Result<Tensor> {
        if !self.depends_on(loss, intermediate) {
            return Err(invalid("intermediate is not on the recorded path to the loss"));
        }
        let grads = self.backward(loss)?;
        Ok(grads.get_or_zeros(intermediate, self.value(intermediate)))
    }

    /// Propagate an upstream gradient at `intermediate` back to `params`,
    /// returning the concatenated parameter gradient.
    pub fn backprop_through(
        &self,
        intermediate_grad: &Tensor,
        intermediate: NodeId,
        params: &[NodeId],
    ) -> Result<Vec<f64>> {
        ensure!(self.contains(intermediate), "intermediate is not on this tape");
        let grads = self.backward_with_seed(intermediate, intermediate_grad.clone())?;
        let mut out = Vec::new();
        for &p in params {
            let like = self.value(p);
            match grads.get(p) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(core::iter::repeat_n(0.0, like.len())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fd_check(build: impl Fn(&mut Tape, NodeId) -> NodeId, x0: Vec<f64>, rows: usize) {
        let cols = x0.len() / rows;
        let eval = |x: &[f64]| {
            let mut t = Tape::new();
            let leaf = t.leaf(Tensor::matrix(rows, cols, x.to_vec()).unwrap());
            let out = build(&mut t, leaf);
            t.value(out).data()[0]
        };
        let mut t = Tape::new();
        let leaf = t.leaf(Tensor::matrix(rows, cols, x0.clone()).unwrap());
        let out = build(&mut t, leaf);
        let g = t.backward(out).unwrap();
        let g = g.get_or_zeros(leaf, t.value(leaf));
        let h = 1e-6;
        for k in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let an = g.data()[k];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "coord {}: fd {} vs {}", k, fd, an);
        }
    }

    const X: [f64; 6] = [0.3, -1.2, 0.7, 2.0, -0.4, 0.9];

    #[test]
    fn elementwise_ops_match_finite_differences() {
        fd_check(|t, x| { let y = t.silu(x); t.sum_all(y) }, X.to_vec(), 2);
        fd_check(|t, x| { let y = t.tanh(x); t.mean_all(y) }, X.to_vec(), 2);
        fd_check(|t, x| { let y = t.exp(x); t.sum_all(y) }, X.to_vec(), 3);
        fd_check(|t, x| { let y = t.square(x); let z = t.affine(y, 0.5, 1.0); let l = t.ln(z); t.sum_all(l) }, X.to_vec(), 1);
        fd_check(|t, x| { let y = t.mul(x, x).unwrap(); let z = t.sub(y, x).unwrap(); let w = t.add(z, x).unwrap(); t.sum_all(w) }, X.to_vec(), 2);
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        fd_check(|t, x| { let s = t.softmax_rows(x); let c = t.select_col(s, 1).unwrap(); let l = t.ln(c); t.sum_all(l) }, X.to_vec(), 2);
        fd_check(|t, x| { let c = t.concat_cols(x, x).unwrap(); let s = t.square(c); let r = t.sum_cols(s); let e = t.exp(r); t.mean_all(e) }, X.to_vec(), 3);
        fd_check(|t, x| { let c = t.clamp(x, -1.0, 1.0); let s = t.square(c); t.sum_all(s) }, X.to_vec(), 2);
    }

    #[test]
    fn linear_matches_finite_differences() {
        // x is 2x3, weight 2x3 and bias 1x2 are fixed leaves
        fd_check(
            |t, x| {
                let w = t.leaf(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.5, 0.4, -0.6]).unwrap());
                let b = t.leaf(Tensor::row(vec![0.05, -0.1]));
                let y = t.linear(x, w, Some(b)).unwrap();
                let s = t.silu(y);
                t.sum_all(s)
            },
            X.to_vec(),
            2,
        );
        fd_check(
            |t, w| {
                let x = t.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, -0.5, 0.3]).unwrap());
                let y = t.linear(x, w, None).unwrap();
                let s = t.square(y);
                t.sum_all(s)
            },
            X.to_vec(),
            3,
        );
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
        assert!(t.backward(NodeId(5)).is_err());
    }

    #[test]
    fn scalar_chain_rule_split() {
        // L = x^2 with x = 2 * theta at theta = 1
        let mut t = Tape::new();
        let theta = t.leaf(Tensor::scalar(1.0));
        let x = t.scale(theta, 2.0);
        let l = t.square(x);
        let dl_dx = t.grad_wrt_intermediate(l, x).unwrap();
        assert_eq!(dl_dx.data(), &[4.0]);
        let composed = t.backprop_through(&dl_dx, x, &[theta]).unwrap();
        assert_eq!(composed, vec![8.0]);
        let direct = t.backward(l).unwrap();
        assert_eq!(direct.get(theta).unwrap().data(), &[8.0]);
    }

    #[test]
    fn intermediate_off_path_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(1.0));
        let b = t.leaf(Tensor::scalar(2.0));
        let l = t.square(a);
        assert!(t.grad_wrt_intermediate(l, b).is_err());
        assert!(t.grad_wrt_intermediate(l, NodeId(99)).is_err());
    }
}
