//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Since a
//! node can only reference earlier nodes, the tape order is a topological
//! order and the backward pass is a single reverse sweep. Nodes that do not
//! depend on any parameter are never visited by the sweep.

use super::tensor::{gemm, Layout, Tensor};
use crate::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(context: &str, expected: &[usize], got: &[usize]) -> Error {
    Error::Shape { context: context.to_string(), expected: expected.to_vec(), got: got.to_vec() }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node. Previously issued [`Var`]s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// `x·w + b` with `x: [m,k]`, `w: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k) = (xv.rows(), xv.cols());
        if wv.rank() != 2 || wv.rows() != k {
            return Err(shape_err("linear weight", &[k, wv.cols()], wv.shape()));
        }
        let n = wv.cols();
        if bv.len() != n {
            return Err(shape_err("linear bias", &[n], bv.shape()));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm(m, k, n, xv.data(), Layout::RowMajor, wv.data(), Layout::RowMajor, &mut out, 1.0);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (m, c) = (av.rows(), av.cols());
        if start > end || end > c {
            return Err(shape_err("slice_cols", &[m, c], &[start, end]));
        }
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::matrix(m, end - start, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&vals)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Row sums of a rank-2 tensor, shape `[m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.rows();
        let data = (0..m).map(|r| av.row(r).iter().sum()).collect();
        let out = Tensor::matrix(m, 1, data).expect("row sums");
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor::scalar(av.sum() / av.len() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward: loss must be scalar", &[], lv.shape()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape().to_vec()).collect();
        // Constants report zero gradient rather than whatever flowed into them.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
            Tensor::new(a.shape().to_vec(), a.data().iter().zip(g.data()).map(|(&x, &gy)| f(x, gy)).collect())
                .expect("same shape")
        };

        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), Layout::RowMajor, wv.data(), Layout::Transposed, &mut dx, 0.0);
                    acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; k * n];
                    gemm(k, m, n, xv.data(), Layout::Transposed, g.data(), Layout::RowMajor, &mut dw, 0.0);
                    acc(*w, Tensor::new(wv.shape().to_vec(), dw).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        for (d, gy) in db.iter_mut().zip(g.row(r)) {
                            *d += gy;
                        }
                    }
                    acc(*b, Tensor::new(val(*b).shape().to_vec(), db).unwrap());
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), Layout::RowMajor, bv.data(), Layout::Transposed, &mut da, 0.0);
                    acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), Layout::Transposed, g.data(), Layout::RowMajor, &mut db, 0.0);
                    acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.rg(*a) {
                    acc(*a, elementwise(bv, &|y, gy| y * gy));
                }
                if self.rg(*b) {
                    acc(*b, elementwise(av, &|x, gy| x * gy));
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mask_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
                let pick = |take_a: bool| {
                    Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(&mask_a).map(|(&gy, &ma)| if ma == take_a { gy } else { 0.0 }).collect(),
                    )
                    .unwrap()
                };
                if self.rg(*a) {
                    acc(*a, pick(true));
                }
                if self.rg(*b) {
                    acc(*b, pick(false));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| k * x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, elementwise(val(*a), &|x, gy| if x > 0.0 { gy } else { 0.0 })),
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, elementwise(y, &|t, gy| (1.0 - t * t) * gy));
            }
            Op::Exp(a) => acc(*a, elementwise(&node.value, &|e, gy| e * gy)),
            Op::Softplus(a) => acc(*a, elementwise(val(*a), &|x, gy| sigmoid(x) * gy)),
            Op::Square(a) => acc(*a, elementwise(val(*a), &|x, gy| 2.0 * x * gy)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*a, elementwise(val(*a), &|x, gy| if x > lo && x < hi { gy } else { 0.0 }));
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let mut d = Tensor::zeros(av.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    if self.rg(p) {
                        let mut d = Tensor::zeros(pv.shape());
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(p, d);
                    }
                    offset += w;
                }
            }
            Op::SumCols(a) => {
                let av = val(*a);
                let mut d = Tensor::zeros(av.shape());
                for r in 0..av.rows() {
                    let gy = g.data()[r];
                    d.row_mut(r).iter_mut().for_each(|x| *x = gy);
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Mean(a) => {
                let av = val(*a);
                acc(*a, Tensor::full(av.shape(), g.item() / av.len() as f64));
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_rows(&[[1.0, -2.0], [3.0, 0.5]]));
        let l = g.sum(p);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(p).data(), &[1.0; 4]);
    }

    #[test]
    fn half_squared_norm_gives_identity() {
        let mut g = Graph::new();
        let t = Tensor::vector(vec![0.3, -1.2, 4.0]);
        let p = g.param(t.clone());
        let sq = g.square(p);
        let s = g.sum(sq);
        let l = g.scale(s, 0.5);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(p), t);
    }

    #[test]
    fn constants_have_zero_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let p = g.param(Tensor::vector(vec![3.0, 4.0]));
        let m = g.mul(c, p).unwrap();
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(c).data(), &[0.0, 0.0]);
        assert_eq!(grads.wrt(p).data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let p = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(p), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let b = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(g.add(a, b).is_err());
    }

    /// Builds a loss touching every op and returns it with its parameter vars.
    fn composite(g: &mut Graph, x: &Tensor, w: &Tensor, b: &Tensor, v: &Tensor) -> (Var, [Var; 4]) {
        let xv = g.param(x.clone());
        let wv = g.param(w.clone());
        let bv = g.param(b.clone());
        let vv = g.param(v.clone());
        let h = g.linear(xv, wv, bv).unwrap();
        let t = g.tanh(h);
        let r = g.relu(h);
        let e = g.exp(t);
        let sp = g.softplus(r);
        let c = g.clamp(h, -0.5, 0.5);
        let mn = g.minimum(e, sp).unwrap();
        let prod = g.mul(mn, c).unwrap();
        let left = g.slice_cols(prod, 0, 2).unwrap();
        let right = g.slice_cols(t, 1, 3).unwrap();
        let cat = g.concat_cols(&[left, right]).unwrap();
        let mm = g.matmul(cat, vv).unwrap();
        let d = g.sub(mm, mm).unwrap();
        let s = g.add(mm, d).unwrap();
        let s = g.add_scalar(s, 0.3);
        let sq = g.square(s);
        let rows = g.sum_cols(sq);
        let l1 = g.mean(rows);
        let l2 = g.sum(t);
        let l2 = g.scale(l2, 0.1);
        let tot = g.sum(l1);
        let both = g.add(tot, l2).unwrap();
        (both, [xv, wv, bv, vv])
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let x = rand_tensor(&mut rng, &[5, 3]);
            let w = rand_tensor(&mut rng, &[3, 4]);
            let b = rand_tensor(&mut rng, &[4]);
            let v = rand_tensor(&mut rng, &[4, 2]);
            let mut g = Graph::new();
            let (loss, vars) = composite(&mut g, &x, &w, &b, &v);
            let grads = g.backward(loss).unwrap();
            let inputs = [x, w, b, v];
            for (k, var) in vars.iter().enumerate() {
                let analytic = grads.wrt(*var);
                let mut fd = Tensor::zeros(inputs[k].shape());
                for i in 0..inputs[k].len() {
                    let eval = |delta: f64| {
                        let mut ins = inputs.clone();
                        ins[k].data_mut()[i] += delta;
                        let mut g = Graph::new();
                        let (l, _) = composite(&mut g, &ins[0], &ins[1], &ins[2], &ins[3]);
                        g.value(l).item()
                    };
                    let h = 1e-6;
                    fd.data_mut()[i] = (eval(h) - eval(-h)) / (2.0 * h);
                }
                let diff = Tensor::new(
                    fd.shape().to_vec(),
                    fd.data().iter().zip(analytic.data()).map(|(a, b)| a - b).collect(),
                )
                .unwrap();
                let rel = diff.norm() / fd.norm().max(analytic.norm()).max(1e-12);
                assert!(rel < 1e-5, "input {k}: rel err {rel}");
            }
        }
    }
}
