//! Reverse-mode differentiation tape for the episode forward pass.
//!
//! All values are dense `f64` matrices; vectors are stored as single-column
//! matrices and scalars as 1x1. Ops are appended in topological order, so
//! backward is a single reverse sweep.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// A * B
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Neg(Var),
    /// Row sums of a d x e matrix -> d x 1.
    RowSum(Var),
    /// Mean over columns of a d x l matrix -> d x 1.
    MeanCols(Var),
    /// Repeat a d x 1 column n times -> d x n.
    BroadcastCol(Var, usize),
    /// u v^T for column vectors u (d x 1), v (k x 1) -> d x k.
    Outer(Var, Var),
    /// Column-wise softmax of an l x 1 vector.
    SoftmaxCol(Var),
    /// Concatenate d x 1 columns -> d x k.
    HStack(Vec<Var>),
    /// Stack 1 x 1 scalars into an n x 1 vector.
    StackScalars(Vec<Var>),
    /// Single entry (i, j) of a matrix -> 1 x 1.
    Entry(Var, usize, usize),
    /// Tensor scaled by a 1 x 1 scalar node.
    ScaleByScalar(Var, Var),
    /// Tensor plus a broadcast 1 x 1 scalar node.
    AddScalar(Var, Var),
    /// Euclidean distance between two d x 1 vectors -> 1 x 1.
    Euclid(Var, Var),
    /// Sum of squared entries -> 1 x 1.
    SqSum(Var),
    /// Element-wise sum of same-shaped tensors.
    SumVars(Vec<Var>),
    /// Tensor times a compile-time constant.
    ScaleConst(Var, f64),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Computation tape: eager forward values plus enough structure to replay
/// the chain rule backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[(0, 0)]
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is accumulated during backward.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(v, Op::Transpose(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        let ng = self.needs(a);
        self.push(v, Op::Neg(a), ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            out[(i, 0)] = row.sum();
        }
        let ng = self.needs(a);
        self.push(out, Op::RowSum(a), ng)
    }

    pub fn mean_cols(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let l = src.ncols() as f64;
        let mut out = Array2::zeros((src.nrows(), 1));
        for (i, row) in src.rows().into_iter().enumerate() {
            out[(i, 0)] = row.sum() / l;
        }
        let ng = self.needs(a);
        self.push(out, Op::MeanCols(a), ng)
    }

    pub fn broadcast_col(&mut self, v: Var, ncols: usize) -> Var {
        let src = self.value(v);
        debug_assert_eq!(src.ncols(), 1);
        let mut out = Array2::zeros((src.nrows(), ncols));
        for j in 0..ncols {
            out.column_mut(j).assign(&src.column(0));
        }
        let ng = self.needs(v);
        self.push(out, Op::BroadcastCol(v, ncols), ng)
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Var {
        let (a, b) = (self.value(u), self.value(v));
        debug_assert_eq!(a.ncols(), 1);
        debug_assert_eq!(b.ncols(), 1);
        let mut out = Array2::zeros((a.nrows(), b.nrows()));
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                out[(i, j)] = a[(i, 0)] * b[(j, 0)];
            }
        }
        let ng = self.needs(u) || self.needs(v);
        self.push(out, Op::Outer(u, v), ng)
    }

    /// Numerically stable softmax down a single column.
    pub fn softmax_col(&mut self, a: Var) -> Var {
        let src = self.value(a);
        debug_assert_eq!(src.ncols(), 1);
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = src.iter().map(|x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out = Array2::from_shape_vec((src.nrows(), 1), exps.iter().map(|e| e / sum).collect())
            .expect("softmax shape");
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxCol(a), ng)
    }

    pub fn hstack(&mut self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty());
        let d = self.value(cols[0]).nrows();
        let mut out = Array2::zeros((d, cols.len()));
        for (j, &c) in cols.iter().enumerate() {
            debug_assert_eq!(self.value(c).ncols(), 1);
            out.column_mut(j).assign(&self.value(c).column(0));
        }
        let ng = cols.iter().any(|&c| self.needs(c));
        self.push(out, Op::HStack(cols.to_vec()), ng)
    }

    pub fn stack_scalars(&mut self, scalars: &[Var]) -> Var {
        assert!(!scalars.is_empty());
        let mut out = Array2::zeros((scalars.len(), 1));
        for (i, &s) in scalars.iter().enumerate() {
            out[(i, 0)] = self.scalar(s);
        }
        let ng = scalars.iter().any(|&s| self.needs(s));
        self.push(out, Op::StackScalars(scalars.to_vec()), ng)
    }

    pub fn entry(&mut self, a: Var, i: usize, j: usize) -> Var {
        let v = self.value(a)[(i, j)];
        let ng = self.needs(a);
        self.push(Array2::from_elem((1, 1), v), Op::Entry(a, i, j), ng)
    }

    pub fn scale_by_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.value(a).mapv(|x| x * sv);
        let ng = self.needs(a) || self.needs(s);
        self.push(v, Op::ScaleByScalar(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let v = self.value(a).mapv(|x| x + sv);
        let ng = self.needs(a) || self.needs(s);
        self.push(v, Op::AddScalar(a, s), ng)
    }

    pub fn euclid(&mut self, a: Var, b: Var) -> Var {
        let diff = self.value(a) - self.value(b);
        let dist = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
        let ng = self.needs(a) || self.needs(b);
        self.push(Array2::from_elem((1, 1), dist), Op::Euclid(a, b), ng)
    }

    pub fn sq_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x * x).sum::<f64>();
        let ng = self.needs(a);
        self.push(Array2::from_elem((1, 1), v), Op::SqSum(a), ng)
    }

    pub fn sum_vars(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = self.value(vars[0]).clone();
        for &v in &vars[1..] {
            acc += self.value(v);
        }
        let ng = vars.iter().any(|&v| self.needs(v));
        self.push(acc, Op::SumVars(vars.to_vec()), ng)
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        let ng = self.needs(a);
        self.push(v, Op::ScaleConst(a, c), ng)
    }

    /// Mean of same-shaped column vectors.
    pub fn mean_vars(&mut self, vars: &[Var]) -> Var {
        let s = self.sum_vars(vars);
        self.scale_const(s, 1.0 / vars.len() as f64)
    }

    /// Reverse sweep from a 1x1 loss node. Returns one gradient slot per node;
    /// only nodes on a differentiable path to `loss` are populated.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::validation("backward: loss must be a 1x1 scalar"));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Tanh(a) => {
                let y = &node.value;
                let da = g * &y.mapv(|t| 1.0 - t * t);
                self.accumulate(grads, *a, da);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.mapv(|x| -x));
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.mapv(|x| -x)),
            Op::RowSum(a) => {
                let cols = self.value(*a).ncols();
                let mut da = Array2::zeros(self.value(*a).raw_dim());
                for j in 0..cols {
                    da.column_mut(j).assign(&g.column(0));
                }
                self.accumulate(grads, *a, da);
            }
            Op::MeanCols(a) => {
                let cols = self.value(*a).ncols();
                let scale = 1.0 / cols as f64;
                let mut da = Array2::zeros(self.value(*a).raw_dim());
                for j in 0..cols {
                    da.column_mut(j).assign(&g.column(0).mapv(|x| x * scale));
                }
                self.accumulate(grads, *a, da);
            }
            Op::BroadcastCol(v, ncols) => {
                let mut dv = Array2::zeros((g.nrows(), 1));
                for j in 0..*ncols {
                    for i in 0..g.nrows() {
                        dv[(i, 0)] += g[(i, j)];
                    }
                }
                self.accumulate(grads, *v, dv);
            }
            Op::Outer(u, v) => {
                let du = g.dot(self.value(*v));
                let dv = g.t().dot(self.value(*u));
                self.accumulate(grads, *u, du);
                self.accumulate(grads, *v, dv);
            }
            Op::SoftmaxCol(a) => {
                let y = &node.value;
                let dot: f64 = g.iter().zip(y.iter()).map(|(gi, yi)| gi * yi).sum();
                let da = y * &g.mapv(|gi| gi) - y.mapv(|yi| yi * dot);
                self.accumulate(grads, *a, da);
            }
            Op::HStack(cols) => {
                for (j, &c) in cols.iter().enumerate() {
                    let mut dc = Array2::zeros((g.nrows(), 1));
                    dc.column_mut(0).assign(&g.column(j));
                    self.accumulate(grads, c, dc);
                }
            }
            Op::StackScalars(ss) => {
                for (i, &s) in ss.iter().enumerate() {
                    self.accumulate(grads, s, Array2::from_elem((1, 1), g[(i, 0)]));
                }
            }
            Op::Entry(a, i, j) => {
                let mut da = Array2::zeros(self.value(*a).raw_dim());
                da[(*i, *j)] = g[(0, 0)];
                self.accumulate(grads, *a, da);
            }
            Op::ScaleByScalar(a, s) => {
                let sv = self.scalar(*s);
                self.accumulate(grads, *a, g.mapv(|x| x * sv));
                let ds: f64 = g
                    .iter()
                    .zip(self.value(*a).iter())
                    .map(|(gi, ai)| gi * ai)
                    .sum();
                self.accumulate(grads, *s, Array2::from_elem((1, 1), ds));
            }
            Op::AddScalar(a, s) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *s, Array2::from_elem((1, 1), g.sum()));
            }
            Op::Euclid(a, b) => {
                let dist = node.value[(0, 0)];
                // Subgradient 0 at coincident points.
                if dist > 1e-12 {
                    let diff = self.value(*a) - self.value(*b);
                    let scale = g[(0, 0)] / dist;
                    self.accumulate(grads, *a, diff.mapv(|x| x * scale));
                    self.accumulate(grads, *b, diff.mapv(|x| -x * scale));
                }
            }
            Op::SqSum(a) => {
                let da = self.value(*a).mapv(|x| 2.0 * x * g[(0, 0)]);
                self.accumulate(grads, *a, da);
            }
            Op::SumVars(vs) => {
                for &v in vs {
                    self.accumulate(grads, v, g.clone());
                }
            }
            Op::ScaleConst(a, c) => self.accumulate(grads, *a, g.mapv(|x| x * c)),
        }
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a node, zeros when the node is off the loss path.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` with respect to one leaf input.
    fn finite_diff<F>(f: F, x: &Array2<f64>, h: f64) -> Array2<f64>
    where
        F: Fn(&Array2<f64>) -> f64,
    {
        let mut grad = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(i, j)] += h;
            xm[(i, j)] -= h;
            grad[(i, j)] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        grad
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64, what: &str) {
        assert_eq!(a.dim(), b.dim(), "{what}: shape mismatch");
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}: analytic {x} vs numeric {y}"
            );
        }
    }

    /// Runs `build` twice: once to get the analytic gradient of the first
    /// param, once per perturbed entry for finite differences.
    fn check_single_input<F>(build: F, x: Array2<f64>, what: &str)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let p = tape.param(x.clone());
        let loss = build(&mut tape, p);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(p).cloned().unwrap_or_else(|| Array2::zeros(x.raw_dim()));

        let numeric = finite_diff(
            |xv| {
                let mut t = Tape::new();
                let p = t.param(xv.clone());
                let l = build(&mut t, p);
                t.scalar(l)
            },
            &x,
            1e-5,
        );
        assert_close(&analytic, &numeric, 1e-5, what);
    }

    #[test]
    fn matmul_transpose_tanh_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 3, 4);
        let x = random_matrix(&mut rng, 4, 2);
        check_single_input(
            |t, p| {
                let xc = t.constant(x.clone());
                let m = t.matmul(p, xc);
                let s = t.tanh(m);
                let st = t.transpose(s);
                let back = t.transpose(st);
                t.sq_sum(back)
            },
            w,
            "matmul/tanh/transpose",
        );
    }

    #[test]
    fn softmax_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 5, 1);
        let target = random_matrix(&mut rng, 5, 1);
        check_single_input(
            |t, p| {
                let y = t.softmax_col(p);
                let c = t.constant(target.clone());
                let d = t.sub(y, c);
                t.sq_sum(d)
            },
            x,
            "softmax",
        );
    }

    #[test]
    fn outer_rowsum_broadcast_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 5, 3);
        let v = random_matrix(&mut rng, 5, 1);
        check_single_input(
            |t, p| {
                let vc = t.constant(v.clone());
                let u = t.row_sum(p);
                let m = t.outer(u, vc);
                t.sq_sum(m)
            },
            w.clone(),
            "rowsum+outer lhs",
        );
        check_single_input(
            |t, p| {
                let wc = t.constant(w.clone());
                let u = t.row_sum(wc);
                let m = t.outer(u, p);
                let b = t.broadcast_col(p, 5);
                let s = t.add(m, b);
                t.sq_sum(s)
            },
            v,
            "outer rhs + broadcast",
        );
    }

    #[test]
    fn euclid_scale_entry_stack_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 4, 1);
        let b = random_matrix(&mut rng, 4, 1);
        check_single_input(
            |t, p| {
                let bc = t.constant(b.clone());
                let d1 = t.euclid(p, bc);
                let s0 = t.entry(p, 0, 0);
                let scaled = t.scale_by_scalar(p, s0);
                let d2 = t.sq_sum(scaled);
                let shifted = t.add_scalar(p, d1);
                let d3 = t.sq_sum(shifted);
                let stacked = t.stack_scalars(&[d1, d2, d3]);
                let sm = t.softmax_col(stacked);
                t.sq_sum(sm)
            },
            a,
            "euclid/entry/scale/stack",
        );
    }

    #[test]
    fn mean_and_sum_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_matrix(&mut rng, 3, 4);
        check_single_input(
            |t, p| {
                let m = t.mean_cols(p);
                let n = t.neg(m);
                let s = t.sub(m, n);
                let sc = t.scale_const(s, 0.25);
                let c1 = t.sq_sum(sc);
                let c2 = t.sq_sum(m);
                let tot = t.sum_vars(&[c1, c2]);
                let hs = t.hstack(&[m, m]);
                let c3 = t.sq_sum(hs);
                t.sum_vars(&[tot, c3])
            },
            h,
            "mean/hstack/sum",
        );
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(array![[1.0], [2.0]]);
        let p = tape.param(array![[3.0], [4.0]]);
        let s = tape.add(c, p);
        let loss = tape.sq_sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }

    #[test]
    fn euclid_zero_distance_has_zero_subgradient() {
        let mut tape = Tape::new();
        let a = tape.param(array![[1.0], [2.0]]);
        let b = tape.constant(array![[1.0], [2.0]]);
        let d = tape.euclid(a, b);
        let grads = tape.backward(d).unwrap();
        assert!(grads.get(a).is_none() || grads.get(a).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let p = tape.param(array![[1.0], [2.0]]);
        assert!(tape.backward(p).is_err());
    }
}
