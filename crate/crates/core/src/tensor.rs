//! Dense row-major matrices and a reverse-mode tape over the handful of
//! primitives the graph network uses.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(
    alpha: f64,
    a: &Tensor2,
    transpose_a: bool,
    b: &Tensor2,
    transpose_b: bool,
    beta: f64,
    c: &mut Tensor2,
) {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if transpose_b { b.rows } else { b.cols };
    debug_assert_eq!(c.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if transpose_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: the strides describe exactly the row-major buffers of `a`, `b`
    // and `c`, whose lengths match the (m, k, n) extents checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// `x · w + b`, with `b` broadcast over rows.
pub fn affine(w: &Tensor2, b: &Tensor2, x: &Tensor2) -> Result<Tensor2> {
    if x.cols != w.rows || b.rows != 1 || b.cols != w.cols {
        return Err(Error::Shape(format!(
            "affine: x {:?}, w {:?}, b {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor2::zeros(x.rows, w.cols);
    for row in out.data.chunks_mut(w.cols.max(1)) {
        row.copy_from_slice(&b.data);
    }
    gemm(1.0, x, false, w, false, 1.0, &mut out);
    Ok(out)
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(x: &mut Tensor2) {
    for v in &mut x.data {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

/// Sums message rows into their receivers; receivers without messages get
/// zero rows.
pub fn scatter_sum(messages: &Tensor2, receivers: &[usize], n_nodes: usize) -> Result<Tensor2> {
    if messages.rows != receivers.len() {
        return Err(Error::Shape(format!(
            "scatter_sum: {} messages but {} receiver ids",
            messages.rows,
            receivers.len()
        )));
    }
    let mut out = Tensor2::zeros(n_nodes, messages.cols);
    for (k, &r) in receivers.iter().enumerate() {
        if r >= n_nodes {
            return Err(Error::Index {
                index: r,
                len: n_nodes,
            });
        }
        for (o, m) in out.row_mut(r).iter_mut().zip(messages.row(k)) {
            *o += m;
        }
    }
    Ok(out)
}

fn same_shape(op: &str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference over all entries.
pub fn l1_loss(pred: &Tensor2, target: &Tensor2) -> Result<f64> {
    same_shape("l1_loss", pred, target)?;
    if pred.data.is_empty() {
        return Err(Error::Shape("l1_loss of an empty tensor".into()));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / pred.data.len() as f64)
}

/// Places `b`'s columns to the right of `a`'s.
pub fn concat_cols(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.rows != b.rows {
        return Err(Error::Shape(format!(
            "concat_cols: {} vs {} rows",
            a.rows, b.rows
        )));
    }
    let cols = a.cols + b.cols;
    let mut data = Vec::with_capacity(a.rows * cols);
    for r in 0..a.rows {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Ok(Tensor2 {
        rows: a.rows,
        cols,
        data,
    })
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    ScatterSum { x: Var, receivers: Vec<usize> },
    L1 { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    requires_grad: bool,
}

/// Records forward computations in topological order so that
/// [`Tape::backward`] can replay them in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value gradients are taken with respect to.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value no gradient flows into.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = affine(self.value(w), self.value(b), self.value(x))?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Affine { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        let rg = self.needs(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += v;
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_cols(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::ConcatCols { a, b }, rg))
    }

    pub fn scatter_sum(&mut self, x: Var, receivers: &[usize], n_nodes: usize) -> Result<Var> {
        let out = scatter_sum(self.value(x), receivers, n_nodes)?;
        let rg = self.needs(x);
        Ok(self.push(
            out,
            Op::ScatterSum {
                x,
                receivers: receivers.to_vec(),
            },
            rg,
        ))
    }

    /// Mean absolute error as a 1×1 value.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = l1_loss(self.value(pred), self.value(target))?;
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(
            Tensor2::from_vec(1, 1, vec![loss])?,
            Op::L1 { pred, target },
            rg,
        ))
    }

    /// Gradients of the scalar `output` with respect to every recorded value
    /// that requires one.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        self.backward_from(output, Tensor2::from_vec(1, 1, vec![1.0])?)
    }

    /// Vector-Jacobian product: pulls `cotangent` (shaped like `output`)
    /// back to every leaf that requires a gradient.
    pub fn backward_from(&self, output: Var, cotangent: Tensor2) -> Result<Gradients> {
        same_shape("backward", self.value(output), &cotangent)?;
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(cotangent);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Affine { x, w, b } => {
                    if self.needs(*x) {
                        let wv = self.value(*w);
                        let mut dx = Tensor2::zeros(g.rows, wv.rows);
                        gemm(1.0, &g, false, wv, true, 0.0, &mut dx);
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let xv = self.value(*x);
                        let mut dw = Tensor2::zeros(xv.cols, g.cols);
                        gemm(1.0, xv, true, &g, false, 0.0, &mut dw);
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor2::zeros(1, g.cols);
                        for row in g.data.chunks(g.cols.max(1)) {
                            for (d, v) in db.data.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Relu { x } => {
                    let mut dx = g;
                    for (d, y) in dx.data.iter_mut().zip(&node.value.data) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ac = self.value(*a).cols;
                    let mut da = Tensor2::zeros(g.rows, ac);
                    let mut db = Tensor2::zeros(g.rows, g.cols - ac);
                    for r in 0..g.rows {
                        let row = g.row(r);
                        da.row_mut(r).copy_from_slice(&row[..ac]);
                        db.row_mut(r).copy_from_slice(&row[ac..]);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::ScatterSum { x, receivers } => {
                    let mut dx = Tensor2::zeros(receivers.len(), g.cols);
                    for (k, &r) in receivers.iter().enumerate() {
                        dx.row_mut(k).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::L1 { pred, target } => {
                    let p = self.value(*pred);
                    let t = self.value(*target);
                    let scale = g.data[0] / p.data.len() as f64;
                    let mut dp = Tensor2::zeros(p.rows, p.cols);
                    for ((d, pv), tv) in dp.data.iter_mut().zip(&p.data).zip(&t.data) {
                        let diff = pv - tv;
                        *d = if diff > 0.0 {
                            scale
                        } else if diff < 0.0 {
                            -scale
                        } else {
                            0.0
                        };
                    }
                    if self.needs(*target) {
                        let mut dt = dp.clone();
                        dt.data.iter_mut().for_each(|v| *v = -*v);
                        accumulate(&mut grads, *target, dt);
                    }
                    if self.needs(*pred) {
                        accumulate(&mut grads, *pred, dp);
                    }
                }
            }
        }
        Ok(Gradients(grads))
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data.iter_mut().zip(&g.data) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Output of [`Tape::backward`]; only leaves keep their gradients.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor2>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
        Tensor2::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Central differences (h = 1e-5) of `f` with respect to every entry.
    fn finite_diff(at: &Tensor2, f: impl Fn(&Tensor2) -> f64) -> Tensor2 {
        let h = 1e-5;
        let mut out = Tensor2::zeros(at.rows, at.cols);
        for i in 0..at.data.len() {
            let mut plus = at.clone();
            plus.data[i] += h;
            let mut minus = at.clone();
            minus.data[i] -= h;
            out.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(analytic: &Tensor2, numeric: &Tensor2, rel: f64) {
        assert_eq!(analytic.shape(), numeric.shape());
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < rel, "analytic {a} vs numeric {n}");
        }
    }

    /// Cotangent-weighted sum, so each output entry gets its own weight.
    fn probe(t: &Tensor2, weights: &Tensor2) -> f64 {
        t.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn identity_affine() {
        let x = Tensor2::from_rows(&[vec![1.0, -2.0], vec![3.5, 0.25]]).unwrap();
        let w = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = Tensor2::zeros(1, 2);
        assert_eq!(affine(&w, &b, &x).unwrap(), x);
    }

    #[test]
    fn affine_by_hand() {
        let x = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let w = Tensor2::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(affine(&w, &b, &x).unwrap().data(), &[4.0]);
        assert!(matches!(affine(&b, &b, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, p, q) in [(1, 1, 1), (3, 4, 2), (5, 2, 6)] {
            let x = random(n, p, &mut rng);
            let w = random(p, q, &mut rng);
            let b = random(1, q, &mut rng);
            let cot = random(n, q, &mut rng);
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.param(x.clone()),
                tape.param(w.clone()),
                tape.param(b.clone()),
            );
            let y = tape.affine(xv, wv, bv).unwrap();
            let grads = tape.backward_from(y, cot.clone()).unwrap();
            let fx = finite_diff(&x, |x| probe(&affine(&w, &b, x).unwrap(), &cot));
            let fw = finite_diff(&w, |w| probe(&affine(w, &b, &x).unwrap(), &cot));
            let fb = finite_diff(&b, |b| probe(&affine(&w, b, &x).unwrap(), &cot));
            assert_close(grads.get(xv).unwrap(), &fx, 1e-6);
            assert_close(grads.get(wv).unwrap(), &fw, 1e-6);
            assert_close(grads.get(bv).unwrap(), &fb, 1e-6);
        }
    }

    #[test]
    fn relu_values_and_gate() {
        let x = Tensor2::from_rows(&[vec![-1.0, 2.0, 3.0, -3.0, 0.0]]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0, 3.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let xv = tape.param(x);
        let y = tape.relu(xv);
        let ones = Tensor2::from_vec(1, 5, vec![1.0; 5]).unwrap();
        let g = tape.backward_from(y, ones).unwrap();
        assert_eq!(g.get(xv).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_gradient_away_from_the_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = random(4, 5, &mut rng);
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2f64.copysign(*v);
            }
        }
        let cot = random(4, 5, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = tape.relu(xv);
        let g = tape.backward_from(y, cot.clone()).unwrap();
        let numeric = finite_diff(&x, |x| probe(&relu(x), &cot));
        assert_close(g.get(xv).unwrap(), &numeric, 1e-6);
    }

    #[test]
    fn scatter_sum_examples() {
        let m = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = scatter_sum(&m, &[0, 0], 2).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 0.0, 0.0]);
        let empty = scatter_sum(&Tensor2::zeros(0, 2), &[], 3).unwrap();
        assert_eq!(empty, Tensor2::zeros(3, 2));
        assert!(matches!(
            scatter_sum(&m, &[0, 2], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(scatter_sum(&m, &[0], 2).is_err());
    }

    #[test]
    fn l1_examples() {
        let p = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        let t = Tensor2::zeros(1, 1);
        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let tv = tape.constant(t);
        let loss = tape.l1_loss(pv, tv).unwrap();
        assert_eq!(tape.value(loss).data(), &[1.0]);
        assert_eq!(tape.backward(loss).unwrap().get(pv).unwrap().data(), &[1.0]);

        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let tv = tape.constant(p);
        let loss = tape.l1_loss(pv, tv).unwrap();
        assert_eq!(tape.value(loss).data(), &[0.0]);
        assert_eq!(tape.backward(loss).unwrap().get(pv).unwrap().data(), &[0.0]);
        assert!(l1_loss(&Tensor2::zeros(1, 2), &Tensor2::zeros(2, 1)).is_err());
    }

    #[test]
    fn l1_gradient_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random(3, 4, &mut rng);
        let mut t = random(3, 4, &mut rng);
        for (tv, pv) in t.data_mut().iter_mut().zip(p.data()) {
            if (*tv - pv).abs() < 0.1 {
                *tv = pv + 0.5;
            }
        }
        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let tv = tape.constant(t.clone());
        let loss = tape.l1_loss(pv, tv).unwrap();
        let g = tape.backward(loss).unwrap();
        let numeric = finite_diff(&p, |p| l1_loss(p, &t).unwrap());
        assert_close(g.get(pv).unwrap(), &numeric, 1e-5);
    }

    #[test]
    fn composed_graph_gradient() {
        // affine -> relu -> concat -> affine -> scatter -> add -> l1
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(6, 3, &mut rng);
        let w1 = random(3, 4, &mut rng);
        let b1 = random(1, 4, &mut rng);
        let w2 = random(7, 2, &mut rng);
        let b2 = random(1, 2, &mut rng);
        let skip = random(3, 2, &mut rng);
        let target = random(3, 2, &mut rng);
        let receivers = [0, 2, 2, 1, 0, 2];
        let eval = |w1: &Tensor2| -> f64 {
            let h = relu(&affine(w1, &b1, &x).unwrap());
            let h = concat_cols(&h, &x).unwrap();
            let m = affine(&w2, &b2, &h).unwrap();
            let mut s = scatter_sum(&m, &receivers, 3).unwrap();
            for (a, b) in s.data_mut().iter_mut().zip(skip.data()) {
                *a += b;
            }
            l1_loss(&s, &target).unwrap()
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w1v = tape.param(w1.clone());
        let b1v = tape.param(b1.clone());
        let w2v = tape.param(w2.clone());
        let b2v = tape.param(b2.clone());
        let skipv = tape.param(skip.clone());
        let tv = tape.constant(target.clone());
        let h = tape.affine(xv, w1v, b1v).unwrap();
        let h = tape.relu(h);
        let h = tape.concat_cols(h, xv).unwrap();
        let m = tape.affine(h, w2v, b2v).unwrap();
        let s = tape.scatter_sum(m, &receivers, 3).unwrap();
        let s = tape.add(s, skipv).unwrap();
        let loss = tape.l1_loss(s, tv).unwrap();
        assert!((tape.value(loss).data()[0] - eval(&w1)).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(xv).is_none());
        assert_close(g.get(w1v).unwrap(), &finite_diff(&w1, eval), 1e-5);
    }

    proptest! {
        #[test]
        fn scatter_sum_backward_is_the_adjoint(
            seed in any::<u64>(),
            n_msgs in 0usize..20,
            n_nodes in 1usize..6,
            cols in 1usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(n_msgs, cols, &mut rng);
            let y = random(n_nodes, cols, &mut rng);
            let ids: Vec<usize> = (0..n_msgs).map(|_| rng.random_range(0..n_nodes)).collect();
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let out = tape.scatter_sum(xv, &ids, n_nodes).unwrap();
            let lhs = probe(tape.value(out), &y);
            let g = tape.backward_from(out, y).unwrap();
            let rhs = probe(&x, g.get(xv).unwrap());
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn scatter_sum_ignores_message_order(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(n, 2, &mut rng);
            let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            let px = Tensor2::from_rows(&perm.iter().map(|&k| x.row(k).to_vec()).collect::<Vec<_>>()).unwrap();
            let pids: Vec<usize> = perm.iter().map(|&k| ids[k]).collect();
            let a = scatter_sum(&x, &ids, 3).unwrap();
            let b = scatter_sum(&px, &pids, 3).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
