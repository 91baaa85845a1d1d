//! Minimal reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Every operation appends a node to the tape; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients.

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Transpose(Var),
    Softmax(Var),
    Gelu(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not broadcast over {:?}",
                r.shape(),
                x.shape()
            )));
        }
        let mut v = x.clone();
        for i in 0..v.rows() {
            for j in 0..v.cols() {
                v.set(i, j, v.get(i, j) + r.get(0, j));
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    /// Multiplies `a` by the 1×1 variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(Error::Shape("scale_by expects a 1x1 scalar".into()));
        }
        let c = self.value(s).get(0, 0);
        let v = self.value(a).scale(c);
        Ok(self.push(v, Op::ScaleBy(a, s)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row softmax; `causal` masks entries above the diagonal.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let v = self.value(a).softmax_rows(causal);
        self.push(v, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::Shape("concat parts differ in row count".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            for i in 0..rows {
                for j in 0..m.cols() {
                    v.set(i, off + j, m.get(i, j));
                }
            }
            off += m.cols();
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Embedding lookup: rows of `table` at `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: t.rows(),
            });
        }
        let v = t.select_rows(ids);
        Ok(self.push(v, Op::Gather(table, ids.to_vec())))
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} targets",
                l.rows(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= l.cols()) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab: l.cols(),
            });
        }
        let p = l.softmax_rows(false);
        let nll: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -p.get(i, t).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len().max(1) as f64;
        Ok(self.push(
            Matrix::scalar(nll),
            Op::CrossEntropy(logits, targets.to_vec()),
        ))
    }

    /// Gradients of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul(&vb.transpose()).expect("shape"));
                    acc(&mut grads, *b, va.transpose().matmul(&g).expect("shape"));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, r) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gr.set(0, j, gr.get(0, j) + g.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *r, gr);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.scale(*c)),
                Op::ScaleBy(a, s) => {
                    let c = self.value(*s).get(0, 0);
                    let gs: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    acc(&mut grads, *a, g.scale(c));
                    acc(&mut grads, *s, Matrix::scalar(gs));
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = (0..y.cols()).map(|j| g.get(i, j) * y.get(i, j)).sum();
                        for j in 0..y.cols() {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = g.zip_map(self.value(*a), |gv, x| gv * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for i in 0..g.rows() {
                            for j in 0..cols {
                                gp.set(i, j, g.get(i, off + j));
                            }
                        }
                        off += cols;
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..t.cols() {
                            gt.set(id, j, gt.get(id, j) + g.get(i, j));
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::CrossEntropy(logits, targets) => {
                    let upstream = g.get(0, 0);
                    let mut gl = self.value(*logits).softmax_rows(false);
                    let n = targets.len().max(1) as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        gl.set(i, t, gl.get(i, t) - 1.0);
                    }
                    acc(&mut grads, *logits, gl.scale(upstream / n));
                }
            }
            grads[idx] = Some(g);
        }
        Grads(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference check of d(loss)/d(leaf) for a graph builder.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = build(&mut tape, x);
        let g = tape.backward(loss).get(x).cloned().unwrap();
        let h = 1e-6;
        for k in 0..x0.data().len() {
            let eval = |d: f64| {
                let mut m = x0.clone();
                m.data_mut()[k] += d;
                let mut t = Tape::new();
                let xv = t.leaf(m);
                let l = build(&mut t, xv);
                t.value(l).get(0, 0)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.data()[k];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "k={k} fd={fd} an={an}"
            );
        }
    }

    #[test]
    fn gradients_of_primitives() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let w = Matrix::gaussian(3, 4, 1.0, &mut rng);
        let bias = Matrix::gaussian(1, 4, 1.0, &mut rng);
        let x0 = Matrix::gaussian(5, 3, 1.0, &mut rng);
        check(
            |t, x| {
                let wv = t.leaf(w.clone());
                let bv = t.leaf(bias.clone());
                let h = t.matmul(x, wv).unwrap();
                let h = t.add_row(h, bv).unwrap();
                let h = t.gelu(h);
                let ht = t.transpose(h);
                let s = t.matmul(h, ht).unwrap();
                let s = t.scale(s, 0.3);
                let p = t.softmax(s, true);
                let cat = t.concat_cols(&[p, x]).unwrap();
                t.cross_entropy(cat, &[0, 1, 2, 6, 7]).unwrap()
            },
            x0,
        );
    }

    #[test]
    fn gradients_of_scalar_and_gather() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let table = Matrix::gaussian(6, 4, 1.0, &mut rng);
        check(
            |t, s| {
                let tb = t.leaf(table.clone());
                let rows = t.gather(tb, &[1, 3, 3, 0]).unwrap();
                let scaled = t.scale_by(rows, s).unwrap();
                let sum = t.add(scaled, rows).unwrap();
                t.cross_entropy(sum, &[0, 1, 2, 3]).unwrap()
            },
            Matrix::scalar(0.7),
        );
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut t = Tape::new();
        let tb = t.leaf(Matrix::zeros(3, 2));
        assert!(matches!(
            t.gather(tb, &[3]),
            Err(Error::TokenOutOfRange { .. })
        ));
    }
}
