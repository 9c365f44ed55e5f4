//! Recording gradient tape.
//!
//! A `Tape` logs every primitive applied to its values during a forward pass
//! and computes exact reverse-mode derivatives of a scalar output with
//! respect to any tensor that was marked with [`Tape::var`]. Forward values
//! are produced by the same kernels in `tensor`, so replaying a record
//! reproduces the original scalars bit-for-bit.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { marked: bool },
    MatVec { w: usize, v: usize },
    MatVecT { m: usize, v: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    Log { a: usize },
    Sum { a: usize },
    Slice { a: usize, start: usize, len: usize },
    Concat { parts: Vec<usize> },
    StackRows { rows: Vec<usize> },
    Pick { a: usize, idx: usize },
    Row { m: usize, idx: usize },
    L2Norm { a: usize },
    Scale { a: usize, c: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Ordered log of primitive operations with their forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Val {
        self.nodes.push(Node { op, value });
        Val(self.nodes.len() - 1)
    }

    /// Record a constant input. No gradient flows into it.
    pub fn leaf(&mut self, t: Tensor) -> Val {
        self.push(Op::Leaf { marked: false }, t)
    }

    /// Record a differentiable input.
    pub fn var(&mut self, t: Tensor) -> Val {
        self.push(Op::Leaf { marked: true }, t)
    }

    pub fn value(&self, v: Val) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Val) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ── Primitives ───────────────────────────────────────────────────────

    /// W[m×k] · v[k] → [m]
    pub fn matvec(&mut self, w: Val, v: Val) -> Result<Val> {
        let (wt, vt) = (self.value(w), self.value(v));
        if wt.shape().len() != 2 || vt.shape().len() != 1 || wt.cols() != vt.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: wt.shape().to_vec(),
                rhs: vt.shape().to_vec(),
            });
        }
        let (m, k) = (wt.rows(), wt.cols());
        let mut out = vec![0.0; m];
        tensor::matvec(wt.data(), m, k, vt.data(), &mut out);
        Ok(self.push(Op::MatVec { w: w.0, v: v.0 }, Tensor::vector(out)))
    }

    /// M[n×d]ᵀ · v[n] → [d]
    pub fn matvec_t(&mut self, m: Val, v: Val) -> Result<Val> {
        let (mt, vt) = (self.value(m), self.value(v));
        if mt.shape().len() != 2 || vt.shape().len() != 1 || mt.rows() != vt.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec_t",
                lhs: mt.shape().to_vec(),
                rhs: vt.shape().to_vec(),
            });
        }
        let (n, d) = (mt.rows(), mt.cols());
        let mut out = vec![0.0; d];
        tensor::matvec_t(mt.data(), n, d, vt.data(), &mut out);
        Ok(self.push(Op::MatVecT { m: m.0, v: v.0 }, Tensor::vector(out)))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise("add", a, b)
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val> {
        self.elementwise("mul", a, b)
    }

    fn elementwise(&mut self, which: &'static str, a: Val, b: Val) -> Result<Val> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(Error::ShapeMismatch {
                op: which,
                lhs: at.shape().to_vec(),
                rhs: bt.shape().to_vec(),
            });
        }
        let data: Vec<f64> = match which {
            "add" => at.data().iter().zip(bt.data()).map(|(x, y)| x + y).collect(),
            _ => at.data().iter().zip(bt.data()).map(|(x, y)| x * y).collect(),
        };
        let value = Tensor::new(at.shape().to_vec(), data).expect("same shape");
        let op = if which == "add" {
            Op::Add { a: a.0, b: b.0 }
        } else {
            Op::Mul { a: a.0, b: b.0 }
        };
        Ok(self.push(op, value))
    }

    pub fn sigmoid(&mut self, a: Val) -> Val {
        let mut data = self.value(a).data().to_vec();
        tensor::sigmoid_slice(&mut data);
        let shape = self.value(a).shape().to_vec();
        self.push(
            Op::Sigmoid { a: a.0 },
            Tensor::new(shape, data).expect("same shape"),
        )
    }

    pub fn tanh(&mut self, a: Val) -> Val {
        let mut data = self.value(a).data().to_vec();
        tensor::tanh_slice(&mut data);
        let shape = self.value(a).shape().to_vec();
        self.push(
            Op::Tanh { a: a.0 },
            Tensor::new(shape, data).expect("same shape"),
        )
    }

    pub fn softmax(&mut self, a: Val) -> Val {
        let mut data = self.value(a).data().to_vec();
        tensor::softmax_slice(&mut data);
        self.push(Op::Softmax { a: a.0 }, Tensor::vector(data))
    }

    pub fn log_softmax(&mut self, a: Val) -> Val {
        let mut data = self.value(a).data().to_vec();
        tensor::log_softmax_slice(&mut data);
        self.push(Op::LogSoftmax { a: a.0 }, Tensor::vector(data))
    }

    pub fn log(&mut self, a: Val) -> Val {
        let data = self.value(a).data().iter().map(|x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(
            Op::Log { a: a.0 },
            Tensor::new(shape, data).expect("same shape"),
        )
    }

    pub fn sum(&mut self, a: Val) -> Val {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum { a: a.0 }, Tensor::scalar(s))
    }

    pub fn slice(&mut self, a: Val, start: usize, len: usize) -> Result<Val> {
        let at = self.value(a);
        if start + len > at.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: at.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let data = at.data()[start..start + len].to_vec();
        Ok(self.push(Op::Slice { a: a.0, start, len }, Tensor::vector(data)))
    }

    pub fn concat(&mut self, parts: &[Val]) -> Val {
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        self.push(
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            Tensor::vector(data),
        )
    }

    /// Stack n same-length vectors into an [n × d] matrix.
    pub fn stack_rows(&mut self, rows: &[Val]) -> Result<Val> {
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let rt = self.value(*r);
            if rt.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![d],
                    rhs: rt.shape().to_vec(),
                });
            }
            data.extend_from_slice(rt.data());
        }
        let value = Tensor::matrix(rows.len(), d, data).expect("sized above");
        Ok(self.push(
            Op::StackRows {
                rows: rows.iter().map(|r| r.0).collect(),
            },
            value,
        ))
    }

    /// Select one element as a scalar.
    pub fn pick(&mut self, a: Val, idx: usize) -> Result<Val> {
        let at = self.value(a);
        if idx >= at.len() {
            return Err(Error::ShapeMismatch {
                op: "pick",
                lhs: at.shape().to_vec(),
                rhs: vec![idx],
            });
        }
        let v = at.data()[idx];
        Ok(self.push(Op::Pick { a: a.0, idx }, Tensor::scalar(v)))
    }

    /// Embedding lookup: row `idx` of a [v × d] matrix.
    pub fn row(&mut self, m: Val, idx: usize) -> Result<Val> {
        let mt = self.value(m);
        if mt.shape().len() != 2 || idx >= mt.rows() {
            return Err(Error::ShapeMismatch {
                op: "row",
                lhs: mt.shape().to_vec(),
                rhs: vec![idx],
            });
        }
        let data = mt.row(idx).to_vec();
        Ok(self.push(Op::Row { m: m.0, idx }, Tensor::vector(data)))
    }

    pub fn l2_norm(&mut self, a: Val) -> Val {
        let n = tensor::l2_norm(self.value(a).data());
        self.push(Op::L2Norm { a: a.0 }, Tensor::scalar(n))
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Val {
        let data = self.value(a).data().iter().map(|x| c * x).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(
            Op::Scale { a: a.0, c },
            Tensor::new(shape, data).expect("same shape"),
        )
    }

    // ── Reverse pass ─────────────────────────────────────────────────────

    /// Exact gradients of scalar `output` with respect to each marked tensor
    /// in `wrt`, in order and with matching shapes.
    pub fn grad(&self, output: Val, wrt: &[Val]) -> Result<Vec<Tensor>> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(Error::NonScalarOutput {
                shape: out_node.value.shape().to_vec(),
            });
        }
        for v in wrt {
            match self.nodes[v.0].op {
                Op::Leaf { marked: true } => {}
                _ => return Err(Error::UnmarkedTensor { op: "grad" }),
            }
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Keep the buffer available for `wrt` extraction afterwards.
            let restore = matches!(self.nodes[i].op, Op::Leaf { .. });
            self.backward_op(i, &g, &mut grads);
            if restore {
                grads[i] = Some(g);
            }
        }

        Ok(wrt
            .iter()
            .map(|v| {
                let shape = self.nodes[v.0].value.shape().to_vec();
                let n: usize = shape.iter().product();
                let data = grads[v.0].take().unwrap_or_else(|| vec![0.0; n]);
                Tensor::new(shape, data).expect("gradient shape matches input")
            })
            .collect())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: &[f64]) {
        match &mut grads[idx] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            None => grads[idx] = Some(contribution.to_vec()),
        }
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatVec { w, v } => {
                let wt = &self.nodes[*w].value;
                let vt = &self.nodes[*v].value;
                let (m, k) = (wt.rows(), wt.cols());
                // dW[i,j] += g[i]·v[j]
                let mut dw = vec![0.0; m * k];
                for (r, &gi) in g.iter().enumerate() {
                    let row = &mut dw[r * k..(r + 1) * k];
                    for (o, &vj) in row.iter_mut().zip(vt.data()) {
                        *o += gi * vj;
                    }
                }
                Self::accumulate(grads, *w, &dw);
                // dv = Wᵀ g
                let mut dv = vec![0.0; k];
                tensor::matvec_t(wt.data(), m, k, g, &mut dv);
                Self::accumulate(grads, *v, &dv);
            }
            Op::MatVecT { m, v } => {
                let mt = &self.nodes[*m].value;
                let vt = &self.nodes[*v].value;
                let (n, d) = (mt.rows(), mt.cols());
                // dM[i,:] += v[i]·g
                let mut dm = vec![0.0; n * d];
                for (r, &vi) in vt.data().iter().enumerate() {
                    let row = &mut dm[r * d..(r + 1) * d];
                    for (o, &gj) in row.iter_mut().zip(g) {
                        *o += vi * gj;
                    }
                }
                Self::accumulate(grads, *m, &dm);
                // dv = M g
                let mut dv = vec![0.0; n];
                tensor::matvec(mt.data(), n, d, g, &mut dv);
                Self::accumulate(grads, *v, &dv);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::Mul { a, b } => {
                let at = self.nodes[*a].value.data();
                let bt = self.nodes[*b].value.data();
                let da: Vec<f64> = g.iter().zip(bt).map(|(gi, bi)| gi * bi).collect();
                let db: Vec<f64> = g.iter().zip(at).map(|(gi, ai)| gi * ai).collect();
                Self::accumulate(grads, *a, &da);
                Self::accumulate(grads, *b, &db);
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(y)
                    .map(|(gi, yi)| gi * yi * (1.0 - yi))
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Tanh { a } => {
                let y = node.value.data();
                let da: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let gy: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                let da: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| yi * (gi - gy)).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::LogSoftmax { a } => {
                // value holds log p; d x_j = g_j − p_j · Σ g
                let gsum: f64 = g.iter().sum();
                let da: Vec<f64> = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(gi, lp)| gi - lp.exp() * gsum)
                    .collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Log { a } => {
                let at = self.nodes[*a].value.data();
                let da: Vec<f64> = g.iter().zip(at).map(|(gi, ai)| gi / ai).collect();
                Self::accumulate(grads, *a, &da);
            }
            Op::Sum { a } => {
                let n = self.nodes[*a].value.len();
                Self::accumulate(grads, *a, &vec![g[0]; n]);
            }
            Op::Slice { a, start, len } => {
                let n = self.nodes[*a].value.len();
                let mut da = vec![0.0; n];
                da[*start..*start + *len].copy_from_slice(g);
                Self::accumulate(grads, *a, &da);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[*p].value.len();
                    Self::accumulate(grads, *p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::StackRows { rows } => {
                let d = node.value.cols();
                for (r, p) in rows.iter().enumerate() {
                    Self::accumulate(grads, *p, &g[r * d..(r + 1) * d]);
                }
            }
            Op::Pick { a, idx } => {
                let n = self.nodes[*a].value.len();
                let mut da = vec![0.0; n];
                da[*idx] = g[0];
                Self::accumulate(grads, *a, &da);
            }
            Op::Row { m, idx } => {
                let mt = &self.nodes[*m].value;
                let d = mt.cols();
                let mut dm = vec![0.0; mt.len()];
                dm[*idx * d..(*idx + 1) * d].copy_from_slice(g);
                Self::accumulate(grads, *m, &dm);
            }
            Op::L2Norm { a } => {
                let at = self.nodes[*a].value.data();
                let norm = node.value.item();
                if norm > 0.0 {
                    let da: Vec<f64> = at.iter().map(|ai| g[0] * ai / norm).collect();
                    Self::accumulate(grads, *a, &da);
                }
                // Subgradient 0 at the origin.
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|gi| c * gi).collect();
                Self::accumulate(grads, *a, &da);
            }
        }
    }

    // ── Replay ───────────────────────────────────────────────────────────

    /// Recompute every node value from the leaves in record order and return
    /// the recomputed value of `output`. Same kernels, same order: the result
    /// is bit-identical to the original forward pass.
    pub fn replay(&self, output: Val) -> Tensor {
        let mut values: Vec<Tensor> = Vec::with_capacity(output.0 + 1);
        for i in 0..=output.0 {
            let node = &self.nodes[i];
            let v = match &node.op {
                Op::Leaf { .. } => node.value.clone(),
                Op::MatVec { w, v } => {
                    let (wt, vt) = (&values[*w], &values[*v]);
                    let (m, k) = (wt.rows(), wt.cols());
                    let mut out = vec![0.0; m];
                    tensor::matvec(wt.data(), m, k, vt.data(), &mut out);
                    Tensor::vector(out)
                }
                Op::MatVecT { m, v } => {
                    let (mt, vt) = (&values[*m], &values[*v]);
                    let (n, d) = (mt.rows(), mt.cols());
                    let mut out = vec![0.0; d];
                    tensor::matvec_t(mt.data(), n, d, vt.data(), &mut out);
                    Tensor::vector(out)
                }
                Op::Add { a, b } => {
                    let data = values[*a]
                        .data()
                        .iter()
                        .zip(values[*b].data())
                        .map(|(x, y)| x + y)
                        .collect();
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
                Op::Mul { a, b } => {
                    let data = values[*a]
                        .data()
                        .iter()
                        .zip(values[*b].data())
                        .map(|(x, y)| x * y)
                        .collect();
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
                Op::Sigmoid { a } => {
                    let mut data = values[*a].data().to_vec();
                    tensor::sigmoid_slice(&mut data);
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
                Op::Tanh { a } => {
                    let mut data = values[*a].data().to_vec();
                    tensor::tanh_slice(&mut data);
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
                Op::Softmax { a } => {
                    let mut data = values[*a].data().to_vec();
                    tensor::softmax_slice(&mut data);
                    Tensor::vector(data)
                }
                Op::LogSoftmax { a } => {
                    let mut data = values[*a].data().to_vec();
                    tensor::log_softmax_slice(&mut data);
                    Tensor::vector(data)
                }
                Op::Log { a } => {
                    let data = values[*a].data().iter().map(|x| x.ln()).collect();
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
                Op::Sum { a } => Tensor::scalar(values[*a].data().iter().sum()),
                Op::Slice { a, start, len } => {
                    Tensor::vector(values[*a].data()[*start..*start + *len].to_vec())
                }
                Op::Concat { parts } => {
                    let mut data = Vec::new();
                    for p in parts {
                        data.extend_from_slice(values[*p].data());
                    }
                    Tensor::vector(data)
                }
                Op::StackRows { rows } => {
                    let d = values[rows[0]].len();
                    let mut data = Vec::with_capacity(rows.len() * d);
                    for r in rows {
                        data.extend_from_slice(values[*r].data());
                    }
                    Tensor::matrix(rows.len(), d, data).expect("shape")
                }
                Op::Pick { a, idx } => Tensor::scalar(values[*a].data()[*idx]),
                Op::Row { m, idx } => Tensor::vector(values[*m].row(*idx).to_vec()),
                Op::L2Norm { a } => Tensor::scalar(tensor::l2_norm(values[*a].data())),
                Op::Scale { a, c } => {
                    let data = values[*a].data().iter().map(|x| c * x).collect();
                    Tensor::new(values[*a].shape().to_vec(), data).expect("shape")
                }
            };
            values.push(v);
        }
        values.pop().expect("at least the output node")
    }
}

/// Central-difference gradient estimate of `f` at `v`:
/// `(f(v + h·eᵢ) − f(v − h·eᵢ)) / 2h` per coordinate.
///
/// This is the test oracle for [`Tape::grad`]; it never touches the tape.
pub fn finite_diff_grad<F>(mut f: F, v: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite_diff_grad requires h > 0, got {h}")));
    }
    let mut grad = vec![0.0; v.len()];
    let mut probe = v.clone();
    for i in 0..v.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Tensor::new(v.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_rel_err(analytic: &Tensor, numeric: &Tensor) -> f64 {
        analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n).abs() / f64::max(1.0, a.abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn grad_of_sum_of_squares() {
        // f(v) = Σ v², v = [1, 2] → grad [2, 4]
        let mut tape = Tape::new();
        let v = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.mul(v, v).unwrap();
        let f = tape.sum(sq);
        let g = tape.grad(f, &[v]).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_log_softmax_pick() {
        // f(v) = log softmax(v)[0], v = [0, 0] → grad [0.5, −0.5]
        let mut tape = Tape::new();
        let v = tape.var(Tensor::vector(vec![0.0, 0.0]));
        let ls = tape.log_softmax(v);
        let f = tape.pick(ls, 0).unwrap();
        let g = tape.grad(f, &[v]).unwrap();
        assert!((g[0].data()[0] - 0.5).abs() < 1e-12);
        assert!((g[0].data()[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn grad_rejects_non_scalar_output() {
        let mut tape = Tape::new();
        let v = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(v);
        assert!(matches!(
            tape.grad(y, &[v]),
            Err(Error::NonScalarOutput { .. })
        ));
    }

    #[test]
    fn grad_rejects_unmarked_tensor() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::vector(vec![1.0]));
        let s = tape.sum(c);
        assert!(matches!(
            tape.grad(s, &[c]),
            Err(Error::UnmarkedTensor { .. })
        ));
    }

    #[test]
    fn finite_diff_on_sum_of_squares() {
        let v = Tensor::vector(vec![1.0, 2.0]);
        let g = finite_diff_grad(
            |t| Ok(t.data().iter().map(|x| x * x).sum()),
            &v,
            1e-5,
        )
        .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8);
        assert!((g.data()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_of_constant_is_zero() {
        let v = Tensor::vector(vec![3.0, -1.0, 2.0]);
        let g = finite_diff_grad(|_| Ok(7.5), &v, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_diff_rejects_bad_h() {
        let v = Tensor::vector(vec![1.0]);
        assert!(finite_diff_grad(|_| Ok(0.0), &v, 0.0).is_err());
    }

    /// Builds a small composite expression exercising every primitive and
    /// checks the tape gradient against central differences.
    fn check_composite(seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 + (seed % 4) as usize;
        let x0 = Tensor::uniform(vec![n], 1.0, &mut rng);
        let w0 = Tensor::uniform(vec![n + 1, n], 1.0, &mut rng);
        let m0 = Tensor::uniform(vec![3, n + 1], 1.0, &mut rng);

        let eval = |x: &Tensor| -> (Tape, Val, Val) {
            let mut tape = Tape::new();
            let v = tape.var(x.clone());
            let w = tape.leaf(w0.clone());
            let m = tape.leaf(m0.clone());
            let wv = tape.matvec(w, v).unwrap();
            let s = tape.sigmoid(wv);
            let t = tape.tanh(wv);
            let st = tape.mul(s, t).unwrap();
            let st3 = tape_pad(&mut tape, st, 3);
            let mt = tape.matvec_t(m, st3).unwrap();
            let sm = tape.softmax(st);
            let ls = tape.log_softmax(st);
            let p0 = tape.pick(sm, 0).unwrap();
            let p1 = tape.pick(ls, 1).unwrap();
            let cat = tape.concat(&[mt, st]);
            let norm = tape.l2_norm(cat);
            let sl = tape.slice(cat, 1, 2).unwrap();
            let sls = tape.sum(sl);
            let total0 = tape.add(p0, p1).unwrap();
            let total1 = tape.add(total0, norm).unwrap();
            let total2 = tape.add(total1, sls).unwrap();
            let out = tape.scale(total2, 1.25);
            (tape, v, out)
        };

        let (tape, v, out) = eval(&x0);
        let analytic = tape.grad(out, &[v]).unwrap().remove(0);
        let numeric = finite_diff_grad(
            |x| {
                let (t, _, o) = eval(x);
                Ok(t.value(o).item())
            },
            &x0,
            1e-5,
        )
        .unwrap();
        max_rel_err(&analytic, &numeric)
    }

    /// Truncate/extend a vector value to `len` via slice for shape plumbing
    /// inside the composite test. Only for the test above.
    fn tape_pad(tape: &mut Tape, v: Val, len: usize) -> Val {
        tape.slice(v, 0, len).unwrap()
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        for seed in 0..20 {
            let err = check_composite(seed);
            assert!(err < 1e-6, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(vec![5], 2.0, &mut rng);
        let w = Tensor::uniform(vec![4, 5], 1.0, &mut rng);
        let mut tape = Tape::new();
        let v = tape.var(x);
        let wl = tape.leaf(w);
        let wv = tape.matvec(wl, v).unwrap();
        let sm = tape.log_softmax(wv);
        let p = tape.pick(sm, 2).unwrap();
        let n = tape.l2_norm(wv);
        let out = tape.add(p, n).unwrap();
        let original = tape.value(out).item();
        let replayed = tape.replay(out).item();
        assert_eq!(original.to_bits(), replayed.to_bits());
    }
}
