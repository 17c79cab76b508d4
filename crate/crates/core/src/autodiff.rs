//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every forward pass records primitive operations onto a [`Tape`]; calling
//! [`Tape::backward`] on a scalar root accumulates gradients for every
//! variable reachable from it. The tape is rebuilt per forward pass, which
//! is what the per-step counterfactual optimization loop wants anyway.
//!
//! Subgradient conventions: `d|x|/dx = 0` at `x = 0`, `relu'(0) = 0`.
//! Softmax subtracts the row max before exponentiation; cross-entropy
//! clamps probabilities at `1e-12`.

use crate::tensor::{check_same_shape, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    MatMul {
        lhs: VarId,
        rhs: VarId,
        m: usize,
        k: usize,
        n: usize,
    },
    Affine {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    Relu(VarId),
    Tanh(VarId),
    Sigmoid(VarId),
    Softmax(VarId),
    Concat {
        lhs: VarId,
        rhs: VarId,
        axis: usize,
    },
    Reshape(VarId),
    Sum(VarId),
    Mean(VarId),
    Scale {
        input: VarId,
        factor: f64,
    },
    L1Distance(VarId, VarId),
    CrossEntropy {
        probs: VarId,
        target: usize,
    },
    CrossEntropyMean {
        probs: VarId,
        targets: Vec<usize>,
    },
    BceMean {
        probs: VarId,
        targets: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`VarId`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `id`, if `id` was reachable.
    pub fn get(&self, id: VarId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient as an owned tensor, zeros if unreachable.
    pub fn get_or_zeros(&self, id: VarId, shape: &[usize]) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const CE_CLAMP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf variable.
    pub fn var(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    /// Value of a recorded variable.
    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    fn check_ids(&self, op: &'static str, ids: &[VarId]) -> Result<(), TensorError> {
        for id in ids {
            if id.0 >= self.nodes.len() {
                return Err(TensorError::UnknownVariable { op, id: id.0 });
            }
        }
        Ok(())
    }

    // ── elementwise binary ──────────────────────────────────────────

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary_elementwise("mul_elementwise", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId, TensorError> {
        self.check_ids(name, &[a, b])?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same_shape(name, ta, tb)?;
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(out, op))
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// Matrix product. Accepts `[m,k]×[k,n] → [m,n]`, `[m,k]×[k] → [m]`,
    /// and `[k]×[k,n] → [n]`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.check_ids("matmul", &[a, b])?;
        let (sa, sb) = (
            self.nodes[a.0].value.shape().to_vec(),
            self.nodes[b.0].value.shape().to_vec(),
        );
        let (m, k1) = match sa.as_slice() {
            [m, k] => (*m, *k),
            [k] => (1, *k),
            _ => {
                return Err(TensorError::BadRank {
                    op: "matmul",
                    expected: 2,
                    shape: sa,
                })
            }
        };
        let (k2, n) = match sb.as_slice() {
            [k, n] => (*k, *n),
            [k] => (*k, 1),
            _ => {
                return Err(TensorError::BadRank {
                    op: "matmul",
                    expected: 2,
                    shape: sb,
                })
            }
        };
        if k1 != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let data = matmul_raw(
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            m,
            k1,
            n,
        );
        let out_shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            (1, 2) => vec![n],
            _ => vec![m, n],
        };
        let out = Tensor::new(out_shape, data).expect("matmul shape");
        Ok(self.push(
            out,
            Op::MatMul {
                lhs: a,
                rhs: b,
                m,
                k: k1,
                n,
            },
        ))
    }

    /// `x·W + b` with the bias broadcast over rows: `x [B,in]`, `W [in,out]`,
    /// `b [out]` → `[B,out]`.
    pub fn affine(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.check_ids("affine", &[x, w, b])?;
        let sx = self.nodes[x.0].value.shape().to_vec();
        let sw = self.nodes[w.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        let (rows, n_in) = match sx.as_slice() {
            [r, c] => (*r, *c),
            _ => {
                return Err(TensorError::BadRank {
                    op: "affine",
                    expected: 2,
                    shape: sx,
                })
            }
        };
        let (w_in, w_out) = match sw.as_slice() {
            [i, o] => (*i, *o),
            _ => {
                return Err(TensorError::BadRank {
                    op: "affine",
                    expected: 2,
                    shape: sw,
                })
            }
        };
        if n_in != w_in {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != [w_out] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: vec![w_out],
                rhs: sb,
            });
        }
        let mut data = matmul_raw(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            rows,
            n_in,
            w_out,
        );
        let bias = self.nodes[b.0].value.data();
        for r in 0..rows {
            for c in 0..w_out {
                data[r * w_out + c] += bias[c];
            }
        }
        let out = Tensor::new(vec![rows, w_out], data).expect("affine shape");
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    // ── activations ─────────────────────────────────────────────────

    pub fn relu(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    fn unary(
        &mut self,
        a: VarId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<VarId, TensorError> {
        self.check_ids("unary", &[a])?;
        let t = &self.nodes[a.0].value;
        let data: Vec<f64> = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(out, op))
    }

    /// Row-wise softmax with max subtraction. Input rank 1 (one row) or
    /// rank 2 (batch × classes); output rows sum to 1.
    pub fn softmax(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.check_ids("softmax", &[a])?;
        let t = &self.nodes[a.0].value;
        let shape = t.shape().to_vec();
        let (rows, cols) = match shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            _ => {
                return Err(TensorError::BadRank {
                    op: "softmax",
                    expected: 2,
                    shape,
                })
            }
        };
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &t.data()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                data[r * cols + c] /= sum;
            }
        }
        let out = Tensor::new(shape, data).expect("shape preserved");
        Ok(self.push(out, Op::Softmax(a)))
    }

    // ── shape ops ───────────────────────────────────────────────────

    /// Concatenates along `axis`. Rank-1 inputs accept axis 0; rank-2
    /// inputs accept axis 0 (stack rows) or 1 (extend columns).
    pub fn concat(&mut self, a: VarId, b: VarId, axis: usize) -> Result<VarId, TensorError> {
        self.check_ids("concat", &[a, b])?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        let out = match (sa.as_slice(), sb.as_slice(), axis) {
            ([la], [lb], 0) => {
                let mut data = Vec::with_capacity(la + lb);
                data.extend_from_slice(ta.data());
                data.extend_from_slice(tb.data());
                Tensor::new(vec![la + lb], data).expect("concat shape")
            }
            ([r1, c1], [r2, c2], 0) if c1 == c2 => {
                let mut data = Vec::with_capacity((r1 + r2) * c1);
                data.extend_from_slice(ta.data());
                data.extend_from_slice(tb.data());
                Tensor::new(vec![r1 + r2, *c1], data).expect("concat shape")
            }
            ([r1, c1], [r2, c2], 1) if r1 == r2 => {
                let mut data = Vec::with_capacity(r1 * (c1 + c2));
                for r in 0..*r1 {
                    data.extend_from_slice(&ta.data()[r * c1..(r + 1) * c1]);
                    data.extend_from_slice(&tb.data()[r * c2..(r + 1) * c2]);
                }
                Tensor::new(vec![*r1, c1 + c2], data).expect("concat shape")
            }
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: sa,
                    rhs: sb,
                })
            }
        };
        Ok(self.push(out, Op::Concat { lhs: a, rhs: b, axis }))
    }

    pub fn reshape(&mut self, a: VarId, shape: Vec<usize>) -> Result<VarId, TensorError> {
        self.check_ids("reshape", &[a])?;
        let t = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != t.numel() {
            return Err(TensorError::LengthMismatch {
                op: "reshape",
                len: t.numel(),
                shape,
            });
        }
        let out = Tensor::new(shape, t.data().to_vec()).expect("reshape");
        Ok(self.push(out, Op::Reshape(a)))
    }

    // ── reductions ──────────────────────────────────────────────────

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.check_ids("sum", &[a])?;
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean(&mut self, a: VarId) -> Result<VarId, TensorError> {
        self.check_ids("mean", &[a])?;
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().sum();
        let m = s / t.numel() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a)))
    }

    /// Multiplies every element by a constant factor.
    pub fn scale(&mut self, a: VarId, factor: f64) -> Result<VarId, TensorError> {
        self.check_ids("scale", &[a])?;
        let t = &self.nodes[a.0].value;
        let data: Vec<f64> = t.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(out, Op::Scale { input: a, factor }))
    }

    // ── losses ──────────────────────────────────────────────────────

    /// `‖a − b‖₁`, the sum of absolute elementwise differences.
    pub fn l1_distance(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.check_ids("l1_distance", &[a, b])?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same_shape("l1_distance", ta, tb)?;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data().iter())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::L1Distance(a, b)))
    }

    /// `−log(probs[target])` for a rank-1 probability vector, with the
    /// probability clamped at `1e-12`.
    pub fn cross_entropy(&mut self, probs: VarId, target: usize) -> Result<VarId, TensorError> {
        self.check_ids("cross_entropy", &[probs])?;
        let t = &self.nodes[probs.0].value;
        if t.rank() != 1 {
            return Err(TensorError::BadRank {
                op: "cross_entropy",
                expected: 1,
                shape: t.shape().to_vec(),
            });
        }
        let classes = t.shape()[0];
        if target >= classes {
            return Err(TensorError::ClassOutOfRange {
                op: "cross_entropy",
                index: target,
                classes,
            });
        }
        let p = t.data()[target].max(CE_CLAMP);
        Ok(self.push(Tensor::scalar(-p.ln()), Op::CrossEntropy { probs, target }))
    }

    /// Mean of `−log(probs[r][targets[r]])` over the rows of a rank-2
    /// probability matrix. The minibatch form of [`Tape::cross_entropy`].
    pub fn cross_entropy_mean(
        &mut self,
        probs: VarId,
        targets: &[usize],
    ) -> Result<VarId, TensorError> {
        self.check_ids("cross_entropy_mean", &[probs])?;
        let t = &self.nodes[probs.0].value;
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => {
                return Err(TensorError::BadRank {
                    op: "cross_entropy_mean",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        if targets.len() != rows {
            return Err(TensorError::LengthMismatch {
                op: "cross_entropy_mean",
                len: targets.len(),
                shape: vec![rows],
            });
        }
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= cols {
                return Err(TensorError::ClassOutOfRange {
                    op: "cross_entropy_mean",
                    index: target,
                    classes: cols,
                });
            }
            total -= t.data()[r * cols + target].max(CE_CLAMP).ln();
        }
        let value = total / rows as f64;
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropyMean {
                probs,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy between per-element probabilities and
    /// targets in `[0,1]`, clamped away from 0 and 1.
    pub fn bce_mean(&mut self, probs: VarId, targets: &Tensor) -> Result<VarId, TensorError> {
        self.check_ids("bce_mean", &[probs])?;
        let t = &self.nodes[probs.0].value;
        check_same_shape("bce_mean", t, targets)?;
        let n = t.numel() as f64;
        let mut total = 0.0;
        for (&p, &y) in t.data().iter().zip(targets.data().iter()) {
            let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::BceMean {
                probs,
                targets: targets.clone(),
            },
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode accumulation from a scalar root. Returns the gradient
    /// of the root with respect to every reachable variable.
    pub fn backward(&self, root: VarId) -> Result<Gradients, TensorError> {
        self.check_ids("backward", &[root])?;
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            self.accumulate_inputs(i, &grad, &mut grads);
            grads[i] = Some(grad);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_inputs(&self, i: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = grad.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(grads, *a, self.shape_of(*a), g);
                add_into(grads, *b, self.shape_of(*b), g);
            }
            Op::Sub(a, b) => {
                add_into(grads, *a, self.shape_of(*a), g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                add_into(grads, *b, self.shape_of(*b), &neg);
            }
            Op::Mul(a, b) => {
                let (da, db): (Vec<f64>, Vec<f64>) = {
                    let ta = self.nodes[a.0].value.data();
                    let tb = self.nodes[b.0].value.data();
                    (
                        g.iter().zip(tb.iter()).map(|(gv, y)| gv * y).collect(),
                        g.iter().zip(ta.iter()).map(|(gv, x)| gv * x).collect(),
                    )
                };
                add_into(grads, *a, self.shape_of(*a), &da);
                add_into(grads, *b, self.shape_of(*b), &db);
            }
            Op::MatMul { lhs, rhs, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let a_data = self.nodes[lhs.0].value.data();
                let b_data = self.nodes[rhs.0].value.data();
                // dA = G Bᵀ, dB = Aᵀ G
                let bt = transpose_raw(b_data, k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                let at = transpose_raw(a_data, m, k);
                let db = matmul_raw(&at, g, k, m, n);
                add_into(grads, *lhs, self.shape_of(*lhs), &da);
                add_into(grads, *rhs, self.shape_of(*rhs), &db);
            }
            Op::Affine { x, w, b } => {
                let sx = self.nodes[x.0].value.shape();
                let (rows, n_in) = (sx[0], sx[1]);
                let n_out = self.nodes[w.0].value.shape()[1];
                let x_data = self.nodes[x.0].value.data();
                let w_data = self.nodes[w.0].value.data();
                let wt = transpose_raw(w_data, n_in, n_out);
                let dx = matmul_raw(g, &wt, rows, n_out, n_in);
                let xt = transpose_raw(x_data, rows, n_in);
                let dw = matmul_raw(&xt, g, n_in, rows, n_out);
                let mut db = vec![0.0; n_out];
                for r in 0..rows {
                    for c in 0..n_out {
                        db[c] += g[r * n_out + c];
                    }
                }
                add_into(grads, *x, self.shape_of(*x), &dx);
                add_into(grads, *w, self.shape_of(*w), &dw);
                add_into(grads, *b, self.shape_of(*b), &db);
            }
            Op::Relu(a) => {
                let input = self.nodes[a.0].value.data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(input.iter())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Tanh(a) => {
                let out = self.nodes[i].value.data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(gv, &t)| gv * (1.0 - t * t))
                    .collect();
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[i].value.data();
                let da: Vec<f64> = g
                    .iter()
                    .zip(out.iter())
                    .map(|(gv, &s)| gv * s * (1.0 - s))
                    .collect();
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Softmax(a) => {
                // per row: ds_j = s_j (g_j − Σ_k g_k s_k)
                let out = self.nodes[i].value.data();
                let shape = self.nodes[i].value.shape();
                let (rows, cols) = match shape {
                    [c] => (1, *c),
                    [r, c] => (*r, *c),
                    _ => unreachable!("softmax output rank"),
                };
                let mut da = vec![0.0; out.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|c| g[base + c] * out[base + c]).sum();
                    for c in 0..cols {
                        da[base + c] = out[base + c] * (g[base + c] - dot);
                    }
                }
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Concat { lhs, rhs, axis } => {
                let sa = self.nodes[lhs.0].value.shape().to_vec();
                let sb = self.nodes[rhs.0].value.shape().to_vec();
                match (sa.as_slice(), sb.as_slice(), *axis) {
                    ([la], _, 0) => {
                        add_into(grads, *lhs, self.shape_of(*lhs), &g[..*la]);
                        add_into(grads, *rhs, self.shape_of(*rhs), &g[*la..]);
                    }
                    ([r1, c], _, 0) => {
                        let split = r1 * c;
                        add_into(grads, *lhs, self.shape_of(*lhs), &g[..split]);
                        add_into(grads, *rhs, self.shape_of(*rhs), &g[split..]);
                    }
                    ([r1, c1], [_, c2], 1) => {
                        let mut da = Vec::with_capacity(r1 * c1);
                        let mut db = Vec::with_capacity(r1 * c2);
                        let total = c1 + c2;
                        for r in 0..*r1 {
                            da.extend_from_slice(&g[r * total..r * total + c1]);
                            db.extend_from_slice(&g[r * total + c1..(r + 1) * total]);
                        }
                        add_into(grads, *lhs, self.shape_of(*lhs), &da);
                        add_into(grads, *rhs, self.shape_of(*rhs), &db);
                    }
                    _ => unreachable!("concat op recorded with validated shapes"),
                }
            }
            Op::Reshape(a) => {
                add_into(grads, *a, self.shape_of(*a), g);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                let da = vec![g[0]; n];
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                let da = vec![g[0] / n as f64; n];
                add_into(grads, *a, self.shape_of(*a), &da);
            }
            Op::Scale { input, factor } => {
                let da: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                add_into(grads, *input, self.shape_of(*input), &da);
            }
            Op::L1Distance(a, b) => {
                // subgradient: sign(a − b), 0 at equality
                let ta = self.nodes[a.0].value.data();
                let tb = self.nodes[b.0].value.data();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; ta.len()];
                for idx in 0..ta.len() {
                    let d = ta[idx] - tb[idx];
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    da[idx] = g[0] * s;
                    db[idx] = -g[0] * s;
                }
                add_into(grads, *a, self.shape_of(*a), &da);
                add_into(grads, *b, self.shape_of(*b), &db);
            }
            Op::CrossEntropy { probs, target } => {
                let t = self.nodes[probs.0].value.data();
                let mut da = vec![0.0; t.len()];
                // gradient is zero in the clamped region
                if t[*target] > CE_CLAMP {
                    da[*target] = -g[0] / t[*target];
                }
                add_into(grads, *probs, self.shape_of(*probs), &da);
            }
            Op::CrossEntropyMean { probs, targets } => {
                let t = self.nodes[probs.0].value.data();
                let cols = self.nodes[probs.0].value.shape()[1];
                let rows = targets.len();
                let mut da = vec![0.0; t.len()];
                for (r, &target) in targets.iter().enumerate() {
                    let p = t[r * cols + target];
                    if p > CE_CLAMP {
                        da[r * cols + target] = -g[0] / (p * rows as f64);
                    }
                }
                add_into(grads, *probs, self.shape_of(*probs), &da);
            }
            Op::BceMean { probs, targets } => {
                let t = self.nodes[probs.0].value.data();
                let n = t.len() as f64;
                let da: Vec<f64> = t
                    .iter()
                    .zip(targets.data().iter())
                    .map(|(&p, &y)| {
                        let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                        g[0] * (-y / p + (1.0 - y) / (1.0 - p)) / n
                    })
                    .collect();
                add_into(grads, *probs, self.shape_of(*probs), &da);
            }
        }
    }

    fn shape_of(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }
}

fn add_into(grads: &mut [Option<Tensor>], id: VarId, shape: &[usize], delta: &[f64]) {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape.to_vec()));
    }
    let acc = slot.as_mut().expect("just initialized");
    for (a, d) in acc.data_mut().iter_mut().zip(delta.iter()) {
        *a += d;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in dst.iter_mut().zip(row.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences at `x`, returning the max relative error
/// `|analytic − numeric| / max(1, |numeric|)` over coordinates.
///
/// The caller must pick `x` away from kinks (relu, |·|) so the function is
/// smooth where it is probed.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Tape, VarId) -> VarId,
{
    let mut tape = Tape::new();
    let id = tape.var(x.clone());
    let root = f(&mut tape, id);
    let grads = tape
        .backward(root)
        .expect("grad_check requires a scalar-valued function");
    let analytic = grads.get_or_zeros(id, x.shape());

    let mut max_err: f64 = 0.0;
    for i in 0..x.numel() {
        let eval = |v: f64| -> f64 {
            let mut probe = x.clone();
            probe.data_mut()[i] = v;
            let mut t = Tape::new();
            let pid = t.var(probe);
            let r = f(&mut t, pid);
            t.value(r).item()
        };
        let base = x.data()[i];
        let numeric = (eval(base + eps) - eval(base - eps)) / (2.0 * eps);
        let err = (analytic.data()[i] - numeric).abs() / numeric.abs().max(1.0);
        max_err = max_err.max(err);
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_identity_preserves_vector() {
        let mut tape = Tape::new();
        let eye = tape.var(
            Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let v = tape.var(Tensor::vector(&[2.0, -1.5, 0.25]));
        let out = tape.matmul(eye, v).unwrap();
        assert_eq!(tape.value(out).data(), &[2.0, -1.5, 0.25]);
        assert_eq!(tape.value(out).shape(), &[3]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(&[0.0, 0.0, 0.0]));
        let s = tape.softmax(x).unwrap();
        for &p in tape.value(s).data() {
            assert_close(p, 1.0 / 3.0, 1e-12);
        }
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(&[-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_names_operation_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::vector(&[1.0, 2.0]));
        let b = tape.var(Tensor::vector(&[1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        match err {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                assert_eq!(op, "add");
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn l1_distance_examples() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(&[0.2, 0.8]));
        let y = tape.var(Tensor::vector(&[0.5, 0.5]));
        let d = tape.l1_distance(x, y).unwrap();
        assert_close(tape.value(d).item(), 0.6, 1e-12);

        let same = tape.l1_distance(x, x).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
    }

    #[test]
    fn l1_gradient_is_signs() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::vector(&[0.5, -0.3]));
        let b = tape.var(Tensor::vector(&[0.0, 0.0]));
        let d = tape.l1_distance(a, b).unwrap();
        let grads = tape.backward(d).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, -1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[-1.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::new();
        let probs = tape.var(Tensor::vector(&[0.1; 10]));
        let ce = tape.cross_entropy(probs, 7).unwrap();
        assert_close(tape.value(ce).item(), 2.302585092994046, 1e-12);
    }

    #[test]
    fn cross_entropy_confident_and_analytic() {
        let mut tape = Tape::new();
        let sure = tape.var(Tensor::vector(&[
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ]));
        let ce = tape.cross_entropy(sure, 0).unwrap();
        assert!(tape.value(ce).item().abs() < 1e-9);

        let two = tape.var(Tensor::vector(&[0.7, 0.3]));
        let ce2 = tape.cross_entropy(two, 1).unwrap();
        assert_close(tape.value(ce2).item(), 1.2039728043259361, 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::new();
        let probs = tape.var(Tensor::vector(&[0.5, 0.5]));
        let err = tape.cross_entropy(probs, 2).unwrap_err();
        assert!(matches!(err, TensorError::ClassOutOfRange { .. }));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_l1_to_zero() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(&[2.0, -3.0]));
        let z = tape.var(Tensor::vector(&[0.0, 0.0]));
        let d = tape.l1_distance(x, z).unwrap();
        let grads = tape.backward(d).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::vector(&[1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn grad_check_sum_of_squares() {
        let x = Tensor::vector(&[1.0, 2.0, 3.0]);
        let err = grad_check(
            |tape, id| {
                let sq = tape.mul(id, id).unwrap();
                tape.sum(sq).unwrap()
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-7, "sum of squares rel err {err}");
    }

    #[test]
    fn grad_check_constant_is_zero() {
        let x = Tensor::vector(&[0.3, -0.4]);
        let err = grad_check(
            |tape, _id| tape.var(Tensor::scalar(5.0)),
            &x,
            1e-6,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_softmax_cross_entropy_chain() {
        // root = cross_entropy(softmax(Wx), c) against central differences
        let w = Tensor::matrix(
            4,
            3,
            vec![
                0.3, -0.6, 0.2, 0.8, 0.1, -0.4, -0.2, 0.5, 0.7, 0.05, -0.3, 0.4,
            ],
        )
        .unwrap();
        let x = Tensor::vector(&[0.9, -0.2, 0.4]);
        let err = grad_check(
            |tape, id| {
                let wv = tape.var(w.clone());
                let logits = tape.matmul(wv, id).unwrap();
                let probs = tape.softmax(logits).unwrap();
                tape.cross_entropy(probs, 2).unwrap()
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-5, "chain rel err {err}");
    }

    #[test]
    fn linearity_of_backward() {
        // grad(a·f + b·g) == a·grad(f) + b·grad(g)
        let x = Tensor::vector(&[0.4, -0.7, 1.2]);
        let (a, b) = (2.5, -0.75);

        let f = |tape: &mut Tape, id: VarId| {
            let sq = tape.mul(id, id).unwrap();
            tape.sum(sq).unwrap()
        };
        let g = |tape: &mut Tape, id: VarId| {
            let t = tape.tanh(id).unwrap();
            tape.sum(t).unwrap()
        };

        let mut tape = Tape::new();
        let id = tape.var(x.clone());
        let fa = f(&mut tape, id);
        let gb = g(&mut tape, id);
        let fa_s = tape.scale(fa, a).unwrap();
        let gb_s = tape.scale(gb, b).unwrap();
        let root = tape.add(fa_s, gb_s).unwrap();
        let combined = tape.backward(root).unwrap();
        let combined = combined.get(id).unwrap();

        let mut t1 = Tape::new();
        let i1 = t1.var(x.clone());
        let r1 = f(&mut t1, i1);
        let g1 = t1.backward(r1).unwrap();
        let mut t2 = Tape::new();
        let i2 = t2.var(x.clone());
        let r2 = g(&mut t2, i2);
        let g2 = t2.backward(r2).unwrap();

        for i in 0..x.numel() {
            let expect = a * g1.get(i1).unwrap().data()[i] + b * g2.get(i2).unwrap().data()[i];
            assert_close(combined.data()[i], expect, 1e-10);
        }
    }

    #[test]
    fn tape_replay_is_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.var(Tensor::vector(&[0.3, -1.2, 0.8, 2.0]));
            let w = tape.var(Tensor::matrix(4, 2, vec![0.1; 8]).unwrap());
            let xr = tape.reshape(x, vec![1, 4]).unwrap();
            let h = tape.matmul(xr, w).unwrap();
            let s = tape.sigmoid(h).unwrap();
            let root = tape.sum(s).unwrap();
            let grads = tape.backward(root).unwrap();
            (
                tape.value(root).item().to_bits(),
                grads
                    .get(x)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn concat_axis1_backward_splits() {
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let err = grad_check(
            |tape, id| {
                let other = tape.var(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap());
                let c = tape.concat(id, other, 1).unwrap();
                let s = tape.sigmoid(c).unwrap();
                tape.sum(s).unwrap()
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-8, "concat rel err {err}");
    }
}
