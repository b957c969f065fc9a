//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records eagerly-evaluated operations; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients for every registered
//! parameter leaf. The op set is exactly what the agent's losses need:
//! elementwise arithmetic, matmul, strided (transposed) convolution,
//! row-softmax machinery, straight-through categorical sampling, and
//! stop-gradient. Parameters live outside the tape in a [`ParamStore`];
//! freezing a parameter group turns its leaves into constants so a loss can
//! evaluate another module's network without ever producing gradients for it.

use std::collections::{HashMap, HashSet};

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors plus their shapes; the single source of truth for
/// every learnable value in the agent.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "param {name}: data/shape mismatch");
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate param name {name}"
        );
        self.names.push(name.to_string());
        self.shapes.push(shape.to_vec());
        self.values.push(data);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

/// Handle to a tensor recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // some variants keep their inputs purely for debugging
enum Op {
    Const,
    Param(ParamId),
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    Div(Id, Id),
    AddScalar(Id, f64),
    MulScalar(Id, f64),
    /// `[m,n] + [n]` broadcast over rows.
    AddRow(Id, Id),
    /// `out[i,j] = x[i,j] * s[i]` with `s` of length `m`.
    RowScale(Id, Id),
    /// `[m,k] x [k,n]`.
    Matmul(Id, Id),
    Sigmoid(Id),
    Tanh(Id),
    Exp(Id),
    Ln(Id),
    Softplus(Id),
    Silu(Id),
    Sqrt(Id),
    Symlog(Id),
    Symexp(Id),
    SumAll(Id),
    /// `[m,n] -> [m]`.
    RowSum(Id),
    LogSoftmaxRows(Id),
    ConcatCols(Vec<Id>),
    SliceCols {
        x: Id,
        start: usize,
        len: usize,
    },
    /// Vertical stack of same-width matrices.
    ConcatRows(Vec<Id>),
    /// Contiguous row range of a matrix.
    SliceRows {
        x: Id,
        start: usize,
        len: usize,
    },
    Reshape(Id),
    StopGrad(Id),
    /// Forward: one-hot per row drawn from the probability rows by inverse
    /// CDF on the stored noise. Backward: identity into the probabilities
    /// (straight-through convention).
    StraightThrough {
        probs: Id,
        noise: Vec<f64>,
    },
    /// Elementwise `max(x, c)`; gradient passes only where `x > c`.
    MaxConst(Id, f64),
    /// Elementwise clamp; gradient passes strictly inside the range.
    Clamp(Id, f64, f64),
    Conv2d {
        x: Id,
        w: Id,
        b: Id,
        stride: usize,
        pad: usize,
    },
    ConvT2d {
        x: Id,
        w: Id,
        b: Id,
        stride: usize,
        pad: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by a backward pass, keyed by parameter id.
#[derive(Debug, Default)]
pub struct Grads {
    by_param: HashMap<ParamId, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Id>,
    frozen: HashSet<ParamId>,
    sg_overrides: Option<Vec<Vec<f64>>>,
    sg_cursor: usize,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
            param_leaves: HashMap::new(),
            frozen: HashSet::new(),
            sg_overrides: None,
            sg_cursor: 0,
        }
    }

    /// Pins the values of all subsequent [`Tape::stop_grad`] nodes, in
    /// creation order, to the given list. Finite-difference checks use this
    /// to hold stop-gradient branches at their base-point values, so the
    /// probed function is exactly the one the tape differentiates.
    pub fn override_stop_grads(&mut self, values: Vec<Vec<f64>>) {
        self.sg_overrides = Some(values);
        self.sg_cursor = 0;
    }

    /// Values of every stop-gradient node on this tape, in creation order.
    pub fn stop_grad_values(&self) -> Vec<Vec<f64>> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::StopGrad(_)))
            .map(|n| n.value.clone())
            .collect()
    }

    /// Marks parameters as constants for this tape: their values are used in
    /// the forward pass but no gradient is ever produced for them.
    pub fn freeze(&mut self, ids: &[ParamId]) {
        self.frozen.extend(ids.iter().copied());
    }

    pub fn shape(&self, id: Id) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: Id) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: Id) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Id {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Id(self.nodes.len() - 1)
    }

    fn ng(&self, id: Id) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- leaves -----------------------------------------------------------

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Id {
        self.push(shape.to_vec(), data, Op::Const, false)
    }

    pub fn scalar(&mut self, v: f64) -> Id {
        self.constant(&[1], vec![v])
    }

    /// Registers (and memoizes) a parameter leaf. Frozen parameters come back
    /// as constants.
    pub fn param(&mut self, id: ParamId) -> Id {
        if let Some(&leaf) = self.param_leaves.get(&id) {
            return leaf;
        }
        let shape = self.store.shape(id).to_vec();
        let value = self.store.value(id).to_vec();
        let leaf = if self.frozen.contains(&id) {
            self.push(shape, value, Op::Const, false)
        } else {
            self.push(shape, value, Op::Param(id), true)
        };
        self.param_leaves.insert(id, leaf);
        leaf
    }

    // ---- elementwise ------------------------------------------------------

    fn binary_same_shape(&mut self, a: Id, b: Id, f: impl Fn(f64, f64) -> f64, op: Op) -> Id {
        assert_eq!(
            self.nodes[a.0].shape, self.nodes[b.0].shape,
            "shape mismatch in elementwise op"
        );
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(self.nodes[a.0].shape.clone(), value, op, ng)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.binary_same_shape(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        self.binary_same_shape(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        self.binary_same_shape(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Id, b: Id) -> Id {
        self.binary_same_shape(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Id, c: f64) -> Id {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x + c).collect();
        let ng = self.ng(a);
        self.push(self.nodes[a.0].shape.clone(), value, Op::AddScalar(a, c), ng)
    }

    pub fn mul_scalar(&mut self, a: Id, c: f64) -> Id {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| x * c).collect();
        let ng = self.ng(a);
        self.push(self.nodes[a.0].shape.clone(), value, Op::MulScalar(a, c), ng)
    }

    pub fn neg(&mut self, a: Id) -> Id {
        self.mul_scalar(a, -1.0)
    }

    fn unary(&mut self, a: Id, f: impl Fn(f64) -> f64, op: Op) -> Id {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let ng = self.ng(a);
        self.push(self.nodes[a.0].shape.clone(), value, op, ng)
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Id) -> Id {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Id) -> Id {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Id) -> Id {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Id) -> Id {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn silu(&mut self, a: Id) -> Id {
        self.unary(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sqrt(&mut self, a: Id) -> Id {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn symlog(&mut self, a: Id) -> Id {
        self.unary(a, crate::num::symlog, Op::Symlog(a))
    }

    pub fn symexp(&mut self, a: Id) -> Id {
        self.unary(a, crate::num::symexp, Op::Symexp(a))
    }

    pub fn max_const(&mut self, a: Id, c: f64) -> Id {
        self.unary(a, |x| x.max(c), Op::MaxConst(a, c))
    }

    pub fn clamp(&mut self, a: Id, lo: f64, hi: f64) -> Id {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn square(&mut self, a: Id) -> Id {
        self.mul(a, a)
    }

    // ---- shape and broadcast ops -------------------------------------------

    /// Rows-of-matrix plus vector bias.
    pub fn add_row(&mut self, x: Id, bias: Id) -> Id {
        let (m, n) = self.rows_cols(x);
        assert_eq!(self.nodes[bias.0].value.len(), n, "add_row: bias length");
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..m {
            for j in 0..n {
                value[i * n + j] += self.nodes[bias.0].value[j];
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(self.nodes[x.0].shape.clone(), value, Op::AddRow(x, bias), ng)
    }

    /// Scales each row `i` of `x` by `s[i]`.
    pub fn row_scale(&mut self, x: Id, s: Id) -> Id {
        let (m, n) = self.rows_cols(x);
        assert_eq!(self.nodes[s.0].value.len(), m, "row_scale: scale length");
        let mut value = self.nodes[x.0].value.clone();
        for i in 0..m {
            let c = self.nodes[s.0].value[i];
            for j in 0..n {
                value[i * n + j] *= c;
            }
        }
        let ng = self.ng(x) || self.ng(s);
        self.push(self.nodes[x.0].shape.clone(), value, Op::RowScale(x, s), ng)
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut value = vec![0.0; m * n];
        matmul_into(
            &self.nodes[a.0].value,
            &self.nodes[b.0].value,
            m,
            k,
            n,
            &mut value,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(vec![m, n], value, Op::Matmul(a, b), ng)
    }

    pub fn sum_all(&mut self, a: Id) -> Id {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let ng = self.ng(a);
        self.push(vec![1], vec![s], Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Id) -> Id {
        let n = self.nodes[a.0].value.len();
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn row_sum(&mut self, a: Id) -> Id {
        let (m, n) = self.rows_cols(a);
        let mut value = vec![0.0; m];
        for i in 0..m {
            value[i] = self.nodes[a.0].value[i * n..(i + 1) * n].iter().sum();
        }
        let ng = self.ng(a);
        self.push(vec![m], value, Op::RowSum(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Id) -> Id {
        let (m, n) = self.rows_cols(a);
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a.0].value[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                value[i * n + j] = row[j] - lse;
            }
        }
        let ng = self.ng(a);
        self.push(vec![m, n], value, Op::LogSoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Id]) -> Id {
        assert!(!parts.is_empty());
        let m = self.rows_cols(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pm, pn) = self.rows_cols(p);
                assert_eq!(pm, m, "concat_cols: row mismatch");
                pn
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut value = vec![0.0; m * n];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            for i in 0..m {
                value[i * n + off..i * n + off + w]
                    .copy_from_slice(&self.nodes[p.0].value[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(vec![m, n], value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Id, start: usize, len: usize) -> Id {
        let (m, n) = self.rows_cols(x);
        assert!(start + len <= n, "slice_cols out of range");
        let mut value = vec![0.0; m * len];
        for i in 0..m {
            value[i * len..(i + 1) * len]
                .copy_from_slice(&self.nodes[x.0].value[i * n + start..i * n + start + len]);
        }
        let ng = self.ng(x);
        self.push(vec![m, len], value, Op::SliceCols { x, start, len }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Id]) -> Id {
        assert!(!parts.is_empty());
        let n = self.rows_cols(parts[0]).1;
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.rows_cols(p);
            assert_eq!(pn, n, "concat_rows: column mismatch");
            m += pm;
        }
        let mut value = Vec::with_capacity(m * n);
        for &p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(vec![m, n], value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Id, start: usize, len: usize) -> Id {
        let (m, n) = self.rows_cols(x);
        assert!(start + len <= m, "slice_rows out of range");
        let value = self.nodes[x.0].value[start * n..(start + len) * n].to_vec();
        let ng = self.ng(x);
        self.push(vec![len, n], value, Op::SliceRows { x, start, len }, ng)
    }

    pub fn reshape(&mut self, x: Id, shape: &[usize]) -> Id {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[x.0].value.len(),
            "reshape: element count mismatch"
        );
        let value = self.nodes[x.0].value.clone();
        let ng = self.ng(x);
        self.push(shape.to_vec(), value, Op::Reshape(x), ng)
    }

    pub fn stop_grad(&mut self, x: Id) -> Id {
        let value = if let Some(overrides) = &self.sg_overrides {
            let v = overrides
                .get(self.sg_cursor)
                .expect("more stop_grad nodes than overrides")
                .clone();
            assert_eq!(v.len(), self.nodes[x.0].value.len(), "stop_grad override shape");
            self.sg_cursor += 1;
            v
        } else {
            self.nodes[x.0].value.clone()
        };
        self.push(self.nodes[x.0].shape.clone(), value, Op::StopGrad(x), false)
    }

    /// One straight-through one-hot sample per row of a row-stochastic matrix.
    pub fn straight_through(&mut self, probs: Id, noise: &[f64]) -> Id {
        let (m, n) = self.rows_cols(probs);
        assert_eq!(noise.len(), m, "straight_through: one noise draw per row");
        let value = crate::num::sample_onehot_rows(&self.nodes[probs.0].value, m, n, noise);
        let ng = self.ng(probs);
        self.push(
            vec![m, n],
            value,
            Op::StraightThrough {
                probs,
                noise: noise.to_vec(),
            },
            ng,
        )
    }

    // ---- convolution ------------------------------------------------------

    /// `x: [b, cin, h, w]`, `w: [cout, cin, kh, kw]`, `b: [cout]`.
    pub fn conv2d(&mut self, x: Id, w: Id, b: Id, stride: usize, pad: usize) -> Id {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(xs.len(), 4, "conv2d input must be 4-d");
        assert_eq!(ws.len(), 4, "conv2d weight must be 4-d");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch");
        let (bsz, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let ho = conv_out(h, kh, stride, pad);
        let wo = conv_out(win, kw, stride, pad);
        let mut value = vec![0.0; bsz * cout * ho * wo];
        conv2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            bsz,
            cin,
            h,
            win,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
            &mut value,
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            vec![bsz, cout, ho, wo],
            value,
            Op::Conv2d { x, w, b, stride, pad },
            ng,
        )
    }

    /// Transposed convolution. `x: [b, cin, h, w]`, `w: [cin, cout, kh, kw]`.
    pub fn conv2d_transpose(&mut self, x: Id, w: Id, b: Id, stride: usize, pad: usize) -> Id {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        assert_eq!(xs.len(), 4);
        assert_eq!(ws.len(), 4);
        assert_eq!(xs[1], ws[0], "conv2d_transpose channel mismatch");
        let (bsz, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (_, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (win - 1) * stride + kw - 2 * pad;
        let mut value = vec![0.0; bsz * cout * ho * wo];
        convt2d_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &self.nodes[b.0].value,
            bsz,
            cin,
            h,
            win,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
            &mut value,
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            vec![bsz, cout, ho, wo],
            value,
            Op::ConvT2d { x, w, b, stride, pad },
            ng,
        )
    }

    fn rows_cols(&self, id: Id) -> (usize, usize) {
        let s = &self.nodes[id.0].shape;
        match s.len() {
            1 => (s[0], 1),
            2 => (s[0], s[1]),
            _ => {
                let n = *s.last().unwrap();
                (self.nodes[id.0].value.len() / n, n)
            }
        }
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar output; returns gradients for every
    /// non-frozen parameter that influences it.
    pub fn backward(&self, out: Id) -> Grads {
        assert_eq!(
            self.nodes[out.0].value.len(),
            1,
            "backward requires a scalar output"
        );
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(vec![1.0]);
        let mut grads = Grads::default();

        for idx in (0..=out.0).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(pid) => {
                    grads
                        .by_param
                        .entry(*pid)
                        .and_modify(|acc| {
                            for (a, gi) in acc.iter_mut().zip(&g) {
                                *a += gi;
                            }
                        })
                        .or_insert(g);
                }
                Op::Add(a, b) => {
                    self.accum(&mut adj, *a, &g, 1.0);
                    self.accum(&mut adj, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut adj, *a, &g, 1.0);
                    self.accum(&mut adj, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let da: Vec<f64> = g
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&gi, &bv)| gi * bv)
                            .collect();
                        self.accum(&mut adj, *a, &da, 1.0);
                    }
                    if self.ng(*b) {
                        let db: Vec<f64> = g
                            .iter()
                            .zip(&self.nodes[a.0].value)
                            .map(|(&gi, &av)| gi * av)
                            .collect();
                        self.accum(&mut adj, *b, &db, 1.0);
                    }
                }
                Op::Div(a, b) => {
                    if self.ng(*a) {
                        let da: Vec<f64> = g
                            .iter()
                            .zip(&self.nodes[b.0].value)
                            .map(|(&gi, &bv)| gi / bv)
                            .collect();
                        self.accum(&mut adj, *a, &da, 1.0);
                    }
                    if self.ng(*b) {
                        let db: Vec<f64> = g
                            .iter()
                            .zip(self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value))
                            .map(|(&gi, (&av, &bv))| -gi * av / (bv * bv))
                            .collect();
                        self.accum(&mut adj, *b, &db, 1.0);
                    }
                }
                Op::AddScalar(a, _) => self.accum(&mut adj, *a, &g, 1.0),
                Op::MulScalar(a, c) => self.accum(&mut adj, *a, &g, *c),
                Op::AddRow(x, bias) => {
                    let (m, n) = self.rows_cols(*x);
                    if self.ng(*x) {
                        self.accum(&mut adj, *x, &g, 1.0);
                    }
                    if self.ng(*bias) {
                        let mut db = vec![0.0; n];
                        for i in 0..m {
                            for j in 0..n {
                                db[j] += g[i * n + j];
                            }
                        }
                        self.accum(&mut adj, *bias, &db, 1.0);
                    }
                }
                Op::RowScale(x, s) => {
                    let (m, n) = self.rows_cols(*x);
                    if self.ng(*x) {
                        let mut dx = vec![0.0; m * n];
                        for i in 0..m {
                            let c = self.nodes[s.0].value[i];
                            for j in 0..n {
                                dx[i * n + j] = g[i * n + j] * c;
                            }
                        }
                        self.accum(&mut adj, *x, &dx, 1.0);
                    }
                    if self.ng(*s) {
                        let mut ds = vec![0.0; m];
                        for i in 0..m {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * self.nodes[x.0].value[i * n + j];
                            }
                            ds[i] = acc;
                        }
                        self.accum(&mut adj, *s, &ds, 1.0);
                    }
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.rows_cols(*a);
                    let n = self.rows_cols(*b).1;
                    if self.ng(*a) {
                        // da = g x b^T
                        let mut da = vec![0.0; m * k];
                        let bv = &self.nodes[b.0].value;
                        for i in 0..m {
                            for j in 0..n {
                                let gi = g[i * n + j];
                                if gi != 0.0 {
                                    for l in 0..k {
                                        da[i * k + l] += gi * bv[l * n + j];
                                    }
                                }
                            }
                        }
                        self.accum(&mut adj, *a, &da, 1.0);
                    }
                    if self.ng(*b) {
                        // db = a^T x g
                        let mut db = vec![0.0; k * n];
                        let av = &self.nodes[a.0].value;
                        for i in 0..m {
                            for l in 0..k {
                                let ai = av[i * k + l];
                                if ai != 0.0 {
                                    for j in 0..n {
                                        db[l * n + j] += ai * g[i * n + j];
                                    }
                                }
                            }
                        }
                        self.accum(&mut adj, *b, &db, 1.0);
                    }
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gi, &y)| gi * y * (1.0 - y))
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gi, &y)| gi * (1.0 - y * y))
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Exp(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gi, &y)| gi * y)
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Ln(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| gi / x)
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Softplus(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| gi * sigmoid(x))
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Silu(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| {
                            let s = sigmoid(x);
                            gi * (s + x * s * (1.0 - s))
                        })
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Sqrt(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gi, &y)| gi / (2.0 * y))
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Symlog(a) => {
                    // d/dx sign(x) ln(|x|+1) = 1/(|x|+1)
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| gi / (x.abs() + 1.0))
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Symexp(a) => {
                    // d/dy sign(y)(e^{|y|}-1) = e^{|y|}
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &y)| gi * y.abs().exp())
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::SumAll(a) => {
                    let da = vec![g[0]; self.nodes[a.0].value.len()];
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::RowSum(a) => {
                    let (m, n) = self.rows_cols(*a);
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g[i];
                        }
                    }
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = self.rows_cols(*a);
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let gsum: f64 = g[i * n..(i + 1) * n].iter().sum();
                        for j in 0..n {
                            da[i * n + j] = g[i * n + j] - node.value[i * n + j].exp() * gsum;
                        }
                    }
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::ConcatCols(parts) => {
                    let n = self.rows_cols(Id(idx)).1;
                    let m = self.rows_cols(Id(idx)).0;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.rows_cols(p).1;
                        if self.ng(p) {
                            let mut dp = vec![0.0; m * w];
                            for i in 0..m {
                                dp[i * w..(i + 1) * w]
                                    .copy_from_slice(&g[i * n + off..i * n + off + w]);
                            }
                            self.accum(&mut adj, p, &dp, 1.0);
                        }
                        off += w;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (m, n) = self.rows_cols(*x);
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        dx[i * n + start..i * n + start + len]
                            .copy_from_slice(&g[i * len..(i + 1) * len]);
                    }
                    self.accum(&mut adj, *x, &dx, 1.0);
                }
                Op::ConcatRows(parts) => {
                    let n = self.rows_cols(Id(idx)).1;
                    let mut off = 0;
                    for &p in parts {
                        let pm = self.rows_cols(p).0;
                        if self.ng(p) {
                            let dp = g[off * n..(off + pm) * n].to_vec();
                            self.accum(&mut adj, p, &dp, 1.0);
                        }
                        off += pm;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let (m, n) = self.rows_cols(*x);
                    let mut dx = vec![0.0; m * n];
                    dx[start * n..(start + len) * n].copy_from_slice(&g);
                    self.accum(&mut adj, *x, &dx, 1.0);
                }
                Op::Reshape(x) => self.accum(&mut adj, *x, &g, 1.0),
                Op::StopGrad(_) => {}
                Op::StraightThrough { probs, .. } => {
                    // Pass-through: gradient w.r.t. the sample flows into the
                    // probabilities unchanged.
                    self.accum(&mut adj, *probs, &g, 1.0);
                }
                Op::MaxConst(a, c) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| if x > *c { gi } else { 0.0 })
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Clamp(a, lo, hi) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(&gi, &x)| if x > *lo && x < *hi { gi } else { 0.0 })
                        .collect();
                    self.accum(&mut adj, *a, &da, 1.0);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    self.conv2d_backward(&mut adj, Id(idx), *x, *w, *b, *stride, *pad, &g);
                }
                Op::ConvT2d { x, w, b, stride, pad } => {
                    self.convt2d_backward(&mut adj, Id(idx), *x, *w, *b, *stride, *pad, &g);
                }
            }
        }
        grads
    }

    fn accum(&self, adj: &mut [Option<Vec<f64>>], target: Id, g: &[f64], scale: f64) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut adj[target.0] {
            Some(acc) => {
                for (a, &gi) in acc.iter_mut().zip(g) {
                    *a += gi * scale;
                }
            }
            None => {
                let v = if scale == 1.0 {
                    g.to_vec()
                } else {
                    g.iter().map(|&gi| gi * scale).collect()
                };
                adj[target.0] = Some(v);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        out: Id,
        x: Id,
        w: Id,
        b: Id,
        stride: usize,
        pad: usize,
        g: &[f64],
    ) {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        let os = &self.nodes[out.0].shape;
        let (bsz, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let (ho, wo) = (os[2], os[3]);
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;

        if self.ng(*&b) {
            let mut db = vec![0.0; cout];
            for bi in 0..bsz {
                for co in 0..cout {
                    let base = ((bi * cout + co) * ho) * wo;
                    db[co] += g[base..base + ho * wo].iter().sum::<f64>();
                }
            }
            self.accum(adj, b, &db, 1.0);
        }
        if self.ng(x) {
            let mut dx = vec![0.0; bsz * cin * h * win];
            for bi in 0..bsz {
                for co in 0..cout {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let gi = g[((bi * cout + co) * ho + oh) * wo + ow];
                            if gi == 0.0 {
                                continue;
                            }
                            for ci in 0..cin {
                                for ki in 0..kh {
                                    let ih = oh * stride + ki;
                                    if ih < pad || ih - pad >= h {
                                        continue;
                                    }
                                    let ih = ih - pad;
                                    for kj in 0..kw {
                                        let iw = ow * stride + kj;
                                        if iw < pad || iw - pad >= win {
                                            continue;
                                        }
                                        let iw = iw - pad;
                                        dx[((bi * cin + ci) * h + ih) * win + iw] +=
                                            gi * wv[((co * cin + ci) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.accum(adj, x, &dx, 1.0);
        }
        if self.ng(w) {
            let mut dw = vec![0.0; cout * cin * kh * kw];
            for bi in 0..bsz {
                for co in 0..cout {
                    for oh in 0..ho {
                        for ow in 0..wo {
                            let gi = g[((bi * cout + co) * ho + oh) * wo + ow];
                            if gi == 0.0 {
                                continue;
                            }
                            for ci in 0..cin {
                                for ki in 0..kh {
                                    let ih = oh * stride + ki;
                                    if ih < pad || ih - pad >= h {
                                        continue;
                                    }
                                    let ih = ih - pad;
                                    for kj in 0..kw {
                                        let iw = ow * stride + kj;
                                        if iw < pad || iw - pad >= win {
                                            continue;
                                        }
                                        let iw = iw - pad;
                                        dw[((co * cin + ci) * kh + ki) * kw + kj] +=
                                            gi * xv[((bi * cin + ci) * h + ih) * win + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.accum(adj, w, &dw, 1.0);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn convt2d_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        out: Id,
        x: Id,
        w: Id,
        b: Id,
        stride: usize,
        pad: usize,
        g: &[f64],
    ) {
        let xs = &self.nodes[x.0].shape;
        let ws = &self.nodes[w.0].shape;
        let os = &self.nodes[out.0].shape;
        let (bsz, cin, h, win) = (xs[0], xs[1], xs[2], xs[3]);
        let (_, cout, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let (ho, wo) = (os[2], os[3]);
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;

        if self.ng(*&b) {
            let mut db = vec![0.0; cout];
            for bi in 0..bsz {
                for co in 0..cout {
                    let base = ((bi * cout + co) * ho) * wo;
                    db[co] += g[base..base + ho * wo].iter().sum::<f64>();
                }
            }
            self.accum(adj, b, &db, 1.0);
        }
        if self.ng(x) {
            let mut dx = vec![0.0; bsz * cin * h * win];
            for bi in 0..bsz {
                for ci in 0..cin {
                    for ih in 0..h {
                        for iw in 0..win {
                            let mut acc = 0.0;
                            for co in 0..cout {
                                for ki in 0..kh {
                                    let oh = ih * stride + ki;
                                    if oh < pad || oh - pad >= ho {
                                        continue;
                                    }
                                    let oh = oh - pad;
                                    for kj in 0..kw {
                                        let ow = iw * stride + kj;
                                        if ow < pad || ow - pad >= wo {
                                            continue;
                                        }
                                        let ow = ow - pad;
                                        acc += g[((bi * cout + co) * ho + oh) * wo + ow]
                                            * wv[((ci * cout + co) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                            dx[((bi * cin + ci) * h + ih) * win + iw] = acc;
                        }
                    }
                }
            }
            self.accum(adj, x, &dx, 1.0);
        }
        if self.ng(w) {
            let mut dw = vec![0.0; cin * cout * kh * kw];
            for bi in 0..bsz {
                for ci in 0..cin {
                    for ih in 0..h {
                        for iw in 0..win {
                            let xi = xv[((bi * cin + ci) * h + ih) * win + iw];
                            if xi == 0.0 {
                                continue;
                            }
                            for co in 0..cout {
                                for ki in 0..kh {
                                    let oh = ih * stride + ki;
                                    if oh < pad || oh - pad >= ho {
                                        continue;
                                    }
                                    let oh = oh - pad;
                                    for kj in 0..kw {
                                        let ow = iw * stride + kj;
                                        if ow < pad || ow - pad >= wo {
                                            continue;
                                        }
                                        let ow = ow - pad;
                                        dw[((ci * cout + co) * kh + ki) * kw + kj] +=
                                            xi * g[((bi * cout + co) * ho + oh) * wo + ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.accum(adj, w, &dw, 1.0);
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

pub fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    // Loop order keeps b row-contiguous in the inner loop.
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    bsz: usize,
    cin: usize,
    h: usize,
    win: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    for bi in 0..bsz {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ki in 0..kh {
                            let ih = oh * stride + ki;
                            if ih < pad || ih - pad >= h {
                                continue;
                            }
                            let ih = ih - pad;
                            for kj in 0..kw {
                                let iw = ow * stride + kj;
                                if iw < pad || iw - pad >= win {
                                    continue;
                                }
                                let iw = iw - pad;
                                acc += x[((bi * cin + ci) * h + ih) * win + iw]
                                    * w[((co * cin + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn convt2d_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    bsz: usize,
    cin: usize,
    h: usize,
    win: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    for (co, &bv) in bias.iter().enumerate() {
        for bi in 0..bsz {
            let base = ((bi * cout + co) * ho) * wo;
            for v in &mut out[base..base + ho * wo] {
                *v = bv;
            }
        }
    }
    for bi in 0..bsz {
        for ci in 0..cin {
            for ih in 0..h {
                for iw in 0..win {
                    let xi = x[((bi * cin + ci) * h + ih) * win + iw];
                    if xi == 0.0 {
                        continue;
                    }
                    for co in 0..cout {
                        for ki in 0..kh {
                            let oh = ih * stride + ki;
                            if oh < pad || oh - pad >= ho {
                                continue;
                            }
                            let oh = oh - pad;
                            for kj in 0..kw {
                                let ow = iw * stride + kj;
                                if ow < pad || ow - pad >= wo {
                                    continue;
                                }
                                let ow = ow - pad;
                                out[((bi * cout + co) * ho + oh) * wo + ow] +=
                                    xi * w[((ci * cout + co) * kh + ki) * kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, shape, data) in values {
            s.alloc(name, shape, data.clone());
        }
        s
    }

    #[test]
    fn add_mul_grads() {
        // f(x) = sum(x*x + x) -> grad = 2x + 1
        let store = store_with(&[("x", vec![3], vec![1.0, 2.0, 3.0])]);
        let mut t = Tape::new(&store);
        let x = t.param(ParamId(0));
        let sq = t.mul(x, x);
        let s = t.add(sq, x);
        let loss = t.sum_all(s);
        let g = t.backward(loss);
        assert_eq!(g.get(ParamId(0)).unwrap(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn matmul_grad_matches_analytic() {
        // f = sum(A x B); dA = ones x B^T, dB = A^T x ones
        let store = store_with(&[
            ("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
            ("b", vec![2, 2], vec![0.5, 0.3, 0.7, 0.1]),
        ]);
        let mut t = Tape::new(&store);
        let a = t.param(ParamId(0));
        let b = t.param(ParamId(1));
        let y = t.matmul(a, b);
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        let da = g.get(ParamId(0)).unwrap();
        for &v in &da[0..2] {
            let _ = v;
        }
        assert!((da[0] - 0.8).abs() < 1e-12 && (da[1] - 0.8).abs() < 1e-12);
        let db = g.get(ParamId(1)).unwrap();
        assert!((db[0] - 4.0).abs() < 1e-12 && (db[2] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let store = store_with(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut t = Tape::new(&store);
        let x = t.param(ParamId(0));
        let sg = t.stop_grad(x);
        let y = t.mul(sg, sg);
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        assert!(g.get(ParamId(0)).is_none());
    }

    #[test]
    fn frozen_params_get_no_grads() {
        let store = store_with(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut t = Tape::new(&store);
        t.freeze(&[ParamId(0)]);
        let x = t.param(ParamId(0));
        let y = t.mul(x, x);
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        assert!(g.is_empty());
    }

    #[test]
    fn straight_through_forward_onehot_backward_identity() {
        let store = store_with(&[("logits", vec![2, 3], vec![0.1, 0.2, 0.3, 1.0, -1.0, 0.0])]);
        let mut t = Tape::new(&store);
        let logits = t.param(ParamId(0));
        let lp = t.log_softmax_rows(logits);
        let probs = t.exp(lp);
        let sample = t.straight_through(probs, &[0.4, 0.9]);
        for row in t.value(sample).chunks(3) {
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
        }
        // Linear functional: grad through ST equals grad through probs.
        let w = t.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let weighted = t.mul(sample, w);
        let loss = t.sum_all(weighted);
        let g_st = t.backward(loss).by_param[&ParamId(0)].clone();

        let mut t2 = Tape::new(&store);
        let logits2 = t2.param(ParamId(0));
        let lp2 = t2.log_softmax_rows(logits2);
        let probs2 = t2.exp(lp2);
        let w2 = t2.constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let weighted2 = t2.mul(probs2, w2);
        let loss2 = t2.sum_all(weighted2);
        let g_soft = t2.backward(loss2).by_param[&ParamId(0)].clone();

        for (a, b) in g_st.iter().zip(&g_soft) {
            assert!((a - b).abs() < 1e-12, "st {a} vs soft {b}");
        }
    }

    #[test]
    fn max_const_gradient_gates() {
        let store = store_with(&[("x", vec![2], vec![0.5, 2.0])]);
        let mut t = Tape::new(&store);
        let x = t.param(ParamId(0));
        let y = t.max_const(x, 1.0);
        assert_eq!(t.value(y), &[1.0, 2.0]);
        let loss = t.sum_all(y);
        let g = t.backward(loss);
        assert_eq!(g.get(ParamId(0)).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn conv_shapes() {
        let store = store_with(&[
            ("x", vec![1, 3, 32, 32], vec![0.1; 3 * 32 * 32]),
            ("w", vec![8, 3, 4, 4], vec![0.01; 8 * 3 * 16]),
            ("b", vec![8], vec![0.0; 8]),
        ]);
        let mut t = Tape::new(&store);
        let x = t.param(ParamId(0));
        let w = t.param(ParamId(1));
        let b = t.param(ParamId(2));
        let y = t.conv2d(x, w, b, 2, 1);
        assert_eq!(t.shape(y), &[1, 8, 16, 16]);
    }

    #[test]
    fn conv_transpose_inverts_shape() {
        let store = store_with(&[
            ("x", vec![1, 8, 4, 4], vec![0.1; 8 * 16]),
            ("w", vec![8, 3, 4, 4], vec![0.01; 8 * 3 * 16]),
            ("b", vec![3], vec![0.0; 3]),
        ]);
        let mut t = Tape::new(&store);
        let x = t.param(ParamId(0));
        let w = t.param(ParamId(1));
        let b = t.param(ParamId(2));
        let y = t.conv2d_transpose(x, w, b, 2, 1);
        assert_eq!(t.shape(y), &[1, 3, 8, 8]);
    }
}
