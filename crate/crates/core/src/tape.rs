//! Reverse-mode automatic differentiation over batched 2-D values.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves
//! borrow their values from a [`ParamStore`]; everything else is owned by the
//! tape. [`Tape::backward`] walks the record in reverse and returns gradients
//! aligned with the store.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::scalar::{sigmoid, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    ScaleConst(Var, S),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm { input: Var, inv_std: Array1<S> },
    Softmax(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Gather { table: Var, indices: Vec<usize>, per_row: usize },
    Mean(Var),
    Bce { pred: Var, labels: Vec<S>, eps: S },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScaleRows(..) => "scale_rows",
            Op::ScaleCols(..) => "scale_cols",
            Op::ScaleConst(..) => "scale_const",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Mean(_) => "mean",
            Op::Bce { .. } => "bce",
        }
    }
}

struct Node<S> {
    value: Option<Array2<S>>,
    op: Op<S>,
    scope: usize,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    scopes: Vec<String>,
    scope: usize,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            scopes: vec![String::from("root")],
            scope: 0,
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Runs `f` with nodes attributed to a nested scope named `name`.
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        let prev = self.scope;
        let full = if prev == 0 {
            name.to_string()
        } else {
            format!("{}/{}", self.scopes[prev], name)
        };
        self.scopes.push(full);
        self.scope = self.scopes.len() - 1;
        let out = f(self);
        self.scope = prev;
        out
    }

    fn push(&mut self, value: Option<Array2<S>>, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            scope: self.scope,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(idx)) => self.params.by_index(*idx),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn input(&mut self, value: Array2<S>) -> Var {
        self.push(Some(value), Op::Leaf)
    }

    /// Copies `v` into a new leaf so no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.push(Some(value), Op::Leaf)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Build(format!("missing parameter block `{name}`")))?;
        Ok(self.push(None, Op::Param(idx)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(Some(value), Op::MatMul(a, b))
    }

    /// `a [n×m] + bias [1×m]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a) + self.value(bias);
        self.push(Some(value), Op::AddBias(a, bias))
    }

    /// `x·W + b` for a weight block `[in×out]` and bias `[1×out]`.
    pub fn linear(&mut self, x: Var, weight: &str, bias: &str) -> Result<Var> {
        let w = self.param(weight)?;
        let b = self.param(bias)?;
        let h = self.matmul(x, w);
        Ok(self.add_bias(h, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(Some(value), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(Some(value), Op::Sub(a, b))
    }

    /// Element-wise product of equally shaped values.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(Some(value), Op::Mul(a, b))
    }

    /// `a [n×m] ⊙ s [n×1]`, scaling each row by its own factor.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) * self.value(s);
        self.push(Some(value), Op::ScaleRows(a, s))
    }

    /// `a [n×m] ⊙ r [1×m]`, scaling each column.
    pub fn scale_cols(&mut self, a: Var, r: Var) -> Var {
        let value = self.value(a) * self.value(r);
        self.push(Some(value), Op::ScaleCols(a, r))
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = self.value(a) * c;
        self.push(Some(value), Op::ScaleConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|v| if v > S::zero() { v } else { S::zero() });
        self.push(Some(value), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(Some(value), Op::Sigmoid(a))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without gain or shift.
    pub fn layer_norm(&mut self, a: Var, eps: S) -> Var {
        let x = self.value(a);
        let m = S::lit(x.ncols() as f64);
        let mut out = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in out.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.iter().copied().sum::<S>() / m;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| *v * *v).sum::<S>() / m;
            let is = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            *inv = is;
        }
        self.push(Some(out), Op::LayerNorm { input: a, inv_std })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.iter().copied().sum::<S>();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(Some(out), Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero parts");
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<S>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat rows must agree");
        self.push(Some(value), Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(Some(value), Op::Slice { input: a, start })
    }

    /// Gathers rows of `table` (an embedding table or codebook).
    pub fn gather(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let value = self.value(table).select(Axis(0), &indices);
        self.push(
            Some(value),
            Op::Gather {
                table,
                indices,
                per_row: 1,
            },
        )
    }

    /// Gathers `per_row` table rows per output row and lays them side by side.
    ///
    /// `indices[r * per_row + k]` fills output columns `k*d..(k+1)*d` of row `r`.
    pub fn gather_concat(&mut self, table: Var, indices: Vec<usize>, per_row: usize) -> Var {
        assert!(per_row > 0 && indices.len() % per_row == 0, "gather_concat index layout");
        let t = self.value(table);
        let d = t.ncols();
        let n = indices.len() / per_row;
        let mut value = Array2::zeros((n, per_row * d));
        for (r, mut row) in value.rows_mut().into_iter().enumerate() {
            for k in 0..per_row {
                row.slice_mut(s![k * d..(k + 1) * d])
                    .assign(&t.row(indices[r * per_row + k]));
            }
        }
        self.push(
            Some(value),
            Op::Gather {
                table,
                indices,
                per_row,
            },
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.iter().copied().sum::<S>() / S::lit(x.len() as f64);
        self.push(Some(Array2::from_elem((1, 1), m)), Op::Mean(a))
    }

    /// Mean binary cross-entropy of a `[n×1]` probability column, clipped to `[eps, 1-eps]`.
    pub fn bce(&mut self, pred: Var, labels: &[S], eps: S) -> Var {
        let p = self.value(pred);
        assert_eq!(p.len(), labels.len(), "bce label count");
        let loss = crate::training::loss::bce_mean(p.iter().copied(), labels.iter().copied(), eps);
        self.push(
            Some(Array2::from_elem((1, 1), loss)),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
                eps,
            },
        )
    }

    /// Hash of every piecewise-linear branch taken in this pass (ReLU signs, clip regions).
    ///
    /// Two passes with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for v in self.value(*a).iter() {
                        (*v > S::zero()).hash(&mut h);
                    }
                }
                Op::Bce { pred, eps, .. } => {
                    let hi = S::one() - *eps;
                    for v in self.value(*pred).iter() {
                        (*v < *eps, *v > hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// True if any ReLU input in this pass sits exactly on its kink.
    pub fn touches_kink(&self) -> bool {
        self.nodes.iter().any(|node| match &node.op {
            Op::Relu(a) => self.value(*a).iter().any(|v| *v == S::zero()),
            _ => false,
        })
    }

    /// Fails with the scope name of the first node holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for node in &self.nodes {
            if let Some(v) = &node.value {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        layer: self.scopes[node.scope].clone(),
                        op: node.op.name(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reverse pass from a `[1×1]` root.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut out = Grads::zeros_like(self.params);
        let mut grads: Vec<Option<Array2<S>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(idx) => out.accumulate(*idx, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.mapv(|v| -v));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::ScaleRows(a, sc) => {
                    let gs = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &g * self.value(*sc);
                    acc(&mut grads, *sc, gs);
                    acc(&mut grads, *a, ga);
                }
                Op::ScaleCols(a, r) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*r);
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::ScaleConst(a, c) => acc(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, x| {
                        if *x <= S::zero() {
                            *gv = S::zero();
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().expect("sigmoid value");
                    let mut ga = g;
                    ga.zip_mut_with(y, |gv, yv| *gv = *gv * *yv * (S::one() - *yv));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { input, inv_std } => {
                    let xhat = self.nodes[i].value.as_ref().expect("layer norm value");
                    let m = S::lit(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let gr = g.row(r);
                        let xr = xhat.row(r);
                        let sum_g = gr.sum();
                        let sum_gx = gr.iter().zip(xr.iter()).map(|(a, b)| *a * *b).sum::<S>();
                        let scale = inv_std[r] / m;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = scale * (m * gr[c] - sum_g - xr[c] * sum_gx);
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[i].value.as_ref().expect("softmax value");
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yr, |v, yv| *v -= *yv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Slice { input, start } => {
                    let mut ga = Array2::zeros(self.value(*input).raw_dim());
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *input, ga);
                }
                Op::Gather {
                    table,
                    indices,
                    per_row,
                } => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    let d = gt.ncols();
                    for (j, &ix) in indices.iter().enumerate() {
                        let (r, k) = (j / per_row, j % per_row);
                        let mut dst = gt.row_mut(ix);
                        dst += &g.slice(s![r, k * d..(k + 1) * d]);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Mean(a) => {
                    let shape = self.value(*a).raw_dim();
                    let n = S::lit(self.value(*a).len() as f64);
                    acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Bce { pred, labels, eps } => {
                    let p = self.value(*pred);
                    let n = S::lit(labels.len() as f64);
                    let hi = S::one() - *eps;
                    let upstream = g[[0, 0]];
                    let mut gp = Array2::zeros(p.raw_dim());
                    for ((gv, pv), y) in gp.iter_mut().zip(p.iter()).zip(labels.iter()) {
                        if *pv >= *eps && *pv <= hi {
                            *gv = upstream * (*pv - *y) / (*pv * (S::one() - *pv)) / n;
                        }
                    }
                    acc(&mut grads, *pred, gp);
                }
            }
        }
        out
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Array2<S>>], v: Var, g: Array2<S>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
