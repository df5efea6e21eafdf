//! Recorded reverse-mode differentiation over dense matrices.
//!
//! A `Tape` owns every intermediate value of one forward computation in
//! topological order. `backward` replays the tape once in reverse and
//! accumulates dLoss/dLeaf into per-node gradient slots. Shapes are checked
//! on every op and every produced value must be finite.

use crate::tensor::{NumError, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// a: n x d, b: 1 x d, broadcast b over rows.
    AddRow(Var, Var),
    /// a: n x d, b: n x 1, broadcast b over columns.
    AddCol(Var, Var),
    AddScalar(Var),
    Hadamard(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    PowConst(Var, f64),
    SumAxis0(Var),
    SumAxis1(Var),
    MeanAxis0(Var),
    MeanAxis1(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMean {
        input: Var,
        seg: Vec<usize>,
        counts: Vec<f64>,
    },
    RowNormalize {
        input: Var,
        inv_norm: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward computation: values plus enough saved state to replay backward.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

const NORM_EPS: f64 = 1e-12;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
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

    /// Gradient accumulated by the last `backward`, if the node needed one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_done = false;
    }

    /// Records an input value. Gradients flow into it only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, _op_name: &'static str) -> Result<Var, NumError> {
        let needs = op_inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_unchecked(value, op, needs))
    }

    /// Like `push`, but verifies the value is finite. Used by ops with
    /// restricted domains (log, pow, division-like ops); elementwise-total
    /// ops skip the scan and rely on the per-step loss check upstream.
    fn push_checked(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: op_name });
        }
        self.push(value, op, op_name)
    }

    fn shape_err(op: &'static str, detail: String) -> NumError {
        NumError::ShapeMismatch { op, detail }
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(Self::shape_err(
                "matmul",
                format!("{ar}x{ac} * {br}x{bc}"),
            ));
        }
        let out = matmul_values(self.value(a), self.value(b), false, false);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let out = transpose_value(self.value(a));
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Self::shape_err("add", format!("{sa:?} vs {sb:?}")));
        }
        let out = zip_values(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    /// `a + b` where `b` is a 1 x d row vector broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (_, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if br != 1 || bc != ac {
            return Err(Self::shape_err(
                "add_row",
                format!("{:?} + {br}x{bc}", self.value(a).shape()),
            ));
        }
        let out = row_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::AddRow(a, b), "add_row")
    }

    /// `a + b` where `b` is an n x 1 column vector broadcast over the columns of `a`.
    pub fn add_col(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ar, _) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if bc != 1 || br != ar {
            return Err(Self::shape_err(
                "add_col",
                format!("{:?} + {br}x{bc}", self.value(a).shape()),
            ));
        }
        let out = col_broadcast(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::AddCol(a, b), "add_col")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let out = map_value(self.value(a), |x| x + c);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Self::shape_err("hadamard", format!("{sa:?} vs {sb:?}")));
        }
        let out = zip_values(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Hadamard(a, b), "hadamard")
    }

    /// `a * b` element-wise where `b` is 1 x d, broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (_, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if br != 1 || bc != ac {
            return Err(Self::shape_err(
                "mul_row",
                format!("{:?} * {br}x{bc}", self.value(a).shape()),
            ));
        }
        let out = row_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::MulRow(a, b), "mul_row")
    }

    /// `a * b` element-wise where `b` is n x 1, broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ar, _) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if bc != 1 || br != ar {
            return Err(Self::shape_err(
                "mul_col",
                format!("{:?} * {br}x{bc}", self.value(a).shape()),
            ));
        }
        let out = col_broadcast(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::MulCol(a, b), "mul_col")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let out = map_value(self.value(a), |x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        let out = map_value(self.value(a), f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NumError> {
        let out = map_value(self.value(a), |x| if x >= 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumError> {
        let out = map_value(self.value(a), f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let out = map_value(self.value(a), f64::ln);
        self.push_checked(out, Op::Log(a), "log")
    }

    pub fn pow_const(&mut self, a: Var, p: f64) -> Result<Var, NumError> {
        let out = map_value(self.value(a), |x| x.powf(p));
        self.push_checked(out, Op::PowConst(a, p), "pow_const")
    }

    /// Column sums: n x d -> 1 x d.
    pub fn sum_axis0(&mut self, a: Var) -> Result<Var, NumError> {
        let out = reduce_axis0(self.value(a), false);
        self.push(out, Op::SumAxis0(a), "sum_axis0")
    }

    /// Row sums: n x d -> n x 1.
    pub fn sum_axis1(&mut self, a: Var) -> Result<Var, NumError> {
        let out = reduce_axis1(self.value(a), false);
        self.push(out, Op::SumAxis1(a), "sum_axis1")
    }

    pub fn mean_axis0(&mut self, a: Var) -> Result<Var, NumError> {
        let out = reduce_axis0(self.value(a), true);
        self.push(out, Op::MeanAxis0(a), "mean_axis0")
    }

    pub fn mean_axis1(&mut self, a: Var) -> Result<Var, NumError> {
        let out = reduce_axis1(self.value(a), true);
        self.push(out, Op::MeanAxis1(a), "mean_axis1")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NumError> {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Concatenates along the last axis; all inputs must share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", rows, self.value(p).rows()),
                ));
            }
            cols += self.value(p).cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let c = v.cols();
            for r in 0..rows {
                out.data_mut()[r * cols + off..r * cols + off + c].copy_from_slice(v.row(r));
            }
            off += c;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Selects rows by index; duplicate indices are allowed and their
    /// gradients accumulate additively.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NumError> {
        let v = self.value(a);
        let (n, d) = v.shape();
        for &i in index {
            if i >= n {
                return Err(NumError::RowOutOfRange { index: i, len: n });
            }
        }
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::new(index.len(), d, data);
        self.push(out, Op::GatherRows(a, index.to_vec()), "gather_rows")
    }

    /// Mean of input rows grouped by `seg` into `n_out` output rows.
    /// An output row with no members is zero.
    pub fn segment_mean(&mut self, a: Var, seg: &[usize], n_out: usize) -> Result<Var, NumError> {
        let v = self.value(a);
        let (n, d) = v.shape();
        if seg.len() != n {
            return Err(Self::shape_err(
                "segment_mean",
                format!("{} segment ids for {n} rows", seg.len()),
            ));
        }
        for &s in seg {
            if s >= n_out {
                return Err(NumError::SegmentOutOfRange { id: s, len: n_out });
            }
        }
        let mut out = Tensor::zeros(n_out, d);
        let mut counts = vec![0.0f64; n_out];
        for (r, &s) in seg.iter().enumerate() {
            counts[s] += 1.0;
            let row = v.row(r);
            let dst = &mut out.data_mut()[s * d..(s + 1) * d];
            for (o, x) in dst.iter_mut().zip(row) {
                *o += x;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 0.0 {
                for x in &mut out.data_mut()[s * d..(s + 1) * d] {
                    *x /= c;
                }
            }
        }
        self.push(
            out,
            Op::SegmentMean {
                input: a,
                seg: seg.to_vec(),
                counts,
            },
            "segment_mean",
        )
    }

    /// Row-wise L2 normalization with a smoothed norm sqrt(|x|^2 + eps).
    pub fn row_normalize(&mut self, a: Var) -> Result<Var, NumError> {
        let v = self.value(a);
        let (n, d) = v.shape();
        let mut out = Tensor::zeros(n, d);
        let mut inv_norm = vec![0.0f64; n];
        for r in 0..n {
            let row = v.row(r);
            let sq: f64 = row.iter().map(|x| x * x).sum();
            let inv = 1.0 / (sq + NORM_EPS).sqrt();
            inv_norm[r] = inv;
            for (o, x) in out.data_mut()[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = x * inv;
            }
        }
        self.push(
            out,
            Op::RowNormalize { input: a, inv_norm },
            "row_normalize",
        )
    }

    /// Cosine-similarity matrix between the rows of `a` (n x d) and `b` (m x d).
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        if self.value(a).cols() != self.value(b).cols() {
            return Err(Self::shape_err(
                "cosine_sim",
                format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let na = self.row_normalize(a)?;
        let nb = self.row_normalize(b)?;
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// Inverted dropout: multiplies by an externally sampled 0/1 mask scaled
    /// by 1/(1-p). Deterministic given the mask.
    pub fn dropout(&mut self, a: Var, mask: &Tensor, p: f64) -> Result<Var, NumError> {
        if mask.shape() != self.value(a).shape() {
            return Err(Self::shape_err(
                "dropout",
                format!("mask {:?} vs input {:?}", mask.shape(), self.value(a).shape()),
            ));
        }
        let keep = 1.0 - p;
        let scaled = Tensor::new(
            mask.rows(),
            mask.cols(),
            mask.data().iter().map(|&m| m / keep).collect(),
        );
        let m = self.constant(scaled);
        self.hadamard(a, m)
    }

    // ---- backward ----

    /// Propagates dLoss/d(node) from a scalar loss to every grad-requiring node.
    /// Gradients accumulate additively across uses of a value.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumError> {
        if self.nodes.is_empty() {
            return Err(NumError::EmptyTape);
        }
        if self.backward_done {
            return Err(NumError::BackwardTwice);
        }
        let (lr, lc) = self.value(loss).shape();
        if lr != 1 || lc != 1 {
            return Err(NumError::NonScalarLoss { rows: lr, cols: lc });
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        // Ops are matched by value shape; every rule mirrors its forward.
        enum Pend {
            One(Var, Tensor),
            Two(Var, Tensor, Var, Tensor),
            Many(Vec<(Var, Tensor)>),
            None,
        }
        let pend = match &self.nodes[i].op {
            Op::Leaf => Pend::None,
            Op::MatMul(a, b) => {
                let da = matmul_values(g, &self.nodes[b.0].value, false, true);
                let db = matmul_values(&self.nodes[a.0].value, g, true, false);
                Pend::Two(*a, da, *b, db)
            }
            Op::Transpose(a) => Pend::One(*a, transpose_value(g)),
            Op::Add(a, b) => Pend::Two(*a, g.clone(), *b, g.clone()),
            Op::AddRow(a, b) => Pend::Two(*a, g.clone(), *b, reduce_axis0(g, false)),
            Op::AddCol(a, b) => Pend::Two(*a, g.clone(), *b, reduce_axis1(g, false)),
            Op::AddScalar(a) => Pend::One(*a, g.clone()),
            Op::Hadamard(a, b) => {
                let da = zip_values(g, &self.nodes[b.0].value, |x, y| x * y);
                let db = zip_values(g, &self.nodes[a.0].value, |x, y| x * y);
                Pend::Two(*a, da, *b, db)
            }
            Op::MulRow(a, b) => {
                let da = row_broadcast(g, &self.nodes[b.0].value, |x, y| x * y);
                let gb = zip_values(g, &self.nodes[a.0].value, |x, y| x * y);
                Pend::Two(*a, da, *b, reduce_axis0(&gb, false))
            }
            Op::MulCol(a, b) => {
                let da = col_broadcast(g, &self.nodes[b.0].value, |x, y| x * y);
                let gb = zip_values(g, &self.nodes[a.0].value, |x, y| x * y);
                Pend::Two(*a, da, *b, reduce_axis1(&gb, false))
            }
            Op::Scale(a, c) => Pend::One(*a, map_value(g, |x| x * c)),
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                Pend::One(*a, zip_values(g, y, |gx, yx| gx * (1.0 - yx * yx)))
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[a.0].value;
                let slope = *slope;
                Pend::One(
                    *a,
                    zip_values(g, x, |gx, xv| if xv >= 0.0 { gx } else { gx * slope }),
                )
            }
            Op::Exp(a) => {
                let y = &self.nodes[i].value;
                Pend::One(*a, zip_values(g, y, |gx, yx| gx * yx))
            }
            Op::Log(a) => {
                let x = &self.nodes[a.0].value;
                Pend::One(*a, zip_values(g, x, |gx, xv| gx / xv))
            }
            Op::PowConst(a, p) => {
                let x = &self.nodes[a.0].value;
                let p = *p;
                Pend::One(*a, zip_values(g, x, |gx, xv| gx * p * xv.powf(p - 1.0)))
            }
            Op::SumAxis0(a) => {
                let (n, d) = self.nodes[a.0].value.shape();
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend_from_slice(g.data());
                }
                Pend::One(*a, Tensor::new(n, d, data))
            }
            Op::SumAxis1(a) => {
                let (n, d) = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(n, d);
                for r in 0..n {
                    let gv = g.data()[r];
                    for x in &mut da.data_mut()[r * d..(r + 1) * d] {
                        *x = gv;
                    }
                }
                Pend::One(*a, da)
            }
            Op::MeanAxis0(a) => {
                let (n, d) = self.nodes[a.0].value.shape();
                let inv = 1.0 / n as f64;
                let mut da = Tensor::zeros(n, d);
                for r in 0..n {
                    for (x, gv) in da.data_mut()[r * d..(r + 1) * d].iter_mut().zip(g.data()) {
                        *x = gv * inv;
                    }
                }
                Pend::One(*a, da)
            }
            Op::MeanAxis1(a) => {
                let (n, d) = self.nodes[a.0].value.shape();
                let inv = 1.0 / d as f64;
                let mut da = Tensor::zeros(n, d);
                for r in 0..n {
                    let gv = g.data()[r] * inv;
                    for x in &mut da.data_mut()[r * d..(r + 1) * d] {
                        *x = gv;
                    }
                }
                Pend::One(*a, da)
            }
            Op::SumAll(a) => {
                let (n, d) = self.nodes[a.0].value.shape();
                Pend::One(*a, Tensor::filled(n, d, g.item()))
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = g.rows();
                let total = g.cols();
                let mut out = Vec::with_capacity(parts.len());
                let mut off = 0;
                for p in parts {
                    let c = self.nodes[p.0].value.cols();
                    let mut dp = Tensor::zeros(rows, c);
                    for r in 0..rows {
                        dp.data_mut()[r * c..(r + 1) * c]
                            .copy_from_slice(&g.data()[r * total + off..r * total + off + c]);
                    }
                    out.push((p, dp));
                    off += c;
                }
                Pend::Many(out)
            }
            Op::GatherRows(a, index) => {
                let (n, d) = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(n, d);
                for (r, &src) in index.iter().enumerate() {
                    let grow = &g.data()[r * d..(r + 1) * d];
                    for (x, gv) in da.data_mut()[src * d..(src + 1) * d].iter_mut().zip(grow) {
                        *x += gv;
                    }
                }
                Pend::One(*a, da)
            }
            Op::SegmentMean { input, seg, counts } => {
                let (n, d) = self.nodes[input.0].value.shape();
                let mut data = Vec::with_capacity(n * d);
                for &s in seg.iter() {
                    let inv = 1.0 / counts[s];
                    let grow = &g.data()[s * d..(s + 1) * d];
                    data.extend(grow.iter().map(|gv| gv * inv));
                }
                Pend::One(*input, Tensor::new(n, d, data))
            }
            Op::RowNormalize { input, inv_norm } => {
                // y = x * inv; dx = inv * (g - y * (y . g))
                let y = &self.nodes[i].value;
                let (n, d) = y.shape();
                let mut da = Tensor::zeros(n, d);
                for r in 0..n {
                    let yr = y.row(r);
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let inv = inv_norm[r];
                    for c in 0..d {
                        da.data_mut()[r * d + c] = inv * (gr[c] - yr[c] * dot);
                    }
                }
                Pend::One(*input, da)
            }
        };
        match pend {
            Pend::None => {}
            Pend::One(a, da) => self.accumulate(a, da),
            Pend::Two(a, da, b, db) => {
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Pend::Many(list) => {
                for (v, d) in list {
                    self.accumulate(v, d);
                }
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::AddRow(a, b)
        | Op::AddCol(a, b)
        | Op::Hadamard(a, b)
        | Op::MulRow(a, b)
        | Op::MulCol(a, b) => vec![*a, *b],
        Op::Transpose(a)
        | Op::AddScalar(a)
        | Op::Scale(a, _)
        | Op::Tanh(a)
        | Op::LeakyRelu(a, _)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::PowConst(a, _)
        | Op::SumAxis0(a)
        | Op::SumAxis1(a)
        | Op::MeanAxis0(a)
        | Op::MeanAxis1(a)
        | Op::SumAll(a)
        | Op::GatherRows(a, _) => vec![*a],
        Op::ConcatCols(parts) => parts.clone(),
        Op::SegmentMean { input, .. } => vec![*input],
        Op::RowNormalize { input, .. } => vec![*input],
    }
}

fn map_value(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.rows(), a.cols(), a.data().iter().map(|&x| f(x)).collect())
}

fn zip_values(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.rows(),
        a.cols(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn row_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (n, d) = a.shape();
    let mut out = Tensor::zeros(n, d);
    for r in 0..n {
        for c in 0..d {
            out.data_mut()[r * d + c] = f(a.data()[r * d + c], b.data()[c]);
        }
    }
    out
}

fn col_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (n, d) = a.shape();
    let mut out = Tensor::zeros(n, d);
    for r in 0..n {
        let bv = b.data()[r];
        for c in 0..d {
            out.data_mut()[r * d + c] = f(a.data()[r * d + c], bv);
        }
    }
    out
}

fn reduce_axis0(a: &Tensor, mean: bool) -> Tensor {
    let (n, d) = a.shape();
    let mut out = Tensor::zeros(1, d);
    for r in 0..n {
        for c in 0..d {
            out.data_mut()[c] += a.data()[r * d + c];
        }
    }
    if mean && n > 0 {
        for x in out.data_mut() {
            *x /= n as f64;
        }
    }
    out
}

fn reduce_axis1(a: &Tensor, mean: bool) -> Tensor {
    let (n, d) = a.shape();
    let mut out = Tensor::zeros(n, 1);
    for r in 0..n {
        out.data_mut()[r] = a.row(r).iter().sum();
        if mean && d > 0 {
            out.data_mut()[r] /= d as f64;
        }
    }
    out
}

/// C = op(A) * op(B) with optional transposes, ikj loop order.
fn matmul_values(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    // materialize transposed operands so the inner kernel always walks
    // contiguous rows; the O(nk) copy is cheap next to the O(mnk) product
    let at;
    let a = if ta {
        at = transpose_value(a);
        &at
    } else {
        a
    };
    let bt;
    let b = if tb {
        bt = transpose_value(b);
        &bt
    } else {
        b
    };
    let (m, k) = a.shape();
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    let mut out = Tensor::zeros(m, n);
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out.data_mut()[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..p * n + n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_value(a: &Tensor) -> Tensor {
    let (n, d) = a.shape();
    let ad = a.data();
    let data = (0..d * n)
        .map(|idx| ad[(idx % n) * d + idx / n])
        .collect();
    Tensor::new(d, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::Rng;

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0), true);
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y).item(), 0.0);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 1.0); // 1 - tanh^2(0)
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let p = t.matmul(a, i).unwrap();
        assert_eq!(t.value(p), t.value(a));
    }

    #[test]
    fn cosine_similarity_hand_value() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![3.0, 4.0]]));
        let b = t.constant(Tensor::from_rows(&[vec![4.0, 3.0]]));
        let c = t.cosine_sim(a, b).unwrap();
        assert!((t.value(c).item() - 0.96).abs() < 1e-9);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let y = t.leaf(Tensor::scalar(3.0), true);
        let p = t.hadamard(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 3.0);
        assert_eq!(t.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]), true);
        let m = t.mean_axis1(x).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        assert!(matches!(t.backward(Var(0)), Err(NumError::EmptyTape)));

        let x = t.leaf(Tensor::new(1, 2, vec![1.0, 2.0]), true);
        assert!(matches!(
            t.backward(x),
            Err(NumError::NonScalarLoss { .. })
        ));
        let s = t.sum_all(x).unwrap();
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(NumError::BackwardTwice)));
        t.reset_grads();
        t.backward(s).unwrap();
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(-1.0), true);
        assert!(matches!(t.log(x), Err(NumError::NonFinite { op: "log" })));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            t.matmul(a, b),
            Err(NumError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn grads_accumulate_across_uses() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.5), true);
        let y = t.add(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn segment_mean_backward_distributes_inverse_count() {
        let mut t = Tape::new();
        let x = t.leaf(rand_tensor(&mut crate::rng::stream(1, "seg"), 5, 3), true);
        let seg = [0usize, 0, 0, 2, 2];
        let m = t.segment_mean(x, &seg, 3).unwrap();
        // empty segment 1 -> zero row
        assert_eq!(t.value(m).row(1), &[0.0, 0.0, 0.0]);
        let s = t.sum_all(m).unwrap();
        t.backward(s).unwrap();
        let g = t.grad(x).unwrap();
        for r in 0..3 {
            assert!(g.row(r).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        for r in 3..5 {
            assert!(g.row(r).iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn concat_then_split_round_trips_bit_exactly() {
        let mut rng = crate::rng::stream(3, "concat");
        let a = rand_tensor(&mut rng, 4, 2);
        let b = rand_tensor(&mut rng, 4, 5);
        let mut t = Tape::new();
        let va = t.constant(a.clone());
        let vb = t.constant(b.clone());
        let cat = t.concat_cols(&[va, vb]).unwrap();
        let v = t.value(cat).clone();
        for r in 0..4 {
            assert_eq!(&v.row(r)[..2], a.row(r));
            assert_eq!(&v.row(r)[2..], b.row(r));
        }
    }

    #[test]
    fn grad_check_named_examples() {
        // sum(tanh(x)) on random x in [-1,1]^8
        let mut rng = crate::rng::stream(5, "gc");
        let x = rand_tensor(&mut rng, 1, 8);
        let err = grad_check(
            |t, vars| {
                let h = t.tanh(vars[0])?;
                t.sum_all(h)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "tanh err {err}");

        // cosine-similarity loss on random 2x8 rows
        let a = rand_tensor(&mut rng, 2, 8);
        let b = rand_tensor(&mut rng, 2, 8);
        let err = grad_check(
            |t, vars| {
                let c = t.cosine_sim(vars[0], vars[1])?;
                t.sum_all(c)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "cosine err {err}");

        // constant function -> both gradients zero, error 0
        let x = rand_tensor(&mut rng, 2, 2);
        let err = grad_check(
            |t, vars| {
                let z = t.scale(vars[0], 0.0)?;
                t.sum_all(z)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn dropout_scales_by_inverse_keep() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]), true);
        let mask = Tensor::new(1, 4, vec![1.0, 0.0, 1.0, 0.0]);
        let d = t.dropout(x, &mask, 0.5).unwrap();
        assert_eq!(t.value(d).data(), &[2.0, 0.0, 6.0, 0.0]);
    }
}
