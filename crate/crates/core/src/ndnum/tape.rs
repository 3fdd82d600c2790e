use std::sync::atomic::{AtomicU32, Ordering};

use super::gru::{gru_scan_backward, gru_scan_forward, GruScanSaved};
use super::{gemm_acc, gemm_nt_acc, gemm_tn_acc, NumError, Real, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Affine(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    Transpose(usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(usize, usize),
    ConcatRows(Vec<usize>),
    SelectRows { src: usize, rows: Vec<usize> },
    MaxPoolRows { src: usize, argmax: Vec<usize> },
    SumAll(usize),
    Pick { src: usize, index: usize },
    Softmax(usize),
    SoftmaxXent { logits: usize, labels: Vec<usize>, probs: Tensor<T> },
    GruScan { x: usize, w: usize, u: usize, b: usize, reverse: bool, saved: Box<GruScanSaved<T>> },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Tensor<T>, inv_std: Vec<T>, batch_stats: bool },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Define-by-run recording of primitive operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward replays it in reverse.
pub struct Tape<T: Real = f64> {
    id: u32,
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass: `∂seed/∂v` for every recorded value.
pub struct Gradients<T: Real> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`; exact zeros when `v` is not on any path to the seed.
    pub fn get(&self, v: Var) -> Tensor<T> {
        assert_eq!(v.tape, self.tape, "gradient lookup with a foreign variable");
        match &self.grads[v.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.idx]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        assert_eq!(v.tape, self.tape, "gradient lookup with a foreign variable");
        match self.grads[v.idx].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.idx]),
        }
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize, NumError> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(NumError::ForeignVar);
        }
        Ok(v.idx)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn ng(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Differentiable input (parameter or input features).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "value lookup with a foreign variable");
        &self.nodes[v.idx].value
    }

    fn mismatch(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> NumError {
        NumError::Dimension {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows() {
            return Err(Self::mismatch("matmul", av, bv));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_vec(&[m, n], out)?, Op::MatMul(ia, ib), ng))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.shape() != bv.shape() {
            return Err(Self::mismatch(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, op(ia, ib), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds a length-N bias to every row of an M×N matrix; the only broadcast
    /// the tape supports.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if bv.ndim() != 1 || av.cols() != bv.len() {
            return Err(Self::mismatch("add_bias", av, bv));
        }
        let n = bv.len();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let out = Tensor::from_vec(av.shape(), data)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::AddBias(ia, ib), ng))
    }

    /// `scale·x + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| scale * x + shift);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Affine(ia, scale), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| T::one() / (T::one() + (-x).exp()));
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Sigmoid(ia), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x.tanh());
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Tanh(ia), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let out = self.val(ia).transpose();
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Transpose(ia), ng))
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let (r, c) = av.dims2();
        if len == 0 || start + len > c {
            return Err(NumError::Index(format!(
                "columns {start}..{} of a {r}×{c} matrix",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&av.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(&[r, len], data)?;
        let ng = self.ng(ia);
        Ok(self.push(out, Op::SliceCols { src: ia, start }, ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ia), self.val(ib));
        if av.rows() != bv.rows() {
            return Err(Self::mismatch("concat_cols", av, bv));
        }
        let (r, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let out = Tensor::from_vec(&[r, ca + cb], data)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(out, Op::ConcatCols(ia, ib), ng))
    }

    /// Stacks matrices (or row vectors) with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::Empty("concat_rows"));
        }
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_, _>>()?;
        let cols = self.val(idx[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let v = self.val(i);
            if v.cols() != cols {
                return Err(Self::mismatch("concat_rows", self.val(idx[0]), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(&[rows, cols], data)?;
        let ng = idx.iter().any(|&i| self.ng(i));
        Ok(self.push(out, Op::ConcatRows(idx), ng))
    }

    /// Gathers rows by index; repeated indices accumulate gradient.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        if rows.is_empty() {
            return Err(NumError::Empty("select_rows"));
        }
        let av = self.val(ia);
        let (r, c) = av.dims2();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(NumError::Index(format!("row {row} of a {r}×{c} matrix")));
            }
            data.extend_from_slice(av.row(row));
        }
        let out = Tensor::from_vec(&[rows.len(), c], data)?;
        let ng = self.ng(ia);
        Ok(self.push(
            out,
            Op::SelectRows {
                src: ia,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    /// Column-wise maximum over rows, giving a 1×D row.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        let (r, c) = av.dims2();
        let mut argmax = vec![0usize; c];
        let mut best = av.row(0).to_vec();
        for t in 1..r {
            for (d, &v) in av.row(t).iter().enumerate() {
                // strict comparison keeps the first maximal frame
                if v > best[d] {
                    best[d] = v;
                    argmax[d] = t;
                }
            }
        }
        let out = Tensor::from_vec(&[1, c], best)?;
        let ng = self.ng(ia);
        Ok(self.push(out, Op::MaxPoolRows { src: ia, argmax }, ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let s = self.val(ia).data().iter().copied().sum();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(ia), ng))
    }

    /// Scalar at flat position `index`.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        if index >= av.len() {
            return Err(NumError::Index(format!(
                "flat index {index} in tensor of {} values",
                av.len()
            )));
        }
        let v = av.data()[index];
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(v), Op::Pick { src: ia, index }, ng))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.idx(a)?;
        let av = self.val(ia);
        if av.cols() < 2 {
            return Err(NumError::TooFewClasses(av.cols()));
        }
        let out = softmax_rows(av);
        let ng = self.ng(ia);
        Ok(self.push(out, Op::Softmax(ia), ng))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    /// Returns the scalar loss; probabilities are available via
    /// [`Tape::xent_probs`].
    pub fn softmax_xent(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumError> {
        let il = self.idx(logits)?;
        let lv = self.val(il);
        let (b, k) = lv.dims2();
        if k < 2 {
            return Err(NumError::TooFewClasses(k));
        }
        if labels.len() != b {
            return Err(NumError::InvalidShape(format!(
                "{} labels for {b} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(NumError::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let probs = softmax_rows(lv);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            // log-sum-exp form avoids log(0) for saturated rows
            let row = lv.row(i);
            let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += lse - row[l];
        }
        loss /= T::of(b as f64);
        let ng = self.ng(il);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits: il,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Softmax probabilities saved by a [`Tape::softmax_xent`] node.
    pub fn xent_probs(&self, loss: Var) -> Option<&Tensor<T>> {
        match &self.nodes.get(loss.idx)?.op {
            Op::SoftmaxXent { probs, .. } if loss.tape == self.id => Some(probs),
            _ => None,
        }
    }

    /// GRU recurrence over every row of `x`; see [`gru_scan_forward`].
    pub fn gru_scan(&mut self, x: Var, w: Var, u: Var, b: Var, reverse: bool) -> Result<Var, NumError> {
        let (ix, iw, iu, ib) = (self.idx(x)?, self.idx(w)?, self.idx(u)?, self.idx(b)?);
        let saved = gru_scan_forward(self.val(ix), self.val(iw), self.val(iu), self.val(ib), reverse)?;
        let out = saved.hs.clone();
        let ng = [ix, iw, iu, ib].iter().any(|&i| self.ng(i));
        Ok(self.push(
            out,
            Op::GruScan {
                x: ix,
                w: iw,
                u: iu,
                b: ib,
                reverse,
                saved: Box::new(saved),
            },
            ng,
        ))
    }

    /// Batch normalization of a B×D matrix using the batch's own mean and
    /// biased variance. Returns the output and the batch statistics.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>), NumError> {
        let ix = self.idx(x)?;
        let xv = self.val(ix);
        let (b, d) = xv.dims2();
        if b < 2 {
            return Err(NumError::InvalidShape(format!(
                "batch norm in train mode needs at least 2 rows, got {b}"
            )));
        }
        let bf = T::of(b as f64);
        let mut mean = vec![T::zero(); d];
        for i in 0..b {
            for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= bf);
        let mut var = vec![T::zero(); d];
        for i in 0..b {
            for ((s, &v), &m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= bf);
        let out = self.bn_apply(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var, NumError> {
        self.bn_apply(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
        batch_stats: bool,
    ) -> Result<Var, NumError> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (xv, gv, bv) = (self.val(ix), self.val(ig), self.val(ib));
        let (b, d) = xv.dims2();
        if gv.len() != d || bv.len() != d || mean.len() != d || var.len() != d {
            return Err(Self::mismatch("batch_norm", xv, gv));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); b * d];
        let mut out = vec![T::zero(); b * d];
        for i in 0..b {
            for j in 0..d {
                let h = (xv.data()[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let ng = self.ng(ix) || self.ng(ig) || self.ng(ib);
        let shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::from_vec(&shape, out)?,
            Op::BatchNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat: Tensor::from_vec(&shape, xhat)?,
                inv_std,
                batch_stats,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar seed with unit upstream gradient.
    pub fn backward(&self, seed: Var) -> Result<Gradients<T>, NumError> {
        let i = self.idx(seed)?;
        let v = self.val(i);
        if v.len() != 1 {
            return Err(NumError::NotScalar(v.shape().to_vec()));
        }
        self.backward_with(seed, Tensor::full(v.shape(), T::one()))
    }

    /// Vector-Jacobian product: reverse pass with an explicit upstream
    /// gradient for `seed`.
    pub fn backward_with(&self, seed: Var, upstream: Tensor<T>) -> Result<Gradients<T>, NumError> {
        let s = self.idx(seed)?;
        if upstream.shape() != self.val(s).shape() {
            return Err(Self::mismatch("backward", self.val(s), &upstream));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[s] = Some(upstream);
        for i in (0..=s).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let mut acc = |j: usize, t: Tensor<T>| {
            if !self.nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt_acc(gd, bv.data(), &mut da, m, n, k);
                    acc(*a, Tensor::from_vec(av.shape(), da).unwrap());
                }
                if self.ng(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn_acc(av.data(), gd, &mut db, k, m, n);
                    acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.ng(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    acc(*a, Tensor::from_vec(av.shape(), d).unwrap());
                }
                if self.ng(*b) {
                    let d = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    acc(*b, Tensor::from_vec(bv.shape(), d).unwrap());
                }
            }
            Op::AddBias(a, b) => {
                acc(*a, g.clone());
                let bv = self.val(*b);
                let n = bv.len();
                let mut db = vec![T::zero(); n];
                for row in gd.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
            }
            Op::Affine(a, scale) => {
                let s = *scale;
                acc(*a, g.map(|v| v * s));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect();
                acc(*a, Tensor::from_vec(g.shape(), d).unwrap());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                acc(*a, Tensor::from_vec(g.shape(), d).unwrap());
            }
            Op::Transpose(a) => {
                let av = self.val(*a);
                acc(*a, g.transpose().reshape(av.shape()).unwrap());
            }
            Op::SliceCols { src, start } => {
                let sv = self.val(*src);
                let (r, c) = sv.dims2();
                let len = g.cols();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                acc(*src, Tensor::from_vec(sv.shape(), d).unwrap());
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (r, ca) = av.dims2();
                let cb = bv.cols();
                let mut da = Vec::with_capacity(r * ca);
                let mut db = Vec::with_capacity(r * cb);
                for i in 0..r {
                    let row = g.row(i);
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                acc(*a, Tensor::from_vec(av.shape(), da).unwrap());
                acc(*b, Tensor::from_vec(bv.shape(), db).unwrap());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.val(p);
                    let n = pv.len();
                    acc(p, Tensor::from_vec(pv.shape(), gd[off..off + n].to_vec()).unwrap());
                    off += n;
                }
            }
            Op::SelectRows { src, rows } => {
                let sv = self.val(*src);
                let c = sv.cols();
                let mut d = Tensor::zeros(sv.shape());
                for (k, &r) in rows.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * c..(r + 1) * c];
                    for (x, &v) in dst.iter_mut().zip(g.row(k)) {
                        *x += v;
                    }
                }
                acc(*src, d);
            }
            Op::MaxPoolRows { src, argmax } => {
                let sv = self.val(*src);
                let c = sv.cols();
                let mut d = Tensor::zeros(sv.shape());
                for (col, &t) in argmax.iter().enumerate() {
                    d.data_mut()[t * c + col] += gd[col];
                }
                acc(*src, d);
            }
            Op::SumAll(a) => {
                let av = self.val(*a);
                acc(*a, Tensor::full(av.shape(), gd[0]));
            }
            Op::Pick { src, index } => {
                let sv = self.val(*src);
                let mut d = Tensor::zeros(sv.shape());
                d.data_mut()[*index] = gd[0];
                acc(*src, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let s: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        d[i * c + j] = yr[j] * (gr[j] - s);
                    }
                }
                acc(*a, Tensor::from_vec(y.shape(), d).unwrap());
            }
            Op::SoftmaxXent {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let scale = gd[0] / T::of(b as f64);
                let mut d = probs.clone();
                let k = d.cols();
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * k + l] -= T::one();
                }
                d.data_mut().iter_mut().for_each(|v| *v *= scale);
                acc(*logits, d.reshape(self.val(*logits).shape()).unwrap());
            }
            Op::GruScan {
                x,
                w,
                u,
                b,
                reverse,
                saved,
            } => {
                let (xv, wv, uv, bv) = (self.val(*x), self.val(*w), self.val(*u), self.val(*b));
                let gr = gru_scan_backward(xv, wv, uv, saved, gd, *reverse, self.ng(*x));
                if let Some(dx) = gr.dx {
                    acc(*x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                acc(*w, Tensor::from_vec(wv.shape(), gr.dw).unwrap());
                acc(*u, Tensor::from_vec(uv.shape(), gr.du).unwrap());
                acc(*b, Tensor::from_vec(bv.shape(), gr.db).unwrap());
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, d) = xhat.dims2();
                let gam = self.val(*gamma).data();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for i in 0..b {
                    for j in 0..d {
                        dgamma[j] += gd[i * d + j] * xhat.data()[i * d + j];
                        dbeta[j] += gd[i * d + j];
                    }
                }
                if self.ng(*x) {
                    let mut dx = vec![T::zero(); b * d];
                    if *batch_stats {
                        let bf = T::of(b as f64);
                        for j in 0..d {
                            // dx = inv/B · (B·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for i in 0..b {
                                let dxh = gd[i * d + j] * gam[j];
                                s1 += dxh;
                                s2 += dxh * xhat.data()[i * d + j];
                            }
                            for i in 0..b {
                                let dxh = gd[i * d + j] * gam[j];
                                dx[i * d + j] = inv_std[j] / bf
                                    * (bf * dxh - s1 - xhat.data()[i * d + j] * s2);
                            }
                        }
                    } else {
                        for i in 0..b {
                            for j in 0..d {
                                dx[i * d + j] = gd[i * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    acc(*x, Tensor::from_vec(xhat.shape(), dx).unwrap());
                }
                acc(*gamma, Tensor::from_vec(self.val(*gamma).shape(), dgamma).unwrap());
                acc(*beta, Tensor::from_vec(self.val(*beta).shape(), dbeta).unwrap());
            }
        }
    }
}

pub(crate) fn softmax_rows<T: Real>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = a.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = a.row(i);
        let m = row.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
        let start = out.len();
        let mut s = T::zero();
        for &v in row {
            let e = (v - m).exp();
            s += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= s;
        }
    }
    Tensor::from_vec(a.shape(), out).unwrap()
}
