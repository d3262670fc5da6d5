//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! walks the recording in reverse and accumulates gradients into every node
//! that requires them. Tapes are cheap to build and are recreated for each
//! training batch, so node storage is a flat `Vec` indexed by [`TensorId`].

use rand::Rng;

use super::math::{normal_cdf, normal_pdf};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRow { a: TensorId, bias: TensorId },
    AddCol { a: TensorId, bias: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f64 },
    Transpose { a: TensorId },
    Reshape { a: TensorId },
    SliceCols { a: TensorId, start: usize },
    ConcatCols { parts: Vec<TensorId> },
    ConcatRows { parts: Vec<TensorId> },
    SoftmaxRows { a: TensorId },
    LayerNorm { a: TensorId, gain: TensorId, bias: TensorId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu { a: TensorId },
    Conv1dTime { x: TensorId, kernel: TensorId, bias: TensorId },
    Dropout { a: TensorId, mask_scale: Vec<f64> },
    MeanRows { a: TensorId },
    SumAll { a: TensorId },
    CrossEntropy { probs: TensorId, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
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

    /// Insert a leaf tensor. `values` is row-major and must match `rows * cols`.
    pub fn leaf(&mut self, values: Vec<f64>, rows: usize, cols: usize, requires_grad: bool) -> TensorId {
        assert_eq!(values.len(), rows * cols, "leaf buffer does not match shape");
        self.push(values, rows, cols, requires_grad, Op::Leaf)
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    fn push(&mut self, values: Vec<f64>, rows: usize, cols: usize, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn child_of(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `a [m×k] × b [k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::shape("matmul", (m, ka), (kb, n)));
        }
        let mut out = vec![0.0; m * n];
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        for i in 0..m {
            let arow = &av[i * ka..(i + 1) * ka];
            let orow = &mut out[i * n..(i + 1) * n];
            for (k, &x) in arow.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[k * n..(k + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.child_of(&[a, b]);
        Ok(self.push(out, m, n, rg, Op::MatMul { a, b }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::shape("add", sa, sb));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.child_of(&[a, b]);
        Ok(self.push(out, sa.0, sa.1, rg, Op::Add { a, b }))
    }

    /// Add a `1×n` bias row to every row of `a [m×n]`.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let sb = self.shape(bias);
        if sb != (1, n) {
            return Err(Error::shape("add_row", (m, n), sb));
        }
        let bv = self.nodes[bias.0].values.clone();
        let mut out = self.nodes[a.0].values.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv[j];
            }
        }
        let rg = self.child_of(&[a, bias]);
        Ok(self.push(out, m, n, rg, Op::AddRow { a, bias }))
    }

    /// Add an `m×1` bias column to every column of `a [m×n]`.
    pub fn add_col(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let sb = self.shape(bias);
        if sb != (m, 1) {
            return Err(Error::shape("add_col", (m, n), sb));
        }
        let bv = self.nodes[bias.0].values.clone();
        let mut out = self.nodes[a.0].values.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv[i];
            }
        }
        let rg = self.child_of(&[a, bias]);
        Ok(self.push(out, m, n, rg, Op::AddCol { a, bias }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::shape("mul", sa, sb));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.child_of(&[a, b]);
        Ok(self.push(out, sa.0, sa.1, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        let rg = self.child_of(&[a]);
        self.push(out, m, n, rg, Op::Scale { a, c })
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.child_of(&[a]);
        self.push(out, n, m, rg, Op::Transpose { a })
    }

    /// Reinterpret the row-major buffer under a new shape.
    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(Error::shape("reshape", (m, n), (rows, cols)));
        }
        let out = self.nodes[a.0].values.clone();
        let rg = self.child_of(&[a]);
        Ok(self.push(out, rows, cols, rg, Op::Reshape { a }))
    }

    /// Columns `[start, start+width)` of `a`.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, width: usize) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        if start + width > n {
            return Err(Error::shape("slice_cols", (m, n), (start, width)));
        }
        let av = &self.nodes[a.0].values;
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&av[i * n + start..i * n + start + width]);
        }
        let rg = self.child_of(&[a]);
        Ok(self.push(out, m, width, rg, Op::SliceCols { a, start }))
    }

    /// Concatenate along columns; all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let m = self.shape(parts[0]).0;
        let mut n = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(Error::shape("concat_cols", (m, "*"), (pm, pn)));
            }
            n += pn;
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let (_, pn) = self.shape(p);
                let pv = &self.nodes[p.0].values;
                out.extend_from_slice(&pv[i * pn..(i + 1) * pn]);
            }
        }
        let rg = self.child_of(parts);
        Ok(self.push(out, m, n, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Concatenate along rows; all parts share the column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let n = self.shape(parts[0]).1;
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(Error::shape("concat_rows", ("*", n), (pm, pn)));
            }
            m += pm;
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].values);
        }
        let rg = self.child_of(parts);
        Ok(self.push(out, m, n, rg, Op::ConcatRows { parts: parts.to_vec() }))
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].values;
        if av.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax_rows: NaN input".into()));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let dst = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let rg = self.child_of(&[a]);
        Ok(self.push(out, m, n, rg, Op::SoftmaxRows { a }))
    }

    /// Per-row layer normalization followed by the affine map `gain ⊙ x̂ + bias`.
    ///
    /// `gain` and `bias` are `1×d` where `d` is the column count of `a`.
    pub fn layer_norm(&mut self, a: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> Result<TensorId> {
        let (m, d) = self.shape(a);
        if d < 2 {
            return Err(Error::Config(format!(
                "layer_norm: normalized width must be at least 2, got {d}"
            )));
        }
        if self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(Error::shape("layer_norm", (1, d), self.shape(gain)));
        }
        let av = &self.nodes[a.0].values;
        let gv = &self.nodes[gain.0].values;
        let bv = &self.nodes[bias.0].values;
        let mut out = vec![0.0; m * d];
        let mut xhat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &av[i * d..(i + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                xhat[i * d + j] = xh;
                out[i * d + j] = gv[j] * xh + bv[j];
            }
        }
        let rg = self.child_of(&[a, gain, bias]);
        Ok(self.push(out, m, d, rg, Op::LayerNorm { a, gain, bias, xhat, inv_std }))
    }

    /// Exact GeLU: `x · Φ(x)` with Φ the standard normal CDF.
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| x * normal_cdf(x))
            .collect();
        let rg = self.child_of(&[a]);
        self.push(out, m, n, rg, Op::Gelu { a })
    }

    /// Depthwise 1-D convolution along time (columns), stride 1, zero padding
    /// of `(k-1)/2` on both sides so the output length equals the input length.
    ///
    /// `x` is `C×T`, `kernel` is `C×k` (one row per channel), `bias` is `C×1`.
    pub fn conv1d_time(&mut self, x: TensorId, kernel: TensorId, bias: TensorId) -> Result<TensorId> {
        let (c, t) = self.shape(x);
        let (ck, k) = self.shape(kernel);
        if ck != c {
            return Err(Error::shape("conv1d_time", (c, t), (ck, k)));
        }
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d_time: kernel size must be odd, got {k}")));
        }
        if k > t {
            return Err(Error::Config(format!(
                "conv1d_time: kernel size {k} exceeds signal length {t}"
            )));
        }
        if self.shape(bias) != (c, 1) {
            return Err(Error::shape("conv1d_time bias", (c, 1), self.shape(bias)));
        }
        let pad = (k - 1) / 2;
        let xv = &self.nodes[x.0].values;
        let kv = &self.nodes[kernel.0].values;
        let bv = &self.nodes[bias.0].values;
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let xrow = &xv[ch * t..(ch + 1) * t];
            let krow = &kv[ch * k..(ch + 1) * k];
            let orow = &mut out[ch * t..(ch + 1) * t];
            for ti in 0..t {
                let mut acc = bv[ch];
                for (u, &w) in krow.iter().enumerate() {
                    let src = ti + u;
                    if src >= pad && src - pad < t {
                        acc += w * xrow[src - pad];
                    }
                }
                orow[ti] = acc;
            }
        }
        let rg = self.child_of(&[x, kernel, bias]);
        Ok(self.push(out, c, t, rg, Op::Conv1dTime { x, kernel, bias }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; in eval
    /// mode this is the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        a: TensorId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout: rate must be in [0,1), got {rate}")));
        }
        let (m, n) = self.shape(a);
        if !training || rate == 0.0 {
            let out = self.nodes[a.0].values.clone();
            let rg = self.child_of(&[a]);
            let mask_scale = vec![1.0; m * n];
            return Ok(self.push(out, m, n, rg, Op::Dropout { a, mask_scale }));
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask_scale: Vec<f64> = (0..m * n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&mask_scale)
            .map(|(x, s)| x * s)
            .collect();
        let rg = self.child_of(&[a]);
        Ok(self.push(out, m, n, rg, Op::Dropout { a, mask_scale }))
    }

    /// Column means: `m×n -> 1×n`.
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].values;
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += av[i * n + j];
            }
        }
        for o in out.iter_mut() {
            *o /= m as f64;
        }
        let rg = self.child_of(&[a]);
        self.push(out, 1, n, rg, Op::MeanRows { a })
    }

    /// Sum of all elements as a `1×1` tensor.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let rg = self.child_of(&[a]);
        self.push(vec![s], 1, 1, rg, Op::SumAll { a })
    }

    /// Mean negative log-likelihood of `probs [M×N]` against integer labels,
    /// with the log argument clamped below at 1e-12.
    pub fn cross_entropy(&mut self, probs: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (m, n) = self.shape(probs);
        if labels.len() != m {
            return Err(Error::shape("cross_entropy", (m, n), (labels.len(), "labels")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Data(format!(
                "cross_entropy: label {bad} out of range for {n} classes"
            )));
        }
        let pv = &self.nodes[probs.0].values;
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            loss -= pv[i * n + label].max(CE_CLAMP).ln();
        }
        loss /= m as f64;
        let rg = self.child_of(&[probs]);
        Ok(self.push(vec![loss], 1, 1, rg, Op::CrossEntropy { probs, labels: labels.to_vec() }))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse-topological gradient accumulation from a scalar loss.
    ///
    /// Every previously stored gradient is cleared first; multiple uses of a
    /// tensor sum their contributions.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            // Nothing upstream wants a gradient; still mark the loss itself.
            self.nodes[loss.0].grad = Some(vec![1.0]);
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.clone() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = self.shape(a);
                    let n = cols;
                    // dA = G · Bᵀ
                    if self.nodes[a.0].requires_grad {
                        let bv = &self.nodes[b.0].values;
                        let mut da = vec![0.0; m * k];
                        for ii in 0..m {
                            for kk in 0..k {
                                let brow = &bv[kk * n..(kk + 1) * n];
                                let grow = &g[ii * n..(ii + 1) * n];
                                let mut acc = 0.0;
                                for (gv, bvv) in grow.iter().zip(brow) {
                                    acc += gv * bvv;
                                }
                                da[ii * k + kk] = acc;
                            }
                        }
                        self.accumulate(a, &da);
                    }
                    // dB = Aᵀ · G
                    if self.nodes[b.0].requires_grad {
                        let av = &self.nodes[a.0].values;
                        let mut db = vec![0.0; k * n];
                        for ii in 0..m {
                            let arow = &av[ii * k..(ii + 1) * k];
                            let grow = &g[ii * n..(ii + 1) * n];
                            for (kk, &aval) in arow.iter().enumerate() {
                                if aval == 0.0 {
                                    continue;
                                }
                                let dst = &mut db[kk * n..(kk + 1) * n];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d += aval * gv;
                                }
                            }
                        }
                        self.accumulate(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::AddRow { a, bias } => {
                    self.accumulate(a, &g);
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![0.0; cols];
                        for i in 0..rows {
                            for j in 0..cols {
                                db[j] += g[i * cols + j];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::AddCol { a, bias } => {
                    self.accumulate(a, &g);
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![0.0; rows];
                        for i in 0..rows {
                            for j in 0..cols {
                                db[i] += g[i * cols + j];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<f64> = g
                            .iter()
                            .zip(&self.nodes[b.0].values)
                            .map(|(gv, bv)| gv * bv)
                            .collect();
                        self.accumulate(a, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db: Vec<f64> = g
                            .iter()
                            .zip(&self.nodes[a.0].values)
                            .map(|(gv, av)| gv * av)
                            .collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                    self.accumulate(a, &da);
                }
                Op::Transpose { a } => {
                    let (am, an) = self.shape(a);
                    let mut da = vec![0.0; am * an];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * an + i] = g[i * cols + j];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::Reshape { a } => {
                    self.accumulate(a, &g);
                }
                Op::SliceCols { a, start } => {
                    let (am, an) = self.shape(a);
                    let mut da = vec![0.0; am * an];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[i * an + start + j] = g[i * cols + j];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let (pm, pn) = self.shape(p);
                        if self.nodes[p.0].requires_grad {
                            let mut dp = vec![0.0; pm * pn];
                            for i in 0..pm {
                                dp[i * pn..(i + 1) * pn]
                                    .copy_from_slice(&g[i * cols + offset..i * cols + offset + pn]);
                            }
                            self.accumulate(p, &dp);
                        }
                        offset += pn;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let (pm, pn) = self.shape(p);
                        if self.nodes[p.0].requires_grad {
                            let dp = g[offset * pn..(offset + pm) * pn].to_vec();
                            self.accumulate(p, &dp);
                        }
                        offset += pm;
                    }
                }
                Op::SoftmaxRows { a } => {
                    let y = &self.nodes[i].values;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..cols {
                            da[r * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                    let d = cols;
                    let gv = self.nodes[gain.0].values.clone();
                    if self.nodes[gain.0].requires_grad {
                        let mut dg = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                dg[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                        self.accumulate(gain, &dg);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                db[j] += g[r * d + j];
                            }
                        }
                        self.accumulate(bias, &db);
                    }
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![0.0; rows * d];
                        for r in 0..rows {
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in 0..d {
                                let dxh = g[r * d + j] * gv[j];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat[r * d + j];
                            }
                            mean_dxhat /= d as f64;
                            mean_dxhat_xhat /= d as f64;
                            for j in 0..d {
                                let dxh = g[r * d + j] * gv[j];
                                da[r * d + j] =
                                    inv_std[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                            }
                        }
                        self.accumulate(a, &da);
                    }
                }
                Op::Gelu { a } => {
                    let da: Vec<f64> = self.nodes[a.0]
                        .values
                        .iter()
                        .zip(&g)
                        .map(|(&x, gv)| gv * (normal_cdf(x) + x * normal_pdf(x)))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Conv1dTime { x, kernel, bias } => {
                    let (c, t) = self.shape(x);
                    let (_, k) = self.shape(kernel);
                    let pad = (k - 1) / 2;
                    if self.nodes[x.0].requires_grad {
                        let kv = &self.nodes[kernel.0].values;
                        let mut dx = vec![0.0; c * t];
                        for ch in 0..c {
                            let krow = &kv[ch * k..(ch + 1) * k];
                            let grow = &g[ch * t..(ch + 1) * t];
                            let drow = &mut dx[ch * t..(ch + 1) * t];
                            for s in 0..t {
                                let mut acc = 0.0;
                                for (u, &w) in krow.iter().enumerate() {
                                    // out[t'] consumed x[s] when t' + u - pad == s
                                    let tp = s + pad;
                                    if tp >= u && tp - u < t {
                                        acc += w * grow[tp - u];
                                    }
                                }
                                drow[s] = acc;
                            }
                        }
                        self.accumulate(x, &dx);
                    }
                    if self.nodes[kernel.0].requires_grad {
                        let xv = &self.nodes[x.0].values;
                        let mut dk = vec![0.0; c * k];
                        for ch in 0..c {
                            let xrow = &xv[ch * t..(ch + 1) * t];
                            let grow = &g[ch * t..(ch + 1) * t];
                            for u in 0..k {
                                let mut acc = 0.0;
                                for ti in 0..t {
                                    let src = ti + u;
                                    if src >= pad && src - pad < t {
                                        acc += grow[ti] * xrow[src - pad];
                                    }
                                }
                                dk[ch * k + u] = acc;
                            }
                        }
                        self.accumulate(kernel, &dk);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let mut db = vec![0.0; c];
                        for ch in 0..c {
                            db[ch] = g[ch * t..(ch + 1) * t].iter().sum();
                        }
                        self.accumulate(bias, &db);
                    }
                }
                Op::Dropout { a, mask_scale } => {
                    let da: Vec<f64> = g.iter().zip(&mask_scale).map(|(gv, s)| gv * s).collect();
                    self.accumulate(a, &da);
                }
                Op::MeanRows { a } => {
                    let (am, an) = self.shape(a);
                    let inv = 1.0 / am as f64;
                    let mut da = vec![0.0; am * an];
                    for i in 0..am {
                        for j in 0..an {
                            da[i * an + j] = g[j] * inv;
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumAll { a } => {
                    let (am, an) = self.shape(a);
                    let da = vec![g[0]; am * an];
                    self.accumulate(a, &da);
                }
                Op::CrossEntropy { probs, labels } => {
                    let (m, n) = self.shape(probs);
                    let pv = &self.nodes[probs.0].values;
                    let mut dp = vec![0.0; m * n];
                    let inv_m = 1.0 / m as f64;
                    for (r, &label) in labels.iter().enumerate() {
                        let p = pv[r * n + label];
                        // The clamp makes the loss flat below the threshold.
                        if p >= CE_CLAMP {
                            dp[r * n + label] = -g[0] * inv_m / p;
                        }
                    }
                    self.accumulate(probs, &dp);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(buf) => {
                for (b, c) in buf.iter_mut().zip(contribution) {
                    *b += c;
                }
            }
            None => node.grad = Some(contribution.to_vec()),
        }
    }
}

/// Lower clamp applied to probabilities inside the cross-entropy log.
pub const CE_CLAMP: f64 = 1e-12;
