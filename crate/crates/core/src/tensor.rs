//! Flat tensors and a small reverse-mode autodiff tape.
//!
//! Nodes are appended in topological order (parents always precede
//! children), values are computed eagerly, and [`Tape::backward`] walks the
//! node list in reverse accumulating gradients. The op set is exactly what
//! the alignment model needs; each op carries a hand-derived adjoint that is
//! checked against central finite differences in the test module below.

use crate::scalar::Scalar;

/// Plain value tensor: shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Uniform init in `[-scale, scale]`, element order fixed by the rng stream.
pub fn uniform_init<T: Scalar>(rng: &mut impl rand::Rng, dims: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * scale))
        .collect();
    Tensor::from_vec(dims, data)
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    /// Constant input: no gradient is accumulated for it.
    Constant,
    Add(Var, Var),
    Scale(Var, T),
    /// (m,n) + broadcast (n,)
    AddRow(Var, Var),
    /// (m,k) x (k,n)
    MatMul(Var, Var),
    /// (m,k) x (n,k)^T -> (m,n)
    MatMulNT(Var, Var),
    Tanh(Var),
    Relu(Var),
    /// x:(C_in,H,W), w:(C_out,C_in,kh,kw), b:(C_out,)
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    /// Row gather from (V,D) table.
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    /// Rows shifted by `offset` with zero fill.
    ShiftRows(Var, isize),
    /// Each row divided by its L2 norm (guarded against zero rows).
    RowL2Norm(Var),
    /// Row-wise softmax of `scale * x`.
    RowSoftmaxScaled(Var, T),
    /// Cosine similarity of corresponding rows of two (N,D) matrices.
    RowCosine(Var, Var),
    /// log sum_i exp(scale * x_i) over the whole tensor, stabilized.
    LogSumExpScaled(Var, T),
    /// (H,D) rows aggregated per span into (S,D); sum or mean per span.
    SpanAgg {
        x: Var,
        spans: Vec<(usize, usize)>,
        mean: bool,
    },
    /// (N,D) -> (1,D) mean of rows.
    MeanRows(Var),
    /// (C,H,W) -> (1,C) spatial mean per channel.
    SpatialMean(Var),
    /// (C,H,W) -> (H*W, C); position p = y*W + x (row-major).
    GridToPos(Var),
    /// View with different dims; value and gradient pass through 1:1.
    Reshape(Var),
    /// Stack n tensors of equal length as rows of an (n, len) matrix.
    StackRows(Vec<Var>),
    /// Symmetric InfoNCE over a (B,B) score matrix with logits scale*z.
    InfoNceSym {
        z: Var,
        scale: T,
    },
}

struct Node<T> {
    op: Op<T>,
    dims: Vec<usize>,
    value: Vec<T>,
    grad: Vec<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

// --- free matmul kernels (also used by adjoints) ---

/// c += a(m,k) * b(k,n)
fn matmul_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// c += a(m,k) * b(n,k)^T
fn matmul_nt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot = a_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum::<T>();
            c[i * n + j] += dot;
        }
    }
}

/// c += a(k,m)^T * b(k,n)
fn matmul_tn_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn norm_floor<T: Scalar>() -> T {
    // Far below any feature norm that occurs in practice; exists only so a
    // pathological zero row divides to zero instead of NaN.
    T::from_f64(1e-30)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].dims
    }

    pub fn grad(&self, v: Var) -> &[T] {
        &self.nodes[v.0].grad
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let d = self.dims(v);
        assert_eq!(d.len(), 2, "expected 2-d tensor, got {d:?}");
        (d[0], d[1])
    }

    fn push(&mut self, op: Op<T>, dims: Vec<usize>, value: Vec<T>) -> Var {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            dims,
            value,
            grad: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(Op::Leaf, t.dims.clone(), t.data.clone())
    }

    /// Input that participates in the forward pass but receives no gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(Op::Constant, t.dims.clone(), t.data.clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shape mismatch");
        let value: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Add(a, b), dims, value)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value: Vec<T> = self.value(a).iter().map(|&x| x * c).collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Scale(a, c), dims, value)
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.rows_cols(a);
        assert_eq!(self.value(b).len(), n, "row-broadcast length mismatch");
        let mut value = self.value(a).to_vec();
        let bv = self.value(b).to_vec();
        for i in 0..m {
            for j in 0..n {
                value[i * n + j] += bv[j];
            }
        }
        self.push(Op::AddRow(a, b), vec![m, n], value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let mut value = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut value, m, k, n);
        self.push(Op::MatMul(a, b), vec![m, n], value)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.rows_cols(a);
        let (n, k2) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul_nt inner dim mismatch");
        let mut value = vec![T::zero(); m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut value, m, k, n);
        self.push(Op::MatMulNT(a, b), vec![m, n], value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value: Vec<T> = self.value(a).iter().map(|x| x.tanh()).collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Tanh(a), dims, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value: Vec<T> = self
            .value(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let dims = self.dims(a).to_vec();
        self.push(Op::Relu(a), dims, value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xd = self.dims(x).to_vec();
        let wd = self.dims(w).to_vec();
        assert_eq!(xd.len(), 3, "conv input must be (C,H,W)");
        assert_eq!(wd.len(), 4, "conv weight must be (Co,Ci,kh,kw)");
        let (ci, h, wi) = (xd[0], xd[1], xd[2]);
        let (co, ci2, kh, kw) = (wd[0], wd[1], wd[2], wd[3]);
        assert_eq!(ci, ci2, "conv channel mismatch");
        assert_eq!(self.value(b).len(), co, "conv bias length mismatch");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wi + 2 * pad - kw) / stride + 1;

        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut value = vec![T::zero(); co * ho * wo];
        for c_out in 0..co {
            let w_base = c_out * ci * kh * kw;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bv[c_out];
                    for c_in in 0..ci {
                        let x_plane = &xv[c_in * h * wi..(c_in + 1) * h * wi];
                        let w_k = &wv[w_base + c_in * kh * kw..w_base + (c_in + 1) * kh * kw];
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let row = &x_plane[iy as usize * wi..(iy as usize + 1) * wi];
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= wi {
                                    continue;
                                }
                                acc += w_k[ky * kw + kx] * row[ix as usize];
                            }
                        }
                    }
                    value[c_out * ho * wo + oy * wo + ox] = acc;
                }
            }
        }
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            vec![co, ho, wo],
            value,
        )
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = self.rows_cols(table);
        let tv = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "gather id {id} out of range {v}");
            value.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            vec![ids.len(), d],
            value,
        )
    }

    pub fn shift_rows(&mut self, a: Var, offset: isize) -> Var {
        let (m, n) = self.rows_cols(a);
        let av = self.value(a);
        let mut value = vec![T::zero(); m * n];
        for i in 0..m {
            let src = i as isize - offset;
            if src >= 0 && (src as usize) < m {
                value[i * n..(i + 1) * n]
                    .copy_from_slice(&av[src as usize * n..(src as usize + 1) * n]);
            }
        }
        self.push(Op::ShiftRows(a, offset), vec![m, n], value)
    }

    pub fn row_l2_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.rows_cols(a);
        let av = self.value(a);
        let floor = norm_floor::<T>();
        let mut value = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            for j in 0..n {
                value[i * n + j] = row[j] / norm;
            }
        }
        self.push(Op::RowL2Norm(a), vec![m, n], value)
    }

    pub fn row_softmax_scaled(&mut self, a: Var, scale: T) -> Var {
        let (m, n) = self.rows_cols(a);
        let av = self.value(a);
        let mut value = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let mx = row
                .iter()
                .fold(T::neg_infinity(), |acc, &x| acc.max(x * scale));
            let mut sum = T::zero();
            for j in 0..n {
                let e = (row[j] * scale - mx).exp();
                value[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                value[i * n + j] /= sum;
            }
        }
        self.push(Op::RowSoftmaxScaled(a, scale), vec![m, n], value)
    }

    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.rows_cols(a);
        assert_eq!((m, n), self.rows_cols(b), "row_cosine shape mismatch");
        let av = self.value(a);
        let bv = self.value(b);
        let floor = norm_floor::<T>();
        let mut value = vec![T::zero(); m];
        for i in 0..m {
            let ra = &av[i * n..(i + 1) * n];
            let rb = &bv[i * n..(i + 1) * n];
            let na = ra.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            let nb = rb.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            let dot = ra.iter().zip(rb).map(|(&x, &y)| x * y).sum::<T>();
            value[i] = dot / (na * nb);
        }
        self.push(Op::RowCosine(a, b), vec![m], value)
    }

    pub fn log_sum_exp_scaled(&mut self, a: Var, scale: T) -> Var {
        let av = self.value(a);
        assert!(!av.is_empty(), "log_sum_exp over empty tensor");
        let mx = av
            .iter()
            .fold(T::neg_infinity(), |acc, &x| acc.max(x * scale));
        let sum: T = av.iter().map(|&x| (x * scale - mx).exp()).sum();
        let value = vec![mx + sum.ln()];
        self.push(Op::LogSumExpScaled(a, scale), vec![1], value)
    }

    pub fn span_agg(&mut self, x: Var, spans: &[(usize, usize)], mean: bool) -> Var {
        let (h, d) = self.rows_cols(x);
        let xv = self.value(x);
        let mut value = vec![T::zero(); spans.len() * d];
        for (s, &(lo, hi)) in spans.iter().enumerate() {
            assert!(lo < hi && hi <= h, "bad span ({lo},{hi}) for {h} rows");
            for r in lo..hi {
                for j in 0..d {
                    value[s * d + j] += xv[r * d + j];
                }
            }
            if mean {
                let inv = T::one() / T::from_f64((hi - lo) as f64);
                for j in 0..d {
                    value[s * d + j] *= inv;
                }
            }
        }
        self.push(
            Op::SpanAgg {
                x,
                spans: spans.to_vec(),
                mean,
            },
            vec![spans.len(), d],
            value,
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.rows_cols(a);
        let av = self.value(a);
        let inv = T::one() / T::from_f64(m as f64);
        let mut value = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                value[j] += av[i * n + j];
            }
        }
        for v in value.iter_mut() {
            *v *= inv;
        }
        self.push(Op::MeanRows(a), vec![1, n], value)
    }

    pub fn spatial_mean(&mut self, a: Var) -> Var {
        let d = self.dims(a).to_vec();
        assert_eq!(d.len(), 3, "spatial_mean expects (C,H,W)");
        let (c, h, w) = (d[0], d[1], d[2]);
        let av = self.value(a);
        let inv = T::one() / T::from_f64((h * w) as f64);
        let mut value = vec![T::zero(); c];
        for ch in 0..c {
            let plane = &av[ch * h * w..(ch + 1) * h * w];
            value[ch] = plane.iter().copied().sum::<T>() * inv;
        }
        self.push(Op::SpatialMean(a), vec![1, c], value)
    }

    pub fn grid_to_pos(&mut self, a: Var) -> Var {
        let d = self.dims(a).to_vec();
        assert_eq!(d.len(), 3, "grid_to_pos expects (C,H,W)");
        let (c, h, w) = (d[0], d[1], d[2]);
        let av = self.value(a);
        let m = h * w;
        let mut value = vec![T::zero(); m * c];
        for ch in 0..c {
            for p in 0..m {
                value[p * c + ch] = av[ch * m + p];
            }
        }
        self.push(Op::GridToPos(a), vec![m, c], value)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Var {
        let value = self.value(a).to_vec();
        assert_eq!(
            value.len(),
            dims.iter().product::<usize>(),
            "reshape element count mismatch"
        );
        self.push(Op::Reshape(a), dims.to_vec(), value)
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let len = self.value(rows[0]).len();
        let mut value = Vec::with_capacity(rows.len() * len);
        for &r in rows {
            assert_eq!(self.value(r).len(), len, "stack_rows length mismatch");
            value.extend_from_slice(self.value(r));
        }
        self.push(Op::StackRows(rows.to_vec()), vec![rows.len(), len], value)
    }

    /// Symmetric InfoNCE over a square score matrix `z` (rows: one side of
    /// the pairing, columns: the other; matched pairs on the diagonal):
    /// `-(1/B) * sum_i [log softmax_row_i(z*scale)[i] + log softmax_col_i(z*scale)[i]]`.
    pub fn info_nce_sym(&mut self, z: Var, scale: T) -> Var {
        let (b, b2) = self.rows_cols(z);
        assert_eq!(b, b2, "info_nce_sym expects a square matrix");
        let zv = self.value(z);
        let mut loss = T::zero();
        for i in 0..b {
            loss += log_softmax_at::<T>(zv, b, i, i, scale, true);
            loss += log_softmax_at::<T>(zv, b, i, i, scale, false);
        }
        let value = vec![-loss / T::from_f64(b as f64)];
        self.push(Op::InfoNceSym { z, scale }, vec![1], value)
    }

    /// Reverse pass. Seeds `d(out)/d(out) = 1`; `out` must be scalar-valued.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.nodes[out.0].value.len(), 1, "backward from non-scalar");
        for node in self.nodes.iter_mut() {
            node.grad = vec![T::zero(); node.value.len()];
        }
        self.nodes[out.0].grad[0] = T::one();

        for i in (0..self.nodes.len()).rev() {
            let (front, back) = self.nodes.split_at_mut(i);
            let node = &back[0];
            if node.grad.iter().all(|&g| g == T::zero()) {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    for (g, &dg) in front[a.0].grad.iter_mut().zip(&node.grad) {
                        *g += dg;
                    }
                    for (g, &dg) in front[b.0].grad.iter_mut().zip(&node.grad) {
                        *g += dg;
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    for (g, &dg) in front[a.0].grad.iter_mut().zip(&node.grad) {
                        *g += dg * c;
                    }
                }
                Op::AddRow(a, b) => {
                    let n = front[b.0].value.len();
                    for (g, &dg) in front[a.0].grad.iter_mut().zip(&node.grad) {
                        *g += dg;
                    }
                    let gb = &mut front[b.0].grad;
                    for (idx, &dg) in node.grad.iter().enumerate() {
                        gb[idx % n] += dg;
                    }
                }
                Op::MatMul(a, b) => {
                    let m = front[a.0].dims[0];
                    let k = front[a.0].dims[1];
                    let n = front[b.0].dims[1];
                    // dA += dC * B^T ; dB += A^T * dC.
                    // Contributions go through local buffers so operand
                    // creation order (and aliasing a == b) cannot matter.
                    let mut ga = vec![T::zero(); m * k];
                    let mut gb = vec![T::zero(); k * n];
                    matmul_nt_acc(&node.grad, &front[b.0].value, &mut ga, m, n, k);
                    matmul_tn_acc(&front[a.0].value, &node.grad, &mut gb, k, m, n);
                    for (g, c) in front[a.0].grad.iter_mut().zip(ga) {
                        *g += c;
                    }
                    for (g, c) in front[b.0].grad.iter_mut().zip(gb) {
                        *g += c;
                    }
                }
                Op::MatMulNT(a, b) => {
                    let m = front[a.0].dims[0];
                    let k = front[a.0].dims[1];
                    let n = front[b.0].dims[0];
                    // C = A * B^T: dA += dC * B ; dB += dC^T * A
                    let mut ga = vec![T::zero(); m * k];
                    let mut gb = vec![T::zero(); n * k];
                    matmul_acc(&node.grad, &front[b.0].value, &mut ga, m, n, k);
                    matmul_tn_acc(&node.grad, &front[a.0].value, &mut gb, n, m, k);
                    for (g, c) in front[a.0].grad.iter_mut().zip(ga) {
                        *g += c;
                    }
                    for (g, c) in front[b.0].grad.iter_mut().zip(gb) {
                        *g += c;
                    }
                }
                Op::Tanh(a) => {
                    let ga = &mut front[a.0].grad;
                    for (idx, (&dg, &y)) in node.grad.iter().zip(&node.value).enumerate() {
                        ga[idx] += dg * (T::one() - y * y);
                    }
                }
                Op::Relu(a) => {
                    let av = &front[a.0].value;
                    let ga = &mut front[a.0].grad;
                    for idx in 0..av.len() {
                        if av[idx] > T::zero() {
                            ga[idx] += node.grad[idx];
                        }
                    }
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    conv2d_backward(front, node, *x, *w, *b, *stride, *pad);
                }
                Op::Gather { table, ids } => {
                    let d = front[table.0].dims[1];
                    let gt = &mut front[table.0].grad;
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += node.grad[r * d + j];
                        }
                    }
                }
                Op::ShiftRows(a, offset) => {
                    let (m, n) = (front[a.0].dims[0], front[a.0].dims[1]);
                    let ga = &mut front[a.0].grad;
                    for i in 0..m {
                        let src = i as isize - offset;
                        if src >= 0 && (src as usize) < m {
                            let s = src as usize;
                            for j in 0..n {
                                ga[s * n + j] += node.grad[i * n + j];
                            }
                        }
                    }
                }
                Op::RowL2Norm(a) => {
                    let (m, n) = (front[a.0].dims[0], front[a.0].dims[1]);
                    let floor = norm_floor::<T>();
                    let av = &front[a.0].value;
                    // dx = (dy - y * (y . dy)) / ||x||
                    let mut contrib = vec![T::zero(); m * n];
                    for i in 0..m {
                        let row = &av[i * n..(i + 1) * n];
                        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(floor);
                        let y = &node.value[i * n..(i + 1) * n];
                        let dy = &node.grad[i * n..(i + 1) * n];
                        let ydy: T = y.iter().zip(dy).map(|(&u, &v)| u * v).sum();
                        for j in 0..n {
                            contrib[i * n + j] = (dy[j] - y[j] * ydy) / norm;
                        }
                    }
                    for (g, c) in front[a.0].grad.iter_mut().zip(contrib) {
                        *g += c;
                    }
                }
                Op::RowSoftmaxScaled(a, scale) => {
                    let (m, n) = (front[a.0].dims[0], front[a.0].dims[1]);
                    let scale = *scale;
                    let ga = &mut front[a.0].grad;
                    for i in 0..m {
                        let p = &node.value[i * n..(i + 1) * n];
                        let dp = &node.grad[i * n..(i + 1) * n];
                        let pdp: T = p.iter().zip(dp).map(|(&u, &v)| u * v).sum();
                        for j in 0..n {
                            ga[i * n + j] += scale * p[j] * (dp[j] - pdp);
                        }
                    }
                }
                Op::RowCosine(a, b) => {
                    row_cosine_backward(front, node, *a, *b);
                }
                Op::LogSumExpScaled(a, scale) => {
                    let scale = *scale;
                    let av = &front[a.0].value;
                    let mx = av
                        .iter()
                        .fold(T::neg_infinity(), |acc, &x| acc.max(x * scale));
                    let exps: Vec<T> = av.iter().map(|&x| (x * scale - mx).exp()).collect();
                    let sum: T = exps.iter().copied().sum();
                    let dg = node.grad[0];
                    let ga = &mut front[a.0].grad;
                    for (idx, e) in exps.iter().enumerate() {
                        ga[idx] += dg * scale * *e / sum;
                    }
                }
                Op::SpanAgg { x, spans, mean } => {
                    let d = front[x.0].dims[1];
                    let gx = &mut front[x.0].grad;
                    for (s, &(lo, hi)) in spans.iter().enumerate() {
                        let factor = if *mean {
                            T::one() / T::from_f64((hi - lo) as f64)
                        } else {
                            T::one()
                        };
                        for r in lo..hi {
                            for j in 0..d {
                                gx[r * d + j] += node.grad[s * d + j] * factor;
                            }
                        }
                    }
                }
                Op::MeanRows(a) => {
                    let (m, n) = (front[a.0].dims[0], front[a.0].dims[1]);
                    let inv = T::one() / T::from_f64(m as f64);
                    let ga = &mut front[a.0].grad;
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += node.grad[j] * inv;
                        }
                    }
                }
                Op::SpatialMean(a) => {
                    let d = &front[a.0].dims;
                    let (c, h, w) = (d[0], d[1], d[2]);
                    let inv = T::one() / T::from_f64((h * w) as f64);
                    let ga = &mut front[a.0].grad;
                    for ch in 0..c {
                        let dg = node.grad[ch] * inv;
                        for p in 0..h * w {
                            ga[ch * h * w + p] += dg;
                        }
                    }
                }
                Op::GridToPos(a) => {
                    let d = &front[a.0].dims;
                    let (c, h, w) = (d[0], d[1], d[2]);
                    let m = h * w;
                    let ga = &mut front[a.0].grad;
                    for ch in 0..c {
                        for p in 0..m {
                            ga[ch * m + p] += node.grad[p * c + ch];
                        }
                    }
                }
                Op::Reshape(a) => {
                    for (g, &dg) in front[a.0].grad.iter_mut().zip(&node.grad) {
                        *g += dg;
                    }
                }
                Op::StackRows(rows) => {
                    let rows = rows.clone();
                    let len = node.value.len() / rows.len();
                    for (r, &v) in rows.iter().enumerate() {
                        let g = &mut front[v.0].grad;
                        for j in 0..len {
                            g[j] += node.grad[r * len + j];
                        }
                    }
                }
                Op::InfoNceSym { z, scale } => {
                    info_nce_backward(front, node, *z, *scale);
                }
            }
        }
    }
}

/// log softmax of z*scale at (row i, col j), along the row when `along_row`,
/// else along the column. Stabilized.
fn log_softmax_at<T: Scalar>(
    z: &[T],
    b: usize,
    i: usize,
    j: usize,
    scale: T,
    along_row: bool,
) -> T {
    let get = |k: usize| if along_row { z[i * b + k] } else { z[k * b + j] } * scale;
    let target = z[i * b + j] * scale;
    let mx = (0..b).fold(T::neg_infinity(), |acc, k| acc.max(get(k)));
    let sum: T = (0..b).map(|k| (get(k) - mx).exp()).sum();
    target - mx - sum.ln()
}

fn info_nce_backward<T: Scalar>(front: &mut [Node<T>], node: &Node<T>, z: Var, scale: T) {
    let b = front[z.0].dims[0];
    let zv = front[z.0].value.clone();
    let dg = node.grad[0];
    let inv_b = T::one() / T::from_f64(b as f64);
    let gz = &mut front[z.0].grad;
    // d/dz_ab = (scale/B) * [(p_row_a(b) - δ_ab) + (p_col_b(a) - δ_ab)]
    for i in 0..b {
        // row softmax of row i
        let mx = (0..b).fold(T::neg_infinity(), |acc, k| acc.max(zv[i * b + k] * scale));
        let exps: Vec<T> = (0..b).map(|k| (zv[i * b + k] * scale - mx).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        for k in 0..b {
            let p = exps[k] / sum;
            let delta = if k == i { T::one() } else { T::zero() };
            gz[i * b + k] += dg * scale * inv_b * (p - delta);
        }
        // column softmax of column i
        let mx = (0..b).fold(T::neg_infinity(), |acc, k| acc.max(zv[k * b + i] * scale));
        let exps: Vec<T> = (0..b).map(|k| (zv[k * b + i] * scale - mx).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        for k in 0..b {
            let p = exps[k] / sum;
            let delta = if k == i { T::one() } else { T::zero() };
            gz[k * b + i] += dg * scale * inv_b * (p - delta);
        }
    }
}

fn row_cosine_backward<T: Scalar>(front: &mut [Node<T>], node: &Node<T>, a: Var, b: Var) {
    let (m, n) = (front[a.0].dims[0], front[a.0].dims[1]);
    let floor = norm_floor::<T>();
    let mut ca = vec![T::zero(); m * n];
    let mut cb = vec![T::zero(); m * n];
    {
        let av = &front[a.0].value;
        let bv = &front[b.0].value;
        for i in 0..m {
            let ra = &av[i * n..(i + 1) * n];
            let rb = &bv[i * n..(i + 1) * n];
            let na = ra.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            let nb = rb.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
            let cos = node.value[i];
            let dg = node.grad[i];
            // d cos / d a = (b/(|a||b|) - cos * a/|a|^2)
            for j in 0..n {
                ca[i * n + j] = dg * (rb[j] / (na * nb) - cos * ra[j] / (na * na));
                cb[i * n + j] = dg * (ra[j] / (na * nb) - cos * rb[j] / (nb * nb));
            }
        }
    }
    for (g, c) in front[a.0].grad.iter_mut().zip(ca) {
        *g += c;
    }
    for (g, c) in front[b.0].grad.iter_mut().zip(cb) {
        *g += c;
    }
}

fn conv2d_backward<T: Scalar>(
    front: &mut [Node<T>],
    node: &Node<T>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    pad: usize,
) {
    let (ci, h, wi) = {
        let d = &front[x.0].dims;
        (d[0], d[1], d[2])
    };
    let (co, _, kh, kw) = {
        let d = &front[w.0].dims;
        (d[0], d[1], d[2], d[3])
    };
    let (ho, wo) = (node.dims[1], node.dims[2]);

    let xv = front[x.0].value.clone();
    let wv = front[w.0].value.clone();
    let mut gx = vec![T::zero(); xv.len()];
    let mut gw = vec![T::zero(); wv.len()];
    let mut gb = vec![T::zero(); co];

    for c_out in 0..co {
        let w_base = c_out * ci * kh * kw;
        for oy in 0..ho {
            for ox in 0..wo {
                let dg = node.grad[c_out * ho * wo + oy * wo + ox];
                if dg == T::zero() {
                    continue;
                }
                gb[c_out] += dg;
                for c_in in 0..ci {
                    let x_base = c_in * h * wi;
                    let w_k = w_base + c_in * kh * kw;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= wi {
                                continue;
                            }
                            let ix = ix as usize;
                            gx[x_base + iy * wi + ix] += dg * wv[w_k + ky * kw + kx];
                            gw[w_k + ky * kw + kx] += dg * xv[x_base + iy * wi + ix];
                        }
                    }
                }
            }
        }
    }
    for (g, c) in front[x.0].grad.iter_mut().zip(gx) {
        *g += c;
    }
    for (g, c) in front[w.0].grad.iter_mut().zip(gw) {
        *g += c;
    }
    for (g, c) in front[b.0].grad.iter_mut().zip(gb) {
        *g += c;
    }
}
