//! Minimal reverse-mode differentiation over the crate's operation set.
//!
//! A [`Tape`] records primitive applications eagerly: every op computes its
//! forward value through the same generic kernels the model uses (so
//! recording never perturbs results) and logs what backward needs. The whole
//! tape works in double precision, which separates truncation error from
//! implementation error when gradients are compared against central finite
//! differences.
//!
//! Supported primitives: `matmul`, `softmax`, elementwise `add`/`mul`, the
//! `silu` activation, `depthwise_compress`, `conv3d`, `bilinear_resample`,
//! and the attention `score`/`apply` products, plus shape/reduction glue
//! (`reshape`, `scale`, `add_row_bias`, `sum`, `dot`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape_err};
use crate::ops::{
    bilinear_resample_raw, conv3d_raw, depthwise_compress_raw, matmul, sample_axis, silu_scalar,
    softmax_slice,
};
use crate::{Error, Result};

/// Dense double-precision array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor64 {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor64 {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) {
            return Err(invalid!("dims must be nonempty and positive, got {dims:?}"));
        }
        if data.len() != len {
            return Err(shape_err!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![x],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    fn dims5(&self) -> Result<[usize; 5]> {
        if self.dims.len() != 5 {
            return Err(shape_err!(
                "operation needs a 5-axis tensor, got dims {:?}",
                self.dims
            ));
        }
        Ok([
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.dims[3],
            self.dims[4],
        ])
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.dims.len() {
            1 => Ok((1, self.dims[0])),
            2 => Ok((self.dims[0], self.dims[1])),
            _ => Err(shape_err!(
                "operation needs a vector or matrix, got dims {:?}",
                self.dims
            )),
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Node {
    Input,
    MatMul {
        a: Var,
        b: Var,
    },
    Score {
        q: Var,
        key: Var,
        scale: f64,
    },
    ApplyAttn {
        attn: Var,
        values: Var,
    },
    SoftmaxRows {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Silu {
        x: Var,
    },
    AddRowBias {
        m: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Dot {
        a: Var,
        b: Var,
    },
    DepthwiseCompress {
        x: Var,
        weights: Var,
        bias: Var,
        k: usize,
    },
    Conv3d {
        x: Var,
        weights: Var,
        bias: Var,
        kt: usize,
        kh: usize,
        kw: usize,
    },
    Bilinear {
        x: Var,
        h_out: usize,
        w_out: usize,
    },
}

/// Recorded forward computation. Nodes are stored in application order, so a
/// single reverse sweep visits every consumer before its producers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<Tensor64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf input.
    pub fn input(&mut self, t: Tensor64) -> Var {
        self.push(Node::Input, t)
    }

    /// Forward value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor64 {
        &self.vals[v.0]
    }

    fn push(&mut self, node: Node, val: Tensor64) -> Var {
        self.nodes.push(node);
        self.vals.push(val);
        Var(self.vals.len() - 1)
    }

    /// `a (m x k) * b (k x n)`; vectors are treated as single rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).matrix_dims()?;
        let (kb, n) = self.value(b).matrix_dims()?;
        if ka != kb {
            return Err(shape_err!("matmul inner dims disagree: {ka} vs {kb}"));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, ka, n)?;
        Ok(self.push(Node::MatMul { a, b }, Tensor64::matrix(m, n, out)?))
    }

    /// Attention scores `scale * Q Kᵀ` for `Q, K` of shape `n x d`.
    pub fn score(&mut self, q: Var, key: Var, scale: f64) -> Result<Var> {
        let (n, d) = self.value(q).matrix_dims()?;
        let (nk, dk) = self.value(key).matrix_dims()?;
        if d != dk {
            return Err(shape_err!("score head dims disagree: {d} vs {dk}"));
        }
        let qd = self.value(q).data();
        let kd = self.value(key).data();
        let mut out = vec![0.0f64; n * nk];
        for i in 0..n {
            for j in 0..nk {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += qd[i * d + c] * kd[j * d + c];
                }
                out[i * nk + j] = acc * scale;
            }
        }
        Ok(self.push(Node::Score { q, key, scale }, Tensor64::matrix(n, nk, out)?))
    }

    /// Applies an `n x n` attention map to `n x d` values.
    pub fn apply_attn(&mut self, attn: Var, values: Var) -> Result<Var> {
        let (n, n2) = self.value(attn).matrix_dims()?;
        let (nv, d) = self.value(values).matrix_dims()?;
        if n2 != nv {
            return Err(shape_err!(
                "attention map is {n}x{n2} but values have {nv} rows"
            ));
        }
        let out = matmul(self.value(attn).data(), self.value(values).data(), n, n2, d)?;
        Ok(self.push(
            Node::ApplyAttn { attn, values },
            Tensor64::matrix(n, d, out)?,
        ))
    }

    /// Row-wise softmax of a vector or matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.value(x).matrix_dims()?;
        if cols == 0 {
            return Err(invalid!("softmax input must not be empty"));
        }
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            softmax_slice(&mut out[r * cols..(r + 1) * cols]);
        }
        let dims = self.value(x).dims().to_vec();
        Ok(self.push(Node::SoftmaxRows { x }, Tensor64::new(dims, out)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, |x, y| x + y, Node::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_elementwise(a, b, |x, y| x * y, Node::Mul { a, b })
    }

    fn zip_elementwise(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        node: Node,
    ) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(shape_err!(
                "elementwise op needs equal dims, got {:?} and {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let dims = self.value(a).dims().to_vec();
        Ok(self.push(node, Tensor64::new(dims, data)?))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| silu_scalar(v))
            .collect();
        let dims = self.value(x).dims().to_vec();
        Ok(self.push(Node::Silu { x }, Tensor64::new(dims, data)?))
    }

    /// Adds a length-`cols` bias to every row of an `rows x cols` matrix.
    pub fn add_row_bias(&mut self, m: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.value(m).matrix_dims()?;
        if self.value(bias).len() != cols {
            return Err(shape_err!(
                "bias has {} entries, rows have {cols}",
                self.value(bias).len()
            ));
        }
        let bias_data = self.value(bias).data().to_vec();
        let data = self
            .value(m)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias_data[i % cols])
            .collect();
        let _ = rows;
        let dims = self.value(m).dims().to_vec();
        Ok(self.push(Node::AddRowBias { m, bias }, Tensor64::new(dims, data)?))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let dims = self.value(x).dims().to_vec();
        Ok(self.push(Node::Scale { x, c }, Tensor64::new(dims, data)?))
    }

    /// Reinterprets the value under new dims of the same total length.
    pub fn reshape(&mut self, x: Var, dims: Vec<usize>) -> Result<Var> {
        let len: usize = dims.iter().product();
        if len != self.value(x).len() {
            return Err(shape_err!(
                "reshape to {dims:?} changes length {} -> {len}",
                self.value(x).len()
            ));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push(Node::Reshape { x }, Tensor64::new(dims, data)?))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Node::Sum { x }, Tensor64::scalar(s)))
    }

    /// Inner product of two equally shaped values, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(shape_err!(
                "dot needs equal dims, got {:?} and {:?}",
                self.value(a).dims(),
                self.value(b).dims()
            ));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .sum();
        Ok(self.push(Node::Dot { a, b }, Tensor64::scalar(s)))
    }

    /// Strided depthwise compression of a 5-axis value; weights are
    /// `[channels * k * k]`, bias `[channels]`.
    pub fn depthwise_compress(
        &mut self,
        x: Var,
        weights: Var,
        bias: Var,
        k: usize,
        ceil: bool,
    ) -> Result<Var> {
        let dims = self.value(x).dims5()?;
        let d = dims[4];
        if self.value(weights).len() != d * k * k || self.value(bias).len() != d {
            return Err(shape_err!(
                "depthwise weights/bias need {}/{d} entries, got {}/{}",
                d * k * k,
                self.value(weights).len(),
                self.value(bias).len()
            ));
        }
        if !ceil && (dims[2] % k != 0 || dims[3] % k != 0) {
            return Err(invalid!(
                "exact-mode compression needs k = {k} to divide H = {} and W = {}",
                dims[2],
                dims[3]
            ));
        }
        let (out, out_dims) = depthwise_compress_raw(
            self.value(x).data(),
            dims,
            self.value(weights).data(),
            self.value(bias).data(),
            k,
            ceil,
        );
        Ok(self.push(
            Node::DepthwiseCompress {
                x,
                weights,
                bias,
                k,
            },
            Tensor64::new(out_dims.to_vec(), out)?,
        ))
    }

    /// Per-channel 3D convolution of a 5-axis value with odd extents;
    /// weights are `[channels * kt * kh * kw]`, bias `[channels]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        weights: Var,
        bias: Var,
        extents: (usize, usize, usize),
    ) -> Result<Var> {
        let (kt, kh, kw) = extents;
        for (name, e) in [("kt", kt), ("kh", kh), ("kw", kw)] {
            if e == 0 || e % 2 == 0 {
                return Err(invalid!("kernel extent {name}={e} must be odd"));
            }
        }
        let dims = self.value(x).dims5()?;
        let d = dims[4];
        if self.value(weights).len() != d * kt * kh * kw || self.value(bias).len() != d {
            return Err(shape_err!(
                "conv3d weights/bias need {}/{d} entries, got {}/{}",
                d * kt * kh * kw,
                self.value(weights).len(),
                self.value(bias).len()
            ));
        }
        let out = conv3d_raw(
            self.value(x).data(),
            dims,
            self.value(weights).data(),
            self.value(bias).data(),
            kt,
            kh,
            kw,
        );
        Ok(self.push(
            Node::Conv3d {
                x,
                weights,
                bias,
                kt,
                kh,
                kw,
            },
            Tensor64::new(dims.to_vec(), out)?,
        ))
    }

    /// Half-pixel bilinear resampling of a 5-axis value to `(h_out, w_out)`.
    pub fn bilinear(&mut self, x: Var, h_out: usize, w_out: usize) -> Result<Var> {
        if h_out == 0 || w_out == 0 {
            return Err(invalid!("output dims must be >= 1, got {h_out}x{w_out}"));
        }
        let dims = self.value(x).dims5()?;
        let (out, out_dims) = bilinear_resample_raw(self.value(x).data(), dims, h_out, w_out);
        Ok(self.push(
            Node::Bilinear { x, h_out, w_out },
            Tensor64::new(out_dims.to_vec(), out)?,
        ))
    }

    /// Name-based dispatcher for harnesses that drive the tape from
    /// configuration. Structured ops (convolutions, resampling, attention
    /// score/apply) take parameters and must be called directly; anything
    /// unknown is an unsupported-op error.
    pub fn apply_named(&mut self, name: &str, args: &[Var]) -> Result<Var> {
        let need = |n: usize| -> Result<()> {
            if args.len() != n {
                return Err(invalid!(
                    "primitive '{name}' takes {n} arguments, got {}",
                    args.len()
                ));
            }
            Ok(())
        };
        match name {
            "softmax" => {
                need(1)?;
                self.softmax(args[0])
            }
            "matmul" => {
                need(2)?;
                self.matmul(args[0], args[1])
            }
            "add" => {
                need(2)?;
                self.add(args[0], args[1])
            }
            "mul" => {
                need(2)?;
                self.mul(args[0], args[1])
            }
            "silu" => {
                need(1)?;
                self.silu(args[0])
            }
            "sum" => {
                need(1)?;
                self.sum(args[0])
            }
            "dot" => {
                need(2)?;
                self.dot(args[0], args[1])
            }
            other => Err(Error::UnsupportedOp(format!(
                "'{other}' is not a differentiable primitive"
            ))),
        }
    }

    /// Reverse sweep from a scalar output with unit cotangent.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(invalid!(
                "backward without an explicit cotangent needs a scalar output, got dims {:?}",
                self.value(output).dims()
            ));
        }
        self.backward_with(output, &Tensor64::scalar(1.0))
    }

    /// Reverse sweep from `output` seeded with an arbitrary cotangent of the
    /// same shape. Gradients are linear in the cotangent.
    pub fn backward_with(&self, output: Var, cotangent: &Tensor64) -> Result<Gradients> {
        if cotangent.dims() != self.value(output).dims() {
            return Err(shape_err!(
                "cotangent dims {:?} do not match output dims {:?}",
                cotangent.dims(),
                self.value(output).dims()
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.vals.len()];
        adj[output.0] = Some(cotangent.data().to_vec());

        for id in (0..self.nodes.len()).rev() {
            let Some(ct) = adj[id].take() else { continue };
            self.propagate(id, &ct, &mut adj);
            adj[id] = Some(ct);
        }

        let grads = adj
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor64 {
                    dims: self.vals[i].dims.clone(),
                    data,
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, ct: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let acc = |adj: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>| match &mut adj[v.0] {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(&delta) {
                    *b += d;
                }
            }
            slot @ None => *slot = Some(delta),
        };
        match &self.nodes[id] {
            Node::Input => {}
            Node::MatMul { a, b } => {
                let (m, k) = self.vals[a.0].matrix_dims().expect("recorded");
                let (_, n) = self.vals[b.0].matrix_dims().expect("recorded");
                acc(adj, *a, mm_nt(ct, self.vals[b.0].data(), m, n, k));
                acc(adj, *b, mm_tn(self.vals[a.0].data(), ct, m, k, n));
            }
            Node::Score { q, key, scale } => {
                let (n, d) = self.vals[q.0].matrix_dims().expect("recorded");
                let (nk, _) = self.vals[key.0].matrix_dims().expect("recorded");
                // d/dQ [scale * Q Kᵀ] = scale * ct * K; d/dK = scale * ctᵀ * Q.
                let mut dq = matmul(ct, self.vals[key.0].data(), n, nk, d).expect("recorded");
                for v in dq.iter_mut() {
                    *v *= scale;
                }
                let mut dk = mm_tn(ct, self.vals[q.0].data(), n, nk, d);
                for v in dk.iter_mut() {
                    *v *= scale;
                }
                acc(adj, *q, dq);
                acc(adj, *key, dk);
            }
            Node::ApplyAttn { attn, values } => {
                let (n, nv) = self.vals[attn.0].matrix_dims().expect("recorded");
                let (_, d) = self.vals[values.0].matrix_dims().expect("recorded");
                acc(adj, *attn, mm_nt(ct, self.vals[values.0].data(), n, d, nv));
                acc(adj, *values, mm_tn(self.vals[attn.0].data(), ct, n, nv, d));
            }
            Node::SoftmaxRows { x } => {
                let (rows, cols) = self.vals[x.0].matrix_dims().expect("recorded");
                let y = self.vals[id].data();
                let mut dx = vec![0.0f64; y.len()];
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let cr = &ct[r * cols..(r + 1) * cols];
                    let inner: f64 = yr.iter().zip(cr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (cr[c] - inner);
                    }
                }
                acc(adj, *x, dx);
            }
            Node::Add { a, b } => {
                acc(adj, *a, ct.to_vec());
                acc(adj, *b, ct.to_vec());
            }
            Node::Mul { a, b } => {
                let da = ct
                    .iter()
                    .zip(self.vals[b.0].data())
                    .map(|(&c, &y)| c * y)
                    .collect();
                let db = ct
                    .iter()
                    .zip(self.vals[a.0].data())
                    .map(|(&c, &x)| c * x)
                    .collect();
                acc(adj, *a, da);
                acc(adj, *b, db);
            }
            Node::Silu { x } => {
                let dx = ct
                    .iter()
                    .zip(self.vals[x.0].data())
                    .map(|(&c, &v)| {
                        let s = 1.0 / (1.0 + libm::exp(-v));
                        c * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                acc(adj, *x, dx);
            }
            Node::AddRowBias { m, bias } => {
                let cols = self.vals[bias.0].len();
                let mut db = vec![0.0f64; cols];
                for (i, &c) in ct.iter().enumerate() {
                    db[i % cols] += c;
                }
                acc(adj, *m, ct.to_vec());
                acc(adj, *bias, db);
            }
            Node::Scale { x, c } => {
                acc(adj, *x, ct.iter().map(|&v| v * c).collect());
            }
            Node::Reshape { x } => {
                acc(adj, *x, ct.to_vec());
            }
            Node::Sum { x } => {
                acc(adj, *x, vec![ct[0]; self.vals[x.0].len()]);
            }
            Node::Dot { a, b } => {
                let da = self.vals[b.0].data().iter().map(|&y| ct[0] * y).collect();
                let db = self.vals[a.0].data().iter().map(|&x| ct[0] * x).collect();
                acc(adj, *a, da);
                acc(adj, *b, db);
            }
            Node::DepthwiseCompress {
                x,
                weights,
                bias,
                k,
            } => {
                let dims = self.vals[x.0].dims5().expect("recorded");
                let out_dims = self.vals[id].dims5().expect("recorded");
                let [b_n, t_n, h_in, w_in, d_n] = dims;
                let [_, _, h_out, w_out, _] = out_dims;
                let k = *k;
                let xs = self.vals[x.0].data();
                let ws = self.vals[weights.0].data();
                let mut dx = vec![0.0f64; xs.len()];
                let mut dw = vec![0.0f64; ws.len()];
                let mut db = vec![0.0f64; d_n];
                let frame_in = h_in * w_in * d_n;
                let frame_out = h_out * w_out * d_n;
                for bt in 0..b_n * t_n {
                    let src = &xs[bt * frame_in..(bt + 1) * frame_in];
                    let dsrc = &mut dx[bt * frame_in..(bt + 1) * frame_in];
                    let g = &ct[bt * frame_out..(bt + 1) * frame_out];
                    for ho in 0..h_out {
                        for wo in 0..w_out {
                            for c in 0..d_n {
                                let go = g[(ho * w_out + wo) * d_n + c];
                                db[c] += go;
                                for i in 0..k {
                                    let h = (ho * k + i).min(h_in - 1);
                                    for j in 0..k {
                                        let w = (wo * k + j).min(w_in - 1);
                                        let wi = (c * k + i) * k + j;
                                        let xi = (h * w_in + w) * d_n + c;
                                        dsrc[xi] += go * ws[wi];
                                        dw[wi] += go * src[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *weights, dw);
                acc(adj, *bias, db);
            }
            Node::Conv3d {
                x,
                weights,
                bias,
                kt,
                kh,
                kw,
            } => {
                let dims = self.vals[x.0].dims5().expect("recorded");
                let [b_n, t_n, h_n, w_n, d_n] = dims;
                let (rt, rh, rw) = (kt / 2, kh / 2, kw / 2);
                let volume = kt * kh * kw;
                let xs = self.vals[x.0].data();
                let ws = self.vals[weights.0].data();
                let mut dx = vec![0.0f64; xs.len()];
                let mut dw = vec![0.0f64; ws.len()];
                let mut db = vec![0.0f64; d_n];
                let item = t_n * h_n * w_n * d_n;
                for b in 0..b_n {
                    let src = &xs[b * item..(b + 1) * item];
                    let dsrc = &mut dx[b * item..(b + 1) * item];
                    let g = &ct[b * item..(b + 1) * item];
                    for t in 0..t_n {
                        for h in 0..h_n {
                            for w in 0..w_n {
                                for c in 0..d_n {
                                    let go = g[((t * h_n + h) * w_n + w) * d_n + c];
                                    db[c] += go;
                                    for dt in 0..*kt {
                                        let Some(ts) = (t + dt).checked_sub(rt) else {
                                            continue;
                                        };
                                        if ts >= t_n {
                                            continue;
                                        }
                                        for dh in 0..*kh {
                                            let Some(hs) = (h + dh).checked_sub(rh) else {
                                                continue;
                                            };
                                            if hs >= h_n {
                                                continue;
                                            }
                                            for dwi in 0..*kw {
                                                let Some(wsrc) = (w + dwi).checked_sub(rw) else {
                                                    continue;
                                                };
                                                if wsrc >= w_n {
                                                    continue;
                                                }
                                                let wi = c * volume + (dt * kh + dh) * kw + dwi;
                                                let xi = ((ts * h_n + hs) * w_n + wsrc) * d_n + c;
                                                dsrc[xi] += go * ws[wi];
                                                dw[wi] += go * src[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                acc(adj, *x, dx);
                acc(adj, *weights, dw);
                acc(adj, *bias, db);
            }
            Node::Bilinear { x, h_out, w_out } => {
                let dims = self.vals[x.0].dims5().expect("recorded");
                let [b_n, t_n, h_in, w_in, d_n] = dims;
                let mut dx = vec![0.0f64; self.vals[x.0].len()];
                let frame_in = h_in * w_in * d_n;
                let frame_out = h_out * w_out * d_n;
                let rows: Vec<(usize, usize, f64)> =
                    (0..*h_out).map(|d| sample_axis(d, h_in, *h_out)).collect();
                let cols: Vec<(usize, usize, f64)> =
                    (0..*w_out).map(|d| sample_axis(d, w_in, *w_out)).collect();
                for bt in 0..b_n * t_n {
                    let g = &ct[bt * frame_out..(bt + 1) * frame_out];
                    let dsrc = &mut dx[bt * frame_in..(bt + 1) * frame_in];
                    for (ho, &(h0, h1, fh)) in rows.iter().enumerate() {
                        for (wo, &(w0, w1, fw)) in cols.iter().enumerate() {
                            for c in 0..d_n {
                                let go = g[(ho * w_out + wo) * d_n + c];
                                dsrc[(h0 * w_in + w0) * d_n + c] += go * (1.0 - fh) * (1.0 - fw);
                                dsrc[(h0 * w_in + w1) * d_n + c] += go * (1.0 - fh) * fw;
                                dsrc[(h1 * w_in + w0) * d_n + c] += go * fh * (1.0 - fw);
                                dsrc[(h1 * w_in + w1) * d_n + c] += go * fh * fw;
                            }
                        }
                    }
                }
                acc(adj, *x, dx);
            }
        }
    }
}

/// Gradients of one reverse sweep, indexed by tape variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor64>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when the output does not depend
    /// on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor64> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// `a (m x n) * bᵀ` for `b (k x n)`: result `m x k`.
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut acc = 0.0;
            for c in 0..n {
                acc += a[i * n + c] * b[j * n + c];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

/// `aᵀ (k x m) * b` for `a (m x k)`, `b (m x n)`: result `k x n`.
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; k * n];
    for r in 0..m {
        for i in 0..k {
            let av = a[r * k + i];
            for j in 0..n {
                out[i * n + j] += av * b[r * n + j];
            }
        }
    }
    out
}

/// Records `build` over fresh inputs and returns the tape, the leaf handles
/// and the output handle. The output value is exactly what running the same
/// kernels without a tape yields.
pub fn record_forward<F>(inputs: Vec<Tensor64>, build: F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.into_iter().map(|t| tape.input(t)).collect();
    let out = build(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Maximum relative error between reverse-mode gradients and central finite
/// differences of a scalar-valued builder, over every coordinate of every
/// input. The step is `1e-5` relative to the coordinate magnitude with an
/// absolute floor of `1e-6`.
pub fn finite_diff_check<F>(build: F, inputs: &[Tensor64]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |points: &[Tensor64]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().cloned().map(|t| tape.input(t)).collect();
        let out = build(&mut tape, &vars)?;
        if !tape.value(out).is_scalar() {
            return Err(invalid!(
                "finite_diff_check needs a scalar-valued function, got dims {:?}",
                tape.value(out).dims()
            ));
        }
        Ok(tape.value(out).data()[0])
    };

    let (tape, vars, out) = record_forward(inputs.to_vec(), &build)?;
    if !tape.value(out).is_scalar() {
        return Err(invalid!(
            "finite_diff_check needs a scalar-valued function, got dims {:?}",
            tape.value(out).dims()
        ));
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let grad = grads.wrt(vars[i]);
        for j in 0..input.len() {
            let x = input.data()[j];
            let eps = (1e-5 * x.abs()).max(1e-6);
            probe[i].data[j] = x + eps;
            let f_plus = eval(&probe)?;
            probe[i].data[j] = x - eps;
            let f_minus = eval(&probe)?;
            probe[i].data[j] = x;
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let ad = grad.map(|g| g.data()[j]).unwrap_or(0.0);
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
