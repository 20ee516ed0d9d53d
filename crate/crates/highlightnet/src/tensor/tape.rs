use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Number of worker threads for row-partitioned convolution, from
/// `HLN_THREADS` (default 1). Results are bit-identical to the sequential
/// path because every output element is computed by the same expression.
pub fn op_threads() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        std::env::var("HLN_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
    label: Option<String>,
}

/// One recorded operation. Input ids plus whatever the backward pass and the
/// fp64 replay need to recompute the op.
enum Op {
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddScalar { a: usize, c: f32 },
    MulScalar { a: usize, c: f32 },
    Pow { base: usize, exponent: usize },
    Clamp { a: usize, lo: f32, hi: f32 },
    Relu { a: usize },
    Sigmoid { a: usize },
    Abs { a: usize },
    Conv2d { x: usize, k: usize, b: usize, stride: usize, padding: usize },
    Matmul { a: usize, b: usize },
    Transpose { a: usize },
    SoftmaxRows { a: usize },
    LayerNorm { x: usize, gain: usize, shift: usize },
    ConcatChannels { a: usize, b: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    AvgPoolCells { a: usize, cell_h: usize, cell_w: usize },
    Slice2d { a: usize, r0: usize, c0: usize, h: usize, w: usize },
    ExpandScalar { a: usize },
    AddRowVec { x: usize, b: usize },
}

struct Record {
    op: Op,
    out: usize,
}

/// Records a forward computation so gradients can be propagated in reverse.
///
/// Build leaves with [`Tape::leaf`], chain ops, then call [`Tape::backward`]
/// on a scalar result. Gradients accumulate (`+=`) wherever a value feeds
/// multiple consumers. The tape also supports a forward-only fp64 replay
/// ([`Tape::eval_f64`]) used by the finite-difference gradient checker.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            grad: None,
            label: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Var {
        let out = self.push_node(shape, data, requires_grad);
        self.records.push(Record { op, out: out.0 });
        out
    }

    /// Copies a tensor onto the tape as a leaf value.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push_node(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    pub fn leaf_values(&mut self, shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::invalid_argument(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push_node(shape.to_vec(), data, requires_grad))
    }

    /// Constant scalar leaf.
    pub fn scalar(&mut self, v: f32) -> Var {
        self.push_node(vec![1], vec![v], false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        self.nodes[v.0].data[0]
    }

    pub fn value_tensor(&self, v: Var) -> Tensor {
        Tensor::new(&self.nodes[v.0].shape, self.nodes[v.0].data.clone()).expect("node is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Attaches a diagnostic label used by [`Tape::first_non_finite`].
    pub fn set_label(&mut self, v: Var, label: impl Into<String>) {
        self.nodes[v.0].label = Some(label.into());
    }

    /// Label (or placeholder) of the first tensor, in execution order, that
    /// contains a NaN or infinity. `None` when everything is finite.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.data.iter().all(|v| v.is_finite()) {
                return Some(n.label.clone().unwrap_or_else(|| format!("node#{i}")));
            }
        }
        None
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of `v`, or zeros if `v` did not participate in the loss.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f32> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].data.len()],
        }
    }

    /// Copies the gradient of `v` into `t.grad` (zeros when absent).
    pub fn write_grad_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        t.set_grad(self.grad_or_zeros(v))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::invalid_argument(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    // ---- elementwise ops ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push_op(Op::Add { a: a.0, b: b.0 }, shape, data, rq))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push_op(Op::Sub { a: a.0, b: b.0 }, shape, data, rq))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push_op(Op::Mul { a: a.0, b: b.0 }, shape, data, rq))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x + c).collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::AddScalar { a: a.0, c }, shape, data, rq)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f32) -> Var {
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::MulScalar { a: a.0, c }, shape, data, rq)
    }

    /// Elementwise `base^exponent`. Callers clamp the base into `[1e-4, 1]`
    /// beforehand so the `ln(base)` in the exponent gradient stays finite.
    pub fn pow(&mut self, base: Var, exponent: Var) -> Result<Var> {
        self.same_shape(base, exponent, "pow")?;
        let data: Vec<f32> = self.nodes[base.0]
            .data
            .iter()
            .zip(&self.nodes[exponent.0].data)
            .map(|(b, e)| b.powf(*e))
            .collect();
        let rq = self.nodes[base.0].requires_grad || self.nodes[exponent.0].requires_grad;
        let shape = self.nodes[base.0].shape.clone();
        Ok(self.push_op(Op::Pow { base: base.0, exponent: exponent.0 }, shape, data, rq))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x.clamp(lo, hi)).collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::Clamp { a: a.0, lo, hi }, shape, data, rq)
    }

    /// ReLU; the backward subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::Relu { a: a.0 }, shape, data, rq)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.nodes[a.0]
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::Sigmoid { a: a.0 }, shape, data, rq)
    }

    /// |x|; the backward subgradient at exactly 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.nodes[a.0].data.iter().map(|x| x.abs()).collect();
        let rq = self.nodes[a.0].requires_grad;
        let shape = self.nodes[a.0].shape.clone();
        self.push_op(Op::Abs { a: a.0 }, shape, data, rq)
    }

    // ---- structured ops ------------------------------------------------------

    /// Cross-correlation of `x: [C_in, H, W]` with `k: [C_out, C_in, 3, 3]`
    /// plus per-channel bias. `stride` must be 1 or 2; output spatial dims are
    /// `(H + 2*padding - 3) / stride + 1`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ks = self.nodes[k.0].shape.clone();
        let bs = self.nodes[b.0].shape.clone();
        if xs.len() != 3 {
            return Err(Error::invalid_argument(format!("conv2d: input must be [C,H,W], got {xs:?}")));
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::invalid_argument(format!(
                "conv2d: kernel must be [C_out, C_in, 3, 3], got {ks:?}"
            )));
        }
        if ks[1] != xs[0] {
            return Err(Error::invalid_argument(format!(
                "conv2d: kernel expects {} input channels, input has {}",
                ks[1], xs[0]
            )));
        }
        if bs != [ks[0]] {
            return Err(Error::invalid_argument(format!(
                "conv2d: bias must be [{}], got {bs:?}",
                ks[0]
            )));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::invalid_argument(format!("conv2d: stride must be 1 or 2, got {stride}")));
        }
        let (h, w) = (xs[1], xs[2]);
        if h + 2 * padding < 3 || w + 2 * padding < 3 {
            return Err(Error::invalid_argument("conv2d: input smaller than kernel".to_string()));
        }
        let oh = (h + 2 * padding - 3) / stride + 1;
        let ow = (w + 2 * padding - 3) / stride + 1;
        let cout = ks[0];

        let data = conv2d_forward(
            &self.nodes[x.0].data,
            xs[0],
            h,
            w,
            &self.nodes[k.0].data,
            cout,
            &self.nodes[b.0].data,
            stride,
            padding,
            oh,
            ow,
        );
        let rq = self.nodes[x.0].requires_grad
            || self.nodes[k.0].requires_grad
            || self.nodes[b.0].requires_grad;
        Ok(self.push_op(
            Op::Conv2d { x: x.0, k: k.0, b: b.0, stride, padding },
            vec![cout, oh, ow],
            data,
            rq,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::invalid_argument(format!(
                "matmul: incompatible shapes {sa:?} x {sb:?}"
            )));
        }
        let (n, m, p) = (sa[0], sa[1], sb[1]);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut out = vec![0.0f32; n * p];
        for i in 0..n {
            let arow = &da[i * m..(i + 1) * m];
            let orow = &mut out[i * p..(i + 1) * p];
            let mut acc = vec![0.0f64; p];
            for (j, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &db[j * p..(j + 1) * p];
                let avd = av as f64;
                for (c, &bv) in brow.iter().enumerate() {
                    acc[c] += avd * bv as f64;
                }
            }
            for (o, v) in orow.iter_mut().zip(&acc) {
                *o = *v as f32;
            }
        }
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push_op(Op::Matmul { a: a.0, b: b.0 }, vec![n, p], out, rq))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::invalid_argument(format!("transpose: need 2-d, got {s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let d = &self.nodes[a.0].data;
        let mut out = vec![0.0f32; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = d[i * m + j];
            }
        }
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::Transpose { a: a.0 }, vec![m, n], out, rq))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::invalid_argument(format!("softmax_rows: need 2-d, got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let x = &self.nodes[a.0].data;
        let mut out = vec![0.0f32; n * d];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                out[i * d + j] = e;
                sum += e as f64;
            }
            for v in &mut out[i * d..(i + 1) * d] {
                *v = (*v as f64 / sum) as f32;
            }
        }
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::SoftmaxRows { a: a.0 }, vec![n, d], out, rq))
    }

    /// Per-row zero-mean unit-variance normalization (variance epsilon 1e-5)
    /// followed by an affine gain/shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 2 || s[1] < 2 {
            return Err(Error::invalid_argument(format!("layer_norm: need [n, d>=2], got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        if self.nodes[gain.0].shape != [d] || self.nodes[shift.0].shape != [d] {
            return Err(Error::invalid_argument("layer_norm: gain/shift must be [d]".to_string()));
        }
        let xd = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[shift.0].data;
        let mut out = vec![0.0f32; n * d];
        for i in 0..n {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..d {
                let xhat = (row[j] as f64 - mean) * inv;
                out[i * d + j] = (xhat as f32) * g[j] + b[j];
            }
        }
        let rq = self.nodes[x.0].requires_grad
            || self.nodes[gain.0].requires_grad
            || self.nodes[shift.0].requires_grad;
        Ok(self.push_op(Op::LayerNorm { x: x.0, gain: gain.0, shift: shift.0 }, vec![n, d], out, rq))
    }

    /// Concatenates `[C_a, H, W]` and `[C_b, H, W]` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::invalid_argument(format!(
                "concat_channels: incompatible shapes {sa:?} / {sb:?}"
            )));
        }
        let mut data = Vec::with_capacity(self.nodes[a.0].data.len() + self.nodes[b.0].data.len());
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        let rq = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push_op(
            Op::ConcatChannels { a: a.0, b: b.0 },
            vec![sa[0] + sb[0], sa[1], sa[2]],
            data,
            rq,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].data.len() {
            return Err(Error::invalid_argument(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.nodes[a.0].shape
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::Reshape { a: a.0 }, shape.to_vec(), data, rq))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].data.iter().map(|&v| v as f64).sum();
        let rq = self.nodes[a.0].requires_grad;
        self.push_op(Op::Sum { a: a.0 }, vec![1], vec![s as f32], rq)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len();
        let s: f64 = self.nodes[a.0].data.iter().map(|&v| v as f64).sum();
        let rq = self.nodes[a.0].requires_grad;
        self.push_op(Op::Mean { a: a.0 }, vec![1], vec![(s / n as f64) as f32], rq)
    }

    /// Average-pools a `[H, W]` grid over the rectangular partition induced by
    /// `cell_h x cell_w` cells; edge cells may be smaller when the dims do not
    /// divide evenly.
    pub fn avg_pool_cells(&mut self, a: Var, cell_h: usize, cell_w: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 || cell_h == 0 || cell_w == 0 {
            return Err(Error::invalid_argument(format!(
                "avg_pool_cells: need 2-d input and positive cell dims, got {s:?}"
            )));
        }
        let (h, w) = (s[0], s[1]);
        let gh = h.div_ceil(cell_h);
        let gw = w.div_ceil(cell_w);
        let x = &self.nodes[a.0].data;
        let mut out = vec![0.0f32; gh * gw];
        for gy in 0..gh {
            let r0 = gy * cell_h;
            let r1 = (r0 + cell_h).min(h);
            for gx in 0..gw {
                let c0 = gx * cell_w;
                let c1 = (c0 + cell_w).min(w);
                let mut acc = 0.0f64;
                for r in r0..r1 {
                    for c in c0..c1 {
                        acc += x[r * w + c] as f64;
                    }
                }
                out[gy * gw + gx] = (acc / ((r1 - r0) * (c1 - c0)) as f64) as f32;
            }
        }
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::AvgPoolCells { a: a.0, cell_h, cell_w }, vec![gh, gw], out, rq))
    }

    /// Crops the `[h, w]` window at `(r0, c0)` out of a 2-d value.
    pub fn slice2d(&mut self, a: Var, r0: usize, c0: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 || r0 + h > s[0] || c0 + w > s[1] || h == 0 || w == 0 {
            return Err(Error::invalid_argument(format!(
                "slice2d: window ({r0},{c0})+{h}x{w} out of bounds for {s:?}"
            )));
        }
        let src = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(h * w);
        for r in r0..r0 + h {
            out.extend_from_slice(&src[r * s[1] + c0..r * s[1] + c0 + w]);
        }
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::Slice2d { a: a.0, r0, c0, h, w }, vec![h, w], out, rq))
    }

    /// Broadcasts a scalar (`[1]`) value to an arbitrary shape.
    pub fn expand_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.nodes[a.0].data.len() != 1 {
            return Err(Error::invalid_argument("expand_scalar: input must have one element".to_string()));
        }
        let numel: usize = shape.iter().product();
        let v = self.nodes[a.0].data[0];
        let rq = self.nodes[a.0].requires_grad;
        Ok(self.push_op(Op::ExpandScalar { a: a.0 }, shape.to_vec(), vec![v; numel], rq))
    }

    /// Adds a `[d]` row vector to every row of `x: [n, d]`.
    pub fn add_row_vec(&mut self, x: Var, b: Var) -> Result<Var> {
        let sx = self.nodes[x.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::invalid_argument(format!(
                "add_row_vec: incompatible shapes {sx:?} + {sb:?}"
            )));
        }
        let (n, d) = (sx[0], sx[1]);
        let xd = &self.nodes[x.0].data;
        let bd = &self.nodes[b.0].data;
        let mut out = vec![0.0f32; n * d];
        for i in 0..n {
            for j in 0..d {
                out[i * d + j] = xd[i * d + j] + bd[j];
            }
        }
        let rq = self.nodes[x.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push_op(Op::AddRowVec { x: x.0, b: b.0 }, vec![n, d], out, rq))
    }

    // ---- backward ------------------------------------------------------------

    /// Back-propagates from a scalar loss, accumulating gradients for every
    /// node on a `requires_grad` path. Any earlier gradients are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid_argument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..self.records.len()).rev() {
            if !self.nodes[self.records[idx].out].requires_grad {
                continue;
            }
            let go = match self.nodes[self.records[idx].out].grad.take() {
                Some(g) => g,
                None => continue, // dead branch: no consumer contributed
            };
            self.backward_op(idx, &go);
            self.nodes[self.records[idx].out].grad = Some(go);
        }
        Ok(())
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn acc_grad(&mut self, id: usize, contrib: impl Iterator<Item = f32>) {
        let n = &mut self.nodes[id];
        let g = n.grad.get_or_insert_with(|| vec![0.0; n.data.len()]);
        for (dst, c) in g.iter_mut().zip(contrib) {
            *dst += c;
        }
    }

    fn acc_grad_f64(&mut self, id: usize, contrib: &[f64]) {
        let n = &mut self.nodes[id];
        let g = n.grad.get_or_insert_with(|| vec![0.0; n.data.len()]);
        for (dst, c) in g.iter_mut().zip(contrib) {
            *dst += *c as f32;
        }
    }

    fn backward_op(&mut self, idx: usize, go: &[f32]) {
        let out = self.records[idx].out;
        match self.records[idx].op {
            Op::Add { a, b } => {
                if self.wants(a) {
                    self.acc_grad(a, go.iter().copied());
                }
                if self.wants(b) {
                    self.acc_grad(b, go.iter().copied());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(a) {
                    self.acc_grad(a, go.iter().copied());
                }
                if self.wants(b) {
                    self.acc_grad(b, go.iter().map(|g| -g));
                }
            }
            Op::Mul { a, b } => {
                if self.wants(a) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(g, v)| g * v)
                        .collect();
                    self.acc_grad(a, contrib.into_iter());
                }
                if self.wants(b) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, v)| g * v)
                        .collect();
                    self.acc_grad(b, contrib.into_iter());
                }
            }
            Op::AddScalar { a, .. } => {
                if self.wants(a) {
                    self.acc_grad(a, go.iter().copied());
                }
            }
            Op::MulScalar { a, c } => {
                if self.wants(a) {
                    self.acc_grad(a, go.iter().map(|g| g * c));
                }
            }
            Op::Pow { base, exponent } => {
                if self.wants(base) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .enumerate()
                        .map(|(i, g)| {
                            let b = self.nodes[base].data[i];
                            let e = self.nodes[exponent].data[i];
                            g * e * b.powf(e - 1.0)
                        })
                        .collect();
                    self.acc_grad(base, contrib.into_iter());
                }
                if self.wants(exponent) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .enumerate()
                        .map(|(i, g)| {
                            let b = self.nodes[base].data[i];
                            let o = self.nodes[out].data[i];
                            g * o * b.ln()
                        })
                        .collect();
                    self.acc_grad(exponent, contrib.into_iter());
                }
            }
            Op::Clamp { a, lo, hi } => {
                if self.wants(a) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, &x)| if x >= lo && x <= hi { *g } else { 0.0 })
                        .collect();
                    self.acc_grad(a, contrib.into_iter());
                }
            }
            Op::Relu { a } => {
                if self.wants(a) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[out].data)
                        .map(|(g, &y)| if y > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.acc_grad(a, contrib.into_iter());
                }
            }
            Op::Sigmoid { a } => {
                if self.wants(a) {
                    // sigma'(x) = sigma(x) * sigma(-x), computed from the
                    // input: y*(1-y) on the f32 output rounds to exactly 0
                    // once y saturates, which would permanently kill the
                    // parameter-head logits under ADAM.
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, &x)| {
                            let sp = 1.0 / (1.0 + (-x).exp());
                            let sn = 1.0 / (1.0 + x.exp());
                            g * sp * sn
                        })
                        .collect();
                    self.acc_grad(a, contrib.into_iter());
                }
            }
            Op::Abs { a } => {
                if self.wants(a) {
                    let contrib: Vec<f32> = go
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -*g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.acc_grad(a, contrib.into_iter());
                }
            }
            Op::Conv2d { x, k, b, stride, padding } => {
                self.backward_conv2d(out, x, k, b, stride, padding, go);
            }
            Op::Matmul { a, b } => {
                let (n, m) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let p = self.nodes[b].shape[1];
                if self.wants(a) {
                    let bd = &self.nodes[b].data;
                    let mut da = vec![0.0f64; n * m];
                    for i in 0..n {
                        for c in 0..p {
                            let g = go[i * p + c] as f64;
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                da[i * m + j] += g * bd[j * p + c] as f64;
                            }
                        }
                    }
                    self.acc_grad_f64(a, &da);
                }
                if self.wants(b) {
                    let ad = &self.nodes[a].data;
                    let mut db = vec![0.0f64; m * p];
                    for i in 0..n {
                        for j in 0..m {
                            let av = ad[i * m + j] as f64;
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..p {
                                db[j * p + c] += av * go[i * p + c] as f64;
                            }
                        }
                    }
                    self.acc_grad_f64(b, &db);
                }
            }
            Op::Transpose { a } => {
                if self.wants(a) {
                    let (m, n) = (self.nodes[out].shape[0], self.nodes[out].shape[1]);
                    let mut da = vec![0.0f32; n * m];
                    for i in 0..m {
                        for j in 0..n {
                            da[j * m + i] = go[i * n + j];
                        }
                    }
                    self.acc_grad(a, da.into_iter());
                }
            }
            Op::SoftmaxRows { a } => {
                if self.wants(a) {
                    let (n, d) = (self.nodes[out].shape[0], self.nodes[out].shape[1]);
                    let y = &self.nodes[out].data;
                    let mut da = vec![0.0f32; n * d];
                    for i in 0..n {
                        let mut dot = 0.0f64;
                        for j in 0..d {
                            dot += go[i * d + j] as f64 * y[i * d + j] as f64;
                        }
                        for j in 0..d {
                            da[i * d + j] =
                                (y[i * d + j] as f64 * (go[i * d + j] as f64 - dot)) as f32;
                        }
                    }
                    self.acc_grad(a, da.into_iter());
                }
            }
            Op::LayerNorm { x, gain, shift } => {
                self.backward_layer_norm(x, gain, shift, go);
            }
            Op::ConcatChannels { a, b } => {
                let na = self.nodes[a].data.len();
                if self.wants(a) {
                    self.acc_grad(a, go[..na].iter().copied());
                }
                if self.wants(b) {
                    self.acc_grad(b, go[na..].iter().copied());
                }
            }
            Op::Reshape { a } => {
                if self.wants(a) {
                    self.acc_grad(a, go.iter().copied());
                }
            }
            Op::Sum { a } => {
                if self.wants(a) {
                    let g = go[0];
                    let n = self.nodes[a].data.len();
                    self.acc_grad(a, std::iter::repeat_n(g, n));
                }
            }
            Op::Mean { a } => {
                if self.wants(a) {
                    let n = self.nodes[a].data.len();
                    let g = go[0] / n as f32;
                    self.acc_grad(a, std::iter::repeat_n(g, n));
                }
            }
            Op::AvgPoolCells { a, cell_h, cell_w } => {
                if self.wants(a) {
                    let (h, w) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let gw = w.div_ceil(cell_w);
                    let mut da = vec![0.0f32; h * w];
                    for r in 0..h {
                        let gy = r / cell_h;
                        let r0 = gy * cell_h;
                        let rn = ((r0 + cell_h).min(h) - r0) as f32;
                        for c in 0..w {
                            let gx = c / cell_w;
                            let c0 = gx * cell_w;
                            let cn = ((c0 + cell_w).min(w) - c0) as f32;
                            da[r * w + c] = go[gy * gw + gx] / (rn * cn);
                        }
                    }
                    self.acc_grad(a, da.into_iter());
                }
            }
            Op::Slice2d { a, r0, c0, h, w } => {
                if self.wants(a) {
                    let aw = self.nodes[a].shape[1];
                    let n = self.nodes[a].data.len();
                    let mut da = vec![0.0f32; n];
                    for r in 0..h {
                        for c in 0..w {
                            da[(r0 + r) * aw + c0 + c] = go[r * w + c];
                        }
                    }
                    self.acc_grad(a, da.into_iter());
                }
            }
            Op::ExpandScalar { a } => {
                if self.wants(a) {
                    let s: f64 = go.iter().map(|&g| g as f64).sum();
                    self.acc_grad_f64(a, &[s]);
                }
            }
            Op::AddRowVec { x, b } => {
                if self.wants(x) {
                    self.acc_grad(x, go.iter().copied());
                }
                if self.wants(b) {
                    let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                    let mut db = vec![0.0f64; d];
                    for i in 0..n {
                        for j in 0..d {
                            db[j] += go[i * d + j] as f64;
                        }
                    }
                    self.acc_grad_f64(b, &db);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_conv2d(
        &mut self,
        out: usize,
        x: usize,
        k: usize,
        b: usize,
        stride: usize,
        padding: usize,
        go: &[f32],
    ) {
        let (cin, h, w) = {
            let s = &self.nodes[x].shape;
            (s[0], s[1], s[2])
        };
        let cout = self.nodes[k].shape[0];
        let (oh, ow) = {
            let s = &self.nodes[out].shape;
            (s[1], s[2])
        };
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);

        let want_x = self.wants(x);
        let want_k = self.wants(k);
        let want_b = self.wants(b);

        let xp = if want_k {
            Some(pad_input(&self.nodes[x].data, cin, h, w, padding))
        } else {
            None
        };

        let mut dxp = if want_x { vec![0.0f64; cin * ph * pw] } else { Vec::new() };
        let mut dk = if want_k { vec![0.0f64; cout * cin * 9] } else { Vec::new() };
        let mut db = if want_b { vec![0.0f64; cout] } else { Vec::new() };
        let kd = &self.nodes[k].data;

        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go[(co * oh + oy) * ow + ox] as f64;
                    if g == 0.0 {
                        continue;
                    }
                    if want_b {
                        db[co] += g;
                    }
                    let iy0 = oy * stride;
                    let ix0 = ox * stride;
                    for ci in 0..cin {
                        for ky in 0..3 {
                            let prow = (ci * ph + iy0 + ky) * pw + ix0;
                            let krow = ((co * cin + ci) * 3 + ky) * 3;
                            for kx in 0..3 {
                                if want_x {
                                    dxp[prow + kx] += g * kd[krow + kx] as f64;
                                }
                                if let Some(ref xp) = xp {
                                    dk[krow + kx] += g * xp[prow + kx] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }

        if want_x {
            let mut dx = vec![0.0f64; cin * h * w];
            for ci in 0..cin {
                for r in 0..h {
                    for c in 0..w {
                        dx[(ci * h + r) * w + c] = dxp[(ci * ph + r + padding) * pw + c + padding];
                    }
                }
            }
            self.acc_grad_f64(x, &dx);
        }
        if want_k {
            self.acc_grad_f64(k, &dk);
        }
        if want_b {
            self.acc_grad_f64(b, &db);
        }
    }

    fn backward_layer_norm(&mut self, x: usize, gain: usize, shift: usize, go: &[f32]) {
        let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
        let xd = &self.nodes[x].data;
        let g = &self.nodes[gain].data;

        let want_x = self.wants(x);
        let want_g = self.wants(gain);
        let want_s = self.wants(shift);

        let mut dx = if want_x { vec![0.0f64; n * d] } else { Vec::new() };
        let mut dg = if want_g { vec![0.0f64; d] } else { Vec::new() };
        let mut ds = if want_s { vec![0.0f64; d] } else { Vec::new() };

        for i in 0..n {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();

            let mut sum_dy = 0.0f64; // sum of gain-scaled output grads
            let mut sum_dy_xhat = 0.0f64;
            for j in 0..d {
                let xhat = (row[j] as f64 - mean) * inv;
                let dy = go[i * d + j] as f64 * g[j] as f64;
                sum_dy += dy;
                sum_dy_xhat += dy * xhat;
                if want_g {
                    dg[j] += go[i * d + j] as f64 * xhat;
                }
                if want_s {
                    ds[j] += go[i * d + j] as f64;
                }
            }
            if want_x {
                for j in 0..d {
                    let xhat = (row[j] as f64 - mean) * inv;
                    let dy = go[i * d + j] as f64 * g[j] as f64;
                    dx[i * d + j] = inv * (dy - sum_dy / d as f64 - xhat * sum_dy_xhat / d as f64);
                }
            }
        }
        if want_x {
            self.acc_grad_f64(x, &dx);
        }
        if want_g {
            self.acc_grad_f64(gain, &dg);
        }
        if want_s {
            self.acc_grad_f64(shift, &ds);
        }
    }

    // ---- fp64 replay -----------------------------------------------------------

    /// Recomputes the graph in fp64 and returns the (scalar) value of
    /// `target`. Leaf values are taken from the recorded fp32 data, except
    /// that `override_leaf = (var, index, value)` replaces one entry; this is
    /// the probe used by central finite differences.
    pub fn eval_f64(&self, target: Var, override_leaf: Option<(Var, usize, f64)>) -> Result<f64> {
        if self.nodes[target.0].data.len() != 1 {
            return Err(Error::invalid_argument("eval_f64: target must be scalar".to_string()));
        }
        let mut vals: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| n.data.iter().map(|&v| v as f64).collect())
            .collect();
        if let Some((v, i, value)) = override_leaf {
            vals[v.0][i] = value;
        }
        for rec in &self.records {
            let out = rec.out;
            let computed = self.replay_op(&rec.op, out, &vals);
            vals[out] = computed;
        }
        Ok(vals[target.0][0])
    }

    fn replay_op(&self, op: &Op, out: usize, vals: &[Vec<f64>]) -> Vec<f64> {
        match *op {
            Op::Add { a, b } => vals[a].iter().zip(&vals[b]).map(|(x, y)| x + y).collect(),
            Op::Sub { a, b } => vals[a].iter().zip(&vals[b]).map(|(x, y)| x - y).collect(),
            Op::Mul { a, b } => vals[a].iter().zip(&vals[b]).map(|(x, y)| x * y).collect(),
            Op::AddScalar { a, c } => vals[a].iter().map(|x| x + c as f64).collect(),
            Op::MulScalar { a, c } => vals[a].iter().map(|x| x * c as f64).collect(),
            Op::Pow { base, exponent } => vals[base]
                .iter()
                .zip(&vals[exponent])
                .map(|(b, e)| b.powf(*e))
                .collect(),
            Op::Clamp { a, lo, hi } => vals[a].iter().map(|x| x.clamp(lo as f64, hi as f64)).collect(),
            Op::Relu { a } => vals[a].iter().map(|x| x.max(0.0)).collect(),
            Op::Sigmoid { a } => vals[a].iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
            Op::Abs { a } => vals[a].iter().map(|x| x.abs()).collect(),
            Op::Conv2d { x, k, b, stride, padding } => {
                let (cin, h, w) = {
                    let s = &self.nodes[x].shape;
                    (s[0], s[1], s[2])
                };
                let cout = self.nodes[k].shape[0];
                let (oh, ow) = {
                    let s = &self.nodes[out].shape;
                    (s[1], s[2])
                };
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                let mut xp = vec![0.0f64; cin * ph * pw];
                for ci in 0..cin {
                    for r in 0..h {
                        for c in 0..w {
                            xp[(ci * ph + r + padding) * pw + c + padding] = vals[x][(ci * h + r) * w + c];
                        }
                    }
                }
                let kd = &vals[k];
                let bd = &vals[b];
                let mut o = vec![0.0f64; cout * oh * ow];
                for co in 0..cout {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bd[co];
                            for ci in 0..cin {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        acc += kd[((co * cin + ci) * 3 + ky) * 3 + kx]
                                            * xp[(ci * ph + oy * stride + ky) * pw + ox * stride + kx];
                                    }
                                }
                            }
                            o[(co * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                o
            }
            Op::Matmul { a, b } => {
                let (n, m) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let p = self.nodes[b].shape[1];
                let mut o = vec![0.0f64; n * p];
                for i in 0..n {
                    for j in 0..m {
                        let av = vals[a][i * m + j];
                        if av == 0.0 {
                            continue;
                        }
                        for c in 0..p {
                            o[i * p + c] += av * vals[b][j * p + c];
                        }
                    }
                }
                o
            }
            Op::Transpose { a } => {
                let (n, m) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let mut o = vec![0.0f64; n * m];
                for i in 0..n {
                    for j in 0..m {
                        o[j * n + i] = vals[a][i * m + j];
                    }
                }
                o
            }
            Op::SoftmaxRows { a } => {
                let (n, d) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let mut o = vec![0.0f64; n * d];
                for i in 0..n {
                    let row = &vals[a][i * d..(i + 1) * d];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..d {
                        let e = (row[j] - m).exp();
                        o[i * d + j] = e;
                        sum += e;
                    }
                    for v in &mut o[i * d..(i + 1) * d] {
                        *v /= sum;
                    }
                }
                o
            }
            Op::LayerNorm { x, gain, shift } => {
                let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                let mut o = vec![0.0f64; n * d];
                for i in 0..n {
                    let row = &vals[x][i * d..(i + 1) * d];
                    let mean = row.iter().sum::<f64>() / d as f64;
                    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    for j in 0..d {
                        o[i * d + j] = (row[j] - mean) * inv * vals[gain][j] + vals[shift][j];
                    }
                }
                o
            }
            Op::ConcatChannels { a, b } => {
                let mut o = vals[a].clone();
                o.extend_from_slice(&vals[b]);
                o
            }
            Op::Reshape { a } => vals[a].clone(),
            Op::Sum { a } => vec![vals[a].iter().sum()],
            Op::Mean { a } => vec![vals[a].iter().sum::<f64>() / vals[a].len() as f64],
            Op::AvgPoolCells { a, cell_h, cell_w } => {
                let (h, w) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                let gh = h.div_ceil(cell_h);
                let gw = w.div_ceil(cell_w);
                let mut o = vec![0.0f64; gh * gw];
                for gy in 0..gh {
                    let r0 = gy * cell_h;
                    let r1 = (r0 + cell_h).min(h);
                    for gx in 0..gw {
                        let c0 = gx * cell_w;
                        let c1 = (c0 + cell_w).min(w);
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                acc += vals[a][r * w + c];
                            }
                        }
                        o[gy * gw + gx] = acc / ((r1 - r0) * (c1 - c0)) as f64;
                    }
                }
                o
            }
            Op::Slice2d { a, r0, c0, h, w } => {
                let aw = self.nodes[a].shape[1];
                let mut o = Vec::with_capacity(h * w);
                for r in r0..r0 + h {
                    o.extend_from_slice(&vals[a][r * aw + c0..r * aw + c0 + w]);
                }
                o
            }
            Op::ExpandScalar { a } => {
                let n = self.nodes[out].data.len();
                vec![vals[a][0]; n]
            }
            Op::AddRowVec { x, b } => {
                let (n, d) = (self.nodes[x].shape[0], self.nodes[x].shape[1]);
                let mut o = vec![0.0f64; n * d];
                for i in 0..n {
                    for j in 0..d {
                        o[i * d + j] = vals[x][i * d + j] + vals[b][j];
                    }
                }
                o
            }
        }
    }
}

const LN_EPS: f64 = 1e-5;

fn pad_input(x: &[f32], cin: usize, h: usize, w: usize, padding: usize) -> Vec<f32> {
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if padding == 0 {
        return x.to_vec();
    }
    let mut xp = vec![0.0f32; cin * ph * pw];
    for ci in 0..cin {
        for r in 0..h {
            let src = &x[(ci * h + r) * w..(ci * h + r + 1) * w];
            let dst = (ci * ph + r + padding) * pw + padding;
            xp[dst..dst + w].copy_from_slice(src);
        }
    }
    xp
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f32],
    cin: usize,
    h: usize,
    w: usize,
    k: &[f32],
    cout: usize,
    bias: &[f32],
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let xp = pad_input(x, cin, h, w, padding);
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut out = vec![0.0f32; cout * oh * ow];

    let row_job = |row: usize, dst: &mut [f32], acc: &mut Vec<f64>| {
        let co = row / oh;
        let oy = row % oh;
        acc.clear();
        acc.resize(ow, bias[co] as f64);
        for ci in 0..cin {
            for ky in 0..3 {
                let prow = (ci * ph + oy * stride + ky) * pw;
                let krow = ((co * cin + ci) * 3 + ky) * 3;
                for kx in 0..3 {
                    let kv = k[krow + kx] as f64;
                    if kv == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        let src = &xp[prow + kx..prow + kx + ow];
                        for (a, &s) in acc.iter_mut().zip(src) {
                            *a += kv * s as f64;
                        }
                    } else {
                        for (ox, a) in acc.iter_mut().enumerate() {
                            *a += kv * xp[prow + ox * stride + kx] as f64;
                        }
                    }
                }
            }
        }
        for (d, a) in dst.iter_mut().zip(acc.iter()) {
            *d = *a as f32;
        }
    };

    let threads = op_threads();
    let total_rows = cout * oh;
    if threads > 1 && total_rows >= 2 * threads {
        let mut rows: Vec<(usize, &mut [f32])> = out.chunks_mut(ow).enumerate().collect();
        let chunk = total_rows.div_ceil(threads);
        std::thread::scope(|s| {
            for part in rows.chunks_mut(chunk) {
                s.spawn(|| {
                    let mut acc = Vec::with_capacity(ow);
                    for (row, dst) in part.iter_mut() {
                        row_job(*row, dst, &mut acc);
                    }
                });
            }
        });
    } else {
        let mut acc = Vec::with_capacity(ow);
        for (row, dst) in out.chunks_mut(ow).enumerate() {
            row_job(row, dst, &mut acc);
        }
    }
    out
}
