//! A small reverse-mode tape over 2-D `f64` arrays.
//!
//! Every tensor is `rows x cols` with time along rows. Ops record what they
//! need for the backward pass; [`Graph::backward`] walks the tape in reverse.

use std::rc::Rc;

use ndarray::{s, Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `x + b` with `b` a `1 x D` row broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    MaskRows(Var, Rc<[bool]>),
    Relu(Var),
    Gelu(Var),
    Softplus(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    Im2Col {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        x: Var,
        /// Source row of each output element, row-major over the output.
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    LocalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        window: usize,
        mask: Rc<[bool]>,
        /// `probs[(t * heads + h) * window + w]` for key `t - half + w`.
        probs: Vec<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of output rows of a 1-D window op.
pub fn out_len(t: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (t + 2 * pad - kernel) / stride + 1
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.nrows(), 1, "bias must be a single row");
        let out = self.value(x) + &bv.row(0);
        self.push(out, Op::AddRow(x, b))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Zero every row whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &Rc<[bool]>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.nrows(), mask.len());
        for (mut row, &m) in out.outer_iter_mut().zip(mask.iter()) {
            if !m {
                row.fill(0.0);
            }
        }
        self.push(out, Op::MaskRows(x, mask.clone()))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(softplus);
        self.push(out, Op::Softplus(x))
    }

    /// Row-wise layer normalization with `1 x D` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mean = xv.sum_axis(Axis(1)) / d;
        let mut xhat = xv - &mean.view().insert_axis(Axis(1));
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
        xhat *= &inv_std.view().insert_axis(Axis(1));
        let out = &xhat * &self.value(gain).row(0) + &self.value(bias).row(0);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Unfold `kernel`-wide windows into rows: `T_out x (kernel * D)`, zero
    /// padded by `pad` on both ends.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t, d) = xv.dim();
        let t_out = out_len(t, kernel, stride, pad);
        let mut out = Array2::zeros((t_out, kernel * d));
        for i in 0..t_out {
            for k in 0..kernel {
                let src = (i * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    out.slice_mut(s![i, k * d..(k + 1) * d]).assign(&xv.row(src as usize));
                }
            }
        }
        self.push(
            out,
            Op::Im2Col {
                x,
                kernel,
                stride,
                pad,
            },
        )
    }

    /// 1-D convolution: `w` is `(kernel * D_in) x D_out`, `b` is `1 x D_out`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let cols = self.im2col(x, kernel, stride, pad);
        self.linear(cols, w, b)
    }

    /// Per-channel convolution: `w` is `kernel x D`, `b` is `1 x D`.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (t, d) = xv.dim();
        let kernel = wv.nrows();
        let t_out = out_len(t, kernel, stride, pad);
        let mut out = Array2::zeros((t_out, d));
        for i in 0..t_out {
            let mut row = out.row_mut(i);
            row.assign(&self.value(b).row(0));
            for k in 0..kernel {
                let src = (i * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    Zip::from(&mut row)
                        .and(&xv.row(src as usize))
                        .and(&wv.row(k))
                        .for_each(|o, &a, &b| *o += a * b);
                }
            }
        }
        self.push(
            out,
            Op::DepthwiseConv {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// Max over `kernel`-wide windows, per channel. Out-of-range taps are
    /// skipped rather than padded.
    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let (t, d) = xv.dim();
        let t_out = out_len(t, kernel, stride, pad);
        let mut out = Array2::zeros((t_out, d));
        let mut argmax = vec![0usize; t_out * d];
        for i in 0..t_out {
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut best_src = 0;
                for k in 0..kernel {
                    let src = (i * stride + k) as isize - pad as isize;
                    if src >= 0 && (src as usize) < t {
                        let v = xv[[src as usize, c]];
                        if v > best {
                            best = v;
                            best_src = src as usize;
                        }
                    }
                }
                out[[i, c]] = best;
                argmax[i * d + c] = best_src;
            }
        }
        self.push(out, Op::MaxPool { x, argmax })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Multi-head self-attention where query `t` sees keys
    /// `t - window/2 ..= t + window/2` that are inside the sequence and
    /// unmasked. Masked queries produce zero rows.
    pub fn local_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        window: usize,
        mask: &Rc<[bool]>,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = qv.dim();
        assert!(d % heads == 0, "dim {d} not divisible by {heads} heads");
        assert_eq!(mask.len(), t);
        let dh = d / heads;
        let half = (window / 2) as isize;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; t * heads * window];
        let mut out = Array2::zeros((t, d));
        let mut scores = vec![0.0; window];
        for ti in 0..t {
            if !mask[ti] {
                continue;
            }
            let qrow = qv.row(ti);
            for h in 0..heads {
                let hs = h * dh..(h + 1) * dh;
                let qh = qrow.slice(s![hs.clone()]);
                let mut max = f64::NEG_INFINITY;
                for w in 0..window {
                    let j = ti as isize - half + w as isize;
                    scores[w] = f64::NEG_INFINITY;
                    if j < 0 || j as usize >= t || !mask[j as usize] {
                        continue;
                    }
                    let sc = qh.dot(&kv.slice(s![j as usize, hs.clone()])) * scale;
                    scores[w] = sc;
                    max = max.max(sc);
                }
                let base = (ti * heads + h) * window;
                let mut sum = 0.0;
                for w in 0..window {
                    let e = if scores[w] == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (scores[w] - max).exp()
                    };
                    probs[base + w] = e;
                    sum += e;
                }
                let mut orow = out.slice_mut(s![ti, hs.clone()]);
                for w in 0..window {
                    let p = probs[base + w] / sum;
                    probs[base + w] = p;
                    if p != 0.0 {
                        let j = (ti as isize - half + w as isize) as usize;
                        orow.scaled_add(p, &vv.slice(s![j, hs.clone()]));
                    }
                }
            }
        }
        self.push(
            out,
            Op::LocalAttention {
                q,
                k,
                v,
                heads,
                window,
                mask: mask.clone(),
                probs,
            },
        )
    }

    /// Backpropagate from the given output gradients; returns one optional
    /// gradient per node.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MaskRows(x, mask) => {
                    let mut gx = g.clone();
                    for (mut row, &m) in gx.outer_iter_mut().zip(mask.iter()) {
                        if !m {
                            row.fill(0.0);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &xv| {
                            if xv <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &xv| *gv *= gelu_grad(xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softplus(x) => {
                    let mut gx = g.clone();
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &xv| *gv *= sigmoid(xv));
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gainv = self.value(*gain).row(0).to_owned();
                    accumulate(
                        &mut grads,
                        *bias,
                        g.sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    accumulate(
                        &mut grads,
                        *gain,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gxhat = &g * &gainv;
                    let d = xhat.ncols() as f64;
                    let mean_g = gxhat.sum_axis(Axis(1)) / d;
                    let mean_gx = (&gxhat * xhat).sum_axis(Axis(1)) / d;
                    let mut gx = gxhat;
                    gx -= &mean_g.insert_axis(Axis(1));
                    gx -= &(xhat * &mean_gx.insert_axis(Axis(1)));
                    gx *= &inv_std.view().insert_axis(Axis(1));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Im2Col {
                    x,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (t, d) = self.value(*x).dim();
                    let mut gx = Array2::zeros((t, d));
                    for i in 0..g.nrows() {
                        for k in 0..*kernel {
                            let src = (i * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let mut row = gx.row_mut(src as usize);
                                row += &g.slice(s![i, k * d..(k + 1) * d]);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::DepthwiseConv {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (t, d) = xv.dim();
                    let kernel = wv.nrows();
                    let mut gx = Array2::zeros((t, d));
                    let mut gw = Array2::zeros((kernel, d));
                    for i in 0..g.nrows() {
                        let gi = g.row(i);
                        for k in 0..kernel {
                            let src = (i * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < t {
                                let src = src as usize;
                                Zip::from(gx.row_mut(src))
                                    .and(&gi)
                                    .and(&wv.row(k))
                                    .for_each(|o, &gg, &ww| *o += gg * ww);
                                Zip::from(gw.row_mut(k))
                                    .and(&gi)
                                    .and(&xv.row(src))
                                    .for_each(|o, &gg, &xx| *o += gg * xx);
                            }
                        }
                    }
                    accumulate(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool { x, argmax } => {
                    let (t, d) = self.value(*x).dim();
                    let mut gx = Array2::zeros((t, d));
                    for i in 0..g.nrows() {
                        for c in 0..d {
                            gx[[argmax[i * d + c], c]] += g[[i, c]];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::LocalAttention {
                    q,
                    k,
                    v,
                    heads,
                    window,
                    mask,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (t, d) = qv.dim();
                    let dh = d / heads;
                    let half = (window / 2) as isize;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Array2::zeros((t, d));
                    let mut gk = Array2::zeros((t, d));
                    let mut gv = Array2::zeros((t, d));
                    let mut dp = vec![0.0; *window];
                    for ti in 0..t {
                        if !mask[ti] {
                            continue;
                        }
                        for h in 0..*heads {
                            let hs = h * dh..(h + 1) * dh;
                            let go = g.slice(s![ti, hs.clone()]);
                            let base = (ti * heads + h) * window;
                            let mut dot = 0.0;
                            for w in 0..*window {
                                let p = probs[base + w];
                                dp[w] = 0.0;
                                if p == 0.0 {
                                    continue;
                                }
                                let j = (ti as isize - half + w as isize) as usize;
                                gv.slice_mut(s![j, hs.clone()]).scaled_add(p, &go);
                                dp[w] = go.dot(&vv.slice(s![j, hs.clone()]));
                                dot += p * dp[w];
                            }
                            for w in 0..*window {
                                let p = probs[base + w];
                                if p == 0.0 {
                                    continue;
                                }
                                let j = (ti as isize - half + w as isize) as usize;
                                let ds = p * (dp[w] - dot) * scale;
                                gq.slice_mut(s![ti, hs.clone()])
                                    .scaled_add(ds, &kv.slice(s![j, hs.clone()]));
                                gk.slice_mut(s![j, hs.clone()])
                                    .scaled_add(ds, &qv.slice(s![ti, hs.clone()]));
                            }
                        }
                    }
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                    accumulate(&mut grads, *v, gv);
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf, if anything downstream depended on it.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks d(sum(out * probe))/d(input) against central differences.
    fn check_op(
        inputs: Vec<Array2<f64>>,
        build: impl Fn(&mut Graph, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = build(&mut g, &vars);
        let probe = rand_mat(&mut rng, g.value(out).nrows(), g.value(out).ncols());
        let grads = g.backward(&[(out, probe.clone())]);
        let eval = |xs: &[Array2<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
            let o = build(&mut g, &vars);
            (g.value(o) * &probe).sum()
        };
        let h = 1e-6;
        for (n, x) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[n])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.dim()));
            for idx in 0..x.len() {
                let (r, c) = (idx / x.ncols(), idx % x.ncols());
                let mut plus = inputs.clone();
                plus[n][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[n][[r, c]] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!(
                    (fd - a).abs() <= tol * (1.0 + fd.abs().max(a.abs())),
                    "input {n} [{r},{c}]: fd {fd} vs analytic {a}"
                );
            }
        }
    }

    #[test]
    fn matmul_linear_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check_op(
            vec![rand_mat(&mut rng, 4, 3), rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 1, 2)],
            |g, v| g.linear(v[0], v[1], v[2]),
            1e-7,
        );
    }

    #[test]
    fn nonlinearity_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check_op(vec![rand_mat(&mut rng, 5, 3)], |g, v| g.gelu(v[0]), 1e-7);
        check_op(vec![rand_mat(&mut rng, 5, 3)], |g, v| g.softplus(v[0]), 1e-7);
        check_op(vec![rand_mat(&mut rng, 5, 3)], |g, v| g.relu(v[0]), 1e-7);
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check_op(
            vec![rand_mat(&mut rng, 4, 6), rand_mat(&mut rng, 1, 6), rand_mat(&mut rng, 1, 6)],
            |g, v| g.layer_norm(v[0], v[1], v[2]),
            1e-6,
        );
    }

    #[test]
    fn conv_and_pool_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check_op(
            vec![rand_mat(&mut rng, 7, 3), rand_mat(&mut rng, 9, 2), rand_mat(&mut rng, 1, 2)],
            |g, v| g.conv1d(v[0], v[1], v[2], 3, 1, 1),
            1e-7,
        );
        check_op(
            vec![rand_mat(&mut rng, 8, 3), rand_mat(&mut rng, 3, 3), rand_mat(&mut rng, 1, 3)],
            |g, v| g.depthwise_conv(v[0], v[1], v[2], 2, 1),
            1e-7,
        );
        check_op(vec![rand_mat(&mut rng, 8, 3)], |g, v| g.max_pool(v[0], 3, 2, 1), 1e-7);
    }

    #[test]
    fn attention_and_mask_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mask: Rc<[bool]> = vec![true, true, true, true, true, false, false].into();
        check_op(
            vec![rand_mat(&mut rng, 7, 4), rand_mat(&mut rng, 7, 4), rand_mat(&mut rng, 7, 4)],
            move |g, v| {
                let a = g.local_attention(v[0], v[1], v[2], 2, 3, &mask);
                g.mask_rows(a, &mask)
            },
            1e-6,
        );
        check_op(
            vec![rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 3, 3)],
            |g, v| {
                let c = g.concat_cols(&[v[0], v[1]]);
                g.add(c, c)
            },
            1e-7,
        );
    }

    #[test]
    fn im2col_layout() {
        let mut g = Graph::new();
        let x = g.leaf(array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]]);
        let c = g.im2col(x, 3, 1, 1);
        assert_eq!(
            g.value(c),
            &array![
                [0.0, 0.0, 1.0, 10.0, 2.0, 20.0],
                [1.0, 10.0, 2.0, 20.0, 3.0, 30.0],
                [2.0, 20.0, 3.0, 30.0, 0.0, 0.0]
            ]
        );
    }
}
