//! Tape-based reverse-mode differentiation over the small operation set the
//! denoiser needs: 3×3 same-padded convolution, 2× average-pool and nearest
//! upsampling, single-group normalization with per-channel affine, SiLU,
//! addition, per-sample channel bias, dense layers and a mean-squared loss.
//!
//! Activations use NCHW layout. Every operation treats batch members
//! independently, so a sample's output never depends on its batch mates.

use super::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv3x3 {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample2 {
        x: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Silu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    ChannelBias {
        x: Var,
        bias: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    match *t.shape() {
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("expected a rank-4 tensor, got shape {s:?}"),
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    match *t.shape() {
        [n, c] => (n, c),
        ref s => panic!("expected a rank-2 tensor, got shape {s:?}"),
    }
}

/// `c = alpha·a·b + beta·c` with explicit strides; `a` is m×k and `b` is k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `c×h×w` image into a `(c·9)×(h·w)` patch matrix, zero padded.
fn im2col(src: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => out.copy_from_slice(srow),
                        _ => {
                            out[..w - 1].copy_from_slice(&srow[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back into `dst` (accumulating).
fn col2im(col: &[f64], c: usize, h: usize, w: usize, dst: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => drow[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => drow.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => drow[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v` (zeros when
    /// `v` does not influence it).
    pub fn grad(&self, v: Var) -> Vec<f64> {
        self.nodes[v.0]
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
    }

    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, ci, h, wd) = dims4(self.value(x));
        let wt = self.value(w);
        let co = wt.shape()[0];
        assert_eq!(wt.shape(), &[co, ci, 3, 3], "conv weight shape");
        assert_eq!(self.value(b).shape(), &[co], "conv bias shape");
        let hw = h * wd;
        let mut out = vec![0.0; n * co * hw];
        let mut col = vec![0.0; ci * 9 * hw];
        let xs = self.value(x).values();
        let ws = wt.values();
        let bs = self.value(b).values();
        for s in 0..n {
            im2col(&xs[s * ci * hw..(s + 1) * ci * hw], ci, h, wd, &mut col);
            let o = &mut out[s * co * hw..(s + 1) * co * hw];
            for (c, chunk) in o.chunks_mut(hw).enumerate() {
                chunk.fill(bs[c]);
            }
            gemm(
                co,
                ci * 9,
                hw,
                ws,
                ((ci * 9) as isize, 1),
                &col,
                (hw as isize, 1),
                o,
                1.0,
            );
        }
        self.push(
            Tensor::new(vec![n, co, h, wd], out),
            Op::Conv3x3 { x, w, b },
        )
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).values();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, oh, ow], out), Op::AvgPool2 { x })
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        let (oh, ow) = (h * 2, w * 2);
        let xs = self.value(x).values();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::new(vec![n, c, oh, ow], out), Op::Upsample2 { x })
    }

    /// Normalizes each sample over all its channels and pixels, then applies
    /// a per-channel scale `gamma` and shift `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert_eq!(self.value(gamma).shape(), &[c]);
        assert_eq!(self.value(beta).shape(), &[c]);
        let per = c * h * w;
        let hw = h * w;
        let xs = self.value(x).values();
        let g = self.value(gamma).values();
        let bt = self.value(beta).values();
        let mut xhat = vec![0.0; n * per];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * per];
        for s in 0..n {
            let src = &xs[s * per..(s + 1) * per];
            let mean = src.iter().sum::<f64>() / per as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[s] = is;
            for ch in 0..c {
                for i in ch * hw..(ch + 1) * hw {
                    let xh = (src[i] - mean) * is;
                    xhat[s * per + i] = xh;
                    out[s * per + i] = g[ch] * xh + bt[ch];
                }
            }
        }
        self.push(
            Tensor::new(vec![n, c, h, w], out),
            Op::GroupNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.values().iter().map(|&v| v * sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::Silu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let out = ta
            .values()
            .iter()
            .zip(tb.values())
            .map(|(p, q)| p + q)
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::Add { a, b })
    }

    /// Adds `bias[n, c]` to every pixel of channel `c` of sample `n`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Var {
        let (n, c, h, w) = dims4(self.value(x));
        assert_eq!(self.value(bias).shape(), &[n, c], "channel bias shape");
        let hw = h * w;
        let bs = self.value(bias).values();
        let mut out = self.value(x).values().to_vec();
        for (p, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|v| *v += bs[p]);
        }
        self.push(
            Tensor::new(vec![n, c, h, w], out),
            Op::ChannelBias { x, bias },
        )
    }

    /// `y = x·wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, fin) = dims2(self.value(x));
        let (fout, fin_w) = dims2(self.value(w));
        assert_eq!(fin, fin_w, "linear input width");
        assert_eq!(self.value(b).shape(), &[fout]);
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).values());
        }
        gemm(
            n,
            fin,
            fout,
            self.value(x).values(),
            (fin as isize, 1),
            self.value(w).values(),
            (1, fin as isize),
            &mut out,
            1.0,
        );
        self.push(Tensor::new(vec![n, fout], out), Op::Linear { x, w, b })
    }

    /// Mean over every element of `(pred − target)²`, as a 1-element tensor.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let p = self.value(pred).values();
        assert_eq!(p.len(), target.len(), "mse length mismatch");
        let loss = p
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        self.push(Tensor::new(vec![1], vec![loss]), Op::Mse { pred, target })
    }

    /// Back-propagates from a scalar root, accumulating into every ancestor.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.len(),
            1,
            "backward root must be scalar"
        );
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            // temporarily detach the op so parents can be borrowed mutably
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backprop_node(&op, &gout);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(gout);
        }
    }

    fn backprop_node(&mut self, op: &Op, gout: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Conv3x3 { x, w, b } => {
                let (n, ci, h, wd) = dims4(&self.nodes[x.0].value);
                let co = self.nodes[w.0].value.shape()[0];
                let hw = h * wd;
                let k = ci * 9;
                let mut col = vec![0.0; k * hw];
                let mut dcol = vec![0.0; k * hw];
                let mut dw = vec![0.0; co * k];
                let mut db = vec![0.0; co];
                let mut dx = vec![0.0; n * ci * hw];
                for s in 0..n {
                    let g = &gout[s * co * hw..(s + 1) * co * hw];
                    for (c, chunk) in g.chunks(hw).enumerate() {
                        db[c] += chunk.iter().sum::<f64>();
                    }
                    let xs = &self.nodes[x.0].value.values()[s * ci * hw..(s + 1) * ci * hw];
                    im2col(xs, ci, h, wd, &mut col);
                    // dW += dOut · colᵀ
                    gemm(
                        co,
                        hw,
                        k,
                        g,
                        (hw as isize, 1),
                        &col,
                        (1, hw as isize),
                        &mut dw,
                        1.0,
                    );
                    // dcol = Wᵀ · dOut
                    let ws = self.nodes[w.0].value.values();
                    gemm(
                        k,
                        co,
                        hw,
                        ws,
                        (1, k as isize),
                        g,
                        (hw as isize, 1),
                        &mut dcol,
                        0.0,
                    );
                    col2im(&dcol, ci, h, wd, &mut dx[s * ci * hw..(s + 1) * ci * hw]);
                }
                self.add_grad(*x, &dx);
                self.add_grad(*w, &dw);
                self.add_grad(*b, &db);
            }
            Op::AvgPool2 { x } => {
                let (n, c, h, w) = dims4(&self.nodes[x.0].value);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let g = &gout[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            d[y * w + xx] = 0.25 * g[(y / 2) * ow + xx / 2];
                        }
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::Upsample2 { x } => {
                let (n, c, h, w) = dims4(&self.nodes[x.0].value);
                let (oh, ow) = (h * 2, w * 2);
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let g = &gout[p * oh * ow..(p + 1) * oh * ow];
                    let d = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for xx in 0..ow {
                            d[(y / 2) * w + xx / 2] += g[y * ow + xx];
                        }
                    }
                }
                self.add_grad(*x, &dx);
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c, h, w) = dims4(&self.nodes[x.0].value);
                let hw = h * w;
                let per = c * hw;
                let g = self.nodes[gamma.0].value.values().to_vec();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; n * per];
                let mut dxhat = vec![0.0; per];
                for s in 0..n {
                    let go = &gout[s * per..(s + 1) * per];
                    let xh = &xhat[s * per..(s + 1) * per];
                    for ch in 0..c {
                        for j in ch * hw..(ch + 1) * hw {
                            dgamma[ch] += go[j] * xh[j];
                            dbeta[ch] += go[j];
                            dxhat[j] = go[j] * g[ch];
                        }
                    }
                    let sum_d = dxhat.iter().sum::<f64>();
                    let sum_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                    let m = per as f64;
                    let k = inv_std[s] / m;
                    for j in 0..per {
                        dx[s * per + j] = k * (m * dxhat[j] - sum_d - xh[j] * sum_dx);
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gamma, &dgamma);
                self.add_grad(*beta, &dbeta);
            }
            Op::Silu { x } => {
                let dx: Vec<f64> = self.nodes[x.0]
                    .value
                    .values()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                self.add_grad(*x, &dx);
            }
            Op::Add { a, b } => {
                self.add_grad(*a, gout);
                self.add_grad(*b, gout);
            }
            Op::ChannelBias { x, bias } => {
                let (n, c, h, w) = dims4(&self.nodes[x.0].value);
                let hw = h * w;
                let db: Vec<f64> = gout.chunks(hw).map(|ch| ch.iter().sum()).collect();
                debug_assert_eq!(db.len(), n * c);
                self.add_grad(*x, gout);
                self.add_grad(*bias, &db);
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = dims2(&self.nodes[x.0].value);
                let fout = self.nodes[w.0].value.shape()[0];
                let mut dx = vec![0.0; n * fin];
                let mut dw = vec![0.0; fout * fin];
                let mut db = vec![0.0; fout];
                for row in gout.chunks(fout) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                // dx = gout · w
                gemm(
                    n,
                    fout,
                    fin,
                    gout,
                    (fout as isize, 1),
                    self.nodes[w.0].value.values(),
                    (fin as isize, 1),
                    &mut dx,
                    0.0,
                );
                // dw = goutᵀ · x
                gemm(
                    fout,
                    n,
                    fin,
                    gout,
                    (1, fout as isize),
                    self.nodes[x.0].value.values(),
                    (fin as isize, 1),
                    &mut dw,
                    0.0,
                );
                self.add_grad(*x, &dx);
                self.add_grad(*w, &dw);
                self.add_grad(*b, &db);
            }
            Op::Mse { pred, target } => {
                let scale = 2.0 * gout[0] / target.len() as f64;
                let dp: Vec<f64> = self.nodes[pred.0]
                    .value
                    .values()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| scale * (p - t))
                    .collect();
                self.add_grad(*pred, &dp);
            }
        }
    }

    fn add_grad(&mut self, v: Var, g: &[f64]) {
        let len = self.nodes[v.0].value.len();
        debug_assert_eq!(len, g.len());
        let slot = accumulate(&mut self.nodes[v.0].grad, len);
        slot.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}
