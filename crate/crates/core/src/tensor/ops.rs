//! Differentiable operations recorded on a [`Tape`].
//!
//! Binary elementwise ops require equal shapes, except that either side may
//! be a one-element tensor, which is broadcast. Image-like tensors are laid
//! out channel-major as `[C, H, W]`.

use super::numel;
use super::tape::{Backward, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Square,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Softplus,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Softplus => softplus(x),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Softplus => sigmoid(x),
        }
    }
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(format!("{what} expects [C,H,W], got {shape:?}"))),
    }
}

/// Reduces a broadcast gradient back onto a one-element operand.
fn reduce_to(grad: Vec<f64>, len: usize) -> Vec<f64> {
    if len == grad.len() {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

/// Adaptive pooling bin `[start, end)` for output cell `i` of `out` over `len` inputs.
pub(crate) fn adaptive_bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end.max(start + 1))
}

/// Source taps for align-corners-false bilinear sampling with edge clamping.
fn bilinear_taps(out: usize, len: usize) -> Vec<(usize, usize, f64)> {
    let scale = len as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

impl Tape {
    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let value: Vec<f64> = self.value(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(
            shape,
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let g = b
                    .grad
                    .iter()
                    .zip(b.inputs[0])
                    .zip(b.out)
                    .map(|((g, &x), &y)| g * kind.derivative(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Ln)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Unary::LeakyRelu(slope))
    }
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Softplus)
    }

    fn binary(&mut self, a: Var, b: Var, op: Bin) -> Result<Var> {
        let (na, nb) = (self.numel(a), self.numel(b));
        if self.shape(a) != self.shape(b) && na != 1 && nb != 1 {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let shape = if na >= nb { self.shape(a) } else { self.shape(b) }.to_vec();
        let n = numel(&shape);
        let av = self.value(a);
        let bv = self.value(b);
        let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let value = (0..n)
            .map(|i| {
                let (x, y) = (pick(av, i), pick(bv, i));
                match op {
                    Bin::Add => x + y,
                    Bin::Sub => x - y,
                    Bin::Mul => x * y,
                    Bin::Div => x / y,
                }
            })
            .collect();
        Ok(self.push_op(
            shape,
            value,
            &[a, b],
            Box::new(move |bw: &Backward| {
                let (av, bv) = (bw.inputs[0], bw.inputs[1]);
                let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                let ga = bw.needs[0].then(|| {
                    let g: Vec<f64> = (0..n)
                        .map(|i| match op {
                            Bin::Add | Bin::Sub => bw.grad[i],
                            Bin::Mul => bw.grad[i] * pick(bv, i),
                            Bin::Div => bw.grad[i] / pick(bv, i),
                        })
                        .collect();
                    reduce_to(g, na)
                });
                let gb = bw.needs[1].then(|| {
                    let g: Vec<f64> = (0..n)
                        .map(|i| match op {
                            Bin::Add => bw.grad[i],
                            Bin::Sub => -bw.grad[i],
                            Bin::Mul => bw.grad[i] * pick(av, i),
                            Bin::Div => {
                                let y = pick(bv, i);
                                -bw.grad[i] * pick(av, i) / (y * y)
                            }
                        })
                        .collect();
                    reduce_to(g, nb)
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Add)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Sub)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Mul)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Div)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(shape, value, &[x], Box::new(|b: &Backward| vec![Some(b.grad.to_vec())]))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push_op(
            shape,
            value,
            &[x],
            Box::new(move |b: &Backward| vec![Some(b.grad.iter().map(|g| g * c).collect())]),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.numel(x);
        let value = vec![self.value(x).iter().sum()];
        self.push_op(
            vec![1],
            value,
            &[x],
            Box::new(move |b: &Backward| vec![Some(vec![b.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.numel(x);
        let s = self.sum(x);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) || numel(shape) != self.numel(x) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).to_vec();
        Ok(self.push_op(
            shape.to_vec(),
            value,
            &[x],
            Box::new(|b: &Backward| vec![Some(b.grad.to_vec())]),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = match *self.shape(a) {
            [m, k] => (m, k),
            ref s => return Err(Error::shape(format!("matmul lhs must be 2-D, got {s:?}"))),
        };
        let (k2, n) = match *self.shape(b) {
            [k2, n] => (k2, n),
            ref s => return Err(Error::shape(format!("matmul rhs must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::shape(format!("matmul inner extents {k} vs {k2}")));
        }
        let mut value = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut value, 0.0);
        Ok(self.push_op(
            vec![m, n],
            value,
            &[a, b],
            Box::new(move |bw: &Backward| {
                let (av, bv, g) = (bw.inputs[0], bw.inputs[1], bw.grad);
                // dA = dC · Bᵀ
                let ga = bw.needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, (n, 1), bv, (1, n), &mut ga, 0.0);
                    ga
                });
                // dB = Aᵀ · dC
                let gb = bw.needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av, (1, k), g, (n, 1), &mut gb, 0.0);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = match *self.shape(x) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape(format!("add_row_bias lhs must be 2-D, got {s:?}"))),
        };
        if self.numel(bias) != n {
            return Err(Error::shape(format!(
                "bias of length {} for {n} columns",
                self.numel(bias)
            )));
        }
        let bv = self.value(bias).to_vec();
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bv).map(|(a, b)| a + b).collect::<Vec<_>>())
            .collect();
        Ok(self.push_op(
            vec![m, n],
            value,
            &[x, bias],
            Box::new(move |b: &Backward| {
                let gb = b.needs[1].then(|| {
                    let mut gb = vec![0.0; n];
                    for row in b.grad.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(o, g)| *o += g);
                    }
                    gb
                });
                vec![Some(b.grad.to_vec()), gb]
            }),
        ))
    }

    /// Stride-1 cross-correlation with zero padding `(k-1)/2`, so spatial
    /// extents are preserved. `x: [C,H,W]`, `kernels: [O,C,k,k]`, `bias: [O]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, bias: Option<Var>) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "conv2d input")?;
        let (o, kc, k) = match *self.shape(kernels) {
            [o, kc, k1, k2] if k1 == k2 => (o, kc, k1),
            ref s => return Err(Error::shape(format!("conv2d kernels must be [O,C,k,k], got {s:?}"))),
        };
        if k % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernel size must be odd, got {k}")));
        }
        if kc != c {
            return Err(Error::shape(format!("conv2d expects {kc} input channels, got {c}")));
        }
        if let Some(b) = bias {
            if self.numel(b) != o {
                return Err(Error::shape(format!(
                    "conv2d bias length {} for {o} outputs",
                    self.numel(b)
                )));
            }
        }
        let hw = h * w;
        let taps = c * k * k;
        let mut value = vec![0.0; o * hw];
        {
            let col = im2col(self.value(x), c, h, w, k);
            let wv = self.value(kernels);
            if let Some(b) = bias {
                let bv = self.value(b);
                for oc in 0..o {
                    value[oc * hw..(oc + 1) * hw].iter_mut().for_each(|v| *v = bv[oc]);
                }
            }
            gemm(o, taps, hw, wv, (taps, 1), &col, (hw, 1), &mut value, 1.0);
        }

        let mut parents = vec![x, kernels];
        parents.extend(bias);
        Ok(self.push_op(
            vec![o, h, w],
            value,
            &parents,
            Box::new(move |b: &Backward| {
                let (wv, g) = (b.inputs[1], b.grad);
                let gw = b.needs[1].then(|| {
                    let col = im2col(b.inputs[0], c, h, w, k);
                    let mut gw = vec![0.0; o * taps];
                    gemm(o, hw, taps, g, (hw, 1), &col, (1, hw), &mut gw, 0.0);
                    gw
                });
                let gx = b.needs[0].then(|| {
                    let mut gcol = vec![0.0; taps * hw];
                    gemm(taps, o, hw, wv, (1, taps), g, (hw, 1), &mut gcol, 0.0);
                    col2im(&gcol, c, h, w, k)
                });
                let mut out = vec![gx, gw];
                if b.inputs.len() == 3 {
                    out.push(b.needs[2].then(|| (0..o).map(|oc| g[oc * hw..(oc + 1) * hw].iter().sum()).collect()));
                }
                out
            }),
        ))
    }

    /// Numerically stable softmax over all elements.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xv.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = e.into_iter().map(|v| v / z).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_op(
            shape,
            value,
            &[x],
            Box::new(|b: &Backward| {
                let dot: f64 = b.grad.iter().zip(b.out).map(|(g, y)| g * y).sum();
                vec![Some(b.out.iter().zip(b.grad).map(|(y, g)| y * (g - dot)).collect())]
            }),
        ))
    }

    /// `[C,H,W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "global_avg_pool")?;
        let hw = h * w;
        let value = self
            .value(x)
            .chunks(hw)
            .map(|ch| ch.iter().sum::<f64>() / hw as f64)
            .collect();
        Ok(self.push_op(
            vec![c],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let g = b
                    .grad
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / hw as f64, hw))
                    .collect();
                vec![Some(g)]
            }),
        ))
    }

    /// Partitions each channel into `out_h × out_w` near-equal cells and
    /// keeps the per-cell max. Gradient goes to the first argmax.
    pub fn adaptive_max_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "adaptive_max_pool")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("adaptive_max_pool target extents must be positive"));
        }
        let xv = self.value(x);
        let mut value = Vec::with_capacity(c * out_h * out_w);
        let mut argmax = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            for oy in 0..out_h {
                let (ya, yb) = adaptive_bin(oy, out_h, h);
                for ox in 0..out_w {
                    let (xa, xb) = adaptive_bin(ox, out_w, w);
                    let mut best = (f64::NEG_INFINITY, usize::MAX);
                    for y in ya..yb {
                        for xx in xa..xb {
                            let idx = (ch * h + y) * w + xx;
                            if xv[idx] > best.0 || best.1 == usize::MAX {
                                best = (xv[idx], idx);
                            }
                        }
                    }
                    value.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let n_in = c * h * w;
        Ok(self.push_op(
            vec![c, out_h, out_w],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; n_in];
                for (&idx, &gv) in argmax.iter().zip(b.grad) {
                    g[idx] += gv;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Bilinear resampling to `out_h × out_w` (align-corners false, edges
    /// clamped). Works for both up- and down-sampling.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "bilinear_resize")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("bilinear_resize target extents must be positive"));
        }
        let ty = bilinear_taps(out_h, h);
        let tx = bilinear_taps(out_w, w);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(c * out_h * out_w);
        for ch in 0..c {
            let plane = &xv[ch * h * w..(ch + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    value.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Ok(self.push_op(
            vec![c, out_h, out_w],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; c * h * w];
                let mut it = b.grad.iter();
                for ch in 0..c {
                    let plane = &mut g[ch * h * w..(ch + 1) * h * w];
                    for &(y0, y1, fy) in &ty {
                        for &(x0, x1, fx) in &tx {
                            let gv = *it.next().expect("grad length");
                            plane[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            plane[y0 * w + x1] += gv * (1.0 - fy) * fx;
                            plane[y1 * w + x0] += gv * fy * (1.0 - fx);
                            plane[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// 2×2 average downsampling; ragged edges average the cells that exist.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "avg_pool2")?;
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let xv = self.value(x);
        let mut value = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut s, mut n) = (0.0, 0.0);
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            s += xv[(ch * h + y) * w + xx];
                            n += 1.0;
                        }
                    }
                    value.push(s / n);
                }
            }
        }
        Ok(self.push_op(
            vec![c, oh, ow],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; c * h * w];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let ys = 2 * oy..(2 * oy + 2).min(h);
                            let xs = 2 * ox..(2 * ox + 2).min(w);
                            let n = (ys.len() * xs.len()) as f64;
                            let gv = b.grad[(ch * oh + oy) * ow + ox] / n;
                            for y in ys {
                                for xx in xs.clone() {
                                    g[(ch * h + y) * w + xx] += gv;
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Spatial window `[y0,y1) × [x0,x1)` of a `[C,H,W]` tensor.
    pub fn crop(&mut self, x: Var, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "crop")?;
        if y0 >= y1 || x0 >= x1 || y1 > h || x1 > w {
            return Err(Error::invalid(format!(
                "crop window [{y0},{y1})x[{x0},{x1}) outside {h}x{w}"
            )));
        }
        let (ch_, cw) = (y1 - y0, x1 - x0);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(c * ch_ * cw);
        for ch in 0..c {
            for y in y0..y1 {
                value.extend_from_slice(&xv[(ch * h + y) * w + x0..(ch * h + y) * w + x1]);
            }
        }
        Ok(self.push_op(
            vec![c, ch_, cw],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; c * h * w];
                let mut rows = b.grad.chunks(cw);
                for ch in 0..c {
                    for y in y0..y1 {
                        let row = rows.next().expect("grad length");
                        g[(ch * h + y) * w + x0..(ch * h + y) * w + x1].copy_from_slice(row);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Writes `[C,bh,bw]` blocks into a fresh `[C,H,W]` map at the given
    /// top-left origins. Overlaps keep the elementwise max; cells no block
    /// touches are zero. Gradient flows to the winning writer only.
    pub fn scatter_max(
        &mut self,
        blocks: &[Var],
        origins: &[(usize, usize)],
        out_shape: (usize, usize, usize),
    ) -> Result<Var> {
        let (c, h, w) = out_shape;
        if blocks.len() != origins.len() {
            return Err(Error::invalid("scatter_max needs one origin per block"));
        }
        let mut best = vec![f64::NEG_INFINITY; c * h * w];
        let mut writer: Vec<Option<(usize, usize)>> = vec![None; c * h * w];
        let mut dims = Vec::with_capacity(blocks.len());
        for (bi, (&blk, &(oy, ox))) in blocks.iter().zip(origins).enumerate() {
            let (bc, bh, bw) = chw(self.shape(blk), "scatter_max block")?;
            if bc != c {
                return Err(Error::shape(format!(
                    "scatter_max block has {bc} channels, map has {c}"
                )));
            }
            if oy + bh > h || ox + bw > w {
                return Err(Error::invalid("scatter_max block exceeds map bounds"));
            }
            dims.push((bh, bw));
            let bv = self.value(blk);
            for ch in 0..c {
                for y in 0..bh {
                    for xx in 0..bw {
                        let src = (ch * bh + y) * bw + xx;
                        let dst = (ch * h + oy + y) * w + ox + xx;
                        if writer[dst].is_none() || bv[src] > best[dst] {
                            best[dst] = bv[src];
                            writer[dst] = Some((bi, src));
                        }
                    }
                }
            }
        }
        let value = best
            .iter()
            .zip(&writer)
            .map(|(&v, wr)| if wr.is_some() { v } else { 0.0 })
            .collect();
        let sizes: Vec<usize> = dims.iter().map(|(bh, bw)| c * bh * bw).collect();
        Ok(self.push_op(
            vec![c, h, w],
            value,
            blocks,
            Box::new(move |b: &Backward| {
                let mut gs: Vec<Option<Vec<f64>>> = sizes
                    .iter()
                    .zip(&b.needs)
                    .map(|(&n, &need)| need.then(|| vec![0.0; n]))
                    .collect();
                for (wr, &gv) in writer.iter().zip(b.grad) {
                    if let Some((bi, src)) = *wr {
                        if let Some(g) = gs[bi].as_mut() {
                            g[src] += gv;
                        }
                    }
                }
                gs
            }),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!("concat of {base:?} with {s:?} on axis {axis}")));
            }
            lens.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = lens.iter().sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &l) in parts.iter().zip(&lens) {
                let v = self.value(p);
                value.extend_from_slice(&v[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push_op(
            shape,
            value,
            parts,
            Box::new(move |b: &Backward| {
                let mut gs: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (g, &l) in gs.iter_mut().zip(&lens) {
                        g.extend_from_slice(&b.grad[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                gs.into_iter().map(Some).collect()
            }),
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "slice [{start}, {}) of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let xv = self.value(x);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            value.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push_op(
            out_shape,
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    g[base..base + len * inner].copy_from_slice(&b.grad[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Flat-index gather into a 1-D result.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.numel(x);
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(Error::invalid("gather indices empty or out of range"));
        }
        let xv = self.value(x);
        let value = indices.iter().map(|&i| xv[i]).collect();
        let idx = indices.to_vec();
        Ok(self.push_op(
            vec![indices.len()],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; n];
                for (&i, &gv) in idx.iter().zip(b.grad) {
                    g[i] += gv;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Selects rows of an `[m, n]` matrix (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = match *self.shape(x) {
            [m, n] => (m, n),
            ref s => return Err(Error::shape(format!("gather_rows expects 2-D, got {s:?}"))),
        };
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(Error::invalid("gather_rows indices empty or out of range"));
        }
        let xv = self.value(x);
        let value = rows
            .iter()
            .flat_map(|&r| xv[r * n..(r + 1) * n].iter().copied())
            .collect();
        let rows = rows.to_vec();
        Ok(self.push_op(
            vec![rows.len(), n],
            value,
            &[x],
            Box::new(move |b: &Backward| {
                let mut g = vec![0.0; m * n];
                for (k, &r) in rows.iter().enumerate() {
                    g[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(&b.grad[k * n..(k + 1) * n])
                        .for_each(|(a, v)| *a += v);
                }
                vec![Some(g)]
            }),
        ))
    }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    out.iter_mut().zip(x).for_each(|(o, &v)| *o += a * v);
}

/// `out[m×n] = beta·out + a[m×k]·b[k×n]`, operands given by (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    out: &mut [f64],
    beta: f64,
) {
    assert!(out.len() >= m * n && a.len() >= m * k && b.len() >= k * n);
    // SAFETY: the asserts bound every strided access of a, b and out
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Valid output range along one axis for a tap offset `d`.
fn tap_span(d: isize, len: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `[C·k·k, H·W]` patch matrix of a same-padded `k×k` convolution.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut col = vec![0.0; c * k * k * hw];
    for ic in 0..c {
        let inp = &x[ic * hw..(ic + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = tap_span(dy, h);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = tap_span(dx, w);
                let row = &mut col[((ic * k + ky) * k + kx) * hw..][..hw];
                for y in y0..y1 {
                    let iy = (y as isize + dy) as usize;
                    let src = &inp[iy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                    row[y * w + x0..y * w + x1].copy_from_slice(src);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut x = vec![0.0; c * hw];
    for ic in 0..c {
        let out = &mut x[ic * hw..(ic + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = tap_span(dy, h);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = tap_span(dx, w);
                let row = &col[((ic * k + ky) * k + kx) * hw..][..hw];
                for y in y0..y1 {
                    let iy = (y as isize + dy) as usize;
                    let dst = &mut out[iy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                    axpy(dst, 1.0, &row[y * w + x0..y * w + x1]);
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_basics() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2], &[1.0, 2.0]));
        let b = tape.constant(&t(&[2], &[3.0, 4.0]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s), &[4.0, 6.0]);

        let x = tape.constant(&t(&[3], &[0.5, -2.0, 7.0]));
        let ones = tape.constant(&Tensor::full(&[3], 1.0));
        let m = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(m), tape.value(x));

        let z = tape.scalar(0.0);
        let sg = tape.sigmoid(z);
        assert_eq!(tape.item(sg), 0.5);
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2]));
        let b = tape.constant(&Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        let c = tape.scalar(2.0);
        let bc = tape.mul(b, c).unwrap();
        assert_eq!(tape.shape(bc), &[3]);
    }

    #[test]
    fn matmul_cases() {
        let mut tape = Tape::new();
        let eye = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let x = tape.constant(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(eye, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let a = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = tape.constant(&t(&[2, 1], &[1.0, 1.0]));
        let r = tape.matmul(a, ones).unwrap();
        assert_eq!(tape.value(r), &[3.0, 7.0]);
        assert_eq!(tape.shape(r), &[2, 1]);

        assert!(tape.matmul(a, x).is_ok());
        assert!(matches!(tape.matmul(x, a), Err(Error::Shape(_))));
    }

    #[test]
    fn conv2d_identity_and_delta() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 2, 2], &[1.0, -2.0, 3.0, 4.5]));
        let k = tape.constant(&t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, None).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let x = tape.constant(&t(&[1, 3, 3], &delta));
        let k = tape.constant(&Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k, None).unwrap();
        assert_eq!(tape.value(y), &[1.0; 9]);
    }

    #[test]
    fn conv2d_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[2, 4, 4]));
        let even = tape.constant(&Tensor::zeros(&[1, 2, 2, 2]));
        assert!(tape.conv2d(x, even, None).is_err());
        let wrong_c = tape.constant(&Tensor::zeros(&[1, 3, 3, 3]));
        assert!(tape.conv2d(x, wrong_c, None).is_err());
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let z = tape.constant(&Tensor::zeros(&[3]));
        let s = tape.softmax(z).unwrap();
        for &v in tape.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(&t(&[2], &[1000.0, 0.0]));
        let s = tape.softmax(big).unwrap();
        assert!((tape.value(s)[0] - 1.0).abs() < 1e-12);
        assert!(tape.value(s)[1] >= 0.0 && tape.value(s)[1] < 1e-300);
        let nan = tape.constant(&t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adaptive_max_pool_quadrants() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (1..=16).map(f64::from).collect();
        let x = tape.constant(&t(&[1, 4, 4], &data));
        let p = tape.adaptive_max_pool(x, 2, 2).unwrap();
        assert_eq!(tape.value(p), &[6.0, 8.0, 14.0, 16.0]);
        assert!(tape.adaptive_max_pool(x, 0, 2).is_err());
    }

    #[test]
    fn upsample_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::full(&[2, 3, 5], 2.5));
        let y = tape.bilinear_resize(x, 11, 7).unwrap();
        assert_eq!(tape.shape(y), &[2, 11, 7]);
        assert!(tape.value(y).iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn adaptive_bins_cover_input() {
        for len in 1..20 {
            for out in 1..10 {
                let mut covered = vec![false; len];
                for i in 0..out {
                    let (a, b) = adaptive_bin(i, out, len);
                    assert!(a < b && b <= len, "len={len} out={out} i={i}");
                    covered[a..b].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn scatter_max_overlap_and_empty() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::full(&[1, 2, 2], 2.0));
        let b = tape.constant(&Tensor::full(&[1, 2, 2], 7.0));
        let m = tape.scatter_max(&[a, b], &[(0, 0), (1, 1)], (1, 3, 3)).unwrap();
        assert_eq!(tape.value(m), &[2.0, 2.0, 0.0, 2.0, 7.0, 7.0, 0.0, 7.0, 7.0]);
        let empty = tape.scatter_max(&[], &[], (2, 2, 2)).unwrap();
        assert!(tape.value(empty).iter().all(|&v| v == 0.0));

        let neg = tape.constant(&Tensor::full(&[1, 1, 1], -3.0));
        let m = tape.scatter_max(&[neg], &[(0, 0)], (1, 1, 2)).unwrap();
        assert_eq!(tape.value(m), &[-3.0, 0.0]);
    }

    #[test]
    fn concat_then_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(&t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        let a2 = tape.slice(c, 1, 0, 1).unwrap();
        let b2 = tape.slice(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(a2), tape.value(a));
        assert_eq!(tape.value(b2), tape.value(b));
    }

    #[test]
    fn backward_simple_cases() {
        let mut tape = Tape::new();
        let x = tape.variable(&t(&[3], &[1.0, -1.0, 4.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.variable(&t(&[2], &[1.0, 2.0]));
        let sq = tape.square(x);
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, 8.0]);

        assert!(matches!(tape.backward(sq), Err(Error::Shape(_))));
    }
}
