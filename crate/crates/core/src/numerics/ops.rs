//! Forward and backward kernels on plain tensors. The tape in `tape.rs`
//! records calls to these and chains the backward halves.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        };
        let (&[n, cin, h, w], &[cout, kcin, kh, kw]) = (input, kernel) else {
            return Err(mismatch());
        };
        if kcin != cin || kh != kw || stride == 0 {
            return Err(mismatch());
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(mismatch());
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = ((c * g.k + ki) * g.k + kj) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![g.cout],
            });
        }
    }
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kl * p]
    };
    for n in 0..g.n {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let y = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (co, chunk) in y.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.cout,
            kl,
            p,
            T::one(),
            kernel.data(),
            kl,
            1,
            cols,
            p,
            1,
            beta,
            y,
            p,
            1,
        );
    }
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

/// Gradients of `conv2d` with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape(), stride, pad)?;
    let (kl, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut dk = vec![T::zero(); g.cout * kl];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = if need_input_grad {
        vec![T::zero(); input.numel()]
    } else {
        Vec::new()
    };
    let mut col = vec![T::zero(); kl * p];
    let mut dcol = vec![T::zero(); kl * p];
    for n in 0..g.n {
        let x = &input.data()[n * in_len..(n + 1) * in_len];
        let dy = &grad_out.data()[n * out_len..(n + 1) * out_len];
        for (co, chunk) in dy.chunks(p).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        // dK += dY * cols^T
        T::gemm(
            g.cout,
            p,
            kl,
            T::one(),
            dy,
            p,
            1,
            cols,
            1,
            p,
            T::one(),
            &mut dk,
            kl,
            1,
        );
        if need_input_grad {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    kl,
                    g.cout,
                    p,
                    T::one(),
                    kernel.data(),
                    1,
                    kl,
                    dy,
                    p,
                    1,
                    T::one(),
                    dxn,
                    p,
                    1,
                );
            } else {
                T::gemm(
                    kl,
                    g.cout,
                    p,
                    T::one(),
                    kernel.data(),
                    1,
                    kl,
                    dy,
                    p,
                    1,
                    T::zero(),
                    &mut dcol,
                    p,
                    1,
                );
                col2im(&dcol, &g, dxn);
            }
        }
    }
    let dx = if need_input_grad {
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((
        dx,
        Tensor::new(kernel.shape().to_vec(), dk)?,
        Tensor::new(vec![g.cout], db)?,
    ))
}

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Saved state for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BnContext<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

/// `(batch, channels, inner)` view of an `[N, C, ...]` tensor.
fn channel_layout<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.shape().len() < 2 {
        return Err(Error::InvalidShape {
            op: "batch_norm",
            detail: format!("expected [N, C, ...], got {:?}", x.shape()),
        });
    }
    let n = x.shape()[0];
    let c = x.shape()[1];
    Ok((n, c, x.numel() / (n * c)))
}

fn check_affine<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, c: usize) -> Result<()> {
    for t in [gamma, beta] {
        if t.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm affine",
                lhs: t.shape().to_vec(),
                rhs: vec![c],
            });
        }
    }
    Ok(())
}

/// Train-mode batch norm: normalizes with batch statistics and folds them into
/// `stats` with an exponential moving average.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut BnStats<T>,
) -> Result<(Tensor<T>, BnContext<T>)> {
    let (n, c, inner) = channel_layout(x)?;
    check_affine(gamma, beta, c)?;
    let m = n * inner;
    if m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    let eps = T::from_f64_lossy(BN_EPS);
    let momentum = T::from_f64_lossy(BN_MOMENTUM);
    let mf = T::from_usize(m).unwrap();
    let data = x.data();
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let idx = |b: usize| (b * c + ch) * inner;
        let mut sum = T::zero();
        for b in 0..n {
            sum += data[idx(b)..idx(b) + inner].iter().copied().sum::<T>();
        }
        let mean = sum / mf;
        let mut sq = T::zero();
        for b in 0..n {
            for &v in &data[idx(b)..idx(b) + inner] {
                sq += (v - mean) * (v - mean);
            }
        }
        let var = sq / mf;
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            for i in idx(b)..idx(b) + inner {
                let h = (data[i] - mean) * is;
                xhat[i] = h;
                out[i] = gm * h + bt;
            }
        }
        let unbiased = sq / T::from_usize(m - 1).unwrap();
        stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mean;
        stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        BnContext {
            xhat,
            inv_std,
            train: true,
        },
    ))
}

/// Eval-mode batch norm using running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &BnStats<T>,
) -> Result<(Tensor<T>, BnContext<T>)> {
    let (n, c, inner) = channel_layout(x)?;
    check_affine(gamma, beta, c)?;
    if stats.mean.len() != c {
        return Err(Error::ShapeMismatch {
            op: "batch_norm stats",
            lhs: vec![stats.mean.len()],
            rhs: vec![c],
        });
    }
    let eps = T::from_f64_lossy(BN_EPS);
    let data = x.data();
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let inv_std: Vec<T> = stats
        .var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            let (mu, is) = (stats.mean[ch], inv_std[ch]);
            let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in base..base + inner {
                let h = (data[i] - mu) * is;
                xhat[i] = h;
                out[i] = gm * h + bt;
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        BnContext {
            xhat,
            inv_std,
            train: false,
        },
    ))
}

pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    ctx: &BnContext<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, inner) = channel_layout(grad_out)?;
    let dy = grad_out.data();
    let mf = T::from_usize(n * inner).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for b in 0..n {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * ctx.xhat[i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let gm = gamma.data()[ch];
        let is = ctx.inv_std[ch];
        for b in 0..n {
            let base = (b * c + ch) * inner;
            for i in base..base + inner {
                dx[i] = if ctx.train {
                    gm * is * (dy[i] - sum_dy / mf - ctx.xhat[i] * sum_dy_xhat / mf)
                } else {
                    gm * is * dy[i]
                };
            }
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// 2x2 stride-2 pooling. Returns the output and, for max pooling, the flat
/// input index each output cell was taken from.
pub fn pool2d<T: Scalar>(x: &Tensor<T>, kind: PoolKind) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("pool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape {
            op: "pool2d",
            detail: format!("spatial size {h}x{w} is not even"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let data = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::new();
    let quarter = T::from_f64_lossy(0.25);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let idx = [i0, i0 + 1, i0 + w, i0 + w + 1];
                match kind {
                    PoolKind::Max => {
                        let mut best = idx[0];
                        for &i in &idx[1..] {
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                        arg.push(best);
                        out.push(data[best]);
                    }
                    PoolKind::Avg => {
                        out.push(idx.iter().map(|&i| data[i]).sum::<T>() * quarter);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn pool2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    kind: PoolKind,
    argmax: &[usize],
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape);
    let [_, _, oh, ow] = grad_out.dims4("pool2d backward")?;
    let w = input_shape[3];
    let h = input_shape[2];
    let dxd = dx.data_mut();
    match kind {
        PoolKind::Max => {
            for (&i, &g) in argmax.iter().zip(grad_out.data()) {
                dxd[i] += g;
            }
        }
        PoolKind::Avg => {
            let quarter = T::from_f64_lossy(0.25);
            for (o, &g) in grad_out.data().iter().enumerate() {
                let plane = o / (oh * ow);
                let r = o % (oh * ow);
                let (oy, ox) = (r / ow, r % ow);
                let i0 = plane * h * w + 2 * oy * w + 2 * ox;
                for i in [i0, i0 + 1, i0 + w, i0 + w + 1] {
                    dxd[i] += g * quarter;
                }
            }
        }
    }
    Ok(dx)
}

/// Spatial mean per channel: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    let area = T::from_usize(h * w).unwrap();
    let out = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() / area)
        .collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avg_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let area = input_shape[2] * input_shape[3];
    let scale = T::one() / T::from_usize(area).unwrap();
    let data = grad_out
        .data()
        .iter()
        .flat_map(|&g| std::iter::repeat(g * scale).take(area))
        .collect();
    Tensor::new(input_shape.to_vec(), data)
}

/// Affine map `input · weight + bias` with `weight: [F, O]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, f] = input.dims2("linear")?;
    let [wf, o] = weight.dims2("linear")?;
    if wf != f {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    if bias.shape() != [o] {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            lhs: bias.shape().to_vec(),
            rhs: vec![o],
        });
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    T::gemm(
        n,
        f,
        o,
        T::one(),
        input.data(),
        f,
        1,
        weight.data(),
        o,
        1,
        T::one(),
        &mut out,
        o,
        1,
    );
    Tensor::new(vec![n, o], out)
}

pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, f] = input.dims2("linear backward")?;
    let [_, o] = weight.dims2("linear backward")?;
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); n * f];
    T::gemm(
        n,
        o,
        f,
        T::one(),
        dy,
        o,
        1,
        weight.data(),
        1,
        o,
        T::zero(),
        &mut dx,
        f,
        1,
    );
    let mut dw = vec![T::zero(); f * o];
    T::gemm(
        f,
        n,
        o,
        T::one(),
        input.data(),
        1,
        f,
        dy,
        o,
        1,
        T::zero(),
        &mut dw,
        o,
        1,
    );
    let mut db = vec![T::zero(); o];
    for row in dy.chunks(o) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((
        Tensor::new(vec![n, f], dx)?,
        Tensor::new(vec![f, o], dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

/// Mean cross-entropy over the rows of `logits`, restricted to the `active`
/// columns (all columns when `None`). Labels are column indices.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    active: Option<&[usize]>,
) -> Result<(T, Tensor<T>)> {
    let [n, c] = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy labels",
            lhs: vec![labels.len()],
            rhs: vec![n],
        });
    }
    let mut mask = vec![active.is_none(); c];
    if let Some(act) = active {
        for &a in act {
            if a >= c {
                return Err(Error::InvalidShape {
                    op: "softmax_cross_entropy",
                    detail: format!("active class {a} outside {c} logits"),
                });
            }
            mask[a] = true;
        }
    }
    let mut probs = vec![T::zero(); n * c];
    let mut loss = T::zero();
    for (r, &label) in labels.iter().enumerate() {
        if label >= c || !mask[label] {
            return Err(Error::InactiveLabel { label });
        }
        let row = &logits.data()[r * c..(r + 1) * c];
        let max = row
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for j in 0..c {
            if mask[j] {
                let e = (row[j] - max).exp();
                probs[r * c + j] = e;
                denom += e;
            }
        }
        for p in &mut probs[r * c..(r + 1) * c] {
            *p /= denom;
        }
        loss += denom.ln() - (row[label] - max);
    }
    loss /= T::from_usize(n).unwrap();
    Ok((loss, Tensor::new(vec![n, c], probs)?))
}

pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    upstream: T,
) -> Tensor<T> {
    let c = probs.shape()[1];
    let scale = upstream / T::from_usize(labels.len()).unwrap();
    let mut d = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        d.data_mut()[r * c + label] -= T::one();
    }
    d.data_mut().iter_mut().for_each(|v| *v *= scale);
    d
}
