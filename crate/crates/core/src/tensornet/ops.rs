//! Forward and analytic backward passes for every layer the SegResNet uses.

use rand::Rng;
use rayon::prelude::*;

use super::{Real, Tensor};
use crate::{Error, Result};

/// Output extent of a `kernel`-wide convolution with `kernel / 2` zero padding.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize) -> usize {
    let pad = kernel / 2;
    (input + 2 * pad - kernel) / stride + 1
}

struct ConvDims {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1 stride-1 convolutions read the input directly.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }
}

fn conv_dims<F: Real>(x: &Tensor<F>, w: &Tensor<F>, stride: usize) -> Result<ConvDims> {
    let [_, ci, h, wd] = x.shape();
    let [_, wci, k, k2] = w.shape();
    if wci != ci {
        return Err(Error::Shape(format!("conv expects {wci} input channels, got {ci}")));
    }
    if k != k2 || k % 2 == 0 {
        return Err(Error::Shape(format!("conv kernel must be square and odd, got {k}×{k2}")));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::InvalidArgument(format!("stride {stride} not in {{1, 2}}")));
    }
    Ok(ConvDims {
        ci,
        h,
        w: wd,
        k,
        stride,
        pad: k / 2,
        ho: conv_out_dim(h, k, stride),
        wo: conv_out_dim(wd, k, stride),
    })
}

fn im2col<F: Real>(x: &[F], d: &ConvDims, cols: &mut [F]) {
    let n = d.cols();
    for c in 0..d.ci {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = &mut cols[((c * d.k + ki) * d.k + kj) * n..][..n];
                for oy in 0..d.ho {
                    let dst = &mut row[oy * d.wo..(oy + 1) * d.wo];
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    if d.stride == 1 {
                        // valid ox satisfy 0 <= ox + kj - pad < w
                        let lo = d.pad.saturating_sub(kj).min(d.wo);
                        let hi = (d.w + d.pad).saturating_sub(kj).min(d.wo).max(lo);
                        dst[..lo].fill(F::zero());
                        dst[hi..].fill(F::zero());
                        let start = lo + kj - d.pad;
                        dst[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, v) in dst.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            *v = if ix >= 0 && ix < d.w as isize {
                                src[ix as usize]
                            } else {
                                F::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(cols: &[F], d: &ConvDims, dx: &mut [F]) {
    let n = d.cols();
    for c in 0..d.ci {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = &cols[((c * d.k + ki) * d.k + kj) * n..][..n];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let src = &row[oy * d.wo..(oy + 1) * d.wo];
                    for (ox, &g) in src.iter().enumerate() {
                        let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with `k / 2` zero padding. `w` is `(out, in, k, k)`.
pub fn conv2d_forward<F: Real>(x: &Tensor<F>, w: &Tensor<F>, b: &[F], stride: usize) -> Result<Tensor<F>> {
    let d = conv_dims(x, w, stride)?;
    let co = w.batch();
    if b.len() != co {
        return Err(Error::Shape(format!("bias has {} entries for {co} filters", b.len())));
    }
    let (kk, nn) = (d.rows(), d.cols());
    let mut out = Tensor::zeros([x.batch(), co, d.ho, d.wo]);
    let sample_in = x.sample_len();
    out.data_mut()
        .par_chunks_mut(co * nn)
        .zip(x.data().par_chunks(sample_in))
        .for_each(|(o, xs)| {
            for (c, plane) in o.chunks_mut(nn).enumerate() {
                plane.fill(b[c]);
            }
            if d.is_pointwise() {
                F::gemm(co, kk, nn, w.data(), false, xs, false, F::one(), o);
            } else {
                let mut cols = vec![F::zero(); kk * nn];
                im2col(xs, &d, &mut cols);
                F::gemm(co, kk, nn, w.data(), false, &cols, false, F::one(), o);
            }
        });
    Ok(out)
}

/// Gradients of a convolution with respect to its input, kernel and bias.
pub struct ConvGrads<F> {
    pub dx: Option<Tensor<F>>,
    pub dw: Tensor<F>,
    pub db: Vec<F>,
}

pub fn conv2d_backward<F: Real>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    stride: usize,
    dy: &Tensor<F>,
    need_dx: bool,
) -> Result<ConvGrads<F>> {
    let d = conv_dims(x, w, stride)?;
    let co = w.batch();
    if dy.shape() != [x.batch(), co, d.ho, d.wo] {
        return Err(Error::Shape(format!("conv grad {:?} for output {:?}", dy.shape(), [x.batch(), co, d.ho, d.wo])));
    }
    let (kk, nn) = (d.rows(), d.cols());
    let sample_in = x.sample_len();

    let per_sample: Vec<(Option<Vec<F>>, Vec<F>, Vec<F>)> = x
        .data()
        .par_chunks(sample_in)
        .zip(dy.data().par_chunks(co * nn))
        .map(|(xs, g)| {
            let db: Vec<F> = g.chunks(nn).map(|p| p.iter().copied().sum()).collect();
            let mut dw = vec![F::zero(); co * kk];
            let owned_cols;
            let cols: &[F] = if d.is_pointwise() {
                xs
            } else {
                let mut c = vec![F::zero(); kk * nn];
                im2col(xs, &d, &mut c);
                owned_cols = c;
                &owned_cols
            };
            F::gemm(co, nn, kk, g, false, cols, true, F::zero(), &mut dw);
            let dx = need_dx.then(|| {
                let mut dcols = vec![F::zero(); kk * nn];
                F::gemm(kk, co, nn, w.data(), true, g, false, F::zero(), &mut dcols);
                if d.is_pointwise() {
                    dcols
                } else {
                    let mut dx = vec![F::zero(); sample_in];
                    col2im(&dcols, &d, &mut dx);
                    dx
                }
            });
            (dx, dw, db)
        })
        .collect();

    // fixed-order reduction keeps results independent of thread scheduling
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![F::zero(); co];
    let mut dx = need_dx.then(|| Vec::with_capacity(x.numel()));
    for (sdx, sdw, sdb) in per_sample {
        for (a, b) in dw.data_mut().iter_mut().zip(&sdw) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&sdb) {
            *a += *b;
        }
        if let (Some(acc), Some(s)) = (dx.as_mut(), sdx) {
            acc.extend_from_slice(&s);
        }
    }
    let dx = dx.map(|v| Tensor::from_vec(x.shape(), v)).transpose()?;
    Ok(ConvGrads { dx, dw, db })
}

/// Per-(sample, group) statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct GroupNormCache<F> {
    pub mean: Vec<F>,
    pub rstd: Vec<F>,
}

pub fn groupnorm_forward<F: Real>(
    x: &Tensor<F>,
    gamma: &[F],
    beta: &[F],
    groups: usize,
    eps: f64,
) -> Result<(Tensor<F>, GroupNormCache<F>)> {
    let [n, c, h, w] = x.shape();
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("group norm affine has {} / {} for {c} channels", gamma.len(), beta.len())));
    }
    let cpg = c / groups;
    let hw = h * w;
    let m = (cpg * hw) as f64;
    let mut y = Tensor::zeros(x.shape());
    let mut mean = vec![F::zero(); n * groups];
    let mut rstd = vec![F::zero(); n * groups];
    let chunk = cpg * hw;
    y.data_mut()
        .par_chunks_mut(chunk)
        .zip(x.data().par_chunks(chunk))
        .zip(mean.par_iter_mut().zip(rstd.par_iter_mut()))
        .enumerate()
        .for_each(|(idx, ((ys, xs), (mu_out, rs_out)))| {
            let g = idx % groups;
            let mu = xs.iter().map(|v| v.as_f64()).sum::<f64>() / m;
            let var = xs.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / m;
            let rs = 1.0 / (var + eps).sqrt();
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                let (ga, be) = (gamma[ch].as_f64(), beta[ch].as_f64());
                for (yo, xi) in ys[ci * hw..(ci + 1) * hw].iter_mut().zip(&xs[ci * hw..(ci + 1) * hw]) {
                    *yo = F::from_f64(ga * (xi.as_f64() - mu) * rs + be);
                }
            }
            *mu_out = F::from_f64(mu);
            *rs_out = F::from_f64(rs);
        });
    Ok((y, GroupNormCache { mean, rstd }))
}

pub struct GroupNormGrads<F> {
    pub dx: Tensor<F>,
    pub dgamma: Vec<F>,
    pub dbeta: Vec<F>,
}

pub fn groupnorm_backward<F: Real>(
    x: &Tensor<F>,
    cache: &GroupNormCache<F>,
    gamma: &[F],
    groups: usize,
    dy: &Tensor<F>,
) -> Result<GroupNormGrads<F>> {
    let [n, c, h, w] = x.shape();
    if !dy.same_shape(x) {
        return Err(Error::Shape(format!("group norm grad {:?} for {:?}", dy.shape(), x.shape())));
    }
    let cpg = c / groups;
    let hw = h * w;
    let m = (cpg * hw) as f64;
    let chunk = cpg * hw;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for idx in 0..n * groups {
        let g = idx % groups;
        let xs = &x.data()[idx * chunk..(idx + 1) * chunk];
        let gs = &dy.data()[idx * chunk..(idx + 1) * chunk];
        let mu = cache.mean[idx].as_f64();
        let rs = cache.rstd[idx].as_f64();
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for ci in 0..cpg {
            let ch = g * cpg + ci;
            let ga = gamma[ch].as_f64();
            let (mut dg, mut dbt) = (0.0, 0.0);
            for (xi, gi) in xs[ci * hw..(ci + 1) * hw].iter().zip(&gs[ci * hw..(ci + 1) * hw]) {
                let xhat = (xi.as_f64() - mu) * rs;
                let gv = gi.as_f64();
                dg += gv * xhat;
                dbt += gv;
                sum_dxhat += gv * ga;
                sum_dxhat_xhat += gv * ga * xhat;
            }
            dgamma[ch] += dg;
            dbeta[ch] += dbt;
        }
        let out = &mut dx.data_mut()[idx * chunk..(idx + 1) * chunk];
        for ci in 0..cpg {
            let ga = gamma[g * cpg + ci].as_f64();
            for ((o, xi), gi) in out[ci * hw..(ci + 1) * hw]
                .iter_mut()
                .zip(&xs[ci * hw..(ci + 1) * hw])
                .zip(&gs[ci * hw..(ci + 1) * hw])
            {
                let xhat = (xi.as_f64() - mu) * rs;
                let dxhat = gi.as_f64() * ga;
                *o = F::from_f64(rs / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat));
            }
        }
    }
    Ok(GroupNormGrads {
        dx,
        dgamma: dgamma.into_iter().map(F::from_f64).collect(),
        dbeta: dbeta.into_iter().map(F::from_f64).collect(),
    })
}

/// Source taps for ×2 bilinear resampling with half-pixel centres (align-corners off).
fn upsample_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// ×2 bilinear upsampling, cropped to `(out_h, out_w)` (each at most twice the input).
pub fn upsample_forward<F: Real>(x: &Tensor<F>, out_h: usize, out_w: usize) -> Result<Tensor<F>> {
    let [n, c, h, w] = x.shape();
    if h == 0 || w == 0 || out_h > 2 * h || out_w > 2 * w {
        return Err(Error::Shape(format!("cannot upsample {h}×{w} to {out_h}×{out_w}")));
    }
    let ty = upsample_taps(h, out_h);
    let tx = upsample_taps(w, out_w);
    let mut y = Tensor::zeros([n, c, out_h, out_w]);
    y.data_mut()
        .par_chunks_mut(out_h * out_w)
        .zip(x.data().par_chunks(h * w))
        .for_each(|(out, plane)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let v = (1.0 - fy) * ((1.0 - fx) * plane[y0 * w + x0].as_f64() + fx * plane[y0 * w + x1].as_f64())
                        + fy * ((1.0 - fx) * plane[y1 * w + x0].as_f64() + fx * plane[y1 * w + x1].as_f64());
                    out[oy * out_w + ox] = F::from_f64(v);
                }
            }
        });
    Ok(y)
}

pub fn upsample_backward<F: Real>(dy: &Tensor<F>, in_h: usize, in_w: usize) -> Tensor<F> {
    let [n, c, out_h, out_w] = dy.shape();
    let ty = upsample_taps(in_h, out_h);
    let tx = upsample_taps(in_w, out_w);
    let mut dx = Tensor::zeros([n, c, in_h, in_w]);
    dx.data_mut()
        .par_chunks_mut(in_h * in_w)
        .zip(dy.data().par_chunks(out_h * out_w))
        .for_each(|(plane, g)| {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let gv = g[oy * out_w + ox].as_f64();
                    plane[y0 * in_w + x0] += F::from_f64((1.0 - fy) * (1.0 - fx) * gv);
                    plane[y0 * in_w + x1] += F::from_f64((1.0 - fy) * fx * gv);
                    plane[y1 * in_w + x0] += F::from_f64(fy * (1.0 - fx) * gv);
                    plane[y1 * in_w + x1] += F::from_f64(fy * fx * gv);
                }
            }
        });
    dx
}

pub fn relu_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()))
}

/// Uses the forward output: the gradient passes where the output is positive.
pub fn relu_backward<F: Real>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn sigmoid_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| F::one() / (F::one() + (-v).exp()))
}

pub fn sigmoid_backward<F: Real>(y: &Tensor<F>, dy: &Tensor<F>) -> Tensor<F> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| g * o * (F::one() - o))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Spatial dropout: whole channels are zeroed with probability `p`, survivors are
/// scaled by `1 / (1 - p)`. Returns the per-(sample, channel) multipliers.
pub fn dropout_forward<F: Real, R: Rng + ?Sized>(x: &Tensor<F>, p: f64, rng: &mut R) -> (Tensor<F>, Vec<F>) {
    let [n, c, h, w] = x.shape();
    if p <= 0.0 {
        return (x.clone(), vec![F::one(); n * c]);
    }
    let keep = F::from_f64(1.0 / (1.0 - p));
    let scale: Vec<F> = (0..n * c)
        .map(|_| if rng.gen_bool(p.min(1.0)) { F::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (plane, &s) in y.data_mut().chunks_mut(h * w).zip(&scale) {
        for v in plane {
            *v *= s;
        }
    }
    (y, scale)
}

pub fn dropout_backward<F: Real>(scale: &[F], dy: &Tensor<F>) -> Tensor<F> {
    let [_, _, h, w] = dy.shape();
    let mut dx = dy.clone();
    for (plane, &s) in dx.data_mut().chunks_mut(h * w).zip(scale) {
        for v in plane {
            *v *= s;
        }
    }
    dx
}
