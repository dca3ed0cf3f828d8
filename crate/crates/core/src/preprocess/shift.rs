use ndarray::Array2;

use super::{GuidewireShadow, LumenBoundary};
use crate::pullback::{Mask, PolarFrame};
use crate::{Error, Result};

/// Rows kept after pixel shifting.
pub const CROP_ROWS: usize = 200;
/// Gaussian kernel size and standard deviation in pixels.
pub const GAUSSIAN_SIZE: usize = 7;
pub const GAUSSIAN_SIGMA: f64 = 1.0;

/// Moves each A-line up so its lumen depth lands on row 0. Vacated rows are zero and
/// shadow A-lines are cleared.
pub fn pixel_shift(frame: &PolarFrame, lumen: &LumenBoundary, shadow: &GuidewireShadow) -> Result<Array2<f32>> {
    shift_columns(frame.data(), lumen, shadow, frame.n_r())
}

/// Applies the same shift to a mask and keeps the first `rows` rows.
pub fn shift_mask(mask: &Mask, lumen: &LumenBoundary, shadow: &GuidewireShadow, rows: usize) -> Result<Mask> {
    let shifted = shift_columns(mask.data(), lumen, shadow, rows)?;
    Mask::new(shifted, mask.class_tag())
}

/// Inverse of [`shift_mask`]: places a shifted mask back at its lumen depth in a
/// frame of `n_r` rows. Pixels pushed past `n_r` are dropped.
pub fn unshift_mask(mask: &Mask, lumen: &LumenBoundary, n_r: usize) -> Result<Mask> {
    let (rows, n) = mask.dim();
    if lumen.n_theta() != n {
        return Err(Error::Shape(format!("lumen has {} A-lines, mask {n}", lumen.n_theta())));
    }
    let mut out = Array2::<u8>::zeros((n_r, n));
    for t in 0..n {
        let lb = lumen.r_index[t];
        for r in 0..rows {
            if lb + r < n_r {
                out[[lb + r, t]] = mask.data()[[r, t]];
            }
        }
    }
    Mask::new(out, mask.class_tag())
}

fn shift_columns<T: Copy + Default>(
    data: &Array2<T>,
    lumen: &LumenBoundary,
    shadow: &GuidewireShadow,
    rows: usize,
) -> Result<Array2<T>> {
    let (n_r, n) = data.dim();
    if lumen.n_theta() != n {
        return Err(Error::Shape(format!("lumen has {} A-lines, frame {n}", lumen.n_theta())));
    }
    let mut out = Array2::<T>::default((rows, n));
    for t in 0..n {
        if shadow.contains(t, n) {
            continue;
        }
        let lb = lumen.r_index[t];
        if lb >= n_r {
            return Err(Error::InvalidData(format!("lumen index {lb} outside {n_r} rows")));
        }
        for r in 0..rows.min(n_r - lb) {
            out[[r, t]] = data[[lb + r, t]];
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian weights for offsets `-half..=half`.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as i64;
    let w: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mirror index for `i` in `[-(n-1), 2n-2]`, excluding the edge sample (`d c b | a b c d`
/// without repeating `a`), degenerating to edge replication for `n == 1`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian filter; reflecting borders along r, periodic along θ.
pub fn gaussian_filter(data: &Array2<f32>, size: usize, sigma: f64) -> Array2<f32> {
    let k = gaussian_kernel_1d(size, sigma);
    let half = (size / 2) as i64;
    let (h, w) = data.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for t in 0..w {
            tmp[[r, t]] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * data[[r, (t as i64 + j as i64 - half).rem_euclid(w as i64) as usize]] as f64)
                .sum();
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for r in 0..h {
        for t in 0..w {
            out[[r, t]] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[[reflect(r as i64 + j as i64 - half, h), t]])
                .sum::<f64>() as f32;
        }
    }
    out
}

/// Keeps rows `0..CROP_ROWS` of a shifted frame and applies the 7×7, σ = 1 Gaussian.
/// Shadow A-lines are cleared again after filtering.
pub fn crop_and_filter(shifted: &Array2<f32>, shadow: &GuidewireShadow) -> Result<Array2<f32>> {
    let (n_r, n) = shifted.dim();
    if n_r < CROP_ROWS {
        return Err(Error::Shape(format!("frame has {n_r} rows, need at least {CROP_ROWS}")));
    }
    let cropped = shifted.slice(ndarray::s![..CROP_ROWS, ..]).to_owned();
    let mut out = gaussian_filter(&cropped, GAUSSIAN_SIZE, GAUSSIAN_SIGMA);
    for t in shadow.columns(n) {
        out.column_mut(t).fill(0.0);
    }
    Ok(out)
}
