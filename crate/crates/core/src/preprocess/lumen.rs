//! Classical lumen boundary detection.
//!
//! An Otsu threshold over the non-shadow pixels seeds one candidate depth per A-line
//! (first depth whose 5-sample running mean exceeds the threshold). A shortest path
//! over the valid A-lines then picks, within a band around each candidate, the depth
//! maximizing a step-edge response with a penalty on depth jumps between neighbours.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::GuidewireShadow;
use crate::pullback::PolarFrame;
use crate::{Error, Result};

/// Per-A-line lumen depth. A-lines inside the guidewire shadow are interpolated
/// and flagged invalid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LumenBoundary {
    pub r_index: Vec<usize>,
    pub valid: Vec<bool>,
}

impl LumenBoundary {
    /// A boundary at constant depth with every A-line valid.
    pub fn constant(r: usize, n_theta: usize) -> Self {
        Self {
            r_index: vec![r; n_theta],
            valid: vec![true; n_theta],
        }
    }

    pub fn n_theta(&self) -> usize {
        self.r_index.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LumenParams {
    /// Running-mean window in samples.
    pub window: usize,
    /// Penalty per pixel of depth change between neighbouring A-lines, in units of
    /// the Otsu threshold.
    pub smoothness: f64,
    /// Half-width of the search band around each A-line's candidate depth.
    pub search_band: usize,
}

impl Default for LumenParams {
    fn default() -> Self {
        Self {
            window: 5,
            smoothness: 0.5,
            search_band: 8,
        }
    }
}

/// Otsu threshold over `values` on a 256-bin histogram spanning `[0, max]`.
pub fn otsu_threshold(values: impl Iterator<Item = f32> + Clone) -> f32 {
    let max = values.clone().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    let mut total = 0u64;
    for v in values {
        let b = ((v / max) * (BINS - 1) as f32).round() as usize;
        hist[b.min(BINS - 1)] += 1;
        total += 1;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best, mut best_bin) = (-1.0f64, 0usize);
    for (i, &h) in hist.iter().enumerate() {
        w0 += h as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total as f64 - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += i as f64 * h as f64;
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    // threshold sits at the upper edge of the background class
    (best_bin as f32 + 0.5) / (BINS - 1) as f32 * max
}

fn column_prefix(data: &Array2<f32>, t: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(data.nrows() + 1);
    p.push(0.0);
    let mut acc = 0.0f64;
    for r in 0..data.nrows() {
        acc += data[[r, t]] as f64;
        p.push(acc);
    }
    p
}

fn window_mean(prefix: &[f64], lo: usize, hi: usize) -> f64 {
    if hi <= lo {
        0.0
    } else {
        (prefix[hi] - prefix[lo]) / (hi - lo) as f64
    }
}

/// Segments the lumen boundary of one frame.
pub fn segment_lumen(frame: &PolarFrame, shadow: &GuidewireShadow, params: &LumenParams) -> Result<LumenBoundary> {
    let data = frame.data();
    let (n_r, n) = data.dim();
    let win = params.window.max(1);
    let valid: Vec<bool> = (0..n).map(|t| !shadow.contains(t, n)).collect();
    let threshold = otsu_threshold(
        data.indexed_iter()
            .filter(|((_, t), _)| valid[*t])
            .map(|(_, &v)| v),
    ) as f64;
    if threshold <= 0.0 {
        return Err(Error::NoLumen);
    }

    let prefixes: Vec<Vec<f64>> = (0..n).map(|t| column_prefix(data, t)).collect();
    let candidates: Vec<Option<usize>> = (0..n)
        .map(|t| {
            if !valid[t] {
                return None;
            }
            (0..n_r).find(|&r| window_mean(&prefixes[t], r, (r + win).min(n_r)) > threshold)
        })
        .collect();
    if candidates.iter().all(Option::is_none) {
        return Err(Error::NoLumen);
    }

    // walk the valid A-lines in circular order starting just after the shadow
    let order: Vec<usize> = (0..n)
        .map(|k| (shadow.theta_end + 1 + k) % n)
        .filter(|&t| valid[t])
        .collect();
    let seeds = fill_missing(&order.iter().map(|&t| candidates[t]).collect::<Vec<_>>());

    let edge = |t: usize, r: usize| -> f64 {
        let p = &prefixes[t];
        let below = window_mean(p, r, (r + win).min(n_r));
        let above = window_mean(p, r.saturating_sub(win), r);
        (below - above) / threshold
    };

    let band = params.search_band;
    let states: Vec<(usize, usize)> = seeds
        .iter()
        .map(|&c| (c.saturating_sub(band), (c + band).min(n_r - 1)))
        .collect();
    let mut cost: Vec<f64> = (states[0].0..=states[0].1).map(|r| -edge(order[0], r)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(order.len());
    for k in 1..order.len() {
        let (lo_prev, hi_prev) = states[k - 1];
        let (lo, hi) = states[k];
        let mut next = Vec::with_capacity(hi - lo + 1);
        let mut from = Vec::with_capacity(hi - lo + 1);
        for r in lo..=hi {
            let (arg, best) = (lo_prev..=hi_prev)
                .map(|rp| (rp, cost[rp - lo_prev] + params.smoothness * rp.abs_diff(r) as f64))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty band");
            next.push(best - edge(order[k], r));
            from.push(arg);
        }
        cost = next;
        back.push(from);
    }
    let last = order.len() - 1;
    let mut r = states[last].0
        + cost
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty band");
    let mut r_index = vec![0usize; n];
    for k in (0..order.len()).rev() {
        r_index[order[k]] = r;
        if k > 0 {
            r = back[k - 1][r - states[k].0];
        }
    }

    // linear interpolation across the shadow, wrapping through θ = 0
    let w = shadow.width(n);
    if w < n {
        let left = r_index[(shadow.theta_start + n - 1) % n] as f64;
        let right = r_index[(shadow.theta_end + 1) % n] as f64;
        for (k, t) in shadow.columns(n).enumerate() {
            let a = (k + 1) as f64 / (w + 1) as f64;
            r_index[t] = ((1.0 - a) * left + a * right).round() as usize;
        }
    }
    Ok(LumenBoundary { r_index, valid })
}

/// Replaces `None` entries by linear interpolation between known neighbours
/// (constant extrapolation at the ends).
fn fill_missing(values: &[Option<usize>]) -> Vec<usize> {
    let known: Vec<(usize, usize)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let mut out = vec![0usize; values.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let after = known.partition_point(|&(k, _)| k < i);
        *slot = match (after.checked_sub(1).map(|j| known[j]), known.get(after)) {
            (_, Some(&(k, v))) if k == i => v,
            (Some((i0, v0)), Some(&(i1, v1))) => {
                let a = (i - i0) as f64 / (i1 - i0) as f64;
                ((1.0 - a) * v0 as f64 + a * v1 as f64).round() as usize
            }
            (Some((_, v)), None) | (None, Some(&(_, v))) => v,
            (None, None) => 0,
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phantom(n_theta: usize, lumen: impl Fn(usize) -> usize) -> PolarFrame {
        let mut d = Array2::zeros((200, n_theta));
        for t in 0..n_theta {
            let lb = lumen(t);
            for r in lb..200 {
                d[[r, t]] = 0.6 * (-((r - lb) as f32) / 80.0).exp();
            }
        }
        PolarFrame::new(d, 0).unwrap()
    }

    fn shadow() -> GuidewireShadow {
        GuidewireShadow::new(300, 20, 448)
    }

    #[test]
    fn constant_lumen() {
        let f = phantom(448, |_| 37);
        let b = segment_lumen(&f, &shadow(), &LumenParams::default()).unwrap();
        for t in 0..448 {
            assert!(b.r_index[t].abs_diff(37) <= 1, "{t}: {}", b.r_index[t]);
            assert_eq!(b.valid[t], !shadow().contains(t, 448));
        }
    }

    #[test]
    fn sinusoidal_lumen() {
        let truth = |t: usize| (50.0 + 10.0 * (std::f64::consts::TAU * t as f64 / 448.0).sin()).round() as usize;
        let f = phantom(448, truth);
        let b = segment_lumen(&f, &shadow(), &LumenParams::default()).unwrap();
        let worst = (0..448)
            .filter(|&t| b.valid[t])
            .map(|t| b.r_index[t].abs_diff(truth(t)))
            .max()
            .unwrap();
        assert!(worst <= 2, "{worst}");
    }

    #[test]
    fn all_zero_frame_has_no_lumen() {
        let f = PolarFrame::new(Array2::zeros((50, 448)), 0).unwrap();
        assert!(matches!(
            segment_lumen(&f, &shadow(), &LumenParams::default()),
            Err(Error::NoLumen)
        ));
    }

    #[test]
    fn shadow_is_interpolated() {
        let f = phantom(448, |t| if t < 224 { 40 } else { 40 });
        let b = segment_lumen(&f, &shadow(), &LumenParams::default()).unwrap();
        for t in shadow().columns(448) {
            assert!(!b.valid[t]);
            assert!(b.r_index[t].abs_diff(40) <= 1);
        }
    }

    #[test]
    fn fill_missing_interpolates() {
        assert_eq!(fill_missing(&[None, Some(2), None, Some(6), None]), vec![2, 2, 4, 6, 6]);
    }

    #[test]
    fn otsu_splits_two_levels() {
        let v: Vec<f32> = (0..100).map(|i| if i < 50 { 0.1 } else { 0.9 }).collect();
        let t = otsu_threshold(v.iter().copied());
        assert!(t > 0.1 && t < 0.9, "{t}");
    }
}
