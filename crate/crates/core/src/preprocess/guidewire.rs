//! Guidewire shadow detection.
//!
//! Each A-line gets a darkness cost from its depth-integrated intensity relative to
//! the frame median. Per frame, every wrapping interval (start, width) is scored by
//! its summed cost plus a penalty on the deviation of its width from a prior; the
//! best interval per centre column forms the unary term of a Viterbi pass over the
//! pullback that charges for centre jumps between consecutive frames.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::pullback::{PolarFrame, Pullback};
use crate::{Error, Result};

/// Smallest frame width accepted by the detector.
pub const MIN_THETA: usize = 8;

/// A wrapping, inclusive interval of A-lines occluded by the guidewire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidewireShadow {
    pub theta_start: usize,
    pub theta_end: usize,
    /// Set when the interval is barely darker than the rest of the frame.
    #[serde(default)]
    pub low_confidence: bool,
}

impl GuidewireShadow {
    pub fn new(theta_start: usize, width: usize, n_theta: usize) -> Self {
        Self {
            theta_start: theta_start % n_theta,
            theta_end: (theta_start + width - 1) % n_theta,
            low_confidence: false,
        }
    }

    pub fn width(&self, n_theta: usize) -> usize {
        (self.theta_end + n_theta - self.theta_start) % n_theta + 1
    }

    pub fn contains(&self, theta: usize, n_theta: usize) -> bool {
        (theta + n_theta - self.theta_start) % n_theta < self.width(n_theta)
    }

    pub fn columns(&self, n_theta: usize) -> impl Iterator<Item = usize> {
        let start = self.theta_start;
        (0..self.width(n_theta)).map(move |k| (start + k) % n_theta)
    }

    /// Intersection over union with another interval on the same circle.
    pub fn iou(&self, other: &Self, n_theta: usize) -> f64 {
        let inter = self.columns(n_theta).filter(|&t| other.contains(t, n_theta)).count();
        let union = self.width(n_theta) + other.width(n_theta) - inter;
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidewireParams {
    /// Expected shadow width in A-lines.
    pub prior_width: usize,
    /// Cost per A-line of deviation from `prior_width`, in median-normalized column units.
    pub width_penalty: f64,
    /// Cost per A-line of centre movement between consecutive frames.
    pub jump_cost: f64,
    /// Intervals whose mean normalized intensity exceeds `1 - confidence_threshold`
    /// are flagged low-confidence.
    pub confidence_threshold: f64,
    /// Widest interval considered, as a fraction of the frame.
    pub max_width_fraction: f64,
}

impl Default for GuidewireParams {
    fn default() -> Self {
        Self {
            prior_width: 30,
            width_penalty: 0.05,
            jump_cost: 1.0,
            confidence_threshold: 0.5,
            max_width_fraction: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    start: usize,
    width: usize,
}

/// Per-frame scoring: normalized column intensities and the best interval per centre.
struct FrameScores {
    normalized: Vec<f64>,
    by_center: Vec<Candidate>,
}

fn column_sums(data: &Array2<f32>) -> Vec<f64> {
    let mut sums = vec![0.0f64; data.ncols()];
    for row in data.rows() {
        for (s, &v) in sums.iter_mut().zip(row.iter()) {
            *s += v as f64;
        }
    }
    sums
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn score_frame(frame: &PolarFrame, params: &GuidewireParams) -> Result<FrameScores> {
    let n = frame.n_theta();
    if n < MIN_THETA {
        return Err(Error::InvalidArgument(format!(
            "frame has {n} A-lines; guidewire detection needs at least {MIN_THETA}"
        )));
    }
    let sums = column_sums(frame.data());
    let med = median(&sums);
    let normalized: Vec<f64> = if med > 0.0 {
        sums.iter().map(|s| s / med).collect()
    } else {
        // a mostly empty frame: fall back to the mean so an isolated bright column
        // does not turn every other A-line into shadow
        let mean = sums.iter().sum::<f64>() / n as f64;
        if mean > 0.0 {
            sums.iter().map(|s| s / mean).collect()
        } else {
            vec![1.0; n]
        }
    };
    // below half the median counts as shadow
    let cost: Vec<f64> = normalized.iter().map(|v| v - 0.5).collect();
    let mut prefix = vec![0.0f64; 2 * n + 1];
    for k in 0..2 * n {
        prefix[k + 1] = prefix[k] + cost[k % n];
    }

    let max_w = ((n as f64 * params.max_width_fraction) as usize).clamp(1, n - 1);
    let prior = params.prior_width.clamp(1, max_w) as f64;
    let mut by_center = vec![
        Candidate {
            cost: f64::INFINITY,
            start: 0,
            width: 1,
        };
        n
    ];
    for start in 0..n {
        for width in 1..=max_w {
            let c = prefix[start + width] - prefix[start] + params.width_penalty * (width as f64 - prior).abs();
            let center = (start + (width - 1) / 2) % n;
            if c < by_center[center].cost {
                by_center[center] = Candidate { cost: c, start, width };
            }
        }
    }
    Ok(FrameScores { normalized, by_center })
}

fn finalize(scores: &FrameScores, center: usize, n: usize, params: &GuidewireParams) -> GuidewireShadow {
    let cand = scores.by_center[center];
    let mean_inside =
        (0..cand.width).map(|k| scores.normalized[(cand.start + k) % n]).sum::<f64>() / cand.width as f64;
    let contrast = 1.0 - mean_inside;
    if contrast < params.confidence_threshold {
        let w = params.prior_width.clamp(1, n - 1);
        let start = (center + n - (w - 1) / 2) % n;
        GuidewireShadow {
            low_confidence: true,
            ..GuidewireShadow::new(start, w, n)
        }
    } else {
        GuidewireShadow::new(cand.start, cand.width, n)
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Detects the shadow interval in a single frame.
pub fn detect_guidewire(frame: &PolarFrame, params: &GuidewireParams) -> Result<GuidewireShadow> {
    let n = frame.n_theta();
    let scores = score_frame(frame, params)?;
    let costs: Vec<f64> = scores.by_center.iter().map(|c| c.cost).collect();
    Ok(finalize(&scores, argmin(&costs), n, params))
}

/// Detects shadows in every frame with centres smoothed across frames.
pub fn detect_guidewire_pullback(pullback: &Pullback, params: &GuidewireParams) -> Result<Vec<GuidewireShadow>> {
    let n = pullback.n_theta();
    let scores = pullback
        .frames()
        .iter()
        .map(|f| score_frame(f, params))
        .collect::<Result<Vec<_>>>()?;

    let circ = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(n - d) as f64
    };
    let mut acc: Vec<f64> = scores[0].by_center.iter().map(|c| c.cost).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(scores.len());
    for s in &scores[1..] {
        let mut next = vec![0.0; n];
        let mut from = vec![0usize; n];
        for c in 0..n {
            let (best_prev, best) = (0..n)
                .map(|p| (p, acc[p] + params.jump_cost * circ(p, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("n > 0");
            next[c] = best + s.by_center[c].cost;
            from[c] = best_prev;
        }
        acc = next;
        back.push(from);
    }
    let mut centers = vec![argmin(&acc); scores.len()];
    for f in (1..scores.len()).rev() {
        centers[f - 1] = back[f - 1][centers[f]];
    }
    Ok(scores
        .iter()
        .zip(centers)
        .map(|(s, c)| finalize(s, c, n, params))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::Geometry;

    fn tissue_frame(n_theta: usize, dark: impl Fn(usize) -> bool) -> PolarFrame {
        let mut d = Array2::zeros((60, n_theta));
        for ((r, t), v) in d.indexed_iter_mut() {
            if r >= 10 && !dark(t) {
                // mild deterministic texture
                *v = 0.5 + 0.1 * (((r * 7 + t * 13) % 11) as f32 / 11.0);
            }
        }
        PolarFrame::new(d, 0).unwrap()
    }

    #[test]
    fn finds_zeroed_columns() {
        let f = tissue_frame(448, |t| (100..=139).contains(&t));
        let s = detect_guidewire(&f, &GuidewireParams::default()).unwrap();
        assert!(!s.low_confidence);
        assert!(s.theta_start.abs_diff(100) <= 2, "{s:?}");
        assert!(s.theta_end.abs_diff(139) <= 2, "{s:?}");
    }

    #[test]
    fn finds_wrapping_shadow() {
        let f = tissue_frame(448, |t| t >= 430 || t <= 10);
        let s = detect_guidewire(&f, &GuidewireParams::default()).unwrap();
        assert!(s.theta_start.abs_diff(430) <= 2, "{s:?}");
        assert!(s.theta_end.abs_diff(10) <= 2, "{s:?}");
        assert!(s.contains(0, 448) && s.contains(447, 448));
    }

    #[test]
    fn uniform_frame_is_low_confidence_with_prior_width() {
        let f = PolarFrame::new(Array2::from_elem((20, 448), 0.5), 0).unwrap();
        let p = GuidewireParams::default();
        let s = detect_guidewire(&f, &p).unwrap();
        assert!(s.low_confidence);
        assert_eq!(s.width(448), p.prior_width);
    }

    #[test]
    fn narrow_frame_is_rejected() {
        let f = PolarFrame::new(Array2::from_elem((20, 7), 0.5), 0).unwrap();
        assert!(detect_guidewire(&f, &GuidewireParams::default()).is_err());
    }

    #[test]
    fn pullback_smoothing_keeps_a_drifting_shadow() {
        let frames: Vec<_> = (0..5)
            .map(|k| tissue_frame(448, move |t| (200 + 2 * k..230 + 2 * k).contains(&t)).into_data())
            .collect();
        let pb = Pullback::from_arrays(frames, Geometry::default(), "gw").unwrap();
        let shadows = detect_guidewire_pullback(&pb, &GuidewireParams::default()).unwrap();
        for (k, s) in shadows.iter().enumerate() {
            let truth = GuidewireShadow::new(200 + 2 * k, 30, 448);
            assert!(s.iou(&truth, 448) >= 0.8, "{k}: {s:?}");
        }
    }

    #[test]
    fn interval_geometry() {
        let s = GuidewireShadow::new(440, 20, 448);
        assert_eq!(s.theta_end, 11);
        assert_eq!(s.width(448), 20);
        assert!(s.contains(3, 448) && !s.contains(12, 448));
        assert_eq!(s.iou(&s, 448), 1.0);
    }
}
