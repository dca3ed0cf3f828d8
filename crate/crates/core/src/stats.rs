//! Pixel-level segmentation metrics and measurement agreement statistics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pullback::Mask;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    if pred.dim() != truth.dim() {
        return Err(Error::Shape(format!("pred {:?} vs truth {:?}", pred.dim(), truth.dim())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Ratios with `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    pub dice: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] = ["PPV", "NPV", "Sensitivity", "Specificity", "Accuracy", "Dice"];

impl Metrics {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.ppv, self.npv, self.sensitivity, self.specificity, self.accuracy, self.dice]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::InvalidArgument("metrics over zero pixels".into()));
    }
    Ok(Metrics {
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        accuracy: ratio(c.tp + c.tn, c.total()),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    })
}

/// Mean ± sample standard deviation of one metric over folds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Entries left out because the metric was undefined.
    pub excluded: usize,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub ppv: Option<MeanStd>,
    pub npv: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub dice: Option<MeanStd>,
}

impl FoldSummary {
    pub fn values(&self) -> [Option<MeanStd>; 6] {
        [self.ppv, self.npv, self.sensitivity, self.specificity, self.accuracy, self.dice]
    }
}

/// Per-metric mean ± std over `k ≥ 2` fold entries. A metric with fewer than two
/// defined entries is `None`.
pub fn fold_aggregate(entries: &[Metrics]) -> Result<FoldSummary> {
    if entries.len() < 2 {
        return Err(Error::InvalidArgument(format!("fold aggregation needs k >= 2, got {}", entries.len())));
    }
    let agg = |i: usize| {
        let vals: Vec<f64> = entries.iter().filter_map(|e| e.values()[i]).collect();
        let (mean, std) = mean_std(&vals).ok()?;
        Some(MeanStd {
            mean,
            std,
            excluded: entries.len() - vals.len(),
        })
    };
    Ok(FoldSummary {
        ppv: agg(0),
        npv: agg(1),
        sensitivity: agg(2),
        specificity: agg(3),
        accuracy: agg(4),
        dice: agg(5),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// `None` when the truth values have zero variance.
    pub r_squared: Option<f64>,
    pub ba_bias: f64,
    pub ba_sd: f64,
    pub ba_loa_low: f64,
    pub ba_loa_high: f64,
    pub pct_within_loa: f64,
}

/// Least-squares fit of `auto` on `truth` and Bland–Altman statistics of `auto − truth`.
pub fn agreement(auto: &[f64], truth: &[f64]) -> Result<AgreementReport> {
    if auto.len() != truth.len() {
        return Err(Error::Shape(format!("{} automatic vs {} reference values", auto.len(), truth.len())));
    }
    let n = auto.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("agreement needs at least 3 pairs, got {n}")));
    }
    if auto.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("agreement input".into()));
    }
    let nf = n as f64;
    let mx = truth.iter().sum::<f64>() / nf;
    let my = auto.iter().sum::<f64>() / nf;
    let sxx: f64 = truth.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = auto.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = truth.iter().zip(auto).map(|(x, y)| (x - mx) * (y - my)).sum();
    let (slope, intercept, r_squared) = if sxx > 0.0 {
        let b = sxy / sxx;
        let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).min(1.0) } else { 1.0 };
        (Some(b), Some(my - b * mx), Some(r2))
    } else {
        (None, None, None)
    };

    let diffs: Vec<f64> = auto.iter().zip(truth).map(|(a, t)| a - t).collect();
    let (bias, sd) = mean_std(&diffs)?;
    let (lo, hi) = (bias - 1.96 * sd, bias + 1.96 * sd);
    let within = diffs.iter().filter(|&&d| d >= lo && d <= hi).count();
    Ok(AgreementReport {
        n,
        slope,
        intercept,
        r_squared,
        ba_bias: bias,
        ba_sd: sd,
        ba_loa_low: lo,
        ba_loa_high: hi,
        pct_within_loa: 100.0 * within as f64 / nf,
    })
}

/// Sample standard deviation over the mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    let (mean, sd) = mean_std(values)?;
    if mean == 0.0 {
        return Err(Error::InvalidArgument("coefficient of variation of zero-mean values".into()));
    }
    Ok(sd / mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::ClassTag;
    use ndarray::Array2;

    #[test]
    fn hand_metrics() {
        let c = ConfusionCounts { tp: 8, fp: 2, tn: 88, fn_: 2 };
        let m = metrics(&c).unwrap();
        assert!((m.ppv.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.sensitivity.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.dice.unwrap() - 0.8).abs() < 1e-15);
        assert!((m.specificity.unwrap() - 88.0 / 90.0).abs() < 1e-15);
        let none = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 1 }).unwrap();
        assert!(none.ppv.is_none() && none.dice == Some(0.0));
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn confusion_counts() {
        let t = Mask::new(Array2::from_shape_fn((10, 10), |(r, _)| u8::from(r == 0)), ClassTag::Fc).unwrap();
        assert_eq!(confusion(&t, &t).unwrap(), ConfusionCounts { tp: 10, fp: 0, tn: 90, fn_: 0 });
        let inv = Mask::new(t.data().mapv(|v| 1 - v), ClassTag::Fc).unwrap();
        let c = confusion(&inv, &t).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn fold_stats() {
        let e = |d: f64| Metrics {
            ppv: Some(d),
            npv: None,
            sensitivity: Some(d),
            specificity: Some(d),
            accuracy: Some(d),
            dice: Some(d),
        };
        let s = fold_aggregate(&[e(0.8), e(0.9)]).unwrap();
        let dice = s.dice.unwrap();
        assert!((dice.mean - 0.85).abs() < 1e-12 && (dice.std - 0.0707106781).abs() < 1e-9);
        assert!(s.npv.is_none());
        assert_eq!(fold_aggregate(&[e(0.5); 5]).unwrap().dice.unwrap().std, 0.0);
        assert!(fold_aggregate(&[e(0.5)]).is_err());
        let shown = MeanStd { mean: 0.8462, std: 0.0108, excluded: 0 }.to_string();
        assert_eq!(shown, "0.846 ± 0.011");
    }

    #[test]
    fn agreement_identities() {
        let x = [10.0, 20.0, 35.0, 50.0];
        let a = agreement(&x, &x).unwrap();
        assert_eq!((a.slope, a.intercept, a.r_squared), (Some(1.0), Some(0.0), Some(1.0)));
        assert_eq!((a.ba_bias, a.ba_loa_high - a.ba_loa_low), (0.0, 0.0));
        let shifted: Vec<f64> = x.iter().map(|v| v + 5.0).collect();
        let b = agreement(&shifted, &x).unwrap();
        assert_eq!((b.ba_bias, b.ba_sd, b.r_squared), (5.0, 0.0, Some(1.0)));
        let flat = agreement(&x, &[3.0; 4]).unwrap();
        assert!(flat.r_squared.is_none());
        assert!(agreement(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn cov() {
        assert_eq!(coefficient_of_variation(&[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert!(coefficient_of_variation(&[-1.0, 1.0]).is_err());
    }
}
