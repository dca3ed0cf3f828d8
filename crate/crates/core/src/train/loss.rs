use crate::tensornet::{Real, Tensor};
use crate::{Error, Result};

pub const DICE_SMOOTH: f64 = 1e-5;

/// Running sums behind a pooled soft Dice: `Σ p·t`, `Σ p`, `Σ t`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiceSums {
    pub intersection: f64,
    pub pred: f64,
    pub target: f64,
}

impl DiceSums {
    pub fn of<F: Real>(pred: &[F], target: &[F]) -> Self {
        let mut s = Self::default();
        for (&p, &t) in pred.iter().zip(target) {
            let (p, t) = (p.as_f64(), t.as_f64());
            s.intersection += p * t;
            s.pred += p;
            s.target += t;
        }
        s
    }

    pub fn merge(&mut self, other: Self) {
        self.intersection += other.intersection;
        self.pred += other.pred;
        self.target += other.target;
    }

    /// `1 − (2·Σpt + s) / (Σp + Σt + s)`.
    pub fn loss(&self, smooth: f64) -> f64 {
        1.0 - (2.0 * self.intersection + smooth) / (self.pred + self.target + smooth)
    }
}

/// Soft Dice loss pooled over the whole batch, with its gradient with respect to `pred`.
pub fn dice_loss<F: Real>(pred: &Tensor<F>, target: &Tensor<F>, smooth: f64) -> Result<(f64, Tensor<F>)> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!("dice: pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    pred.ensure_finite("dice prediction")?;
    let s = DiceSums::of(pred.data(), target.data());
    let num = 2.0 * s.intersection + smooth;
    let den = s.pred + s.target + smooth;
    // d/dp [1 − N/D] = −(2t·D − N) / D²
    let d2 = den * den;
    let grad = target
        .data()
        .iter()
        .map(|&t| F::from_f64(-(2.0 * t.as_f64() * den - num) / d2))
        .collect();
    Ok((1.0 - num / den, Tensor::from_vec(pred.shape(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_empty() {
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        let (l, _) = dice_loss(&t, &t, DICE_SMOOTH).unwrap();
        assert!(l.abs() < 1e-5);
        let z = Tensor::<f64>::zeros([2, 1, 3, 3]);
        assert_eq!(dice_loss(&z, &z, DICE_SMOOTH).unwrap().0, 0.0);
        assert!(dice_loss(&z, &t, DICE_SMOOTH).is_err());
    }

    #[test]
    fn disjoint_is_near_one() {
        let p = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let t = Tensor::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert!((dice_loss(&p, &t, DICE_SMOOTH).unwrap().0 - 1.0).abs() < 1e-5);
    }
}
