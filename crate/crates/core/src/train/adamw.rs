use serde::{Deserialize, Serialize};

use crate::tensornet::{ParamStore, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            weight_decay: 1e-6,
        }
    }
}

/// First and second moment estimates, kept in `f64` regardless of parameter type.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<F: Real>(params: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One decoupled-weight-decay Adam update:
/// `p ← p·(1 − lr·λ) − lr·m̂ / (√v̂ + eps)`.
pub fn adamw_step<F: Real>(
    params: &mut ParamStore<F>,
    grads: &ParamStore<F>,
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape("optimizer state does not match the parameter set".into()));
    }
    for (name, g) in grads.iter() {
        g.ensure_finite(&format!("gradient of {name}"))?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (i, (name, p)) in params.iter_mut().enumerate() {
        let g = grads.require(name)?;
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient of {name} has shape {:?}", g.shape())));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gv = gv.as_f64();
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gv;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pv = F::from_f64(pv.as_f64() * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Tensor;

    fn single(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::full([1, 1, 1, 1], v));
        p
    }

    #[test]
    fn quadratic_descent() {
        // f(w) = (w − 3)², no decay
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut p = single(0.0);
        let mut st = AdamState::new(&p);
        let f = |w: f64| (w - 3.0).powi(2);
        let w0 = p.get("w").unwrap().data()[0];
        let g = single(2.0 * (w0 - 3.0));
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!(f(p.get("w").unwrap().data()[0]) < f(w0));
    }

    #[test]
    fn rejects_nan_gradient() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let err = adamw_step(&mut p, &single(f64::NAN), &mut st, &AdamWConfig::default()).unwrap_err();
        assert!(err.is_numeric());
    }
}
