use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// AdamW hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.lr * self.weight_decay < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("unusable optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    /// Number of updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamWState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One AdamW update. Decoupled weight decay multiplies each parameter by
/// `1 - lr·wd` before the bias-corrected moment step.
pub fn adamw_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::dim(format!(
            "adamw: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != grads[i].shape() || p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(Error::dim(format!(
                "adamw: parameter {i} shape {:?} vs grad {:?}",
                p.shape(),
                grads[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = T::lit(cfg.lr);
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.eps);
    let decay = T::one() - lr * T::lit(cfg.weight_decay);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, x) in p.data_mut().iter_mut().enumerate() {
            *x *= decay;
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            *x -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(v)]
    }

    #[test]
    fn zero_grad_applies_pure_decay() {
        let mut p = one(1.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        adamw_step(&mut p, &one(0.0), &mut st, &cfg).unwrap();
        assert!((p[0].data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [-3.0, 0.25, 40.0] {
            let mut p = one(0.5);
            let mut st = AdamWState::new(&p);
            let cfg = AdamWConfig {
                lr: 0.01,
                weight_decay: 0.0,
                ..Default::default()
            };
            adamw_step(&mut p, &one(g), &mut st, &cfg).unwrap();
            let delta = p[0].data()[0] - 0.5;
            assert!((delta.abs() - 0.01).abs() < 1e-8, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -f64::signum(g));
        }
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = vec![Tensor::from_rows(1, 3, vec![1.0, -2.0, 3.0]).unwrap()];
        let before = p.clone();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.0,
            ..Default::default()
        };
        let g = vec![Tensor::from_rows(1, 3, vec![5.0, 5.0, -1.0]).unwrap()];
        adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut p = one(1.0);
        let mut st = AdamWState::new(&p);
        let g = vec![Tensor::<f64>::zeros(&[1, 2])];
        assert!(matches!(
            adamw_step(&mut p, &g, &mut st, &AdamWConfig::default()),
            Err(Error::Dimension(_))
        ));
    }
}
