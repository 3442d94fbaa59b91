use crate::autograd::Tensor;
use crate::backbone::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            weight_decay: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
    hp: AdamW,
) -> Result<()> {
    let n = params.tensors().len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::shape(
            "adamw",
            format!("{n} parameters, {} gradients, {} moments", grads.len(), state.m.len()),
        ));
    }
    for (p, g) in params.tensors().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adamw", format!("gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adamw gradient" });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, theta) in p.data_mut().iter_mut().enumerate() {
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *theta -= lr * (m_hat / (v_hat.sqrt() + hp.eps) + hp.weight_decay * *theta);
        }
    }
    Ok(())
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm {
        let scale = max_norm / n;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(value: f64) -> ModelParams {
        let mut p = ModelParams::zeros(4);
        for t in p.tensors_mut() {
            t.data_mut().fill(value);
        }
        p
    }

    fn grads_like(p: &ModelParams, value: f64) -> Vec<Tensor> {
        p.tensors().iter().map(|t| Tensor::full(t.shape(), value)).collect()
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut p = filled(1.0);
        let g = grads_like(&p, 0.0);
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.01, AdamW::default()).unwrap();
        assert!(p.tensors().iter().all(|t| t.data().iter().all(|&v| (v - 0.99999).abs() < 1e-15)));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_bias_correction() {
        let mut p = filled(0.0);
        let g = grads_like(&p, 1.0);
        let mut st = OptimizerState::new(&p);
        let hp = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        adamw_step(&mut p, &g, &mut st, 0.01, hp).unwrap();
        let expected = -0.01 / (1.0 + 1e-8);
        assert!(p.tensors().iter().all(|t| t.data().iter().all(|&v| (v - expected).abs() < 1e-15)));
        let before = p.tensors()[0].data()[0];
        adamw_step(&mut p, &g, &mut st, 0.01, hp).unwrap();
        assert!(p.tensors()[0].data()[0] < before);
        assert!(st.v.iter().all(|t| t.data().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = filled(0.0);
        let mut g = grads_like(&p, 0.0);
        g[3].data_mut()[0] = f64::NAN;
        let mut st = OptimizerState::new(&p);
        assert!(matches!(
            adamw_step(&mut p, &g, &mut st, 0.01, AdamW::default()),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(&[2], vec![1.2, 0.0]).unwrap(), Tensor::new(&[1], vec![1.6]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 2.0);
        assert_eq!(g[0].data(), &[0.6, 0.0]);
        assert!((g[1].data()[0] - 0.8).abs() < 1e-15);

        let mut small = vec![Tensor::new(&[2], vec![0.3, 0.4]).unwrap()];
        let copy = small.clone();
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, copy);
    }

    proptest::proptest! {
        #[test]
        fn clipped_norm_is_min_of_norm_and_one(values in proptest::collection::vec(-10.0f64..10.0, 1..40)) {
            let mut g = vec![Tensor::new(&[values.len()], values).unwrap()];
            let n = clip_global_norm(&mut g, 1.0);
            let after = global_norm(&g);
            proptest::prop_assert!(after <= 1.0 + 1e-12);
            proptest::prop_assert!((after - n.min(1.0)).abs() <= 1e-12);
        }
    }
}
