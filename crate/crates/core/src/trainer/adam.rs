use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments, one buffer per parameter tensor in
/// [`ModelParams`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub names: Vec<String>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self {
            step: 0,
            names: params.names().map(str::to_string).collect(),
            m: params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect(),
        }
    }

    pub fn check(&self, params: &ModelParams<T>) -> Result<()> {
        if self.names.len() != params.len() || self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer state holds {} tensors, model has {}",
                self.names.len(),
                params.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if self.names[i] != name || self.m[i].len() != t.numel() || self.v[i].len() != t.numel() {
                return Err(Error::shape(format!("optimizer state does not match parameter {name}")));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Tensors without a gradient count as zero gradient. Nothing is modified
/// if any gradient is non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    opts: &AdamOptions,
    lr: f64,
) -> Result<()> {
    state.check(params)?;
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name} is not finite")));
            }
        }
    }
    state.step += 1;
    let t_step = state.step as i32;
    let c1 = 1.0 - opts.beta1.powi(t_step);
    let c2 = 1.0 - opts.beta2.powi(t_step);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let grad: Option<Vec<T>> = p.grad().map(<[T]>::to_vec);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let mut g = grad.as_ref().map_or(0.0, |g| g[j].to_f64c());
            if opts.weight_decay != 0.0 {
                g += opts.weight_decay * w.to_f64c();
            }
            let mj = opts.beta1 * m[j].to_f64c() + (1.0 - opts.beta1) * g;
            let vj = opts.beta2 * v[j].to_f64c() + (1.0 - opts.beta2) * g * g;
            m[j] = T::of(mj);
            v[j] = T::of(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + opts.eps);
            *w = T::of(w.to_f64c() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(p: f64) -> ModelParams<f64> {
        let mut ps = ModelParams::new();
        ps.insert("p", Tensor::new([1], vec![p]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = one(1.5);
        ps.get_mut("p").unwrap().accumulate_grad(&[0.0]).unwrap();
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, &AdamOptions::default(), 0.1).unwrap();
        assert_eq!(ps.get("p").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = one(1.0);
        ps.get_mut("p").unwrap().accumulate_grad(&[2.0]).unwrap();
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, &AdamOptions::default(), 0.1).unwrap();
        let p = ps.get("p").unwrap().data()[0];
        let expect = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p - expect).abs() < 1e-15, "{p}");
        assert!((p - 0.9).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut ps = one(1.0);
        ps.get_mut("p").unwrap().accumulate_grad(&[f64::NAN]).unwrap();
        let mut st = AdamState::new(&ps);
        assert!(matches!(
            adam_step(&mut ps, &mut st, &AdamOptions::default(), 0.1),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(ps.get("p").unwrap().data(), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut ps = one(3.0);
        let mut st = AdamState::new(&ps);
        for _ in 0..500 {
            let p = ps.get("p").unwrap().data()[0];
            ps.zero_grads();
            ps.get_mut("p").unwrap().accumulate_grad(&[2.0 * p]).unwrap();
            adam_step(&mut ps, &mut st, &AdamOptions::default(), 0.05).unwrap();
        }
        assert!(ps.get("p").unwrap().data()[0].abs() < 0.05);
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut ps = one(1.0);
        let mut other = ModelParams::new();
        other.insert("q", Tensor::new([2], vec![0.0, 0.0]).unwrap()).unwrap();
        let mut st = AdamState::new(&other);
        assert!(adam_step(&mut ps, &mut st, &AdamOptions::default(), 0.1).is_err());
    }
}
