use super::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn global_norm<S: Scalar>(g: &[S]) -> S {
    g.iter().map(|&x| x * x).sum::<S>().sqrt()
}

/// Rescale `g` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<S: Scalar>(g: &mut [S], max_norm: S) -> S {
    let norm = global_norm(g);
    if norm > max_norm && norm > S::zero() {
        let s = max_norm / norm;
        for x in g.iter_mut() {
            *x *= s;
        }
    }
    norm
}

fn check_gradient<S: Scalar>(model: &Model<S>, gradient: &[S]) -> Result<()> {
    if gradient.len() != model.param_count() {
        return Err(Error::invalid(format!(
            "gradient has {} entries, model has {}",
            gradient.len(),
            model.param_count()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", gradient[i])));
    }
    Ok(())
}

pub(super) fn sgd_update<S: Scalar>(model: &mut Model<S>, gradient: &[S], lr: S, clip: Option<S>) -> Result<S> {
    check_gradient(model, gradient)?;
    let norm = global_norm(gradient);
    let factor = match clip {
        Some(c) if norm > c && norm > S::zero() => lr * (c / norm),
        _ => lr,
    };
    let params = model.params_mut()?;
    if factor != S::zero() {
        for (p, &g) in params.iter_mut().zip(gradient) {
            *p -= factor * g;
        }
    }
    Ok(norm)
}

/// Adam, offered for supervised pre-training; reinforcement updates use
/// [`Model::sgd_update`].
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: usize) -> Self {
        Adam {
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            m: vec![S::zero(); params],
            v: vec![S::zero(); params],
            t: 0,
        }
    }

    /// One Adam step on the (clipped) gradient; returns the pre-clip norm.
    pub fn step(&mut self, model: &mut Model<S>, gradient: &[S], lr: S, clip: Option<S>) -> Result<S> {
        check_gradient(model, gradient)?;
        let norm = global_norm(gradient);
        let gscale = match clip {
            Some(c) if norm > c && norm > S::zero() => c / norm,
            _ => S::one(),
        };
        self.t += 1;
        let bc1 = S::one() - self.beta1.powi(self.t);
        let bc2 = S::one() - self.beta2.powi(self.t);
        let params = model.params_mut()?;
        for i in 0..params.len() {
            let g = gradient[i] * gscale;
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(norm)
    }
}
