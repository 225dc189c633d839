use dcac_tape::Real;

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// `lr0 · (1 − epoch/total)^exponent`.
pub fn poly_lr(epoch: usize, total_epochs: usize, lr0: f64, exponent: f64) -> Result<f64> {
    if epoch > total_epochs || total_epochs == 0 {
        return Err(Error::OutOfRange(format!("epoch {epoch} of {total_epochs}")));
    }
    Ok(lr0 * (1.0 - epoch as f64 / total_epochs as f64).powf(exponent))
}

/// Nesterov momentum in look-ahead form, elementwise:
/// `v ← μv − lr·g`, `θ ← θ + μv − lr·g`.
pub fn sgd_nesterov_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    velocity: &mut ParamStore<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient in {name}")));
    }
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for (name, theta) in params.iter_mut() {
        let g = grads.get(name).ok_or_else(|| Error::ShapeMismatch(format!("no gradient for {name}")))?;
        let v = velocity.get_mut(name).ok_or_else(|| Error::ShapeMismatch(format!("no velocity for {name}")))?;
        if g.shape() != theta.shape() || v.shape() != theta.shape() {
            return Err(Error::ShapeMismatch(format!("{name}: {:?} / {:?} / {:?}", theta.shape(), g.shape(), v.shape())));
        }
        for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * gi;
            *t = *t + mu * *vi - lr * gi;
        }
    }
    Ok(())
}

/// Zero-initialized velocity buffers matching `params`.
pub fn zero_velocity<T: Real>(params: &ParamStore<T>) -> ParamStore<T> {
    let mut v = ParamStore::new();
    for (k, t) in params.iter() {
        v.insert(k.clone(), dcac_tape::Tensor::zeros(t.shape()));
    }
    v
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// Exponential moving average `α·e + (1−α)·x`, initialized to the first
/// observation. Written as an increment so a constant series is an exact fixed point.
pub fn ema_update(prev: Option<f64>, current: f64, alpha: f64) -> f64 {
    match prev {
        None => current,
        Some(e) => e + (1.0 - alpha) * (current - e),
    }
}
