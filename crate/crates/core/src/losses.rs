//! Soft Dice, pixelwise cross-entropy and domain cross-entropy.
//!
//! Each loss returns its value together with the gradient with respect to
//! its input, so the training step can seed backpropagation directly.
//! Accumulation is in f64 whatever the tensor precision.

use dcac_tape::{softmax_dim1, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DICE_SMOOTH: f64 = 1e-5;
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dice_loss: f64,
    pub ce_loss: f64,
    pub seg_loss: f64,
    pub domain_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// Pass `domain_loss = 0` when the dynamic heads are disabled.
    pub fn new(dice_loss: f64, ce_loss: f64, domain_loss: f64, lambda: f64) -> Self {
        let seg_loss = dice_loss + ce_loss;
        LossBreakdown { dice_loss, ce_loss, seg_loss, domain_loss, total: seg_loss + lambda * domain_loss, lambda }
    }
}

fn check_target<T: Real>(x: &Tensor<T>, target: &[u8]) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch(format!("expected [N, C, H, W], got {s:?}")));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    if target.len() != n * hw {
        return Err(Error::ShapeMismatch(format!("target has {} labels for {n}×{hw} pixels", target.len())));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= c) {
        return Err(Error::ShapeMismatch(format!("label {bad} for {c} classes")));
    }
    Ok((n, c, hw))
}

/// `1 − mean_{c≥1} (2Σpt + ε)/(Σp + Σt + ε)`, sums over batch and pixels.
pub fn soft_dice_loss<T: Real>(probs: &Tensor<T>, target: &[u8], smooth: f64) -> Result<(f64, Tensor<T>)> {
    let (n, c, hw) = check_target(probs, target)?;
    if c < 2 {
        return Err(Error::ShapeMismatch("Dice needs at least one foreground class".into()));
    }
    let p = probs.data();
    let mut inter = vec![0.0f64; c];
    let mut sum = vec![0.0f64; c];
    for s in 0..n {
        for ch in 1..c {
            let base = (s * c + ch) * hw;
            for i in 0..hw {
                let pv = p[base + i].as_f64();
                let t = (target[s * hw + i] as usize == ch) as u8 as f64;
                inter[ch] += pv * t;
                sum[ch] += pv + t;
            }
        }
    }
    let fg = (c - 1) as f64;
    let mut score = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for ch in 1..c {
        let (num, den) = (2.0 * inter[ch] + smooth, sum[ch] + smooth);
        score += num / den;
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in 0..hw {
                let t = (target[s * hw + i] as usize == ch) as u8 as f64;
                grad.data_mut()[base + i] = T::of(-(2.0 * t * den - num) / (den * den) / fg);
            }
        }
    }
    Ok((1.0 - score / fg, grad))
}

/// Mean over pixels of `−log softmax(logits)[target]`; gradient is `(softmax − onehot)/M`.
pub fn cross_entropy_loss<T: Real>(logits: &Tensor<T>, target: &[u8]) -> Result<(f64, Tensor<T>)> {
    let (n, c, hw) = check_target(logits, target)?;
    let l = logits.data();
    let m = (n * hw) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape());
    let mut e = vec![0.0f64; c];
    for s in 0..n {
        for i in 0..hw {
            let at = |ch: usize| (s * c + ch) * hw + i;
            let mx = (0..c).map(|ch| l[at(ch)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (ch, ev) in e.iter_mut().enumerate() {
                *ev = (l[at(ch)].as_f64() - mx).exp();
                z += *ev;
            }
            let t = target[s * hw + i] as usize;
            loss += z.ln() - (l[at(t)].as_f64() - mx);
            for (ch, ev) in e.iter().enumerate() {
                let g = ev / z - (ch == t) as u8 as f64;
                grad.data_mut()[at(ch)] = T::of(g / m);
            }
        }
    }
    Ok((loss / m, grad))
}

/// Mean of `−ln max(p[label], 1e-12)` over the batch, for probabilities `[N, K]`.
pub fn domain_loss<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let s = probs.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::ShapeMismatch(format!("domain probs {s:?} for {} labels", labels.len())));
    }
    let (n, k) = (s[0], s[1]);
    if k < 2 {
        return Err(Error::InvalidConfig("domain loss needs K >= 2".into()));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(s);
    for (i, &d) in labels.iter().enumerate() {
        if d >= k {
            return Err(Error::DomainOutOfRange { id: d, count: k });
        }
        let p = probs.data()[i * k + d].as_f64();
        loss -= p.max(LOG_CLAMP).ln();
        if p > LOG_CLAMP {
            grad.data_mut()[i * k + d] = T::of(-1.0 / (p * n as f64));
        }
    }
    Ok((loss / n as f64, grad))
}

/// Channel softmax of a `[N, C, H, W]` tensor.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(logits.shape(), softmax_dim1(logits.shape(), logits.data())).expect("same shape")
}
