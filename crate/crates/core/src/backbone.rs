//! U-Net style encoder-decoder.
//!
//! Every stage has two `conv3×3 → instance norm → leaky-ReLU` blocks. Stages
//! after the first open with a stride-2 convolution; the decoder upsamples
//! with 2×2 transposed convolutions and concatenates the matching encoder
//! stage. Convolutions feeding a normalization carry no bias.

use dcac_tape::{Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{he_bound, uniform, Bound, ParamStore};
use crate::planner::PlanConfig;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const NORM_EPS: f64 = 1e-5;

/// Encoder output per stage; stage `s` has `c_s` channels at `patch / 2^s`.
#[derive(Debug, Clone)]
pub struct EncoderFeatures {
    pub stages: Vec<Var>,
}

impl EncoderFeatures {
    pub fn bottleneck(&self) -> Var {
        *self.stages.last().expect("at least one stage")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// Full-resolution features with `base_channels` channels.
    pub pre_head: Var,
    pub baseline_logits: Var,
}

fn conv_param<T: Real>(ps: &mut ParamStore<T>, name: &str, co: usize, ci: usize, k: usize, rng: &mut ChaCha8Rng) {
    ps.insert(format!("{name}.weight"), uniform(&[co, ci, k, k], he_bound(ci * k * k, LEAKY_SLOPE), rng));
}

fn norm_param<T: Real>(ps: &mut ParamStore<T>, name: &str, c: usize) {
    ps.insert(format!("{name}.gamma"), Tensor::full(&[c], T::one()));
    ps.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
}

/// Adds backbone parameters (`enc.*`, `dec.*`, `head.*`) to `ps`.
/// Initialization draws from `rng` in a fixed order.
pub fn build<T: Real>(plan: &PlanConfig, rng: &mut ChaCha8Rng, ps: &mut ParamStore<T>) -> Result<()> {
    plan.validate()?;
    let ch = plan.channels();
    for s in 0..=plan.depth {
        let cin = if s == 0 { plan.in_channels } else { ch[s - 1] };
        conv_param(ps, &format!("enc.{s}.conv0"), ch[s], cin, 3, rng);
        norm_param(ps, &format!("enc.{s}.norm0"), ch[s]);
        conv_param(ps, &format!("enc.{s}.conv1"), ch[s], ch[s], 3, rng);
        norm_param(ps, &format!("enc.{s}.norm1"), ch[s]);
    }
    for s in (0..plan.depth).rev() {
        // Transposed-conv weights are [C_in, C_out, 2, 2]; fan-in follows the
        // dim-1 convention, C_out·2·2.
        let up = uniform(&[ch[s + 1], ch[s], 2, 2], he_bound(ch[s] * 4, LEAKY_SLOPE), rng);
        ps.insert(format!("dec.{s}.up.weight"), up);
        ps.insert(format!("dec.{s}.up.bias"), Tensor::zeros(&[ch[s]]));
        conv_param(ps, &format!("dec.{s}.conv0"), ch[s], 2 * ch[s], 3, rng);
        norm_param(ps, &format!("dec.{s}.norm0"), ch[s]);
        conv_param(ps, &format!("dec.{s}.conv1"), ch[s], ch[s], 3, rng);
        norm_param(ps, &format!("dec.{s}.norm1"), ch[s]);
    }
    conv_param(ps, "head", plan.num_classes, ch[0], 1, rng);
    ps.insert("head.bias", Tensor::zeros(&[plan.num_classes]));
    Ok(())
}

/// Closed-form backbone parameter count.
pub fn param_count(plan: &PlanConfig) -> usize {
    let ch = plan.channels();
    let mut n = 0;
    for s in 0..=plan.depth {
        let cin = if s == 0 { plan.in_channels } else { ch[s - 1] };
        n += ch[s] * cin * 9 + ch[s] * ch[s] * 9 + 4 * ch[s];
    }
    for s in 0..plan.depth {
        n += ch[s + 1] * ch[s] * 4 + ch[s];
        n += ch[s] * 2 * ch[s] * 9 + ch[s] * ch[s] * 9 + 4 * ch[s];
    }
    n + plan.num_classes * ch[0] + plan.num_classes
}

fn block<T: Real>(tape: &mut Tape<T>, p: &Bound, x: Var, conv: &str, norm: &str, stride: usize) -> Var {
    let y = tape.conv2d(x, p.var(&format!("{conv}.weight")), None, stride, 1);
    let y = tape.instance_norm(y, p.var(&format!("{norm}.gamma")), p.var(&format!("{norm}.beta")), NORM_EPS);
    tape.leaky_relu(y, LEAKY_SLOPE)
}

/// Runs the backbone on `x: [N, in_channels, P, P]`.
pub fn forward<T: Real>(tape: &mut Tape<T>, p: &Bound, plan: &PlanConfig, x: Var) -> Result<(EncoderFeatures, DecoderOutput)> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != plan.in_channels || shape[2] != plan.patch_size || shape[3] != plan.patch_size {
        return Err(Error::ShapeMismatch(format!(
            "input {shape:?}, expected [N, {}, {}, {}]",
            plan.in_channels, plan.patch_size, plan.patch_size
        )));
    }
    let mut stages = Vec::with_capacity(plan.depth + 1);
    let mut h = x;
    for s in 0..=plan.depth {
        h = block(tape, p, h, &format!("enc.{s}.conv0"), &format!("enc.{s}.norm0"), if s == 0 { 1 } else { 2 });
        h = block(tape, p, h, &format!("enc.{s}.conv1"), &format!("enc.{s}.norm1"), 1);
        stages.push(h);
    }
    for s in (0..plan.depth).rev() {
        let up = tape.conv_transpose2d(h, p.var(&format!("dec.{s}.up.weight")), Some(p.var(&format!("dec.{s}.up.bias"))));
        let cat = tape.concat(&[up, stages[s]]);
        h = block(tape, p, cat, &format!("dec.{s}.conv0"), &format!("dec.{s}.norm0"), 1);
        h = block(tape, p, h, &format!("dec.{s}.conv1"), &format!("dec.{s}.norm1"), 1);
    }
    let logits = tape.conv2d(h, p.var("head.weight"), Some(p.var("head.bias")), 1, 0);
    Ok((EncoderFeatures { stages }, DecoderOutput { pre_head: h, baseline_logits: logits }))
}
