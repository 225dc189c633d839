//! Backbone plus optional dynamic heads behind one interface.

use dcac_tape::{Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, DecoderOutput, EncoderFeatures};
use crate::dcac;
use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::planner::PlanConfig;

/// Initial parameters for `plan`: backbone first, then the dynamic heads when enabled.
pub fn build<T: Real>(plan: &PlanConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore<T>> {
    let mut ps = ParamStore::new();
    backbone::build(plan, rng, &mut ps)?;
    if plan.dcac_enabled {
        dcac::build(plan, rng, &mut ps)?;
    }
    Ok(ps)
}

pub struct ModelOutput {
    pub logits: Var,
    /// Domain probabilities `[N, K]`, DCAC only.
    pub domain_probs: Option<Var>,
    pub features: EncoderFeatures,
    pub decoder: DecoderOutput,
}

pub fn forward<T: Real>(tape: &mut Tape<T>, p: &Bound, plan: &PlanConfig, x: Var) -> Result<ModelOutput> {
    let (features, decoder) = backbone::forward(tape, p, plan, x)?;
    let (logits, domain_probs) = if plan.dcac_enabled {
        let (l, d) = dcac::forward(tape, p, plan, &features, &decoder)?;
        (l, Some(d))
    } else {
        (decoder.baseline_logits, None)
    };
    Ok(ModelOutput { logits, domain_probs, features, decoder })
}

/// Gradient-free forward: logits `[N, C, P, P]` and domain probabilities.
pub fn predict<T: Real>(params: &ParamStore<T>, plan: &PlanConfig, batch: Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(batch);
    let out = forward(&mut tape, &bound, plan, x)?;
    let probs = out.domain_probs.map(|d| tape.value(d).clone());
    Ok((tape.value(out.logits).clone(), probs))
}
