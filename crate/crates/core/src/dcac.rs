//! Domain- and content-adaptive dynamic convolution heads.
//!
//! A domain predictor turns pooled multiscale encoder features into a
//! probability vector over source domains. A linear controller maps that
//! vector to per-sample kernels of the domain-adaptive head (DAC), which is
//! applied to the full-resolution decoder features. A second controller,
//! conditioned on the pooled bottleneck, generates the kernels of the
//! content-adaptive head (CAC), which produces the logits.

use dcac_tape::kernels::{conv_backward_sample, conv_forward_sample, ConvGeometry, Scratch};
use dcac_tape::{Backward, Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{DecoderOutput, EncoderFeatures, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{he_bound, uniform, Bound, ParamStore};
use crate::planner::PlanConfig;

/// Layers `(in_channels, out_channels, kernel_size)` of a dynamic head,
/// leaky-ReLU between layers and none after the last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicHeadSpec {
    pub layers: Vec<(usize, usize, usize)>,
}

impl DynamicHeadSpec {
    pub fn new(layers: Vec<(usize, usize, usize)>) -> Result<Self> {
        for (i, &(ci, co, k)) in layers.iter().enumerate() {
            if ci == 0 || co == 0 || k == 0 || k % 2 == 0 {
                return Err(Error::InvalidConfig(format!("dynamic layer {i}: ({ci}, {co}, {k})")));
            }
            if i > 0 && layers[i - 1].1 != ci {
                return Err(Error::InvalidConfig(format!("dynamic layer {i} input {ci} != previous output {}", layers[i - 1].1)));
            }
        }
        Ok(DynamicHeadSpec { layers })
    }

    /// `dac_layers` layers of `base → base`.
    pub fn dac(plan: &PlanConfig) -> Result<Self> {
        let (b, k) = (plan.base_channels, plan.dcac.kernel_size);
        Self::new(vec![(b, b, k); plan.dcac.dac_layers])
    }

    /// `cac_layers − 1` layers of `base → base`, then `base → num_classes`.
    pub fn cac(plan: &PlanConfig) -> Result<Self> {
        let (b, k) = (plan.base_channels, plan.dcac.kernel_size);
        let mut layers = vec![(b, b, k); plan.dcac.cac_layers.saturating_sub(1)];
        layers.push((b, plan.num_classes, k));
        Self::new(layers)
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    fn layer_len(&(ci, co, k): &(usize, usize, usize)) -> (usize, usize) {
        (co * ci * k * k, co)
    }
}

/// `Σ (in·out·k² + out)` over the layers.
pub fn param_count(spec: &DynamicHeadSpec) -> usize {
    spec.layers
        .iter()
        .map(|l| {
            let (w, b) = DynamicHeadSpec::layer_len(l);
            w + b
        })
        .sum()
}

/// Weights `[out, in, k, k]` and bias `[out]` of one dynamic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerKernels<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// One sample's generated kernels: each layer's weights then bias, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatKernelParams<T> {
    pub values: Vec<T>,
    pub spec: DynamicHeadSpec,
}

impl<T: Real> FlatKernelParams<T> {
    pub fn new(values: Vec<T>, spec: DynamicHeadSpec) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::ShapeMismatch(format!("{} kernel values for a spec of {}", values.len(), spec.param_count())));
        }
        Ok(FlatKernelParams { values, spec })
    }

    pub fn split(&self) -> Vec<LayerKernels<T>> {
        let mut off = 0;
        self.spec
            .layers
            .iter()
            .map(|l| {
                let (wl, bl) = DynamicHeadSpec::layer_len(l);
                let weight = self.values[off..off + wl].to_vec();
                let bias = self.values[off + wl..off + wl + bl].to_vec();
                off += wl + bl;
                LayerKernels { weight, bias }
            })
            .collect()
    }

    pub fn flatten(layers: &[LayerKernels<T>], spec: &DynamicHeadSpec) -> Result<Self> {
        if layers.len() != spec.layers.len() {
            return Err(Error::ShapeMismatch(format!("{} layers for a spec of {}", layers.len(), spec.layers.len())));
        }
        let mut values = Vec::with_capacity(spec.param_count());
        for (lk, l) in layers.iter().zip(&spec.layers) {
            let (wl, bl) = DynamicHeadSpec::layer_len(l);
            if lk.weight.len() != wl || lk.bias.len() != bl {
                return Err(Error::ShapeMismatch(format!("layer {l:?} got {} weights, {} biases", lk.weight.len(), lk.bias.len())));
            }
            values.extend_from_slice(&lk.weight);
            values.extend_from_slice(&lk.bias);
        }
        Ok(FlatKernelParams { values, spec: spec.clone() })
    }

    /// Row `n` of a `[N, P]` kernel tensor.
    pub fn from_row(t: &Tensor<T>, n: usize, spec: &DynamicHeadSpec) -> Result<Self> {
        let (_, p) = t.dims2();
        Self::new(t.data()[n * p..(n + 1) * p].to_vec(), spec.clone())
    }
}

/// Adds `dcac.*` parameters for the predictor and both controllers.
pub fn build<T: Real>(plan: &PlanConfig, rng: &mut ChaCha8Rng, ps: &mut ParamStore<T>) -> Result<()> {
    let cond: usize = plan.channels().iter().sum();
    let (hidden, k) = (plan.dcac.predictor_hidden, plan.num_domains);
    ps.insert("dcac.predictor.fc1.weight", uniform(&[hidden, cond], he_bound(cond, LEAKY_SLOPE), rng));
    ps.insert("dcac.predictor.fc1.bias", Tensor::zeros(&[hidden]));
    ps.insert("dcac.predictor.fc2.weight", uniform(&[k, hidden], (1.0 / hidden as f64).sqrt(), rng));
    ps.insert("dcac.predictor.fc2.bias", Tensor::zeros(&[k]));

    // DAC: each domain column is itself a He-initialized kernel set, so any
    // point on the simplex yields a sensibly scaled interpolation.
    let dac = DynamicHeadSpec::dac(plan)?;
    let mut w = Tensor::zeros(&[dac.param_count(), k]);
    fill_controller(&dac, w.data_mut(), k, 1.0, rng);
    ps.insert("dcac.dac_controller.weight", w);
    ps.insert("dcac.dac_controller.bias", Tensor::zeros(&[dac.param_count()]));

    // CAC: a static He-initialized kernel in the bias plus a small
    // content-dependent perturbation.
    let cac = DynamicHeadSpec::cac(plan)?;
    let d = plan.channels()[plan.depth];
    let mut w = Tensor::zeros(&[cac.param_count(), d]);
    fill_controller(&cac, w.data_mut(), d, 1.0 / (d as f64).sqrt(), rng);
    ps.insert("dcac.cac_controller.weight", w);
    let mut b = Tensor::zeros(&[cac.param_count()]);
    fill_controller(&cac, b.data_mut(), 1, 1.0, rng);
    ps.insert("dcac.cac_controller.bias", b);
    Ok(())
}

/// Fills the weight rows of a `[P, cols]` controller matrix uniformly within
/// `scale ×` the target layer's He bound; bias rows stay zero.
fn fill_controller<T: Real>(spec: &DynamicHeadSpec, w: &mut [T], cols: usize, scale: f64, rng: &mut ChaCha8Rng) {
    let mut row = 0;
    for l in &spec.layers {
        let (wl, bl) = DynamicHeadSpec::layer_len(l);
        let bound = scale * he_bound(l.0 * l.2 * l.2, LEAKY_SLOPE);
        let block: Tensor<T> = uniform(&[wl * cols], bound, rng);
        w[row * cols..(row + wl) * cols].copy_from_slice(block.data());
        row += wl + bl;
    }
}

pub fn dcac_param_count(plan: &PlanConfig) -> Result<usize> {
    let cond: usize = plan.channels().iter().sum();
    let (h, k, d) = (plan.dcac.predictor_hidden, plan.num_domains, plan.channels()[plan.depth]);
    let (dac, cac) = (DynamicHeadSpec::dac(plan)?.param_count(), DynamicHeadSpec::cac(plan)?.param_count());
    Ok(h * cond + h + k * h + k + dac * k + dac + cac * d + cac)
}

/// Spatial mean of every encoder stage, concatenated in stage order: `[N, Σ c_s]`.
pub fn pool_concat<T: Real>(tape: &mut Tape<T>, features: &EncoderFeatures) -> Var {
    let pooled: Vec<Var> = features.stages.iter().map(|&s| tape.global_avg_pool(s)).collect();
    tape.concat(&pooled)
}

/// Two-layer perceptron with softmax output: `[N, D] → [N, K]` probabilities.
pub fn predict_domain<T: Real>(tape: &mut Tape<T>, p: &Bound, cond: Var) -> Result<Var> {
    let (w1, w2) = (p.var("dcac.predictor.fc1.weight"), p.var("dcac.predictor.fc2.weight"));
    let d = tape.value(w1).shape()[1];
    let got = tape.value(cond).shape().to_vec();
    if got.len() != 2 || got[1] != d {
        return Err(Error::ShapeMismatch(format!("predictor expects [N, {d}], got {got:?}")));
    }
    let h = tape.linear(cond, w1, Some(p.var("dcac.predictor.fc1.bias")));
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    let logits = tape.linear(h, w2, Some(p.var("dcac.predictor.fc2.bias")));
    Ok(tape.softmax(logits))
}

/// Linear controller `cond [N, D] → kernels [N, P]`; `P` must equal the head's parameter count.
pub fn generate_kernels<T: Real>(tape: &mut Tape<T>, cond: Var, w: Var, b: Var, spec: &DynamicHeadSpec) -> Result<Var> {
    let (o, d) = tape.value(w).dims2();
    if o != spec.param_count() {
        return Err(Error::ShapeMismatch(format!("controller width {o} != param_count {}", spec.param_count())));
    }
    let cs = tape.value(cond).shape().to_vec();
    if cs.len() != 2 || cs[1] != d {
        return Err(Error::ShapeMismatch(format!("controller expects [N, {d}], got {cs:?}")));
    }
    Ok(tape.linear(cond, w, Some(b)))
}

/// Applies the per-sample kernels in `flat: [N, P]` to `x: [N, C, H, W]`,
/// leaky-ReLU between layers, same-padding.
pub fn dynamic_conv_apply<T: Real>(tape: &mut Tape<T>, x: Var, flat: Var, spec: &DynamicHeadSpec) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    let fs = tape.value(flat).shape().to_vec();
    let first_in = spec.layers.first().map(|l| l.0);
    if xs.len() != 4 || first_in.is_some_and(|c| c != xs[1]) {
        return Err(Error::ShapeMismatch(format!("dynamic head expects {first_in:?} channels, got {xs:?}")));
    }
    if fs != [xs[0], spec.param_count()] {
        return Err(Error::ShapeMismatch(format!("kernels {fs:?}, expected [{}, {}]", xs[0], spec.param_count())));
    }
    let mut h = x;
    let mut off = 0;
    for (i, l) in spec.layers.iter().enumerate() {
        let (wl, bl) = DynamicHeadSpec::layer_len(l);
        let w = tape.slice_dim1(flat, off, wl);
        let b = tape.slice_dim1(flat, off + wl, bl);
        off += wl + bl;
        h = dynamic_conv(tape, h, w, b, l.1, l.2);
        if i + 1 < spec.layers.len() {
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
    }
    Ok(h)
}

struct DynamicConv {
    out_c: usize,
    k: usize,
}

impl DynamicConv {
    fn geometry(&self, xs: &[usize]) -> ConvGeometry {
        ConvGeometry::new(xs[1], xs[2], xs[3], self.k, 1, (self.k - 1) / 2)
    }
}

/// Convolution whose weights `[N, Co·C·k·k]` and bias `[N, Co]` differ per sample.
fn dynamic_conv<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Var, out_c: usize, k: usize) -> Var {
    let op = DynamicConv { out_c, k };
    let xv = tape.value(x);
    let (n, _, h, wd) = xv.dims4();
    let g = op.geometry(xv.shape());
    let (wv, bv) = (tape.value(w), tape.value(b));
    let (wp, bp) = (wv.shape()[1], bv.shape()[1]);
    let mut y = Tensor::zeros(&[n, out_c, h, wd]);
    let mut scratch = Scratch::new();
    for s in 0..n {
        conv_forward_sample(
            &g,
            xv.sample(s),
            &wv.data()[s * wp..(s + 1) * wp],
            Some(&bv.data()[s * bp..(s + 1) * bp]),
            out_c,
            y.sample_mut(s),
            &mut scratch,
        );
    }
    tape.push(y, &[x, w, b], op)
}

impl<T: Real> Backward<T> for DynamicConv {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, gy: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let n = x.shape()[0];
        let g = self.geometry(x.shape());
        let (wp, bp) = (w.shape()[1], self.out_c);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut gb = needs[2].then(|| Tensor::zeros(inputs[2].shape()));
        let mut scratch = Scratch::new();
        for s in 0..n {
            conv_backward_sample(
                &g,
                x.sample(s),
                &w.data()[s * wp..(s + 1) * wp],
                self.out_c,
                gy.sample(s),
                gw.as_mut().map(|t| &mut t.data_mut()[s * wp..(s + 1) * wp]),
                gb.as_mut().map(|t| &mut t.data_mut()[s * bp..(s + 1) * bp]),
                gx.as_mut().map(|t| t.sample_mut(s)),
                &mut scratch,
            );
        }
        vec![gx, gw, gb]
    }
}

/// Domain-adaptive head: kernels generated from the domain encoding `probs: [N, K]`.
pub fn dac_head<T: Real>(tape: &mut Tape<T>, p: &Bound, plan: &PlanConfig, pre_head: Var, probs: Var) -> Result<Var> {
    let spec = DynamicHeadSpec::dac(plan)?;
    let cond = if plan.dcac.stop_gradient_domain_encoding { tape.detach(probs) } else { probs };
    let flat = generate_kernels(tape, cond, p.var("dcac.dac_controller.weight"), p.var("dcac.dac_controller.bias"), &spec)?;
    dynamic_conv_apply(tape, pre_head, flat, &spec)
}

/// Content-adaptive head: kernels generated from the pooled bottleneck; returns logits.
pub fn cac_head<T: Real>(tape: &mut Tape<T>, p: &Bound, plan: &PlanConfig, dac_out: Var, bottleneck: Var) -> Result<Var> {
    let spec = DynamicHeadSpec::cac(plan)?;
    let cond = tape.global_avg_pool(bottleneck);
    let flat = generate_kernels(tape, cond, p.var("dcac.cac_controller.weight"), p.var("dcac.cac_controller.bias"), &spec)?;
    dynamic_conv_apply(tape, dac_out, flat, &spec)
}

/// Full DCAC stack on top of a backbone pass: `(logits, domain probabilities)`.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    plan: &PlanConfig,
    features: &EncoderFeatures,
    decoder: &DecoderOutput,
) -> Result<(Var, Var)> {
    let cond = pool_concat(tape, features);
    let probs = predict_domain(tape, p, cond)?;
    let dac = dac_head(tape, p, plan, decoder.pre_head, probs)?;
    let dac = tape.leaky_relu(dac, LEAKY_SLOPE);
    let logits = cac_head(tape, p, plan, dac, features.bottleneck())?;
    Ok((logits, probs))
}
