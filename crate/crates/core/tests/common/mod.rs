#![allow(dead_code)]

use dcac_core::data::AugmentConfig;
use dcac_core::params::ParamStore;
use dcac_core::planner::{plan, ChannelRange, Fingerprint, PlanConfig, PlanOverrides};
use dcac_tape::gradcheck::{central_difference, relative_error, spread_indices, STEP};
use dcac_tape::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fingerprint(size: usize, domains: usize) -> Fingerprint {
    Fingerprint {
        median_height: size,
        median_width: size,
        intensity: vec![ChannelRange { p0_5: 0.0, p99_5: 1.0 }; 3],
        num_domains: domains,
        num_samples: 4,
    }
}

/// Two-stage net: patch 8, depth 1, channels [4, 8].
pub fn tiny_plan(dcac: bool, domains: usize) -> PlanConfig {
    let o = PlanOverrides {
        patch_size: Some(8),
        depth: Some(1),
        base_channels: Some(4),
        dcac_enabled: Some(dcac),
        predictor_hidden: Some(6),
        ..Default::default()
    };
    let mut p = plan(&fingerprint(64, domains), &o).unwrap();
    p.augment = AugmentConfig::disabled();
    p
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Compares analytic parameter gradients against central differences of
/// `loss` on a spread of indices per tensor; returns the worst relative error.
pub fn worst_param_error(
    params: &ParamStore<f64>,
    analytic: &ParamStore<f64>,
    per_tensor: usize,
    mut loss: impl FnMut(&ParamStore<f64>) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for name in params.names() {
        let x = params.get(&name).unwrap().clone();
        let idx = spread_indices(x.numel(), per_tensor);
        let numeric = central_difference(
            |probe| {
                let mut p = params.clone();
                *p.get_mut(&name).unwrap() = probe.clone();
                loss(&p)
            },
            &x,
            &idx,
            STEP,
        );
        let a = analytic.get(&name).unwrap();
        for (&i, &n) in idx.iter().zip(&numeric) {
            let e = relative_error(a.data()[i], n);
            if e > worst.0 {
                worst = (e, format!("{name}[{i}]: analytic {} numeric {n}", a.data()[i]));
            }
        }
    }
    worst
}
