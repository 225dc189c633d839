//! Dataset fingerprinting and closed-form network/training configuration.
//!
//! Three rules replace the full self-configuring planner: the patch is the
//! largest power of two that fits the median image (capped at 512), depth is
//! the number of halvings that keep the bottleneck at least 4 pixels wide
//! (capped at 5), and channels double per stage from 32 up to 320.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Dataset, DatasetManifest};
use crate::error::{Error, Result};

pub const MIN_PATCH: usize = 32;
pub const MAX_PATCH: usize = 512;
pub const MAX_DEPTH: usize = 5;
pub const MIN_BOTTLENECK: usize = 4;
const PIXEL_SUBSAMPLE: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub p0_5: f64,
    pub p99_5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub median_height: usize,
    pub median_width: usize,
    pub intensity: Vec<ChannelRange>,
    pub num_domains: usize,
    pub num_samples: usize,
}

pub fn compute_fingerprint(manifest: &DatasetManifest) -> Result<Fingerprint> {
    if manifest.is_empty() {
        return Err(Error::EmptyDataset);
    }
    fingerprint_dataset(&Dataset::load(manifest)?)
}

/// Fingerprint of an already-decoded dataset. Percentiles use a deterministic
/// strided subsample of at most 10⁶ pooled pixels.
pub fn fingerprint_dataset(dataset: &Dataset) -> Result<Fingerprint> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let heights: Vec<usize> = dataset.samples.iter().map(|s| s.image.height).collect();
    let widths: Vec<usize> = dataset.samples.iter().map(|s| s.image.width).collect();
    let total: usize = dataset.samples.iter().map(|s| s.image.height * s.image.width).sum();
    let stride = total.div_ceil(PIXEL_SUBSAMPLE).max(1);
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let mut global = 0usize;
    for s in &dataset.samples {
        let n = s.image.height * s.image.width;
        // first pooled index >= global that is a multiple of stride
        let mut i = (stride - global % stride) % stride;
        while i < n {
            for (c, pool) in pooled.iter_mut().enumerate() {
                pool.push(s.image.plane(c)[i] as f64);
            }
            i += stride;
        }
        global += n;
    }
    let intensity = pooled
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            ChannelRange { p0_5: percentile(&v, 0.5), p99_5: percentile(&v, 99.5) }
        })
        .collect();
    Ok(Fingerprint {
        median_height: median(&heights),
        median_width: median(&widths),
        intensity,
        num_domains: dataset.num_domains(),
        num_samples: dataset.len(),
    })
}

/// Median; the mean of the two middle values (rounded down) for even counts.
pub fn median(values: &[usize]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Linear-interpolation percentile of sorted data, `q` in percent.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcacConfig {
    pub predictor_hidden: usize,
    /// Layers of the domain-adaptive head (`base → base`).
    pub dac_layers: usize,
    /// Layers of the content-adaptive head; the last maps to the class count.
    pub cac_layers: usize,
    pub kernel_size: usize,
    /// Blocks segmentation gradients from reaching the domain predictor
    /// through the domain-adaptive controller.
    pub stop_gradient_domain_encoding: bool,
}

impl Default for DcacConfig {
    fn default() -> Self {
        DcacConfig { predictor_hidden: 128, dac_layers: 1, cac_layers: 2, kernel_size: 1, stop_gradient_domain_encoding: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub num_domains: usize,
    pub batch_size: usize,
    pub minibatches_per_epoch: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    pub poly_exponent: f64,
    pub ema_alpha: f64,
    pub domain_loss_weight: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub dice_smooth: f64,
    pub foreground_oversample: f64,
    pub augment: AugmentConfig,
    pub dcac_enabled: bool,
    pub dcac: DcacConfig,
    pub seed: u64,
}

impl PlanConfig {
    /// Channel width of each encoder stage `0..=depth`.
    pub fn channels(&self) -> Vec<usize> {
        (0..=self.depth).map(|s| (self.base_channels << s).min(self.max_channels)).collect()
    }

    pub fn bottleneck_size(&self) -> usize {
        self.patch_size >> self.depth
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth < 1 {
            return bad("depth must be at least 1".into());
        }
        if !self.patch_size.is_multiple_of(1 << self.depth) {
            return bad(format!("patch {} not divisible by 2^{}", self.patch_size, self.depth));
        }
        if self.bottleneck_size() < MIN_BOTTLENECK {
            return bad(format!("bottleneck {} < {MIN_BOTTLENECK}", self.bottleneck_size()));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return bad(format!("channels base {} max {}", self.base_channels, self.max_channels));
        }
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad(format!("in_channels {} num_classes {}", self.in_channels, self.num_classes));
        }
        if self.batch_size == 0 || self.minibatches_per_epoch == 0 {
            return bad("batch_size and minibatches_per_epoch must be positive".into());
        }
        if self.initial_lr.is_nan() || self.initial_lr < 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("lr {} momentum {}", self.initial_lr, self.momentum));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) || !(0.0..=1.0).contains(&self.foreground_oversample) {
            return bad("ema_alpha and foreground_oversample must lie in [0, 1]".into());
        }
        if self.num_domains == 0 {
            return bad("num_domains must be at least 1".into());
        }
        if self.dcac_enabled {
            if self.num_domains < 2 {
                return bad("DCAC needs at least 2 source domains".into());
            }
            let d = &self.dcac;
            if d.dac_layers == 0 || d.cac_layers == 0 || d.kernel_size.is_multiple_of(2) || d.predictor_hidden == 0 {
                return bad(format!("invalid dynamic head config {d:?}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: PlanConfig = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// CPU-feasible: patch 64, depth 4, base 16, 20 minibatches × 60 epochs.
    Desk,
    /// 250 minibatches of 2 per epoch; 1000 epochs (2500 with DCAC).
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanOverrides {
    pub preset: Option<Preset>,
    pub patch_size: Option<usize>,
    pub depth: Option<usize>,
    pub base_channels: Option<usize>,
    pub max_channels: Option<usize>,
    pub num_classes: Option<usize>,
    pub batch_size: Option<usize>,
    pub minibatches_per_epoch: Option<usize>,
    pub epochs: Option<usize>,
    pub initial_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub domain_loss_weight: Option<f64>,
    pub dcac_enabled: Option<bool>,
    pub predictor_hidden: Option<usize>,
    pub stop_gradient_domain_encoding: Option<bool>,
    pub seed: Option<u64>,
}

fn prev_power_of_two(n: usize) -> usize {
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Derives a plan from a fingerprint, then applies preset and explicit overrides.
pub fn plan(fp: &Fingerprint, overrides: &PlanOverrides) -> Result<PlanConfig> {
    let min_dim = fp.median_height.min(fp.median_width);
    if min_dim < MIN_PATCH {
        return Err(Error::InvalidConfig(format!("median image size {min_dim} below minimum patch {MIN_PATCH}")));
    }
    let patch = prev_power_of_two(min_dim).min(MAX_PATCH);
    let depth = (1..=MAX_DEPTH).take_while(|d| patch >> d >= MIN_BOTTLENECK).last().unwrap_or(1);
    let dcac_enabled = overrides.dcac_enabled.unwrap_or(false);
    let mut p = PlanConfig {
        patch_size: patch,
        depth,
        base_channels: 32,
        max_channels: 320,
        in_channels: 3,
        num_classes: 2,
        num_domains: fp.num_domains.max(1),
        batch_size: 2,
        minibatches_per_epoch: 250,
        epochs: if dcac_enabled { 2500 } else { 1000 },
        initial_lr: 0.01,
        momentum: 0.99,
        poly_exponent: 0.9,
        ema_alpha: 0.9,
        domain_loss_weight: 1.0,
        grad_clip_norm: Some(12.0),
        dice_smooth: 1e-5,
        foreground_oversample: 1.0 / 3.0,
        augment: AugmentConfig::default(),
        dcac_enabled,
        dcac: DcacConfig::default(),
        seed: 0,
    };
    if overrides.preset == Some(Preset::Desk) {
        p.patch_size = 64;
        p.depth = 4;
        p.base_channels = 16;
        p.minibatches_per_epoch = 20;
        p.epochs = 60;
    }
    let o = overrides;
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = o.$field { p.$field = v; } )* };
    }
    apply!(patch_size, depth, base_channels, max_channels, num_classes, batch_size, minibatches_per_epoch, epochs);
    apply!(initial_lr, momentum, domain_loss_weight, seed);
    if let Some(h) = o.predictor_hidden {
        p.dcac.predictor_hidden = h;
    }
    if let Some(s) = o.stop_gradient_domain_encoding {
        p.dcac.stop_gradient_domain_encoding = s;
    }
    p.validate()?;
    Ok(p)
}
