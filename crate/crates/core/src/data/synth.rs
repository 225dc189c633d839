//! Deterministic synthetic multi-domain segmentation data.
//!
//! Masks are unions of random ellipses drawn from one distribution shared by
//! every domain. Domains differ only in appearance: a hue rotation about the
//! gray axis, the frequency of a luminance texture, and additive noise. The
//! foreground is darker than the background in every domain, so the label is
//! recoverable regardless of hue.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::{ImageData, MaskData};
use super::manifest::{DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    /// Rotation about the gray axis, in degrees.
    pub hue_degrees: f64,
    /// Texture frequency in cycles per pixel.
    pub texture_frequency: f64,
    /// Standard deviation of per-channel additive noise.
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_domains: usize,
    pub samples_per_domain: usize,
    pub image_size: usize,
    /// Inclusive range of ellipses per mask.
    pub blob_count: (usize, usize),
    pub styles: Vec<DomainStyle>,
}

const BACKGROUND: [f64; 3] = [0.80, 0.64, 0.74];
const FOREGROUND: [f64; 3] = [0.48, 0.30, 0.56];
const TEXTURE_AMPLITUDE: (f64, f64) = (0.05, 0.09);

impl SynthSpec {
    /// Evenly spread hues, increasing texture frequency and noise per domain.
    pub fn new(num_domains: usize, samples_per_domain: usize, image_size: usize) -> Self {
        let styles = (0..num_domains)
            .map(|d| DomainStyle {
                hue_degrees: 360.0 * d as f64 / num_domains.max(1) as f64,
                texture_frequency: 0.05 + 0.03 * d as f64,
                noise_level: 0.02 + 0.01 * d as f64,
            })
            .collect();
        SynthSpec { num_domains, samples_per_domain, image_size, blob_count: (1, 4), styles }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_domains < 2 {
            return Err(Error::InvalidConfig("synthetic data needs at least 2 domains".into()));
        }
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!("image_size {} < 32", self.image_size)));
        }
        if self.styles.len() != self.num_domains {
            return Err(Error::InvalidConfig(format!("{} domain styles for {} domains", self.styles.len(), self.num_domains)));
        }
        let (lo, hi) = self.blob_count;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("blob_count range ({lo}, {hi}) is empty or allows no blobs")));
        }
        Ok(())
    }

    pub fn domain_name(d: usize) -> String {
        format!("domain{d}")
    }
}

/// Writes `num_domains × samples_per_domain` image/mask pairs plus
/// `manifest.json` into `out_dir`. Output is a pure function of `(spec, seed)`.
pub fn synth_generate(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    for sub in ["images", "masks"] {
        let p = out_dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut samples = Vec::with_capacity(spec.num_domains * spec.samples_per_domain);
    for d in 0..spec.num_domains {
        for i in 0..spec.samples_per_domain {
            let (image, mask) = render_sample(spec, seed, d, i);
            let name = format!("{}_{i:04}.png", SynthSpec::domain_name(d));
            let image_path = out_dir.join("images").join(&name);
            let mask_path = out_dir.join("masks").join(&name);
            image.write_png(&image_path)?;
            mask.write_png(&mask_path)?;
            samples.push(Sample { image: image_path, mask: mask_path, domain: d });
        }
    }
    let manifest = DatasetManifest { domains: (0..spec.num_domains).map(SynthSpec::domain_name).collect(), seed, samples, balanced: true };
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Renders one sample in memory.
pub fn render_sample(spec: &SynthSpec, seed: u64, domain: usize, index: usize) -> (ImageData, MaskData) {
    let n = spec.image_size;
    // Geometry depends on (seed, domain, index) but its distribution is domain-independent.
    let mut geo = seeded(seed, &[1, domain as u64, index as u64]);
    let mask = render_mask(n, spec.blob_count, &mut geo);
    let mut look = seeded(seed, &[2, domain as u64, index as u64]);
    let image = render_image(&mask, &spec.styles[domain], &mut look);
    (image, mask)
}

fn render_mask(n: usize, (lo, hi): (usize, usize), rng: &mut ChaCha8Rng) -> MaskData {
    let mut mask = MaskData::zeros(n, n);
    let nf = n as f64;
    let blobs = rng.gen_range(lo..=hi);
    for _ in 0..blobs {
        let cy = rng.gen_range(0.0..nf);
        let cx = rng.gen_range(0.0..nf);
        let a = rng.gen_range(nf / 12.0..nf / 5.0);
        let b = rng.gen_range(nf / 12.0..nf / 5.0);
        let theta = rng.gen_range(0.0..PI);
        let (st, ct) = theta.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    mask.labels[y * n + x] = 1;
                }
            }
        }
    }
    mask
}

fn render_image(mask: &MaskData, style: &DomainStyle, rng: &mut ChaCha8Rng) -> ImageData {
    let (h, w) = (mask.height, mask.width);
    let mut img = ImageData::zeros(h, w);
    let f = style.texture_frequency;
    let orient = rng.gen_range(0.0..PI);
    let (so, co) = orient.sin_cos();
    let phase: (f64, f64) = (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI));
    let brightness = rng.gen_range(-0.03..0.03);
    let rot = hue_rotation(style.hue_degrees);
    for y in 0..h {
        for x in 0..w {
            let fg = mask.labels[y * w + x] != 0;
            let (u, v) = (x as f64 * co + y as f64 * so, -(x as f64) * so + y as f64 * co);
            let tex = (2.0 * PI * f * u + phase.0).sin() * (2.0 * PI * f * v + phase.1).sin();
            let (base, amp) = if fg { (FOREGROUND, TEXTURE_AMPLITUDE.1) } else { (BACKGROUND, TEXTURE_AMPLITUDE.0) };
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = base[c] + amp * tex + brightness + style.noise_level * standard_normal(rng);
            }
            let out = apply(&rot, rgb);
            for (c, v) in out.iter().enumerate() {
                img.pixels[(c * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// Rotation by `degrees` about the gray axis `(1,1,1)/√3`; preserves `R+G+B`.
pub fn hue_rotation(degrees: f64) -> [[f64; 3]; 3] {
    let t = degrees.to_radians();
    let (s, c) = t.sin_cos();
    let k = [[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]];
    let u = 1.0 / 3f64.sqrt();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = if i == j { c } else { 0.0 } + (1.0 - c) / 3.0 + s * u * k[i][j];
        }
    }
    m
}

fn apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

/// Chroma-plane hue angle in degrees: `atan2(√3(G−B), 2R−G−B)`.
pub fn chroma_hue_degrees(r: f64, g: f64, b: f64) -> f64 {
    (3f64.sqrt() * (g - b)).atan2(2.0 * r - g - b).to_degrees()
}
