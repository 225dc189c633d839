//! Joint image/mask augmentation and the planar flip/rotation helpers it
//! shares with test-time augmentation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::Patch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Applied independently to each axis.
    pub mirror_probability: f64,
    pub rotate_probability: f64,
    pub intensity_probability: f64,
    pub intensity_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { mirror_probability: 0.5, rotate_probability: 0.5, intensity_probability: 0.15, intensity_range: (0.9, 1.1) }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig { mirror_probability: 0.0, rotate_probability: 0.0, intensity_probability: 0.0, ..Self::default() }
    }
}

/// Reverses the x axis of each `h×w` plane.
pub fn flip_horizontal<V: Copy>(data: &mut [V], h: usize, w: usize) {
    debug_assert_eq!(data.len() % (h * w), 0);
    for row in data.chunks_mut(w) {
        row.reverse();
    }
}

/// Reverses the y axis of each `h×w` plane.
pub fn flip_vertical<V: Copy>(data: &mut [V], h: usize, w: usize) {
    for plane in data.chunks_mut(h * w) {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// Rotates each square `n×n` plane by 90° counter-clockwise, `times` times.
pub fn rot90<V: Copy + Default>(data: &mut [V], n: usize, times: usize) {
    let mut tmp = vec![V::default(); n * n];
    for _ in 0..times % 4 {
        for plane in data.chunks_mut(n * n) {
            for y in 0..n {
                for x in 0..n {
                    tmp[(n - 1 - x) * n + y] = plane[y * n + x];
                }
            }
            plane.copy_from_slice(&tmp);
        }
    }
}

/// Mirroring along either axis and 90° rotations act on image and mask
/// together; multiplicative intensity scaling acts on the image only and is
/// clipped to `[0, 1]`.
pub fn augment(batch: Vec<Patch>, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    batch
        .into_iter()
        .map(|mut p| {
            let n = p.size;
            if rng.gen_bool(cfg.mirror_probability) {
                flip_horizontal(&mut p.image, n, n);
                flip_horizontal(&mut p.mask, n, n);
            }
            if rng.gen_bool(cfg.mirror_probability) {
                flip_vertical(&mut p.image, n, n);
                flip_vertical(&mut p.mask, n, n);
            }
            if rng.gen_bool(cfg.rotate_probability) {
                let k = rng.gen_range(1..4);
                rot90(&mut p.image, n, k);
                rot90(&mut p.mask, n, k);
            }
            if rng.gen_bool(cfg.intensity_probability) {
                let (lo, hi) = cfg.intensity_range;
                let s = if hi > lo { rng.gen_range(lo..hi) } else { lo } as f32;
                scale_intensity(&mut p.image, s);
            }
            p
        })
        .collect()
}

pub fn scale_intensity(image: &mut [f32], s: f32) {
    for v in image {
        *v = (*v * s).clamp(0.0, 1.0);
    }
}
