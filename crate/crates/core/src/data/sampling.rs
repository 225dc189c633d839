//! Training patch sampling with foreground oversampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Dataset, LoadedSample};
use crate::error::{Error, Result};
use crate::planner::PlanConfig;

/// One training crop. `image` is CHW with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub size: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub domain: usize,
}

impl Patch {
    pub fn has_foreground(&self) -> bool {
        self.mask.iter().any(|&v| v != 0)
    }
}

/// Draws `plan.batch_size` patches. Cases are chosen uniformly; each crop is
/// centered on a random foreground pixel with probability
/// `plan.foreground_oversample` when the case has foreground, and uniform
/// otherwise. Images smaller than the patch are zero-padded symmetrically.
pub fn sample_minibatch(dataset: &Dataset, plan: &PlanConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Patch>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = plan.patch_size;
    (0..plan.batch_size)
        .map(|_| {
            let case = &dataset.samples[rng.gen_range(0..dataset.len())];
            let want_fg = rng.gen_bool(plan.foreground_oversample.clamp(0.0, 1.0));
            Ok(crop(case, p, want_fg, rng))
        })
        .collect()
}

fn crop(case: &LoadedSample, p: usize, want_fg: bool, rng: &mut ChaCha8Rng) -> Patch {
    let (h, w) = (case.image.height, case.image.width);
    let (hp, wp) = (h.max(p), w.max(p));
    let (py, px) = ((hp - h) / 2, (wp - w) / 2);
    let (oy, ox) = if want_fg && !case.foreground.is_empty() {
        let idx = case.foreground[rng.gen_range(0..case.foreground.len())] as usize;
        let (fy, fx) = (idx / w + py, idx % w + px);
        (fy.saturating_sub(p / 2).min(hp - p), fx.saturating_sub(p / 2).min(wp - p))
    } else {
        (rng.gen_range(0..=hp - p), rng.gen_range(0..=wp - p))
    };
    extract(case, p, oy as isize - py as isize, ox as isize - px as isize)
}

/// Copies the `p×p` window at `(y0, x0)` in original image coordinates;
/// pixels outside the image are zero.
pub fn extract(case: &LoadedSample, p: usize, y0: isize, x0: isize) -> Patch {
    let (h, w) = (case.image.height, case.image.width);
    let mut image = vec![0.0f32; 3 * p * p];
    let mut mask = vec![0u8; p * p];
    for y in 0..p {
        let sy = y0 + y as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..p {
            let sx = x0 + x as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            let src = sy as usize * w + sx as usize;
            mask[y * p + x] = case.mask.labels[src];
            for c in 0..3 {
                image[(c * p + y) * p + x] = case.image.pixels[c * h * w + src];
            }
        }
    }
    Patch { size: p, image, mask, domain: case.domain }
}
