//! Tiled prediction with Gaussian importance weighting, mirror test-time
//! augmentation and fold ensembling.

use std::fs;
use std::path::Path;

use dcac_tape::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{flip_horizontal, flip_vertical, ImageData, MaskData};
use crate::error::{Error, Result};
use crate::model;
use crate::params::{Checkpoint, ParamStore};
use crate::planner::PlanConfig;

/// Anything that maps a `[N, C_in, P, P]` batch to logits `[N, C, P, P]`.
pub trait PatchPredictor {
    fn patch_size(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Logits and, for models with a domain predictor, domain probabilities `[N, K]`.
    fn predict(&self, batch: Tensor<f32>) -> Result<(Tensor<f32>, Option<Tensor<f32>>)>;
    /// Models can only be ensembled when their signatures agree.
    fn signature(&self) -> String {
        format!("patch={} classes={}", self.patch_size(), self.num_classes())
    }
}

/// A trained network: plan plus parameters.
#[derive(Debug, Clone)]
pub struct Network {
    pub plan: PlanConfig,
    pub params: ParamStore<f32>,
}

impl Network {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        Ok(Network { plan: ck.plan, params: ck.params })
    }
}

impl PatchPredictor for Network {
    fn patch_size(&self) -> usize {
        self.plan.patch_size
    }

    fn num_classes(&self) -> usize {
        self.plan.num_classes
    }

    fn predict(&self, batch: Tensor<f32>) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        model::predict(&self.params, &self.plan, batch)
    }

    fn signature(&self) -> String {
        let p = &self.plan;
        format!(
            "patch={} depth={} channels={:?} in={} classes={} domains={} dcac={} heads={:?}",
            p.patch_size,
            p.depth,
            p.channels(),
            p.in_channels,
            p.num_classes,
            p.num_domains,
            p.dcac_enabled,
            p.dcac_enabled.then_some(&p.dcac)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Tile step as a fraction of the patch size.
    pub step_fraction: f64,
    /// Gaussian σ as a fraction of the patch size.
    pub sigma_fraction: f64,
    pub tta: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { step_fraction: 0.5, sigma_fraction: 0.125, tta: true }
    }
}

impl InferenceConfig {
    pub fn without_tta() -> Self {
        InferenceConfig { tta: false, ..Self::default() }
    }
}

/// Importance map of a `p×p` tile: separable Gaussian with σ = `sigma_fraction·p`
/// centered at `(p−1)/2`, scaled to a maximum of 1 and floored at 1e-8.
pub fn gaussian_weights(p: usize, sigma_fraction: f64) -> Vec<f64> {
    let sigma = sigma_fraction * p as f64;
    let c = (p as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..p).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let max = g.iter().cloned().fold(0.0, f64::max);
    let mut w = Vec::with_capacity(p * p);
    for y in 0..p {
        for x in 0..p {
            w.push((g[y] * g[x] / (max * max)).max(1e-8));
        }
    }
    w
}

/// Tile origins over an image padded to at least one patch per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileGrid {
    pub patch_size: usize,
    pub step: usize,
    pub ys: Vec<usize>,
    pub xs: Vec<usize>,
    /// Padded image size.
    pub height: usize,
    pub width: usize,
}

fn origins(size: usize, p: usize, step: usize) -> Vec<usize> {
    if size <= p {
        return vec![0];
    }
    let n = (size - p).div_ceil(step) + 1;
    let span = (size - p) as f64;
    (0..n).map(|i| (span * i as f64 / (n - 1) as f64).round() as usize).collect()
}

impl TileGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, step: usize) -> Self {
        let step = step.max(1);
        let (h, w) = (height.max(patch_size), width.max(patch_size));
        TileGrid { patch_size, step, ys: origins(h, patch_size, step), xs: origins(w, patch_size, step), height: h, width: w }
    }

    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.ys.iter().flat_map(|&y| self.xs.iter().map(move |&x| (y, x))).collect()
    }

    /// Summed tile weights per padded pixel.
    pub fn weight_map(&self, weights: &[f64]) -> Vec<f64> {
        let p = self.patch_size;
        let mut acc = vec![0.0; self.height * self.width];
        for (oy, ox) in self.origins() {
            for y in 0..p {
                for x in 0..p {
                    acc[(oy + y) * self.width + ox + x] += weights[y * p + x];
                }
            }
        }
        acc
    }
}

/// Per-pixel class probabilities, stored `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub probs: Vec<f32>,
    /// Mean predicted domain distribution over tiles, when the model has one.
    pub domain_probs: Option<Vec<f64>>,
}

impl PredictionMap {
    pub fn prob(&self, c: usize, y: usize, x: usize) -> f32 {
        self.probs[(c * self.height + y) * self.width + x]
    }

    /// Argmax labels; with `threshold` and two classes, foreground iff `p₁ > threshold`.
    pub fn to_mask(&self, threshold: Option<f64>) -> MaskData {
        let hw = self.height * self.width;
        let mut m = MaskData::zeros(self.height, self.width);
        for i in 0..hw {
            m.labels[i] = match threshold {
                Some(t) if self.num_classes == 2 => (self.probs[hw + i] as f64 > t) as u8,
                _ => {
                    let mut best = 0;
                    for c in 1..self.num_classes {
                        if self.probs[c * hw + i] > self.probs[best * hw + i] {
                            best = c;
                        }
                    }
                    best as u8
                }
            };
        }
        m
    }

    pub fn predicted_domain(&self) -> Option<usize> {
        self.domain_probs.as_ref().map(|p| (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best }))
    }

    /// Writes the probabilities as little-endian f32 in `H×W×C` order plus a
    /// JSON sidecar at `path` with extension `json`.
    pub fn write_binary(&self, path: &Path, class_names: &[String]) -> Result<()> {
        let hw = self.height * self.width;
        let mut bytes = Vec::with_capacity(4 * self.probs.len());
        for i in 0..hw {
            for c in 0..self.num_classes {
                bytes.extend_from_slice(&self.probs[c * hw + i].to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = ProbabilitySidecar {
            shape: [self.height, self.width, self.num_classes],
            dtype: "float32".into(),
            byte_order: "little".into(),
            class_names: class_names.to_vec(),
        };
        let side = path.with_extension("json");
        fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn read_binary(path: &Path) -> Result<(Self, Vec<String>)> {
        let side = path.with_extension("json");
        let meta: ProbabilitySidecar = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let [h, w, c] = meta.shape;
        if bytes.len() != 4 * h * w * c {
            return Err(Error::ShapeMismatch(format!("{} bytes for shape {:?}", bytes.len(), meta.shape)));
        }
        let mut probs = vec![0.0f32; h * w * c];
        for (j, chunk) in bytes.chunks_exact(4).enumerate() {
            let (i, ch) = (j / c, j % c);
            probs[ch * h * w + i] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok((PredictionMap { height: h, width: w, num_classes: c, probs, domain_probs: None }, meta.class_names))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProbabilitySidecar {
    shape: [usize; 3],
    dtype: String,
    byte_order: String,
    class_names: Vec<String>,
}

fn softmax_into(logits: &[f32], c: usize, hw: usize, out: &mut [f64]) {
    for i in 0..hw {
        let mx = (0..c).map(|k| logits[k * hw + i] as f64).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..c).map(|k| (logits[k * hw + i] as f64 - mx).exp()).sum();
        for k in 0..c {
            out[k * hw + i] = (logits[k * hw + i] as f64 - mx).exp() / z;
        }
    }
}

/// Class probabilities `[C, P, P]` of one `[C_in, P, P]` patch, averaged over
/// identity, horizontal, vertical and both flips (each un-flipped first)
/// when `tta`. Also returns the mean domain distribution.
pub fn tta_mirror(model: &dyn PatchPredictor, patch: &[f32], tta: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let p = model.patch_size();
    let cin = patch.len() / (p * p);
    let variants: &[(bool, bool)] = if tta { &[(false, false), (true, false), (false, true), (true, true)] } else { &[(false, false)] };
    let mut batch = Vec::with_capacity(variants.len() * patch.len());
    for &(h, v) in variants {
        let mut x = patch.to_vec();
        if h {
            flip_horizontal(&mut x, p, p);
        }
        if v {
            flip_vertical(&mut x, p, p);
        }
        batch.extend(x);
    }
    let (logits, domains) =
        model.predict(Tensor::from_vec(&[variants.len(), cin, p, p], batch).map_err(|e| Error::ShapeMismatch(e.to_string()))?)?;
    let c = model.num_classes();
    let hw = p * p;
    let mut acc = vec![0.0f64; c * hw];
    let mut probs = vec![0.0f64; c * hw];
    for (n, &(h, v)) in variants.iter().enumerate() {
        softmax_into(logits.sample(n), c, hw, &mut probs);
        if v {
            flip_vertical(&mut probs, p, p);
        }
        if h {
            flip_horizontal(&mut probs, p, p);
        }
        acc.iter_mut().zip(&probs).for_each(|(a, b)| *a += b);
    }
    let k = variants.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    let domain = domains.map(|d| {
        let (n, kd) = d.dims2();
        (0..kd).map(|j| (0..n).map(|i| d.data()[i * kd + j] as f64).sum::<f64>() / n as f64).collect()
    });
    Ok((acc, domain))
}

/// Gaussian-weighted tiled prediction over a whole image, zero-padded
/// symmetrically to at least one patch and cropped back.
pub fn sliding_window(image: &ImageData, model: &dyn PatchPredictor, cfg: &InferenceConfig) -> Result<PredictionMap> {
    let p = model.patch_size();
    let step = ((p as f64 * cfg.step_fraction).round() as usize).clamp(1, p);
    let grid = TileGrid::new(image.height, image.width, p, step);
    let (py, px) = ((grid.height - image.height) / 2, (grid.width - image.width) / 2);
    let (gh, gw) = (grid.height, grid.width);
    let cin = image.pixels.len() / (image.height * image.width);
    let mut padded = vec![0.0f32; cin * gh * gw];
    for c in 0..cin {
        for y in 0..image.height {
            let src = &image.pixels[(c * image.height + y) * image.width..][..image.width];
            padded[(c * gh + y + py) * gw + px..][..image.width].copy_from_slice(src);
        }
    }
    let weights = gaussian_weights(p, cfg.sigma_fraction);
    let nc = model.num_classes();
    let mut acc = vec![0.0f64; nc * gh * gw];
    let mut domain_acc: Option<Vec<f64>> = None;
    let origins = grid.origins();
    let mut tile = vec![0.0f32; cin * p * p];
    for &(oy, ox) in &origins {
        for c in 0..cin {
            for y in 0..p {
                tile[(c * p + y) * p..][..p].copy_from_slice(&padded[(c * gh + oy + y) * gw + ox..][..p]);
            }
        }
        let (probs, dom) = tta_mirror(model, &tile, cfg.tta)?;
        for c in 0..nc {
            for y in 0..p {
                for x in 0..p {
                    acc[(c * gh + oy + y) * gw + ox + x] += weights[y * p + x] * probs[(c * p + y) * p + x];
                }
            }
        }
        if let Some(d) = dom {
            let a = domain_acc.get_or_insert_with(|| vec![0.0; d.len()]);
            a.iter_mut().zip(&d).for_each(|(s, v)| *s += v);
        }
    }
    let norm = grid.weight_map(&weights);
    let (h, w) = (image.height, image.width);
    let mut probs = vec![0.0f32; nc * h * w];
    for c in 0..nc {
        for y in 0..h {
            for x in 0..w {
                let i = (y + py) * gw + x + px;
                probs[(c * h + y) * w + x] = (acc[c * gh * gw + i] / norm[i]) as f32;
            }
        }
    }
    let domain_probs = domain_acc.map(|mut d| {
        d.iter_mut().for_each(|v| *v /= origins.len() as f64);
        d
    });
    Ok(PredictionMap { height: h, width: w, num_classes: nc, probs, domain_probs })
}

/// Mean of the members' prediction maps.
pub fn ensemble<M: PatchPredictor>(models: &[M], image: &ImageData, cfg: &InferenceConfig) -> Result<PredictionMap> {
    let first = models.first().ok_or_else(|| Error::InvalidConfig("ensemble needs at least one model".into()))?;
    let sig = first.signature();
    if let Some(bad) = models.iter().find(|m| m.signature() != sig) {
        return Err(Error::PlanMismatch(format!("{} vs {}", bad.signature(), sig)));
    }
    let maps = models.iter().map(|m| sliding_window(image, m, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(average_maps(&maps))
}

/// Elementwise mean, accumulated in f64 in list order.
pub fn average_maps(maps: &[PredictionMap]) -> PredictionMap {
    let k = maps.len() as f64;
    let first = &maps[0];
    let mut sum = vec![0.0f64; first.probs.len()];
    for m in maps {
        sum.iter_mut().zip(&m.probs).for_each(|(s, &v)| *s += v as f64);
    }
    let domain_probs = first.domain_probs.as_ref().map(|d| {
        let mut s = vec![0.0; d.len()];
        for m in maps {
            if let Some(md) = &m.domain_probs {
                s.iter_mut().zip(md).for_each(|(a, b)| *a += b);
            }
        }
        s.into_iter().map(|v| v / k).collect()
    });
    PredictionMap {
        height: first.height,
        width: first.width,
        num_classes: first.num_classes,
        probs: sum.into_iter().map(|s| (s / k) as f32).collect(),
        domain_probs,
    }
}
