//! Dataset manifests: the single source of truth for which images belong to
//! which domain.
//!
//! On disk a manifest is JSON:
//! `{ "domains": [str], "seed": int, "samples": [ { "image": str, "mask": str, "domain": int } ] }`.
//! Relative paths are resolved against the directory holding the manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::image_io::{ImageData, MaskData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub domain: usize,
}

impl Sample {
    /// Image file stem; used as the image identifier in reports and predictions.
    pub fn id(&self) -> String {
        self.image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domains: Vec<String>,
    pub seed: u64,
    pub samples: Vec<Sample>,
    /// Requires equal per-domain sample counts when set.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub balanced: bool,
}

impl DatasetManifest {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domain_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.domains.len()];
        for s in &self.samples {
            if let Some(c) = counts.get_mut(s.domain) {
                *c += 1;
            }
        }
        counts
    }

    /// Structural checks that do not touch the image files.
    pub fn check_structure(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::InvalidManifest("at least one domain is required".into()));
        }
        for s in &self.samples {
            if s.domain >= self.domains.len() {
                return Err(Error::DomainOutOfRange { id: s.domain, count: self.domains.len() });
            }
        }
        if self.balanced {
            let counts = self.domain_counts();
            if counts.iter().any(|&c| c != counts[0]) {
                return Err(Error::InvalidManifest(format!("manifest flagged balanced but domain counts are {counts:?}")));
            }
        }
        Ok(())
    }

    /// Samples at `indices`, keeping the domain list.
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            domains: self.domains.clone(),
            seed: self.seed,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            balanced: false,
        }
    }

    /// Keeps only samples of the listed domains and re-indexes them in the given order.
    pub fn select_domains(&self, keep: &[usize]) -> DatasetManifest {
        DatasetManifest {
            domains: keep.iter().map(|&d| self.domains[d].clone()).collect(),
            seed: self.seed,
            samples: self
                .samples
                .iter()
                .filter_map(|s| keep.iter().position(|&d| d == s.domain).map(|nd| Sample { domain: nd, ..s.clone() }))
                .collect(),
            balanced: false,
        }
    }

    /// Canonicalized image paths, for overlap checks between manifests.
    pub fn image_set(&self) -> BTreeSet<PathBuf> {
        self.samples.iter().map(|s| fs::canonicalize(&s.image).unwrap_or_else(|_| s.image.clone())).collect()
    }

    /// Writes the manifest with sample paths relative to the manifest's directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = self.clone();
        for s in &mut out.samples {
            s.image = relative_to(&s.image, base);
            s.mask = relative_to(&s.mask, base);
        }
        let json = serde_json::to_string_pretty(&out)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and resolves its paths, without decoding images.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut m.samples {
            s.image = base.join(&s.image);
            s.mask = base.join(&s.mask);
        }
        Ok(m)
    }
}

fn relative_to(p: &Path, base: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Reads and fully validates a manifest: every file exists and decodes, image
/// and mask shapes agree, labels are binary, domain ids are in range.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::read(path)?;
    m.check_structure()?;
    for s in &m.samples {
        load_sample(s)?;
    }
    Ok(m)
}

/// A decoded sample held in memory.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub image: ImageData,
    pub mask: MaskData,
    pub domain: usize,
    /// Flat indices of foreground pixels.
    pub foreground: Vec<u32>,
}

fn load_sample(s: &Sample) -> Result<LoadedSample> {
    for p in [&s.image, &s.mask] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let image = ImageData::read_png(&s.image)?;
    let mask = MaskData::read_png(&s.mask)?;
    if (image.height, image.width) != (mask.height, mask.width) {
        return Err(Error::ShapeMismatch(format!(
            "{}: image {}x{} vs mask {}x{}",
            s.id(),
            image.height,
            image.width,
            mask.height,
            mask.width
        )));
    }
    if let Some(value) = mask.non_binary_value() {
        return Err(Error::NonBinaryMask { path: s.mask.clone(), value });
    }
    Ok(LoadedSample::new(s.id(), image, mask, s.domain))
}

impl LoadedSample {
    pub fn new(id: String, image: ImageData, mask: MaskData, domain: usize) -> Self {
        let foreground = mask.labels.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i as u32).collect();
        LoadedSample { id, image, mask, domain, foreground }
    }
}

/// In-memory dataset. Samples are shared, so subsets are cheap.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain_names: Vec<String>,
    pub samples: Vec<Arc<LoadedSample>>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.check_structure()?;
        let samples = manifest.samples.iter().map(|s| load_sample(s).map(Arc::new)).collect::<Result<_>>()?;
        Ok(Dataset { domain_names: manifest.domains.clone(), samples })
    }

    pub fn from_samples(domain_names: Vec<String>, samples: Vec<LoadedSample>) -> Self {
        Dataset { domain_names, samples: samples.into_iter().map(Arc::new).collect() }
    }

    pub fn num_domains(&self) -> usize {
        self.domain_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn domains(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.domain).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { domain_names: self.domain_names.clone(), samples: indices.iter().map(|&i| Arc::clone(&self.samples[i])).collect() }
    }
}
