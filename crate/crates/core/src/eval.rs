//! Overlap metrics, per-image reports and the challenge's weighted score.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MaskData;
use crate::error::{Error, Result};

/// `|P ∩ G|`, `|P|`, `|G|` over nonzero labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl OverlapCounts {
    pub fn of(pred: &MaskData, gt: &MaskData) -> Result<Self> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}×{} vs ground truth {}×{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let mut c = OverlapCounts::default();
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            let (p, g) = (p != 0, g != 0);
            c.intersection += (p && g) as u64;
            c.predicted += p as u64;
            c.truth += g as u64;
        }
        Ok(c)
    }

    pub fn add(&mut self, o: &OverlapCounts) {
        self.intersection += o.intersection;
        self.predicted += o.predicted;
        self.truth += o.truth;
    }

    pub fn dice(&self) -> f64 {
        let den = self.predicted + self.truth;
        if den == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / den as f64
        }
    }

    pub fn jaccard(&self) -> f64 {
        let union = self.predicted + self.truth - self.intersection;
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }

    pub fn seg_score(&self) -> f64 {
        (self.dice() + self.jaccard()) / 2.0
    }
}

/// `2|P∩G| / (|P|+|G|)`; 1.0 when both masks are empty.
pub fn dice(pred: &MaskData, gt: &MaskData) -> Result<f64> {
    Ok(OverlapCounts::of(pred, gt)?.dice())
}

/// `|P∩G| / |P∪G|`; 1.0 when both masks are empty.
pub fn jaccard(pred: &MaskData, gt: &MaskData) -> Result<f64> {
    Ok(OverlapCounts::of(pred, gt)?.jaccard())
}

/// Mean of Dice and Jaccard.
pub fn seg_score(pred: &MaskData, gt: &MaskData) -> Result<f64> {
    Ok(OverlapCounts::of(pred, gt)?.seg_score())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeWeights {
    pub preliminary_weight: f64,
    pub final_weight: f64,
}

impl Default for ChallengeWeights {
    fn default() -> Self {
        ChallengeWeights { preliminary_weight: 0.2, final_weight: 0.8 }
    }
}

pub fn challenge_score(prelim: f64, final_: f64, w: &ChallengeWeights) -> Result<f64> {
    for (name, v) in [("preliminary", prelim), ("final", final_)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} score {v} outside [0, 1]")));
        }
    }
    if (w.preliminary_weight + w.final_weight - 1.0).abs() > 1e-12 || w.preliminary_weight < 0.0 || w.final_weight < 0.0 {
        return Err(Error::OutOfRange(format!("weights {w:?} do not form a convex combination")));
    }
    Ok(w.preliminary_weight * prelim + w.final_weight * final_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub domain: String,
    pub dice: f64,
    pub jaccard: f64,
    pub seg_score: f64,
}

impl ImageMetrics {
    pub fn new(image_id: impl Into<String>, domain: impl Into<String>, c: &OverlapCounts) -> Self {
        ImageMetrics { image_id: image_id.into(), domain: domain.into(), dice: c.dice(), jaccard: c.jaccard(), seg_score: c.seg_score() }
    }
}

/// How the headline aggregate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image scores.
    #[default]
    PerImage,
    /// Scores of the pixel counts pooled over all images.
    Global,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Means {
    pub dice: f64,
    pub jaccard: f64,
    pub seg_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub aggregation: Aggregation,
    /// Headline aggregate according to `aggregation`.
    pub mean: Means,
    pub per_domain: BTreeMap<String, Means>,
    /// Pooled-count aggregate; absent when rebuilt from rows alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<Means>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_accuracy: Option<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ImageMetrics>,
    pub summary: Summary,
}

fn means<'a>(rows: impl Iterator<Item = &'a ImageMetrics>) -> Means {
    let (mut m, mut n) = (Means::default(), 0usize);
    for r in rows {
        m.dice += r.dice;
        m.jaccard += r.jaccard;
        m.seg_score += r.seg_score;
        n += 1;
    }
    if n > 0 {
        let k = n as f64;
        m = Means { dice: m.dice / k, jaccard: m.jaccard / k, seg_score: m.seg_score / k };
    }
    m
}

impl MetricsReport {
    /// Builds a report from per-image counts.
    pub fn from_counts(items: &[(String, String, OverlapCounts)], aggregation: Aggregation) -> Self {
        let rows: Vec<ImageMetrics> = items.iter().map(|(id, d, c)| ImageMetrics::new(id, d, c)).collect();
        let mut pooled = OverlapCounts::default();
        items.iter().for_each(|(_, _, c)| pooled.add(c));
        let global = (!items.is_empty()).then(|| Means { dice: pooled.dice(), jaccard: pooled.jaccard(), seg_score: pooled.seg_score() });
        Self::assemble(rows, aggregation, global)
    }

    pub fn from_rows(rows: Vec<ImageMetrics>) -> Self {
        Self::assemble(rows, Aggregation::PerImage, None)
    }

    fn assemble(rows: Vec<ImageMetrics>, aggregation: Aggregation, global: Option<Means>) -> Self {
        let mut domains: Vec<&str> = rows.iter().map(|r| r.domain.as_str()).collect();
        domains.sort_unstable();
        domains.dedup();
        let per_domain = domains.iter().map(|d| (d.to_string(), means(rows.iter().filter(|r| r.domain == *d)))).collect();
        let mean = match (aggregation, &global) {
            (Aggregation::Global, Some(g)) => g.clone(),
            _ => means(rows.iter()),
        };
        let summary =
            Summary { count: rows.len(), aggregation, mean, per_domain, global, domain_accuracy: None, metadata: BTreeMap::new() };
        MetricsReport { rows, summary }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.metadata.insert(key.to_string(), v);
        self
    }
}

pub const REPORT_CSV: &str = "metrics.csv";
pub const REPORT_SUMMARY: &str = "summary.json";

/// Writes `metrics.csv` (one row per image) and `summary.json` into `dir`.
pub fn write_report(report: &MetricsReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["image_id", "domain", "dice", "jaccard", "seg_score"])?;
    for r in &report.rows {
        w.serialize((&r.image_id, &r.domain, r.dice, r.jaccard, r.seg_score))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(REPORT_SUMMARY);
    fs::write(&json_path, serde_json::to_string_pretty(&report.summary)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let csv_path = dir.join(REPORT_CSV);
    let json_path = dir.join(REPORT_SUMMARY);
    for p in [&csv_path, &json_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let mut r = csv::Reader::from_path(&csv_path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ImageMetrics>, _>>()?;
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    Ok(MetricsReport { rows, summary: serde_json::from_str(&text)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> MaskData {
        MaskData { height: 1, width: bits.len(), labels: bits.to_vec() }
    }

    #[test]
    fn counting_examples() {
        let p = mask(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0]);
        let g = mask(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        assert!((dice(&p, &g).unwrap() - 8.0 / 12.0).abs() < 1e-15);
        assert_eq!(jaccard(&p, &g).unwrap(), 0.5);
        assert!((seg_score(&p, &g).unwrap() - 0.583333333333333).abs() < 1e-12);
        assert_eq!(dice(&mask(&[0, 0]), &mask(&[0, 0])).unwrap(), 1.0);
        assert_eq!(dice(&mask(&[1, 0]), &mask(&[0, 1])).unwrap(), 0.0);
        assert!(dice(&mask(&[1]), &mask(&[1, 0])).is_err());
    }

    #[test]
    fn challenge_weighting() {
        let w = ChallengeWeights::default();
        assert!((challenge_score(0.7776, 0.8020, &w).unwrap() - 0.79712).abs() < 1e-12);
        assert!((challenge_score(0.8858, 0.8527, &w).unwrap() - 0.85932).abs() < 1e-12);
        assert!(challenge_score(1.2, 0.5, &w).is_err());
    }
}
