use dcac_core::data::MaskData;
use dcac_core::eval::*;
use proptest::collection::vec;
use proptest::prelude::*;

fn mask16(bits: &[bool]) -> MaskData {
    MaskData { height: 16, width: 16, labels: bits.iter().map(|&b| b as u8).collect() }
}

/// Set-based reference, counting pixel by pixel.
fn oracle(p: &[bool], g: &[bool]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut union = 0.0;
    let (mut np, mut ng) = (0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        if a && b {
            inter += 1.0;
        }
        if a || b {
            union += 1.0;
        }
        np += a as u8 as f64;
        ng += b as u8 as f64;
    }
    if union == 0.0 {
        return (1.0, 1.0);
    }
    (2.0 * inter / (np + ng), inter / union)
}

#[test]
fn hand_counted_examples() {
    let mut p = vec![false; 256];
    let mut g = vec![false; 256];
    p[..4].iter_mut().for_each(|v| *v = true);
    g[..8].iter_mut().for_each(|v| *v = true);
    let (pm, gm) = (mask16(&p), mask16(&g));
    assert!((dice(&pm, &gm).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(jaccard(&pm, &gm).unwrap(), 0.5);
    assert!((seg_score(&pm, &gm).unwrap() - 7.0 / 12.0).abs() < 1e-15);
    // Disjoint non-empty masks.
    let q: Vec<bool> = (0..256).map(|i| i >= 200).collect();
    assert_eq!(dice(&pm, &mask16(&q)).unwrap(), 0.0);
    assert_eq!(seg_score(&pm, &mask16(&q)).unwrap(), 0.0);
    // One empty side.
    assert_eq!(dice(&mask16(&[false; 256]), &gm).unwrap(), 0.0);
    assert!(dice(&MaskData::zeros(4, 4), &MaskData::zeros(4, 5)).is_err());
}

#[test]
fn challenge_weighting() {
    let w = ChallengeWeights::default();
    assert!((challenge_score(0.7, 0.8, &w).unwrap() - 0.78).abs() < 1e-15);
    assert!((challenge_score(1.0, 0.0, &w).unwrap() - 0.2).abs() < 1e-15);
    let bad = ChallengeWeights { preliminary_weight: 0.5, final_weight: 0.6 };
    assert!(challenge_score(0.5, 0.5, &bad).is_err());
}

#[test]
fn global_aggregation_pools_counts() {
    let a = OverlapCounts { intersection: 1, predicted: 1, truth: 3 };
    let b = OverlapCounts { intersection: 9, predicted: 10, truth: 10 };
    let items = vec![("a".to_string(), "x".to_string(), a), ("b".to_string(), "y".to_string(), b)];
    let per = MetricsReport::from_counts(&items, Aggregation::PerImage);
    let glob = MetricsReport::from_counts(&items, Aggregation::Global);
    assert!((per.summary.mean.dice - (0.5 + 0.9) / 2.0).abs() < 1e-15);
    assert!((glob.summary.mean.dice - 20.0 / 24.0).abs() < 1e-15);
    assert!((glob.summary.mean.jaccard - 10.0 / 14.0).abs() < 1e-15);
    assert_eq!(per.summary.global, glob.summary.global);
    assert_eq!(per.summary.per_domain.len(), 2);
    assert!((per.summary.per_domain["y"].dice - 0.9).abs() < 1e-15);
}

fn round_trip(report: &MetricsReport) {
    let dir = tempfile::tempdir().unwrap();
    write_report(report, dir.path()).unwrap();
    assert_eq!(&read_report(dir.path()).unwrap(), report);
}

#[test]
fn report_round_trips() {
    round_trip(&MetricsReport::from_rows(Vec::new()).with_meta("kind", "full_train"));
    let c = OverlapCounts { intersection: 3, predicted: 7, truth: 5 };
    let mut one = MetricsReport::from_counts(&[("img, with comma".into(), "dom\"q".into(), c)], Aggregation::Global);
    one.summary.domain_accuracy = Some(0.95);
    round_trip(&one);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_report(dir.path()), Err(dcac_core::Error::MissingFile(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_match_the_set_oracle(p in vec(any::<bool>(), 256), g in vec(any::<bool>(), 256)) {
        let (d, j) = oracle(&p, &g);
        let (pm, gm) = (mask16(&p), mask16(&g));
        prop_assert!((dice(&pm, &gm).unwrap() - d).abs() < 1e-12);
        prop_assert!((jaccard(&pm, &gm).unwrap() - j).abs() < 1e-12);
        prop_assert!((seg_score(&pm, &gm).unwrap() - (d + j) / 2.0).abs() < 1e-12);
        prop_assert_eq!(dice(&pm, &gm).unwrap(), dice(&gm, &pm).unwrap());
        prop_assert_eq!(jaccard(&pm, &gm).unwrap(), jaccard(&gm, &pm).unwrap());
        prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&d) && j <= d);
    }

    #[test]
    fn sparse_masks_match_the_oracle(p in vec(prop::bool::weighted(0.03), 256), g in vec(prop::bool::weighted(0.03), 256)) {
        let (d, j) = oracle(&p, &g);
        prop_assert!((dice(&mask16(&p), &mask16(&g)).unwrap() - d).abs() < 1e-12);
        prop_assert!((jaccard(&mask16(&p), &mask16(&g)).unwrap() - j).abs() < 1e-12);
    }

    #[test]
    fn random_reports_round_trip(counts in vec((0u64..50, 0u64..50, 0u64..50, 0usize..3), 0..12), global in any::<bool>()) {
        let items: Vec<_> = counts
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| {
                let inter = a.min(b).min(c);
                (format!("case_{i}"), format!("domain_{d}"), OverlapCounts { intersection: inter, predicted: b.max(inter), truth: c.max(inter) })
            })
            .collect();
        let agg = if global { Aggregation::Global } else { Aggregation::PerImage };
        let r = MetricsReport::from_counts(&items, agg).with_meta("seed", 7);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        prop_assert_eq!(read_report(dir.path()).unwrap(), r);
    }
}
