//! Segmentation and detection metrics, and reader-study accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{connected_components, squared_distance_to_set_mm, BinaryMask, Connectivity, LabelVolume, Volume, TUMOR};

/// Dice: 2|a∩b| / (|a|+|b|), 1 when both are empty.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.geometry().ensure_same_grid(b.geometry(), "second mask")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Mask voxels with at least one face neighbor outside the mask; the space
/// beyond the volume counts as outside.
pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let [nx, ny, nz] = mask.dims();
    Volume::from_fn(mask.geometry().clone(), |[x, y, z]| {
        if !mask.get([x, y, z]) {
            return false;
        }
        if x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz {
            return true;
        }
        !(mask.get([x - 1, y, z])
            && mask.get([x + 1, y, z])
            && mask.get([x, y - 1, z])
            && mask.get([x, y + 1, z])
            && mask.get([x, y, z - 1])
            && mask.get([x, y, z + 1]))
    })
}

/// Normalized surface Dice at `tolerance_mm`.
pub fn nsd(a: &BinaryMask, b: &BinaryMask, tolerance_mm: f64) -> Result<f64> {
    a.geometry().ensure_same_grid(b.geometry(), "second mask")?;
    if !(tolerance_mm.is_finite() && tolerance_mm >= 0.0) {
        return Err(Error::Argument(format!("tolerance must be >= 0, got {tolerance_mm}")));
    }
    let sa = boundary(a);
    let sb = boundary(b);
    let (na, nb) = (sa.count_true(), sb.count_true());
    if na + nb == 0 {
        return Ok(1.0);
    }
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let tol2 = tolerance_mm * tolerance_mm;
    let within = |from: &BinaryMask, to: &BinaryMask| -> usize {
        let d2 = squared_distance_to_set_mm(to);
        from.data().iter().zip(d2.data()).filter(|(&s, &d)| s && d <= tol2).count()
    };
    Ok((within(&sa, &sb) + within(&sb, &sa)) as f64 / (na + nb) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub dsc: f64,
    pub nsd: f64,
    pub tolerance_mm: f64,
}

pub fn seg_scores(a: &BinaryMask, b: &BinaryMask, tolerance_mm: f64) -> Result<SegScores> {
    Ok(SegScores {
        dsc: dsc(a, b)?,
        nsd: nsd(a, b, tolerance_mm)?,
        tolerance_mm,
    })
}

/// Equivalent-radius buckets in mm: the coarse split at 5 mm, then the fine
/// ones. `hi` is exclusive; `None` is unbounded.
pub const BUCKETS: [(&str, f64, Option<f64>); 6] = [
    ("<5", 0.0, Some(5.0)),
    (">=5", 5.0, None),
    ("2-5", 2.0, Some(5.0)),
    ("5-10", 5.0, Some(10.0)),
    ("10-20", 10.0, Some(20.0)),
    (">20", 20.0, None),
];

fn in_bucket(r: f64, lo: f64, hi: Option<f64>) -> bool {
    r >= lo && hi.is_none_or(|h| r < h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtTumor {
    pub id: u32,
    pub voxels: usize,
    pub radius_mm: f64,
    /// |component ∩ predicted tumor| / |component|.
    pub overlap_fraction: f64,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub name: String,
    pub total: usize,
    pub detected: usize,
    /// `None` when the bucket is empty.
    pub sensitivity: Option<f64>,
}

fn bucket_stats(radii_detected: &[(f64, bool)]) -> Vec<BucketStat> {
    BUCKETS
        .iter()
        .map(|&(name, lo, hi)| {
            let members: Vec<bool> = radii_detected.iter().filter(|(r, _)| in_bucket(*r, lo, hi)).map(|(_, d)| *d).collect();
            let detected = members.iter().filter(|&&d| d).count();
            BucketStat {
                name: name.to_string(),
                total: members.len(),
                detected,
                sensitivity: (!members.is_empty()).then(|| detected as f64 / members.len() as f64),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tumors: Vec<GtTumor>,
    /// Over all ground-truth tumors; `None` when there are none.
    pub sensitivity: Option<f64>,
    pub buckets: Vec<BucketStat>,
    /// Predicted tumor components that touch no ground-truth tumor.
    pub false_positives: usize,
}

/// Lesion-wise detection with 26-connected tumor components.
/// Default overlap fraction for a ground-truth tumor to count as detected.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.1;

pub fn detect(gt: &LabelVolume, pred: &LabelVolume, min_overlap_fraction: f64) -> Result<DetectionReport> {
    gt.geometry().ensure_same_grid(pred.geometry(), "prediction")?;
    let gt_mask = gt.mask_of(TUMOR);
    let pred_mask = pred.mask_of(TUMOR);
    let gt_set = connected_components(&gt_mask, Connectivity::TwentySix);
    let pred_set = connected_components(&pred_mask, Connectivity::TwentySix);

    let mut hits = vec![0usize; gt_set.count];
    let mut pred_touches = vec![false; pred_set.count];
    for i in 0..gt.len() {
        let g = gt_set.labels.data()[i];
        let p = pred_set.labels.data()[i];
        if g != 0 && p != 0 {
            hits[g as usize - 1] += 1;
            pred_touches[p as usize - 1] = true;
        }
    }
    let tumors: Vec<GtTumor> = (0..gt_set.count)
        .map(|k| {
            let frac = hits[k] as f64 / gt_set.voxel_counts[k] as f64;
            GtTumor {
                id: k as u32 + 1,
                voxels: gt_set.voxel_counts[k],
                radius_mm: gt_set.radii_mm[k],
                overlap_fraction: frac,
                detected: frac >= min_overlap_fraction,
            }
        })
        .collect();
    let detected = tumors.iter().filter(|t| t.detected).count();
    let pairs: Vec<(f64, bool)> = tumors.iter().map(|t| (t.radius_mm, t.detected)).collect();
    Ok(DetectionReport {
        sensitivity: (!tumors.is_empty()).then(|| detected as f64 / tumors.len() as f64),
        buckets: bucket_stats(&pairs),
        false_positives: pred_touches.iter().filter(|&&t| !t).count(),
        tumors,
    })
}

/// Detection pooled over scans. Healthy scans (no ground-truth tumor) feed
/// the specificity: the share of them with no predicted tumor at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub scans: usize,
    pub tumors: usize,
    pub sensitivity: Option<f64>,
    pub buckets: Vec<BucketStat>,
    pub healthy_scans: usize,
    pub specificity: Option<f64>,
    pub false_positives: usize,
}

pub fn summarize_detection(reports: &[DetectionReport]) -> DetectionSummary {
    let pairs: Vec<(f64, bool)> = reports.iter().flat_map(|r| r.tumors.iter().map(|t| (t.radius_mm, t.detected))).collect();
    let detected = pairs.iter().filter(|(_, d)| *d).count();
    let healthy: Vec<&DetectionReport> = reports.iter().filter(|r| r.tumors.is_empty()).collect();
    let clean = healthy.iter().filter(|r| r.false_positives == 0).count();
    DetectionSummary {
        scans: reports.len(),
        tumors: pairs.len(),
        sensitivity: (!pairs.is_empty()).then(|| detected as f64 / pairs.len() as f64),
        buckets: bucket_stats(&pairs),
        healthy_scans: healthy.len(),
        specificity: (!healthy.is_empty()).then(|| clean as f64 / healthy.len() as f64),
        false_positives: reports.iter().map(|r| r.false_positives).sum(),
    }
}

/// Reader answers by true class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuringCounts {
    pub real_as_real: usize,
    pub real_as_synthetic: usize,
    pub real_unsure: usize,
    pub synthetic_as_real: usize,
    pub synthetic_as_synthetic: usize,
    pub synthetic_unsure: usize,
}

impl TuringCounts {
    pub fn definite(&self) -> usize {
        self.real_as_real + self.real_as_synthetic + self.synthetic_as_real + self.synthetic_as_synthetic
    }

    pub fn unsure(&self) -> usize {
        self.real_unsure + self.synthetic_unsure
    }
}

/// Metrics over definite answers, synthetic being the positive class.
/// Values are fractions in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuringTally {
    pub counts: TuringCounts,
    pub definite: usize,
    pub unsure: usize,
    pub accuracy: f64,
    /// Synthetic scans called synthetic; `None` without definite synthetic answers.
    pub sensitivity: Option<f64>,
    /// Real scans called real; `None` without definite real answers.
    pub specificity: Option<f64>,
}

pub fn turing_metrics(counts: TuringCounts) -> Result<TuringTally> {
    let definite = counts.definite();
    if definite == 0 {
        return Err(Error::UndefinedMetrics("no definite answers".into()));
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(TuringTally {
        counts,
        definite,
        unsure: counts.unsure(),
        accuracy: (counts.real_as_real + counts.synthetic_as_synthetic) as f64 / definite as f64,
        sensitivity: ratio(counts.synthetic_as_synthetic, counts.synthetic_as_synthetic + counts.synthetic_as_real),
        specificity: ratio(counts.real_as_real, counts.real_as_real + counts.real_as_synthetic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> BinaryMask {
        let mut m = Volume::filled(Geometry::isotropic(dims), false);
        for &p in on {
            m.set(p, true);
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = mask([4, 1, 1], &[[0, 0, 0], [1, 0, 0]]);
        let b = mask([4, 1, 1], &[[1, 0, 0]]);
        let c = mask([4, 1, 1], &[[3, 0, 0]]);
        let e = mask([4, 1, 1], &[]);
        assert!((dsc(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_eq!(dsc(&a, &c).unwrap(), 0.0);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        assert_eq!(dsc(&e, &a).unwrap(), 0.0);
        assert!(dsc(&a, &mask([3, 1, 1], &[])).is_err());
    }

    fn plate(z: usize) -> BinaryMask {
        Volume::from_fn(Geometry::isotropic([6, 6, 12]), |[_, _, pz]| pz == z)
    }

    #[test]
    fn nsd_parallel_plates() {
        assert_eq!(nsd(&plate(3), &plate(3), 2.0).unwrap(), 1.0);
        assert_eq!(nsd(&plate(3), &plate(4), 2.0).unwrap(), 1.0);
        assert_eq!(nsd(&plate(3), &plate(8), 2.0).unwrap(), 0.0);
        let e = Volume::filled(Geometry::isotropic([6, 6, 12]), false);
        assert_eq!(nsd(&e, &e, 2.0).unwrap(), 1.0);
        assert_eq!(nsd(&e, &plate(1), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn nsd_non_decreasing_in_tolerance() {
        let a = Volume::from_fn(Geometry::isotropic([10; 3]), |[x, y, z]| x + y + z < 12);
        let b = Volume::from_fn(Geometry::isotropic([10; 3]), |[x, y, _]| x * y < 20);
        let mut prev = 0.0;
        for t in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 20.0] {
            let v = nsd(&a, &b, t).unwrap();
            assert!(v >= prev);
            assert!((v - nsd(&b, &a, t).unwrap()).abs() < 1e-15);
            prev = v;
        }
        assert_eq!(prev, 1.0);
    }

    #[test]
    fn boundary_of_solid_cube_is_its_shell() {
        let m = Volume::from_fn(Geometry::isotropic([5; 3]), |p| p.iter().all(|&c| (1..4).contains(&c)));
        assert_eq!(boundary(&m).count_true(), 26);
        let full = Volume::filled(Geometry::isotropic([3; 3]), true);
        assert_eq!(boundary(&full).count_true(), 26);
    }

    fn labels(dims: [usize; 3], tumors: &[[usize; 3]]) -> LabelVolume {
        let mut l = Volume::filled(Geometry::isotropic(dims), 1u8);
        for &p in tumors {
            l.set(p, TUMOR);
        }
        l
    }

    #[test]
    fn detection_examples() {
        let gt = labels([8, 1, 1], &[[0, 0, 0], [1, 0, 0], [5, 0, 0]]);
        let r = detect(&gt, &gt, 0.1).unwrap();
        assert_eq!(r.sensitivity, Some(1.0));
        assert_eq!(r.false_positives, 0);

        let empty = labels([8, 1, 1], &[]);
        let r = detect(&gt, &empty, 0.1).unwrap();
        assert_eq!(r.sensitivity, Some(0.0));
        assert_eq!(r.false_positives, 0);

        let one = labels([8, 1, 1], &[[0, 0, 0], [1, 0, 0], [7, 0, 0]]);
        let r = detect(&gt, &one, 0.1).unwrap();
        assert_eq!(r.sensitivity, Some(0.5));
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn detection_buckets_by_radius() {
        // 5x5x5 cube: radius (3·125/4π)^(1/3) ≈ 3.10 mm.
        let g = Geometry::isotropic([20, 20, 20]);
        let gt = Volume::from_fn(g, |p| if p.iter().all(|&c| c < 5) { TUMOR } else { 1 });
        let r = detect(&gt, &gt, 0.1).unwrap();
        let by_name = |n: &str| r.buckets.iter().find(|b| b.name == n).unwrap().clone();
        assert_eq!(by_name("<5").total, 1);
        assert_eq!(by_name("2-5").total, 1);
        assert_eq!(by_name(">=5").total, 0);
        assert_eq!(by_name(">=5").sensitivity, None);
    }

    #[test]
    fn detection_threshold_is_inclusive() {
        let gt = Volume::from_fn(Geometry::isotropic([10, 1, 1]), |_| TUMOR);
        let pred = labels([10, 1, 1], &[[4, 0, 0]]);
        assert!(detect(&gt, &pred, 0.1).unwrap().tumors[0].detected);
        assert!(!detect(&gt, &pred, 0.11).unwrap().tumors[0].detected);
    }

    #[test]
    fn summary_specificity_from_healthy_scans() {
        let healthy = labels([4, 1, 1], &[]);
        let fp = labels([4, 1, 1], &[[2, 0, 0]]);
        let reports = [
            detect(&healthy, &healthy, 0.1).unwrap(),
            detect(&healthy, &fp, 0.1).unwrap(),
            detect(&fp, &fp, 0.1).unwrap(),
        ];
        let s = summarize_detection(&reports);
        assert_eq!(s.healthy_scans, 2);
        assert_eq!(s.specificity, Some(0.5));
        assert_eq!(s.sensitivity, Some(1.0));
        assert_eq!(s.false_positives, 1);
    }

    #[test]
    fn turing_reader_tables() {
        let junior = TuringCounts {
            real_as_real: 5,
            real_as_synthetic: 15,
            real_unsure: 0,
            synthetic_as_real: 21,
            synthetic_as_synthetic: 8,
            synthetic_unsure: 1,
        };
        let t = turing_metrics(junior).unwrap();
        assert!((t.accuracy * 100.0 - 26.5).abs() < 0.05);
        assert!((t.sensitivity.unwrap() * 100.0 - 27.6).abs() < 0.05);
        assert!((t.specificity.unwrap() * 100.0 - 25.0).abs() < 0.05);

        let senior = TuringCounts {
            real_as_real: 10,
            real_as_synthetic: 2,
            real_unsure: 8,
            synthetic_as_real: 7,
            synthetic_as_synthetic: 12,
            synthetic_unsure: 11,
        };
        let t = turing_metrics(senior).unwrap();
        assert!((t.accuracy * 100.0 - 71.0).abs() < 0.05);
        assert!((t.sensitivity.unwrap() * 100.0 - 63.2).abs() < 0.05);
        assert!((t.specificity.unwrap() * 100.0 - 83.3).abs() < 0.05);
        assert_eq!(t.unsure, 19);
    }

    #[test]
    fn turing_edge_cases() {
        let perfect = TuringCounts { real_as_real: 3, synthetic_as_synthetic: 4, ..Default::default() };
        let t = turing_metrics(perfect).unwrap();
        assert_eq!((t.accuracy, t.sensitivity, t.specificity), (1.0, Some(1.0), Some(1.0)));
        let unsure = TuringCounts { real_unsure: 2, synthetic_unsure: 3, ..Default::default() };
        assert!(matches!(turing_metrics(unsure), Err(Error::UndefinedMetrics(_))));
    }
}
