//! Parenchyma statistics and vessel segmentation by smoothed thresholding.

use serde::{Deserialize, Serialize};

use crate::config::GenConfig;
use crate::error::{Error, Result};
use crate::volgrid::{gaussian_blur_axes, gaussian_kernel, BinaryMask, LabelVolume, Region, ScalarVolume, Volume, LIVER};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParenchymaStats {
    /// Mean HU over every liver voxel, vessels included. Sets the vessel threshold.
    pub liver_mean: f64,
    /// Mean HU over liver voxels outside the vessel mask.
    pub mu_p: f64,
    /// Standard deviation matching `mu_p`.
    pub sigma_p: f64,
    /// Voxels contributing to `mu_p`/`sigma_p`.
    pub voxel_count: usize,
}

/// Tight bounding box of the liver label, or `None` for an empty mask.
pub fn liver_bounds(liver: &LabelVolume) -> Option<Region> {
    let g = liver.geometry();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, &l) in liver.data().iter().enumerate() {
        if l != LIVER {
            continue;
        }
        let p = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if lo[0] == usize::MAX {
        return None;
    }
    Some(Region {
        start: lo,
        size: [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1],
    })
}

fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sq = 0.0;
    let values: Vec<f64> = values.collect();
    for &v in &values {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    for &v in &values {
        sq += (v - mean) * (v - mean);
    }
    Some((mean, (sq / n as f64).sqrt(), n))
}

/// Two-pass estimate: statistics over the whole liver, a vessel mask from
/// those, then statistics over the liver minus that mask.
pub fn estimate_parenchyma_stats(ct: &ScalarVolume, liver: &LabelVolume, cfg: &GenConfig) -> Result<ParenchymaStats> {
    ct.geometry().ensure_same_grid(liver.geometry(), "liver mask")?;
    let liver_values = || ct.data().iter().zip(liver.data()).filter(|(_, &l)| l == LIVER).map(|(&v, _)| v);
    let (mean, std, count) = mean_std(liver_values()).ok_or_else(|| Error::Argument("liver mask has no voxels of label 1".into()))?;
    let first = ParenchymaStats {
        liver_mean: mean,
        mu_p: mean,
        sigma_p: std,
        voxel_count: count,
    };

    let vessels = segment_vessels(ct, liver, &first, cfg)?;
    let parenchyma = ct
        .data()
        .iter()
        .zip(liver.data())
        .zip(vessels.data())
        .filter(|((_, &l), &v)| l == LIVER && !v)
        .map(|((&x, _), _)| x);
    match mean_std(parenchyma) {
        Some((mu_p, sigma_p, voxel_count)) => Ok(ParenchymaStats {
            liver_mean: mean,
            mu_p,
            sigma_p,
            voxel_count,
        }),
        // Everything flagged as vessel: fall back to whole-liver statistics.
        None => {
            log::warn!("vessel mask covers the whole liver; using whole-liver statistics");
            Ok(first)
        }
    }
}

/// Vessel mask: liver voxels whose smoothed HU exceeds `liver_mean + b`.
///
/// Smoothing uses σa = base + per_std·σp and only runs over the liver
/// bounding box plus the kernel reach, which gives the same values inside
/// the liver as blurring the full scan.
pub fn segment_vessels(ct: &ScalarVolume, liver: &LabelVolume, stats: &ParenchymaStats, cfg: &GenConfig) -> Result<BinaryMask> {
    ct.geometry().ensure_same_grid(liver.geometry(), "liver mask")?;
    let mut out = Volume::filled(ct.geometry().clone(), false);
    let Some(bounds) = liver_bounds(liver) else {
        return Ok(out);
    };

    let sigma = cfg.sigma_unit.to_voxels(cfg.vessel_smoothing(stats.sigma_p), ct.spacing());
    let dims = ct.dims();
    let mut start = [0; 3];
    let mut size = [0; 3];
    for a in 0..3 {
        let margin = (gaussian_kernel(sigma[a]).len() - 1) / 2;
        let lo = bounds.start[a].saturating_sub(margin);
        let hi = (bounds.start[a] + bounds.size[a] - 1 + margin).min(dims[a] - 1);
        start[a] = lo;
        size[a] = hi - lo + 1;
    }
    let region = Region { start, size };
    let smoothed = gaussian_blur_axes(&ct.crop(&region), sigma)?;
    let threshold = stats.liver_mean + cfg.vessel_threshold_offset;

    let local = liver.crop(&region);
    let flags = Volume::from_vec(
        smoothed.geometry().clone(),
        smoothed
            .data()
            .iter()
            .zip(local.data())
            .map(|(&v, &l)| l == LIVER && v > threshold)
            .collect(),
    )?;
    out.paste(&region, &flags);
    Ok(out)
}
