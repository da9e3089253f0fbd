//! Placing a generated tumor into the scan: blending, mass-effect warping
//! and capsule brightening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{
    gaussian_blur_axes, sample_nearest, sample_trilinear_clamped, Geometry, LabelVolume, ScalarVolume, SoftMask, Volume,
    LIVER, TUMOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleParams {
    pub lb: f64,
    pub ub: f64,
    /// Capsule blur σd per axis in voxels.
    pub sigma_d: [f64; 3],
    /// Brightening in HU.
    pub d: f64,
}

impl CapsuleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lb && self.lb < self.ub && self.ub <= 1.0) {
            return Err(Error::Argument(format!("capsule bounds ({}, {}) must satisfy 0 <= lb < ub <= 1", self.lb, self.ub)));
        }
        if !(self.d.is_finite() && self.d >= 0.0) {
            return Err(Error::Argument(format!("capsule brightening must be >= 0, got {}", self.d)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassEffectParams {
    /// Ball center in voxel coordinates.
    pub center: [f64; 3],
    /// Radius of the affected ball in mm.
    pub gamma_max: f64,
    /// Expansion intensity I in [0, 100].
    pub intensity: f64,
}

impl MassEffectParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.intensity) {
            return Err(Error::Argument(format!("expansion intensity {} outside [0, 100]", self.intensity)));
        }
        if !(self.gamma_max.is_finite() && self.gamma_max > 0.0) {
            return Err(Error::Argument(format!("gamma_max must be > 0, got {}", self.gamma_max)));
        }
        Ok(())
    }
}

/// Source distance for an output voxel at distance `gamma` from the center:
/// γ' = (1 − (1 − γ/γmax)²·I/100)·γ inside the ball, γ outside.
pub fn gamma_prime(gamma: f64, gamma_max: f64, intensity: f64) -> f64 {
    if gamma >= gamma_max {
        return gamma;
    }
    let k = 1.0 - gamma / gamma_max;
    (1.0 - k * k * intensity / 100.0) * gamma
}

/// f' = (1 − t'')·f + t''·T''; label 2 where t'' ≥ `label_threshold` on liver.
pub fn blend_tumor(
    ct: &ScalarVolume,
    labels: &LabelVolume,
    t2: &SoftMask,
    texture: &ScalarVolume,
    label_threshold: f64,
) -> Result<(ScalarVolume, LabelVolume)> {
    let g = ct.geometry();
    g.ensure_same_grid(labels.geometry(), "label volume")?;
    g.ensure_same_grid(t2.geometry(), "tumor mask")?;
    g.ensure_same_grid(texture.geometry(), "texture")?;
    let f: Vec<f64> = ct
        .data()
        .iter()
        .zip(t2.data())
        .zip(texture.data())
        .map(|((&f, &t), &tex)| (1.0 - t) * f + t * tex)
        .collect();
    let l: Vec<u8> = labels
        .data()
        .iter()
        .zip(t2.data())
        .map(|(&l, &t)| if l == LIVER && t >= label_threshold { TUMOR } else { l })
        .collect();
    Ok((Volume::from_vec(g.clone(), f)?, Volume::from_vec(g.clone(), l)?))
}

/// Visit every voxel strictly inside the ball together with its source
/// point; voxels at the center or outside are left alone.
fn for_each_warped(geometry: &Geometry, p: &MassEffectParams, mut visit: impl FnMut(usize, [f64; 3])) {
    let s = geometry.spacing;
    let dims = geometry.dims;
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let reach = p.gamma_max / s[a];
        lo[a] = (p.center[a] - reach).floor().max(0.0) as usize;
        hi[a] = ((p.center[a] + reach).ceil().max(0.0) as usize).min(dims[a] - 1);
    }
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let off = [
                    (x as f64 - p.center[0]) * s[0],
                    (y as f64 - p.center[1]) * s[1],
                    (z as f64 - p.center[2]) * s[2],
                ];
                let gamma = (off[0] * off[0] + off[1] * off[1] + off[2] * off[2]).sqrt();
                if gamma == 0.0 || gamma >= p.gamma_max {
                    continue;
                }
                let scale = gamma_prime(gamma, p.gamma_max, p.intensity) / gamma;
                let src = [
                    p.center[0] + (x as f64 - p.center[0]) * scale,
                    p.center[1] + (y as f64 - p.center[1]) * scale,
                    p.center[2] + (z as f64 - p.center[2]) * scale,
                ];
                visit(geometry.index(x, y, z), src);
            }
        }
    }
}

/// Radial inverse warp of a scalar field: trilinear sampling.
pub fn warp_scalar(field: &Volume<f64>, p: &MassEffectParams) -> Result<Volume<f64>> {
    p.validate()?;
    let mut out = field.clone();
    if p.intensity == 0.0 {
        return Ok(out);
    }
    let data = out.data_mut();
    for_each_warped(field.geometry(), p, |i, src| data[i] = sample_trilinear_clamped(field, src));
    Ok(out)
}

/// Radial inverse warp of a label volume: nearest-neighbor sampling.
pub fn warp_labels(labels: &LabelVolume, p: &MassEffectParams) -> Result<LabelVolume> {
    p.validate()?;
    let mut out = labels.clone();
    if p.intensity == 0.0 {
        return Ok(out);
    }
    let data = out.data_mut();
    for_each_warped(labels.geometry(), p, |i, src| data[i] = sample_nearest(labels, src));
    Ok(out)
}

/// (f'', l''): the mass effect. I = 0 returns the inputs unchanged.
pub fn mass_effect_warp(ct: &ScalarVolume, labels: &LabelVolume, p: &MassEffectParams) -> Result<(ScalarVolume, LabelVolume)> {
    ct.geometry().ensure_same_grid(labels.geometry(), "label volume")?;
    Ok((warp_scalar(ct, p)?, warp_labels(labels, p)?))
}

/// f''' = f'' + d·blur(1{lb ≤ t'' ≤ ub}, σd).
pub fn apply_capsule(ct: &ScalarVolume, t2: &SoftMask, p: &CapsuleParams) -> Result<ScalarVolume> {
    p.validate()?;
    ct.geometry().ensure_same_grid(t2.geometry(), "tumor mask")?;
    if p.d == 0.0 {
        return Ok(ct.clone());
    }
    let edge = t2.volume().map(|t| if p.lb <= t && t <= p.ub { 1.0 } else { 0.0 });
    let blurred = gaussian_blur_axes(&edge, p.sigma_d)?;
    let out = ct.data().iter().zip(blurred.data()).map(|(&f, &e)| f + p.d * e.clamp(0.0, 1.0)).collect();
    Volume::from_vec(ct.geometry().clone(), out)
}
