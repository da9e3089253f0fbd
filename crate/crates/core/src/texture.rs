//! Tumor texture: Gaussian noise drawn on a coarse grid, cubically upscaled
//! by η, cropped to size and blurred.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{gaussian_blur_axes, upscale_cubic, BinaryMask, Geometry, Region, ScalarVolume, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub mu_t: f64,
    pub sigma_p: f64,
    /// Grain scale η ≥ 1; 1 leaves the noise unscaled.
    pub eta: f64,
    /// Blur σ per axis in voxels.
    pub sigma_b: [f64; 3],
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu_t.is_finite() {
            return Err(Error::Argument("texture mean must be finite".into()));
        }
        if !(self.sigma_p.is_finite() && self.sigma_p >= 0.0) {
            return Err(Error::Argument(format!("texture std must be >= 0, got {}", self.sigma_p)));
        }
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return Err(Error::Argument(format!("texture scale eta must be >= 1, got {}", self.eta)));
        }
        Ok(())
    }
}

/// I.i.d. N(μt, σp²) samples in scan order.
pub fn generate_noise(geometry: Geometry, params: &TextureParams, rng: &mut impl Rng) -> Result<ScalarVolume> {
    params.validate()?;
    if params.sigma_p == 0.0 {
        return Ok(Volume::filled(geometry, params.mu_t));
    }
    let normal = Normal::new(params.mu_t, params.sigma_p).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(Volume::from_fn(geometry, |_| normal.sample(rng)))
}

/// T'': noise at ⌈dims/η⌉, upscaled by η, center-cropped to `geometry.dims`
/// and blurred with σb.
pub fn generate_texture(geometry: &Geometry, params: &TextureParams, rng: &mut impl Rng) -> Result<ScalarVolume> {
    params.validate()?;
    let dims = geometry.dims;
    let coarse_dims = dims.map(|n| ((n as f64 / params.eta).ceil() as usize).max(1));
    let coarse_spacing = [0, 1, 2].map(|a| geometry.spacing[a] * params.eta);
    let coarse = generate_noise(Geometry::new(coarse_dims, coarse_spacing)?, params, rng)?;
    let up = upscale_cubic(&coarse, params.eta)?;
    let up_dims = up.dims();
    let start = [0, 1, 2].map(|a| (up_dims[a].saturating_sub(dims[a])) / 2);
    let cropped = if up_dims == dims {
        up
    } else {
        up.crop(&Region { start, size: dims })
    };
    let field = cropped.with_geometry(geometry.clone())?;
    gaussian_blur_axes(&field, params.sigma_b)
}

/// Mean over the three axes of the Pearson correlation between each voxel
/// and its +1 neighbor, restricted to pairs with both ends inside `mask`
/// when given. Returns 0 for constant fields.
pub fn lag1_autocorrelation(field: &ScalarVolume, mask: Option<&BinaryMask>) -> f64 {
    let [nx, ny, nz] = field.dims();
    let inside = |p: [usize; 3]| mask.is_none_or(|m| m.get(p));
    let mut total = 0.0;
    let mut axes = 0;
    for axis in 0..3 {
        let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x, y, z];
                    let mut q = p;
                    q[axis] += 1;
                    if q[axis] >= field.dims()[axis] || !inside(p) || !inside(q) {
                        continue;
                    }
                    let (a, b) = (field.get(p), field.get(q));
                    n += 1.0;
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
        }
        if n < 2.0 {
            continue;
        }
        let cov = sab / n - (sa / n) * (sb / n);
        let va = saa / n - (sa / n).powi(2);
        let vb = sbb / n - (sb / n).powi(2);
        axes += 1;
        if va > 0.0 && vb > 0.0 {
            total += cov / (va * vb).sqrt();
        }
    }
    if axes == 0 {
        0.0
    } else {
        total / axes as f64
    }
}
