use rayon::prelude::*;

use super::volume::{SoftMask, Volume};
use crate::error::{Error, Result};

/// Normalized 1D Gaussian taps over `[-R, R]`, `R = ceil(4σ)`.
///
/// Returns `[1.0]` for σ = 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / denom).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= sum);
    taps
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !sigma.is_finite() {
        return Err(Error::Argument(format!("blur sigma must be finite, got {sigma}")));
    }
    if sigma < 0.0 {
        return Err(Error::Argument(format!("blur sigma must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Isotropic Gaussian blur with σ in voxels, edge-replicated borders.
pub fn gaussian_blur(volume: &Volume<f64>, sigma: f64) -> Result<Volume<f64>> {
    gaussian_blur_axes(volume, [sigma; 3])
}

/// Separable Gaussian blur with a per-axis σ in voxels.
pub fn gaussian_blur_axes(volume: &Volume<f64>, sigmas: [f64; 3]) -> Result<Volume<f64>> {
    for &s in &sigmas {
        check_sigma(s)?;
    }
    let mut current = volume.clone();
    for (axis, &sigma) in sigmas.iter().enumerate() {
        if sigma == 0.0 || volume.dims()[axis] == 1 {
            continue;
        }
        let kernel = gaussian_kernel(sigma);
        current = convolve_axis(&current, axis, &kernel);
    }
    Ok(current)
}

impl SoftMask {
    /// Blur and clamp back into [0, 1].
    pub fn blurred(&self, sigma: f64) -> Result<SoftMask> {
        self.blurred_axes([sigma; 3])
    }

    pub fn blurred_axes(&self, sigmas: [f64; 3]) -> Result<SoftMask> {
        Ok(SoftMask::clamped(gaussian_blur_axes(self.volume(), sigmas)?))
    }
}

fn convolve_axis(input: &Volume<f64>, axis: usize, kernel: &[f64]) -> Volume<f64> {
    let [nx, ny, nz] = input.dims();
    let radius = (kernel.len() / 2) as isize;
    let src = input.data();
    let slice_len = nx * ny;
    let mut out = vec![0.0; src.len()];

    match axis {
        0 => {
            out.par_chunks_mut(nx).enumerate().for_each(|(row, dst)| {
                let line = &src[row * nx..(row + 1) * nx];
                let last = nx as isize - 1;
                for (x, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (k, w) in kernel.iter().enumerate() {
                        let xi = (x as isize + k as isize - radius).clamp(0, last) as usize;
                        acc += w * line[xi];
                    }
                    *d = acc;
                }
            });
        }
        1 => {
            out.par_chunks_mut(slice_len).enumerate().for_each(|(z, dst)| {
                let slice = &src[z * slice_len..(z + 1) * slice_len];
                let last = ny as isize - 1;
                for y in 0..ny {
                    let drow = &mut dst[y * nx..(y + 1) * nx];
                    for (k, &w) in kernel.iter().enumerate() {
                        let yi = (y as isize + k as isize - radius).clamp(0, last) as usize;
                        let srow = &slice[yi * nx..(yi + 1) * nx];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += w * s;
                        }
                    }
                }
            });
        }
        _ => {
            out.par_chunks_mut(slice_len).enumerate().for_each(|(z, dst)| {
                let last = nz as isize - 1;
                for (k, &w) in kernel.iter().enumerate() {
                    let zi = (z as isize + k as isize - radius).clamp(0, last) as usize;
                    let sslice = &src[zi * slice_len..(zi + 1) * slice_len];
                    for (d, s) in dst.iter_mut().zip(sslice) {
                        *d += w * s;
                    }
                }
            });
        }
    }
    Volume::from_vec(input.geometry().clone(), out).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;

    #[test]
    fn kernel_is_normalized_and_truncated_at_four_sigma() {
        for sigma in [0.3, 0.6, 1.0, 2.5] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (4.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let v = Volume::filled(Geometry::isotropic([7, 6, 5]), 42.5);
        let b = gaussian_blur(&v, 1.3).unwrap();
        assert!(b.data().iter().all(|x| (x - 42.5).abs() < 1e-10));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let v = Volume::from_fn(Geometry::isotropic([4, 4, 4]), |[x, y, z]| (x * y + z) as f64);
        assert_eq!(gaussian_blur(&v, 0.0).unwrap(), v);
    }

    #[test]
    fn negative_or_nan_sigma_rejected() {
        let v = Volume::filled(Geometry::isotropic([2, 2, 2]), 1.0);
        assert!(matches!(gaussian_blur(&v, -0.5), Err(Error::Argument(_))));
        assert!(gaussian_blur(&v, f64::NAN).is_err());
    }

    #[test]
    fn impulse_center_equals_product_of_kernel_centers() {
        // Oracle: 1D Gaussian by direct summation over [-4, 4].
        let sigma = 1.0_f64;
        let raw: Vec<f64> = (-4..=4).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).collect();
        let center_1d = raw[4] / raw.iter().sum::<f64>();

        let mut v = Volume::filled(Geometry::isotropic([9, 9, 9]), 0.0);
        v.set([4, 4, 4], 1.0);
        let b = gaussian_blur(&v, sigma).unwrap();
        assert!((b.get([4, 4, 4]) - center_1d.powi(3)).abs() < 1e-12);
        // Separable response one voxel off-center along x.
        let off_1d = raw[5] / raw.iter().sum::<f64>();
        assert!((b.get([5, 4, 4]) - off_1d * center_1d * center_1d).abs() < 1e-12);
    }

    proptest::proptest! {
        // Random interior surrounded by a constant border at least one kernel
        // radius wide: replication then acts like an infinite constant
        // extension and the total mass is conserved.
        #[test]
        fn mean_preserved_for_interior_dominated_fields(
            values in proptest::collection::vec(-500.0f64..500.0, 64),
            border in -100.0f64..100.0,
            sigma in 0.2f64..1.0,
        ) {
            let g = Geometry::isotropic([12, 12, 12]);
            let v = Volume::from_fn(g, |[x, y, z]| {
                if (4..8).contains(&x) && (4..8).contains(&y) && (4..8).contains(&z) {
                    values[(x - 4) + 4 * ((y - 4) + 4 * (z - 4))]
                } else {
                    border
                }
            });
            let b = gaussian_blur(&v, sigma).unwrap();
            let scale = v.data().iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
            proptest::prop_assert!((b.mean() - v.mean()).abs() <= 1e-6 * scale.max(1e-12));
        }
    }

    #[test]
    fn soft_mask_blur_stays_in_unit_range() {
        let g = Geometry::isotropic([8, 8, 8]);
        let m = SoftMask::new(Volume::from_fn(g, |[x, _, _]| if x < 4 { 1.0 } else { 0.0 })).unwrap();
        let b = m.blurred(1.5).unwrap();
        assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
