//! Tumor shape: ellipsoid, elastic deformation, soft edge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ElasticConfig;
use crate::error::{Error, Result};
use crate::volgrid::{
    largest_component, resample_axis_cubic, sample_trilinear_clamped, Connectivity, Geometry, SoftMask, Volume,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Voxel coordinates of the ellipsoid center.
    pub center: [f64; 3],
    /// Half-axis lengths in mm along x, y, z.
    pub half_axes_mm: [f64; 3],
    /// Elastic deformation strength σe.
    pub sigma_e: f64,
    /// Edge blur σc per axis in voxels.
    pub sigma_c: [f64; 3],
}

/// Binary ellipsoid: 1 where Σ((p−c)·s / a)² ≤ 1.
pub fn ellipsoid_mask(center: [f64; 3], half_axes_mm: [f64; 3], geometry: &Geometry) -> Result<SoftMask> {
    if half_axes_mm.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(Error::Argument(format!("half-axes must be positive, got {half_axes_mm:?}")));
    }
    let s = geometry.spacing;
    let v = Volume::from_fn(geometry.clone(), |p| {
        let q: f64 = (0..3)
            .map(|a| {
                let d = (p[a] as f64 - center[a]) * s[a] / half_axes_mm[a];
                d * d
            })
            .sum();
        if q <= 1.0 {
            1.0
        } else {
            0.0
        }
    });
    Ok(SoftMask::clamped(v))
}

/// Smooth displacement field in voxels: a `k³` lattice of U(−α, α) vectors
/// spanning the grid, Catmull-Rom interpolated to every voxel.
pub fn displacement_field(geometry: &Geometry, alpha: f64, control_points: usize, rng: &mut impl Rng) -> [Volume<f64>; 3] {
    let k = control_points.max(2);
    let lattice = Geometry::isotropic([k; 3]);
    let mut channel = || {
        let coarse = Volume::from_fn(lattice.clone(), |_| alpha * rng.random_range(-1.0..=1.0));
        let mut field = coarse;
        for axis in 0..3 {
            let n = geometry.dims[axis];
            let step = if n > 1 { (k - 1) as f64 / (n - 1) as f64 } else { 1.0 };
            field = resample_axis_cubic(&field, axis, n, step);
        }
        Volume::from_vec(geometry.clone(), field.into_vec()).expect("resampled to target dims")
    };
    let dx = channel();
    let dy = channel();
    let dz = channel();
    [dx, dy, dz]
}

/// t': warp `mask` by a random smooth displacement of amplitude
/// `amplitude_per_sigma · σe` voxels, re-binarize at 0.5 and keep the
/// largest face-connected piece. σe = 0 returns the input.
pub fn elastic_deform(mask: &SoftMask, sigma_e: f64, cfg: &ElasticConfig, rng: &mut impl Rng) -> Result<SoftMask> {
    if !(sigma_e.is_finite() && sigma_e >= 0.0) {
        return Err(Error::Argument(format!("elastic sigma must be >= 0, got {sigma_e}")));
    }
    let alpha = cfg.amplitude_per_sigma * sigma_e;
    if alpha == 0.0 {
        return Ok(mask.clone());
    }
    let g = mask.geometry().clone();
    let [dx, dy, dz] = displacement_field(&g, alpha, cfg.control_points, rng);
    let src = mask.volume();
    let warped = Volume::from_fn(g.clone(), |p| {
        let i = g.index(p[0], p[1], p[2]);
        let q = [
            p[0] as f64 + dx.data()[i],
            p[1] as f64 + dy.data()[i],
            p[2] as f64 + dz.data()[i],
        ];
        sample_trilinear_clamped(src, q) >= 0.5
    });
    let kept = largest_component(&warped, Connectivity::Six);
    if kept.count_true() == 0 {
        log::debug!("elastic deformation erased the mask; keeping the undeformed shape");
        return Ok(mask.clone());
    }
    Ok(SoftMask::from_binary(&kept))
}

/// t'': Gaussian blur of the binary shape.
pub fn soft_edge(mask: &SoftMask, sigma_c: [f64; 3]) -> Result<SoftMask> {
    if sigma_c.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::Argument(format!("edge blur sigma must be > 0, got {sigma_c:?}")));
    }
    mask.blurred_axes(sigma_c)
}

/// Ellipsoid → elastic deformation → soft edge.
pub fn generate_shape(params: &ShapeParams, geometry: &Geometry, elastic: &ElasticConfig, rng: &mut impl Rng) -> Result<SoftMask> {
    let t = ellipsoid_mask(params.center, params.half_axes_mm, geometry)?;
    let t1 = elastic_deform(&t, params.sigma_e, elastic, rng)?;
    soft_edge(&t1, params.sigma_c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::connected_components;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn sphere(r: f64, n: usize) -> SoftMask {
        let c = (n / 2) as f64;
        ellipsoid_mask([c; 3], [r; 3], &Geometry::isotropic([n; 3])).unwrap()
    }

    #[test]
    fn sphere_volume_close_to_analytic() {
        for r in [8.0, 12.0, 16.0] {
            let n = (2.0 * r) as usize + 5;
            let count = sphere(r, n).sum();
            let exact = 4.0 / 3.0 * PI * r * r * r;
            assert!((count - exact).abs() / exact < 0.05, "r={r}: {count} vs {exact}");
        }
    }

    #[test]
    fn volume_scales_cubically() {
        for r in [8.0, 10.0] {
            let small = sphere(r, 2 * r as usize + 5).sum();
            let big = sphere(2.0 * r, 4 * r as usize + 5).sum();
            let ratio = big / small;
            assert!((7.2..=8.8).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn corner_center_is_clipped() {
        let m = ellipsoid_mask([0.0; 3], [3.0; 3], &Geometry::isotropic([5; 3])).unwrap();
        assert_eq!(m.get([0, 0, 0]), 1.0);
        assert_eq!(m.get([4, 4, 4]), 0.0);
    }

    #[test]
    fn sphere_is_reflection_symmetric() {
        let m = sphere(5.0, 13);
        for z in 0..13 {
            for y in 0..13 {
                for x in 0..13 {
                    let v = m.get([x, y, z]);
                    assert_eq!(v, m.get([12 - x, y, z]));
                    assert_eq!(v, m.get([x, 12 - y, z]));
                    assert_eq!(v, m.get([x, y, 12 - z]));
                }
            }
        }
    }

    #[test]
    fn anisotropic_spacing_uses_mm() {
        let g = Geometry::new([21, 21, 11], [1.0, 1.0, 2.0]).unwrap();
        let m = ellipsoid_mask([10.0, 10.0, 5.0], [6.0; 3], &g).unwrap();
        assert_eq!(m.get([10, 10, 8]), 1.0);
        assert_eq!(m.get([10, 10, 9]), 0.0);
        assert_eq!(m.get([16, 10, 5]), 1.0);
        assert_eq!(m.get([17, 10, 5]), 0.0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let m = sphere(4.0, 12);
        assert_eq!(elastic_deform(&m, 0.0, &ElasticConfig::default(), &mut rng(1)).unwrap(), m);
    }

    #[test]
    fn deformation_is_deterministic() {
        let m = sphere(6.0, 24);
        let cfg = ElasticConfig::default();
        let a = elastic_deform(&m, 3.0, &cfg, &mut rng(4)).unwrap();
        let b = elastic_deform(&m, 3.0, &cfg, &mut rng(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m);
    }

    #[test]
    fn large_deformation_keeps_volume_and_connectivity() {
        // Large preset: r = 32 mm, σe ∈ [5, 10].
        let r = 32.0;
        let margin = 14;
        let n = 2 * (r as usize) + 2 * margin + 1;
        let m = sphere(r, n);
        let v0 = m.sum();
        let cfg = ElasticConfig::default();
        let mut seeds = rng(99);
        for trial in 0..50 {
            let sigma_e = seeds.random_range(5.0..=10.0);
            let out = elastic_deform(&m, sigma_e, &cfg, &mut rng(trial)).unwrap();
            let v = out.sum();
            assert!((v - v0).abs() / v0 <= 0.3, "trial {trial}: {v} vs {v0}");
            assert_eq!(connected_components(&out.threshold(0.5), Connectivity::Six).count, 1);
        }
    }

    #[test]
    fn soft_edge_saturates_and_halves_on_flat_face() {
        let g = Geometry::isotropic([20; 3]);
        let cube = SoftMask::from_binary(&Volume::from_fn(g.clone(), |p| p.iter().all(|&c| (2..18).contains(&c))));
        assert!((soft_edge(&cube, [1.0; 3]).unwrap().get([10, 10, 10]) - 1.0).abs() < 1e-6);

        // Half-space x ≥ 10 sampled halfway between voxels 9 and 10.
        let half = SoftMask::from_binary(&Volume::from_fn(g.clone(), |[x, _, _]| x >= 10));
        let t = soft_edge(&half, [1.0; 3]).unwrap();
        let boundary = 0.5 * (t.get([9, 10, 10]) + t.get([10, 10, 10]));
        assert!((boundary - 0.5).abs() < 0.01, "{boundary}");

        let empty = SoftMask::zeros(g);
        assert_eq!(soft_edge(&empty, [1.0; 3]).unwrap().sum(), 0.0);
    }

    #[test]
    fn soft_edge_support_stays_near_shape() {
        let m = sphere(5.0, 24);
        let sigma = 1.2;
        let t = soft_edge(&m, [sigma; 3]).unwrap();
        let reach = (4.0 * sigma).ceil() as i64;
        let on: Vec<[usize; 3]> = (0..m.data().len()).filter(|&i| m.data()[i] == 1.0).map(|i| m.geometry().coords(i)).collect();
        for i in 0..t.data().len() {
            if t.data()[i] >= 0.5 {
                let p = t.geometry().coords(i);
                let near = on.iter().any(|q| (0..3).all(|a| (p[a] as i64 - q[a] as i64).abs() <= reach));
                assert!(near);
            }
        }
    }

    #[test]
    fn displacement_field_is_bounded_by_amplitude_plus_overshoot() {
        let g = Geometry::isotropic([30, 20, 10]);
        let [dx, dy, dz] = displacement_field(&g, 4.0, 3, &mut rng(3));
        for f in [dx, dy, dz] {
            // Catmull-Rom overshoot is at most 1.25x the lattice range.
            assert!(f.data().iter().all(|v| v.abs() <= 5.0 + 1e-9));
        }
    }
}
