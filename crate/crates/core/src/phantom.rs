//! Synthetic CT fixtures: an ellipsoidal liver with textured parenchyma and
//! bright tubular vessels inside a soft-tissue body.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::stream;
use crate::volgrid::{gaussian_blur, gaussian_kernel, BinaryMask, Geometry, LabelVolume, ScalarVolume, Volume, BACKGROUND, LIVER};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub liver_hu: f64,
    /// Std of the (lightly smoothed) parenchyma noise.
    pub noise_std: f64,
    pub vessel_hu: f64,
    /// Number of straight vessel segments.
    pub vessels: usize,
    pub vessel_radius_mm: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [64; 3],
            spacing: [1.0; 3],
            liver_hu: 100.0,
            noise_std: 5.0,
            vessel_hu: 190.0,
            vessels: 4,
            vessel_radius_mm: 1.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub ct: ScalarVolume,
    pub liver: LabelVolume,
    /// Voxels painted as vessel.
    pub vessels: BinaryMask,
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2: f64 = ab.iter().map(|v| v * v).sum();
    let t = if len2 == 0.0 {
        0.0
    } else {
        (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    };
    (0..3).map(|k| (ap[k] - t * ab[k]).powi(2)).sum::<f64>().sqrt()
}

/// Build a phantom. Liver half-axes are 38% of the field of view per axis,
/// the body 47%; everything outside the body is air.
pub fn liver_phantom(spec: &PhantomSpec) -> Phantom {
    let g = Geometry::new(spec.dims, spec.spacing).expect("valid phantom geometry");
    let extent = [0, 1, 2].map(|a| spec.dims[a] as f64 * spec.spacing[a]);
    let center_mm = extent.map(|e| e / 2.0);
    let inside = |p: [usize; 3], frac: f64| -> bool {
        (0..3)
            .map(|a| {
                let d = (p[a] as f64 + 0.5) * spec.spacing[a] - center_mm[a];
                (d / (frac * extent[a])).powi(2)
            })
            .sum::<f64>()
            <= 1.0
    };
    let liver = Volume::from_fn(g.clone(), |p| if inside(p, 0.38) { LIVER } else { BACKGROUND });

    let mut rng = stream(spec.seed, 0);
    let noise = if spec.noise_std > 0.0 {
        // Smoothing white noise scales its std by the kernel's L2 norm per axis.
        let k = gaussian_kernel(0.7);
        let gain = k.iter().map(|w| w * w).sum::<f64>().powf(1.5);
        let normal = Normal::new(0.0, spec.noise_std / gain).expect("finite std");
        let raw = Volume::from_fn(g.clone(), |_| normal.sample(&mut rng));
        gaussian_blur(&raw, 0.7).expect("valid sigma")
    } else {
        Volume::filled(g.clone(), 0.0)
    };

    let liver_voxels: Vec<[usize; 3]> = (0..g.len()).filter(|&i| liver.data()[i] == LIVER).map(|i| g.coords(i)).collect();
    let to_mm = |p: [usize; 3]| [0, 1, 2].map(|a| p[a] as f64 * spec.spacing[a]);
    let segments: Vec<([f64; 3], [f64; 3])> = if liver_voxels.is_empty() {
        Vec::new()
    } else {
        (0..spec.vessels)
            .map(|_| {
                let a = liver_voxels[rng.random_range(0..liver_voxels.len())];
                let b = liver_voxels[rng.random_range(0..liver_voxels.len())];
                (to_mm(a), to_mm(b))
            })
            .collect()
    };
    let vessels = Volume::from_fn(g.clone(), |p| {
        liver.get(p) == LIVER
            && segments
                .iter()
                .any(|&(a, b)| segment_distance(to_mm(p), a, b) <= spec.vessel_radius_mm)
    });

    let ct = Volume::from_fn(g.clone(), |p| {
        let i = g.index(p[0], p[1], p[2]);
        if vessels.data()[i] {
            spec.vessel_hu + noise.data()[i]
        } else if liver.data()[i] == LIVER {
            spec.liver_hu + noise.data()[i]
        } else if inside(p, 0.47) {
            40.0 + noise.data()[i]
        } else {
            -1000.0
        }
    });
    Phantom { ct, liver, vessels }
}
