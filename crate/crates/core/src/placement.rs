//! Vessel-avoiding tumor center selection.
//!
//! A candidate center is drawn uniformly from the liver voxels and rejected
//! when the axis-aligned box of per-axis voxel radius around it touches a
//! blocked voxel (vessel or an already implanted tumor).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volgrid::{BinaryMask, Geometry, LabelVolume, Volume, LIVER, TUMOR};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRequest {
    pub radius_mm: f64,
    pub max_attempts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub center: [usize; 3],
    /// Draws consumed, including the accepted one.
    pub attempts: usize,
}

/// Per-axis box half-width ⌈r / spacing⌉ in voxels.
pub fn voxel_radii(radius_mm: f64, spacing: [f64; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| (radius_mm / spacing[a]).ceil().max(0.0) as usize)
}

fn clipped_box(center: [usize; 3], r: [usize; 3], dims: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let lo = [0, 1, 2].map(|a| center[a].saturating_sub(r[a]));
    let hi = [0, 1, 2].map(|a| (center[a] + r[a]).min(dims[a] - 1));
    (lo, hi)
}

/// True iff the closed box `center ± r`, clipped to the volume, holds no
/// blocked voxel.
pub fn collision_free(blocked: &BinaryMask, center: [usize; 3], r: [usize; 3]) -> bool {
    let (lo, hi) = clipped_box(center, r, blocked.dims());
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                if blocked.get([x, y, z]) {
                    return false;
                }
            }
        }
    }
    true
}

/// Summed-volume table over the bounding box of the blocked voxels, giving
/// O(1) box queries.
#[derive(Clone, Debug)]
pub struct CollisionIndex {
    dims: [usize; 3],
    /// Bounding box of blocked voxels, `None` when nothing is blocked.
    bounds: Option<([usize; 3], [usize; 3])>,
    /// (sx+1)·(sy+1)·(sz+1) prefix counts.
    table: Vec<u32>,
}

impl CollisionIndex {
    pub fn new(blocked: &BinaryMask) -> Self {
        let g = blocked.geometry();
        let dims = g.dims;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for (i, &b) in blocked.data().iter().enumerate() {
            if b {
                let p = g.coords(i);
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
        }
        if lo[0] == usize::MAX {
            return CollisionIndex { dims, bounds: None, table: Vec::new() };
        }
        let size = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
        let (tx, ty) = (size[0] + 1, size[1] + 1);
        let mut table = vec![0u32; tx * ty * (size[2] + 1)];
        let at = |x: usize, y: usize, z: usize| x + tx * (y + ty * z);
        for z in 0..size[2] {
            for y in 0..size[1] {
                let mut row = 0u32;
                for x in 0..size[0] {
                    row += u32::from(blocked.get([lo[0] + x, lo[1] + y, lo[2] + z]));
                    // S(x,y,z) = row + S(x,y-1,z) + S(x,y,z-1) - S(x,y-1,z-1)
                    table[at(x + 1, y + 1, z + 1)] =
                        row + table[at(x + 1, y, z + 1)] + table[at(x + 1, y + 1, z)] - table[at(x + 1, y, z)];
                }
            }
        }
        CollisionIndex { dims, bounds: Some((lo, hi)), table }
    }

    /// Vessels plus voxels already labeled tumor.
    pub fn from_vessels_and_labels(vessels: &BinaryMask, labels: &LabelVolume) -> Self {
        let blocked = Volume::from_vec(
            vessels.geometry().clone(),
            vessels.data().iter().zip(labels.data()).map(|(&v, &l)| v || l == TUMOR).collect(),
        )
        .expect("same geometry");
        CollisionIndex::new(&blocked)
    }

    /// Blocked voxels inside the closed, clipped box `center ± r`.
    pub fn count_in_box(&self, center: [usize; 3], r: [usize; 3]) -> u32 {
        let Some((blo, bhi)) = self.bounds else {
            return 0;
        };
        let (lo, hi) = clipped_box(center, r, self.dims);
        let mut a = [0usize; 3];
        let mut b = [0usize; 3];
        for k in 0..3 {
            let l = lo[k].max(blo[k]);
            let h = hi[k].min(bhi[k]);
            if l > h {
                return 0;
            }
            // Half-open table coordinates relative to the bounds origin.
            a[k] = l - blo[k];
            b[k] = h - blo[k] + 1;
        }
        let tx = bhi[0] - blo[0] + 2;
        let ty = bhi[1] - blo[1] + 2;
        let s = |x: usize, y: usize, z: usize| self.table[x + tx * (y + ty * z)] as i64;
        let total = s(b[0], b[1], b[2]) - s(a[0], b[1], b[2]) - s(b[0], a[1], b[2]) - s(b[0], b[1], a[2])
            + s(a[0], a[1], b[2])
            + s(a[0], b[1], a[2])
            + s(b[0], a[1], a[2])
            - s(a[0], a[1], a[2]);
        total as u32
    }

    pub fn is_free(&self, center: [usize; 3], r: [usize; 3]) -> bool {
        self.count_in_box(center, r) == 0
    }
}

/// Linear indices of every liver voxel, the uniform candidate pool.
pub fn liver_candidates(liver: &LabelVolume) -> Vec<usize> {
    liver
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == LIVER)
        .map(|(i, _)| i)
        .collect()
}

/// Rejection-sample a center from `candidates`. A draw is accepted when the
/// voxel is still liver in `labels` and its box is free in `index`.
pub fn sample_from_candidates(
    candidates: &[usize],
    geometry: &Geometry,
    labels: &LabelVolume,
    index: &CollisionIndex,
    radius_mm: f64,
    max_attempts: usize,
    rng: &mut impl Rng,
) -> Result<Placement> {
    if candidates.is_empty() {
        return Err(Error::Argument("liver mask has no voxels of label 1".into()));
    }
    let r = voxel_radii(radius_mm, geometry.spacing);
    for attempt in 1..=max_attempts {
        let i = candidates[rng.random_range(0..candidates.len())];
        if labels.data()[i] != LIVER {
            continue;
        }
        let center = geometry.coords(i);
        if index.is_free(center, r) {
            return Ok(Placement { center, attempts: attempt });
        }
    }
    Err(Error::PlacementExhausted { attempts: max_attempts })
}

/// Draw a collision-free center inside the liver.
pub fn sample_location(liver: &LabelVolume, vessels: &BinaryMask, req: &PlacementRequest, rng: &mut impl Rng) -> Result<Placement> {
    liver.geometry().ensure_same_grid(vessels.geometry(), "vessel mask")?;
    if !(req.radius_mm.is_finite() && req.radius_mm > 0.0) {
        return Err(Error::Argument(format!("placement radius must be > 0, got {}", req.radius_mm)));
    }
    if req.max_attempts == 0 {
        return Err(Error::Argument("max_attempts must be >= 1".into()));
    }
    let candidates = liver_candidates(liver);
    let index = CollisionIndex::new(vessels);
    sample_from_candidates(&candidates, liver.geometry(), liver, &index, req.radius_mm, req.max_attempts, rng)
}
