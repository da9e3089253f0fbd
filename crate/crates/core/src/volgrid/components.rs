use serde::{Deserialize, Serialize};

use super::volume::{BinaryMask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors only.
    Six,
    /// Face, edge and corner neighbors.
    TwentySix,
}

impl Connectivity {
    /// Neighbor offsets that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity::Six && manhattan != 1 {
                        continue;
                    }
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }
}

/// Labeled components of a binary mask.
///
/// Component ids run `1..=count` in order of each component's first voxel
/// in scan order; 0 is background.
#[derive(Clone, Debug)]
pub struct ComponentSet {
    pub count: usize,
    pub labels: Volume<u32>,
    /// Voxel counts, indexed by `id - 1`.
    pub voxel_counts: Vec<usize>,
    /// Equivalent-sphere radii `(3 V / 4π)^(1/3)` in mm, indexed by `id - 1`.
    pub radii_mm: Vec<f64>,
}

impl ComponentSet {
    pub fn volume_mm3(&self, id: u32) -> f64 {
        self.voxel_counts[id as usize - 1] as f64 * self.labels.geometry().voxel_volume_mm3()
    }

    pub fn mask(&self, id: u32) -> BinaryMask {
        self.labels.map(|l| l == id)
    }
}

pub fn equivalent_radius_mm(volume_mm3: f64) -> f64 {
    (3.0 * volume_mm3 / (4.0 * std::f64::consts::PI)).cbrt()
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller provisional id wins so roots stay the earliest label.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling of `mask`.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let geometry = mask.geometry().clone();
    let [nx, ny, nz] = geometry.dims;
    let offsets: Vec<([isize; 3], isize)> = connectivity
        .backward_offsets()
        .into_iter()
        .map(|o| (o, o[0] + o[1] * nx as isize + o[2] * (nx * ny) as isize))
        .collect();

    let data = mask.data();
    let mut provisional = vec![u32::MAX; data.len()];
    let mut uf = UnionFind { parent: Vec::new() };

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geometry.index(x, y, z);
                if !data[i] {
                    continue;
                }
                let mut assigned = u32::MAX;
                for &(o, delta) in &offsets {
                    let (px, py, pz) = (x as isize + o[0], y as isize + o[1], z as isize + o[2]);
                    if px < 0 || py < 0 || pz < 0 || px >= nx as isize || py >= ny as isize {
                        continue;
                    }
                    let label = provisional[(i as isize + delta) as usize];
                    if label == u32::MAX {
                        continue;
                    }
                    if assigned == u32::MAX {
                        assigned = label;
                    } else {
                        uf.union(assigned, label);
                    }
                }
                provisional[i] = if assigned == u32::MAX { uf.make() } else { assigned };
            }
        }
    }

    // Provisional ids are created in scan order and roots are the minimum id
    // of each tree, so numbering roots by first appearance preserves order.
    let mut final_id = vec![0u32; uf.parent.len()];
    let mut count = 0u32;
    let mut voxel_counts = Vec::new();
    let mut labels = vec![0u32; data.len()];
    for (i, p) in provisional.iter().enumerate() {
        if *p == u32::MAX {
            continue;
        }
        let root = uf.find(*p) as usize;
        if final_id[root] == 0 {
            count += 1;
            final_id[root] = count;
            voxel_counts.push(0);
        }
        let id = final_id[root];
        labels[i] = id;
        voxel_counts[id as usize - 1] += 1;
    }

    let voxel_mm3 = geometry.voxel_volume_mm3();
    let radii_mm = voxel_counts
        .iter()
        .map(|&n| equivalent_radius_mm(n as f64 * voxel_mm3))
        .collect();
    ComponentSet {
        count: count as usize,
        labels: Volume::from_vec(geometry, labels).expect("same geometry"),
        voxel_counts,
        radii_mm,
    }
}

/// Keep only the largest component (ties go to the lowest id).
pub fn largest_component(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let set = connected_components(mask, connectivity);
    if set.count <= 1 {
        return mask.clone();
    }
    let mut best = 0;
    for (k, &n) in set.voxel_counts.iter().enumerate() {
        if n > set.voxel_counts[best] {
            best = k;
        }
    }
    set.mask(best as u32 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Geometry;
    use rand::{Rng, SeedableRng};
    use std::collections::VecDeque;

    /// Breadth-first flood fill, scanning seeds in raster order.
    fn flood_fill(mask: &BinaryMask, connectivity: Connectivity) -> (usize, Vec<u32>) {
        let g = mask.geometry();
        let [nx, ny, nz] = g.dims;
        let mut labels = vec![0u32; mask.len()];
        let mut count = 0;
        for seed in 0..mask.len() {
            if !mask.data()[seed] || labels[seed] != 0 {
                continue;
            }
            count += 1;
            labels[seed] = count;
            let mut queue = VecDeque::from([seed]);
            while let Some(i) = queue.pop_front() {
                let [x, y, z] = g.coords(i);
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let m = dx.abs() + dy.abs() + dz.abs();
                            if m == 0 || (connectivity == Connectivity::Six && m != 1) {
                                continue;
                            }
                            let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if px < 0 || py < 0 || pz < 0 || px >= nx as i64 || py >= ny as i64 || pz >= nz as i64 {
                                continue;
                            }
                            let j = g.index(px as usize, py as usize, pz as usize);
                            if mask.data()[j] && labels[j] == 0 {
                                labels[j] = count;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        (count as usize, labels)
    }

    #[test]
    fn isolated_voxels_are_separate() {
        let mut m = Volume::filled(Geometry::isotropic([5, 5, 5]), false);
        m.set([0, 0, 0], true);
        m.set([3, 3, 3], true);
        let set = connected_components(&m, Connectivity::TwentySix);
        assert_eq!(set.count, 2);
    }

    #[test]
    fn solid_block_volume() {
        let g = Geometry::new([5, 5, 5], [0.5, 0.8, 2.0]).unwrap();
        let m = Volume::from_fn(g, |[x, y, z]| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
        let set = connected_components(&m, Connectivity::Six);
        assert_eq!(set.count, 1);
        assert_eq!(set.voxel_counts[0], 27);
        assert!((set.volume_mm3(1) - 27.0 * 0.8).abs() < 1e-12);
        assert!((set.radii_mm[0] - equivalent_radius_mm(27.0 * 0.8)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let mut m = Volume::filled(Geometry::isotropic([3, 3, 3]), false);
        m.set([0, 0, 0], true);
        m.set([1, 1, 1], true);
        assert_eq!(connected_components(&m, Connectivity::Six).count, 2);
        assert_eq!(connected_components(&m, Connectivity::TwentySix).count, 1);
    }

    #[test]
    fn ids_follow_scan_order() {
        let mut m = Volume::filled(Geometry::isotropic([4, 4, 1]), false);
        m.set([3, 0, 0], true);
        m.set([0, 2, 0], true);
        let set = connected_components(&m, Connectivity::Six);
        assert_eq!(set.labels.get([3, 0, 0]), 1);
        assert_eq!(set.labels.get([0, 2, 0]), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two prongs that only join at the bottom row: exercises union.
        let mut m = Volume::filled(Geometry::isotropic([3, 3, 1]), false);
        for p in [[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0], [0, 2, 0], [1, 2, 0], [2, 2, 0]] {
            m.set(p, true);
        }
        assert_eq!(connected_components(&m, Connectivity::Six).count, 1);
    }

    #[test]
    fn matches_flood_fill_on_random_volumes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..300 {
            let dims = [rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8)];
            let density = rng.random_range(0.1..0.7);
            let m = Volume::from_fn(Geometry::isotropic(dims), |_| rng.random_bool(density));
            for conn in [Connectivity::Six, Connectivity::TwentySix] {
                let set = connected_components(&m, conn);
                let (count, labels) = flood_fill(&m, conn);
                assert_eq!(set.count, count, "trial {trial}");
                assert_eq!(set.labels.data(), &labels[..], "trial {trial}");
            }
        }
    }

    #[test]
    fn largest_component_keeps_biggest() {
        let mut m = Volume::filled(Geometry::isotropic([6, 1, 1]), false);
        for x in [0, 2, 3, 4] {
            m.set([x, 0, 0], true);
        }
        let l = largest_component(&m, Connectivity::Six);
        assert_eq!(l.count_true(), 3);
        assert!(!l.get([0, 0, 0]));
    }
}
