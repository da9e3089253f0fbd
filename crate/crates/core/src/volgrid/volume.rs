use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const LIVER: u8 = 1;
pub const TUMOR: u8 = 2;

/// Scanner orientation fields carried over from a NIfTI header.
///
/// They are written back verbatim on save and never interpreted; all
/// processing happens in voxel space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub srow: [[f32; 4]; 3],
    /// pixdim[0]; the qfac sign of the quaternion form.
    pub qfac: f32,
    pub xyzt_units: u8,
}

impl Default for Orientation {
    fn default() -> Self {
        Orientation {
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            srow: [[0.0; 4]; 3],
            qfac: 1.0,
            xyzt_units: 0,
        }
    }
}

/// Grid layout shared by every volume type: voxel counts, voxel size in mm
/// and world origin in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    #[serde(default)]
    pub orientation: Orientation,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let geometry = Geometry {
            dims,
            spacing,
            origin: [0.0; 3],
            orientation: Orientation::default(),
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn isotropic(dims: [usize; 3]) -> Self {
        Geometry::new(dims, [1.0; 3]).expect("positive dims")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Argument(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Argument(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Argument("origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        p.iter().zip(self.dims).all(|(&c, d)| c < d)
    }

    /// Same voxel grid: identical dims and spacing equal to 1e-6 relative.
    pub fn same_grid(&self, other: &Geometry) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing)
                .all(|(a, b)| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()))
    }

    pub fn ensure_same_grid(&self, other: &Geometry, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{what}: dims {:?}/{:?}, spacing {:?}/{:?}",
                self.dims, other.dims, self.spacing, other.spacing
            )))
        }
    }

    /// Geometry of a sub-box; the origin shifts along the voxel axes.
    pub fn sub_geometry(&self, region: &Region) -> Geometry {
        let mut origin = self.origin;
        for (axis, o) in origin.iter_mut().enumerate() {
            *o += region.start[axis] as f64 * self.spacing[axis];
        }
        Geometry {
            dims: region.size,
            spacing: self.spacing,
            origin,
            orientation: self.orientation.clone(),
        }
    }
}

/// Axis-aligned voxel box, `start` inclusive, `size` voxels per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub start: [usize; 3],
    pub size: [usize; 3],
}

impl Region {
    /// Box `center ± half_extent` clipped to `dims`.
    pub fn around(center: [usize; 3], half_extent: [usize; 3], dims: [usize; 3]) -> Region {
        let mut start = [0; 3];
        let mut size = [0; 3];
        for axis in 0..3 {
            let lo = center[axis].saturating_sub(half_extent[axis]);
            let hi = (center[axis] + half_extent[axis]).min(dims[axis] - 1);
            start[axis] = lo;
            size[axis] = hi - lo + 1;
        }
        Region { start, size }
    }

    pub fn end(&self) -> [usize; 3] {
        [
            self.start[0] + self.size[0],
            self.start[1] + self.size[1],
            self.start[2] + self.size[2],
        ]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.start[a] && p[a] < self.start[a] + self.size[a])
    }

    pub fn to_local(&self, p: [usize; 3]) -> [usize; 3] {
        [p[0] - self.start[0], p[1] - self.start[1], p[2] - self.start[2]]
    }
}

/// Dense 3D grid, x-fastest layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    geometry: Geometry,
    data: Vec<T>,
}

/// CT intensities in HU (or dimensionless after processing).
pub type ScalarVolume = Volume<f64>;
/// Segmentation labels: 0 background, 1 liver, 2 tumor.
pub type LabelVolume = Volume<u8>;
pub type BinaryMask = Volume<bool>;

impl<T: Copy> Volume<T> {
    pub fn from_vec(geometry: Geometry, data: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if data.len() != geometry.len() {
            return Err(Error::Argument(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(Volume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: T) -> Self {
        let len = geometry.len();
        Volume {
            geometry,
            data: vec![value; len],
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f([x, y, z]));
                }
            }
        }
        Volume { geometry, data }
    }

    #[inline]
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        self.geometry.index(p[0], p[1], p[2])
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> T {
        self.data[self.index(p)]
    }

    #[inline]
    pub fn set(&mut self, p: [usize; 3], value: T) {
        let i = self.index(p);
        self.data[i] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume {
            geometry: self.geometry.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Replace the geometry metadata while keeping the voxel data.
    pub fn with_geometry(self, geometry: Geometry) -> Result<Self> {
        Volume::from_vec(geometry, self.data)
    }

    pub fn crop(&self, region: &Region) -> Volume<T> {
        let geometry = self.geometry.sub_geometry(region);
        let [sx, sy, sz] = region.size;
        let mut data = Vec::with_capacity(sx * sy * sz);
        for z in 0..sz {
            for y in 0..sy {
                let start = self.index([region.start[0], region.start[1] + y, region.start[2] + z]);
                data.extend_from_slice(&self.data[start..start + sx]);
            }
        }
        Volume { geometry, data }
    }

    /// Write `patch` back at `region`. Panics if sizes disagree.
    pub fn paste(&mut self, region: &Region, patch: &Volume<T>) {
        assert_eq!(region.size, patch.dims(), "patch size must equal region size");
        let [sx, sy, sz] = region.size;
        for z in 0..sz {
            for y in 0..sy {
                let dst = self.index([region.start[0], region.start[1] + y, region.start[2] + z]);
                let src = patch.index([0, y, z]);
                self.data[dst..dst + sx].copy_from_slice(&patch.data[src..src + sx]);
            }
        }
    }
}

impl Volume<f64> {
    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Argument(format!(
                "non-finite value at voxel {:?}",
                self.geometry.coords(i)
            ))),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl Volume<u8> {
    /// Binary mask of voxels carrying `label`.
    pub fn mask_of(&self, label: u8) -> BinaryMask {
        self.map(|v| v == label)
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn ensure_label_values(&self) -> Result<()> {
        match self.data.iter().position(|&v| v > TUMOR) {
            None => Ok(()),
            Some(i) => Err(Error::Argument(format!(
                "label {} at voxel {:?} outside {{0,1,2}}",
                self.data[i],
                self.geometry.coords(i)
            ))),
        }
    }
}

impl Volume<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Real-valued mask with every voxel in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask(Volume<f64>);

impl SoftMask {
    pub fn new(volume: Volume<f64>) -> Result<Self> {
        if let Some(i) = volume.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument(format!(
                "soft mask value {} outside [0,1] at voxel {:?}",
                volume.data()[i],
                volume.geometry().coords(i)
            )));
        }
        Ok(SoftMask(volume))
    }

    /// Clamp every value into [0, 1]; NaN maps to 0.
    pub fn clamped(mut volume: Volume<f64>) -> Self {
        for v in volume.data_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        SoftMask(volume)
    }

    pub fn zeros(geometry: Geometry) -> Self {
        SoftMask(Volume::filled(geometry, 0.0))
    }

    pub fn from_binary(mask: &BinaryMask) -> Self {
        SoftMask(mask.map(|b| if b { 1.0 } else { 0.0 }))
    }

    pub fn volume(&self) -> &Volume<f64> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<f64> {
        self.0
    }

    pub fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0.dims()
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn get(&self, p: [usize; 3]) -> f64 {
        self.0.get(p)
    }

    pub fn threshold(&self, level: f64) -> BinaryMask {
        self.0.map(|v| v >= level)
    }

    pub fn sum(&self) -> f64 {
        self.0.data().iter().sum()
    }
}
