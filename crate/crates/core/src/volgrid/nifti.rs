//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Supported voxel types are uint8, int16, float32 and float64. Orientation
//! fields are carried through unchanged; the description field is not, so
//! written files carry no free-text metadata from their source.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::volume::{Geometry, LabelVolume, Orientation, ScalarVolume, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl DataType {
    fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::Uint8,
            4 => DataType::Int16,
            16 => DataType::Float32,
            64 => DataType::Float64,
            other => return Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        })
    }

    fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

/// Decoded NIfTI image: geometry plus scaled voxel values.
#[derive(Clone, Debug)]
pub struct NiftiImage {
    pub geometry: Geometry,
    pub datatype: DataType,
    pub values: Vec<f64>,
}

impl NiftiImage {
    pub fn into_scalar(self) -> Result<ScalarVolume> {
        let v = Volume::from_vec(self.geometry, self.values)?;
        v.ensure_finite()?;
        Ok(v)
    }

    /// Labels must be integers in {0, 1, 2}.
    pub fn into_labels(self) -> Result<LabelVolume> {
        let mut data = Vec::with_capacity(self.values.len());
        for (i, &v) in self.values.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=2.0).contains(&v) {
                return Err(Error::Format(format!(
                    "label value {v} at voxel {:?} is not one of 0, 1, 2",
                    self.geometry.coords(i)
                )));
            }
            data.push(v as u8);
        }
        Volume::from_vec(self.geometry, data)
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(BufReader::new(file))
            .read_to_end(&mut bytes)
            .map_err(|e| Error::Format(format!("{}: gzip stream: {e}", path.display())))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        self.bytes[at..at + N].try_into().unwrap()
    }
    fn i16(&self, at: usize) -> i16 {
        let b = self.arr::<2>(at);
        if self.little { i16::from_le_bytes(b) } else { i16::from_be_bytes(b) }
    }
    fn f32(&self, at: usize) -> f32 {
        let b = self.arr::<4>(at);
        if self.little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
    }
    fn f64(&self, at: usize) -> f64 {
        let b = self.arr::<8>(at);
        if self.little { f64::from_le_bytes(b) } else { f64::from_be_bytes(b) }
    }
}

/// Parse a NIfTI-1 single-file image from memory.
pub fn parse_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let little = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(Error::Format("sizeof_hdr is not 348".into())),
    };
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(Error::Unsupported("two-file NIfTI (.hdr/.img)".into())),
        other => return Err(Error::Format(format!("bad magic {other:?}"))),
    }
    let r = Reader { bytes, little };

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        if (a as i16) < ndim {
            let v = r.i16(42 + 2 * a);
            if v <= 0 {
                return Err(Error::Format(format!("dim[{}] = {v}", a + 1)));
            }
            *d = v as usize;
        }
    }
    for a in 3..ndim as usize {
        if r.i16(42 + 2 * a) > 1 {
            return Err(Error::Unsupported("more than one volume (4D+ data)".into()));
        }
    }

    let datatype = DataType::from_code(r.i16(70))?;
    let mut spacing = [1.0f64; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        let v = r.f32(80 + 4 * a);
        if (a as i16) < ndim {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Format(format!("pixdim[{}] = {v}", a + 1)));
            }
            *s = v as f64;
        }
    }
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset = {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;

    let mut srow = [[0f32; 4]; 3];
    for (row, s) in srow.iter_mut().enumerate() {
        for (col, v) in s.iter_mut().enumerate() {
            *v = r.f32(280 + 16 * row + 4 * col);
        }
    }
    let orientation = Orientation {
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        quatern: [r.f32(256), r.f32(260), r.f32(264)],
        srow,
        qfac: r.f32(76),
        xyzt_units: bytes[123],
    };
    let origin = [r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64];
    let geometry = Geometry {
        dims,
        spacing,
        origin,
        orientation,
    };

    let count = geometry.len();
    let need = offset + count * datatype.bytes();
    if bytes.len() < need {
        return Err(Error::Format(format!(
            "truncated data: {} bytes, need {need}",
            bytes.len()
        )));
    }
    let raw = &bytes[offset..need];
    let rd = Reader { bytes: raw, little };
    let mut values: Vec<f64> = match datatype {
        DataType::Uint8 => raw.iter().map(|&b| b as f64).collect(),
        DataType::Int16 => (0..count).map(|i| rd.i16(2 * i) as f64).collect(),
        DataType::Float32 => (0..count).map(|i| rd.f32(4 * i) as f64).collect(),
        DataType::Float64 => (0..count).map(|i| rd.f64(8 * i)).collect(),
    };
    if slope != 0.0 && !(slope == 1.0 && inter == 0.0) {
        values.iter_mut().for_each(|v| *v = slope * *v + inter);
    }
    Ok(NiftiImage {
        geometry,
        datatype,
        values,
    })
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    parse_nifti(&read_all(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    load_nifti(path)?.into_scalar()
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    load_nifti(path)?.into_labels()
}

/// Smallest datatype that stores every value exactly.
fn lossless_type(values: &[f64]) -> DataType {
    let fits_i16 = values
        .iter()
        .all(|&v| v.fract() == 0.0 && v >= i16::MIN as f64 && v <= i16::MAX as f64 && !(v == 0.0 && v.is_sign_negative()));
    if fits_i16 {
        return DataType::Int16;
    }
    if values.iter().all(|&v| (v as f32) as f64 == v) {
        DataType::Float32
    } else {
        DataType::Float64
    }
}

fn encode_header(geometry: &Geometry, datatype: DataType) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| h[at..at + b.len()].copy_from_slice(b);
    put(&mut h, 0, &348i32.to_le_bytes());
    put(&mut h, 38, b"r");
    put(&mut h, 40, &3i16.to_le_bytes());
    for a in 0..3 {
        put(&mut h, 42 + 2 * a, &(geometry.dims[a] as i16).to_le_bytes());
    }
    for a in 3..7 {
        put(&mut h, 42 + 2 * a, &1i16.to_le_bytes());
    }
    put(&mut h, 70, &datatype.code().to_le_bytes());
    put(&mut h, 72, &((datatype.bytes() * 8) as i16).to_le_bytes());
    let o = &geometry.orientation;
    put(&mut h, 76, &o.qfac.to_le_bytes());
    for a in 0..3 {
        put(&mut h, 80 + 4 * a, &(geometry.spacing[a] as f32).to_le_bytes());
    }
    put(&mut h, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1f32.to_le_bytes());
    put(&mut h, 116, &0f32.to_le_bytes());
    h[123] = o.xyzt_units;
    put(&mut h, 252, &o.qform_code.to_le_bytes());
    put(&mut h, 254, &o.sform_code.to_le_bytes());
    for a in 0..3 {
        put(&mut h, 256 + 4 * a, &o.quatern[a].to_le_bytes());
        put(&mut h, 268 + 4 * a, &(geometry.origin[a] as f32).to_le_bytes());
    }
    for row in 0..3 {
        for col in 0..4 {
            put(&mut h, 280 + 16 * row + 4 * col, &o.srow[row][col].to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");
    h
}

fn encode(geometry: &Geometry, values: &[f64], datatype: DataType) -> Vec<u8> {
    let mut out = encode_header(geometry, datatype);
    out.reserve(values.len() * datatype.bytes());
    for &v in values {
        match datatype {
            DataType::Uint8 => out.push(v as u8),
            DataType::Int16 => out.extend_from_slice(&(v as i16).to_le_bytes()),
            DataType::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DataType::Float64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if is_gz(path) {
        let mut enc = GzEncoder::new(w, Compression::fast());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        w = enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serialize a scalar volume with the smallest lossless datatype
/// (int16, float32 or float64), so reloading reproduces it bit-exactly.
pub fn encode_scalar(volume: &ScalarVolume) -> Result<Vec<u8>> {
    volume.ensure_finite()?;
    check_dims(volume.geometry())?;
    Ok(encode(volume.geometry(), volume.data(), lossless_type(volume.data())))
}

pub fn encode_labels(volume: &LabelVolume) -> Result<Vec<u8>> {
    check_dims(volume.geometry())?;
    let values: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    Ok(encode(volume.geometry(), &values, DataType::Uint8))
}

fn check_dims(geometry: &Geometry) -> Result<()> {
    if geometry.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("dims {:?} exceed NIfTI-1 limits", geometry.dims)));
    }
    Ok(())
}

pub fn save_nifti(volume: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_scalar(volume)?)
}

/// Label volumes are always stored as uint8.
pub fn save_labels(volume: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_all(path.as_ref(), &encode_labels(volume)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(values: Vec<f64>, dims: [usize; 3]) -> ScalarVolume {
        Volume::from_vec(Geometry::isotropic(dims), values).unwrap()
    }

    #[test]
    fn int16_round_trip_and_datatype() {
        let v = fixture((0..64).map(|i| i as f64 * 3.0 - 90.0).collect(), [4, 4, 4]);
        let bytes = encode_scalar(&v).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[70], bytes[71]]), 4);
        let back = parse_nifti(&bytes).unwrap();
        assert_eq!(back.geometry.spacing, [1.0; 3]);
        let back = back.into_scalar().unwrap();
        assert_eq!(back.len(), 64);
        assert_eq!(back, v);
    }

    #[test]
    fn float_values_round_trip_bit_exactly() {
        let v = fixture(vec![0.1, -1e-7, 123.456789, 1.0 / 3.0, 5.5, 2.0, -0.0, 1e10], [2, 2, 2]);
        let back = parse_nifti(&encode_scalar(&v).unwrap()).unwrap().into_scalar().unwrap();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let f32_exact = fixture(vec![0.5, 1.25, -3.75, 100.125], [4, 1, 1]);
        let bytes = encode_scalar(&f32_exact).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[70], bytes[71]]), 16);
    }

    #[test]
    fn labels_saved_as_uint8() {
        let l: LabelVolume = Volume::from_vec(Geometry::isotropic([3, 1, 1]), vec![0, 1, 2]).unwrap();
        let bytes = encode_labels(&l).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[70], bytes[71]]), 2);
        assert_eq!(parse_nifti(&bytes).unwrap().into_labels().unwrap(), l);
    }

    #[test]
    fn nan_rejected() {
        let v = fixture(vec![1.0, f64::NAN], [2, 1, 1]);
        assert!(matches!(encode_scalar(&v), Err(Error::Argument(_))));
    }

    #[test]
    fn scaling_applied() {
        // raw int16 value 5 with slope 2 and intercept 10 reads as 20
        let v = fixture(vec![5.0], [1, 1, 1]);
        let mut bytes = encode_scalar(&v).unwrap();
        bytes[112..116].copy_from_slice(&2f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&10f32.to_le_bytes());
        assert_eq!(parse_nifti(&bytes).unwrap().values, vec![20.0]);
        // zero slope means unscaled
        bytes[112..116].copy_from_slice(&0f32.to_le_bytes());
        assert_eq!(parse_nifti(&bytes).unwrap().values, vec![5.0]);
    }

    #[test]
    fn big_endian_header_is_read() {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        h[40..42].copy_from_slice(&3i16.to_be_bytes());
        for a in 0..3 {
            h[42 + 2 * a..44 + 2 * a].copy_from_slice(&1i16.to_be_bytes());
            h[80 + 4 * a..84 + 4 * a].copy_from_slice(&0.5f32.to_be_bytes());
        }
        h[70..72].copy_from_slice(&4i16.to_be_bytes());
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&(-1234i16).to_be_bytes());
        let img = parse_nifti(&h).unwrap();
        assert_eq!(img.values, vec![-1234.0]);
        assert_eq!(img.geometry.spacing, [0.5; 3]);
    }

    #[test]
    fn malformed_inputs() {
        let good = encode_scalar(&fixture(vec![1.0; 8], [2, 2, 2])).unwrap();
        assert!(matches!(parse_nifti(&good[..200]), Err(Error::Format(_))));
        assert!(matches!(parse_nifti(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad_magic = good.clone();
        bad_magic[344] = b'x';
        assert!(matches!(parse_nifti(&bad_magic), Err(Error::Format(_))));
        let mut bad_type = good.clone();
        bad_type[70..72].copy_from_slice(&512i16.to_le_bytes());
        assert!(matches!(parse_nifti(&bad_type), Err(Error::Unsupported(_))));
    }

    #[test]
    fn orientation_preserved_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Geometry::new([3, 2, 2], [0.75, 0.75, 2.5]).unwrap();
        g.origin = [-100.5, 20.25, 7.0];
        g.orientation = Orientation {
            qform_code: 1,
            sform_code: 1,
            quatern: [0.0, 0.0, 1.0],
            srow: [[-0.75, 0.0, 0.0, -100.5], [0.0, -0.75, 0.0, 20.25], [0.0, 0.0, 2.5, 7.0]],
            qfac: -1.0,
            xyzt_units: 10,
        };
        let v = Volume::from_fn(g, |[x, y, z]| (x + y + z) as f64 * 0.25);
        for name in ["a.nii", "a.nii.gz"] {
            let path = dir.path().join(name);
            save_nifti(&v, &path).unwrap();
            assert_eq!(load_scalar(&path).unwrap(), v);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_scalar("/definitely/not/here.nii"), Err(Error::Io { .. })));
    }
}
