//! Slice extraction, HU windowing and PNG encoding.

use serde::Deserialize;
use synthtumor_core::volgrid::{LabelVolume, ScalarVolume};

use crate::error::{ApiError, ApiResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Fixed z; image is x by y.
    Axial,
    /// Fixed y; image is x by z.
    Coronal,
    /// Fixed x; image is y by z.
    Sagittal,
}

impl Axis {
    pub fn parse(s: &str) -> ApiResult<Axis> {
        match s.to_ascii_lowercase().as_str() {
            "axial" | "z" => Ok(Axis::Axial),
            "coronal" | "y" => Ok(Axis::Coronal),
            "sagittal" | "x" => Ok(Axis::Sagittal),
            other => Err(ApiError::BadRequest(format!("unknown axis {other:?}"))),
        }
    }

    fn fixed(self) -> usize {
        match self {
            Axis::Axial => 2,
            Axis::Coronal => 1,
            Axis::Sagittal => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    #[default]
    Ct,
    /// Raw label values 0, 1, 2 as gray levels.
    Label,
}

/// Query of the slice endpoints.
#[derive(Clone, Debug, Deserialize)]
pub struct SliceQuery {
    #[serde(default)]
    pub axis: Option<String>,
    pub index: usize,
    #[serde(default = "default_wc")]
    pub wc: f64,
    #[serde(default = "default_ww")]
    pub ww: f64,
    #[serde(default)]
    pub layer: Layer,
}

fn default_wc() -> f64 {
    40.0
}

fn default_ww() -> f64 {
    400.0
}

impl SliceQuery {
    pub fn axis(&self) -> ApiResult<Axis> {
        self.axis.as_deref().map_or(Ok(Axis::Axial), Axis::parse)
    }

    pub fn validate_window(&self) -> ApiResult<()> {
        if !(self.wc.is_finite() && self.ww.is_finite() && self.ww > 0.0) {
            return Err(ApiError::BadRequest(format!("invalid window center {} width {}", self.wc, self.ww)));
        }
        Ok(())
    }
}

/// clamp((hu − (wc − ww/2)) / ww, 0, 1) · 255, rounded half up.
pub fn window(hu: f64, wc: f64, ww: f64) -> u8 {
    let v = ((hu - (wc - ww / 2.0)) / ww).clamp(0.0, 1.0);
    (v * 255.0 + 0.5).floor() as u8
}

/// Gray pixels of one slice, row-major, plus width and height.
fn extract<T: Copy>(dims: [usize; 3], axis: Axis, index: usize, get: impl Fn([usize; 3]) -> T, to_px: impl Fn(T) -> u8) -> ApiResult<(Vec<u8>, u32, u32)> {
    let fixed = axis.fixed();
    if index >= dims[fixed] {
        return Err(ApiError::NotFound(format!("slice index {index} outside 0..{}", dims[fixed])));
    }
    let (u, v) = match axis {
        Axis::Axial => (0, 1),
        Axis::Coronal => (0, 2),
        Axis::Sagittal => (1, 2),
    };
    let mut px = Vec::with_capacity(dims[u] * dims[v]);
    for j in 0..dims[v] {
        for i in 0..dims[u] {
            let mut p = [0; 3];
            p[fixed] = index;
            p[u] = i;
            p[v] = j;
            px.push(to_px(get(p)));
        }
    }
    Ok((px, dims[u] as u32, dims[v] as u32))
}

fn encode_png(px: &[u8], width: u32, height: u32) -> ApiResult<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| ApiError::Internal(format!("png: {e}")))?;
    writer.write_image_data(px).map_err(|e| ApiError::Internal(format!("png: {e}")))?;
    writer.finish().map_err(|e| ApiError::Internal(format!("png: {e}")))?;
    Ok(out)
}

/// Render the requested layer of a slice as an 8-bit grayscale PNG.
pub fn render_slice(ct: &ScalarVolume, labels: Option<&LabelVolume>, q: &SliceQuery) -> ApiResult<Vec<u8>> {
    q.validate_window()?;
    let axis = q.axis()?;
    let (px, w, h) = match q.layer {
        Layer::Ct => extract(ct.dims(), axis, q.index, |p| ct.get(p), |hu| window(hu, q.wc, q.ww))?,
        Layer::Label => {
            let labels = labels.ok_or_else(|| ApiError::NotFound("no label volume for this scan".into()))?;
            extract(labels.dims(), axis, q.index, |p| labels.get(p), |l| l)?
        }
    };
    encode_png(&px, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use synthtumor_core::volgrid::{Geometry, Volume};

    #[test]
    fn windowing_examples() {
        assert_eq!(window(60.0, 60.0, 400.0), 128);
        assert_eq!(window(-500.0, 60.0, 400.0), 0);
        assert_eq!(window(900.0, 60.0, 400.0), 255);
        assert_eq!(window(-140.0, 60.0, 400.0), 0);
        assert_eq!(window(260.0, 60.0, 400.0), 255);
    }

    #[test]
    fn window_matches_formula_everywhere() {
        for i in -2000..2000 {
            let hu = i as f64 * 0.37;
            let v = ((hu + 160.0) / 400.0).clamp(0.0, 1.0) * 255.0;
            let want = if v - v.floor() >= 0.5 { v.ceil() } else { v.floor() };
            assert_eq!(window(hu, 40.0, 400.0) as f64, want, "{hu}");
        }
    }

    fn decode(bytes: &[u8]) -> (Vec<u8>, u32, u32) {
        let mut reader = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (buf, info.width, info.height)
    }

    #[test]
    fn slice_layout_per_axis() {
        let g = Geometry::isotropic([3, 4, 5]);
        let ct = Volume::from_fn(g, |[x, y, z]| (x * 100 + y * 10 + z) as f64);
        let q = |axis: &str, index| SliceQuery { axis: Some(axis.into()), index, wc: 127.5, ww: 255.0, layer: Layer::Ct };
        let (px, w, h) = decode(&render_slice(&ct, None, &q("axial", 2)).unwrap());
        assert_eq!((w, h), (3, 4));
        assert_eq!(px[3 + 2], 212);
        let (_, w, h) = decode(&render_slice(&ct, None, &q("coronal", 0)).unwrap());
        assert_eq!((w, h), (3, 5));
        let (_, w, h) = decode(&render_slice(&ct, None, &q("x", 1)).unwrap());
        assert_eq!((w, h), (4, 5));
        assert!(matches!(render_slice(&ct, None, &q("axial", 5)), Err(ApiError::NotFound(_))));
        assert!(matches!(render_slice(&ct, None, &q("oblique", 0)), Err(ApiError::BadRequest(_))));
        let bad = SliceQuery { ww: 0.0, ..q("axial", 0) };
        assert!(matches!(render_slice(&ct, None, &bad), Err(ApiError::BadRequest(_))));
    }
}
