use super::volume::{Geometry, Volume};
use crate::error::{Error, Result};

/// Trilinear interpolation at a continuous voxel coordinate.
///
/// The point must lie inside `[0, dim-1]` on every axis.
pub fn sample_trilinear(volume: &Volume<f64>, point: [f64; 3]) -> Result<f64> {
    let dims = volume.dims();
    let inside = (0..3).all(|a| point[a] >= 0.0 && point[a] <= (dims[a] - 1) as f64);
    if !inside {
        return Err(Error::OutOfBounds { point, dims });
    }
    Ok(sample_trilinear_clamped(volume, point))
}

/// Trilinear interpolation with coordinates clamped into the grid.
pub fn sample_trilinear_clamped(volume: &Volume<f64>, point: [f64; 3]) -> f64 {
    let dims = volume.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        let c = if point[a].is_nan() { 0.0 } else { point[a].clamp(0.0, max) };
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        frac[a] = c - f;
    }
    let g = volume.geometry();
    let d = volume.data();
    let at = |x: usize, y: usize, z: usize| d[g.index(x, y, z)];
    let [fx, fy, fz] = frac;

    let c00 = at(lo[0], lo[1], lo[2]) * (1.0 - fx) + at(hi[0], lo[1], lo[2]) * fx;
    let c10 = at(lo[0], hi[1], lo[2]) * (1.0 - fx) + at(hi[0], hi[1], lo[2]) * fx;
    let c01 = at(lo[0], lo[1], hi[2]) * (1.0 - fx) + at(hi[0], lo[1], hi[2]) * fx;
    let c11 = at(lo[0], hi[1], hi[2]) * (1.0 - fx) + at(hi[0], hi[1], hi[2]) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    c0 * (1.0 - fz) + c1 * fz
}

/// Nearest-neighbor lookup with round-half-up and clamping.
pub fn sample_nearest<T: Copy>(volume: &Volume<T>, point: [f64; 3]) -> T {
    let dims = volume.dims();
    let mut p = [0usize; 3];
    for a in 0..3 {
        let max = (dims[a] - 1) as f64;
        p[a] = (point[a] + 0.5).floor().clamp(0.0, max) as usize;
    }
    volume.get(p)
}

/// Catmull-Rom weights for samples at offsets -1, 0, 1, 2 and `t ∈ [0, 1)`.
#[inline]
pub fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Value at integer index `i` of a line, with linearly extrapolated ghosts
/// beyond either end so linear data stays exactly linear.
#[inline]
fn line_value(line: &[f64], i: isize) -> f64 {
    let n = line.len() as isize;
    if n == 1 {
        return line[0];
    }
    if i < 0 {
        line[0] + i as f64 * (line[1] - line[0])
    } else if i >= n {
        let last = line[(n - 1) as usize];
        last + (i - n + 1) as f64 * (last - line[(n - 2) as usize])
    } else {
        line[i as usize]
    }
}

struct Tap {
    base: isize,
    weights: [f64; 4],
}

fn taps(out_len: usize, step: f64) -> Vec<Tap> {
    (0..out_len)
        .map(|j| {
            let c = j as f64 * step;
            let f = c.floor();
            Tap {
                base: f as isize,
                weights: catmull_rom_weights(c - f),
            }
        })
        .collect()
}

#[inline]
fn apply_tap(line: &[f64], tap: &Tap) -> f64 {
    let mut acc = 0.0;
    for (k, w) in tap.weights.iter().enumerate() {
        if *w != 0.0 {
            acc += w * line_value(line, tap.base - 1 + k as isize);
        }
    }
    acc
}

/// Cubic resampling along one axis: output index `j` reads the input at
/// continuous coordinate `j * step`. Output spacing on that axis is
/// `spacing * step`.
pub fn resample_axis_cubic(input: &Volume<f64>, axis: usize, out_len: usize, step: f64) -> Volume<f64> {
    assert!(out_len > 0 && step.is_finite() && step > 0.0);
    let dims = input.dims();
    let mut out_dims = dims;
    out_dims[axis] = out_len;
    let mut geometry = Geometry {
        dims: out_dims,
        ..input.geometry().clone()
    };
    geometry.spacing[axis] *= step;

    let taps = taps(out_len, step);
    let g_in = input.geometry();
    let src = input.data();
    let mut out = Vec::with_capacity(geometry.len());
    let mut line = vec![0.0; dims[axis]];

    match axis {
        0 => {
            for row in src.chunks(dims[0]) {
                out.extend(taps.iter().map(|t| apply_tap(row, t)));
            }
        }
        1 => {
            let mut plane = vec![0.0; dims[0] * out_len];
            for z in 0..dims[2] {
                for x in 0..dims[0] {
                    for (y, v) in line.iter_mut().enumerate() {
                        *v = src[g_in.index(x, y, z)];
                    }
                    for (j, t) in taps.iter().enumerate() {
                        plane[x + dims[0] * j] = apply_tap(&line, t);
                    }
                }
                out.extend_from_slice(&plane);
            }
        }
        _ => {
            let slice = dims[0] * dims[1];
            out.resize(geometry.len(), 0.0);
            for xy in 0..slice {
                for (z, v) in line.iter_mut().enumerate() {
                    *v = src[xy + slice * z];
                }
                for (j, t) in taps.iter().enumerate() {
                    out[xy + slice * j] = apply_tap(&line, t);
                }
            }
        }
    }
    Volume::from_vec(geometry, out).expect("consistent dims")
}

/// Enlarge a field by `eta ≥ 1` with separable Catmull-Rom interpolation.
///
/// Output dims are `ceil(dims * eta)`; output voxel `j` samples the input at
/// `j / eta`, so `eta = 1` reproduces the input exactly.
pub fn upscale_cubic(field: &Volume<f64>, eta: f64) -> Result<Volume<f64>> {
    if !(eta.is_finite() && eta >= 1.0) {
        return Err(Error::Argument(format!("scale factor must be >= 1, got {eta}")));
    }
    if eta == 1.0 {
        return Ok(field.clone());
    }
    let mut current = field.clone();
    for axis in 0..3 {
        let out_len = (field.dims()[axis] as f64 * eta).ceil() as usize;
        current = resample_axis_cubic(&current, axis, out_len, 1.0 / eta);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> Volume<f64> {
        Volume::from_fn(Geometry::isotropic(dims), |[x, _, _]| x as f64)
    }

    #[test]
    fn trilinear_exact_on_lattice() {
        let v = Volume::from_fn(Geometry::isotropic([3, 3, 3]), |[x, y, z]| (x * 9 + y * 3 + z) as f64);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let s = sample_trilinear(&v, [x as f64, y as f64, z as f64]).unwrap();
                    assert_eq!(s, v.get([x, y, z]));
                }
            }
        }
    }

    #[test]
    fn trilinear_midpoint_is_average() {
        let mut v = Volume::filled(Geometry::isotropic([2, 1, 1]), 0.0);
        v.set([1, 0, 0], 10.0);
        assert_eq!(sample_trilinear(&v, [0.5, 0.0, 0.0]).unwrap(), 5.0);
    }

    #[test]
    fn trilinear_reproduces_ramp() {
        let v = ramp([6, 5, 4]);
        for p in [[0.3, 1.7, 2.2], [4.99, 0.0, 3.0], [2.5, 3.25, 0.75]] {
            assert!((sample_trilinear(&v, p).unwrap() - p[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn trilinear_rejects_out_of_bounds() {
        let v = ramp([4, 4, 4]);
        assert!(matches!(
            sample_trilinear(&v, [3.01, 0.0, 0.0]),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(sample_trilinear(&v, [-0.1, 0.0, 0.0]).is_err());
    }

    #[test]
    fn nearest_rounds_half_up() {
        let v = ramp([4, 1, 1]);
        assert_eq!(sample_nearest(&v, [1.5, 0.0, 0.0]), 2.0);
        assert_eq!(sample_nearest(&v, [1.49, 0.0, 0.0]), 1.0);
        assert_eq!(sample_nearest(&v, [9.0, 0.0, 0.0]), 3.0);
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for t in [0.0, 0.1, 0.5, 0.9] {
            let w = catmull_rom_weights(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(catmull_rom_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn upscale_identity_at_one() {
        let v = Volume::from_fn(Geometry::isotropic([5, 4, 3]), |[x, y, z]| ((x * 31 + y * 7 + z) % 13) as f64);
        assert_eq!(upscale_cubic(&v, 1.0).unwrap(), v);
    }

    #[test]
    fn upscale_rejects_shrinking() {
        let v = ramp([3, 3, 3]);
        assert!(matches!(upscale_cubic(&v, 0.9), Err(Error::Argument(_))));
    }

    #[test]
    fn upscale_preserves_constants() {
        let v = Volume::filled(Geometry::isotropic([4, 5, 6]), -17.25);
        let u = upscale_cubic(&v, 1.37).unwrap();
        assert_eq!(u.dims(), [6, 7, 9]);
        assert!(u.data().iter().all(|x| (x + 17.25).abs() < 1e-12));
    }

    #[test]
    fn upscale_ramp_at_half_step() {
        // Analytic oracle: f = x resampled at j / 2 equals j / 2.
        let v = ramp([7, 3, 3]);
        let u = upscale_cubic(&v, 2.0).unwrap();
        assert_eq!(u.dims(), [14, 6, 6]);
        for z in 0..6 {
            for y in 0..6 {
                for j in 0..14 {
                    assert!((u.get([j, y, z]) - j as f64 / 2.0).abs() < 1e-6);
                }
            }
        }
        assert_eq!(u.spacing(), [0.5; 3]);
    }
}
