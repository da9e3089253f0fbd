use super::volume::{BinaryMask, Volume};

/// Lower envelope of parabolas along one line (Felzenszwalb–Huttenlocher),
/// with sample positions `q * spacing`. `f` holds squared distances (may be
/// infinite); the result overwrites `out`.
fn envelope_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let pos = |q: usize| q as f64 * spacing;

    // Skip leading infinite samples; they never form part of the envelope.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };

    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] {
                if k == 0 {
                    // Parabola q dominates everything so far.
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }

    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance in mm² from every voxel to the nearest
/// voxel of `set`. Infinite everywhere when `set` is empty.
pub fn squared_distance_to_set_mm(set: &BinaryMask) -> Volume<f64> {
    let g = set.geometry().clone();
    let [nx, ny, nz] = g.dims;
    let mut d: Vec<f64> = set
        .data()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let max_len = nx.max(ny).max(nz);
    let mut line = vec![0.0; max_len];
    let mut out = vec![0.0; max_len];
    let mut v = vec![0usize; max_len];
    let mut zb = vec![0.0; max_len + 1];

    for (axis, &len) in g.dims.iter().enumerate() {
        let stride = match axis {
            0 => 1,
            1 => nx,
            _ => nx * ny,
        };
        let spacing = g.spacing[axis];
        // Every line along `axis` starts at a voxel whose coordinate on that axis is 0.
        for start in 0..d.len() {
            let on_axis = (start / stride) % len;
            if on_axis != 0 {
                continue;
            }
            for q in 0..len {
                line[q] = d[start + q * stride];
            }
            envelope_1d(&line[..len], spacing, &mut out[..len], &mut v, &mut zb);
            for q in 0..len {
                d[start + q * stride] = out[q];
            }
        }
    }
    Volume::from_vec(g, d).expect("same geometry")
}

/// Exact Euclidean distance in mm to the nearest voxel of `set`.
pub fn distance_to_set_mm(set: &BinaryMask) -> Volume<f64> {
    squared_distance_to_set_mm(set).map(f64::sqrt)
}
