//! Controllable out-of-distribution benchmark.
//!
//! Each scan gets one base tumor drawn from the mix preset. Every variant
//! moves exactly one dimension (shape, size, texture, intensity, location)
//! to `μ + kσ`, where μ and σ are that dimension's in-distribution mean and
//! standard deviation measured from mix-preset draws.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GenConfig, PresetName, SizePreset};
use crate::error::{Error, Result};
use crate::generator::{ScanContext, TumorSpec};
use crate::metrics::dsc;
use crate::placement::{sample_from_candidates, voxel_radii, CollisionIndex};
use crate::rng::{derive_seed, stream, STREAM_PLACEMENT, STREAM_SCAN};
use crate::vessels::liver_bounds;
use crate::volgrid::{
    load_labels, nifti::save_labels, save_nifti, squared_distance_to_set_mm, LabelVolume, Region, ScalarVolume, Volume,
    LIVER, TUMOR,
};

/// Draws used to measure in-distribution statistics.
pub const REFERENCE_DRAWS: usize = 1000;
/// Smallest radius a size variant may take.
pub const MIN_RADIUS_MM: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Shape,
    Size,
    Texture,
    Intensity,
    Location,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Shape,
        Dimension::Size,
        Dimension::Texture,
        Dimension::Intensity,
        Dimension::Location,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Shape => "shape",
            Dimension::Size => "size",
            Dimension::Texture => "texture",
            Dimension::Intensity => "intensity",
            Dimension::Location => "location",
        }
    }
}

/// Severity levels as offsets `k` in units of σ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelScheme {
    /// k ∈ {−2, −1, 0, 1, 2}.
    #[default]
    Graded5,
    /// |k| ∈ {1, 2, 3}, with one random sign per scan and dimension.
    ThreeLevel,
}

impl LevelScheme {
    pub fn magnitudes(self) -> &'static [i32] {
        match self {
            LevelScheme::Graded5 => &[-2, -1, 0, 1, 2],
            LevelScheme::ThreeLevel => &[1, 2, 3],
        }
    }
}

pub fn level_label(k: i32) -> String {
    match k {
        0 => "mu".into(),
        1 => "mu+sigma".into(),
        -1 => "mu-sigma".into(),
        k if k > 0 => format!("mu+{k}sigma"),
        k => format!("mu-{}sigma", -k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    pub fn at(&self, k: f64) -> f64 {
        self.mean + k * self.std
    }
}

/// In-distribution statistics for one scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InDistribution {
    pub radius_mm: MeanStd,
    pub elastic_sigma: MeanStd,
    pub eta: MeanStd,
    pub mu_t: MeanStd,
    /// Distance in mm from accepted centers to the nearest vessel or liver
    /// surface voxel.
    pub clearance_mm: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub scan_id: String,
    pub dimension: Dimension,
    pub level: i32,
    pub level_label: String,
    pub seed: u64,
    pub spec: TumorSpec,
    /// Clamps and fallbacks applied while building this variant.
    pub annotations: Vec<String>,
    /// Paths relative to the grid output directory.
    pub ct_path: String,
    pub label_path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub scan_id: String,
    pub base: TumorSpec,
    /// Clamps applied to the base tumor.
    pub base_annotations: Vec<String>,
    pub in_distribution: InDistribution,
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub seed: u64,
    pub scheme: LevelScheme,
    pub dimensions: Vec<Dimension>,
    pub scans: Vec<ScanEntry>,
}

impl GridManifest {
    pub fn variants(&self) -> impl Iterator<Item = &Variant> {
        self.scans.iter().flat_map(|s| s.variants.iter())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<GridManifest> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("grid manifest: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GridManifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GridManifest::from_json(&text)
    }
}

/// One input scan of the grid.
#[derive(Clone, Debug)]
pub struct GridScan {
    pub id: String,
    pub ct: ScalarVolume,
    pub liver: LabelVolume,
}

#[derive(Clone, Debug)]
pub struct GridOptions {
    pub scheme: LevelScheme,
    pub dimensions: Vec<Dimension>,
    pub seed: u64,
    /// Worker threads for variant generation; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            scheme: LevelScheme::Graded5,
            dimensions: Dimension::ALL.to_vec(),
            seed: 0,
            jobs: 0,
        }
    }
}

/// Clearance map: mm distance to the nearest vessel or non-liver voxel,
/// computed over the liver bounding box padded by one voxel.
fn clearance_map(ctx: &ScanContext) -> (Region, Volume<f64>) {
    let bounds = liver_bounds(&ctx.liver).expect("prepared context has liver");
    let dims = ctx.liver.dims();
    let start = bounds.start.map(|s| s.saturating_sub(1));
    let end = [0, 1, 2].map(|a| (bounds.start[a] + bounds.size[a] + 1).min(dims[a]));
    let region = Region { start, size: [0, 1, 2].map(|a| end[a] - start[a]) };
    let liver = ctx.liver.crop(&region);
    let vessels = ctx.vessels.crop(&region);
    let obstacles = Volume::from_vec(
        liver.geometry().clone(),
        liver.data().iter().zip(vessels.data()).map(|(&l, &v)| l != LIVER || v).collect(),
    )
    .expect("same geometry");
    (region, squared_distance_to_set_mm(&obstacles).map(f64::sqrt))
}

struct ScanPlan {
    ctx: ScanContext,
    clearance: (Region, Volume<f64>),
    stats: InDistribution,
    base: TumorSpec,
    base_annotations: Vec<String>,
    signs: [i32; 5],
    scan_seed: u64,
}

fn reference_stats(ctx: &ScanContext, clearance: &(Region, Volume<f64>), seed: u64) -> InDistribution {
    let cfg = &ctx.config;
    let mut scan_rng = stream(seed, STREAM_SCAN);
    let specs: Vec<TumorSpec> = (0..REFERENCE_DRAWS)
        .map(|j| {
            let preset = SizePreset::resolve(PresetName::Mix, &cfg.presets, &mut scan_rng);
            TumorSpec::sample(&preset, cfg, ctx.stats.mu_p, None, derive_seed(seed, j as u64))
        })
        .collect();
    let pick = |f: fn(&TumorSpec) -> f64| MeanStd::of(&specs.iter().map(f).collect::<Vec<_>>());

    let index = CollisionIndex::from_vessels_and_labels(&ctx.vessels, &ctx.liver);
    let candidates = crate::placement::liver_candidates(&ctx.liver);
    let (region, dist) = clearance;
    let mut clearances = Vec::new();
    for (j, s) in specs.iter().enumerate() {
        let mut rng = stream(derive_seed(seed, j as u64), STREAM_PLACEMENT);
        if let Ok(p) = sample_from_candidates(&candidates, ctx.liver.geometry(), &ctx.liver, &index, s.radius_mm, cfg.max_attempts, &mut rng) {
            clearances.push(dist.get(region.to_local(p.center)));
        }
    }
    if clearances.is_empty() {
        clearances.push(0.0);
    }
    InDistribution {
        radius_mm: pick(|s| s.radius_mm),
        elastic_sigma: pick(|s| s.elastic_sigma),
        eta: pick(|s| s.eta),
        mu_t: pick(|s| s.mu_t),
        clearance_mm: MeanStd::of(&clearances),
    }
}

fn plan_scan(scan: &GridScan, index: usize, cfg: &GenConfig, opts: &GridOptions) -> Result<ScanPlan> {
    let ctx = ScanContext::prepare(scan.ct.clone(), scan.liver.clone(), cfg)?.with_scan_id(scan.id.clone());
    let scan_seed = derive_seed(opts.seed, index as u64);
    let clearance = clearance_map(&ctx);
    let stats = reference_stats(&ctx, &clearance, derive_seed(scan_seed, 1));

    let mut rng = stream(scan_seed, STREAM_SCAN);
    let preset = SizePreset::resolve(PresetName::Mix, &cfg.presets, &mut rng);
    let signs = [0; 5].map(|_| if rng.random_bool(0.5) { 1 } else { -1 });
    let mut base = TumorSpec::sample(&preset, cfg, ctx.stats.mu_p, None, derive_seed(scan_seed, 2));
    // Place the base with the largest radius any size variant will use, so
    // the shared center suits every variant when the liver allows it.
    let widest = opts
        .scheme
        .magnitudes()
        .iter()
        .map(|&m| stats.radius_mm.at(m.abs() as f64).max(MIN_RADIUS_MM))
        .fold(base.radius_mm, f64::max);
    let index_map = CollisionIndex::from_vessels_and_labels(&ctx.vessels, &ctx.liver);
    let candidates = crate::placement::liver_candidates(&ctx.liver);
    let geometry = ctx.liver.geometry().clone();
    let mut placement = None;
    let mut base_annotations = Vec::new();
    let mut prng = stream(base.seed, STREAM_PLACEMENT);
    if let Ok(p) = sample_from_candidates(&candidates, &geometry, &ctx.liver, &index_map, widest, cfg.max_attempts, &mut prng) {
        placement = Some(p.center);
    }
    let requested = base.radius_mm;
    while placement.is_none() {
        let mut prng = stream(base.seed, STREAM_PLACEMENT);
        match sample_from_candidates(&candidates, &geometry, &ctx.liver, &index_map, base.radius_mm, cfg.max_attempts, &mut prng) {
            Ok(p) => placement = Some(p.center),
            Err(Error::PlacementExhausted { .. }) if base.radius_mm > MIN_RADIUS_MM => {
                let r = (base.radius_mm * 0.9).max(MIN_RADIUS_MM);
                base.half_axes_mm = base.half_axes_mm.map(|a| a * r / base.radius_mm);
                base.radius_mm = r;
            }
            Err(_) => return Err(Error::SynthesisFailed(format!("scan {}: no collision-free base location", scan.id))),
        }
    }
    if base.radius_mm < requested {
        base_annotations.push(format!("base radius {requested:.2} mm does not fit the liver; clamped to {:.2} mm", base.radius_mm));
    }
    base.center = placement;
    Ok(ScanPlan { ctx, clearance, stats, base, base_annotations, signs, scan_seed })
}

/// Scale the base half-axes' deviation from a sphere by `factor`.
fn spread_half_axes(base: &TumorSpec, radius: f64, factor: f64) -> [f64; 3] {
    base.half_axes_mm.map(|a| {
        let f = a / base.radius_mm;
        radius * (1.0 + (f - 1.0) * factor).max(0.2)
    })
}

fn variant_spec(plan: &ScanPlan, dim: Dimension, k: i32, annotations: &mut Vec<String>) -> Result<TumorSpec> {
    let ctx = &plan.ctx;
    let st = &plan.stats;
    let kf = k as f64;
    let mut spec = plan.base.clone();
    match dim {
        Dimension::Shape => {
            let raw = st.elastic_sigma.at(kf);
            if raw < 0.0 {
                annotations.push(format!("elastic sigma {raw:.3} clamped to 0"));
            }
            spec.elastic_sigma = raw.max(0.0);
            spec.half_axes_mm = spread_half_axes(&plan.base, spec.radius_mm, 1.0 + kf / 2.0);
        }
        Dimension::Size => {
            let raw = st.radius_mm.at(kf);
            let r = if raw < MIN_RADIUS_MM {
                annotations.push(format!("radius {raw:.3} mm clamped to {MIN_RADIUS_MM} mm"));
                MIN_RADIUS_MM
            } else {
                raw
            };
            spec.half_axes_mm = spread_half_axes(&plan.base, r, 1.0);
            spec.radius_mm = r;
        }
        Dimension::Texture => {
            let raw = st.eta.at(kf);
            if raw < 1.0 {
                annotations.push(format!("eta {raw:.3} clamped to 1"));
            }
            spec.eta = raw.max(1.0);
            spec.texture_std_scale = (1.0 + 0.25 * kf).max(0.0);
        }
        Dimension::Intensity => {
            spec.mu_t = st.mu_t.at(kf);
        }
        Dimension::Location => {
            let raw = st.clearance_mm.at(kf);
            if raw < 0.0 {
                annotations.push(format!("clearance {raw:.3} mm clamped to 0"));
            }
            let target = raw.max(0.0);
            let (region, dist) = &plan.clearance;
            let index = CollisionIndex::from_vessels_and_labels(&ctx.vessels, &ctx.liver);
            let r = voxel_radii(spec.radius_mm, ctx.liver.spacing());
            let g = ctx.liver.geometry();
            let mut best: Option<(f64, [usize; 3])> = None;
            for (i, &l) in ctx.liver.data().iter().enumerate() {
                if l != LIVER {
                    continue;
                }
                let p = g.coords(i);
                if !index.is_free(p, r) {
                    continue;
                }
                let gap = (dist.get(region.to_local(p)) - target).abs();
                if best.is_none_or(|(b, _)| gap < b) {
                    best = Some((gap, p));
                }
            }
            let (gap, center) = best.ok_or_else(|| Error::SynthesisFailed(format!("scan {}: no feasible location", ctx.scan_id)))?;
            if gap > 1.0 {
                annotations.push(format!("nearest feasible clearance is {gap:.2} mm from the {target:.2} mm target"));
            }
            spec.center = Some(center);
        }
    }

    // Keep the shared center unless the variant's box no longer fits there;
    // then resample, and past that shrink the tumor until some center fits.
    if dim != Dimension::Location {
        let center = plan.base.center.expect("base is placed");
        let index = CollisionIndex::from_vessels_and_labels(&ctx.vessels, &ctx.liver);
        if !index.is_free(center, voxel_radii(spec.radius_mm, ctx.liver.spacing())) {
            let candidates = crate::placement::liver_candidates(&ctx.liver);
            let requested = spec.radius_mm;
            loop {
                let mut rng = stream(derive_seed(plan.scan_seed, 100 + jobs_key(dim, k)), STREAM_PLACEMENT);
                match sample_from_candidates(&candidates, ctx.liver.geometry(), &ctx.liver, &index, spec.radius_mm, ctx.config.max_attempts, &mut rng) {
                    Ok(p) => {
                        spec.center = Some(p.center);
                        break;
                    }
                    Err(Error::PlacementExhausted { .. }) if spec.radius_mm > MIN_RADIUS_MM => {
                        let r = (spec.radius_mm * 0.9).max(MIN_RADIUS_MM);
                        spec.half_axes_mm = spec.half_axes_mm.map(|a| a * r / spec.radius_mm);
                        spec.radius_mm = r;
                    }
                    Err(e) => return Err(e),
                }
            }
            if spec.radius_mm < requested {
                annotations.push(format!("radius {requested:.2} mm does not fit the liver; clamped to {:.2} mm", spec.radius_mm));
            } else {
                annotations.push(format!("base center collides at radius {:.2} mm; resampled", spec.radius_mm));
            }
        }
    }
    Ok(spec)
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn variant_id(scan_id: &str, dim: Dimension, k: i32) -> String {
    let level = if k < 0 { format!("m{}", -k) } else { format!("p{k}") };
    format!("{}_{}_{}", file_stem(scan_id), dim.as_str(), level)
}

/// Build the grid. When `out_dir` is given every variant is written as
/// `<scan>/<variant>_ct.nii.gz` and `_label.nii.gz` beneath it, along with
/// `manifest.json`.
pub fn build_grid(scans: &[GridScan], cfg: &GenConfig, opts: &GridOptions, out_dir: Option<&Path>) -> Result<GridManifest> {
    if opts.dimensions.is_empty() {
        return Err(Error::Argument("grid needs at least one dimension".into()));
    }
    let plans: Vec<ScanPlan> = scans
        .iter()
        .enumerate()
        .map(|(i, s)| plan_scan(s, i, cfg, opts))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (si, plan) in plans.iter().enumerate() {
        for &dim in &opts.dimensions {
            let sign = match opts.scheme {
                LevelScheme::Graded5 => 1,
                LevelScheme::ThreeLevel => plan.signs[Dimension::ALL.iter().position(|&d| d == dim).unwrap()],
            };
            for &m in opts.scheme.magnitudes() {
                jobs.push((si, dim, sign * m));
            }
        }
    }

    let run = |&(si, dim, k): &(usize, Dimension, i32)| -> Result<Variant> {
        let plan = &plans[si];
        let mut annotations = Vec::new();
        let spec = variant_spec(plan, dim, k, &mut annotations)?;
        let id = variant_id(&plan.ctx.scan_id, dim, k);
        let seed = derive_seed(plan.scan_seed, 1000 + jobs_key(dim, k));
        let stem = file_stem(&plan.ctx.scan_id);
        let ct_path = format!("{stem}/{id}_ct.nii.gz");
        let label_path = format!("{stem}/{id}_label.nii.gz");
        if let Some(dir) = out_dir {
            let out = plan.ctx.synthesize_with_spec(std::slice::from_ref(&spec), seed)?;
            let scan_dir = dir.join(&stem);
            std::fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
            save_nifti(&out.ct, dir.join(&ct_path))?;
            save_labels(&out.labels, dir.join(&label_path))?;
        }
        Ok(Variant {
            id,
            scan_id: plan.ctx.scan_id.clone(),
            dimension: dim,
            level: k,
            level_label: level_label(k),
            seed,
            spec,
            annotations,
            ct_path,
            label_path,
        })
    };

    let variants: Vec<Variant> = if opts.jobs == 0 {
        jobs.par_iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_>>())?
    };

    let mut scans_out: Vec<ScanEntry> = plans
        .iter()
        .map(|p| ScanEntry {
            scan_id: p.ctx.scan_id.clone(),
            base: p.base.clone(),
            base_annotations: p.base_annotations.clone(),
            in_distribution: p.stats,
            variants: Vec::new(),
        })
        .collect();
    for (job, v) in jobs.iter().zip(variants) {
        scans_out[job.0].variants.push(v);
    }
    let manifest = GridManifest {
        seed: opts.seed,
        scheme: opts.scheme,
        dimensions: opts.dimensions.clone(),
        scans: scans_out,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(manifest)
}

fn jobs_key(dim: Dimension, k: i32) -> u64 {
    let d = Dimension::ALL.iter().position(|&x| x == dim).unwrap() as u64;
    d * 16 + (k + 8) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dimension: Dimension,
    pub level: i32,
    pub level_label: String,
    /// Mean tumor DSC × 100 across scans.
    pub mean_dsc: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub cells: Vec<GridCell>,
}

impl GridEvaluation {
    /// Fixed-width text table, one row per dimension.
    pub fn to_table(&self) -> String {
        let mut levels: Vec<i32> = self.cells.iter().map(|c| c.level).collect();
        levels.sort_unstable();
        levels.dedup();
        let mut dims: Vec<Dimension> = self.cells.iter().map(|c| c.dimension).collect();
        dims.sort_unstable();
        dims.dedup();
        let mut out = format!("{:<10}", "dimension");
        for &k in &levels {
            let _ = write!(out, " {:>11}", level_label(k));
        }
        out.push('\n');
        for d in dims {
            let _ = write!(out, "{:<10}", d.as_str());
            for &k in &levels {
                match self.cells.iter().find(|c| c.dimension == d && c.level == k) {
                    Some(c) => {
                        let _ = write!(out, " {:>11.2}", c.mean_dsc);
                    }
                    None => {
                        let _ = write!(out, " {:>11}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn find_prediction(pred_dir: &Path, id: &str) -> Option<PathBuf> {
    ["nii.gz", "nii"].iter().map(|ext| pred_dir.join(format!("{id}.{ext}"))).find(|p| p.is_file())
}

/// Score predictions `<pred_dir>/<variant id>.nii[.gz]` against the grid's
/// labels under `grid_dir`. Every variant needs a prediction.
pub fn evaluate_grid(manifest: &GridManifest, grid_dir: &Path, pred_dir: &Path) -> Result<GridEvaluation> {
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for v in manifest.variants() {
        match find_prediction(pred_dir, &v.id) {
            Some(p) => found.push((v, p)),
            None => missing.push(v.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPredictions { missing });
    }
    let mut cells: Vec<GridCell> = Vec::new();
    for (v, path) in found {
        let gt = load_labels(grid_dir.join(&v.label_path))?;
        let pred = load_labels(&path)?;
        let score = 100.0 * dsc(&gt.mask_of(TUMOR), &pred.mask_of(TUMOR))?;
        match cells.iter_mut().find(|c| c.dimension == v.dimension && c.level == v.level) {
            Some(c) => {
                c.mean_dsc += score;
                c.count += 1;
            }
            None => cells.push(GridCell {
                dimension: v.dimension,
                level: v.level,
                level_label: v.level_label.clone(),
                mean_dsc: score,
                count: 1,
            }),
        }
    }
    for c in &mut cells {
        c.mean_dsc /= c.count as f64;
    }
    cells.sort_by_key(|a| (a.dimension, a.level));
    Ok(GridEvaluation { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{liver_phantom, PhantomSpec};

    fn scan(id: &str, seed: u64) -> GridScan {
        let p = liver_phantom(&PhantomSpec { dims: [56; 3], vessels: 2, seed, ..PhantomSpec::default() });
        GridScan { id: id.into(), ct: p.ct, liver: p.liver }
    }

    #[test]
    fn level_labels() {
        assert_eq!(level_label(0), "mu");
        assert_eq!(level_label(-1), "mu-sigma");
        assert_eq!(level_label(3), "mu+3sigma");
    }

    #[test]
    fn three_levels_two_scans_gives_thirty_variants() {
        let opts = GridOptions { scheme: LevelScheme::ThreeLevel, seed: 5, ..GridOptions::default() };
        let m = build_grid(&[scan("a", 1), scan("b", 2)], &GenConfig::training(), &opts, None).unwrap();
        assert_eq!(m.variants().count(), 30);
        for s in &m.scans {
            for d in Dimension::ALL {
                let levels: Vec<i32> = s.variants.iter().filter(|v| v.dimension == d).map(|v| v.level).collect();
                assert_eq!(levels.len(), 3);
                assert!(levels.iter().all(|l| l.signum() == levels[0].signum()));
            }
        }
    }

    #[test]
    fn size_radius_monotone_in_level() {
        let m = build_grid(&[scan("a", 3)], &GenConfig::training(), &GridOptions::default(), None).unwrap();
        let size: Vec<&Variant> = m.scans[0].variants.iter().filter(|v| v.dimension == Dimension::Size).collect();
        assert_eq!(size.len(), 5);
        let st = &m.scans[0].in_distribution.radius_mm;
        for v in &size {
            let expected = st.at(v.level as f64);
            if !v.annotations.iter().any(|a| a.contains("clamped")) {
                assert_eq!(v.spec.radius_mm, expected);
            } else {
                assert!(v.spec.radius_mm != expected);
            }
        }
        let free: Vec<f64> = size.iter().filter(|v| !v.annotations.iter().any(|a| a.contains("clamped"))).map(|v| v.spec.radius_mm).collect();
        assert!(free.len() >= 2);
        assert!(free.windows(2).all(|w| w[0] < w[1]), "{free:?}");
    }

    #[test]
    fn only_one_dimension_moves() {
        let m = build_grid(&[scan("a", 4)], &GenConfig::training(), &GridOptions::default(), None).unwrap();
        let base = &m.scans[0].base;
        for v in &m.scans[0].variants {
            let s = &v.spec;
            if v.dimension != Dimension::Intensity {
                assert_eq!(s.mu_t, base.mu_t);
            }
            if v.dimension != Dimension::Texture {
                assert_eq!((s.eta, s.texture_std_scale), (base.eta, base.texture_std_scale));
            }
            if v.dimension != Dimension::Shape {
                assert_eq!(s.elastic_sigma, base.elastic_sigma);
            }
            if v.dimension != Dimension::Size && v.dimension != Dimension::Shape {
                assert_eq!(s.half_axes_mm, base.half_axes_mm);
                assert_eq!(s.radius_mm, base.radius_mm);
            }
        }
    }

    #[test]
    fn evaluation_round_trip_and_missing_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let grid_dir = dir.path().join("grid");
        let opts = GridOptions { dimensions: vec![Dimension::Size, Dimension::Intensity], ..GridOptions::default() };
        let m = build_grid(&[scan("liver-1", 7)], &GenConfig::training(), &opts, Some(&grid_dir)).unwrap();
        assert_eq!(GridManifest::load(grid_dir.join("manifest.json")).unwrap(), m);

        let perfect = dir.path().join("perfect");
        let empty = dir.path().join("empty");
        std::fs::create_dir_all(&perfect).unwrap();
        std::fs::create_dir_all(&empty).unwrap();
        for v in m.variants() {
            let gt = load_labels(grid_dir.join(&v.label_path)).unwrap();
            save_labels(&gt, perfect.join(format!("{}.nii.gz", v.id))).unwrap();
            save_labels(&gt.map(|l| l.min(LIVER)), empty.join(format!("{}.nii", v.id))).unwrap();
        }
        let e = evaluate_grid(&m, &grid_dir, &perfect).unwrap();
        assert_eq!(e.cells.len(), 10);
        assert!(e.cells.iter().all(|c| c.mean_dsc == 100.0));
        assert!(e.to_table().contains("100.00"));
        let e = evaluate_grid(&m, &grid_dir, &empty).unwrap();
        assert!(e.cells.iter().all(|c| c.mean_dsc == 0.0));

        let victim = m.scans[0].variants[3].id.clone();
        std::fs::remove_file(perfect.join(format!("{victim}.nii.gz"))).unwrap();
        match evaluate_grid(&m, &grid_dir, &perfect) {
            Err(Error::MissingPredictions { missing }) => assert_eq!(missing, vec![victim]),
            other => panic!("{other:?}"),
        }
    }
}
