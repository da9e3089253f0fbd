//! Per-scan orchestration: preset sampling, per-tumor parameter draws,
//! sequential implantation and provenance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::composite::{apply_capsule, blend_tumor, warp_labels, warp_scalar, CapsuleParams, MassEffectParams};
use crate::config::{uniform, GenConfig, PresetName, SizePreset};
use crate::error::{Error, Result};
use crate::placement::{liver_candidates, sample_from_candidates, voxel_radii, CollisionIndex};
use crate::rng::{derive_seed, stream, STREAM_ELASTIC, STREAM_NOISE, STREAM_PARAMS, STREAM_PLACEMENT, STREAM_SCAN};
use crate::shape::{elastic_deform, ellipsoid_mask, soft_edge};
use crate::texture::{generate_texture, TextureParams};
use crate::vessels::{estimate_parenchyma_stats, segment_vessels, ParenchymaStats};
use crate::volgrid::{BinaryMask, LabelVolume, Region, ScalarVolume, SoftMask, Volume, TUMOR};

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// One tumor's parameters. Every random quantity of the tumor is either a
/// field here or drawn from streams keyed by `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorSpec {
    /// Pinned center in voxels; `None` samples a collision-free one.
    #[serde(default)]
    pub center: Option<[usize; 3]>,
    /// Preset radius r in mm; sets the collision box and γmax.
    pub radius_mm: f64,
    pub half_axes_mm: [f64; 3],
    /// μt in HU.
    pub mu_t: f64,
    /// η.
    pub eta: f64,
    /// σc.
    pub edge_blur: f64,
    /// σe.
    pub elastic_sigma: f64,
    /// I.
    pub expansion_intensity: f64,
    pub mass_effect: bool,
    pub capsule: bool,
    /// d in HU.
    pub capsule_brightening: f64,
    /// Multiplier on σp for the texture noise.
    #[serde(default = "default_one")]
    pub texture_std_scale: f64,
    /// When false the soft shape is all zeros and the tumor leaves the scan untouched.
    #[serde(default = "default_true")]
    pub shape_enabled: bool,
    pub seed: u64,
    #[serde(default)]
    pub preset: Option<PresetName>,
}

impl TumorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Argument(format!("tumor spec: {what} invalid ({v})")));
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return bad("radius_mm", self.radius_mm);
        }
        for &a in &self.half_axes_mm {
            if !(a.is_finite() && a > 0.0) {
                return bad("half_axes_mm", a);
            }
        }
        if !self.mu_t.is_finite() {
            return bad("mu_t", self.mu_t);
        }
        if !(self.eta.is_finite() && self.eta >= 1.0) {
            return bad("eta", self.eta);
        }
        if !(self.edge_blur.is_finite() && self.edge_blur > 0.0) {
            return bad("edge_blur", self.edge_blur);
        }
        if !(self.elastic_sigma.is_finite() && self.elastic_sigma >= 0.0) {
            return bad("elastic_sigma", self.elastic_sigma);
        }
        if !(0.0..=100.0).contains(&self.expansion_intensity) {
            return bad("expansion_intensity", self.expansion_intensity);
        }
        if !(self.capsule_brightening.is_finite() && self.capsule_brightening >= 0.0) {
            return bad("capsule_brightening", self.capsule_brightening);
        }
        if !(self.texture_std_scale.is_finite() && self.texture_std_scale >= 0.0) {
            return bad("texture_std_scale", self.texture_std_scale);
        }
        Ok(())
    }

    /// Draw a tumor from `preset` with the config's ranges. `shared_mu_t`
    /// overrides the per-tumor intensity draw.
    pub fn sample(preset: &SizePreset, cfg: &GenConfig, mu_p: f64, shared_mu_t: Option<f64>, seed: u64) -> TumorSpec {
        let mut rng = stream(seed, STREAM_PARAMS);
        let r = preset.radius_mm;
        let half_axes_mm = [0, 1, 2].map(|_| r * uniform(&mut rng, cfg.half_axis_factor_range));
        let elastic_sigma = uniform(&mut rng, preset.elastic_sigma_range);
        let edge_blur = uniform(&mut rng, cfg.edge_blur_range);
        let eta = uniform(&mut rng, cfg.texture_scale_range);
        let drawn_mu = uniform(&mut rng, cfg.intensity_range(mu_p));
        TumorSpec {
            center: None,
            radius_mm: r,
            half_axes_mm,
            mu_t: shared_mu_t.unwrap_or(drawn_mu),
            eta,
            edge_blur,
            elastic_sigma,
            expansion_intensity: cfg.expansion_intensity,
            mass_effect: cfg.mass_effect,
            capsule: cfg.capsule,
            capsule_brightening: cfg.capsule_brightening,
            texture_std_scale: 1.0,
            shape_enabled: true,
            seed,
            preset: Some(preset.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorRecord {
    pub index: usize,
    /// Spec with the final center filled in; replaying it reproduces the tumor.
    pub spec: TumorSpec,
    /// Placement draws used; 0 for pinned centers.
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTumor {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub scan_id: String,
    pub seed: u64,
    /// Preset as requested (`mix` included); `None` for explicit specs.
    pub preset: Option<PresetName>,
    /// Sized preset actually used.
    pub resolved_preset: Option<PresetName>,
    /// Tumors planned before placement.
    pub planned: usize,
    pub tumors: Vec<TumorRecord>,
    pub skipped: Vec<SkippedTumor>,
    pub stats: ParenchymaStats,
    pub config: GenConfig,
}

impl ProvenanceRecord {
    /// Specs that regenerate the recorded output via `synthesize_with_spec`.
    pub fn replay_specs(&self) -> Vec<TumorSpec> {
        self.tumors.iter().map(|t| t.spec.clone()).collect()
    }
}

/// A synthesized scan.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub ct: ScalarVolume,
    pub labels: LabelVolume,
    pub provenance: ProvenanceRecord,
}

/// Result of implanting one tumor: its soft mask t'' (after any warp) on
/// the crop region.
#[derive(Clone, Debug)]
pub struct Implant {
    pub region: Region,
    pub soft_mask: SoftMask,
}

/// Per-scan state computed once and shared by every synthesis on the scan.
#[derive(Clone, Debug)]
pub struct ScanContext {
    pub scan_id: String,
    pub ct: ScalarVolume,
    pub liver: LabelVolume,
    pub stats: ParenchymaStats,
    pub vessels: BinaryMask,
    pub config: GenConfig,
    candidates: Vec<usize>,
}

impl ScanContext {
    pub fn prepare(ct: ScalarVolume, liver: LabelVolume, cfg: &GenConfig) -> Result<ScanContext> {
        cfg.validate()?;
        ct.ensure_finite()?;
        ct.geometry().ensure_same_grid(liver.geometry(), "liver mask")?;
        liver.ensure_label_values()?;
        let stats = estimate_parenchyma_stats(&ct, &liver, cfg)?;
        let vessels = segment_vessels(&ct, &liver, &stats, cfg)?;
        let candidates = liver_candidates(&liver);
        Ok(ScanContext {
            scan_id: "scan".into(),
            ct,
            liver,
            stats,
            vessels,
            config: cfg.clone(),
            candidates,
        })
    }

    pub fn with_scan_id(mut self, id: impl Into<String>) -> Self {
        self.scan_id = id.into();
        self
    }

    /// Preset resolution and tumor specs for `seed`, without implanting.
    pub fn plan(&self, preset: PresetName, seed: u64) -> (SizePreset, Vec<TumorSpec>) {
        let cfg = &self.config;
        let mut scan_rng = stream(seed, STREAM_SCAN);
        let sized = SizePreset::resolve(preset, &cfg.presets, &mut scan_rng);
        let [lo, hi] = sized.count_range;
        let count = scan_rng.random_range(lo..=hi);
        let shared = (cfg.shared_intensity && preset != PresetName::Mix)
            .then(|| uniform(&mut scan_rng, cfg.intensity_range(self.stats.mu_p)));
        let specs = (0..count)
            .map(|i| TumorSpec::sample(&sized, cfg, self.stats.mu_p, shared, derive_seed(seed, i as u64)))
            .collect();
        (sized, specs)
    }

    pub fn synthesize(&self, preset: PresetName, seed: u64) -> Result<Synthesis> {
        let (sized, specs) = self.plan(preset, seed);
        let mut out = self.run(&specs, seed)?;
        out.provenance.preset = Some(preset);
        out.provenance.resolved_preset = Some(sized.name);
        Ok(out)
    }

    pub fn synthesize_with_spec(&self, specs: &[TumorSpec], seed: u64) -> Result<Synthesis> {
        let range = self.config.intensity_range(self.stats.mu_p);
        for (i, s) in specs.iter().enumerate() {
            s.validate()?;
            if s.mu_t < range[0] || s.mu_t > range[1] {
                log::warn!("tumor {i}: mu_t {} outside the sampling range {range:?}", s.mu_t);
            }
        }
        self.run(specs, seed)
    }

    fn run(&self, specs: &[TumorSpec], seed: u64) -> Result<Synthesis> {
        let cfg = &self.config;
        let geometry = self.ct.geometry().clone();
        let mut ct = self.ct.clone();
        let mut labels = self.liver.clone();
        let mut blocked = Volume::from_vec(
            geometry.clone(),
            self.vessels.data().iter().zip(labels.data()).map(|(&v, &l)| v || l == TUMOR).collect(),
        )?;
        let mut index = CollisionIndex::new(&blocked);
        let mut tumors = Vec::new();
        let mut skipped = Vec::new();

        for (i, spec) in specs.iter().enumerate() {
            let (center, attempts) = match spec.center {
                Some(c) => {
                    if !geometry.contains(c) {
                        return Err(Error::OutOfBounds { point: c.map(|v| v as f64), dims: geometry.dims });
                    }
                    if !index.is_free(c, voxel_radii(spec.radius_mm, geometry.spacing)) {
                        return Err(Error::Collision { index: i, center: c });
                    }
                    (c, 0)
                }
                None => {
                    let mut rng = stream(spec.seed, STREAM_PLACEMENT);
                    match sample_from_candidates(&self.candidates, &geometry, &labels, &index, spec.radius_mm, cfg.max_attempts, &mut rng) {
                        Ok(p) => (p.center, p.attempts),
                        Err(e @ Error::PlacementExhausted { .. }) => {
                            log::info!("tumor {i} skipped: {e}");
                            skipped.push(SkippedTumor { index: i, reason: e.to_string() });
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            let placed = TumorSpec { center: Some(center), ..spec.clone() };
            let implant = implant(&mut ct, &mut labels, &placed, self.stats.sigma_p, cfg)?;

            // New tumor voxels block later placements.
            let local_labels = labels.crop(&implant.region);
            let mut local_blocked = blocked.crop(&implant.region);
            for (b, &l) in local_blocked.data_mut().iter_mut().zip(local_labels.data()) {
                *b |= l == TUMOR;
            }
            blocked.paste(&implant.region, &local_blocked);
            index = CollisionIndex::new(&blocked);

            tumors.push(TumorRecord { index: i, spec: placed, attempts });
        }

        if tumors.is_empty() {
            return Err(Error::SynthesisFailed(format!(
                "none of {} planned tumors could be placed",
                specs.len()
            )));
        }
        Ok(Synthesis {
            ct,
            labels,
            provenance: ProvenanceRecord {
                scan_id: self.scan_id.clone(),
                seed,
                preset: None,
                resolved_preset: None,
                planned: specs.len(),
                tumors,
                skipped,
                stats: self.stats,
                config: cfg.clone(),
            },
        })
    }
}

/// Crop half-extent around a tumor center that contains the deformed shape,
/// every blur's reach and the mass-effect ball.
fn crop_half_extent(spec: &TumorSpec, spacing: [f64; 3], cfg: &GenConfig) -> [usize; 3] {
    let max_axis = spec.half_axes_mm.iter().cloned().fold(0.0, f64::max);
    let alpha = cfg.elastic.amplitude_per_sigma * spec.elastic_sigma;
    let sigma_c = cfg.sigma_unit.to_voxels(spec.edge_blur, spacing);
    let sigma_d = cfg.sigma_unit.to_voxels(cfg.capsule_blur, spacing);
    let gamma_max = cfg.expansion_radius_factor * spec.radius_mm;
    [0, 1, 2].map(|a| {
        let shape = (max_axis / spacing[a]).ceil() as usize + (1.25 * alpha).ceil() as usize + 1;
        let blur = (4.0 * sigma_c[a]).ceil() as usize + (4.0 * sigma_d[a]).ceil() as usize + 1;
        let ball = (gamma_max / spacing[a]).ceil() as usize + 1;
        (shape + blur).max(ball)
    })
}

/// Implant one tumor with a pinned center into `ct`/`labels` in place.
///
/// Pipeline on the crop around the center: ellipsoid → elastic deformation
/// → soft edge → texture → blend → mass effect → capsule.
pub fn implant(ct: &mut ScalarVolume, labels: &mut LabelVolume, spec: &TumorSpec, sigma_p: f64, cfg: &GenConfig) -> Result<Implant> {
    spec.validate()?;
    let center = spec
        .center
        .ok_or_else(|| Error::Argument("implant needs a pinned center".into()))?;
    let g = ct.geometry().clone();
    g.ensure_same_grid(labels.geometry(), "label volume")?;
    if !g.contains(center) {
        return Err(Error::OutOfBounds { point: center.map(|v| v as f64), dims: g.dims });
    }
    let region = Region::around(center, crop_half_extent(spec, g.spacing, cfg), g.dims);
    let local = g.sub_geometry(&region);
    let c = region.to_local(center).map(|v| v as f64);

    let t2 = if spec.shape_enabled {
        let t = ellipsoid_mask(c, spec.half_axes_mm, &local)?;
        let t1 = elastic_deform(&t, spec.elastic_sigma, &cfg.elastic, &mut stream(spec.seed, STREAM_ELASTIC))?;
        soft_edge(&t1, cfg.sigma_unit.to_voxels(spec.edge_blur, g.spacing))?
    } else {
        SoftMask::zeros(local.clone())
    };

    let texture = generate_texture(
        &local,
        &TextureParams {
            mu_t: spec.mu_t,
            sigma_p: sigma_p * spec.texture_std_scale,
            eta: spec.eta,
            sigma_b: cfg.sigma_unit.to_voxels(cfg.texture_blur, g.spacing),
        },
        &mut stream(spec.seed, STREAM_NOISE),
    )?;

    let (mut f, mut l) = blend_tumor(&ct.crop(&region), &labels.crop(&region), &t2, &texture, cfg.label_threshold)?;
    let mut t2 = t2;
    if spec.mass_effect && spec.expansion_intensity > 0.0 {
        let p = MassEffectParams {
            center: c,
            gamma_max: cfg.expansion_radius_factor * spec.radius_mm,
            intensity: spec.expansion_intensity,
        };
        f = warp_scalar(&f, &p)?;
        l = warp_labels(&l, &p)?;
        t2 = SoftMask::clamped(warp_scalar(t2.volume(), &p)?);
    }
    if spec.capsule {
        let p = CapsuleParams {
            lb: cfg.capsule_bounds[0],
            ub: cfg.capsule_bounds[1],
            sigma_d: cfg.sigma_unit.to_voxels(cfg.capsule_blur, g.spacing),
            d: spec.capsule_brightening,
        };
        f = apply_capsule(&f, &t2, &p)?;
    }
    ct.paste(&region, &f);
    labels.paste(&region, &l);
    Ok(Implant { region, soft_mask: t2 })
}

/// One-shot synthesis with a sampled preset.
pub fn synthesize(ct: &ScalarVolume, liver: &LabelVolume, preset: PresetName, seed: u64, cfg: &GenConfig) -> Result<Synthesis> {
    ScanContext::prepare(ct.clone(), liver.clone(), cfg)?.synthesize(preset, seed)
}

/// One-shot synthesis with explicit tumor specs.
pub fn synthesize_with_spec(ct: &ScalarVolume, liver: &LabelVolume, specs: &[TumorSpec], seed: u64, cfg: &GenConfig) -> Result<Synthesis> {
    ScanContext::prepare(ct.clone(), liver.clone(), cfg)?.synthesize_with_spec(specs, seed)
}
