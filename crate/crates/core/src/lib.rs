//! Procedural liver tumor synthesis for CT volumes.
//!
//! The crate implants synthetic tumors into a CT scan given a liver mask,
//! producing a paired label volume (0 background, 1 liver, 2 tumor). The
//! pipeline per tumor is: vessel-avoiding location selection, Gaussian
//! texture with cubic upscaling, elastically deformed ellipsoid shape,
//! blending, radial mass-effect warping and capsule brightening.
//!
//! Alongside the generator live the segmentation metrics (DSC, NSD,
//! lesion-wise detection, reader-study tallies) and the controllable
//! out-of-distribution benchmark grid.

pub mod benchgrid;
pub mod composite;
pub mod config;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod phantom;
pub mod placement;
pub mod rng;
pub mod shape;
pub mod texture;
pub mod vessels;
pub mod volgrid;

pub use config::{GenConfig, PresetName, SizePreset};
pub use error::{Error, Result};
pub use generator::{synthesize, synthesize_with_spec, ProvenanceRecord, ScanContext, TumorSpec};
pub use volgrid::{
    BinaryMask, Geometry, LabelVolume, ScalarVolume, SoftMask, Volume, BACKGROUND, LIVER, TUMOR,
};
