//! 3D volume representation and the numerical kernels shared by every stage
//! of the pipeline: NIfTI I/O, Gaussian blur, interpolation, connected
//! components and Euclidean distance transforms.

mod components;
mod distance;
mod filter;
mod interp;
pub mod nifti;
mod volume;

pub use components::{connected_components, largest_component, ComponentSet, Connectivity};
pub use distance::{distance_to_set_mm, squared_distance_to_set_mm};
pub use filter::{gaussian_blur, gaussian_blur_axes, gaussian_kernel};
pub use interp::{
    catmull_rom_weights, resample_axis_cubic, sample_nearest, sample_trilinear,
    sample_trilinear_clamped, upscale_cubic,
};
pub use nifti::{load_labels, load_nifti, load_scalar, save_labels, save_nifti, NiftiImage};
pub use volume::{
    BinaryMask, Geometry, LabelVolume, Orientation, Region, ScalarVolume, SoftMask, Volume,
    BACKGROUND, LIVER, TUMOR,
};
