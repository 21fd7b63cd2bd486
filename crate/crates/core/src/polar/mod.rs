//! Polar sampling of `K x K` neighbourhoods and image rotation.

mod lattice;
mod rotate;
mod sample;

pub use lattice::{lattice_offsets, PolarLattice, SamplingMode, Tap};
pub use rotate::{rot90, rotate_image, rotate_tensor, RotationSpec};
pub use sample::{
    bilinear_sample, blend, extract_patch, extract_patch_with, ring_shift, ring_shift_parts, PolarPatch, TapTable,
};
