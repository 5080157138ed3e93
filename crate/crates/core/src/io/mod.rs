//! File formats. See `FORMATS.md` at the repository root for byte layouts.

mod nifti;
mod pnm;
mod raw;
mod stack;

pub use nifti::{import_nifti, parse_nifti};
pub use pnm::{read_mask, read_pgm, read_ppm, write_mask, write_pgm, write_ppm, GrayImage, RgbImage};
pub use raw::{
    decode, encode, read_coordmap, read_header, read_volume, volume_paths, write_coordmap, write_volume,
    write_volume_as, Dtype, VolumeHeader, RAW_FORMAT,
};
pub use stack::{
    provenance_from_kv, provenance_to_kv, read_recon, read_stack, recon_from_kv, recon_to_kv, slab_coords_path,
    slab_image_path, slab_labels_path, slab_mask_path, slab_meta_path, write_case, write_recon, write_stack, Stack,
    RECON_FORMAT, STACK_FORMAT,
};

use std::path::Path;

use crate::error::Result;
use crate::volume::Volume3D;

/// Read a volume by extension: `.nii` through the NIfTI importer, anything
/// else as raw plus sidecar.
pub fn load_volume(path: &Path) -> Result<Volume3D> {
    let name = path.to_string_lossy();
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        import_nifti(path)
    } else {
        read_volume(path)
    }
}
