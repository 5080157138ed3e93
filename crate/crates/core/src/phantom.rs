//! Built-in multi-label geometric phantom: nested ellipsoids with eight labels.

use crate::geometry::index_to_norm;
use crate::volume::{Volume3D, VolumeKind};

/// One ellipsoid: label, center and semi-axes in normalized units.
struct Blob {
    label: u32,
    center: [f64; 3],
    radii: [f64; 3],
}

/// Drawn in order; later blobs overwrite earlier ones.
const BLOBS: [Blob; 8] = [
    Blob { label: 1, center: [0.0, 0.0, 0.0], radii: [0.78, 0.88, 0.72] },
    Blob { label: 2, center: [0.02, -0.03, 0.02], radii: [0.62, 0.74, 0.56] },
    Blob { label: 3, center: [-0.30, 0.25, 0.12], radii: [0.16, 0.22, 0.14] },
    Blob { label: 4, center: [0.28, 0.20, 0.05], radii: [0.12, 0.18, 0.20] },
    Blob { label: 5, center: [0.05, -0.38, -0.18], radii: [0.24, 0.14, 0.12] },
    Blob { label: 6, center: [-0.18, -0.10, -0.30], radii: [0.10, 0.26, 0.10] },
    Blob { label: 7, center: [0.22, -0.12, 0.32], radii: [0.14, 0.12, 0.09] },
    Blob { label: 8, center: [-0.05, 0.45, -0.05], radii: [0.09, 0.10, 0.16] },
];

pub const PHANTOM_LABELS: u32 = 8;

/// Default phantom size and spacing.
pub const DEFAULT_DIM: usize = 96;
pub const DEFAULT_SPACING_MM: f64 = 2.0;

/// Label of the phantom at a normalized point.
pub fn phantom_label(p: [f64; 3]) -> u32 {
    let mut label = 0;
    for b in &BLOBS {
        let r: f64 = (0..3).map(|a| ((p[a] - b.center[a]) / b.radii[a]).powi(2)).sum();
        if r <= 1.0 {
            label = b.label;
        }
    }
    label
}

/// Phantom label volume of size `n³` and the identity coordinate field.
pub fn phantom(n: usize, spacing_mm: f64) -> (Volume3D, Volume3D) {
    let labels = Volume3D::from_fn([n; 3], [spacing_mm; 3], VolumeKind::Label, |[x, y, z]| {
        let p = [index_to_norm(x, n), index_to_norm(y, n), index_to_norm(z, n)];
        [phantom_label(p) as f64, 0.0, 0.0]
    })
    .expect("phantom labels are valid");
    (labels, Volume3D::identity_coords([n; 3], [spacing_mm; 3]))
}

/// Fixed grey level per label, used to paint label maps for comparisons.
pub const PAINT_LUT: [f64; 9] = [0.0, 0.55, 0.9, 0.3, 0.7, 0.45, 0.6, 0.2, 0.8];

pub fn paint_value(label: u32) -> f64 {
    PAINT_LUT.get(label as usize).copied().unwrap_or(1.0)
}

/// Paint a label volume with [`PAINT_LUT`].
pub fn paint(labels: &Volume3D) -> Volume3D {
    Volume3D::new(
        labels.dims(),
        labels.spacing(),
        VolumeKind::Intensity,
        labels.data().iter().map(|&l| paint_value(l as u32)).collect(),
    )
    .expect("same shape")
}
