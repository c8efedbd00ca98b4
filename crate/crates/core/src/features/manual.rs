use serde::{Deserialize, Serialize};

use crate::imaging::{CellPatch, CellSegment, SectionImage};

/// The ten hand-designed shape and intensity descriptors of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManualFeatures {
    pub width: f64,
    pub height: f64,
    pub area: f64,
    pub rotation_angle: f64,
    pub rotation_confidence: f64,
    pub intensity_mean: f64,
    pub intensity_std: f64,
    /// Nonzero pixels in the normalized patch.
    pub patch_size: f64,
    pub coord_std_horizontal: f64,
    pub coord_std_vertical: f64,
}

impl ManualFeatures {
    pub const LEN: usize = 10;

    pub fn to_array(&self) -> [f64; Self::LEN] {
        [
            self.width,
            self.height,
            self.area,
            self.rotation_angle,
            self.rotation_confidence,
            self.intensity_mean,
            self.intensity_std,
            self.patch_size,
            self.coord_std_horizontal,
            self.coord_std_vertical,
        ]
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Width/height come from the segment's bbox, intensities from the section
/// pixels under the segment, and the coordinate spreads from the normalized
/// patch support. Standard deviations are population (divide by n).
pub fn manual_features(image: &SectionImage, segment: &CellSegment, patch: &CellPatch) -> ManualFeatures {
    let (intensity_mean, intensity_std) = mean_std(
        segment
            .pixel_coords
            .iter()
            .map(|&(r, c)| image.get(r as usize, c as usize) as f64),
    );
    let support = patch.support();
    let (_, coord_std_vertical) = mean_std(support.iter().map(|p| p.0));
    let (_, coord_std_horizontal) = mean_std(support.iter().map(|p| p.1));
    ManualFeatures {
        width: segment.bbox_width() as f64,
        height: segment.bbox_height() as f64,
        area: segment.area as f64,
        rotation_angle: patch.rotation_angle,
        rotation_confidence: patch.rotation_confidence,
        intensity_mean,
        intensity_std,
        patch_size: support.len() as f64,
        coord_std_horizontal,
        coord_std_vertical,
    }
}
