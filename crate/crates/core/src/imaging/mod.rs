//! Section images, segmentation and cell patches.

mod components;
mod image;
mod patch;
mod synth;
mod threshold;

use serde::{Deserialize, Serialize};

pub use components::{
    connected_components, read_segments_ndjson, write_segments_ndjson, CellSegment, DEFAULT_MAX_AREA,
    DEFAULT_MIN_AREA,
};
pub use image::{BinaryMask, SectionImage};
pub use patch::{
    extract_patch, normalize_rotation, principal_orientation, CellPatch, MaskedCell, Orientation,
    DEFAULT_PATCH_SIZE, MIN_PATCH_SIZE,
};
pub use synth::{fixture_outline, generate_synthetic_section, EllipseTruth, GroundTruth, PopulationConfig, RegionTruth, SynthConfig};
pub use threshold::{adaptive_threshold, gaussian_kernel, local_gaussian_mean, DEFAULT_BLOCK_SIZE, DEFAULT_C};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentParams {
    pub block_size: usize,
    pub c: f64,
    pub min_area: usize,
    pub max_area: usize,
    /// Invert intensities first, for bright-on-dark (fluorescence) sections.
    pub invert: bool,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            c: DEFAULT_C,
            min_area: DEFAULT_MIN_AREA,
            max_area: DEFAULT_MAX_AREA,
            invert: false,
        }
    }
}

/// Threshold + label. Returns the image the segments refer to (inverted when
/// `params.invert`), so patches and intensity features share one polarity.
pub fn segment_section(image: &SectionImage, params: &SegmentParams) -> Result<(SectionImage, Vec<CellSegment>)> {
    let work = if params.invert { image.inverted() } else { image.clone() };
    let mask = adaptive_threshold(&work, params.block_size, params.c)?;
    let segments = connected_components(&mask, &work.section_id, params.min_area, params.max_area)?;
    Ok((work, segments))
}
