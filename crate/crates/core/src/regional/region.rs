use serde::{Deserialize, Serialize};

use super::grid::{ThresholdGrid, N_LEVELS};
use crate::error::{Error, Result};
use crate::features::{CellFeatureDB, N_CELL_FEATURES};
use crate::geometry::Region;

pub const N_CDF_ENTRIES: usize = N_CELL_FEATURES * N_LEVELS;
/// 20 × 99 CDF values, then density, then area ratio.
pub const REGION_FEATURE_LEN: usize = N_CDF_ENTRIES + 2;
pub const DENSITY_INDEX: usize = N_CDF_ENTRIES;
pub const AREA_RATIO_INDEX: usize = N_CDF_ENTRIES + 1;
pub const DEFAULT_MIN_CELLS: usize = 5;

#[inline]
pub fn cdf_index(feature: usize, level: usize) -> usize {
    feature * N_LEVELS + level
}

/// Readable name of any flat region-feature index.
pub fn region_feature_name(grid: &ThresholdGrid, index: usize) -> String {
    match index {
        DENSITY_INDEX => "density".to_string(),
        AREA_RATIO_INDEX => "area_ratio".to_string(),
        i => grid.entry_name(i / N_LEVELS, i % N_LEVELS),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatureVector {
    /// `cdf[cdf_index(j, k)]`: fraction of region cells with feature `j` at or below threshold `k`.
    pub cdf: Vec<f64>,
    /// Cells per mm² (per pixel when the section has no resolution).
    pub density: f64,
    pub area_ratio: f64,
    pub cell_count: usize,
    /// Fewer than the minimum number of cells.
    pub low_support: bool,
}

impl RegionFeatureVector {
    pub fn empty() -> Self {
        Self {
            cdf: vec![0.0; N_CDF_ENTRIES],
            density: 0.0,
            area_ratio: 0.0,
            cell_count: 0,
            low_support: true,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.cdf.clone();
        v.push(self.density);
        v.push(self.area_ratio);
        v
    }
}

/// Summarizes the cells whose centroids fall in `region`.
///
/// Cell areas count only the pixels inside the region. Regions with fewer than
/// `min_cells` cells are still summarized, but flagged.
pub fn region_feature(
    db: &CellFeatureDB,
    section_id: &str,
    region: &Region,
    grid: &ThresholdGrid,
    min_cells: usize,
) -> Result<RegionFeatureVector> {
    let pixel_area = region.pixel_area();
    if pixel_area == 0 {
        return Err(Error::invalid("region covers no pixels"));
    }
    let rows = db.query(section_id, region);
    if rows.is_empty() {
        return Ok(RegionFeatureVector::empty());
    }
    let n = rows.len() as f64;
    let mut cdf = vec![0.0; N_CDF_ENTRIES];
    let mut values = Vec::with_capacity(rows.len());
    for j in 0..N_CELL_FEATURES {
        values.clear();
        values.extend(rows.iter().map(|&r| db.feature(r, j)));
        values.sort_by(f64::total_cmp);
        for k in 0..N_LEVELS {
            let t = grid.threshold(j, k);
            let at_or_below = values.partition_point(|&v| v <= t);
            cdf[cdf_index(j, k)] = at_or_below as f64 / n;
        }
    }

    let mut covered = 0usize;
    for &r in &rows {
        for (row, col, len) in db.runs(r) {
            covered += (col..col + len).filter(|&c| region.contains_pixel(row, c)).count();
        }
    }

    let resolution = db.section(section_id).and_then(|s| s.resolution);
    let area_units = match resolution {
        Some(um) if um > 0.0 => pixel_area as f64 * (um / 1000.0).powi(2),
        _ => pixel_area as f64,
    };
    Ok(RegionFeatureVector {
        cdf,
        density: n / area_units,
        area_ratio: (covered as f64 / pixel_area as f64).min(1.0),
        cell_count: rows.len(),
        low_support: rows.len() < min_cells,
    })
}
