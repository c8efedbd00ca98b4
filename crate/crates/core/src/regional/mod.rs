//! Region summaries: per-feature cell CDFs sampled on a global threshold grid,
//! plus density and area ratio, over tiles or user polygons.

mod dataset;
mod grid;
mod region;
mod tiles;

pub use dataset::{regionize, RegionDataset, TilingParams};
pub use grid::{fit_threshold_grid, quantile_sorted, ThresholdGrid, MIN_GRID_CELLS, N_LEVELS};
pub use region::{
    cdf_index, region_feature, region_feature_name, RegionFeatureVector, AREA_RATIO_INDEX, DEFAULT_MIN_CELLS,
    DENSITY_INDEX, N_CDF_ENTRIES, REGION_FEATURE_LEN,
};
pub use tiles::{
    covered_pixels, label_tile, label_tiles, load_annotations, save_annotations, tile_grid, tile_section,
    validate_annotations, StructureAnnotation, Tile, DEFAULT_MAP_STRIDE, DEFAULT_TILE_SIDE, DEFAULT_TRAIN_STRIDE,
};
