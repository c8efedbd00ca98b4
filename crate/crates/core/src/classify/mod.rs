//! One-vs-rest boosted structure detectors over region features, their
//! evaluation, probability maps and explanations.

mod auc;
mod boost;
mod explain;
mod importance;
mod plot;
mod probmap;

pub use auc::{roc_auc, roc_curve};
pub use boost::{
    grow_tree, log_loss, logistic_loss, loss_curve, presort, sigmoid, train_detector, BoostParams, BoostedModel, Tree,
    MODEL_FORMAT, MODEL_VERSION,
};
pub use explain::{
    cdf_comparison, explain_highlight, highlight_cells, render_overlay, CdfComparison, Highlight, DEFAULT_HIGH_MARGIN,
    DEFAULT_LOW_MARGIN, TINT, TINT_ALPHA,
};
pub use importance::{feature_family, feature_importance, ImportanceEntry, ImportanceReport};
pub use plot::{render_roc, write_roc_csv};
pub use probmap::{probability_map, ProbabilityMap, TileScore};

use crate::error::{Error, Result};
use crate::regional::{region_feature_name, RegionDataset, ThresholdGrid, REGION_FEATURE_LEN};

/// Feature rows and labels of the dataset rows usable for training a
/// detector of `structure`: low-support tiles are dropped.
pub fn training_set(dataset: &RegionDataset, structure: &str, rows: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let labels = dataset.labels(structure)?;
    let keep: Vec<usize> = rows.iter().copied().filter(|&i| !dataset.low_support[i]).collect();
    Ok((
        keep.iter().map(|&i| dataset.features[i].clone()).collect(),
        keep.iter().map(|&i| labels[i]).collect(),
    ))
}

/// Trains the detector for `structure` and attaches readable feature names.
pub fn train_structure_detector(
    dataset: &RegionDataset,
    grid: &ThresholdGrid,
    structure: &str,
    rows: &[usize],
    params: &BoostParams,
) -> Result<BoostedModel> {
    let (x, y) = training_set(dataset, structure, rows)?;
    if x.is_empty() {
        return Err(Error::EmptyInput(format!("no supported tiles to train `{structure}`")));
    }
    let names = (0..REGION_FEATURE_LEN).map(|i| region_feature_name(grid, i)).collect();
    train_detector(&x, &y, params)?.with_feature_names(names)
}
