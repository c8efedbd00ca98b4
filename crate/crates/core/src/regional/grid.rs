use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CellFeatureDB, FEATURE_NAMES, N_CELL_FEATURES};

/// Quantile levels per feature: 1%, 2%, …, 99%.
pub const N_LEVELS: usize = 99;
pub const MIN_GRID_CELLS: usize = 100;

/// Global per-feature thresholds at which region CDFs are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub feature_names: Vec<String>,
    /// `thresholds[j][k]`: level `(k + 1)%` quantile of feature `j`.
    pub thresholds: Vec<Vec<f64>>,
}

/// Linear-interpolated empirical quantile of sorted data (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ThresholdGrid {
    /// Builds the grid from per-feature value columns.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        if columns.len() != N_CELL_FEATURES {
            return Err(Error::DimensionMismatch {
                expected: N_CELL_FEATURES,
                actual: columns.len(),
            });
        }
        let n = columns[0].len();
        if n < MIN_GRID_CELLS {
            return Err(Error::invalid(format!(
                "threshold grid needs at least {MIN_GRID_CELLS} cells, got {n}"
            )));
        }
        let thresholds = columns
            .iter()
            .map(|col| {
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite feature value"));
                }
                let mut sorted = col.to_vec();
                sorted.sort_by(f64::total_cmp);
                Ok((1..=N_LEVELS).map(|k| quantile_sorted(&sorted, k as f64 / 100.0)).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(Self {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            thresholds,
        })
    }

    pub fn threshold(&self, feature: usize, level: usize) -> f64 {
        self.thresholds[feature][level]
    }

    /// Readable name of a flat CDF entry, e.g. `rotation–11.3`.
    pub fn entry_name(&self, feature: usize, level: usize) -> String {
        format!("{}–{:.1}", self.feature_names[feature], self.thresholds[feature][level])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let grid: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if grid.thresholds.len() != N_CELL_FEATURES || grid.thresholds.iter().any(|t| t.len() != N_LEVELS) {
            return Err(Error::format(path, "threshold grid must be 20 × 99"));
        }
        Ok(grid)
    }
}

/// Quantile grid over every cell in the database.
pub fn fit_threshold_grid(db: &CellFeatureDB) -> Result<ThresholdGrid> {
    let cols: Vec<&[f64]> = (0..N_CELL_FEATURES).map(|j| db.column(j)).collect();
    ThresholdGrid::from_columns(&cols)
}
