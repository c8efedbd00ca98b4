use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::boost::BoostedModel;
use crate::error::{Error, Result};
use crate::features::{CellFeatureDB, SectionMeta};
use crate::regional::{region_feature, tile_grid, ThresholdGrid, TilingParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileScore {
    /// `(row, col)` of the tile's top-left pixel.
    pub origin: (usize, usize),
    pub margin: f64,
    pub probability: f64,
    pub cell_count: usize,
    pub low_support: bool,
}

/// Per-tile detector output over one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub section_id: String,
    pub width: usize,
    pub height: usize,
    pub side: usize,
    pub stride: usize,
    pub tiles: Vec<TileScore>,
}

impl ProbabilityMap {
    /// Probability used for display: 0 on low-support tiles.
    pub fn display_probability(t: &TileScore) -> f64 {
        if t.low_support {
            0.0
        } else {
            t.probability
        }
    }

    /// Mean of the covering tiles' display probabilities at every pixel.
    pub fn pixel_probabilities(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.width * self.height];
        let mut hits = vec![0u32; self.width * self.height];
        for t in &self.tiles {
            let p = Self::display_probability(t);
            for r in t.origin.0..t.origin.0 + self.side {
                let row = r * self.width;
                for c in t.origin.1..t.origin.1 + self.side {
                    sum[row + c] += p;
                    hits[row + c] += 1;
                }
            }
        }
        sum.iter()
            .zip(&hits)
            .map(|(&s, &h)| if h == 0 { 0.0 } else { s / h as f64 })
            .collect()
    }

    /// 8-bit grayscale, linear in probability.
    pub fn render(&self) -> GrayImage {
        let probs = self.pixel_probabilities();
        GrayImage::from_fn(self.width as u32, self.height as u32, |c, r| {
            let p = probs[r as usize * self.width + c as usize];
            Luma([(p * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    /// Writes `<stem>.png` and the `<stem>.json` sidecar.
    pub fn save(&self, png: &Path, json: &Path) -> Result<()> {
        self.render().save(png)?;
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(json, bytes)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn score_at(&self, origin: (usize, usize)) -> Option<&TileScore> {
        self.tiles.iter().find(|t| t.origin == origin)
    }
}

/// Scores every tile of a section with `model`.
pub fn probability_map(
    section: &SectionMeta,
    db: &CellFeatureDB,
    grid: &ThresholdGrid,
    model: &BoostedModel,
    tiling: TilingParams,
) -> Result<ProbabilityMap> {
    if model.n_features != crate::regional::REGION_FEATURE_LEN {
        return Err(Error::DimensionMismatch {
            expected: crate::regional::REGION_FEATURE_LEN,
            actual: model.n_features,
        });
    }
    let tiles = tile_grid(&section.section_id, section.width, section.height, tiling.side, tiling.stride)?;
    let scores = tiles
        .iter()
        .map(|t| {
            let f = region_feature(db, &section.section_id, &t.region(), grid, tiling.min_cells)?;
            let margin = model.predict_margin(&f.to_vec())?;
            Ok(TileScore {
                origin: t.origin,
                margin,
                probability: super::boost::sigmoid(margin),
                cell_count: f.cell_count,
                low_support: f.low_support,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbabilityMap {
        section_id: section.section_id.clone(),
        width: section.width,
        height: section.height,
        side: tiling.side,
        stride: tiling.stride,
        tiles: scores,
    })
}
