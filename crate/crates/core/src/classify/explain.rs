use std::collections::BTreeSet;
use std::io::Write;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::probmap::ProbabilityMap;
use crate::error::{Error, Result};
use crate::features::{feature_index, CellFeatureDB};
use crate::geometry::{Rect, Region};
use crate::imaging::SectionImage;
use crate::regional::ThresholdGrid;

pub const TINT: [u8; 3] = [139, 0, 0];
pub const TINT_ALPHA: f64 = 0.6;
pub const DEFAULT_HIGH_MARGIN: f64 = 1.0;
pub const DEFAULT_LOW_MARGIN: f64 = -1.0;

/// Rows of `section_id` whose `feature` lies in `[lo, hi]`.
pub fn highlight_cells(db: &CellFeatureDB, section_id: &str, feature: &str, lo: f64, hi: f64) -> Result<Vec<usize>> {
    let j = feature_index(feature)?;
    if lo.is_nan() || hi.is_nan() {
        return Err(Error::invalid("highlight range must not be NaN"));
    }
    Ok(db
        .rows_in_section(section_id)
        .into_iter()
        .filter(|&r| {
            let v = db.feature(r, j);
            v >= lo && v <= hi
        })
        .collect())
}

/// The section in gray with the pixels of `rows` blended toward dark red.
pub fn render_overlay(image: &SectionImage, db: &CellFeatureDB, rows: &[usize]) -> RgbaImage {
    let mut out = RgbaImage::from_fn(image.width as u32, image.height as u32, |c, r| {
        let v = image.get(r as usize, c as usize);
        Rgba([v, v, v, 255])
    });
    let blend = |base: u8, tint: u8| ((1.0 - TINT_ALPHA) * base as f64 + TINT_ALPHA * tint as f64).round() as u8;
    for &row in rows {
        for (r, c0, len) in db.runs(row) {
            for c in c0..c0 + len {
                if (r as usize) < image.height && (c as usize) < image.width {
                    let px = out.get_pixel_mut(c, r);
                    for (ch, &tint) in px.0.iter_mut().zip(&TINT) {
                        *ch = blend(*ch, tint);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub section_id: String,
    pub feature: String,
    pub range: (f64, f64),
    pub rows: Vec<usize>,
    pub total_cells: usize,
}

/// Tints the cells whose `feature` lies in `[lo, hi]`.
pub fn explain_highlight(
    image: &SectionImage,
    db: &CellFeatureDB,
    feature: &str,
    lo: f64,
    hi: f64,
) -> Result<(Highlight, RgbaImage)> {
    let rows = highlight_cells(db, &image.section_id, feature, lo, hi)?;
    let overlay = render_overlay(image, db, &rows);
    let h = Highlight {
        section_id: image.section_id.clone(),
        feature: feature.to_string(),
        range: (lo, hi),
        total_cells: db.rows_in_section(&image.section_id).len(),
        rows,
    };
    Ok((h, overlay))
}

/// Empirical CDFs of one cell feature in high- and low-margin tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfComparison {
    pub feature: String,
    pub thresholds: Vec<f64>,
    pub high: Vec<f64>,
    pub low: Vec<f64>,
    pub high_tiles: usize,
    pub low_tiles: usize,
    pub high_cells: usize,
    pub low_cells: usize,
}

fn cells_in_tiles(db: &CellFeatureDB, map: &ProbabilityMap, keep: impl Fn(f64) -> bool) -> (usize, BTreeSet<usize>) {
    let mut rows = BTreeSet::new();
    let mut tiles = 0;
    for t in map.tiles.iter().filter(|t| !t.low_support && keep(t.margin)) {
        tiles += 1;
        let rect = Rect::new(t.origin.1 as f64, t.origin.0 as f64, map.side as f64, map.side as f64);
        rows.extend(db.query(&map.section_id, &Region::Rect(rect)));
    }
    (tiles, rows)
}

fn cdf_at(db: &CellFeatureDB, rows: &BTreeSet<usize>, j: usize, thresholds: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&r| db.feature(r, j)).collect();
    v.sort_by(f64::total_cmp);
    thresholds
        .iter()
        .map(|&t| {
            if v.is_empty() {
                0.0
            } else {
                v.partition_point(|&x| x <= t) as f64 / v.len() as f64
            }
        })
        .collect()
}

/// Pools the cells of tiles with margin `> high_margin` and `< low_margin`
/// and samples each pool's CDF of `feature` on the grid thresholds.
pub fn cdf_comparison(
    db: &CellFeatureDB,
    grid: &ThresholdGrid,
    map: &ProbabilityMap,
    feature: &str,
    high_margin: f64,
    low_margin: f64,
) -> Result<CdfComparison> {
    let j = feature_index(feature)?;
    let thresholds = grid.thresholds[j].clone();
    let (high_tiles, high_rows) = cells_in_tiles(db, map, |m| m > high_margin);
    let (low_tiles, low_rows) = cells_in_tiles(db, map, |m| m < low_margin);
    Ok(CdfComparison {
        feature: feature.to_string(),
        high: cdf_at(db, &high_rows, j, &thresholds),
        low: cdf_at(db, &low_rows, j, &thresholds),
        thresholds,
        high_tiles,
        low_tiles,
        high_cells: high_rows.len(),
        low_cells: low_rows.len(),
    })
}

impl CdfComparison {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["level", "threshold", "cdf_high", "cdf_low"])?;
        for k in 0..self.thresholds.len() {
            out.write_record([
                format!("{}", k + 1),
                self.thresholds[k].to_string(),
                self.high[k].to_string(),
                self.low[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
