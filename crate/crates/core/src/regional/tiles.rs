use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polygon, Rect, Region};
use crate::imaging::SectionImage;

pub const DEFAULT_TILE_SIDE: usize = 224;
pub const DEFAULT_TRAIN_STRIDE: usize = 224;
pub const DEFAULT_MAP_STRIDE: usize = 112;

/// Square window of a section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub section_id: String,
    /// `(row, col)` of the top-left pixel.
    pub origin: (usize, usize),
    pub side: usize,
    #[serde(default)]
    pub labels: BTreeMap<String, bool>,
}

impl Tile {
    pub fn region(&self) -> Region {
        Region::Rect(self.rect())
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.origin.1 as f64, self.origin.0 as f64, self.side as f64, self.side as f64)
    }
}

/// Row-major sliding-window tiling of a `width × height` section.
pub fn tile_grid(section_id: &str, width: usize, height: usize, side: usize, stride: usize) -> Result<Vec<Tile>> {
    if side == 0 || stride == 0 {
        return Err(Error::invalid("tile side and stride must be >= 1"));
    }
    if side > width || side > height {
        return Err(Error::invalid(format!(
            "tile side {side} exceeds section {width}×{height}"
        )));
    }
    let rows = (height - side) / stride + 1;
    let cols = (width - side) / stride + 1;
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            tiles.push(Tile {
                section_id: section_id.to_string(),
                origin: (r * stride, c * stride),
                side,
                labels: BTreeMap::new(),
            });
        }
    }
    Ok(tiles)
}

pub fn tile_section(section: &SectionImage, side: usize, stride: usize) -> Result<Vec<Tile>> {
    tile_grid(&section.section_id, section.width, section.height, side, stride)
}

/// An annotated structure outline in one section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureAnnotation {
    pub section_id: String,
    pub structure: String,
    pub polygon: Polygon,
}

/// Loads `[{section_id, structure, polygon: [[x, y], …]}, …]`.
pub fn load_annotations(path: &Path) -> Result<Vec<StructureAnnotation>> {
    let anns: Vec<StructureAnnotation> = serde_json::from_slice(&std::fs::read(path)?)?;
    validate_annotations(&anns).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(anns)
}

pub fn save_annotations(path: &Path, anns: &[StructureAnnotation]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(anns)?)?;
    Ok(())
}

pub fn validate_annotations(anns: &[StructureAnnotation]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for a in anns {
        a.polygon
            .validate()
            .map_err(|e| Error::invalid(format!("{} in {}: {e}", a.structure, a.section_id)))?;
        if !seen.insert((a.section_id.as_str(), a.structure.as_str())) {
            return Err(Error::invalid(format!(
                "structure `{}` annotated twice in section `{}`",
                a.structure, a.section_id
            )));
        }
    }
    Ok(())
}

/// Pixels of the tile whose centers fall inside the polygon.
pub fn covered_pixels(tile: &Tile, polygon: &Polygon) -> usize {
    let (x0, y0, x1, y1) = polygon.bounds();
    let r0 = tile.origin.0.max(y0.floor().max(0.0) as usize);
    let c0 = tile.origin.1.max(x0.floor().max(0.0) as usize);
    let r1 = (tile.origin.0 + tile.side).min(y1.ceil().max(0.0) as usize);
    let c1 = (tile.origin.1 + tile.side).min(x1.ceil().max(0.0) as usize);
    let mut n = 0;
    for r in r0..r1 {
        for c in c0..c1 {
            if polygon.contains(c as f64 + 0.5, r as f64 + 0.5) {
                n += 1;
            }
        }
    }
    n
}

/// Positive iff strictly more than half the tile lies inside the structure.
pub fn label_tile(tile: &Tile, annotation: &StructureAnnotation) -> bool {
    if tile.section_id != annotation.section_id {
        return false;
    }
    2 * covered_pixels(tile, &annotation.polygon) > tile.side * tile.side
}

/// Fills `tile.labels` for every structure named in `annotations`; tiles in
/// sections without an outline of a structure are negative for it.
pub fn label_tiles(tiles: &mut [Tile], annotations: &[StructureAnnotation]) {
    let structures: std::collections::BTreeSet<&str> = annotations.iter().map(|a| a.structure.as_str()).collect();
    for tile in tiles.iter_mut() {
        for s in &structures {
            let positive = annotations
                .iter()
                .filter(|a| a.structure == *s)
                .any(|a| label_tile(tile, a));
            tile.labels.insert(s.to_string(), positive);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn tile_counts() {
        assert_eq!(tile_grid("s", 224, 224, 224, 224).unwrap().len(), 1);
        assert_eq!(tile_grid("s", 224, 224, 224, 1).unwrap().len(), 1);
        assert_eq!(tile_grid("s", 448, 448, 224, 224).unwrap().len(), 4);
        assert!(tile_grid("s", 200, 300, 224, 224).is_err());
        assert!(tile_grid("s", 300, 300, 224, 0).is_err());
    }

    #[test]
    fn random_tilings_match_formula_and_stay_in_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = rng.random_range(10..400);
            let h = rng.random_range(10..400);
            let side = rng.random_range(1..=w.min(h));
            let stride = rng.random_range(1..60);
            let tiles = tile_grid("s", w, h, side, stride).unwrap();
            let expected = ((h - side) / stride + 1) * ((w - side) / stride + 1);
            assert_eq!(tiles.len(), expected);
            // enumeration oracle
            let mut count = 0;
            let mut r = 0;
            while r + side <= h {
                let mut c = 0;
                while c + side <= w {
                    count += 1;
                    c += stride;
                }
                r += stride;
            }
            assert_eq!(count, expected);
            assert!(tiles.iter().all(|t| t.origin.0 + side <= h && t.origin.1 + side <= w));
        }
    }

    fn ann(poly: Vec<[f64; 2]>) -> StructureAnnotation {
        StructureAnnotation {
            section_id: "s".into(),
            structure: "X".into(),
            polygon: Polygon::new(poly).unwrap(),
        }
    }

    fn tile(r: usize, c: usize, side: usize) -> Tile {
        Tile {
            section_id: "s".into(),
            origin: (r, c),
            side,
            labels: BTreeMap::new(),
        }
    }

    #[test]
    fn inside_outside_and_exact_half() {
        let big = ann(vec![[0.0, 0.0], [1000.0, 0.0], [1000.0, 1000.0], [0.0, 1000.0]]);
        assert!(label_tile(&tile(100, 100, 224), &big));
        assert!(!label_tile(&tile(1000, 1000, 224), &big));
        // covers the left half of a 224 tile at the origin
        let half = ann(vec![[0.0, 0.0], [112.0, 0.0], [112.0, 224.0], [0.0, 224.0]]);
        let t = tile(0, 0, 224);
        let mut brute = 0;
        for r in 0..224 {
            for c in 0..224 {
                if half.polygon.contains(c as f64 + 0.5, r as f64 + 0.5) {
                    brute += 1;
                }
            }
        }
        assert_eq!(brute, 224 * 112);
        assert_eq!(covered_pixels(&t, &half.polygon), brute);
        assert!(!label_tile(&t, &half));
        let just_over = ann(vec![[0.0, 0.0], [113.0, 0.0], [113.0, 224.0], [0.0, 224.0]]);
        assert!(label_tile(&t, &just_over));
    }

    #[test]
    fn triangle_label_agrees_with_rasterization() {
        let tri = ann(vec![[0.0, 0.0], [300.0, 20.0], [40.0, 260.0]]);
        for (r, c) in [(0, 0), (10, 10), (50, 60), (100, 0)] {
            let t = tile(r, c, 100);
            let mut brute = 0;
            for rr in r..r + 100 {
                for cc in c..c + 100 {
                    if tri.polygon.contains(cc as f64 + 0.5, rr as f64 + 0.5) {
                        brute += 1;
                    }
                }
            }
            assert_eq!(label_tile(&t, &tri), brute * 2 > 100 * 100);
        }
    }

    #[test]
    fn duplicate_annotations_rejected() {
        let a = ann(vec![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]]);
        assert!(validate_annotations(&[a.clone(), a]).is_err());
    }
}
