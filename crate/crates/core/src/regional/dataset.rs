use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::ThresholdGrid;
use super::region::{region_feature, region_feature_name, REGION_FEATURE_LEN};
use super::tiles::{label_tiles, tile_grid, StructureAnnotation, Tile};
use crate::binfmt::{flatten, unflatten, ArrayData, Container};
use crate::error::{Error, Result};
use crate::features::CellFeatureDB;

const KIND: &str = "region_dataset";

/// Tiling parameters shared by training and map rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilingParams {
    pub side: usize,
    pub stride: usize,
    pub min_cells: usize,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self {
            side: super::tiles::DEFAULT_TILE_SIDE,
            stride: super::tiles::DEFAULT_TRAIN_STRIDE,
            min_cells: super::region::DEFAULT_MIN_CELLS,
        }
    }
}

/// Region-feature matrix over labeled tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionDataset {
    /// Structures with a label column, sorted.
    pub structures: Vec<String>,
    pub tiles: Vec<Tile>,
    /// One 1982-long row per tile.
    pub features: Vec<Vec<f64>>,
    pub cell_counts: Vec<usize>,
    pub low_support: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    structures: Vec<String>,
    sections: Vec<String>,
    n_tiles: usize,
}

impl RegionDataset {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn labels(&self, structure: &str) -> Result<Vec<bool>> {
        if !self.structures.iter().any(|s| s == structure) {
            return Err(Error::invalid(format!(
                "no labels for structure `{structure}` (known: {})",
                self.structures.join(", ")
            )));
        }
        Ok(self.tiles.iter().map(|t| t.labels.get(structure).copied().unwrap_or(false)).collect())
    }

    /// Rows whose tile lies in one of `sections`.
    pub fn rows_in_sections(&self, sections: &[&str]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| sections.contains(&self.tiles[i].section_id.as_str()))
            .collect()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut sections: Vec<String> = Vec::new();
        for t in &self.tiles {
            if !sections.contains(&t.section_id) {
                sections.push(t.section_id.clone());
            }
        }
        let header = Header {
            structures: self.structures.clone(),
            sections: sections.clone(),
            n_tiles: self.len(),
        };
        let mut c = Container::new(KIND, header)?;
        let section_of = |t: &Tile| sections.iter().position(|s| *s == t.section_id).unwrap() as u32;
        c.push("tile_section", ArrayData::U32(self.tiles.iter().map(section_of).collect()));
        c.push("tile_row", ArrayData::U64(self.tiles.iter().map(|t| t.origin.0 as u64).collect()));
        c.push("tile_col", ArrayData::U64(self.tiles.iter().map(|t| t.origin.1 as u64).collect()));
        c.push("tile_side", ArrayData::U64(self.tiles.iter().map(|t| t.side as u64).collect()));
        let mut labels = Vec::with_capacity(self.len() * self.structures.len());
        for t in &self.tiles {
            labels.extend(self.structures.iter().map(|s| t.labels.get(s).copied().unwrap_or(false) as u32));
        }
        c.push("labels", ArrayData::U32(labels));
        c.push("cell_counts", ArrayData::U64(self.cell_counts.iter().map(|&n| n as u64).collect()));
        c.push("low_support", ArrayData::U32(self.low_support.iter().map(|&f| f as u32).collect()));
        c.push("features", ArrayData::F64(flatten(&self.features)));
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(KIND)?;
        let h: Header = c.meta()?;
        let n = h.n_tiles;
        let (sec, rows, cols, sides) = (c.u32s("tile_section")?, c.u64s("tile_row")?, c.u64s("tile_col")?, c.u64s("tile_side")?);
        let labels = c.u32s("labels")?;
        let counts = c.u64s("cell_counts")?;
        let flags = c.u32s("low_support")?;
        let features = unflatten(c.f64s("features")?, REGION_FEATURE_LEN)?;
        let ns = h.structures.len();
        if [sec.len(), rows.len(), cols.len(), sides.len(), counts.len(), flags.len(), features.len()]
            .iter()
            .any(|&l| l != n)
            || labels.len() != n * ns
            || sec.iter().any(|&s| s as usize >= h.sections.len())
        {
            return Err(Error::format("<region dataset>", "array shapes disagree with header"));
        }
        let tiles = (0..n)
            .map(|i| Tile {
                section_id: h.sections[sec[i] as usize].clone(),
                origin: (rows[i] as usize, cols[i] as usize),
                side: sides[i] as usize,
                labels: h
                    .structures
                    .iter()
                    .enumerate()
                    .map(|(s, name)| (name.clone(), labels[i * ns + s] != 0))
                    .collect::<BTreeMap<_, _>>(),
            })
            .collect();
        Ok(Self {
            structures: h.structures,
            tiles,
            features,
            cell_counts: counts.iter().map(|&v| v as usize).collect(),
            low_support: flags.iter().map(|&v| v != 0).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    /// One row per tile: geometry, labels, flags, then all named features.
    pub fn write_csv<W: Write>(&self, grid: &ThresholdGrid, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["section_id", "row", "col", "side", "cell_count", "low_support"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(self.structures.iter().map(|s| format!("label:{s}")));
        header.extend((0..REGION_FEATURE_LEN).map(|i| region_feature_name(grid, i)));
        out.write_record(&header)?;
        for (i, t) in self.tiles.iter().enumerate() {
            let mut rec = vec![
                t.section_id.clone(),
                t.origin.0.to_string(),
                t.origin.1.to_string(),
                t.side.to_string(),
                self.cell_counts[i].to_string(),
                (self.low_support[i] as u8).to_string(),
            ];
            rec.extend(self.structures.iter().map(|s| (t.labels.get(s).copied().unwrap_or(false) as u8).to_string()));
            rec.extend(self.features[i].iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tiles every section of `db`, labels tiles against `annotations` and
/// computes their region features.
pub fn regionize(
    db: &CellFeatureDB,
    grid: &ThresholdGrid,
    annotations: &[StructureAnnotation],
    tiling: TilingParams,
) -> Result<RegionDataset> {
    super::tiles::validate_annotations(annotations)?;
    let mut tiles = Vec::new();
    for s in db.sections() {
        tiles.extend(tile_grid(&s.section_id, s.width, s.height, tiling.side, tiling.stride)?);
    }
    label_tiles(&mut tiles, annotations);
    let structures: Vec<String> = annotations
        .iter()
        .map(|a| a.structure.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut features = Vec::with_capacity(tiles.len());
    let mut cell_counts = Vec::with_capacity(tiles.len());
    let mut low_support = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let f = region_feature(db, &t.section_id, &t.region(), grid, tiling.min_cells)?;
        cell_counts.push(f.cell_count);
        low_support.push(f.low_support);
        features.push(f.to_vec());
    }
    Ok(RegionDataset {
        structures,
        tiles,
        features,
        cell_counts,
        low_support,
    })
}
