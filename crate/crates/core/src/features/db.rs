//! Columnar store of per-cell feature vectors with a centroid grid index.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::affine::AffineMap;
use super::diffusion::{DiffusionModel, EMBED_DIM};
use super::manual::{manual_features, ManualFeatures};
use super::{FEATURE_NAMES, N_CELL_FEATURES};
use crate::binfmt::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::geometry::Region;
use crate::imaging::{extract_patch, CellSegment, SectionImage};

const DB_KIND: &str = "cell_feature_db";
const GRID_CELL: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionMeta {
    pub section_id: String,
    pub width: usize,
    pub height: usize,
    /// Micrometers per pixel.
    pub resolution: Option<f64>,
}

impl SectionMeta {
    pub fn of(image: &SectionImage) -> Self {
        Self {
            section_id: image.section_id.clone(),
            width: image.width,
            height: image.height,
            resolution: image.resolution,
        }
    }
}

/// One cell as handed to [`CellFeatureDB::insert`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellFeatureVector {
    pub cell_id: u64,
    pub section_id: String,
    pub centroid: (f64, f64),
    pub manual: ManualFeatures,
    /// Aligned diffusion coordinates.
    pub dm: [f64; EMBED_DIM],
}

impl CellFeatureVector {
    pub fn values(&self) -> [f64; N_CELL_FEATURES] {
        let mut out = [0.0; N_CELL_FEATURES];
        out[..ManualFeatures::LEN].copy_from_slice(&self.manual.to_array());
        out[ManualFeatures::LEN..].copy_from_slice(&self.dm);
        out
    }
}

#[derive(Debug, Clone, Default)]
struct GridIndex {
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
}

impl GridIndex {
    fn new(meta: &SectionMeta) -> Self {
        let cols = (meta.width as f64 / GRID_CELL).ceil() as usize + 1;
        let rows = (meta.height as f64 / GRID_CELL).ceil() as usize + 1;
        Self {
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn bucket_of(&self, x: f64, y: f64) -> (usize, usize) {
        let c = ((x / GRID_CELL).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((y / GRID_CELL).floor().max(0.0) as usize).min(self.rows - 1);
        (r, c)
    }

    fn insert(&mut self, x: f64, y: f64, row: u32) {
        let (r, c) = self.bucket_of(x, y);
        self.buckets[r * self.cols + c].push(row);
    }

    fn candidates(&self, bounds: (f64, f64, f64, f64)) -> impl Iterator<Item = u32> + '_ {
        let (r0, c0) = self.bucket_of(bounds.0, bounds.1);
        let (r1, c1) = self.bucket_of(bounds.2, bounds.3);
        (r0..=r1).flat_map(move |r| (c0..=c1).flat_map(move |c| self.buckets[r * self.cols + c].iter().copied()))
    }
}

/// All cells of one brain: 20 features per cell in the frozen global order.
#[derive(Debug, Clone, Default)]
pub struct CellFeatureDB {
    pub brain_id: String,
    pub alignment_id: Option<String>,
    sections: Vec<SectionMeta>,
    section_of: Vec<u32>,
    cell_ids: Vec<u64>,
    centroids: Vec<(f64, f64)>,
    columns: Vec<Vec<f64>>,
    run_offsets: Vec<u64>,
    runs: Vec<u32>,
    index: Vec<GridIndex>,
    keys: HashSet<(u32, u64)>,
}

impl PartialEq for CellFeatureDB {
    fn eq(&self, other: &Self) -> bool {
        self.brain_id == other.brain_id
            && self.alignment_id == other.alignment_id
            && self.sections == other.sections
            && self.section_of == other.section_of
            && self.cell_ids == other.cell_ids
            && self.centroids == other.centroids
            && self.columns == other.columns
            && self.run_offsets == other.run_offsets
            && self.runs == other.runs
    }
}

#[derive(Serialize, Deserialize)]
struct DbManifest {
    brain_id: String,
    alignment_id: Option<String>,
    feature_names: Vec<String>,
    sections: Vec<SectionMeta>,
    cells: usize,
}

impl CellFeatureDB {
    pub fn new(brain_id: impl Into<String>) -> Self {
        Self {
            brain_id: brain_id.into(),
            columns: vec![Vec::new(); N_CELL_FEATURES],
            run_offsets: vec![0],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_ids.is_empty()
    }

    pub fn sections(&self) -> &[SectionMeta] {
        &self.sections
    }

    pub fn section(&self, section_id: &str) -> Option<&SectionMeta> {
        self.sections.iter().find(|s| s.section_id == section_id)
    }

    fn section_index(&self, section_id: &str) -> Option<usize> {
        self.sections.iter().position(|s| s.section_id == section_id)
    }

    /// Registers a section; re-adding an identical one is a no-op.
    pub fn add_section(&mut self, meta: SectionMeta) -> Result<()> {
        if let Some(i) = self.section_index(&meta.section_id) {
            if self.sections[i] != meta {
                return Err(Error::invalid(format!("section `{}` registered twice with different metadata", meta.section_id)));
            }
            return Ok(());
        }
        self.index.push(GridIndex::new(&meta));
        self.sections.push(meta);
        Ok(())
    }

    pub fn insert(&mut self, cell: &CellFeatureVector, runs: &[(u32, u32, u32)]) -> Result<usize> {
        let si = self
            .section_index(&cell.section_id)
            .ok_or_else(|| Error::invalid(format!("unknown section `{}`", cell.section_id)))?;
        if !self.keys.insert((si as u32, cell.cell_id)) {
            return Err(Error::DuplicateCell {
                section_id: cell.section_id.clone(),
                cell_id: cell.cell_id,
            });
        }
        let row = self.cell_ids.len();
        self.section_of.push(si as u32);
        self.cell_ids.push(cell.cell_id);
        self.centroids.push(cell.centroid);
        for (col, v) in self.columns.iter_mut().zip(cell.values()) {
            col.push(v);
        }
        for &(r, c, l) in runs {
            self.runs.extend([r, c, l]);
        }
        self.run_offsets.push(self.runs.len() as u64);
        self.index[si].insert(cell.centroid.1 + 0.5, cell.centroid.0 + 0.5, row as u32);
        Ok(row)
    }

    pub fn cell_id(&self, row: usize) -> u64 {
        self.cell_ids[row]
    }

    pub fn section_id(&self, row: usize) -> &str {
        &self.sections[self.section_of[row] as usize].section_id
    }

    pub fn centroid(&self, row: usize) -> (f64, f64) {
        self.centroids[row]
    }

    pub fn feature(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn features(&self, row: usize) -> [f64; N_CELL_FEATURES] {
        std::array::from_fn(|j| self.columns[j][row])
    }

    /// Pixel runs `(row, col_start, len)` of the cell.
    pub fn runs(&self, row: usize) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let (a, b) = (self.run_offsets[row] as usize, self.run_offsets[row + 1] as usize);
        self.runs[a..b].chunks_exact(3).map(|c| (c[0], c[1], c[2]))
    }

    pub fn pixel_count(&self, row: usize) -> usize {
        self.runs(row).map(|r| r.2 as usize).sum()
    }

    /// Rows of cells whose centroid lies in `region`, ascending.
    pub fn query(&self, section_id: &str, region: &Region) -> Vec<usize> {
        let Some(si) = self.section_index(section_id) else {
            return Vec::new();
        };
        let mut rows: Vec<usize> = self.index[si]
            .candidates(region.bounds())
            .map(|r| r as usize)
            .filter(|&r| region.contains_centroid(self.centroids[r]))
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Linear scan equivalent of [`query`](Self::query).
    pub fn scan(&self, section_id: &str, region: &Region) -> Vec<usize> {
        let Some(si) = self.section_index(section_id) else {
            return Vec::new();
        };
        (0..self.len())
            .filter(|&r| self.section_of[r] as usize == si && region.contains_centroid(self.centroids[r]))
            .collect()
    }

    pub fn rows_in_section(&self, section_id: &str) -> Vec<usize> {
        match self.section_index(section_id) {
            Some(si) => (0..self.len()).filter(|&r| self.section_of[r] as usize == si).collect(),
            None => Vec::new(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let manifest = DbManifest {
            brain_id: self.brain_id.clone(),
            alignment_id: self.alignment_id.clone(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            sections: self.sections.clone(),
            cells: self.len(),
        };
        let mut c = Container::new(DB_KIND, manifest)?;
        c.push("section_of", ArrayData::U32(self.section_of.clone()));
        c.push("cell_id", ArrayData::U64(self.cell_ids.clone()));
        c.push("centroid_row", ArrayData::F64(self.centroids.iter().map(|c| c.0).collect()));
        c.push("centroid_col", ArrayData::F64(self.centroids.iter().map(|c| c.1).collect()));
        for (name, col) in FEATURE_NAMES.iter().zip(&self.columns) {
            c.push(name, ArrayData::F64(col.clone()));
        }
        c.push("run_offsets", ArrayData::U64(self.run_offsets.clone()));
        c.push("runs", ArrayData::U32(self.runs.clone()));
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != DB_KIND {
            return Err(Error::format("<db>", format!("expected `{DB_KIND}`, found `{}`", c.kind)));
        }
        let manifest: DbManifest = c.meta()?;
        let mut db = CellFeatureDB::new(manifest.brain_id);
        db.alignment_id = manifest.alignment_id;
        for s in manifest.sections {
            db.add_section(s)?;
        }
        let section_of = c.u32s("section_of")?;
        let ids = c.u64s("cell_id")?;
        let rows = c.f64s("centroid_row")?;
        let cols = c.f64s("centroid_col")?;
        let features: Vec<&[f64]> = FEATURE_NAMES.iter().map(|n| c.f64s(n)).collect::<Result<_>>()?;
        let offsets = c.u64s("run_offsets")?;
        let runs = c.u32s("runs")?;
        let n = manifest.cells;
        if ids.len() != n || section_of.len() != n || offsets.len() != n + 1 || features.iter().any(|f| f.len() != n) {
            return Err(Error::format("<db>", "column lengths disagree with manifest"));
        }
        for row in 0..n {
            let si = section_of[row] as usize;
            let section_id = db
                .sections
                .get(si)
                .ok_or_else(|| Error::format("<db>", "section index out of range"))?
                .section_id
                .clone();
            let vals: Vec<f64> = features.iter().map(|f| f[row]).collect();
            let cell = CellFeatureVector {
                cell_id: ids[row],
                section_id,
                centroid: (rows[row], cols[row]),
                manual: manual_from_slice(&vals[..ManualFeatures::LEN]),
                dm: vals[ManualFeatures::LEN..].try_into().unwrap(),
            };
            let r: Vec<(u32, u32, u32)> = runs[offsets[row] as usize..offsets[row + 1] as usize]
                .chunks_exact(3)
                .map(|c| (c[0], c[1], c[2]))
                .collect();
            db.insert(&cell, &r)?;
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// One row per cell: ids, centroid, then the 20 features.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["section_id".to_string(), "cell_id".into(), "centroid_row".into(), "centroid_col".into()];
        header.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        out.write_record(&header)?;
        for row in 0..self.len() {
            let mut rec = vec![
                self.section_id(row).to_string(),
                self.cell_ids[row].to_string(),
                self.centroids[row].0.to_string(),
                self.centroids[row].1.to_string(),
            ];
            rec.extend(self.features(row).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn manual_from_slice(v: &[f64]) -> ManualFeatures {
    ManualFeatures {
        width: v[0],
        height: v[1],
        area: v[2],
        rotation_angle: v[3],
        rotation_confidence: v[4],
        intensity_mean: v[5],
        intensity_std: v[6],
        patch_size: v[7],
        coord_std_horizontal: v[8],
        coord_std_vertical: v[9],
    }
}

/// Computes every cell's 20 features and stores them.
///
/// `sections` pairs each (polarity-corrected) image with its segments; the
/// diffusion coordinates pass through `map` before storage.
pub fn build_cell_db(
    brain_id: &str,
    sections: &[(SectionImage, Vec<CellSegment>)],
    model: &DiffusionModel,
    map: &AffineMap,
) -> Result<CellFeatureDB> {
    if model.params.m != EMBED_DIM || map.dim() != EMBED_DIM {
        return Err(Error::invalid(format!(
            "cell features need {EMBED_DIM} diffusion coordinates (model m = {}, map d = {})",
            model.params.m,
            map.dim()
        )));
    }
    let mut db = CellFeatureDB::new(brain_id);
    for (image, segments) in sections {
        db.add_section(SectionMeta::of(image))?;
        for seg in segments {
            let cell = cell_feature_vector(image, seg, model, map)?;
            db.insert(&cell, &seg.runs())?;
        }
    }
    Ok(db)
}

pub fn cell_feature_vector(
    image: &SectionImage,
    segment: &CellSegment,
    model: &DiffusionModel,
    map: &AffineMap,
) -> Result<CellFeatureVector> {
    let patch = extract_patch(image, segment, model.patch_size)?;
    let manual = manual_features(image, segment, &patch);
    let raw = model.embed(&patch.to_vector())?;
    let aligned = map.apply(&raw)?;
    Ok(CellFeatureVector {
        cell_id: segment.cell_id,
        section_id: segment.section_id.clone(),
        centroid: segment.centroid,
        manual,
        dm: aligned
            .try_into()
            .map_err(|_| Error::invalid("alignment output has wrong dimension"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Rect};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_db(n: usize, seed: u64) -> CellFeatureDB {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut db = CellFeatureDB::new("brain");
        for s in ["a", "b"] {
            db.add_section(SectionMeta {
                section_id: s.into(),
                width: 500,
                height: 400,
                resolution: Some(0.5),
            })
            .unwrap();
        }
        for i in 0..n {
            let section = if i % 3 == 0 { "b" } else { "a" };
            let centroid = (rng.random_range(0.0..399.0), rng.random_range(0.0..499.0));
            let vals: Vec<f64> = (0..N_CELL_FEATURES).map(|_| rng.random_range(-5.0..5.0)).collect();
            let cell = CellFeatureVector {
                cell_id: i as u64,
                section_id: section.into(),
                centroid,
                manual: manual_from_slice(&vals),
                dm: vals[10..].try_into().unwrap(),
            };
            let (r, c) = (centroid.0 as u32, centroid.1 as u32);
            db.insert(&cell, &[(r, c, 1 + (i % 4) as u32)]).unwrap();
        }
        db
    }

    #[test]
    fn empty_db_queries_empty() {
        let db = CellFeatureDB::new("x");
        let r = Region::Polygon(Polygon::rect(Rect::new(0.0, 0.0, 10.0, 10.0)));
        assert!(db.query("a", &r).is_empty());
        assert!(db.is_empty());
    }

    #[test]
    fn queries_match_linear_scan() {
        let db = random_db(1000, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x0 = rng.random_range(-20.0..480.0);
            let y0 = rng.random_range(-20.0..380.0);
            let rect = Rect::new(x0, y0, rng.random_range(1.0..200.0), rng.random_range(1.0..200.0));
            for region in [Region::Rect(rect), Region::Polygon(Polygon::rect(rect))] {
                for s in ["a", "b"] {
                    assert_eq!(db.query(s, &region), db.scan(s, &region));
                }
            }
        }
        let tri = Region::Polygon(Polygon::new(vec![[10.0, 10.0], [450.0, 50.0], [100.0, 390.0]]).unwrap());
        assert_eq!(db.query("a", &tri), db.scan("a", &tri));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut db = random_db(5, 3);
        let cell = CellFeatureVector {
            cell_id: 1,
            section_id: "a".into(),
            centroid: (1.0, 1.0),
            manual: manual_from_slice(&[0.0; 10]),
            dm: [0.0; 10],
        };
        assert!(matches!(db.insert(&cell, &[]), Err(Error::DuplicateCell { .. })));
    }

    #[test]
    fn persistence_is_bit_exact() {
        let db = random_db(300, 4);
        let mut buf = Vec::new();
        db.to_container().unwrap().write_to(&mut buf).unwrap();
        let back = CellFeatureDB::from_container(&Container::read_from(&buf[..]).unwrap()).unwrap();
        assert_eq!(back, db);
        for row in 0..db.len() {
            for (a, b) in db.features(row).iter().zip(back.features(row)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let mut csv = Vec::new();
        db.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 301);
    }
}
