//! Browser demo. A [`Session`] holds a few small synthetic sections; the page
//! segments them, highlights cells by feature range and shows the structure
//! detector's probability map. Every view comes back as an RGBA buffer of
//! the viewed section.

use wasm_bindgen::prelude::*;

use cytoarch::classify::{
    explain_highlight, feature_importance, probability_map, roc_auc, train_structure_detector, training_set,
    BoostParams, BoostedModel, ProbabilityMap,
};
use cytoarch::features::{
    build_cell_db, fit_diffusion_map, streaming_kmeans, AffineMap, CellFeatureDB, DiffusionParams, KMeansParams,
    PatchStream, SectionMeta,
};
use cytoarch::imaging::{
    fixture_outline, generate_synthetic_section, segment_section, CellSegment, SectionImage, SegmentParams,
    SynthConfig,
};
use cytoarch::regional::{fit_threshold_grid, regionize, StructureAnnotation, ThresholdGrid, TilingParams};
use cytoarch::{Error, Result};

pub const STRUCTURE: &str = "SC";
pub const SECTION_SIZE: usize = 896;
/// Two sections train the detector; the last one is viewed.
pub const N_SECTIONS: usize = 3;
const PATCH: usize = 32;

/// Segment pixels are drawn in this color over the gray section.
const SEGMENT_COLOR: [u8; 3] = [0, 150, 255];
const SEGMENT_ALPHA: f64 = 0.55;

struct Analysis {
    db: CellFeatureDB,
    grid: ThresholdGrid,
    model: BoostedModel,
    map: ProbabilityMap,
    held_out_auc: f64,
    top_feature: String,
}

pub struct Session {
    sections: Vec<(SectionImage, Vec<CellSegment>)>,
    annotations: Vec<StructureAnnotation>,
    analysis: Option<Analysis>,
}

fn gray_rgba(img: &SectionImage) -> Vec<u8> {
    img.pixels.iter().flat_map(|&v| [v, v, v, 255]).collect()
}

impl Session {
    /// Synthesizes and segments the sections; the inner population of each
    /// is oriented at `angle_deg`.
    pub fn new(seed: u64, angle_deg: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&angle_deg) {
            return Err(Error::InvalidParameter(format!("angle {angle_deg} outside [-90, 90]")));
        }
        let mut sections = Vec::with_capacity(N_SECTIONS);
        let mut annotations = Vec::new();
        for i in 0..N_SECTIONS {
            let s = seed.wrapping_add(i as u64);
            let cfg = SynthConfig::oriented_structure(
                &format!("s{i}"),
                SECTION_SIZE,
                SECTION_SIZE,
                s,
                fixture_outline(SECTION_SIZE as f64, s),
                STRUCTURE,
                angle_deg,
            );
            let (img, truth) = generate_synthetic_section(&cfg)?;
            annotations.extend(truth.annotations());
            sections.push(segment_section(&img, &SegmentParams::default())?);
        }
        Ok(Self {
            sections,
            annotations,
            analysis: None,
        })
    }

    fn view(&self) -> &(SectionImage, Vec<CellSegment>) {
        self.sections.last().expect("sessions hold N_SECTIONS sections")
    }

    pub fn width(&self) -> usize {
        self.view().0.width
    }

    pub fn height(&self) -> usize {
        self.view().0.height
    }

    pub fn cell_count(&self) -> usize {
        self.view().1.len()
    }

    /// The viewed section with every segmented cell tinted.
    pub fn segmentation_rgba(&self) -> Vec<u8> {
        let (img, segs) = self.view();
        let mut out = gray_rgba(img);
        for seg in segs {
            for &(r, c) in &seg.pixel_coords {
                let k = 4 * (r as usize * img.width + c as usize);
                for (ch, &tint) in SEGMENT_COLOR.iter().enumerate() {
                    let base = out[k + ch] as f64;
                    out[k + ch] = ((1.0 - SEGMENT_ALPHA) * base + SEGMENT_ALPHA * tint as f64).round() as u8;
                }
            }
        }
        out
    }

    /// Runs kmeans, the diffusion map, the cell database, regional features
    /// and detector training; later calls reuse the result.
    pub fn analyze(&mut self) -> Result<()> {
        if self.analysis.is_some() {
            return Ok(());
        }
        let train = &self.sections[..N_SECTIONS - 1];
        let km = streaming_kmeans(
            &mut PatchStream {
                sections: train,
                patch_size: PATCH,
            },
            &KMeansParams {
                k: 120,
                seed: 7,
                ..Default::default()
            },
        )?;
        let dm = fit_diffusion_map(
            &km.representatives,
            PATCH,
            DiffusionParams {
                n_evecs: 20,
                ..Default::default()
            },
        )?;
        let db = build_cell_db("demo", &self.sections, &dm, &AffineMap::identity(dm.params.m))?;
        let grid = fit_threshold_grid(&db)?;
        let dataset = regionize(&db, &grid, &self.annotations, TilingParams::default())?;
        let train_ids: Vec<&str> = train.iter().map(|s| s.0.section_id.as_str()).collect();
        let view_id = self.view().0.section_id.as_str();
        let rows = dataset.rows_in_sections(&train_ids);
        let model = train_structure_detector(&dataset, &grid, STRUCTURE, &rows, &BoostParams::default())?;
        let (x, y) = training_set(&dataset, STRUCTURE, &dataset.rows_in_sections(&[view_id]))?;
        let scores = x.iter().map(|r| model.predict_score(r)).collect::<Result<Vec<_>>>()?;
        let held_out_auc = roc_auc(&scores, &y).unwrap_or(f64::NAN);
        let top_feature = feature_importance(&model).top().map(|e| e.name.clone()).unwrap_or_default();
        let meta = SectionMeta::of(&self.view().0);
        let map = probability_map(
            &meta,
            &db,
            &grid,
            &model,
            TilingParams {
                stride: 112,
                ..Default::default()
            },
        )?;
        self.analysis = Some(Analysis {
            db,
            grid,
            model,
            map,
            held_out_auc,
            top_feature,
        });
        Ok(())
    }

    fn analysis(&self) -> Result<&Analysis> {
        self.analysis
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("run analyze first".into()))
    }

    /// AUC of the detector on the viewed (held-out) section's tiles; NaN
    /// when those tiles hold a single class.
    pub fn held_out_auc(&self) -> Result<f64> {
        Ok(self.analysis()?.held_out_auc)
    }

    pub fn top_feature(&self) -> Result<String> {
        Ok(self.analysis()?.top_feature.clone())
    }

    /// Cells of the viewed section with `feature` in `[lo, hi]` tinted, and
    /// how many there are.
    pub fn highlight_rgba(&self, feature: &str, lo: f64, hi: f64) -> Result<(Vec<u8>, usize)> {
        let a = self.analysis()?;
        let (h, overlay) = explain_highlight(&self.view().0, &a.db, feature, lo, hi)?;
        Ok((overlay.into_raw(), h.rows.len()))
    }

    /// Detector probability per pixel (tile overlap average) blended over
    /// the section: red where the structure is likely.
    pub fn probability_rgba(&self) -> Result<Vec<u8>> {
        let a = self.analysis()?;
        let img = &self.view().0;
        let probs = a.map.pixel_probabilities();
        let mut out = gray_rgba(img);
        for (k, &p) in probs.iter().enumerate() {
            let g = img.pixels[k] as f64 * 0.5;
            out[4 * k] = (g + 127.5 * p).round() as u8;
            out[4 * k + 1] = (g * (1.0 - p)).round() as u8;
            out[4 * k + 2] = (g * (1.0 - p)).round() as u8;
        }
        Ok(out)
    }

    /// Number of trees and the threshold grid size, for the status line.
    pub fn model_summary(&self) -> Result<String> {
        let a = self.analysis()?;
        Ok(format!(
            "{} trees over {} region features ({} cell features × {} levels + 2)",
            a.model.trees.len(),
            a.model.n_features,
            a.grid.feature_names.len(),
            a.grid.thresholds.first().map_or(0, Vec::len)
        ))
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// JavaScript handle on a [`Session`].
#[wasm_bindgen]
pub struct Demo {
    session: Session,
    last_highlight: usize,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, angle_deg: f64) -> Result<Demo, JsError> {
        Session::new(seed as u64, angle_deg)
            .map(|session| Demo {
                session,
                last_highlight: 0,
            })
            .map_err(js)
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.session.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.session.height()
    }

    #[wasm_bindgen(getter, js_name = cellCount)]
    pub fn cell_count(&self) -> usize {
        self.session.cell_count()
    }

    #[wasm_bindgen(js_name = segmentation)]
    pub fn segmentation(&self) -> Vec<u8> {
        self.session.segmentation_rgba()
    }

    pub fn analyze(&mut self) -> Result<(), JsError> {
        self.session.analyze().map_err(js)
    }

    #[wasm_bindgen(js_name = heldOutAuc)]
    pub fn held_out_auc(&self) -> Result<f64, JsError> {
        self.session.held_out_auc().map_err(js)
    }

    #[wasm_bindgen(js_name = topFeature)]
    pub fn top_feature(&self) -> Result<String, JsError> {
        self.session.top_feature().map_err(js)
    }

    #[wasm_bindgen(js_name = modelSummary)]
    pub fn model_summary(&self) -> Result<String, JsError> {
        self.session.model_summary().map_err(js)
    }

    /// RGBA overlay; the highlighted cell count is in `lastHighlightCount`.
    pub fn highlight(&mut self, feature: &str, lo: f64, hi: f64) -> Result<Vec<u8>, JsError> {
        let (buf, n) = self.session.highlight_rgba(feature, lo, hi).map_err(js)?;
        self.last_highlight = n;
        Ok(buf)
    }

    #[wasm_bindgen(getter, js_name = lastHighlightCount)]
    pub fn last_highlight_count(&self) -> usize {
        self.last_highlight
    }

    #[wasm_bindgen(js_name = probabilityMap)]
    pub fn probability_map(&self) -> Result<Vec<u8>, JsError> {
        self.session.probability_rgba().map_err(js)
    }
}
