//! Shared synthetic fixtures for the integration suites.
#![allow(dead_code)]

use cytoarch::classify::{feature_importance, roc_auc, train_structure_detector, BoostParams, BoostedModel, ImportanceReport};
use cytoarch::features::{
    build_cell_db, fit_diffusion_map, streaming_kmeans, AffineMap, CellFeatureDB, DiffusionModel, DiffusionParams,
    KMeansParams, PatchStream,
};
use cytoarch::geometry::Polygon;
use cytoarch::imaging::{generate_synthetic_section, segment_section, CellSegment, GroundTruth, SectionImage, SegmentParams, SynthConfig};
use cytoarch::regional::{fit_threshold_grid, regionize, RegionDataset, StructureAnnotation, ThresholdGrid, TilingParams};

pub const STRUCTURE: &str = "SC";
pub const INNER_ANGLE: f64 = -30.0;

/// Irregular inner outline scaled to a `size × size` section.
pub fn inner_polygon(size: f64, variant: u64) -> Polygon {
    let j = (variant % 3) as f64 * 0.03;
    let pts = [
        [0.22 + j, 0.30],
        [0.55, 0.18 + j],
        [0.82 - j, 0.35],
        [0.78, 0.70 + j],
        [0.45 - j, 0.82],
        [0.18, 0.62],
    ];
    Polygon::new(pts.iter().map(|p| [p[0] * size, p[1] * size]).collect()).unwrap()
}

pub fn sc_section(id: &str, size: usize, seed: u64) -> (SectionImage, GroundTruth) {
    let cfg = SynthConfig::oriented_structure(id, size, size, seed, inner_polygon(size as f64, seed), STRUCTURE, INNER_ANGLE);
    generate_synthetic_section(&cfg).unwrap()
}

pub struct Experiment {
    pub sections: Vec<(SectionImage, Vec<CellSegment>)>,
    pub annotations: Vec<StructureAnnotation>,
    pub model: DiffusionModel,
    pub db: CellFeatureDB,
    pub grid: ThresholdGrid,
    pub dataset: RegionDataset,
    pub detector: BoostedModel,
    pub importance: ImportanceReport,
    pub train_sections: Vec<String>,
    pub test_sections: Vec<String>,
    pub held_out_auc: f64,
}

pub fn desk_kmeans() -> KMeansParams {
    KMeansParams {
        k: 200,
        seed: 7,
        ..Default::default()
    }
}

pub fn desk_diffusion() -> DiffusionParams {
    DiffusionParams {
        n_evecs: 30,
        ..Default::default()
    }
}

pub const DESK_PATCH: usize = 32;

/// segment → kmeans → dm → db → regionize → train → eval on synthetic sections.
pub fn sc_experiment(size: usize, n_train: usize, n_test: usize) -> Experiment {
    let mut sections = Vec::new();
    let mut annotations = Vec::new();
    let mut train_sections = Vec::new();
    let mut test_sections = Vec::new();
    for i in 0..n_train + n_test {
        let id = format!("s{i:02}");
        let (img, truth) = sc_section(&id, size, 100 + i as u64);
        let (img, segs) = segment_section(&img, &SegmentParams::default()).unwrap();
        annotations.extend(truth.annotations());
        sections.push((img, segs));
        if i < n_train {
            train_sections.push(id);
        } else {
            test_sections.push(id);
        }
    }
    let train_only: Vec<(SectionImage, Vec<CellSegment>)> = sections[..n_train].to_vec();
    let km = streaming_kmeans(
        &mut PatchStream {
            sections: &train_only,
            patch_size: DESK_PATCH,
        },
        &desk_kmeans(),
    )
    .unwrap();
    let model = fit_diffusion_map(&km.representatives, DESK_PATCH, desk_diffusion()).unwrap();
    let db = build_cell_db("synthetic", &sections, &model, &AffineMap::identity(10)).unwrap();
    let grid = fit_threshold_grid(&db).unwrap();
    let dataset = regionize(&db, &grid, &annotations, TilingParams::default()).unwrap();
    let train_refs: Vec<&str> = train_sections.iter().map(|s| s.as_str()).collect();
    let test_refs: Vec<&str> = test_sections.iter().map(|s| s.as_str()).collect();
    let train_rows = dataset.rows_in_sections(&train_refs);
    let detector = train_structure_detector(&dataset, &grid, STRUCTURE, &train_rows, &BoostParams::default()).unwrap();
    let (x, y) = cytoarch::classify::training_set(&dataset, STRUCTURE, &dataset.rows_in_sections(&test_refs)).unwrap();
    let scores: Vec<f64> = x.iter().map(|r| detector.predict_score(r).unwrap()).collect();
    let held_out_auc = roc_auc(&scores, &y).unwrap();
    let importance = feature_importance(&detector);
    Experiment {
        sections,
        annotations,
        model,
        db,
        grid,
        dataset,
        detector,
        importance,
        train_sections,
        test_sections,
        held_out_auc,
    }
}
