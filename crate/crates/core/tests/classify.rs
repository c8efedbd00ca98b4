mod common;

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cytoarch::classify::{
    cdf_comparison, explain_highlight, highlight_cells, probability_map, roc_auc, train_detector, BoostParams,
    ProbabilityMap,
};
use cytoarch::features::{CellFeatureDB, SectionMeta};
use cytoarch::geometry::Region;
use cytoarch::regional::{TilingParams, DEFAULT_MAP_STRIDE, DEFAULT_TILE_SIDE};

fn experiment() -> &'static common::Experiment {
    static CELL: OnceLock<common::Experiment> = OnceLock::new();
    CELL.get_or_init(|| common::sc_experiment(1344, 2, 1))
}

fn held_out() -> (&'static cytoarch::imaging::SectionImage, Region) {
    let e = experiment();
    let id = &e.test_sections[0];
    let img = &e.sections.iter().find(|s| &s.0.section_id == id).unwrap().0;
    let ann = e.annotations.iter().find(|a| &a.section_id == id).unwrap();
    (img, Region::Polygon(ann.polygon.clone()))
}

fn map_tiling(stride: usize) -> TilingParams {
    TilingParams {
        stride,
        ..Default::default()
    }
}

#[test]
fn empty_database_gives_flagged_zero_map() {
    let e = experiment();
    let meta = SectionMeta {
        section_id: "blank".into(),
        width: 448,
        height: 448,
        resolution: Some(0.5),
    };
    let mut db = CellFeatureDB::new("empty");
    db.add_section(meta.clone()).unwrap();
    let pm = probability_map(&meta, &db, &e.grid, &e.detector, map_tiling(DEFAULT_MAP_STRIDE)).unwrap();
    assert_eq!(pm.tiles.len(), 9);
    assert!(pm.tiles.iter().all(|t| t.low_support));
    assert!(pm.render().pixels().all(|p| p.0[0] == 0));
}

#[test]
fn map_is_brighter_inside_the_structure() {
    let e = experiment();
    let (img, region) = held_out();
    let pm = probability_map(&SectionMeta::of(img), &e.db, &e.grid, &e.detector, map_tiling(DEFAULT_MAP_STRIDE)).unwrap();
    assert!(pm.tiles.iter().all(|t| (0.0..=1.0).contains(&t.probability)));
    let probs = pm.pixel_probabilities();
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..pm.height {
        for c in 0..pm.width {
            let p = probs[r * pm.width + c];
            if region.contains_pixel(r as u32, c as u32) {
                si += p;
                ni += 1;
            } else {
                so += p;
                no += 1;
            }
        }
    }
    let (inside, outside) = (si / ni as f64, so / no as f64);
    assert!(inside - outside >= 0.3, "inside {inside:.3} outside {outside:.3}");

    let dir = tempfile::tempdir().unwrap();
    let (png, json) = (dir.path().join("m.png"), dir.path().join("m.json"));
    pm.save(&png, &json).unwrap();
    assert_eq!(ProbabilityMap::load_json(&json).unwrap(), pm);
    let back = image::open(&png).unwrap().to_luma8();
    assert_eq!(back, pm.render());
}

#[test]
fn tile_scores_do_not_depend_on_stride() {
    let e = experiment();
    let (img, _) = held_out();
    let meta = SectionMeta::of(img);
    let coarse = probability_map(&meta, &e.db, &e.grid, &e.detector, map_tiling(DEFAULT_TILE_SIDE)).unwrap();
    let fine = probability_map(&meta, &e.db, &e.grid, &e.detector, map_tiling(DEFAULT_TILE_SIDE / 2)).unwrap();
    for t in &coarse.tiles {
        assert_eq!(fine.score_at(t.origin).unwrap(), t);
    }
}

#[test]
fn highlight_ranges() {
    let e = experiment();
    let (img, region) = held_out();
    let all = highlight_cells(&e.db, &img.section_id, "rotation", -90.0, 90.0).unwrap();
    assert_eq!(all.len(), e.db.rows_in_section(&img.section_id).len());
    assert!(highlight_cells(&e.db, &img.section_id, "rotation", 10.0, 5.0).unwrap().is_empty());
    assert!(highlight_cells(&e.db, &img.section_id, "no_such_feature", 0.0, 1.0).is_err());

    let (h, overlay) = explain_highlight(img, &e.db, "rotation", -65.0, 11.3).unwrap();
    assert_eq!(overlay.dimensions(), (img.width as u32, img.height as u32));
    let inside_area = region.pixel_area() as f64;
    let outside_area = (img.width * img.height) as f64 - inside_area;
    let inside = h.rows.iter().filter(|&&r| region.contains_centroid(e.db.centroid(r))).count() as f64;
    let outside = h.rows.len() as f64 - inside;
    let ratio = (inside / inside_area) / (outside / outside_area);
    assert!(ratio >= 2.0, "tinted density ratio {ratio:.2}");

    // tinted pixels are reddish, others stay gray
    let row = h.rows[0];
    let (r, c, _) = e.db.runs(row).next().unwrap();
    let px = overlay.get_pixel(c, r).0;
    assert!(px[0] > px[1] && px[1] == px[2]);
}

#[test]
fn cdf_comparison_separates_margins() {
    let e = experiment();
    let (img, _) = held_out();
    let pm = probability_map(&SectionMeta::of(img), &e.db, &e.grid, &e.detector, map_tiling(DEFAULT_MAP_STRIDE)).unwrap();
    let cmp = cdf_comparison(&e.db, &e.grid, &pm, "rotation", 1.0, -1.0).unwrap();
    assert!(cmp.high_tiles > 0 && cmp.low_tiles > 0);
    assert_eq!(cmp.high.len(), 99);
    assert!(cmp.high.windows(2).all(|w| w[0] <= w[1]));
    // inner cells cluster near −30°, so their CDF rises faster before 0°
    let k = cmp.thresholds.iter().position(|&t| t >= 0.0).unwrap();
    assert!(cmp.high[k] > cmp.low[k] + 0.2, "{} vs {}", cmp.high[k], cmp.low[k]);
    let mut buf = Vec::new();
    cmp.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 100);
}

fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y = x.iter().map(|r| r[0] * r[1] + 0.3 * r[2] + rng.random_range(-0.5..0.5) > 0.0).collect();
    (x, y)
}

#[test]
fn monotone_column_transform_leaves_scores_unchanged() {
    let (x, y) = random_problem(1, 250, 5);
    let base = train_detector(&x, &y, &BoostParams::default()).unwrap();
    let warp = |v: f64| v.exp() * 3.0 - 1.0;
    let xt: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r[1] = warp(r[1]);
            r
        })
        .collect();
    let warped = train_detector(&xt, &y, &BoostParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.5..2.5)).collect();
        let mut pt = p.clone();
        pt[1] = warp(pt[1]);
        let (a, b) = (base.predict_score(&p).unwrap(), warped.predict_score(&pt).unwrap());
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn margins_add_one_tree_at_a_time() {
    let (x, y) = random_problem(3, 200, 4);
    let m = train_detector(&x, &y, &BoostParams { rounds: 30, ..Default::default() }).unwrap();
    for r in x.iter().take(50) {
        for k in 1..=m.trees.len() {
            let step = m.margin_upto(r, k).unwrap() - m.margin_upto(r, k - 1).unwrap();
            let expect = m.params.eta * m.trees[k - 1].predict(r);
            assert!((step - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn detectors_are_independent() {
    let (x, y1) = random_problem(4, 150, 4);
    let y2: Vec<bool> = x.iter().map(|r| r[3] > 0.1).collect();
    let first = train_detector(&x, &y1, &BoostParams::default()).unwrap();
    let snapshot = first.clone();
    let _second = train_detector(&x, &y2, &BoostParams::default()).unwrap();
    assert_eq!(first, snapshot);
    assert_eq!(train_detector(&x, &y1, &BoostParams::default()).unwrap(), first);
}

#[test]
fn noise_labels_stay_near_chance_when_held_out() {
    let mut total = 0.0;
    let seeds = 5;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
            let x = (0..n).map(|_| (0..10).map(|_| rng.random::<f64>()).collect()).collect();
            let y = (0..n).map(|_| rng.random_bool(0.5)).collect();
            (x, y)
        };
        let (x, y) = draw(200);
        let (xt, yt) = draw(400);
        let m = train_detector(&x, &y, &BoostParams::default()).unwrap();
        let s: Vec<f64> = xt.iter().map(|r| m.predict_score(r).unwrap()).collect();
        total += roc_auc(&s, &yt).unwrap();
    }
    let mean = total / seeds as f64;
    assert!((0.4..=0.6).contains(&mean), "held-out AUC {mean}");
}
