//! Exit-gate checks. Each test prints one `PASS`/`FAIL` line, then asserts.
//!
//! Run with `cargo test -p cytoarch --test acceptance -- --nocapture` to see
//! the report lines.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use cytoarch::classify::{
    loss_curve, roc_auc, sigmoid, train_detector, BoostParams, BoostedModel, Tree,
};
use cytoarch::features::{
    align_brain_features, fit_affine_alignment, fit_diffusion_map, streaming_kmeans, AffineMap, DiffusionModel,
    DiffusionParams, PatchStream,
};
use cytoarch::geometry::{Polygon, Rect, Region};
use cytoarch::imaging::{generate_synthetic_section, segment_section, SegmentParams, SynthConfig};
use cytoarch::regional::{cdf_index, region_feature, N_LEVELS};

fn report(name: &str, pass: bool, detail: String) -> bool {
    println!("ACCEPTANCE {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn gaussian_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let g = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| g.sample(rng)).collect()).collect()
}

/// Plain gradient descent on the mean squared residual, with its own gradient.
fn gradient_descent_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (n, d) = (a.len(), a[0].len());
    let mut mu = vec![0.0; d];
    let mut m = vec![vec![0.0; d]; d];
    let cost = |mu: &[f64], m: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for (ai, bi) in a.iter().zip(b) {
            for i in 0..d {
                let p: f64 = mu[i] + (0..d).map(|j| m[i][j] * ai[j]).sum::<f64>();
                s += (p - bi[i]).powi(2);
            }
        }
        s / n as f64
    };
    let mut step = 0.5;
    let mut current = cost(&mu, &m);
    for _ in 0..20_000 {
        let mut g_mu = vec![0.0; d];
        let mut g_m = vec![vec![0.0; d]; d];
        for (ai, bi) in a.iter().zip(b) {
            for i in 0..d {
                let p: f64 = mu[i] + (0..d).map(|j| m[i][j] * ai[j]).sum::<f64>();
                let r = 2.0 * (p - bi[i]) / n as f64;
                g_mu[i] += r;
                for j in 0..d {
                    g_m[i][j] += r * ai[j];
                }
            }
        }
        let norm2: f64 = g_mu.iter().map(|v| v * v).sum::<f64>() + g_m.iter().flatten().map(|v| v * v).sum::<f64>();
        if norm2 < 1e-26 {
            break;
        }
        // backtracking on the step
        loop {
            let mu2: Vec<f64> = (0..d).map(|i| mu[i] - step * g_mu[i]).collect();
            let m2: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| m[i][j] - step * g_m[i][j]).collect()).collect();
            let c2 = cost(&mu2, &m2);
            if c2 <= current - 0.5 * step * norm2 {
                mu = mu2;
                m = m2;
                current = c2;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return current;
            }
        }
    }
    current
}

fn affine_alignment_exactness() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (d, n) = (10, 200);
    let mut worst: f64 = 0.0;
    let mut fit_time = Duration::ZERO;
    let mut noisy_ok = true;
    let mut noisy_gap = f64::NEG_INFINITY;
    let noise = Normal::new(0.0, 0.1).unwrap();
    for trial in 0..100 {
        let a = gaussian_rows(n, d, &mut rng);
        let m_true = gaussian_rows(d, d, &mut rng);
        let mu_true: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut b: Vec<Vec<f64>> = a
            .iter()
            .map(|ai| (0..d).map(|i| mu_true[i] + (0..d).map(|j| m_true[i][j] * ai[j]).sum::<f64>()).collect())
            .collect();
        let t = Instant::now();
        let fit = fit_affine_alignment(&a, &b).unwrap();
        fit_time += t.elapsed();
        for i in 0..d {
            worst = worst.max((fit.mu[i] - mu_true[i]).abs());
            for j in 0..d {
                worst = worst.max((fit.m(i, j) - m_true[i][j]).abs());
            }
        }
        if trial < 10 {
            for bi in b.iter_mut() {
                for v in bi.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            let t = Instant::now();
            let fit = fit_affine_alignment(&a, &b).unwrap();
            fit_time += t.elapsed();
            let ours = fit.cost(&a, &b).unwrap();
            let oracle = gradient_descent_cost(&a, &b);
            noisy_gap = noisy_gap.max(ours - oracle);
            noisy_ok &= ours <= oracle + 1e-6;
        }
    }
    let pass = worst <= 1e-9 && noisy_ok && fit_time < Duration::from_secs(1);
    report(
        "affine alignment exactness",
        pass,
        format!("max error {worst:.2e} (≤ 1e-9), noisy cost − GD cost max {noisy_gap:.2e} (≤ 1e-6), fit time {fit_time:?} (< 1 s)"),
    )
}

fn embedding_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .sum::<f64>()
        / a.len() as f64
}

fn modality_model(invert: bool, seed: u64, perm: Option<(&[usize], &[f64])>) -> DiffusionModel {
    let cfg = SynthConfig {
        section_id: format!("mod{seed}"),
        width: 768,
        height: 768,
        invert,
        seed,
        populations: vec![cytoarch::imaging::PopulationConfig {
            name: "all".into(),
            count: 600,
            eccentricity: 0.6,
            eccentricity_spread: 0.3,
            ..Default::default()
        }],
        ..Default::default()
    };
    let (img, _) = generate_synthetic_section(&cfg).unwrap();
    let params = SegmentParams {
        invert,
        ..Default::default()
    };
    let sections = vec![segment_section(&img, &params).unwrap()];
    let km = streaming_kmeans(
        &mut PatchStream {
            sections: &sections,
            patch_size: common::DESK_PATCH,
        },
        &common::desk_kmeans(),
    )
    .unwrap();
    let model = fit_diffusion_map(&km.representatives, common::DESK_PATCH, common::desk_diffusion()).unwrap();
    match perm {
        Some((p, s)) => model.with_permuted_axes(p, s).unwrap(),
        None => model,
    }
}

fn cross_modality_alignment() -> bool {
    let reference = modality_model(false, 11, None);
    // scramble the retained axes; the rest of the spectrum stays in place
    let mut perm: Vec<usize> = (0..common::desk_diffusion().n_evecs).collect();
    perm[..10].copy_from_slice(&[3, 0, 7, 1, 9, 2, 5, 8, 4, 6]);
    let mut signs = vec![1.0; perm.len()];
    for k in [1, 4, 6, 9] {
        signs[k] = -1.0;
    }
    let other = modality_model(true, 29, Some((&perm, &signs)));
    let map = align_brain_features(&other, &reference).unwrap();

    // matched cells from a section neither model saw
    let (img, _) = common::sc_section("probe", 768, 5);
    let (img, segs) = segment_section(&img, &SegmentParams::default()).unwrap();
    let mut raw = Vec::new();
    let mut aligned = Vec::new();
    let mut target = Vec::new();
    for s in &segs {
        let v = cytoarch::imaging::extract_patch(&img, s, common::DESK_PATCH).unwrap().to_vector();
        let e = other.embed(&v).unwrap();
        aligned.push(map.apply(&e).unwrap());
        raw.push(e);
        target.push(reference.embed(&v).unwrap());
    }
    let before = embedding_mse(&raw, &target);
    let after = embedding_mse(&aligned, &target);

    let self_map = align_brain_features(&reference, &reference).unwrap();
    let id = AffineMap::identity(10);
    let self_err = self_map
        .matrix
        .iter()
        .zip(&id.matrix)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ratio = before / after;
    report(
        "cross-modality alignment",
        ratio >= 10.0 && self_err <= 1e-6,
        format!(
            "matched MSE {before:.3e} → {after:.3e} on {} cells (reduction {ratio:.1}×, need ≥ 10×), self-alignment ‖M−I‖∞ {self_err:.2e} (≤ 1e-6)",
            segs.len()
        ),
    )
}

struct Shared {
    experiment: common::Experiment,
    elapsed: Duration,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let experiment = common::sc_experiment(1344, 3, 2);
        Shared {
            experiment,
            elapsed: t.elapsed(),
        }
    })
}

fn random_region(rng: &mut ChaCha8Rng, size: f64) -> Region {
    if rng.random_bool(0.5) {
        let (w, h) = (rng.random_range(50.0..600.0), rng.random_range(50.0..600.0));
        Region::Rect(Rect::new(rng.random_range(0.0..size - w), rng.random_range(0.0..size - h), w, h))
    } else {
        // star-shaped polygons are simple by construction
        let (cx, cy) = (rng.random_range(300.0..size - 300.0), rng.random_range(300.0..size - 300.0));
        let k = rng.random_range(3..9);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        let verts = angles
            .iter()
            .map(|&t| {
                let r = rng.random_range(60.0..280.0);
                [cx + r * t.cos(), cy + r * t.sin()]
            })
            .collect();
        match Polygon::new(verts) {
            Ok(p) => Region::Polygon(p),
            Err(_) => Region::Rect(Rect::new(cx - 100.0, cy - 100.0, 200.0, 200.0)),
        }
    }
}

fn cdf_regional_features() -> bool {
    let e = &shared().experiment;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0usize;
    let mut monotone = true;
    let mut cells_seen = 0;
    for i in 0..50 {
        let section = &e.sections[i % e.sections.len()].0.section_id;
        let region = random_region(&mut rng, 1344.0);
        let f = region_feature(&e.db, section, &region, &e.grid, 5).unwrap();
        // oracle: scan every cell, count per threshold
        let members: Vec<usize> = (0..e.db.len())
            .filter(|&r| e.db.section_id(r) == section && region.contains_centroid(e.db.centroid(r)))
            .collect();
        cells_seen += members.len();
        for j in 0..20 {
            for k in 0..N_LEVELS {
                let mut count = 0usize;
                for &r in &members {
                    if e.db.feature(r, j) <= e.grid.threshold(j, k) {
                        count += 1;
                    }
                }
                let expect = if members.is_empty() { 0.0 } else { count as f64 / members.len() as f64 };
                if f.cdf[cdf_index(j, k)] != expect {
                    mismatches += 1;
                }
                if k > 0 && f.cdf[cdf_index(j, k)] < f.cdf[cdf_index(j, k - 1)] {
                    monotone = false;
                }
            }
        }
        monotone &= f.cdf.iter().all(|v| (0.0..=1.0).contains(v));
    }
    report(
        "CDF regional features",
        mismatches == 0 && monotone,
        format!("50 regions ({cells_seen} cell memberships), {mismatches} of 99000 entries differ from nested-loop count, monotone: {monotone}"),
    )
}

fn end_to_end_oriented_structure() -> bool {
    let s = shared();
    let e = &s.experiment;
    let top = e.importance.top().expect("model has splits");
    let pass = e.held_out_auc >= 0.90 && top.family == "rotation" && s.elapsed < Duration::from_secs(300);
    report(
        "end-to-end oriented structure",
        pass,
        format!(
            "held-out tile AUC {:.4} (≥ 0.90), top-gain feature `{}` ({} family), {} cells / {} tiles, runtime {:.1?} (< 5 min)",
            e.held_out_auc,
            top.name,
            top.family,
            e.db.len(),
            e.dataset.len(),
            s.elapsed
        ),
    )
}

/// Independent path trace over the flat tree arrays.
fn oracle_margin(model: &BoostedModel, x: &[f64]) -> f64 {
    fn walk(t: &Tree, node: usize, x: &[f64]) -> f64 {
        if t.left[node] == -1 {
            return t.value[node];
        }
        let next = if x[t.feature[node] as usize] <= t.threshold[node] { t.left[node] } else { t.right[node] };
        walk(t, next as usize, x)
    }
    let mut m = model.base_score;
    for t in &model.trees {
        m += model.params.eta * walk(t, 0, x);
    }
    m
}

fn boosting_correctness() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut datasets: Vec<(String, Vec<Vec<f64>>, Vec<bool>)> = Vec::new();
    let x = gaussian_rows(300, 6, &mut rng);
    let y = x.iter().map(|r| r[0] + 0.5 * r[1] * r[2] > 0.2).collect();
    datasets.push(("interaction".into(), x, y));
    let x = gaussian_rows(200, 10, &mut rng);
    let y = (0..200).map(|_| rng.random_bool(0.5)).collect();
    datasets.push(("noise".into(), x, y));
    let x: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.random_range(0..5) as f64).collect()).collect();
    let y = x.iter().map(|r| (r[0] as i32 + r[3] as i32) % 2 == 0).collect();
    datasets.push(("tied-xor".into(), x, y));
    let e = &shared().experiment;
    let (x, y) = cytoarch::classify::training_set(&e.dataset, common::STRUCTURE, &(0..e.dataset.len()).collect::<Vec<_>>()).unwrap();
    datasets.push(("regional".into(), x, y));

    let mut monotone = true;
    let mut worst_rise: f64 = 0.0;
    let mut models = Vec::new();
    for (_, x, y) in &datasets {
        let m = train_detector(x, y, &BoostParams::default()).unwrap();
        let curve = loss_curve(&m, x, y).unwrap();
        for w in curve.windows(2) {
            if w[1] > w[0] {
                monotone = false;
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
        models.push(m);
    }

    // hand case: p = 0.5 everywhere, g = ±0.5, h = 0.25; split at x <= 2
    let hx = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
    let hy = [false, false, true, true];
    let stump = train_detector(
        &hx,
        &hy,
        &BoostParams {
            rounds: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            ..Default::default()
        },
    )
    .unwrap();
    let t = &stump.trees[0];
    // G_left = 1, H_left = 0.5, λ = 1 → −1/1.5
    let leaves_ok = stump.base_score == 0.0
        && t.threshold[0] == 2.0
        && t.value[t.left[0] as usize] == -1.0 / 1.5
        && t.value[t.right[0] as usize] == 1.0 / 1.5;

    let mut exact = 0;
    let mut total = 0;
    for (m, (_, x, _)) in models.iter().zip(&datasets) {
        let d = x[0].len();
        for _ in 0..250 {
            let input: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            total += 1;
            if m.predict_score(&input).unwrap() == sigmoid(oracle_margin(m, &input)) {
                exact += 1;
            }
        }
    }
    report(
        "boosting correctness",
        monotone && leaves_ok && exact == total,
        format!(
            "loss non-increasing over 100 rounds on {} datasets: {monotone} (worst rise {worst_rise:.1e}); 4-point leaf weights −G/(H+λ): {leaves_ok}; tree-walk oracle exact on {exact}/{total} inputs",
            datasets.len()
        ),
    )
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn roc_auc_exactness() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = 0;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.random_range(2..200);
        let levels = rng.random_range(1..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        instances += 1;
        if roc_auc(&scores, &labels).unwrap() == pairwise_auc(&scores, &labels) {
            exact += 1;
        }
    }
    let flat = roc_auc(&[0.3; 9], &[true, false, true, false, false, true, false, false, true]).unwrap();
    let single = roc_auc(&[0.1, 0.2], &[true, true]).is_err();
    report(
        "ROC AUC exactness",
        exact == 100 && flat == 0.5 && single,
        format!("{exact}/100 tied instances equal the pairwise oracle; all-equal scores → {flat}; single class rejected: {single}"),
    )
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn diffusion_map_properties() -> bool {
    // one-parameter family: centered horizontal bars of growing length
    let size = 16;
    let lengths: Vec<f64> = (0..60).map(|i| 2.0 + i as f64 * 0.2).collect();
    let reps: Vec<Vec<f64>> = lengths
        .iter()
        .map(|&len| {
            let mut p = vec![0.0; size * size];
            for r in 6..10 {
                for c in 0..size {
                    let x = c as f64 + 0.5 - size as f64 / 2.0;
                    // partial coverage at the bar ends keeps the family continuous
                    let cover = (len / 2.0 - x.abs() + 0.5).clamp(0.0, 1.0);
                    p[r * size + c] = cover;
                }
            }
            p
        })
        .collect();
    let params = DiffusionParams {
        epsilon: 2.0,
        alpha: 1.0,
        n_evecs: 20,
        m: 10,
    };
    let model = fit_diffusion_map(&reps, size, params).unwrap();
    let ev = &model.eigenvalues;
    let descending = ev.windows(2).all(|w| w[0] >= w[1]);
    let bounded = ev.iter().all(|&l| l <= 1.0 + 1e-9);
    let mut worst_rel: f64 = 0.0;
    for (i, r) in reps.iter().enumerate() {
        let a = model.embed(r).unwrap();
        let b = model.training_embedding(i);
        let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(diff / scale);
    }
    let first: Vec<f64> = (0..reps.len()).map(|i| model.training_embedding(i)[0]).collect();
    let rho = spearman(&first, &lengths).abs();
    report(
        "diffusion map properties",
        descending && bounded && worst_rel <= 1e-6 && rho >= 0.95,
        format!(
            "eigenvalues descending: {descending}, max {:.6} (≤ 1+1e-9); Nyström relative error {worst_rel:.2e} (≤ 1e-6); |Spearman| {rho:.4} (≥ 0.95)",
            ev[0]
        ),
    )
}

fn sha256(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every stage on a small fixture and writes each artifact.
fn run_stages(dir: &Path) -> Vec<(String, String)> {
    use cytoarch::classify::{feature_importance, probability_map, train_structure_detector};
    use cytoarch::features::{build_cell_db, RepresentativeSet, SectionMeta};
    use cytoarch::regional::{fit_threshold_grid, regionize, save_annotations, TilingParams};

    let mut sections = Vec::new();
    let mut annotations = Vec::new();
    for i in 0..2u64 {
        let (img, truth) = common::sc_section(&format!("d{i}"), 672, 40 + i);
        img.save(&dir.join(format!("d{i}.png"))).unwrap();
        let (img, segs) = segment_section(&img, &SegmentParams::default()).unwrap();
        let f = std::fs::File::create(dir.join(format!("d{i}.segments.ndjson"))).unwrap();
        cytoarch::imaging::write_segments_ndjson(std::io::BufWriter::new(f), &segs).unwrap();
        annotations.extend(truth.annotations());
        sections.push((img, segs));
    }
    save_annotations(&dir.join("annotations.json"), &annotations).unwrap();
    let km = streaming_kmeans(
        &mut PatchStream {
            sections: &sections,
            patch_size: common::DESK_PATCH,
        },
        &common::desk_kmeans(),
    )
    .unwrap();
    let reps = RepresentativeSet::from_kmeans(km, common::DESK_PATCH);
    reps.save(&dir.join("reps.bin")).unwrap();
    let model = fit_diffusion_map(&reps.representatives, common::DESK_PATCH, common::desk_diffusion()).unwrap();
    model.save(&dir.join("dm.bin")).unwrap();
    let map = align_brain_features(&model, &model).unwrap();
    map.save(&dir.join("align.bin")).unwrap();
    let db = build_cell_db("det", &sections, &model, &map).unwrap();
    db.save(&dir.join("cells.bin")).unwrap();
    let grid = fit_threshold_grid(&db).unwrap();
    grid.save(&dir.join("grid.json")).unwrap();
    let tiling = TilingParams {
        stride: 112,
        ..Default::default()
    };
    let ds = regionize(&db, &grid, &annotations, tiling).unwrap();
    ds.save(&dir.join("regions.bin")).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    let det = train_structure_detector(&ds, &grid, common::STRUCTURE, &all, &BoostParams::default()).unwrap();
    det.save(&dir.join("model.json")).unwrap();
    let f = std::fs::File::create(dir.join("importance.csv")).unwrap();
    feature_importance(&det).write_csv(f).unwrap();
    let pm = probability_map(&SectionMeta::of(&sections[0].0), &db, &grid, &det, tiling).unwrap();
    pm.save(&dir.join("probmap.png"), &dir.join("probmap.json")).unwrap();

    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names.into_iter().map(|n| (sha256(&dir.join(&n)), n)).map(|(h, n)| (n, h)).collect()
}

fn stage_determinism() -> bool {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ha = run_stages(a.path());
    let hb = run_stages(b.path());
    let differing: Vec<&str> = ha
        .iter()
        .zip(&hb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    report(
        "stage determinism",
        ha.len() == hb.len() && differing.is_empty(),
        format!("{} artifacts hashed twice, differing: {:?}", ha.len(), differing),
    )
}

/// One line per criterion, printed whether or not output is captured; a
/// criterion that panics before reporting counts as failed.
fn main() -> ExitCode {
    let criteria: [(&str, fn() -> bool); 8] = [
        ("affine alignment exactness", affine_alignment_exactness),
        ("cross modality alignment", cross_modality_alignment),
        ("cdf regional features", cdf_regional_features),
        ("end to end oriented structure", end_to_end_oriented_structure),
        ("boosting correctness", boosting_correctness),
        ("roc auc exactness", roc_auc_exactness),
        ("diffusion map properties", diffusion_map_properties),
        ("stage determinism", stage_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match std::panic::catch_unwind(run) {
            Ok(true) => {}
            Ok(false) => failed += 1,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| e.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                println!("ACCEPTANCE FAIL {name}: {msg}");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
