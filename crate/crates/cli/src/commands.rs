use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use serde_json::json;

use cytoarch::classify::{
    cdf_comparison, explain_highlight, feature_importance, probability_map, render_roc, roc_auc, roc_curve,
    train_structure_detector, training_set, write_roc_csv, BoostedModel, ProbabilityMap,
};
use cytoarch::features::{
    align_brain_features, build_cell_db, feature_index, fit_diffusion_map, streaming_kmeans, AffineMap, CellFeatureDB,
    DiffusionModel, PatchStream, RepresentativeSet, SectionMeta,
};
use cytoarch::imaging::{generate_synthetic_section, read_segments_ndjson, segment_section, write_segments_ndjson, CellSegment, SectionImage};
use cytoarch::regional::{
    fit_threshold_grid, load_annotations, regionize, save_annotations, RegionDataset, StructureAnnotation, ThresholdGrid,
    TilingParams,
};

use crate::artifacts::{require, slug, write_atomic, write_bytes_atomic, Layout, MissingArtifact, Run};
use crate::config::PipelineConfig;
use crate::fixture::{fixture_config, fixture_spec, SynthSpec};

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub layout: Layout,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Self {
        let layout = Layout::new(cfg.paths.out.clone());
        Self { cfg, layout }
    }

    fn tiling(&self, stride: usize) -> TilingParams {
        TilingParams {
            side: self.cfg.tiling.side,
            stride,
            min_cells: self.cfg.tiling.min_cells,
        }
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn note(msg: impl AsRef<str>) {
    eprintln!("cytoarch: {}", msg.as_ref());
}

pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub sections: usize,
    pub size: usize,
    pub seed: u64,
    pub structure: String,
}

pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(p) => SynthSpec::load(p)?,
        None => {
            ensure!(args.sections > 0, "--sections must be positive");
            fixture_spec(args.sections, args.size, args.seed, &args.structure)
        }
    };
    let ids: BTreeSet<&str> = spec.sections.iter().map(|c| c.section_id.as_str()).collect();
    ensure!(ids.len() == spec.sections.len(), "section ids must be unique");
    let images = ctx.cfg.paths.images();
    let mut run = Run::new("synth", &ctx.layout);
    if let Some(p) = &args.spec {
        run.input(p)?;
    }
    let mut annotations: Vec<StructureAnnotation> = Vec::new();
    for c in &spec.sections {
        let (img, truth) = generate_synthetic_section(c)?;
        let png = images.join(format!("{}.png", slug(&c.section_id)));
        write_atomic(&png, |tmp| Ok(img.save(tmp)?))?;
        let tp = ctx.layout.truth(&c.section_id);
        write_bytes_atomic(&tp, &json_bytes(&truth)?)?;
        run.output(&png)?;
        run.output(&tp)?;
        annotations.extend(truth.annotations());
        note(format!("synth {}: {} cells", c.section_id, truth.cells.len()));
    }
    let ann = ctx.cfg.paths.annotations();
    write_atomic(&ann, |tmp| Ok(save_annotations(tmp, &annotations)?))?;
    run.output(&ann)?;
    if args.spec.is_none() {
        // a config sized for the fixture, so the remaining stages run as-is
        let resolution = spec.sections[0].resolution;
        let cfg = fixture_config(&ctx.cfg.paths.out, &args.structure, resolution);
        let p = ctx.layout.root.join("fixture.toml");
        write_bytes_atomic(&p, cfg.to_toml()?.as_bytes())?;
        run.output(&p)?;
    }
    run.finish("synth", &json!({ "sections": spec.sections }))?;
    Ok(())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let missing = || MissingArtifact {
        expected: vec![dir.join("<section>.png"), dir.join("<section>.pgm")],
        command: "synth",
    };
    if !dir.is_dir() {
        return Err(missing().into());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "pgm")))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(missing().into());
    }
    Ok(out)
}

pub fn segment(ctx: &Ctx) -> Result<()> {
    let paths = list_images(&ctx.cfg.paths.images())?;
    let mut run = Run::new("segment", &ctx.layout);
    let mut metas = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &paths {
        let mut img = SectionImage::load(p)?;
        img.resolution = ctx.cfg.resolution_um;
        ensure!(seen.insert(img.section_id.clone()), "two images share section id `{}`", img.section_id);
        run.input(p)?;
        let (img, segs) = segment_section(&img, &ctx.cfg.segment)?;
        let ip = ctx.layout.segment_image(&img.section_id);
        write_atomic(&ip, |tmp| Ok(img.save(tmp)?))?;
        let cp = ctx.layout.segment_cells(&img.section_id);
        write_atomic(&cp, |tmp| {
            let f = std::io::BufWriter::new(std::fs::File::create(tmp)?);
            Ok(write_segments_ndjson(f, &segs)?)
        })?;
        run.output(&ip)?;
        run.output(&cp)?;
        note(format!("segment {}: {} cells", img.section_id, segs.len()));
        metas.push(SectionMeta::of(&img));
    }
    let sp = ctx.layout.sections();
    write_bytes_atomic(&sp, &json_bytes(&metas)?)?;
    run.output(&sp)?;
    run.finish(
        "segment",
        &json!({ "segment": ctx.cfg.segment, "resolution_um": ctx.cfg.resolution_um }),
    )?;
    Ok(())
}

/// Polarity-corrected images and segments as written by `segment`.
fn load_sections(ctx: &Ctx, run: &mut Run) -> Result<Vec<(SectionImage, Vec<CellSegment>)>> {
    let sp = ctx.layout.sections();
    require(&sp, "segment")?;
    run.input(&sp)?;
    let metas: Vec<SectionMeta> = serde_json::from_slice(&std::fs::read(&sp)?).context("reading section list")?;
    let mut out = Vec::with_capacity(metas.len());
    for m in metas {
        let (ip, cp) = (ctx.layout.segment_image(&m.section_id), ctx.layout.segment_cells(&m.section_id));
        require(&ip, "segment")?;
        require(&cp, "segment")?;
        run.input(&ip)?;
        run.input(&cp)?;
        let mut img = SectionImage::load(&ip)?;
        img.section_id = m.section_id.clone();
        img.resolution = m.resolution;
        ensure!(
            (img.width, img.height) == (m.width, m.height),
            "{} does not match the section list",
            ip.display()
        );
        let f = std::io::BufReader::new(std::fs::File::open(&cp)?);
        let segs = read_segments_ndjson(f)?;
        out.push((img, segs));
    }
    Ok(out)
}

pub fn kmeans(ctx: &Ctx) -> Result<()> {
    let mut run = Run::new("kmeans", &ctx.layout);
    let sections = load_sections(ctx, &mut run)?;
    let mut stream = PatchStream {
        sections: &sections,
        patch_size: ctx.cfg.patch_size,
    };
    let res = streaming_kmeans(&mut stream, &ctx.cfg.kmeans)?;
    note(format!(
        "kmeans: {} patches, {} of {} clusters kept",
        res.samples,
        res.representatives.len(),
        res.clusters_before_filter
    ));
    let set = RepresentativeSet::from_kmeans(res, ctx.cfg.patch_size);
    let p = ctx.layout.representatives();
    write_atomic(&p, |tmp| Ok(set.save(tmp)?))?;
    run.output(&p)?;
    run.finish("kmeans", &json!({ "patch_size": ctx.cfg.patch_size, "kmeans": ctx.cfg.kmeans }))?;
    Ok(())
}

pub fn dmfit(ctx: &Ctx) -> Result<()> {
    let mut run = Run::new("dmfit", &ctx.layout);
    let rp = ctx.layout.representatives();
    require(&rp, "kmeans")?;
    run.input(&rp)?;
    let set = RepresentativeSet::load(&rp)?;
    let model = fit_diffusion_map(&set.representatives, set.patch_size, ctx.cfg.diffusion)?;
    note(format!(
        "dmfit: {} representatives, leading eigenvalue {:.4}",
        model.n_representatives(),
        model.eigenvalues.first().copied().unwrap_or(f64::NAN)
    ));
    let p = ctx.layout.diffusion_model();
    write_atomic(&p, |tmp| Ok(model.save(tmp)?))?;
    run.output(&p)?;
    run.finish("dmfit", &json!({ "diffusion": ctx.cfg.diffusion }))?;
    Ok(())
}

pub fn align(ctx: &Ctx) -> Result<()> {
    let mut run = Run::new("align", &ctx.layout);
    let mp = ctx.layout.diffusion_model();
    require(&mp, "dmfit")?;
    run.input(&mp)?;
    let model = DiffusionModel::load(&mp)?;
    let map = match &ctx.cfg.paths.reference_model {
        Some(rp) => {
            require(rp, "dmfit")?;
            run.input(rp)?;
            let reference = DiffusionModel::load(rp)?;
            let map = align_brain_features(&model, &reference)?;
            note(format!("align: fitted a {}-d affine map to {}", map.dim(), rp.display()));
            map
        }
        None => {
            note("align: no reference model, this brain is the reference (identity map)");
            AffineMap::identity(model.params.m)
        }
    };
    let p = ctx.layout.alignment();
    write_atomic(&p, |tmp| Ok(map.save(tmp)?))?;
    run.output(&p)?;
    run.finish("align", &json!({ "reference_model": ctx.cfg.paths.reference_model.is_some() }))?;
    Ok(())
}

pub fn embed(ctx: &Ctx, csv: bool) -> Result<()> {
    let mut run = Run::new("embed", &ctx.layout);
    let (mp, ap) = (ctx.layout.diffusion_model(), ctx.layout.alignment());
    require(&mp, "dmfit")?;
    require(&ap, "align")?;
    let sections = load_sections(ctx, &mut run)?;
    run.input(&mp)?;
    run.input(&ap)?;
    let model = DiffusionModel::load(&mp)?;
    let map = AffineMap::load(&ap)?;
    let mut db = build_cell_db(&ctx.cfg.brain_id, &sections, &model, &map)?;
    db.alignment_id = Some(crate::artifacts::sha256_file(&ap)?);
    note(format!("embed: {} cells in {} sections", db.len(), db.sections().len()));
    let p = ctx.layout.cells();
    write_atomic(&p, |tmp| Ok(db.save(tmp)?))?;
    run.output(&p)?;
    if csv {
        let cp = ctx.layout.cells_csv();
        write_atomic(&cp, |tmp| Ok(db.write_csv(std::fs::File::create(tmp)?)?))?;
        run.output(&cp)?;
    }
    run.finish("embed", &json!({ "brain_id": ctx.cfg.brain_id, "csv": csv }))?;
    Ok(())
}

fn load_db(ctx: &Ctx, run: &mut Run) -> Result<CellFeatureDB> {
    let p = ctx.layout.cells();
    require(&p, "embed")?;
    run.input(&p)?;
    Ok(CellFeatureDB::load(&p)?)
}

fn load_grid(ctx: &Ctx, run: &mut Run) -> Result<ThresholdGrid> {
    let p = ctx.layout.grid();
    require(&p, "regionize")?;
    run.input(&p)?;
    Ok(ThresholdGrid::load(&p)?)
}

pub fn regionize_cmd(ctx: &Ctx, csv: bool) -> Result<()> {
    let mut run = Run::new("regionize", &ctx.layout);
    let db = load_db(ctx, &mut run)?;
    let ann = ctx.cfg.paths.annotations();
    require(&ann, "synth")?;
    run.input(&ann)?;
    let annotations = load_annotations(&ann)?;
    let grid = fit_threshold_grid(&db)?;
    let ds = regionize(&db, &grid, &annotations, ctx.tiling(ctx.cfg.tiling.train_stride))?;
    let low = ds.low_support.iter().filter(|&&l| l).count();
    note(format!(
        "regionize: {} tiles ({} low-support), structures {:?}",
        ds.len(),
        low,
        ds.structures
    ));
    let (gp, dp) = (ctx.layout.grid(), ctx.layout.dataset());
    write_atomic(&gp, |tmp| Ok(grid.save(tmp)?))?;
    write_atomic(&dp, |tmp| Ok(ds.save(tmp)?))?;
    run.output(&gp)?;
    run.output(&dp)?;
    if csv {
        let cp = ctx.layout.dataset_csv();
        write_atomic(&cp, |tmp| Ok(ds.write_csv(&grid, std::fs::File::create(tmp)?)?))?;
        run.output(&cp)?;
    }
    run.finish("regionize", &json!({ "tiling": ctx.cfg.tiling, "csv": csv }))?;
    Ok(())
}

/// Structures named on the command line, else in the config, else every
/// structure in the dataset.
fn structures(ctx: &Ctx, cli: &[String], known: &[String]) -> Result<Vec<String>> {
    let chosen = if !cli.is_empty() {
        cli.to_vec()
    } else if !ctx.cfg.structures.is_empty() {
        ctx.cfg.structures.clone()
    } else {
        known.to_vec()
    };
    ensure!(!chosen.is_empty(), "no structures: the annotations name none");
    for s in &chosen {
        ensure!(known.contains(s), "unknown structure `{s}`; annotated: {known:?}");
    }
    Ok(chosen)
}

fn manifest_name(command: &str, scope: &[String]) -> String {
    if scope.is_empty() {
        command.to_string()
    } else {
        format!("{command}-{}", scope.join("-"))
    }
}

/// (train, test) section ids of the dataset.
fn split(ctx: &Ctx, ds: &RegionDataset) -> Result<(Vec<String>, Vec<String>)> {
    let ids: Vec<String> = ds
        .tiles
        .iter()
        .map(|t| t.section_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let test = ctx.cfg.test_sections(&ids);
    for s in &test {
        ensure!(ids.contains(s), "held-out section `{s}` is not in the dataset");
    }
    let train: Vec<String> = ids.iter().filter(|s| !test.contains(s)).cloned().collect();
    ensure!(!train.is_empty(), "every section is held out; nothing left to train on");
    Ok((train, test))
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(|s| s.as_str()).collect()
}

fn load_dataset(ctx: &Ctx, run: &mut Run) -> Result<RegionDataset> {
    let p = ctx.layout.dataset();
    require(&p, "regionize")?;
    run.input(&p)?;
    Ok(RegionDataset::load(&p)?)
}

pub fn train(ctx: &Ctx, cli_structures: &[String]) -> Result<()> {
    let mut run = Run::new("train", &ctx.layout);
    let ds = load_dataset(ctx, &mut run)?;
    let grid = load_grid(ctx, &mut run)?;
    let chosen = structures(ctx, cli_structures, &ds.structures)?;
    let (train_ids, test_ids) = split(ctx, &ds)?;
    let rows = ds.rows_in_sections(&refs(&train_ids));
    for s in &chosen {
        let model = train_structure_detector(&ds, &grid, s, &rows, &ctx.cfg.boost)
            .with_context(|| format!("training `{s}`"))?;
        let imp = feature_importance(&model);
        if let Some(top) = imp.top() {
            note(format!("train {s}: {} trees, top feature {} (gain {:.3})", model.trees.len(), top.name, top.gain));
        }
        let (mp, ip) = (ctx.layout.model(s), ctx.layout.importance(s));
        write_bytes_atomic(&mp, &model.to_json()?)?;
        write_atomic(&ip, |tmp| Ok(imp.write_csv(std::fs::File::create(tmp)?)?))?;
        run.output(&mp)?;
        run.output(&ip)?;
    }
    run.finish(
        &manifest_name("train", cli_structures),
        &json!({ "boost": ctx.cfg.boost, "structures": chosen, "train_sections": train_ids, "test_sections": test_ids }),
    )?;
    Ok(())
}

fn load_model(ctx: &Ctx, run: &mut Run, structure: &str) -> Result<BoostedModel> {
    let p = ctx.layout.model(structure);
    require(&p, "train")?;
    run.input(&p)?;
    Ok(BoostedModel::load(&p)?)
}

pub fn eval(ctx: &Ctx, cli_structures: &[String]) -> Result<()> {
    let mut run = Run::new("eval", &ctx.layout);
    let ds = load_dataset(ctx, &mut run)?;
    let chosen = structures(ctx, cli_structures, &ds.structures)?;
    let (_, test_ids) = split(ctx, &ds)?;
    ensure!(!test_ids.is_empty(), "evaluation needs a held-out section; set split.test_sections");
    let rows = ds.rows_in_sections(&refs(&test_ids));
    let mut table = String::from("structure,n_test,n_positive,auc\n");
    let mut curves = Vec::new();
    for s in &chosen {
        let model = load_model(ctx, &mut run, s)?;
        let (x, y) = training_set(&ds, s, &rows)?;
        let pos = y.iter().filter(|&&v| v).count();
        let scores = x.iter().map(|r| model.predict_score(r)).collect::<cytoarch::Result<Vec<f64>>>()?;
        if pos == 0 || pos == y.len() {
            note(format!("eval {s}: held-out tiles contain a single class, AUC undefined"));
            writeln!(table, "{s},{},{pos},NA", y.len())?;
            continue;
        }
        let auc = roc_auc(&scores, &y)?;
        note(format!("eval {s}: held-out AUC {auc:.4} on {} tiles", y.len()));
        writeln!(table, "{s},{},{pos},{auc}", y.len())?;
        curves.push((s.clone(), roc_curve(&scores, &y)?));
    }
    let dir = ctx.layout.eval_dir();
    let (ap, cp, pp) = (dir.join("auc.csv"), dir.join("roc.csv"), dir.join("roc.png"));
    write_bytes_atomic(&ap, table.as_bytes())?;
    write_atomic(&cp, |tmp| Ok(write_roc_csv(&curves, std::fs::File::create(tmp)?)?))?;
    write_atomic(&pp, |tmp| Ok(render_roc(&curves).save(tmp)?))?;
    for p in [&ap, &cp, &pp] {
        run.output(p)?;
    }
    run.finish(
        &manifest_name("eval", cli_structures),
        &json!({ "structures": chosen, "test_sections": test_ids, "min_cells": ctx.cfg.tiling.min_cells }),
    )?;
    Ok(())
}

fn select_sections(db: &CellFeatureDB, cli: &[String]) -> Result<Vec<SectionMeta>> {
    if cli.is_empty() {
        return Ok(db.sections().to_vec());
    }
    cli.iter()
        .map(|s| db.section(s).cloned().with_context(|| format!("section `{s}` is not in the cell database")))
        .collect()
}

pub fn probmap(ctx: &Ctx, cli_structures: &[String], cli_sections: &[String]) -> Result<()> {
    let mut run = Run::new("probmap", &ctx.layout);
    let db = load_db(ctx, &mut run)?;
    let grid = load_grid(ctx, &mut run)?;
    let ds = load_dataset(ctx, &mut run)?;
    let chosen = structures(ctx, cli_structures, &ds.structures)?;
    let sections = select_sections(&db, cli_sections)?;
    let tiling = ctx.tiling(ctx.cfg.tiling.map_stride);
    for s in &chosen {
        let model = load_model(ctx, &mut run, s)?;
        for meta in &sections {
            let pm = probability_map(meta, &db, &grid, &model, tiling)?;
            let (png, js) = ctx.layout.probmap(s, &meta.section_id);
            write_atomic(&png, |tmp| Ok(pm.render().save(tmp)?))?;
            write_bytes_atomic(&js, &json_bytes(&pm)?)?;
            run.output(&png)?;
            run.output(&js)?;
            let high = pm.tiles.iter().filter(|t| !t.low_support && t.probability > 0.5).count();
            note(format!("probmap {s}/{}: {} tiles, {high} above 0.5", meta.section_id, pm.tiles.len()));
        }
    }
    let mut scope = cli_structures.to_vec();
    scope.extend(cli_sections.iter().cloned());
    run.finish(
        &manifest_name("probmap", &scope),
        &json!({ "structures": chosen, "sections": sections.iter().map(|m| &m.section_id).collect::<Vec<_>>(), "tiling": tiling }),
    )?;
    Ok(())
}

pub struct ExplainArgs {
    pub structure: String,
    pub section: String,
    pub feature: String,
    pub range: (f64, f64),
}

pub fn explain(ctx: &Ctx, args: &ExplainArgs) -> Result<()> {
    let (lo, hi) = args.range;
    ensure!(lo.is_finite() && hi.is_finite(), "range bounds must be finite");
    if lo > hi {
        bail!("empty range: {lo} > {hi}");
    }
    feature_index(&args.feature)?;
    let mut run = Run::new("explain", &ctx.layout);
    let ip = ctx.layout.segment_image(&args.section);
    let (_, mp) = ctx.layout.probmap(&args.structure, &args.section);
    require(&ip, "segment")?;
    let db = load_db(ctx, &mut run)?;
    let grid = load_grid(ctx, &mut run)?;
    require(&mp, "probmap")?;
    run.input(&ip)?;
    run.input(&mp)?;
    let meta = db
        .section(&args.section)
        .cloned()
        .with_context(|| format!("section `{}` is not in the cell database", args.section))?;
    let mut img = SectionImage::load(&ip)?;
    img.section_id = meta.section_id.clone();
    img.resolution = meta.resolution;
    let pm = ProbabilityMap::load_json(&mp)?;
    let (h, overlay) = explain_highlight(&img, &db, &args.feature, lo, hi)?;
    let (hm, lm) = (ctx.cfg.explain.high_margin, ctx.cfg.explain.low_margin);
    let cmp = cdf_comparison(&db, &grid, &pm, &args.feature, hm, lm)?;
    note(format!(
        "explain {}/{}: {} of {} cells with {} in [{lo}, {hi}]; {} tiles with margin > {hm}, {} < {lm}",
        args.structure,
        args.section,
        h.rows.len(),
        h.total_cells,
        args.feature,
        cmp.high_tiles,
        cmp.low_tiles
    ));
    let dir = ctx.layout.explain_dir(&args.structure);
    let stem = format!("{}_{}", slug(&args.section), slug(&args.feature));
    let (op, cp, sp) = (
        dir.join(format!("{stem}_overlay.png")),
        dir.join(format!("{stem}_cdf.csv")),
        dir.join(format!("{stem}_summary.json")),
    );
    write_atomic(&op, |tmp| Ok(overlay.save(tmp)?))?;
    write_atomic(&cp, |tmp| Ok(cmp.write_csv(std::fs::File::create(tmp)?)?))?;
    let summary = json!({
        "section_id": h.section_id,
        "feature": h.feature,
        "range": [lo, hi],
        "highlighted_cells": h.rows.len(),
        "total_cells": h.total_cells,
        "high_margin": hm,
        "low_margin": lm,
        "high_tiles": cmp.high_tiles,
        "low_tiles": cmp.low_tiles,
        "high_cells": cmp.high_cells,
        "low_cells": cmp.low_cells,
    });
    write_bytes_atomic(&sp, &json_bytes(&summary)?)?;
    for p in [&op, &cp, &sp] {
        run.output(p)?;
    }
    run.finish(
        &format!("explain-{}-{}-{}", args.structure, args.section, args.feature),
        &json!({ "structure": args.structure, "section": args.section, "feature": args.feature, "range": [lo, hi], "explain": ctx.cfg.explain }),
    )?;
    Ok(())
}
