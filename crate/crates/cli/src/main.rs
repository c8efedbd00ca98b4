//! `cytoarch`: the analysis pipeline one stage per command. Every stage reads
//! the artifacts of the previous ones from the output root, writes its own
//! atomically, and leaves a run manifest under `manifests/`.

mod artifacts;
mod commands;
mod config;
mod fixture;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use artifacts::MissingArtifact;
use commands::{Ctx, ExplainArgs, SynthArgs};
use config::PipelineConfig;

const EXIT_VALIDATION: u8 = 2;
const EXIT_MISSING_UPSTREAM: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cytoarch",
    version,
    about = "Interpretable cytoarchitecture analysis, one pipeline stage per command",
    after_help = "Stage order: synth -> segment -> kmeans -> dmfit -> align -> embed -> regionize -> train -> eval -> probmap -> explain\n\
                  Exit codes: 0 success, 2 invalid input or parameters, 3 an upstream artifact is missing.\n\
                  Print every default with `cytoarch defaults`."
)]
struct Cli {
    /// Pipeline config (TOML). Command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Artifact root [default: cytoarch-out].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Section image directory [default: <out>/images].
    #[arg(long, global = true, value_name = "DIR")]
    images: Option<PathBuf>,

    /// Structure annotation file [default: <out>/annotations.json].
    #[arg(long, global = true, value_name = "FILE")]
    annotations: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default config as TOML.
    Defaults,
    /// Generate synthetic sections, their ground truth and structure outlines.
    Synth(SynthCmd),
    /// Threshold and label cells in every section image.
    Segment(SegmentFlags),
    /// Cluster rotation-normalized cell patches into representatives.
    Kmeans(KmeansFlags),
    /// Fit the diffusion map of the representative patches.
    Dmfit(DmFlags),
    /// Align this brain's diffusion coordinates to a reference brain.
    Align(AlignFlags),
    /// Compute the 20 per-cell features into the cell database.
    Embed(CsvFlag),
    /// Tile sections, label tiles and compute CDF region features.
    Regionize(RegionizeFlags),
    /// Train one boosted detector per structure.
    Train(TrainFlags),
    /// Score held-out tiles: AUC table, ROC curves and plot.
    Eval(StructureFlags),
    /// Render per-tile probability maps.
    Probmap(ProbmapFlags),
    /// Highlight cells in a feature range and compare feature CDFs of
    /// high- and low-margin tiles.
    Explain(ExplainFlags),
}

#[derive(Args)]
struct SynthCmd {
    /// Section specs (TOML with one [[sections]] table each); without it a
    /// built-in fixture is generated along with a matching fixture.toml.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Fixture: number of sections.
    #[arg(long, default_value_t = 2)]
    sections: usize,
    /// Fixture: section side in px.
    #[arg(long, default_value_t = 1344)]
    size: usize,
    /// Fixture: seed of the first section; later sections add their index.
    #[arg(long, default_value_t = 100)]
    seed: u64,
    /// Fixture: name of the annotated structure.
    #[arg(long, default_value = "SC")]
    structure: String,
}

#[derive(Args)]
struct SegmentFlags {
    /// Gaussian block size of the adaptive threshold, odd [default: 101].
    #[arg(long)]
    block_size: Option<usize>,
    /// Threshold offset: foreground iff pixel < local mean + C [default: -12].
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,
    /// Smallest kept component in px [default: 20].
    #[arg(long)]
    min_area: Option<usize>,
    /// Largest kept component in px [default: 5000].
    #[arg(long)]
    max_area: Option<usize>,
    /// Invert intensities first (bright cells on dark background).
    #[arg(long)]
    invert: bool,
    /// Micrometres per pixel, used for densities per mm² [default: unset].
    #[arg(long)]
    resolution_um: Option<f64>,
}

#[derive(Args)]
struct KmeansFlags {
    /// Side of the rotation-normalized cell patch in px [default: 64].
    #[arg(long)]
    patch_size: Option<usize>,
    /// Number of clusters [default: 2000].
    #[arg(long)]
    k: Option<usize>,
    /// Clusters with fewer members are dropped [default: 5].
    #[arg(long)]
    min_cluster: Option<usize>,
    /// Seed of the reservoir sample and K-means++ [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DmFlags {
    /// Kernel width: weight exp(-d²/epsilon) [default: 5000].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Density normalization exponent [default: 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Eigenpairs computed [default: 100].
    #[arg(long)]
    n_evecs: Option<usize>,
    /// Diffusion coordinates kept per cell [default: 10].
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct AlignFlags {
    /// Diffusion model (dm/model.bin) of the reference brain [default: none,
    /// this brain is the reference].
    #[arg(long, value_name = "FILE")]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct CsvFlag {
    /// Also write a CSV export.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TilingFlags {
    /// Tile side in px [default: 224].
    #[arg(long)]
    side: Option<usize>,
    /// Tiles with fewer cells are low-support [default: 5].
    #[arg(long)]
    min_cells: Option<usize>,
}

#[derive(Args)]
struct RegionizeFlags {
    #[command(flatten)]
    tiling: TilingFlags,
    /// Stride of training tiles in px [default: 224].
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    csv: CsvFlag,
}

#[derive(Args)]
struct StructureFlags {
    /// Structure(s) to process, repeatable [default: config list, else all annotated].
    #[arg(long = "structure", value_name = "NAME")]
    structures: Vec<String>,
}

#[derive(Args)]
struct TrainFlags {
    #[command(flatten)]
    structures: StructureFlags,
    /// Maximum tree depth [default: 3].
    #[arg(long)]
    max_depth: Option<usize>,
    /// Learning rate [default: 0.2].
    #[arg(long)]
    eta: Option<f64>,
    /// Boosting rounds [default: 100].
    #[arg(long)]
    rounds: Option<usize>,
    /// L2 penalty on leaf weights [default: 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum hessian sum per child [default: 1].
    #[arg(long)]
    min_child_weight: Option<f64>,
    /// Held-out section(s), repeatable [default: the last section].
    #[arg(long = "test-section", value_name = "ID")]
    test_sections: Vec<String>,
}

#[derive(Args)]
struct ProbmapFlags {
    #[command(flatten)]
    structures: StructureFlags,
    /// Section(s) to map, repeatable [default: all].
    #[arg(long = "section", value_name = "ID")]
    sections: Vec<String>,
    /// Map tile stride in px [default: 112, half overlap].
    #[arg(long)]
    stride: Option<usize>,
    #[command(flatten)]
    tiling: TilingFlags,
}

#[derive(Args)]
struct ExplainFlags {
    #[arg(long)]
    structure: String,
    #[arg(long)]
    section: String,
    /// Cell feature, e.g. rotation, area, dm1.
    #[arg(long)]
    feature: String,
    /// Inclusive highlight range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Vec<f64>,
    /// Tiles with margin above this form the high group [default: 1].
    #[arg(long, allow_negative_numbers = true)]
    high_margin: Option<f64>,
    /// Tiles with margin below this form the low group [default: -1].
    #[arg(long, allow_negative_numbers = true)]
    low_margin: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TilingFlags {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.tiling.side, self.side);
        set(&mut cfg.tiling.min_cells, self.min_cells);
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.paths.out, cli.out.clone());
    if cli.images.is_some() {
        cfg.paths.images = cli.images.clone();
    }
    if cli.annotations.is_some() {
        cfg.paths.annotations = cli.annotations.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Defaults => {
            print!("{}", PipelineConfig::default().to_toml()?);
            Ok(())
        }
        Command::Synth(a) => {
            let ctx = Ctx::new(cfg);
            commands::synth(
                &ctx,
                &SynthArgs {
                    spec: a.spec.clone(),
                    sections: a.sections,
                    size: a.size,
                    seed: a.seed,
                    structure: a.structure.clone(),
                },
            )
        }
        Command::Segment(f) => {
            set(&mut cfg.segment.block_size, f.block_size);
            set(&mut cfg.segment.c, f.c);
            set(&mut cfg.segment.min_area, f.min_area);
            set(&mut cfg.segment.max_area, f.max_area);
            cfg.segment.invert |= f.invert;
            if f.resolution_um.is_some() {
                cfg.resolution_um = f.resolution_um;
            }
            commands::segment(&Ctx::new(cfg))
        }
        Command::Kmeans(f) => {
            set(&mut cfg.patch_size, f.patch_size);
            set(&mut cfg.kmeans.k, f.k);
            set(&mut cfg.kmeans.min_cluster, f.min_cluster);
            set(&mut cfg.kmeans.seed, f.seed);
            commands::kmeans(&Ctx::new(cfg))
        }
        Command::Dmfit(f) => {
            set(&mut cfg.diffusion.epsilon, f.epsilon);
            set(&mut cfg.diffusion.alpha, f.alpha);
            set(&mut cfg.diffusion.n_evecs, f.n_evecs);
            set(&mut cfg.diffusion.m, f.m);
            commands::dmfit(&Ctx::new(cfg))
        }
        Command::Align(f) => {
            if f.reference.is_some() {
                cfg.paths.reference_model = f.reference.clone();
            }
            commands::align(&Ctx::new(cfg))
        }
        Command::Embed(f) => commands::embed(&Ctx::new(cfg), f.csv),
        Command::Regionize(f) => {
            f.tiling.apply(&mut cfg);
            set(&mut cfg.tiling.train_stride, f.stride);
            commands::regionize_cmd(&Ctx::new(cfg), f.csv.csv)
        }
        Command::Train(f) => {
            set(&mut cfg.boost.max_depth, f.max_depth);
            set(&mut cfg.boost.eta, f.eta);
            set(&mut cfg.boost.rounds, f.rounds);
            set(&mut cfg.boost.lambda, f.lambda);
            set(&mut cfg.boost.min_child_weight, f.min_child_weight);
            if !f.test_sections.is_empty() {
                cfg.split.test_sections = f.test_sections.clone();
            }
            commands::train(&Ctx::new(cfg), &f.structures.structures)
        }
        Command::Eval(f) => commands::eval(&Ctx::new(cfg), &f.structures),
        Command::Probmap(f) => {
            f.tiling.apply(&mut cfg);
            set(&mut cfg.tiling.map_stride, f.stride);
            commands::probmap(&Ctx::new(cfg), &f.structures.structures, &f.sections)
        }
        Command::Explain(f) => {
            set(&mut cfg.explain.high_margin, f.high_margin);
            set(&mut cfg.explain.low_margin, f.low_margin);
            let range = match f.range.as_slice() {
                [lo, hi] => (*lo, *hi),
                _ => anyhow::bail!("--range takes two values: LO HI"),
            };
            commands::explain(
                &Ctx::new(cfg),
                &ExplainArgs {
                    structure: f.structure.clone(),
                    section: f.section.clone(),
                    feature: f.feature.clone(),
                    range,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingArtifact>().is_some() {
                ExitCode::from(EXIT_MISSING_UPSTREAM)
            } else {
                ExitCode::from(EXIT_VALIDATION)
            }
        }
    }
}
