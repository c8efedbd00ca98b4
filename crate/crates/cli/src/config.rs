use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cytoarch::classify::{BoostParams, DEFAULT_HIGH_MARGIN, DEFAULT_LOW_MARGIN};
use cytoarch::features::{DiffusionParams, KMeansParams};
use cytoarch::imaging::{SegmentParams, DEFAULT_PATCH_SIZE};
use cytoarch::regional::{DEFAULT_MAP_STRIDE, DEFAULT_MIN_CELLS, DEFAULT_TILE_SIDE, DEFAULT_TRAIN_STRIDE};

/// Everything a pipeline run depends on. Every field has a default, so an
/// empty file is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Identifier stored in the cell database.
    pub brain_id: String,
    pub patch_size: usize,
    /// Micrometres per pixel; densities are per mm² only when set.
    pub resolution_um: Option<f64>,
    /// Structures to train, evaluate and map. Empty means every annotated one.
    pub structures: Vec<String>,
    pub paths: Paths,
    pub segment: SegmentParams,
    pub kmeans: KMeansParams,
    pub diffusion: DiffusionParams,
    pub tiling: Tiling,
    pub boost: BoostParams,
    pub split: Split,
    pub explain: Explain,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            brain_id: "brain".into(),
            patch_size: DEFAULT_PATCH_SIZE,
            resolution_um: None,
            structures: Vec::new(),
            paths: Paths::default(),
            segment: SegmentParams::default(),
            kmeans: KMeansParams::default(),
            diffusion: DiffusionParams::default(),
            tiling: Tiling::default(),
            boost: BoostParams::default(),
            split: Split::default(),
            explain: Explain::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Artifact root; every stage reads and writes below it.
    pub out: PathBuf,
    /// Section images (PNG or PGM). Defaults to `<out>/images`.
    pub images: Option<PathBuf>,
    /// Structure outlines. Defaults to `<out>/annotations.json`.
    pub annotations: Option<PathBuf>,
    /// Diffusion model of the reference brain; without it this brain is the reference.
    pub reference_model: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: PathBuf::from("cytoarch-out"),
            images: None,
            annotations: None,
            reference_model: None,
        }
    }
}

impl Paths {
    pub fn images(&self) -> PathBuf {
        self.images.clone().unwrap_or_else(|| self.out.join("images"))
    }

    pub fn annotations(&self) -> PathBuf {
        self.annotations.clone().unwrap_or_else(|| self.out.join("annotations.json"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tiling {
    pub side: usize,
    pub train_stride: usize,
    pub map_stride: usize,
    /// Tiles with fewer cells are flagged low-support and never trained on.
    pub min_cells: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self {
            side: DEFAULT_TILE_SIDE,
            train_stride: DEFAULT_TRAIN_STRIDE,
            map_stride: DEFAULT_MAP_STRIDE,
            min_cells: DEFAULT_MIN_CELLS,
        }
    }
}

/// Sections whose tiles are held out of training. Empty means the last
/// section in sorted order when there are at least two.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub test_sections: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Explain {
    /// Tiles with margin above this pool into the "high" CDF.
    pub high_margin: f64,
    /// Tiles with margin below this pool into the "low" CDF.
    pub low_margin: f64,
}

impl Default for Explain {
    fn default() -> Self {
        Self {
            high_margin: DEFAULT_HIGH_MARGIN,
            low_margin: DEFAULT_LOW_MARGIN,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Held-out sections among `sections` (sorted ids).
    pub fn test_sections(&self, sections: &[String]) -> Vec<String> {
        if !self.split.test_sections.is_empty() {
            return self.split.test_sections.clone();
        }
        match sections {
            [_, .., last] => vec![last.clone()],
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.segment.block_size, 101);
        assert_eq!(cfg.segment.c, -12.0);
        assert_eq!(cfg.kmeans.k, 2000);
        assert_eq!(cfg.kmeans.min_cluster, 5);
        assert_eq!(cfg.diffusion.epsilon, 5000.0);
        assert_eq!(cfg.diffusion.n_evecs, 100);
        assert_eq!(cfg.diffusion.m, 10);
        assert_eq!(cfg.tiling.side, 224);
        assert_eq!(cfg.patch_size, 64);
    }

    #[test]
    fn roundtrips_through_toml() {
        let mut cfg = PipelineConfig {
            resolution_um: Some(0.5),
            structures: vec!["SC".into()],
            ..Default::default()
        };
        cfg.kmeans.k = 7;
        let back: PipelineConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("patchsize = 3").is_err());
        assert!(toml::from_str::<PipelineConfig>("[tiling]\nsides = 3").is_err());
    }

    #[test]
    fn default_split_holds_out_last_section() {
        let cfg = PipelineConfig::default();
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(cfg.test_sections(&ids(&["a", "b", "c"])), ids(&["c"]));
        assert!(cfg.test_sections(&ids(&["a"])).is_empty());
    }
}
