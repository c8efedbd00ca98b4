use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cytoarch::imaging::{fixture_outline, SynthConfig};

use crate::config::PipelineConfig;

/// Orientation of the annotated inner population in the built-in fixture.
pub const FIXTURE_ANGLE: f64 = -30.0;

/// A `synth --spec` file: one `[[sections]]` table per image.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sections: Vec<SynthConfig>,
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: SynthSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        anyhow::ensure!(!spec.sections.is_empty(), "{} declares no [[sections]]", path.display());
        Ok(spec)
    }
}

/// `n` square sections, each with an isotropic surround and an annotated
/// inner population oriented at [`FIXTURE_ANGLE`].
pub fn fixture_spec(n: usize, size: usize, seed: u64, structure: &str) -> SynthSpec {
    let sections = (0..n)
        .map(|i| {
            let s = seed + i as u64;
            SynthConfig::oriented_structure(
                &format!("s{i:02}"),
                size,
                size,
                s,
                fixture_outline(size as f64, s),
                structure,
                FIXTURE_ANGLE,
            )
        })
        .collect();
    SynthSpec { sections }
}

/// Settings sized for a few small synthetic sections: a few thousand cells
/// cannot fill 2000 clusters of at least 5 members.
pub fn fixture_config(out: &Path, structure: &str, resolution: Option<f64>) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.out = out.to_path_buf();
    cfg.resolution_um = resolution;
    cfg.structures = vec![structure.to_string()];
    cfg.patch_size = 32;
    cfg.kmeans.k = 200;
    cfg.kmeans.seed = 7;
    cfg.diffusion.n_evecs = 30;
    cfg
}
