//! Per-cell features: ten manual descriptors plus ten aligned diffusion
//! coordinates, and the database that holds them.

mod affine;
mod db;
mod diffusion;
mod kmeans;
mod manual;
mod stream;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use affine::{align_brain_features, alignment_pairs, fit_affine_alignment, AffineMap, PointPairs};
pub use db::{build_cell_db, cell_feature_vector, CellFeatureDB, CellFeatureVector, SectionMeta};
pub use diffusion::{
    fit_diffusion_map, DiffusionModel, DiffusionParams, DEFAULT_ALPHA, DEFAULT_EPSILON, DEFAULT_N_EVECS, EMBED_DIM,
};
pub use kmeans::{kmeans_cost, kmeans_plus_plus, nearest, streaming_kmeans, FnStream, KMeansParams, KMeansResult, SampleStream};
pub use manual::{manual_features, ManualFeatures};
pub use stream::PatchStream;

use crate::binfmt::{flatten, unflatten, ArrayData, Container};
use crate::error::{Error, Result};

pub const N_CELL_FEATURES: usize = 20;

/// Frozen feature order: manual features, then diffusion coordinates 1–10.
pub const FEATURE_NAMES: [&str; N_CELL_FEATURES] = [
    "width",
    "height",
    "area",
    "rotation",
    "rotation_confidence",
    "intensity_mean",
    "intensity_std",
    "patch_size",
    "coord_std_horizontal",
    "coord_std_vertical",
    "dm1",
    "dm2",
    "dm3",
    "dm4",
    "dm5",
    "dm6",
    "dm7",
    "dm8",
    "dm9",
    "dm10",
];

pub fn feature_index(name: &str) -> Result<usize> {
    FEATURE_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::UnknownFeature(name.to_string()))
}

const DM_KIND: &str = "diffusion_model";
const AFFINE_KIND: &str = "affine_map";
const REPS_KIND: &str = "representatives";

#[derive(Serialize, Deserialize)]
struct DiffusionHeader {
    params: DiffusionParams,
    patch_size: usize,
    n_representatives: usize,
    dim: usize,
}

impl DiffusionModel {
    pub fn to_container(&self) -> Result<Container> {
        let header = DiffusionHeader {
            params: self.params,
            patch_size: self.patch_size,
            n_representatives: self.n_representatives(),
            dim: self.dim(),
        };
        let mut c = Container::new(DM_KIND, header)?;
        c.push("representatives", ArrayData::F64(flatten(&self.representatives)));
        c.push("degrees", ArrayData::F64(self.degrees.clone()));
        c.push("eigenvalues", ArrayData::F64(self.eigenvalues.clone()));
        c.push("eigenvectors", ArrayData::F64(flatten(&self.eigenvectors)));
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(DM_KIND)?;
        let h: DiffusionHeader = c.meta()?;
        let representatives = unflatten(c.f64s("representatives")?, h.dim)?;
        let eigenvalues = c.f64s("eigenvalues")?.to_vec();
        let eigenvectors = unflatten(c.f64s("eigenvectors")?, eigenvalues.len())?;
        if representatives.len() != h.n_representatives || eigenvectors.len() != h.n_representatives {
            return Err(Error::format("<diffusion model>", "array shapes disagree with header"));
        }
        Ok(Self {
            params: h.params,
            patch_size: h.patch_size,
            representatives,
            degrees: c.f64s("degrees")?.to_vec(),
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct AffineHeader {
    dim: usize,
}

impl AffineMap {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(AFFINE_KIND, AffineHeader { dim: self.dim() })?;
        c.push("mu", ArrayData::F64(self.mu.clone()));
        c.push("matrix", ArrayData::F64(self.matrix.clone()));
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind(AFFINE_KIND)?;
        let h: AffineHeader = c.meta()?;
        let mu = c.f64s("mu")?.to_vec();
        let matrix = c.f64s("matrix")?.to_vec();
        if mu.len() != h.dim || matrix.len() != h.dim * h.dim {
            return Err(Error::format("<affine map>", "array shapes disagree with header"));
        }
        Ok(Self { mu, matrix })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// K-means output as persisted between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub patch_size: usize,
    pub counts: Vec<usize>,
    pub samples: usize,
    pub clusters_before_filter: usize,
    #[serde(skip)]
    pub representatives: Vec<Vec<f64>>,
}

impl RepresentativeSet {
    pub fn from_kmeans(result: KMeansResult, patch_size: usize) -> Self {
        Self {
            patch_size,
            counts: result.counts,
            samples: result.samples,
            clusters_before_filter: result.clusters_before_filter,
            representatives: result.representatives,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = Container::new(REPS_KIND, self)?;
        c.push("representatives", ArrayData::F64(flatten(&self.representatives)));
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?.expect_kind(REPS_KIND)?;
        let mut set: RepresentativeSet = c.meta()?;
        set.representatives = unflatten(c.f64s("representatives")?, set.patch_size * set.patch_size)?;
        Ok(set)
    }
}
