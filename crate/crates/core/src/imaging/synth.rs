//! Synthetic sections: anti-aliased elliptical cells drawn per population.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::SectionImage;
use crate::error::{Error, Result};
use crate::geometry::{Polygon, Rect};
use crate::regional::StructureAnnotation;

const SUPERSAMPLE: usize = 4;
const PLACEMENT_TRIES: usize = 200;

/// One cell population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub name: String,
    pub count: usize,
    /// Mean semi-major axis, pixels.
    pub mean_size: f64,
    pub size_spread: f64,
    pub orientation_mean_deg: f64,
    /// Von Mises concentration of the (axial) orientation; 0 is uniform.
    pub orientation_concentration: f64,
    /// Ellipse eccentricity in `[0, 1)`.
    pub eccentricity: f64,
    pub eccentricity_spread: f64,
    pub intensity: f64,
    /// Placement polygon; the whole image when absent.
    pub region: Option<Polygon>,
    /// When set, the region is emitted as an annotation for this structure.
    pub structure: Option<String>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            name: "cells".into(),
            count: 0,
            mean_size: 6.0,
            size_spread: 1.0,
            orientation_mean_deg: 0.0,
            orientation_concentration: 0.0,
            eccentricity: 0.6,
            eccentricity_spread: 0.05,
            intensity: 90.0,
            region: None,
            structure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub section_id: String,
    pub width: usize,
    pub height: usize,
    pub background: f64,
    pub noise_std: f64,
    /// Micrometers per pixel written into the image metadata.
    pub resolution: Option<f64>,
    /// Emit bright cells on a dark background (fluorescence-like).
    pub invert: bool,
    /// Minimum gap in pixels between neighbouring cell outlines.
    pub min_gap: f64,
    pub seed: u64,
    pub populations: Vec<PopulationConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            section_id: "synth".into(),
            width: 512,
            height: 512,
            background: 200.0,
            noise_std: 6.0,
            resolution: Some(0.5),
            invert: false,
            min_gap: 3.0,
            seed: 0,
            populations: Vec::new(),
        }
    }
}

impl SynthConfig {
    /// A section with an isotropic surround and an inner polygon of cells
    /// oriented at `inner_angle_deg`, annotated as `structure`.
    pub fn oriented_structure(
        section_id: &str,
        width: usize,
        height: usize,
        seed: u64,
        inner: Polygon,
        structure: &str,
        inner_angle_deg: f64,
    ) -> Self {
        let area = (width * height) as f64;
        let inner_area = inner.area();
        let density = 1.0 / 900.0;
        Self {
            section_id: section_id.into(),
            width,
            height,
            seed,
            populations: vec![
                PopulationConfig {
                    name: "surround".into(),
                    count: ((area - inner_area).max(0.0) * density) as usize,
                    eccentricity: 0.8,
                    ..Default::default()
                },
                PopulationConfig {
                    name: "inner".into(),
                    count: (inner_area * density) as usize,
                    orientation_mean_deg: inner_angle_deg,
                    orientation_concentration: 40.0,
                    eccentricity: 0.8,
                    region: Some(inner),
                    structure: Some(structure.into()),
                    ..Default::default()
                },
            ],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(0.0..=255.0).contains(&self.background) || self.noise_std < 0.0 {
            return Err(Error::invalid("background must be in [0,255] and noise_std >= 0"));
        }
        for p in &self.populations {
            if let Some(poly) = &p.region {
                poly.validate()
                    .map_err(|e| Error::invalid(format!("population `{}`: {e}", p.name)))?;
            }
            if !(0.0..1.0).contains(&p.eccentricity) {
                return Err(Error::invalid(format!("population `{}`: eccentricity must be in [0,1)", p.name)));
            }
            if p.mean_size <= 0.0 || p.size_spread < 0.0 || p.orientation_concentration < 0.0 {
                return Err(Error::invalid(format!("population `{}`: sizes and concentration must be non-negative", p.name)));
            }
        }
        Ok(())
    }
}

/// Exact parameters of one drawn cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseTruth {
    pub population: String,
    /// `(row, col)` pixel-index coordinates.
    pub center: (f64, f64),
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Degrees in `(-90, 90]`, same convention as patch rotation angles.
    pub angle_deg: f64,
    pub intensity: f64,
}

impl EllipseTruth {
    fn coverage(&self, row: usize, col: usize) -> f64 {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let mut hits = 0;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let y = row as f64 + (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5 - self.center.0;
                let x = col as f64 + (j as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5 - self.center.1;
                let u = x * c + y * s;
                let v = -x * s + y * c;
                if (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0 {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    fn pixel_bounds(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let reach = self.semi_major + 1.0;
        let r0 = (self.center.0 - reach).floor().max(0.0) as usize;
        let c0 = (self.center.1 - reach).floor().max(0.0) as usize;
        let r1 = ((self.center.0 + reach).ceil() as usize).min(height - 1);
        let c1 = ((self.center.1 + reach).ceil() as usize).min(width - 1);
        (r0, c0, r1, c1)
    }

    /// Pixels covered at least half, `(row, col)`.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<(u32, u32)> {
        let (r0, c0, r1, c1) = self.pixel_bounds(width, height);
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if self.coverage(r, c) >= 0.5 {
                    out.push((r as u32, c as u32));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub population: String,
    pub structure: Option<String>,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub section_id: String,
    pub cells: Vec<EllipseTruth>,
    pub regions: Vec<RegionTruth>,
}

impl GroundTruth {
    pub fn annotations(&self) -> Vec<StructureAnnotation> {
        self.regions
            .iter()
            .filter_map(|r| {
                r.structure.as_ref().map(|s| StructureAnnotation {
                    section_id: self.section_id.clone(),
                    structure: s.clone(),
                    polygon: r.polygon.clone(),
                })
            })
            .collect()
    }
}

/// Samples an axial orientation (degrees) from a von Mises law on the doubled
/// angle, so `mean` and `mean + 180` are the same direction.
fn sample_orientation<R: Rng>(rng: &mut R, mean_deg: f64, kappa: f64) -> f64 {
    let doubled = if kappa <= 1e-9 {
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
    } else {
        (2.0 * mean_deg.to_radians()) + sample_von_mises(rng, kappa)
    };
    let mut deg = (doubled / 2.0).to_degrees();
    while deg <= -90.0 {
        deg += 180.0;
    }
    while deg > 90.0 {
        deg -= 180.0;
    }
    deg
}

/// Best & Fisher rejection sampler, zero mean.
fn sample_von_mises<R: Rng>(rng: &mut R, kappa: f64) -> f64 {
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (std::f64::consts::PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}

/// Coarse occupancy grid so new cells keep `min_gap` from existing outlines.
struct Occupancy {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<(f64, f64, f64)>>,
}

impl Occupancy {
    fn new(width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        Self {
            cell,
            cols,
            rows,
            buckets: vec![Vec::new(); cols * rows],
        }
    }

    fn bucket(&self, row: f64, col: f64) -> (usize, usize) {
        (
            ((row / self.cell).floor().max(0.0) as usize).min(self.rows - 1),
            ((col / self.cell).floor().max(0.0) as usize).min(self.cols - 1),
        )
    }

    fn free(&self, row: f64, col: f64, radius: f64, gap: f64) -> bool {
        let (br, bc) = self.bucket(row, col);
        for r in br.saturating_sub(2)..(br + 3).min(self.rows) {
            for c in bc.saturating_sub(2)..(bc + 3).min(self.cols) {
                for &(orow, ocol, orad) in &self.buckets[r * self.cols + c] {
                    let d = ((orow - row).powi(2) + (ocol - col).powi(2)).sqrt();
                    if d < radius + orad + gap {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, row: f64, col: f64, radius: f64) {
        let (br, bc) = self.bucket(row, col);
        self.buckets[br * self.cols + bc].push((row, col, radius));
    }
}

/// Irregular hexagon over the middle of a `size × size` section; `variant`
/// jitters the vertices so sections differ.
pub fn fixture_outline(size: f64, variant: u64) -> Polygon {
    let j = (variant % 3) as f64 * 0.03;
    let pts = [
        [0.22 + j, 0.30],
        [0.55, 0.18 + j],
        [0.82 - j, 0.35],
        [0.78, 0.70 + j],
        [0.45 - j, 0.82],
        [0.18, 0.62],
    ];
    Polygon::new(pts.iter().map(|p| [p[0] * size, p[1] * size]).collect()).expect("fixed outline is valid")
}

/// Renders a synthetic section. Deterministic in `config.seed`; when a cell's
/// center falls inside a later population's polygon it is resampled, so later
/// polygons win where regions overlap. Cells that cannot be placed without
/// touching a neighbour are skipped, so ground truth may hold fewer than
/// `count` cells per population.
pub fn generate_synthetic_section(config: &SynthConfig) -> Result<(SectionImage, GroundTruth)> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let whole = Polygon::rect(Rect::new(0.0, 0.0, w as f64, h as f64));

    let max_size = config
        .populations
        .iter()
        .map(|p| p.mean_size + 3.0 * p.size_spread)
        .fold(4.0, f64::max);
    let mut occupancy = Occupancy::new(w, h, 2.0 * max_size + config.min_gap);
    let mut cells = Vec::new();

    for (pi, pop) in config.populations.iter().enumerate() {
        let region = pop.region.as_ref().unwrap_or(&whole);
        let later: Vec<&Polygon> = config.populations[pi + 1..]
            .iter()
            .filter_map(|p| p.region.as_ref())
            .collect();
        let (x0, y0, x1, y1) = region.bounds();
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(w as f64), y1.min(h as f64));
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let size_dist = Normal::new(pop.mean_size, pop.size_spread.max(1e-12))
            .map_err(|e| Error::invalid(e.to_string()))?;
        let ecc_dist = Normal::new(pop.eccentricity, pop.eccentricity_spread.max(1e-12))
            .map_err(|e| Error::invalid(e.to_string()))?;

        for _ in 0..pop.count {
            let semi_major = size_dist.sample(&mut rng).max(1.5);
            let ecc = ecc_dist.sample(&mut rng).clamp(0.0, 0.97);
            let semi_minor = (semi_major * (1.0 - ecc * ecc).sqrt()).max(1.0);
            let angle = sample_orientation(&mut rng, pop.orientation_mean_deg, pop.orientation_concentration);
            let intensity = (pop.intensity + rng.random_range(-5.0..5.0)).clamp(0.0, 255.0);

            let margin = semi_major + 1.0;
            let mut placed = None;
            for _ in 0..PLACEMENT_TRIES {
                let x = rng.random_range(x0..x1);
                let y = rng.random_range(y0..y1);
                if !region.contains(x, y) || later.iter().any(|p| p.contains(x, y)) {
                    continue;
                }
                let (row, col) = (y - 0.5, x - 0.5);
                if row < margin || col < margin || row > h as f64 - 1.0 - margin || col > w as f64 - 1.0 - margin {
                    continue;
                }
                if occupancy.free(row, col, semi_major, config.min_gap) {
                    placed = Some((row, col));
                    break;
                }
            }
            if let Some((row, col)) = placed {
                occupancy.insert(row, col, semi_major);
                cells.push(EllipseTruth {
                    population: pop.name.clone(),
                    center: (row, col),
                    semi_major,
                    semi_minor,
                    angle_deg: angle,
                    intensity,
                });
            }
        }
    }

    let mut canvas = vec![config.background; w * h];
    for cell in &cells {
        let (r0, c0, r1, c1) = cell.pixel_bounds(w, h);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let cov = cell.coverage(r, c);
                if cov > 0.0 {
                    let px = &mut canvas[r * w + c];
                    *px = *px * (1.0 - cov) + cell.intensity * cov;
                }
            }
        }
    }
    let noise = Normal::new(0.0, config.noise_std.max(1e-12)).map_err(|e| Error::invalid(e.to_string()))?;
    let pixels: Vec<u8> = canvas
        .into_iter()
        .map(|v| {
            let n = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let v = (v + n).round().clamp(0.0, 255.0) as u8;
            if config.invert {
                255 - v
            } else {
                v
            }
        })
        .collect();

    let mut image = SectionImage::new(config.section_id.clone(), w, h, pixels)?;
    image.resolution = config.resolution;

    let regions = config
        .populations
        .iter()
        .filter_map(|p| {
            p.region.as_ref().map(|poly| RegionTruth {
                population: p.name.clone(),
                structure: p.structure.clone(),
                polygon: poly.clone(),
            })
        })
        .collect();
    Ok((
        image,
        GroundTruth {
            section_id: config.section_id.clone(),
            cells,
            regions,
        },
    ))
}
