//! Fixed-size, rotation-normalized cell patches.

use serde::{Deserialize, Serialize};

use super::components::CellSegment;
use super::image::SectionImage;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const MIN_PATCH_SIZE: usize = 8;

/// A `size × size` zero-padded cell image with its principal axis horizontal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPatch {
    pub size: usize,
    /// Row-major intensities in `[0, 255]`, zero off the cell.
    pub pixels: Vec<f32>,
    /// Degrees in `(-90, 90]`, image coordinates (rows grow downward).
    pub rotation_angle: f64,
    pub rotation_confidence: f64,
}

impl CellPatch {
    /// Flattened intensities scaled to `[0, 1]`; the vector K-means and the
    /// diffusion map operate on.
    pub fn to_vector(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    pub fn nonzero_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0.0).count()
    }

    /// `(row, col)` of every nonzero pixel.
    pub fn support(&self) -> Vec<(f64, f64)> {
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| ((i / self.size) as f64, (i % self.size) as f64))
            .collect()
    }

    /// Runs the normalization again, treating this patch as the cell image.
    pub fn renormalize(&self) -> Result<CellPatch> {
        let support = self.support();
        if support.is_empty() {
            return Err(Error::EmptyInput("patch has no foreground".into()));
        }
        let source = MaskedCell {
            origin: (0, 0),
            rows: self.size,
            cols: self.size,
            values: self.pixels.clone(),
        };
        Ok(normalize_rotation(&source, &support, self.size))
    }
}

/// Principal-axis orientation of a pixel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub angle_deg: f64,
    pub confidence: f64,
    /// Major and minor covariance eigenvalues.
    pub eigenvalues: (f64, f64),
}

/// Second-moment orientation of `(row, col)` coordinates.
///
/// The angle is measured from the column axis toward increasing rows and lies in
/// `(-90, 90]`; confidence is `1 - λ2/λ1`, zero for isotropic sets, where the
/// angle is reported as 0.
pub fn principal_orientation(coords: &[(f64, f64)]) -> Orientation {
    let n = coords.len() as f64;
    if coords.is_empty() {
        return Orientation {
            angle_deg: 0.0,
            confidence: 0.0,
            eigenvalues: (0.0, 0.0),
        };
    }
    let (mr, mc) = coords
        .iter()
        .fold((0.0, 0.0), |acc, &(r, c)| (acc.0 + r, acc.1 + c));
    let (mr, mc) = (mr / n, mc / n);
    let (mut srr, mut scc, mut src) = (0.0, 0.0, 0.0);
    for &(r, c) in coords {
        let (dr, dc) = (r - mr, c - mc);
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    let (srr, scc, src) = (srr / n, scc / n, src / n);

    let half_diff = 0.5 * (scc - srr);
    let disc = (half_diff * half_diff + src * src).sqrt();
    let mean_var = 0.5 * (scc + srr);
    let l1 = mean_var + disc;
    let l2 = (mean_var - disc).max(0.0);

    let scale = mean_var.max(f64::MIN_POSITIVE);
    if disc <= 1e-12 * scale || l1 <= 0.0 {
        return Orientation {
            angle_deg: 0.0,
            confidence: 0.0,
            eigenvalues: (l1, l2),
        };
    }
    let mut angle = 0.5 * (2.0 * src).atan2(scc - srr).to_degrees();
    if angle <= -90.0 {
        angle += 180.0;
    }
    if angle > 90.0 {
        angle -= 180.0;
    }
    Orientation {
        angle_deg: angle,
        confidence: (1.0 - l2 / l1).clamp(0.0, 1.0),
        eigenvalues: (l1, l2),
    }
}

/// A cell's intensities over a local window, zero off the cell mask.
#[derive(Debug, Clone)]
pub struct MaskedCell {
    pub origin: (i64, i64),
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl MaskedCell {
    pub fn from_segment(image: &SectionImage, segment: &CellSegment) -> Result<Self> {
        let (r0, c0, r1, c1) = segment.bbox;
        if r1 as usize >= image.height || c1 as usize >= image.width {
            return Err(Error::invalid(format!(
                "segment {} extends past the image bounds",
                segment.cell_id
            )));
        }
        let rows = (r1 - r0 + 1) as usize;
        let cols = (c1 - c0 + 1) as usize;
        let mut values = vec![0.0f32; rows * cols];
        for &(r, c) in &segment.pixel_coords {
            let v = image.get(r as usize, c as usize) as f32;
            values[(r - r0) as usize * cols + (c - c0) as usize] = v;
        }
        Ok(Self {
            origin: (r0 as i64, c0 as i64),
            rows,
            cols,
            values,
        })
    }

    #[inline]
    fn at(&self, row: i64, col: i64) -> f32 {
        let (lr, lc) = (row - self.origin.0, col - self.origin.1);
        if lr < 0 || lc < 0 || lr >= self.rows as i64 || lc >= self.cols as i64 {
            0.0
        } else {
            self.values[lr as usize * self.cols + lc as usize]
        }
    }

    fn bilinear(&self, row: f64, col: f64) -> f32 {
        let (r0, c0) = (row.floor(), col.floor());
        let (fr, fc) = ((row - r0) as f32, (col - c0) as f32);
        let (r0, c0) = (r0 as i64, c0 as i64);
        let v00 = self.at(r0, c0);
        let v01 = self.at(r0, c0 + 1);
        let v10 = self.at(r0 + 1, c0);
        let v11 = self.at(r0 + 1, c0 + 1);
        let top = v00 + (v01 - v00) * fc;
        let bottom = v10 + (v11 - v10) * fc;
        top + (bottom - top) * fr
    }
}

/// Resamples the cell (bilinear) into a `size × size` patch centered on the
/// centroid of `coords`, rotated so the principal axis runs horizontally.
pub fn normalize_rotation(source: &MaskedCell, coords: &[(f64, f64)], size: usize) -> CellPatch {
    let orient = principal_orientation(coords);
    let n = coords.len().max(1) as f64;
    let (cr, cc) = coords
        .iter()
        .fold((0.0, 0.0), |acc, &(r, c)| (acc.0 + r / n, acc.1 + c / n));
    let (sin, cos) = orient.angle_deg.to_radians().sin_cos();
    let half = (size / 2) as f64;

    let mut pixels = vec![0.0f32; size * size];
    for (i, px) in pixels.iter_mut().enumerate() {
        let dr = (i / size) as f64 - half;
        let dc = (i % size) as f64 - half;
        let src_c = cc + dc * cos - dr * sin;
        let src_r = cr + dc * sin + dr * cos;
        *px = source.bilinear(src_r, src_c);
    }
    CellPatch {
        size,
        pixels,
        rotation_angle: orient.angle_deg,
        rotation_confidence: orient.confidence,
    }
}

/// Extracts the rotation-normalized, zero-padded patch of one segment.
/// Cells wider than the patch are center-cropped, never rescaled.
pub fn extract_patch(image: &SectionImage, segment: &CellSegment, patch_size: usize) -> Result<CellPatch> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(Error::invalid(format!(
            "patch_size must be >= {MIN_PATCH_SIZE}, got {patch_size}"
        )));
    }
    let source = MaskedCell::from_segment(image, segment)?;
    let coords: Vec<(f64, f64)> = segment
        .pixel_coords
        .iter()
        .map(|&(r, c)| (r as f64, c as f64))
        .collect();
    Ok(normalize_rotation(&source, &coords, patch_size))
}
