//! 4-connected component labeling and segment persistence.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::image::BinaryMask;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_AREA: usize = 20;
pub const DEFAULT_MAX_AREA: usize = 5000;

/// One segmented cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSegment {
    pub cell_id: u64,
    pub section_id: String,
    /// `(row, col)` in raster order.
    pub pixel_coords: Vec<(u32, u32)>,
    /// `(row, col)` mean of `pixel_coords`.
    pub centroid: (f64, f64),
    /// `(min_row, min_col, max_row, max_col)`, inclusive.
    pub bbox: (u32, u32, u32, u32),
    pub area: usize,
}

impl CellSegment {
    /// Builds a segment from raw pixels, deriving centroid, bbox and area.
    pub fn from_pixels(cell_id: u64, section_id: impl Into<String>, mut pixels: Vec<(u32, u32)>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::EmptyInput("segment without pixels".into()));
        }
        pixels.sort_unstable();
        pixels.dedup();
        let n = pixels.len() as f64;
        let (mut sr, mut sc) = (0.0, 0.0);
        let mut bbox = (u32::MAX, u32::MAX, 0, 0);
        for &(r, c) in &pixels {
            sr += r as f64;
            sc += c as f64;
            bbox.0 = bbox.0.min(r);
            bbox.1 = bbox.1.min(c);
            bbox.2 = bbox.2.max(r);
            bbox.3 = bbox.3.max(c);
        }
        Ok(Self {
            cell_id,
            section_id: section_id.into(),
            area: pixels.len(),
            centroid: (sr / n, sc / n),
            bbox,
            pixel_coords: pixels,
        })
    }

    pub fn bbox_width(&self) -> u32 {
        self.bbox.3 - self.bbox.1 + 1
    }

    pub fn bbox_height(&self) -> u32 {
        self.bbox.2 - self.bbox.0 + 1
    }

    /// Row runs `(row, col_start, len)` covering the pixel set.
    pub fn runs(&self) -> Vec<(u32, u32, u32)> {
        let mut runs: Vec<(u32, u32, u32)> = Vec::new();
        for &(r, c) in &self.pixel_coords {
            match runs.last_mut() {
                Some(last) if last.0 == r && last.1 + last.2 == c => last.2 += 1,
                _ => runs.push((r, c, 1)),
            }
        }
        runs
    }

    pub fn from_runs(cell_id: u64, section_id: impl Into<String>, runs: &[(u32, u32, u32)]) -> Result<Self> {
        let pixels = runs
            .iter()
            .flat_map(|&(r, c, len)| (c..c + len).map(move |cc| (r, cc)))
            .collect();
        Self::from_pixels(cell_id, section_id, pixels)
    }
}

/// Labels 4-connected foreground components, keeping those whose area lies in
/// `[min_area, max_area]`. Output is ordered by the bbox's `(min_row, min_col)`,
/// and `cell_id`s are assigned in that order.
pub fn connected_components(
    mask: &BinaryMask,
    section_id: &str,
    min_area: usize,
    max_area: usize,
) -> Result<Vec<CellSegment>> {
    if min_area < 1 {
        return Err(Error::invalid("min_area must be >= 1"));
    }
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut found: Vec<Vec<(u32, u32)>> = Vec::new();

    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            pixels.push((r as u32, c as u32));
            let mut visit = |n: usize| {
                if mask.bits[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            };
            if r > 0 {
                visit(idx - w);
            }
            if r + 1 < h {
                visit(idx + w);
            }
            if c > 0 {
                visit(idx - 1);
            }
            if c + 1 < w {
                visit(idx + 1);
            }
        }
        if pixels.len() >= min_area && pixels.len() <= max_area {
            found.push(pixels);
        }
    }

    let mut segments = found
        .into_iter()
        .map(|p| CellSegment::from_pixels(0, section_id, p))
        .collect::<Result<Vec<_>>>()?;
    segments.sort_by_key(|s| (s.bbox.0, s.bbox.1));
    for (i, s) in segments.iter_mut().enumerate() {
        s.cell_id = i as u64;
    }
    Ok(segments)
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    cell_id: u64,
    section_id: String,
    centroid: [f64; 2],
    bbox: [u32; 4],
    area: usize,
    runs: Vec<[u32; 3]>,
}

/// Writes one JSON record per segment, pixels run-length encoded.
pub fn write_segments_ndjson<W: Write>(mut w: W, segments: &[CellSegment]) -> Result<()> {
    for s in segments {
        let rec = SegmentRecord {
            cell_id: s.cell_id,
            section_id: s.section_id.clone(),
            centroid: [s.centroid.0, s.centroid.1],
            bbox: [s.bbox.0, s.bbox.1, s.bbox.2, s.bbox.3],
            area: s.area,
            runs: s.runs().into_iter().map(|(a, b, c)| [a, b, c]).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_segments_ndjson<R: BufRead>(r: R) -> Result<Vec<CellSegment>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord = serde_json::from_str(&line)?;
        let runs: Vec<(u32, u32, u32)> = rec.runs.iter().map(|r| (r[0], r[1], r[2])).collect();
        let seg = CellSegment::from_runs(rec.cell_id, rec.section_id, &runs)?;
        if seg.area != rec.area {
            return Err(Error::format(
                "<segments>",
                format!("cell {} area {} disagrees with runs ({})", rec.cell_id, rec.area, seg.area),
            ));
        }
        out.push(seg);
    }
    Ok(out)
}
