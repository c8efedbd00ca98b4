//! Planar regions in section coordinates.
//!
//! Coordinates are continuous `(x, y) = (col, row)` with pixel `(r, c)` covering
//! `[c, c + 1) × [r, r + 1)`; a pixel belongs to a region when its center
//! `(c + 0.5, r + 0.5)` does. Cell centroids, which are means of pixel indices,
//! are shifted by the same half pixel before containment tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x0 + w) × [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Self { x0, y0, w, h }
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

/// Simple polygon, vertices `[x, y]`, implicitly closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Validates vertex count, non-zero area and simplicity.
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let p = Self { vertices };
        p.validate()?;
        Ok(p)
    }

    pub fn rect(r: Rect) -> Self {
        Self {
            vertices: vec![
                [r.x0, r.y0],
                [r.x0 + r.w, r.y0],
                [r.x0 + r.w, r.y0 + r.h],
                [r.x0, r.y0 + r.h],
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 3 {
            return Err(Error::invalid("polygon needs at least 3 vertices"));
        }
        if self.vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("polygon has non-finite vertices"));
        }
        if self.area() <= 0.0 {
            return Err(Error::invalid("polygon has zero area"));
        }
        if !self.is_simple() {
            return Err(Error::invalid("polygon is self-intersecting"));
        }
        Ok(())
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            s += x0 * y1 - x1 * y0;
        }
        (s * 0.5).abs()
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |b, &[x, y]| (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y)),
        )
    }

    /// Even-odd containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) {
                let x_cross = xi + (y - yi) * (xj - xi) / (yj - yi);
                if x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edge = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in i + 1..n {
                // adjacent edges share a vertex by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if (o1 > 0.0) != (o2 > 0.0) && (o3 > 0.0) != (o4 > 0.0) && o1 != 0.0 && o2 != 0.0 && o3 != 0.0 && o4 != 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// A query region: rectangle or polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect(Rect),
    Polygon(Polygon),
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Region::Rect(r) => r.contains(x, y),
            Region::Polygon(p) => p.contains(x, y),
        }
    }

    /// Containment of a cell centroid given in `(row, col)` pixel-index terms.
    #[inline]
    pub fn contains_centroid(&self, centroid: (f64, f64)) -> bool {
        self.contains(centroid.1 + 0.5, centroid.0 + 0.5)
    }

    #[inline]
    pub fn contains_pixel(&self, row: u32, col: u32) -> bool {
        self.contains(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            Region::Rect(r) => (r.x0, r.y0, r.x0 + r.w, r.y0 + r.h),
            Region::Polygon(p) => p.bounds(),
        }
    }

    /// Number of pixel centers inside the region (its rasterized area).
    pub fn pixel_area(&self) -> usize {
        if let Region::Rect(r) = self {
            // integers k with lo <= k + 0.5 < hi
            let count = |lo: f64, hi: f64| ((hi - 0.5).ceil() - (lo - 0.5).ceil()).max(0.0) as usize;
            let cols = count(r.x0.max(0.0), r.x0 + r.w);
            let rows = count(r.y0.max(0.0), r.y0 + r.h);
            return cols * rows;
        }
        let (x0, y0, x1, y1) = self.bounds();
        let (c0, r0) = (x0.floor().max(0.0) as i64, y0.floor().max(0.0) as i64);
        let (c1, r1) = (x1.ceil() as i64, y1.ceil() as i64);
        let mut n = 0;
        for r in r0..r1 {
            for c in c0..c1 {
                if self.contains(c as f64 + 0.5, r as f64 + 0.5) {
                    n += 1;
                }
            }
        }
        n
    }
}
