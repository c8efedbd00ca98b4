//! Gaussian adaptive thresholding.

use super::image::{BinaryMask, SectionImage};
use crate::error::{Error, Result};

/// Window side used for real sections; tied to typical cell size.
pub const DEFAULT_BLOCK_SIZE: usize = 101;
/// Offset from the local mean; negative selects pixels darker than their surround.
pub const DEFAULT_C: f64 = -12.0;

/// Normalized 1-D Gaussian taps for a window of `ksize`, sigma derived from the
/// window the way OpenCV does when no sigma is given.
pub fn gaussian_kernel(ksize: usize) -> Vec<f64> {
    let sigma = 0.3 * ((ksize as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    let half = (ksize as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..ksize)
        .map(|i| {
            let x = i as f64 - half;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Gaussian-weighted local mean with edge replication.
pub fn local_gaussian_mean(image: &SectionImage, block_size: usize) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let taps = gaussian_kernel(block_size);
    let r = (block_size / 2) as isize;

    let mut horiz = vec![0.0f64; w * h];
    for row in 0..h {
        let src = &image.pixels[row * w..(row + 1) * w];
        let dst = &mut horiz[row * w..(row + 1) * w];
        for (col, out) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let c = (col as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += t * src[c] as f64;
            }
            *out = acc;
        }
    }

    let mut out = vec![0.0f64; w * h];
    let mut column = vec![0.0f64; h];
    for col in 0..w {
        for row in 0..h {
            column[row] = horiz[row * w + col];
        }
        for row in 0..h {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let rr = (row as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += t * column[rr];
            }
            out[row * w + col] = acc;
        }
    }
    out
}

/// Marks a pixel foreground when `intensity < local_mean + c`.
///
/// With a negative `c` this selects pixels darker than their Gaussian-weighted
/// neighbourhood by more than `|c|`, i.e. dark cells on a bright background.
/// This is OpenCV's `THRESH_BINARY` rule applied to the inverted image.
pub fn adaptive_threshold(image: &SectionImage, block_size: usize, c: f64) -> Result<BinaryMask> {
    if block_size < 3 || block_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "block_size must be odd and >= 3, got {block_size}"
        )));
    }
    let mean = local_gaussian_mean(image, block_size);
    let bits = image
        .pixels
        .iter()
        .zip(&mean)
        .map(|(&p, &m)| (p as f64) < m + c)
        .collect();
    BinaryMask::from_bits(image.width, image.height, bits)
}
