use std::io::Write;

use image::{Rgb, RgbImage};

use crate::error::Result;

const SIZE: u32 = 480;
const MARGIN: u32 = 40;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189], [255, 127, 14], [23, 190, 207]];

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < SIZE && (py as u32) < SIZE {
                img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

fn to_px(fpr: f64, tpr: f64) -> (f64, f64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    (MARGIN as f64 + fpr * span, (SIZE - MARGIN) as f64 - tpr * span)
}

/// ROC curves on a unit square with the chance diagonal.
pub fn render_roc(curves: &[(String, Vec<(f64, f64)>)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let axis = [0, 0, 0];
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)];
    for w in corners.windows(2) {
        line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), axis);
    }
    for k in 1..10 {
        let t = k as f64 / 10.0;
        line(&mut img, to_px(t, 0.0), to_px(t, -0.015), axis);
        line(&mut img, to_px(0.0, t), to_px(-0.015, t), axis);
    }
    line(&mut img, to_px(0.0, 0.0), to_px(1.0, 1.0), [170, 170, 170]);
    for (i, (_, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for w in pts.windows(2) {
            line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color);
        }
    }
    img
}

/// Long-format plot data: `structure, fpr, tpr`.
pub fn write_roc_csv<W: Write>(curves: &[(String, Vec<(f64, f64)>)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["structure", "fpr", "tpr"])?;
    for (name, pts) in curves {
        for (f, t) in pts {
            out.write_record([name.clone(), f.to_string(), t.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
