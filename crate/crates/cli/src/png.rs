//! 8-bit PNG previews, linearly windowed to the 1st and 99th percentiles.

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use jointrecon::grid::ImageGrid;

use crate::error::{CliError, CliResult};
use crate::grd::write_atomic;

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (i, t) = (pos.floor() as usize, pos.fract());
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] * (1.0 - t) + sorted[j] * t
}

/// Gray levels of a 2-D image (complex images by magnitude), row-major.
pub fn windowed(img: &ImageGrid<f64>) -> GrayImage {
    let m = img.to_real();
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut sorted: Vec<f64> = m.values().iter().copied().filter(|x| x.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = if sorted.is_empty() { (0.0, 1.0) } else { (percentile(&sorted, 0.01), percentile(&sorted, 0.99)) };
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = m.values()[y as usize * cols + x as usize];
        let t = if v.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        Luma([(t * 255.0).round() as u8])
    })
}

/// Tiles laid out row by row with a white gutter; `None` tiles stay black.
pub fn montage(tiles: &[Vec<Option<GrayImage>>], gutter: u32) -> GrayImage {
    let (mut tw, mut th) = (1, 1);
    for t in tiles.iter().flatten().flatten() {
        tw = tw.max(t.width());
        th = th.max(t.height());
    }
    let ncols = tiles.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let nrows = tiles.len() as u32;
    let width = ncols * tw + (ncols + 1) * gutter;
    let height = nrows * th + (nrows + 1) * gutter;
    let mut out = GrayImage::from_pixel(width.max(1), height.max(1), Luma([255]));
    for (r, row) in tiles.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let x0 = gutter + c as u32 * (tw + gutter);
            let y0 = gutter + r as u32 * (th + gutter);
            for y in 0..th {
                for x in 0..tw {
                    let p = tile.as_ref().and_then(|t| t.get_pixel_checked(x, y)).copied().unwrap_or(Luma([0]));
                    out.put_pixel(x0 + x, y0 + y, p);
                }
            }
        }
    }
    out
}

pub fn save(path: &Path, img: &GrayImage) -> CliResult<()> {
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| CliError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    write_atomic(path, bytes.get_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use jointrecon::grid::Geometry;

    #[test]
    fn window_clips_outliers() {
        let mut values: Vec<f64> = (0..400).map(|k| (k % 20) as f64).collect();
        values[0] = 1e6;
        let img = ImageGrid::real(Geometry::square(20), values).unwrap();
        let g = windowed(&img);
        assert_eq!(g.get_pixel(0, 0).0[0], 255);
        // window [0, 19]: value k maps to round(255 k / 19)
        assert_eq!(g.get_pixel(0, 1).0[0], 0);
        assert_eq!(g.get_pixel(1, 0).0[0], 13);
        assert_eq!(g.get_pixel(10, 0).0[0], 134);
        assert_eq!(g.get_pixel(19, 0).0[0], 255);
    }

    #[test]
    fn montage_layout() {
        let t = GrayImage::from_pixel(3, 2, Luma([7]));
        let m = montage(&[vec![Some(t.clone()), None], vec![Some(t)]], 1);
        assert_eq!((m.width(), m.height()), (2 * 3 + 3, 2 * 2 + 3));
        assert_eq!(m.get_pixel(1, 1).0[0], 7);
        assert_eq!(m.get_pixel(5, 1).0[0], 0);
        assert_eq!(m.get_pixel(0, 0).0[0], 255);
    }
}
