use std::path::Path;

use image::{GrayImage, Luma};
use nalgebra::DMatrix;

use crate::data_io::{ModelArchive, ModelKind};
use crate::error::{Error, Result};

/// Gray level used for separators and constant tiles.
const GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderSummary {
    pub tiles: usize,
    /// `(height, width)` of one tile in pixels.
    pub tile_shape: (usize, usize),
    /// `(rows, cols)` of the tile grid.
    pub grid: (usize, usize),
}

fn tile_shape(n: usize, shape: Option<(usize, usize)>) -> Result<(usize, usize)> {
    match shape {
        Some((h, w)) if h * w == n && h > 0 => Ok((h, w)),
        Some(_) => Err(Error::ShapeUnknown(n)),
        None => {
            let side = (n as f64).sqrt().round() as usize;
            if side > 0 && side * side == n {
                Ok((side, side))
            } else {
                Err(Error::ShapeUnknown(n))
            }
        }
    }
}

/// Tiles `m` (one column per tile, row-major pixels) with per-tile min/max scaling.
pub fn tile_columns(m: &DMatrix<f64>, shape: Option<(usize, usize)>) -> Result<(GrayImage, RenderSummary)> {
    let (h, w) = tile_shape(m.nrows(), shape)?;
    let p = m.ncols();
    if p == 0 {
        return Err(Error::InvalidConfig("nothing to render: matrix has no columns".into()));
    }
    let cols = (p as f64).sqrt().ceil() as usize;
    let rows = p.div_ceil(cols);
    let width = cols * (w + 1) + 1;
    let height = rows * (h + 1) + 1;
    let mut img = GrayImage::from_pixel(width as u32, height as u32, Luma([GRAY]));
    for (t, col) in m.column_iter().enumerate() {
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let x0 = 1 + (t % cols) * (w + 1);
        let y0 = 1 + (t / cols) * (h + 1);
        for (i, &v) in col.iter().enumerate() {
            let level = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { GRAY };
            img.put_pixel((x0 + i % w) as u32, (y0 + i / w) as u32, Luma([level]));
        }
    }
    Ok((img, RenderSummary { tiles: p, tile_shape: (h, w), grid: (rows, cols) }))
}

/// Columns shown for an archive: `W` for an RBM, every expert for a PoE,
/// and `xi` (falling back to `J`) for a Hopfield network.
pub fn archive_columns(archive: &ModelArchive) -> Result<DMatrix<f64>> {
    match archive.kind {
        ModelKind::Rbm => archive.matrix("W"),
        ModelKind::Hopfield => archive.matrix("xi").or_else(|_| archive.matrix("J")),
        ModelKind::Poe => {
            let mut experts = Vec::new();
            while let Ok(w) = archive.matrix::<f64>(&format!("W{}", experts.len())) {
                experts.push(w);
            }
            let total = experts.iter().map(|w| w.ncols()).sum();
            let mut all = DMatrix::zeros(archive.n, total);
            let mut at = 0;
            for w in &experts {
                all.columns_mut(at, w.ncols()).copy_from(w);
                at += w.ncols();
            }
            Ok(all)
        }
    }
}

/// Writes a PNG grid with one tile per column of the archive's weights or patterns.
pub fn render_weights(archive: &ModelArchive, out: impl AsRef<Path>, shape: Option<(usize, usize)>) -> Result<RenderSummary> {
    let (img, summary) = tile_columns(&archive_columns(archive)?, shape)?;
    let out = out.as_ref();
    img.save_with_format(out, image::ImageFormat::Png).map_err(|e| Error::Image(format!("{}: {e}", out.display())))?;
    Ok(summary)
}
