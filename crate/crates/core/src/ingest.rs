//! PNG loading, bilinear resizing and grouping into image batches.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, ImageBatch};

/// Decodes a PNG into a 3-channel tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<FeatureTensor<f64>> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(FeatureTensor::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f64 / 65535.0))
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(t: &FeatureTensor<f64>, height: usize, width: usize) -> Result<FeatureTensor<f64>> {
    let (c, h, w) = t.shape();
    if height == 0 || width == 0 || h == 0 || w == 0 {
        return Err(Error::Argument("resize dimensions must be positive".into()));
    }
    if (h, w) == (height, width) {
        return Ok(t.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let s = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(height, h);
    let xs = axis(width, w);
    Ok(FeatureTensor::from_fn(c, height, width, |ch, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = t.get(ch, y0, x0) * (1.0 - fx) + t.get(ch, y0, x1) * fx;
        let bot = t.get(ch, y1, x0) * (1.0 - fx) + t.get(ch, y1, x1) * fx;
        (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0)
    }))
}

/// PNG files of `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads every decodable PNG in `dir`, resizes to `height`×`width` and
/// groups `n` at a time in file-name order. Undecodable files are skipped;
/// a trailing partial group is dropped.
pub fn ingest(dir: &Path, height: usize, width: usize, n: usize) -> Result<Vec<ImageBatch<f64>>> {
    if n == 0 {
        return Err(Error::Argument("group size must be at least 1".into()));
    }
    let mut images = Vec::new();
    for path in list_pngs(dir)? {
        match load_png(&path) {
            Ok(img) => images.push(resize_bilinear(&img, height, width)?),
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if images.len() < n {
        return Err(Error::Data(format!(
            "{} holds {} usable PNG images, need at least {n}",
            dir.display(),
            images.len()
        )));
    }
    if images.len() % n != 0 {
        log::warn!("dropping {} trailing images that do not fill a group", images.len() % n);
    }
    let usable = images.len() - images.len() % n;
    images.truncate(usable);
    let mut groups = Vec::with_capacity(usable / n);
    let mut it = images.into_iter();
    for _ in 0..usable / n {
        groups.push(ImageBatch::new(it.by_ref().take(n).collect())?);
    }
    Ok(groups)
}
