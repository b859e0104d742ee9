//! Token-level visualisation of teacher patch predictions.
//!
//! Each token covers a square footprint of the input. Tokens whose teacher
//! prediction is not the normal class are painted with a translucent red
//! overlay, and a heatmap shows `1 - p(normal)` per token.

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::imageio;
use crate::model::PicT;
use crate::refiner::argmax;
use crate::teacher::Rect;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenOverlay {
    pub grid_side: usize,
    /// Pixels per token along each axis.
    pub footprint: usize,
    /// Per token: teacher argmax is a distress class.
    pub distressed: Vec<bool>,
    /// Per token: `1 - p(normal)`.
    pub scores: Vec<f64>,
}

impl TokenOverlay {
    pub fn from_probs(probs: &[f32], classes: usize, grid_side: usize, footprint: usize) -> Self {
        let rows: Vec<Vec<f64>> = probs.chunks(classes).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        Self {
            grid_side,
            footprint,
            distressed: rows.iter().map(|r| argmax(r) != RunConfig::NORMAL_CLASS).collect(),
            scores: rows.iter().map(|r| 1.0 - r[RunConfig::NORMAL_CLASS]).collect(),
        }
    }

    pub fn rect(&self, token: usize) -> Rect {
        token_rect(token, self.grid_side, self.footprint)
    }

    /// Per-pixel flag of the red overlay on a `size x size` image.
    pub fn pixel_mask(&self, size: usize) -> Vec<bool> {
        let mut mask = vec![false; size * size];
        for (t, _) in self.distressed.iter().enumerate().filter(|(_, &d)| d) {
            let r = self.rect(t);
            for y in r.top..r.top + r.height {
                mask[y * size + r.left..y * size + r.left + r.width].fill(true);
            }
        }
        mask
    }

    pub fn masked_fraction(&self) -> f64 {
        self.distressed.iter().filter(|&&d| d).count() as f64 / self.distressed.len() as f64
    }
}

/// Footprint of token `index` on a row-major `grid x grid` token grid.
pub fn token_rect(index: usize, grid: usize, footprint: usize) -> Rect {
    Rect {
        top: (index / grid) * footprint,
        left: (index % grid) * footprint,
        height: footprint,
        width: footprint,
    }
}

/// Teacher overlays for a list of images.
pub fn overlays(model: &PicT, images: &[&[f32]]) -> Result<Vec<TokenOverlay>> {
    let b = &model.config.backbone;
    let classes = model.config.num_classes();
    Ok(model
        .teacher_patch_probs(images)?
        .iter()
        .map(|p| TokenOverlay::from_probs(p, classes, b.grid_side(), b.receptive_patch_pixels()))
        .collect())
}

/// The input with masked tokens blended half-way towards red, as RGB bytes.
pub fn render_overlay(image: &[f32], size: usize, overlay: &TokenOverlay) -> Vec<u8> {
    let mask = overlay.pixel_mask(size);
    let mut out = Vec::with_capacity(size * size * 3);
    for (i, px) in image.chunks(3).enumerate() {
        let tint = if mask[i] { [1.0, 0.0, 0.0] } else { [px[0], px[1], px[2]] };
        for c in 0..3 {
            out.push(imageio::to_u8(0.5 * px[c] + 0.5 * tint[c]));
        }
    }
    out
}

/// Per-token `1 - p(normal)` upsampled to the image, dark blue (0) to red (1).
pub fn render_heatmap(size: usize, overlay: &TokenOverlay) -> Vec<u8> {
    let mut out = vec![0u8; size * size * 3];
    for (t, &s) in overlay.scores.iter().enumerate() {
        let r = overlay.rect(t);
        let s = s.clamp(0.0, 1.0) as f32;
        let rgb = [imageio::to_u8(s), imageio::to_u8(1.0 - (2.0 * s - 1.0).abs()), imageio::to_u8(1.0 - s)];
        for y in r.top..r.top + r.height {
            for x in r.left..r.left + r.width {
                out[(y * size + x) * 3..][..3].copy_from_slice(&rgb);
            }
        }
    }
    out
}

/// Square (Chebyshev) dilation of a pixel mask by `radius` pixels.
pub fn dilate(mask: &[bool], size: usize, radius: usize) -> Vec<bool> {
    let pass = |src: &[bool], horizontal: bool| {
        let mut dst = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                let (p, q) = if horizontal { (x, y) } else { (y, x) };
                let lo = p.saturating_sub(radius);
                let hi = (p + radius).min(size - 1);
                dst[y * size + x] = (lo..=hi).any(|v| {
                    let (xx, yy) = if horizontal { (v, q) } else { (q, v) };
                    src[yy * size + xx]
                });
            }
        }
        dst
    };
    pass(&pass(mask, true), false)
}

/// Red-masked pixels and how many of them fall on the ground-truth mask
/// dilated by one token footprint.
pub fn localization_hits(overlay: &TokenOverlay, truth: &[bool], size: usize) -> (usize, usize) {
    let red = overlay.pixel_mask(size);
    let grown = dilate(truth, size, overlay.footprint);
    let total = red.iter().filter(|&&r| r).count();
    let hits = red.iter().zip(&grown).filter(|(&r, &g)| r && g).count();
    (total, hits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationReport {
    pub distressed_images: usize,
    pub red_pixels: usize,
    pub hits: usize,
    /// Mean fraction of masked tokens on normal images.
    pub normal_masked_fraction: f64,
}

impl LocalizationReport {
    /// Share of red pixels inside the grown ground truth; 0 with no red.
    pub fn precision(&self) -> f64 {
        if self.red_pixels == 0 {
            0.0
        } else {
            self.hits as f64 / self.red_pixels as f64
        }
    }
}

/// Teacher localization against the regenerated ground-truth masks of `data`.
pub fn localization_report(model: &PicT, data: &Dataset) -> Result<LocalizationReport> {
    let size = data.size;
    let images: Vec<&[f32]> = data.images.iter().map(|v| v.as_slice()).collect();
    let all = overlays(model, &images)?;
    let mut report = LocalizationReport {
        distressed_images: 0,
        red_pixels: 0,
        hits: 0,
        normal_masked_fraction: 0.0,
    };
    let mut normals = 0;
    for (entry, overlay) in data.manifest.entries.iter().zip(&all) {
        if entry.class_index == RunConfig::NORMAL_CLASS {
            normals += 1;
            report.normal_masked_fraction += overlay.masked_fraction();
            continue;
        }
        let truth = data.manifest.regenerate(entry, size)?.mask;
        let (red, hits) = localization_hits(overlay, &truth, size);
        report.distressed_images += 1;
        report.red_pixels += red;
        report.hits += hits;
    }
    if normals > 0 {
        report.normal_masked_fraction /= normals as f64;
    }
    Ok(report)
}

/// Writes `<stem>_overlay.png` and `<stem>_heatmap.png` for each image into
/// `out_dir` and returns the written paths.
pub fn visualize(ckpt_path: &Path, images: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = PicT::from_checkpoint(&Checkpoint::load(ckpt_path)?)?;
    let size = model.config.backbone.image_size;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for path in images {
        let (px, w, h) = imageio::load_rgb(path)?;
        if (w, h) != (size, size) {
            return Err(Error::Data(format!("{}: {w}x{h}, model expects {size}x{size}", path.display())));
        }
        let overlay = overlays(&model, &[&px])?.remove(0);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        for (suffix, bytes) in [
            ("overlay", render_overlay(&px, size, &overlay)),
            ("heatmap", render_heatmap(size, &overlay)),
        ] {
            let dst = out_dir.join(format!("{stem}_{suffix}.png"));
            imageio::save_rgb8(&dst, &bytes, size, size)?;
            written.push(dst);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn footprints_tile_the_image_exactly() {
        let (grid, fp) = (4, 16);
        let mut cover = vec![0u8; 64 * 64];
        for t in 0..grid * grid {
            let r = token_rect(t, grid, fp);
            for y in r.top..r.top + r.height {
                for x in r.left..r.left + r.width {
                    cover[y * 64 + x] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn overlay_marks_only_distressed_tokens() {
        let probs = [0.9f32, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7];
        let o = TokenOverlay::from_probs(&probs, 2, 2, 2);
        assert_eq!(o.distressed, vec![false, true, false, true]);
        let m = o.pixel_mask(4);
        let expect: Vec<bool> = (0..16).map(|i| (i % 4) >= 2).collect();
        assert_eq!(m, expect);
        assert_eq!(o.masked_fraction(), 0.5);
    }

    #[test]
    fn dilation_grows_a_point_into_a_square() {
        let mut m = vec![false; 49];
        m[3 * 7 + 3] = true;
        let d = dilate(&m, 7, 1);
        let n: usize = d.iter().filter(|&&v| v).count();
        assert_eq!(n, 9);
        assert!(d[2 * 7 + 2] && d[4 * 7 + 4] && !d[1 * 7 + 3]);
    }

    #[test]
    fn localization_counts_hits_inside_the_grown_mask() {
        let probs = [0.1f32, 0.9, 0.1, 0.9, 0.9, 0.1, 0.9, 0.1];
        let o = TokenOverlay::from_probs(&probs, 2, 2, 4);
        let mut truth = vec![false; 64];
        truth[0] = true;
        // Red covers rows 0..4 (32 px); the truth at (0,0) grown by 4 covers
        // columns 0..=4 of rows 0..=4, so 4 x 5 red pixels hit.
        assert_eq!(localization_hits(&o, &truth, 8), (32, 20));
    }
}
