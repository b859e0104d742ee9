//! 8-bit RGB PNG reading and writing for `[H, W, 3]` images in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `pixels` (`height * width * 3` values in `[0, 1]`) as an RGB PNG.
pub fn save_rgb(path: &Path, pixels: &[f32], width: usize, height: usize) -> Result<()> {
    assert_eq!(pixels.len(), width * height * 3);
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_u8(v)).collect();
    save_rgb8(path, &bytes, width, height)
}

pub fn save_rgb8(path: &Path, bytes: &[u8], width: usize, height: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Reads an 8-bit RGB PNG into values in `[0, 1]`; returns `(pixels, width, height)`.
pub fn load_rgb(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: String| Error::Data(format!("{}: {e}", path.display()));
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let pixels = buf[..w * h * 3].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((pixels, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_on_the_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let pixels: Vec<f32> = (0..5 * 3 * 3).map(|i| (i * 7 % 256) as f32 / 255.0).collect();
        save_rgb(&path, &pixels, 5, 3).unwrap();
        let (back, w, h) = load_rgb(&path).unwrap();
        assert_eq!((w, h), (5, 3));
        assert_eq!(back, pixels);
    }
}
