//! PNG load/save for float rasters. Values map u8 0..=255 <-> f32 0..=1.

use super::{IoError, Result};
use crate::geom::ImageBuf;
use std::path::Path;

pub fn load_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)
        .map_err(|e| IoError::Image { path: path.display().to_string(), source: e })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect();
    Ok(ImageBuf::from_data(h, w, 3, data))
}

pub fn save_png(path: &Path, img: &ImageBuf) -> Result<()> {
    assert_eq!(img.channels, 3, "PNG output is RGB");
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buffer =
        image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("sized above");
    buffer
        .save(path)
        .map_err(|e| IoError::Image { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = ImageBuf::new(5, 7, 3);
        for y in 0..5 {
            for x in 0..7 {
                for c in 0..3 {
                    img.set(y, x, c, ((y * 7 + x + c) % 11) as f32 / 10.0);
                }
            }
        }
        save_png(&path, &img).unwrap();
        let loaded = load_png(&path).unwrap();
        assert_eq!((loaded.height, loaded.width), (5, 7));
        for (a, b) in img.data().iter().zip(loaded.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
