use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use super::DatasetError;
use crate::stain::Patch;

/// Decoded RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Self {
        assert_eq!(pixels.len(), width * height, "raster size mismatch");
        Self {
            width,
            height,
            pixels,
        }
    }

    /// Decodes an image file. 8-bit sources map as `v/255`, deeper ones as
    /// `v/65535`; alpha is dropped.
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let img = image::open(path).map_err(|e| DatasetError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageRgb8(_)
            | DynamicImage::ImageRgba8(_) => img
                .to_rgb8()
                .pixels()
                .map(|p| p.0.map(|v| f64::from(v) / 255.0))
                .collect(),
            _ => img
                .to_rgb16()
                .pixels()
                .map(|p| p.0.map(|v| f64::from(v) / 65535.0))
                .collect(),
        };
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn into_patch(self) -> Result<Patch, DatasetError> {
        Ok(Patch::new(self.width, self.height, self.pixels)?)
    }
}

/// Crops a `side`×`side` window centered on `center` (pixel coordinates,
/// rounded). Pixels outside the raster are filled with white and counted in
/// the patch's padded fraction.
pub fn extract_patch(
    raster: &Raster,
    center: (f64, f64),
    side: usize,
) -> Result<Patch, DatasetError> {
    if side == 0 {
        return Err(DatasetError::Stain(crate::stain::StainError::InvalidPatch(
            "patch side must be at least 1".into(),
        )));
    }
    let half = (side / 2) as i64;
    let x0 = center.0.round() as i64 - half;
    let y0 = center.1.round() as i64 - half;
    let mut pixels = Vec::with_capacity(side * side);
    let mut padded = 0usize;
    for dy in 0..side as i64 {
        let y = y0 + dy;
        for dx in 0..side as i64 {
            let x = x0 + dx;
            if x >= 0 && y >= 0 && (x as usize) < raster.width && (y as usize) < raster.height {
                pixels.push(raster.pixels[y as usize * raster.width + x as usize]);
            } else {
                pixels.push([1.0; 3]);
                padded += 1;
            }
        }
    }
    Ok(Patch::with_padding(
        side,
        side,
        pixels,
        padded as f64 / (side * side) as f64,
    )?)
}

/// Writes a patch as a 16-bit RGB PNG.
pub fn write_patch_png16(patch: &Patch, path: &Path) -> Result<(), DatasetError> {
    let mut buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::new(patch.width() as u32, patch.height() as u32);
    for (dst, src) in buf.pixels_mut().zip(patch.pixels()) {
        *dst = Rgb(src.map(|v| (v * 65535.0).round().clamp(0.0, 65535.0) as u16));
    }
    buf.save(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_raster(w: usize, h: usize) -> Raster {
        let pixels = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                [x as f64 / w as f64, y as f64 / h as f64, 0.5]
            })
            .collect();
        Raster::new(w, h, pixels)
    }

    #[test]
    fn full_image_crop() {
        let r = gradient_raster(256, 256);
        let p = extract_patch(&r, (128.0, 128.0), 256).unwrap();
        assert_eq!(p.padded_fraction(), 0.0);
        assert_eq!(p.pixels(), &r.pixels[..]);
    }

    #[test]
    fn corner_crop_pads_three_quadrants() {
        let r = gradient_raster(256, 256);
        let p = extract_patch(&r, (0.0, 0.0), 256).unwrap();
        assert_eq!(p.pixel_count(), 256 * 256);
        assert_eq!(p.padded_fraction(), 0.75);
        assert_eq!(p.pixels()[0], [1.0; 3]);
        // in-bounds quadrant is the raster's top-left 128×128 block
        assert_eq!(p.pixels()[128 * 256 + 128], r.pixels[0]);
    }

    #[test]
    fn checkerboard_sub_block() {
        // 4×4 checkerboard of black/white with a marked cell
        let mut pixels = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let v = if (x + y) % 2 == 0 { 0.0 } else { 1.0 };
                pixels.push([v, v, if x == 2 && y == 1 { 0.25 } else { v }]);
            }
        }
        let r = Raster::new(4, 4, pixels);
        let p = extract_patch(&r, (2.0, 2.0), 2).unwrap();
        // rows 1..=2, columns 1..=2
        assert_eq!(
            p.pixels(),
            &[
                [0.0, 0.0, 0.0],
                [1.0, 1.0, 0.25],
                [1.0, 1.0, 1.0],
                [0.0, 0.0, 0.0]
            ]
        );
        assert_eq!(p.padded_fraction(), 0.0);
    }

    #[test]
    fn far_outside_is_all_padding() {
        let r = gradient_raster(8, 8);
        let p = extract_patch(&r, (100.0, 3.0), 5).unwrap();
        assert_eq!(p.padded_fraction(), 1.0);
        assert_eq!(p.pixel_count(), 25);
        assert!(extract_patch(&r, (1.0, 1.0), 0).is_err());
    }

    #[test]
    fn png16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let patch = Patch::new(2, 1, vec![[0.0, 0.5, 1.0], [1e-3, 0.25, 0.75]]).unwrap();
        write_patch_png16(&patch, &path).unwrap();
        let back = Raster::open(&path).unwrap().into_patch().unwrap();
        for (a, b) in patch.pixels().iter().zip(back.pixels()) {
            for j in 0..3 {
                assert!((a[j] - b[j]).abs() <= 0.5 / 65535.0 + 1e-15);
            }
        }
        assert!(matches!(
            Raster::open(&dir.path().join("missing.png")),
            Err(DatasetError::Decode { .. })
        ));
    }

    #[test]
    fn png8_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p8.png");
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
            ImageBuffer::from_raw(1, 1, vec![255, 51, 0]).unwrap();
        img.save(&path).unwrap();
        let r = Raster::open(&path).unwrap();
        assert_eq!(r.pixels, vec![[1.0, 0.2, 0.0]]);
    }
}
