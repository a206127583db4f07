use std::io::Cursor;

use image::{ImageBuffer as PixelBuffer, ImageFormat, Rgb, Rgba};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions {0}x{1} do not match buffer")]
    Dimensions(u32, u32),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

/// Three-channel float image with optional coverage alpha. Rendered frames
/// are clamped to [0, 1]; intermediate buffers (pre-clamp renders, Sobel
/// responses) use the same type without that bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Option<Vec<f64>>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, rgb: vec![[0.0; 3]; (width * height) as usize], alpha: None }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f64; 3]) -> Self {
        let rgb = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, rgb, alpha: None }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.rgb[(y * self.width + x) as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.rgb.len()
    }

    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            rgb: self.rgb.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
            alpha: self.alpha.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rgb.iter().flatten().all(|v| v.is_finite())
    }

    /// 8-bit PNG, RGBA when alpha is present.
    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = Cursor::new(Vec::new());
        let res = match &self.alpha {
            Some(alpha) => {
                let buf = PixelBuffer::<Rgba<u8>, _>::from_fn(self.width, self.height, |x, y| {
                    let i = (y * self.width + x) as usize;
                    let p = self.rgb[i];
                    Rgba([q(p[0]), q(p[1]), q(p[2]), q(alpha[i])])
                });
                buf.write_to(&mut out, ImageFormat::Png)
            }
            None => {
                let buf = PixelBuffer::<Rgb<u8>, _>::from_fn(self.width, self.height, |x, y| {
                    let p = self.get(x, y);
                    Rgb([q(p[0]), q(p[1]), q(p[2])])
                });
                buf.write_to(&mut out, ImageFormat::Png)
            }
        };
        res.map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// 16-bit PNG mapping `[-range, range]` linearly onto the full code range,
    /// for inspecting signed gradient images.
    pub fn to_png16_signed(&self, range: f64) -> Result<Vec<u8>, ImageError> {
        let q = |v: f64| (((v / range).clamp(-1.0, 1.0) * 0.5 + 0.5) * 65535.0).round() as u16;
        let buf = PixelBuffer::<Rgb<u16>, _>::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        });
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png).map_err(|e| ImageError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }
}
