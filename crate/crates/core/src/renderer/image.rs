use std::path::Path;

use nalgebra::Vector3;

use super::RenderError;

#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub data: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ColorImage {
    pub fn filled(width: usize, height: usize, c: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            data: vec![c; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &ColorImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Row-major `H×W×3` float32 buffer.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect()
    }

    pub fn from_f32(width: usize, height: usize, v: &[f32]) -> Option<Self> {
        if v.len() != width * height * 3 {
            return None;
        }
        Some(Self {
            width,
            height,
            data: v
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let buf: Vec<u8> = self
            .data
            .iter()
            .flat_map(|p| p.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect::<Vec<_>>())
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
            .ok_or_else(|| RenderError::Image("buffer size".into()))?
            .save(path)
            .map_err(|e| RenderError::Image(e.to_string()))
    }

    /// Loads any image the `image` crate decodes, as RGB in `[0,1]`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let img = image::open(path)
            .map_err(|e| RenderError::Image(e.to_string()))?
            .to_rgb32f();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img
                .pixels()
                .map(|p| Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
        })
    }
}

impl ScalarImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 16-bit grayscale, `value / max_value` mapped to the full range.
    pub fn save_png16(&self, path: impl AsRef<Path>, max_value: f64) -> Result<(), RenderError> {
        let scale = if max_value > 0.0 { 65535.0 / max_value } else { 0.0 };
        let buf: Vec<u16> = self
            .data
            .iter()
            .map(|v| (v * scale).round().clamp(0.0, 65535.0) as u16)
            .collect();
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(self.width as u32, self.height as u32, buf)
            .ok_or_else(|| RenderError::Image("buffer size".into()))?
            .save(path)
            .map_err(|e| RenderError::Image(e.to_string()))
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    /// Binary erosion with the 3×3 square kernel; outside pixels are false.
    pub fn erode(&self) -> Mask {
        self.morph(true)
    }

    /// Binary dilation with the 3×3 square kernel.
    pub fn dilate(&self) -> Mask {
        self.morph(false)
    }

    fn morph(&self, erode: bool) -> Mask {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = Mask::new(self.width, self.height, false);
        for y in 0..h {
            for x in 0..w {
                let mut all = true;
                let mut any = false;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        let v = nx >= 0 && ny >= 0 && nx < w && ny < h && self.data[(ny * w + nx) as usize];
                        all &= v;
                        any |= v;
                    }
                }
                out.data[(y * w + x) as usize] = if erode { all } else { any };
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let buf: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .ok_or_else(|| RenderError::Image("buffer size".into()))?
            .save(path)
            .map_err(|e| RenderError::Image(e.to_string()))
    }

    /// Nonzero pixels are true.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let img = image::open(path)
            .map_err(|e| RenderError::Image(e.to_string()))?
            .to_luma16();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p[0] != 0).collect(),
        })
    }
}
