//! In-memory image plane: CHW layout, f32 intensities in [0, 1].

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageBuf {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = ImageBuf::new(height, width, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x));
                }
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Pixel access with edge replication for out-of-bounds coordinates.
    #[inline]
    pub fn get_clamped(&self, c: usize, y: i64, x: i64) -> f32 {
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        self.get(c, y, x)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Horizontally mirrored copy (x -> width-1-x).
    pub fn flipped_horizontal(&self) -> ImageBuf {
        ImageBuf::from_fn(self.height, self.width, self.channels, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    /// Single-channel luminance (Rec. 601) of an RGB image; identity for
    /// single-channel input.
    pub fn gray(&self) -> ImageBuf {
        if self.channels == 1 {
            return self.clone();
        }
        ImageBuf::from_fn(self.height, self.width, 1, |_, y, x| {
            0.299 * self.get(0, y, x) + 0.587 * self.get(1, y, x) + 0.114 * self.get(2, y, x)
        })
    }

    pub fn load_rgb(path: &Path) -> Result<ImageBuf> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageBuf::new(h, w, 3);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, y as usize, x as usize, p.0[c] as f32 / 255.0);
            }
        }
        Ok(out)
    }

    pub fn load_gray(path: &Path) -> Result<ImageBuf> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageBuf::new(h, w, 1);
        for (x, y, p) in img.enumerate_pixels() {
            out.set(0, y as usize, x as usize, p.0[0] as f32 / 255.0);
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self.channels {
            3 => {
                let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
                for (x, y, p) in img.enumerate_pixels_mut() {
                    for c in 0..3 {
                        p.0[c] = quant(self.get(c, y as usize, x as usize));
                    }
                }
                img.save(path)
            }
            1 => {
                let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
                for (x, y, p) in img.enumerate_pixels_mut() {
                    p.0[0] = quant(self.get(0, y as usize, x as usize));
                }
                img.save(path)
            }
            c => {
                return Err(Error::Image {
                    path: path.to_path_buf(),
                    message: format!("unsupported channel count {c}"),
                })
            }
        }
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
