//! RGB float images, videos and binary PPM output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height x width x 3` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::zeros(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        (v * self.width + u) * 3
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f64; 3] {
        let i = self.index(u, v);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, rgb: [f64; 3]) {
        let i = self.index(u, v);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, o: &Image) -> bool {
        self.width == o.width && self.height == o.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-pixel sum of the three channels.
    pub fn channel_sum(&self, u: usize, v: usize) -> f64 {
        self.pixel(u, v).iter().sum()
    }

    /// Pixel with the largest channel sum; ties resolve to the first in
    /// row-major order.
    pub fn argmax_pixel(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for v in 0..self.height {
            for u in 0..self.width {
                let s = self.channel_sum(u, v);
                if s > best_v {
                    best_v = s;
                    best = (u, v);
                }
            }
        }
        best
    }

    /// Places `panels` side by side.
    pub fn hstack(panels: &[Image]) -> Result<Image> {
        let first = panels
            .first()
            .ok_or_else(|| Error::Shape("no panels to stack".into()))?;
        if panels.iter().any(|p| p.height != first.height) {
            return Err(Error::Shape("panel heights differ".into()));
        }
        let width: usize = panels.iter().map(|p| p.width).sum();
        let mut out = Image::zeros(width, first.height);
        let mut x0 = 0;
        for p in panels {
            for v in 0..p.height {
                let src = &p.data[p.index(0, v)..p.index(0, v) + p.width * 3];
                let dst = out.index(x0, v);
                out.data[dst..dst + p.width * 3].copy_from_slice(src);
            }
            x0 += p.width;
        }
        Ok(out)
    }

    pub fn vstack(rows: &[Image]) -> Result<Image> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Shape("no rows to stack".into()))?;
        if rows.iter().any(|r| r.width != first.width) {
            return Err(Error::Shape("row widths differ".into()));
        }
        let height = rows.iter().map(|r| r.height).sum();
        let mut data = Vec::with_capacity(first.width * height * 3);
        for r in rows {
            data.extend_from_slice(&r.data);
        }
        Ok(Image {
            width: first.width,
            height,
            data,
        })
    }

    /// Binary PPM (P6), values clamped to [0,1] and quantised to 8 bits.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub frames: Vec<Image>,
    pub fps: f64,
}

impl Video {
    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.len(), self.height(), self.width(), 3]
    }

    /// Flattened `[frames, H, W, 3]` samples.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.height() * self.width() * 3);
        for f in &self.frames {
            out.extend_from_slice(&f.data);
        }
        out
    }

    pub fn from_flat(shape: [usize; 4], data: &[f64], fps: f64) -> Result<Video> {
        let [n, h, w, c] = shape;
        if c != 3 || data.len() != n * h * w * 3 {
            return Err(Error::Shape(format!(
                "video tensor of shape {shape:?} with {} values",
                data.len()
            )));
        }
        let frames = data
            .chunks_exact(h * w * 3)
            .map(|chunk| Image {
                width: w,
                height: h,
                data: chunk.to_vec(),
            })
            .collect();
        Ok(Video { frames, fps })
    }

    pub fn mean(&self) -> f64 {
        let n: usize = self.frames.iter().map(|f| f.data.len()).sum();
        let s: f64 = self.frames.iter().flat_map(|f| f.data.iter()).sum();
        s / n.max(1) as f64
    }

    /// Mean Rec. 709 luma over all pixels and frames.
    pub fn mean_luminance(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for f in &self.frames {
            for px in f.data.chunks_exact(3) {
                acc += luminance([px[0], px[1], px[2]]);
                n += 1;
            }
        }
        acc / n.max(1) as f64
    }
}

pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}
