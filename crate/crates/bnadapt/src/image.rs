//! Planar float image: `channels` planes of `h`x`w`, values in [0, 1].

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn zeros(h: usize, w: usize, channels: usize) -> Self {
        Image { h, w, channels, data: vec![0.0; h * w * channels] }
    }

    pub fn from_data(h: usize, w: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * channels {
            return Err(Error::ShapeMismatch {
                context: "Image::from_data",
                expected: vec![h, w, channels],
                got: vec![data.len()],
            });
        }
        Ok(Image { h, w, channels, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Sample with clamp-to-edge semantics; accepts out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, c: usize, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.get(c, y, x)
    }

    /// Bilinear sample at fractional coordinates, clamp-to-edge.
    pub fn sample_bilinear(&self, c: usize, y: f32, x: f32) -> f32 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let v00 = self.get_clamped(c, y0, x0);
        let v01 = self.get_clamped(c, y0, x0 + 1);
        let v10 = self.get_clamped(c, y0 + 1, x0);
        let v11 = self.get_clamped(c, y0 + 1, x0 + 1);
        let top = v00 + (v01 - v00) * fx;
        let bot = v10 + (v11 - v10) * fx;
        top + (bot - top) * fy
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// One channel plane as an HxW tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        let plane = &self.data[c * self.h * self.w..(c + 1) * self.h * self.w];
        Tensor::from_vec(vec![self.h, self.w], plane.to_vec()).expect("plane shape")
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean over every channel and pixel.
    pub fn mean(&self) -> f32 {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }

    /// Bilinear resize to `(new_h, new_w)`.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Image {
        let mut out = Image::zeros(new_h, new_w, self.channels);
        // Align pixel centers of the two grids.
        let sy = self.h as f32 / new_h as f32;
        let sx = self.w as f32 / new_w as f32;
        for c in 0..self.channels {
            for y in 0..new_h {
                let src_y = (y as f32 + 0.5) * sy - 0.5;
                for x in 0..new_w {
                    let src_x = (x as f32 + 0.5) * sx - 0.5;
                    out.set(c, y, x, self.sample_bilinear(c, src_y, src_x));
                }
            }
        }
        out
    }

    /// Center crop to `(ch, cw)`; the crop must fit.
    pub fn center_crop(&self, ch: usize, cw: usize) -> Image {
        assert!(ch <= self.h && cw <= self.w, "crop larger than image");
        let oy = (self.h - ch) / 2;
        let ox = (self.w - cw) / 2;
        let mut out = Image::zeros(ch, cw, self.channels);
        for c in 0..self.channels {
            for y in 0..ch {
                for x in 0..cw {
                    out.set(c, y, x, self.get(c, y + oy, x + ox));
                }
            }
        }
        out
    }
}
