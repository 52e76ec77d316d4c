//! 2-D discrete Fourier transform.
//!
//! Forward transform is unnormalized (no 1/N factor) with the DC term at
//! index (0, 0). Power-of-two lines take the iterative radix-2 path; other
//! lengths fall back to the direct O(N^2) sum, which is plenty for
//! desk-scale grids. All butterfly arithmetic runs in f64; only downstream
//! amplitude grids are rounded to f32.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Complex HxW grid, interleaved (re, im) pairs, row-major.
#[derive(Debug, Clone)]
pub struct ComplexGrid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(h: usize, w: usize) -> Self {
        ComplexGrid { h, w, data: vec![0.0; 2 * h * w] }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn re(&self, y: usize, x: usize) -> f64 {
        self.data[2 * (y * self.w + x)]
    }

    #[inline]
    pub fn im(&self, y: usize, x: usize) -> f64 {
        self.data[2 * (y * self.w + x) + 1]
    }

    #[inline]
    fn set(&mut self, y: usize, x: usize, re: f64, im: f64) {
        let i = 2 * (y * self.w + x);
        self.data[i] = re;
        self.data[i + 1] = im;
    }
}

/// One forward 1-D transform over interleaved complex data, in place.
fn fft1d(line: &mut [(f64, f64)]) {
    let n = line.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft1d_radix2(line);
    } else {
        dft1d_direct(line);
    }
}

fn fft1d_radix2(line: &mut [(f64, f64)]) {
    let n = line.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            line.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -std::f64::consts::TAU / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ar, ai) = line[start + k];
                let (br, bi) = line[start + k + len / 2];
                let tr = br * cr - bi * ci;
                let ti = br * ci + bi * cr;
                line[start + k] = (ar + tr, ai + ti);
                line[start + k + len / 2] = (ar - tr, ai - ti);
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn dft1d_direct(line: &mut [(f64, f64)]) {
    let n = line.len();
    let src = line.to_vec();
    for (k, slot) in line.iter_mut().enumerate() {
        let mut acc = (0.0f64, 0.0f64);
        for (j, &(re, im)) in src.iter().enumerate() {
            let ang = -std::f64::consts::TAU * (k * j % n) as f64 / n as f64;
            let (c, s) = (ang.cos(), ang.sin());
            acc.0 += re * c - im * s;
            acc.1 += re * s + im * c;
        }
        *slot = acc;
    }
}

/// Forward 2-D DFT of a real HxW tensor.
pub fn fft2(channel: &Tensor) -> Result<ComplexGrid> {
    if channel.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "fft2",
            expected: vec![0, 0],
            got: channel.shape().to_vec(),
        });
    }
    let (h, w) = (channel.shape()[0], channel.shape()[1]);
    if h == 0 || w == 0 {
        return Err(Error::EmptyInput("fft2"));
    }
    if !channel.all_finite() {
        return Err(Error::NonFinite { context: "fft2 input" });
    }

    let mut grid = ComplexGrid::zeros(h, w);
    // Rows first.
    let mut row = vec![(0.0f64, 0.0f64); w];
    for y in 0..h {
        for x in 0..w {
            row[x] = (channel.at2(y, x) as f64, 0.0);
        }
        fft1d(&mut row);
        for (x, &(re, im)) in row.iter().enumerate() {
            grid.set(y, x, re, im);
        }
    }
    // Then columns.
    let mut col = vec![(0.0f64, 0.0f64); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = (grid.re(y, x), grid.im(y, x));
        }
        fft1d(&mut col);
        for (y, &(re, im)) in col.iter().enumerate() {
            grid.set(y, x, re, im);
        }
    }
    Ok(grid)
}

/// Elementwise modulus of a complex grid.
pub fn amplitude(grid: &ComplexGrid) -> Tensor {
    let (h, w) = (grid.height(), grid.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(grid.re(y, x).hypot(grid.im(y, x)) as f32);
        }
    }
    Tensor::from_vec(vec![h, w], out).expect("amplitude shape")
}

/// Cyclic roll that moves bin (0,0) to (h/2, w/2); its own inverse for
/// even dimensions.
pub fn fftshift(spectrum: &Tensor) -> Tensor {
    assert_eq!(spectrum.shape().len(), 2, "fftshift expects a 2-D grid");
    let (h, w) = (spectrum.shape()[0], spectrum.shape()[1]);
    let mut out = Tensor::zeros(vec![h, w]);
    for y in 0..h {
        let ny = (y + h / 2) % h;
        for x in 0..w {
            let nx = (x + w / 2) % w;
            out.data_mut()[ny * w + nx] = spectrum.at2(y, x);
        }
    }
    out
}
