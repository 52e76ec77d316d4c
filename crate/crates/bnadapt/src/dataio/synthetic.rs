//! Procedurally rendered 32x32 shape dataset, the self-contained stand-in
//! for a natural image corpus.
//!
//! Ten classes: disk, square, triangle, cross, ring, horizontal bar,
//! vertical bar, checker, diagonal stripe, ramp blob. Position, scale,
//! rotation and hue are randomized per image; classes are balanced by
//! construction (image i has class i mod 10).

use super::Dataset;
use crate::image::Image;
use crate::rng::Rng;

pub const CLASS_NAMES: [&str; 10] = [
    "disk", "square", "triangle", "cross", "ring", "hbar", "vbar", "checker", "stripe", "blob",
];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

struct Params {
    cx: f64,
    cy: f64,
    r: f64,
    theta: f64,
    fg: [f32; 3],
    bg: [f32; 3],
}

/// Signed distance-free coverage test in shape-local coordinates.
fn shape_alpha(class: usize, px: f64, py: f64, p: &Params, aux: &[f64]) -> f64 {
    // Local frame: translate, rotate by -theta, scale by 1/r.
    let dx = px - p.cx;
    let dy = py - p.cy;
    let (sin, cos) = p.theta.sin_cos();
    let x = (dx * cos + dy * sin) / p.r;
    let y = (-dx * sin + dy * cos) / p.r;
    match class {
        // disk
        0 => f64::from(x * x + y * y <= 1.0),
        // square
        1 => f64::from(x.abs().max(y.abs()) <= 0.75),
        // equilateral triangle, circumradius 1
        2 => {
            let mut inside = true;
            for k in 0..3 {
                let a0 = std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::TAU / 3.0;
                let a1 = std::f64::consts::FRAC_PI_2 + (k + 1) as f64 * std::f64::consts::TAU / 3.0;
                let (x0, y0) = (a0.cos(), a0.sin());
                let (x1, y1) = (a1.cos(), a1.sin());
                if (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) > 0.0 {
                    inside = false;
                    break;
                }
            }
            f64::from(inside)
        }
        // cross
        3 => f64::from((x.abs() <= 0.22 && y.abs() <= 1.0) || (y.abs() <= 0.22 && x.abs() <= 1.0)),
        // ring
        4 => {
            let d = (x * x + y * y).sqrt();
            f64::from((0.68..=1.0).contains(&d))
        }
        // horizontal / vertical bar across the whole image; aux = [angle, half_thickness]
        5 | 6 => {
            let (asin, acos) = aux[0].sin_cos();
            let dist = (dy * acos - dx * asin).abs();
            f64::from(dist <= aux[1])
        }
        // checker; aux = [cell, ox, oy]
        7 => {
            let cell = aux[0];
            let ix = ((px + aux[1]) / cell).floor() as i64;
            let iy = ((py + aux[2]) / cell).floor() as i64;
            f64::from((ix + iy).rem_euclid(2) == 0)
        }
        // diagonal stripe; aux = [nx, ny, offset, half_thickness]
        8 => {
            let dist = (px * aux[0] + py * aux[1] - aux[2]).abs();
            f64::from(dist <= aux[3])
        }
        // ramp blob: smooth radial falloff
        9 => {
            let d = (x * x + y * y).sqrt();
            (1.0 - d).max(0.0).powf(1.6)
        }
        _ => unreachable!(),
    }
}

fn render(class: usize, rng: &mut Rng) -> Image {
    const SIZE: usize = 32;
    let bg_hue = rng.range(0.0, 360.0);
    let fg_hue = bg_hue + rng.range(120.0, 240.0);
    let params = Params {
        cx: rng.range(10.0, 22.0),
        cy: rng.range(10.0, 22.0),
        r: rng.range(5.0, 10.0),
        theta: rng.range(0.0, std::f64::consts::TAU),
        fg: hsv_to_rgb(fg_hue, rng.range(0.5, 0.9), rng.range(0.6, 0.95)),
        bg: hsv_to_rgb(bg_hue, rng.range(0.3, 0.7), rng.range(0.15, 0.45)),
    };
    let aux: Vec<f64> = match class {
        5 => vec![rng.range(-0.15, 0.15), params.r * 0.18],
        6 => vec![std::f64::consts::FRAC_PI_2 + rng.range(-0.15, 0.15), params.r * 0.18],
        7 => {
            let cell = 3.0 + rng.below(3) as f64;
            vec![cell, rng.range(0.0, cell), rng.range(0.0, cell)]
        }
        8 => {
            let dir = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            let ang = std::f64::consts::FRAC_PI_4 * dir + rng.range(-0.1, 0.1);
            let (nx, ny) = (-ang.sin(), ang.cos());
            let offset = nx * params.cx + ny * params.cy;
            vec![nx, ny, offset, rng.range(2.0, 3.5)]
        }
        _ => Vec::new(),
    };

    let mut img = Image::zeros(SIZE, SIZE, 3);
    for y in 0..SIZE {
        for x in 0..SIZE {
            // 2x2 supersampling for soft edges.
            let mut alpha = 0.0f64;
            for sy in 0..2 {
                for sx in 0..2 {
                    let px = x as f64 + 0.25 + 0.5 * sx as f64;
                    let py = y as f64 + 0.25 + 0.5 * sy as f64;
                    alpha += shape_alpha(class, px, py, &params, &aux);
                }
            }
            alpha /= 4.0;
            for c in 0..3 {
                let v = params.bg[c] as f64 + alpha * (params.fg[c] as f64 - params.bg[c] as f64);
                img.set(c, y, x, v as f32);
            }
        }
    }
    // Mild texture noise.
    for v in img.data_mut() {
        *v = (*v + 0.025 * rng.normal() as f32).clamp(0.0, 1.0);
    }
    img
}

/// `n` images, classes balanced as i mod 10, bit-deterministic in `seed`.
pub fn gen_synthetic(n: usize, seed: u64) -> Dataset {
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        let mut rng = Rng::derive(seed, i as u64);
        images.push(render(class, &mut rng));
        labels.push(class as u8);
    }
    Dataset::new(images, labels, "synthetic").expect("labels in range")
}
