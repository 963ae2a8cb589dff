//! Procedural test images with natural-image-like structure: smooth colour
//! gradients, occluding shapes with hard edges and fine texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

struct Lattice {
    cells: usize,
    values: Vec<f64>,
}

impl Lattice {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let values = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        Self { cells, values }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.cells;
        let fx = u * n as f64;
        let fy = v * n as f64;
        let x0 = (fx.floor() as usize).min(n - 1);
        let y0 = (fy.floor() as usize).min(n - 1);
        let tx = smooth(fx - x0 as f64);
        let ty = smooth(fy - y0 as f64);
        let at = |x: usize, y: usize| self.values[y * (n + 1) + x];
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
        let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn contains(&self, u: f64, v: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2) <= 1.0,
            Shape::Rect { x0, y0, x1, y1 } => u >= x0 && u <= x1 && v >= y0 && v <= y1,
        }
    }
}

/// Deterministic synthetic RGB image for `seed`. Sides must be at least 32.
pub fn synthetic_image(width: u32, height: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves: Vec<(Lattice, f64)> = [(3, 0.6), (7, 0.3), (17, 0.1)]
        .into_iter()
        .map(|(c, w)| (Lattice::new(c, &mut rng), w))
        .collect();
    let tint_low: [f64; 3] = std::array::from_fn(|_| rng.random_range(20.0..120.0));
    let tint_high: [f64; 3] = std::array::from_fn(|_| rng.random_range(140.0..240.0));
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.random_range(3..7))
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Ellipse {
                    cx: rng.random(),
                    cy: rng.random(),
                    rx: rng.random_range(0.08..0.3),
                    ry: rng.random_range(0.08..0.3),
                }
            } else {
                let x0: f64 = rng.random_range(0.0..0.8);
                let y0: f64 = rng.random_range(0.0..0.8);
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.random_range(0.1..0.4),
                    y1: y0 + rng.random_range(0.1..0.4),
                }
            };
            (shape, std::array::from_fn(|_| rng.random_range(10.0..245.0)))
        })
        .collect();
    let grain = rng.random_range(4.0..14.0);
    let texture = Lattice::new(31, &mut rng);
    Image::from_fn(width, height, |x, y| {
        let u = (x as f64 + 0.5) / width as f64;
        let v = (y as f64 + 0.5) / height as f64;
        let t: f64 = octaves.iter().map(|(l, w)| l.sample(u, v) * w).sum();
        let mut rgb: [f64; 3] = std::array::from_fn(|c| tint_low[c] + (tint_high[c] - tint_low[c]) * t);
        for (shape, colour) in &shapes {
            if shape.contains(u, v) {
                let shade = 0.8 + 0.4 * t;
                rgb = std::array::from_fn(|c| colour[c] * shade);
            }
        }
        let g = (texture.sample(u, v) - 0.5) * 2.0 * grain;
        rgb.map(|c| (c + g).round().clamp(0.0, 255.0) as u8)
    })
    .expect("synthetic image dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = synthetic_image(64, 64, 3);
        assert_eq!(a, synthetic_image(64, 64, 3));
        assert_ne!(a, synthetic_image(64, 64, 4));
    }

    #[test]
    fn has_luminance_structure() {
        let img = synthetic_image(64, 64, 11);
        let y = crate::image::to_luminance(&img);
        let sd = crate::stats::sample_std(y.data());
        assert!(sd > 0.05, "luma sd {sd}");
    }
}
