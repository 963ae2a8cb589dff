//! Separable CDF 9/7 discrete wavelet transform (lifting scheme, whole-sample
//! symmetric extension).
//!
//! Scaling is chosen so both analysis filters have unit-norm gain (√2 at DC for
//! the low pass, √2 at Nyquist for the high pass); the transform is therefore
//! close to orthonormal and subband energies are comparable across levels.

const ALPHA: f64 = -1.586_134_342_059_924;
const BETA: f64 = -0.052_980_118_572_961;
const GAMMA: f64 = 0.882_911_075_530_934;
const DELTA: f64 = 0.443_506_852_043_971;
const K: f64 = 1.230_174_104_914_001;

/// Row-major plane of real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer length");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn rms(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[inline]
fn lift_odd(x: &mut [f64], coeff: f64) {
    let n = x.len();
    let mut i = 1;
    while i < n {
        let right = if i + 1 < n { x[i + 1] } else { x[i - 1] };
        x[i] += coeff * (x[i - 1] + right);
        i += 2;
    }
}

#[inline]
fn lift_even(x: &mut [f64], coeff: f64) {
    let n = x.len();
    let mut i = 0;
    while i < n {
        let left = if i > 0 { x[i - 1] } else { x[i + 1] };
        let right = if i + 1 < n { x[i + 1] } else { x[i - 1] };
        x[i] += coeff * (left + right);
        i += 2;
    }
}

/// One analysis step on `signal`; writes `ceil(n/2)` low-pass then `floor(n/2)`
/// high-pass coefficients back into `signal`. Signals shorter than two samples
/// are left as they are.
pub fn forward_1d(signal: &mut [f64], scratch: &mut Vec<f64>) {
    let n = signal.len();
    if n < 2 {
        return;
    }
    lift_odd(signal, ALPHA);
    lift_even(signal, BETA);
    lift_odd(signal, GAMMA);
    lift_even(signal, DELTA);
    let low_gain = std::f64::consts::SQRT_2 / K;
    let high_gain = K / std::f64::consts::SQRT_2;
    scratch.clear();
    scratch.extend(signal.iter().step_by(2).map(|v| v * low_gain));
    scratch.extend(signal.iter().skip(1).step_by(2).map(|v| v * high_gain));
    signal.copy_from_slice(scratch);
}

/// Exact inverse of [`forward_1d`].
pub fn inverse_1d(coeffs: &mut [f64], scratch: &mut Vec<f64>) {
    let n = coeffs.len();
    if n < 2 {
        return;
    }
    let n_low = n.div_ceil(2);
    let low_gain = std::f64::consts::SQRT_2 / K;
    let high_gain = K / std::f64::consts::SQRT_2;
    scratch.clear();
    scratch.resize(n, 0.0);
    for (i, v) in coeffs[..n_low].iter().enumerate() {
        scratch[2 * i] = v / low_gain;
    }
    for (i, v) in coeffs[n_low..].iter().enumerate() {
        scratch[2 * i + 1] = v / high_gain;
    }
    lift_even(scratch, -DELTA);
    lift_odd(scratch, -GAMMA);
    lift_even(scratch, -BETA);
    lift_odd(scratch, -ALPHA);
    coeffs.copy_from_slice(scratch);
}

/// Detail subbands of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    /// High pass along rows, low pass along columns.
    pub hl: Plane,
    /// Low pass along rows, high pass along columns.
    pub lh: Plane,
    pub hh: Plane,
}

impl DetailBands {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Plane)> {
        [("hl", &self.hl), ("lh", &self.lh), ("hh", &self.hh)].into_iter()
    }
}

/// Multi-level Mallat decomposition. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub details: Vec<DetailBands>,
    pub approximation: Plane,
}

fn transform_rows(plane: &mut Plane, inverse: bool) {
    let mut scratch = Vec::with_capacity(plane.width);
    for row in plane.data.chunks_exact_mut(plane.width) {
        if inverse {
            inverse_1d(row, &mut scratch);
        } else {
            forward_1d(row, &mut scratch);
        }
    }
}

fn transform_cols(plane: &mut Plane, inverse: bool) {
    let (w, h) = (plane.width, plane.height);
    let mut col = vec![0.0; h];
    let mut scratch = Vec::with_capacity(h);
    for x in 0..w {
        for (y, c) in col.iter_mut().enumerate() {
            *c = plane.data[y * w + x];
        }
        if inverse {
            inverse_1d(&mut col, &mut scratch);
        } else {
            forward_1d(&mut col, &mut scratch);
        }
        for (y, &c) in col.iter().enumerate() {
            plane.data[y * w + x] = c;
        }
    }
}

fn crop(plane: &Plane, x0: usize, y0: usize, w: usize, h: usize) -> Plane {
    let mut data = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        data.extend_from_slice(&plane.data[y * plane.width + x0..y * plane.width + x0 + w]);
    }
    Plane::new(w, h, data)
}

fn paste(dst: &mut Plane, src: &Plane, x0: usize, y0: usize) {
    for y in 0..src.height {
        let d = (y0 + y) * dst.width + x0;
        dst.data[d..d + src.width].copy_from_slice(&src.data[y * src.width..(y + 1) * src.width]);
    }
}

/// Decomposes `plane` into up to `levels` levels, stopping early once a side
/// drops below two samples.
pub fn decompose(plane: &Plane, levels: usize) -> Decomposition {
    let mut current = plane.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        if current.width < 2 || current.height < 2 {
            break;
        }
        transform_rows(&mut current, false);
        transform_cols(&mut current, false);
        let (wl, hl) = (current.width.div_ceil(2), current.height.div_ceil(2));
        let (wh, hh) = (current.width - wl, current.height - hl);
        details.push(DetailBands {
            hl: crop(&current, wl, 0, wh, hl),
            lh: crop(&current, 0, hl, wl, hh),
            hh: crop(&current, wl, hl, wh, hh),
        });
        current = crop(&current, 0, 0, wl, hl);
    }
    Decomposition {
        details,
        approximation: current,
    }
}

/// Inverse of [`decompose`].
pub fn reconstruct(dec: &Decomposition) -> Plane {
    let mut current = dec.approximation.clone();
    for bands in dec.details.iter().rev() {
        let w = current.width + bands.hl.width;
        let h = current.height + bands.lh.height;
        let mut full = Plane::zeros(w, h);
        paste(&mut full, &current, 0, 0);
        paste(&mut full, &bands.hl, current.width, 0);
        paste(&mut full, &bands.lh, 0, current.height);
        paste(&mut full, &bands.hh, current.width, current.height);
        transform_cols(&mut full, true);
        transform_rows(&mut full, true);
        current = full;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_signal_has_no_detail() {
        let mut x = vec![3.0; 16];
        let mut s = Vec::new();
        forward_1d(&mut x, &mut s);
        for v in &x[..8] {
            assert!((v - 3.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        }
        for v in &x[8..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn nyquist_signal_has_no_approximation() {
        let mut x: Vec<f64> = (0..16).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut s = Vec::new();
        forward_1d(&mut x, &mut s);
        for v in &x[..8] {
            assert!(v.abs() < 1e-6);
        }
        for v in &x[8..] {
            assert!((v.abs() - std::f64::consts::SQRT_2).abs() < 1e-6);
        }
    }

    #[test]
    fn white_noise_energy_is_nearly_preserved() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let plane = Plane::new(64, 64, data);
        let dec = decompose(&plane, 5);
        let mut energy = dec.approximation.energy();
        for d in &dec.details {
            energy += d.iter().map(|(_, p)| p.energy()).sum::<f64>();
        }
        let ratio = energy / plane.energy();
        assert!((ratio - 1.0).abs() < 0.1, "energy ratio {ratio}");
    }

    #[test]
    fn decomposition_shapes_for_odd_sizes() {
        let plane = Plane::new(37, 33, (0..37 * 33).map(|i| (i % 7) as f64).collect());
        let dec = decompose(&plane, 5);
        assert_eq!(dec.details.len(), 5);
        assert_eq!((dec.details[0].hl.width, dec.details[0].hl.height), (18, 17));
        assert_eq!((dec.details[0].lh.width, dec.details[0].lh.height), (19, 16));
        assert_eq!((dec.approximation.width, dec.approximation.height), (2, 2));
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(w in 2usize..40, h in 2usize..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..w * h).map(|_| rng.random_range(-100.0..100.0)).collect();
            let plane = Plane::new(w, h, data);
            let back = reconstruct(&decompose(&plane, 5));
            for (a, b) in plane.data.iter().zip(&back.data) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
