//! Perceptual visual change between an original and a transformed image.
//!
//! Two ingredients are combined:
//!
//! * pixel-domain multi-scale visual information fidelity (VIF), which is 1
//!   for an unchanged image, below 1 for degradations and above 1 for
//!   enhancements;
//! * the visibility-detection stage of the wavelet visual signal-to-noise
//!   ratio, which decides whether the distortion is below the contrast
//!   detection threshold in every subband.
//!
//! The visual change is 0 when the distortion is invisible or VIF exceeds 1,
//! and `1 - VIF` otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{to_luminance, GrayImage, Image};
use crate::stats::reflect_index;
use crate::wavelet::{decompose, Plane};

/// Channel-noise variance on the 0..=255 luminance scale.
pub const VIF_NOISE_VARIANCE: f64 = 2.0;
const VIF_STABILIZER: f64 = 1e-10;
const VIF_SCALES: u32 = 4;

pub const VSNR_LEVELS: usize = 5;

/// Lowest RMS contrast detection threshold, reached at [`PEAK_FREQUENCY`].
pub const PEAK_THRESHOLD: f64 = 0.005;
/// cycles per degree.
pub const PEAK_FREQUENCY: f64 = 4.0;
/// Log-parabola curvature of the threshold curve in natural-log frequency.
pub const THRESHOLD_CURVATURE: f64 = 0.932;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewingConditions {
    /// inches
    pub viewing_distance: f64,
    /// pixels per inch
    pub display_resolution: f64,
    /// cd/m²
    pub display_peak_luminance: f64,
    /// cd/m²
    pub black_level_offset: f64,
    pub gamma: f64,
}

impl Default for ViewingConditions {
    fn default() -> Self {
        Self {
            viewing_distance: 19.1,
            display_resolution: 96.0,
            display_peak_luminance: 100.0,
            black_level_offset: 0.03,
            gamma: 2.2,
        }
    }
}

impl ViewingConditions {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("viewing_distance", self.viewing_distance),
            ("display_resolution", self.display_resolution),
            ("display_peak_luminance", self.display_peak_luminance),
            ("black_level_offset", self.black_level_offset),
            ("gamma", self.gamma),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "viewing condition {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Display luminance (cd/m²) of a normalised pixel value.
    pub fn display_luminance(&self, value: f64) -> f64 {
        self.black_level_offset + self.display_peak_luminance * value.clamp(0.0, 1.0).powf(self.gamma)
    }

    pub fn pixels_per_degree(&self) -> f64 {
        self.display_resolution * self.viewing_distance * 1f64.to_radians().tan()
    }

    /// Geometric centre frequency (cycles/degree) of wavelet level `level`
    /// (1 = finest).
    pub fn level_frequency(&self, level: usize) -> f64 {
        self.pixels_per_degree() * 2f64.powf(-(level as f64) - 0.5)
    }
}

/// RMS contrast detection threshold at spatial frequency `f` (cycles/degree).
pub fn contrast_threshold(f: f64) -> f64 {
    let d = f.ln() - PEAK_FREQUENCY.ln();
    PEAK_THRESHOLD * (THRESHOLD_CURVATURE * d * d).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaVScore {
    pub value: f64,
    pub vif_raw: f64,
    pub below_visibility_threshold: bool,
}

impl DeltaVScore {
    pub fn compose(vif_raw: f64, below_visibility_threshold: bool) -> Self {
        let value = if below_visibility_threshold || vif_raw > 1.0 {
            0.0
        } else {
            (1.0 - vif_raw).clamp(0.0, 1.0)
        };
        Self {
            value,
            vif_raw,
            below_visibility_threshold,
        }
    }
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch {
            left: a.dimensions(),
            right: b.dimensions(),
        });
    }
    Ok(())
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let sigma = size as f64 / 5.0;
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Same-size separable correlation with symmetric boundary extension. When
/// `decimate` is set only every second row and column is kept.
fn filter_impl(plane: &Plane, win: &[f64], decimate: bool) -> Plane {
    let (w, h) = (plane.width, plane.height);
    let r = win.len() / 2;
    let step = if decimate { 2 } else { 1 };
    let ow = w.div_ceil(step);
    let oh = h.div_ceil(step);
    let mut padded = vec![0.0; w + 2 * r];
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane.data[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect_index(i as isize - r as isize, w)];
        }
        for (ox, t) in tmp[y * ow..(y + 1) * ow].iter_mut().enumerate() {
            let x = ox * step;
            *t = padded[x..x + win.len()].iter().zip(win).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        let y = oy * step;
        let dst = &mut out[oy * ow..(oy + 1) * ow];
        for (k, &c) in win.iter().enumerate() {
            let sy = reflect_index(y as isize + k as isize - r as isize, h);
            for (d, s) in dst.iter_mut().zip(&tmp[sy * ow..(sy + 1) * ow]) {
                *d += c * s;
            }
        }
    }
    Plane::new(ow, oh, out)
}

fn filter(plane: &Plane, win: &[f64]) -> Plane {
    filter_impl(plane, win, false)
}

/// Low-pass filtering followed by 2:1 decimation.
fn filter_downsample(plane: &Plane, win: &[f64]) -> Plane {
    filter_impl(plane, win, true)
}

fn product(a: &Plane, b: &Plane) -> Plane {
    Plane::new(
        a.width,
        a.height,
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    )
}

struct ReferenceScale {
    window: Vec<f64>,
    image: Plane,
    mean: Plane,
    variance: Vec<f64>,
    information: f64,
}

/// Reference-side quantities reused when one original is compared against
/// many transformed images.
pub struct PreparedReference {
    width: u32,
    height: u32,
    scales: Vec<ReferenceScale>,
    luminance: Vec<f64>,
    mean_luminance: f64,
    vc: ViewingConditions,
}

fn scaled_plane(img: &GrayImage) -> Plane {
    Plane::new(
        img.width() as usize,
        img.height() as usize,
        img.data().iter().map(|v| v * 255.0).collect(),
    )
}

impl PreparedReference {
    pub fn new(reference: &GrayImage, vc: &ViewingConditions) -> Self {
        let mut scales = Vec::with_capacity(VIF_SCALES as usize);
        let mut current = scaled_plane(reference);
        for scale in 1..=VIF_SCALES {
            let window = gaussian_window(2usize.pow(5 - scale) + 1);
            if scale > 1 {
                current = filter_downsample(&current, &window);
            }
            let mean = filter(&current, &window);
            let sq = filter(&product(&current, &current), &window);
            let variance: Vec<f64> = sq
                .data
                .iter()
                .zip(&mean.data)
                .map(|(s, m)| (s - m * m).max(0.0))
                .collect();
            let information = variance
                .iter()
                .map(|&v| if v < VIF_STABILIZER { 0.0 } else { (1.0 + v / VIF_NOISE_VARIANCE).log2() })
                .sum();
            scales.push(ReferenceScale {
                window,
                image: current.clone(),
                mean,
                variance,
                information,
            });
        }
        let luminance: Vec<f64> = reference.data().iter().map(|&v| vc.display_luminance(v)).collect();
        let mean_luminance = luminance.iter().sum::<f64>() / luminance.len() as f64;
        Self {
            width: reference.width(),
            height: reference.height(),
            scales,
            luminance,
            mean_luminance,
            vc: *vc,
        }
    }

    fn check(&self, distorted: &GrayImage) -> Result<()> {
        if distorted.dimensions() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                left: (self.width, self.height),
                right: distorted.dimensions(),
            });
        }
        Ok(())
    }

    pub fn vif(&self, distorted: &GrayImage) -> Result<f64> {
        self.check(distorted)?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut dist = scaled_plane(distorted);
        for (i, s) in self.scales.iter().enumerate() {
            if i > 0 {
                dist = filter_downsample(&dist, &s.window);
            }
            let mu2 = filter(&dist, &s.window);
            let s22 = filter(&product(&dist, &dist), &s.window);
            let s12 = filter(&product(&s.image, &dist), &s.window);
            for j in 0..mu2.data.len() {
                let mu1 = s.mean.data[j];
                let m2 = mu2.data[j];
                let mut var1 = s.variance[j];
                let var2 = (s22.data[j] - m2 * m2).max(0.0);
                let cov = s12.data[j] - mu1 * m2;

                let mut g = cov / (var1 + VIF_STABILIZER);
                let mut sv = var2 - g * cov;
                if var1 < VIF_STABILIZER {
                    g = 0.0;
                    sv = var2;
                    var1 = 0.0;
                }
                if var2 < VIF_STABILIZER {
                    g = 0.0;
                    sv = 0.0;
                }
                if g < 0.0 {
                    sv = var2;
                    g = 0.0;
                }
                let sv = sv.max(VIF_STABILIZER);
                num += (1.0 + g * g * var1 / (sv + VIF_NOISE_VARIANCE)).log2();
            }
            den += s.information;
        }
        if den <= 0.0 {
            return Err(Error::ConstantReference);
        }
        Ok(num / den)
    }

    pub fn visibility(&self, distorted: &GrayImage) -> Result<VisibilityReport> {
        self.check(distorted)?;
        let error: Vec<f64> = distorted
            .data()
            .iter()
            .zip(&self.luminance)
            .map(|(&d, &l)| self.vc.display_luminance(d) - l)
            .collect();
        let plane = Plane::new(self.width as usize, self.height as usize, error);
        Ok(subband_visibility(&plane, self.mean_luminance, &self.vc))
    }

    pub fn delta_v(&self, distorted: &GrayImage) -> Result<DeltaVScore> {
        let vif_raw = self.vif(distorted)?;
        let visible = self.visibility(distorted)?.visible;
        Ok(DeltaVScore::compose(vif_raw, !visible))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubbandContrast {
    pub level: usize,
    pub orientation: &'static str,
    /// cycles/degree
    pub frequency: f64,
    pub contrast: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisibilityReport {
    pub mean_luminance: f64,
    pub bands: Vec<SubbandContrast>,
    pub visible: bool,
}

/// Compares the RMS contrast of each detail subband of a luminance error
/// image against the detection threshold at the subband's frequency.
pub fn subband_visibility(error: &Plane, mean_luminance: f64, vc: &ViewingConditions) -> VisibilityReport {
    let dec = decompose(error, VSNR_LEVELS);
    let mut bands = Vec::new();
    for (i, level) in dec.details.iter().enumerate() {
        let lvl = i + 1;
        let frequency = vc.level_frequency(lvl);
        let threshold = contrast_threshold(frequency);
        let gain = 2f64.powi(lvl as i32);
        for (orientation, band) in level.iter() {
            bands.push(SubbandContrast {
                level: lvl,
                orientation,
                frequency,
                contrast: band.rms() / gain / mean_luminance,
                threshold,
            });
        }
    }
    let visible = bands.iter().any(|b| b.contrast >= b.threshold);
    VisibilityReport {
        mean_luminance,
        bands,
        visible,
    }
}

pub fn vif(reference: &GrayImage, distorted: &GrayImage) -> Result<f64> {
    check_dims(reference, distorted)?;
    PreparedReference::new(reference, &ViewingConditions::default()).vif(distorted)
}

/// `true` when the distortion is visible in at least one subband.
pub fn vsnr_visible(reference: &GrayImage, distorted: &GrayImage, vc: &ViewingConditions) -> Result<bool> {
    check_dims(reference, distorted)?;
    Ok(PreparedReference::new(reference, vc).visibility(distorted)?.visible)
}

pub fn delta_v_gray(original: &GrayImage, transformed: &GrayImage, vc: &ViewingConditions) -> Result<DeltaVScore> {
    check_dims(original, transformed)?;
    PreparedReference::new(original, vc).delta_v(transformed)
}

pub fn delta_v(original: &Image, transformed: &Image, vc: &ViewingConditions) -> Result<DeltaVScore> {
    delta_v_gray(&to_luminance(original), &to_luminance(transformed), vc)
}
