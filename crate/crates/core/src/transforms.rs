//! The eight safety-related image transformations.
//!
//! Every transformation has named parameters drawn from closed real intervals.
//! Application is a pure function of `(image, params)`; transformations that
//! need randomness (noise, frost placement) read it from `params.seed` only.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, Image, ImageFormat};
use crate::stats::reflect_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    RgbShift,
    Contrast,
    DefocusBlur,
    Brightness,
    Frost,
    ColorJitter,
    JpegCompression,
    GaussianNoise,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::RgbShift,
        TransformKind::Contrast,
        TransformKind::DefocusBlur,
        TransformKind::Brightness,
        TransformKind::Frost,
        TransformKind::ColorJitter,
        TransformKind::JpegCompression,
        TransformKind::GaussianNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::RgbShift => "rgb_shift",
            TransformKind::Contrast => "contrast",
            TransformKind::DefocusBlur => "defocus_blur",
            TransformKind::Brightness => "brightness",
            TransformKind::Frost => "frost",
            TransformKind::ColorJitter => "color_jitter",
            TransformKind::JpegCompression => "jpeg_compression",
            TransformKind::GaussianNoise => "gaussian_noise",
        }
    }

    pub fn spec(self) -> TransformationSpec {
        TransformationSpec::for_kind(self)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownTransformation(s.to_string()))
    }
}

/// Closed interval `[lo, hi]` for one named parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamDomain {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

impl ParamDomain {
    const fn new(name: &'static str, lo: f64, hi: f64) -> Self {
        Self { name, lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// A CV-HAZOP checklist reference: vision-process location, affected
/// parameter and guide word. `entry` carries the checklist number when known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HazopEntry {
    pub entry: Option<&'static str>,
    pub location: &'static str,
    pub parameter: &'static str,
    pub guide_word: &'static str,
}

impl HazopEntry {
    const fn new(
        entry: Option<&'static str>,
        location: &'static str,
        parameter: &'static str,
        guide_word: &'static str,
    ) -> Self {
        Self {
            entry,
            location,
            parameter,
            guide_word,
        }
    }

    /// The entry number if known, otherwise `location/parameter/guide_word`.
    pub fn identifier(&self) -> String {
        match self.entry {
            Some(id) => id.to_string(),
            None => format!("{}/{}/{}", self.location, self.parameter, self.guide_word),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformationSpec {
    pub kind: TransformKind,
    pub param_domains: Vec<ParamDomain>,
    pub cv_hazop_entries: Vec<HazopEntry>,
    pub stochastic: bool,
}

impl TransformationSpec {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn domain(&self, name: &str) -> Option<&ParamDomain> {
        self.param_domains.iter().find(|d| d.name == name)
    }

    fn for_kind(kind: TransformKind) -> Self {
        use TransformKind::*;
        let (param_domains, cv_hazop_entries, stochastic) = match kind {
            RgbShift => (
                vec![
                    ParamDomain::new("r_shift", -100.0, 100.0),
                    ParamDomain::new("g_shift", -100.0, 100.0),
                    ParamDomain::new("b_shift", -100.0, 100.0),
                ],
                vec![HazopEntry::new(None, "Light Sources", "Spectrum", "Other than")],
                false,
            ),
            Contrast => (
                vec![ParamDomain::new("alpha", 0.1, 3.0)],
                vec![HazopEntry::new(None, "Observer", "Dynamic range", "Less")],
                false,
            ),
            DefocusBlur => (
                vec![ParamDomain::new("radius", 0.5, 12.0)],
                vec![HazopEntry::new(Some("1018"), "Observer", "Focusing", "Less")],
                false,
            ),
            Brightness => (
                vec![ParamDomain::new("factor", 0.2, 3.0)],
                vec![HazopEntry::new(None, "Light Sources", "Intensity", "More")],
                false,
            ),
            Frost => (
                vec![
                    ParamDomain::new("image_weight", 0.5, 1.0),
                    ParamDomain::new("frost_weight", 0.1, 0.9),
                ],
                vec![HazopEntry::new(None, "Medium", "Transparency", "Less")],
                true,
            ),
            ColorJitter => (
                vec![
                    ParamDomain::new("brightness", 0.5, 1.5),
                    ParamDomain::new("contrast", 0.5, 1.5),
                    ParamDomain::new("saturation", 0.5, 1.5),
                    ParamDomain::new("hue", -0.1, 0.1),
                ],
                vec![HazopEntry::new(None, "Observer", "Spectral efficiency", "Other than")],
                false,
            ),
            JpegCompression => (
                vec![ParamDomain::new("quality", 1.0, 100.0)],
                vec![HazopEntry::new(None, "Observer", "Quantization", "More")],
                false,
            ),
            GaussianNoise => (
                vec![ParamDomain::new("sigma", 0.01, 0.38)],
                vec![HazopEntry::new(None, "Observer", "Noise", "More")],
                true,
            ),
        };
        Self {
            kind,
            param_domains,
            cv_hazop_entries,
            stochastic,
        }
    }

    /// Checks every domain parameter is present and inside its interval, and
    /// that no unknown names are given.
    pub fn validate(&self, params: &ParamAssignment) -> Result<()> {
        for d in &self.param_domains {
            let v = params.values.get(d.name).copied().ok_or_else(|| Error::MissingParam {
                transformation: self.name().to_string(),
                name: d.name.to_string(),
            })?;
            if !d.contains(v) {
                return Err(Error::ParamOutOfDomain {
                    transformation: self.name().to_string(),
                    name: d.name.to_string(),
                    value: v,
                    lo: d.lo,
                    hi: d.hi,
                });
            }
        }
        if let Some(extra) = params.values.keys().find(|k| self.domain(k).is_none()) {
            return Err(Error::InvalidArgument(format!(
                "unknown parameter `{extra}` for {}",
                self.name()
            )));
        }
        Ok(())
    }
}

pub fn registry() -> Vec<TransformationSpec> {
    TransformKind::ALL.iter().map(|k| k.spec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAssignment {
    pub values: BTreeMap<String, f64>,
    pub seed: u64,
}

impl ParamAssignment {
    pub fn new<'a>(values: impl IntoIterator<Item = (&'a str, f64)>, seed: u64) -> Self {
        Self {
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seed,
        }
    }

    pub fn get(&self, name: &str) -> f64 {
        self.values[name]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.values).expect("map of floats serialises")
    }

    pub fn from_json(json: &str, seed: u64) -> Result<Self> {
        Ok(Self {
            values: serde_json::from_str(json)?,
            seed,
        })
    }
}

/// Draws each parameter independently and uniformly from its domain. The
/// assignment's seed is drawn from the same source.
pub fn sample_params<R: Rng + ?Sized>(spec: &TransformationSpec, rng: &mut R) -> ParamAssignment {
    let values = spec
        .param_domains
        .iter()
        .map(|d| (d.name.to_string(), rng.random_range(d.lo..=d.hi)))
        .collect();
    ParamAssignment {
        values,
        seed: rng.next_u64(),
    }
}

/// Source of frost overlays.
#[derive(Debug, Clone, Default)]
pub enum FrostSource {
    /// Seeded value noise with crystalline streaks.
    #[default]
    Procedural,
    Textures(Vec<Image>),
}

impl FrostSource {
    /// Loads every `*.png` in `dir`, sorted by file name.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::EmptyTextureDir(dir.to_path_buf()));
        }
        let textures = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
        Ok(FrostSource::Textures(textures))
    }

    fn overlay(&self, width: u32, height: u32, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            FrostSource::Procedural => procedural_frost(width, height, &mut rng),
            FrostSource::Textures(textures) => {
                let tex = &textures[(rng.next_u64() % textures.len() as u64) as usize];
                let (tw, th) = tex.dimensions();
                // Textures smaller than the image wrap around.
                let ox = if tw >= width { rng.random_range(0..=tw - width) } else { rng.random_range(0..tw) };
                let oy = if th >= height { rng.random_range(0..=th - height) } else { rng.random_range(0..th) };
                let mut out = Vec::with_capacity(width as usize * height as usize * 3);
                for y in 0..height {
                    for x in 0..width {
                        let p = tex.pixel((ox + x) % tw, (oy + y) % th);
                        out.extend(p.iter().map(|&c| c as f64));
                    }
                }
                out
            }
        }
    }
}

/// Applies transformations; holds the frost overlay source.
#[derive(Debug, Clone, Default)]
pub struct Transformer {
    frost: FrostSource,
}

impl Transformer {
    pub fn new(frost: FrostSource) -> Self {
        Self { frost }
    }

    /// Identifies the overlay source so cached results are not shared across sources.
    pub fn fingerprint(&self) -> String {
        match &self.frost {
            FrostSource::Procedural => "procedural".to_string(),
            FrostSource::Textures(t) => {
                let joined: Vec<String> = t.iter().map(Image::content_hash).collect();
                format!("textures:{}", crate::stats::hash_str(&joined.join(",")))
            }
        }
    }

    pub fn apply(&self, spec: &TransformationSpec, image: &Image, params: &ParamAssignment) -> Result<Image> {
        spec.validate(params)?;
        let p = |n: &str| params.get(n);
        let out = match spec.kind {
            TransformKind::Brightness => {
                let f = p("factor");
                map_channels(image, |_, v| v * f)
            }
            TransformKind::Contrast => {
                let alpha = p("alpha");
                let mu = image.mean_luma();
                map_channels(image, |_, v| mu + alpha * (v - mu))
            }
            TransformKind::RgbShift => {
                let shift = [p("r_shift"), p("g_shift"), p("b_shift")];
                map_channels(image, |c, v| v + shift[c])
            }
            TransformKind::GaussianNoise => {
                let sd = p("sigma") * 255.0;
                let normal = Normal::new(0.0, sd).expect("positive sigma");
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                map_channels(image, |_, v| v + normal.sample(&mut rng))
            }
            TransformKind::DefocusBlur => defocus(image, p("radius")),
            TransformKind::JpegCompression => {
                let quality = p("quality").round().clamp(1.0, 100.0) as u8;
                let bytes = image.encode(ImageFormat::Jpeg { quality })?;
                Image::decode(&bytes)?
            }
            TransformKind::Frost => {
                let a = p("image_weight");
                let b = p("frost_weight");
                let tex = self.frost.overlay(image.width(), image.height(), params.seed);
                let data = image
                    .data()
                    .iter()
                    .zip(&tex)
                    .map(|(&v, &t)| quantize(a * v as f64 + b * t))
                    .collect();
                image.with_data(data)
            }
            TransformKind::ColorJitter => color_jitter(
                image,
                p("brightness"),
                p("contrast"),
                p("saturation"),
                p("hue"),
            ),
        };
        Ok(out)
    }
}

/// Applies with the procedural frost source.
pub fn apply(spec: &TransformationSpec, image: &Image, params: &ParamAssignment) -> Result<Image> {
    Transformer::default().apply(spec, image, params)
}

#[inline]
fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

fn map_channels(image: &Image, mut f: impl FnMut(usize, f64) -> f64) -> Image {
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| quantize(f(i % 3, v as f64)))
        .collect();
    image.with_data(data)
}

/// Anti-aliased disk kernel: weight falls linearly across the one-pixel rim.
fn disk_kernel(radius: f64) -> (Vec<f64>, isize) {
    let half = (radius + 0.5).ceil() as isize;
    let side = (2 * half + 1) as usize;
    let mut k = Vec::with_capacity(side * side);
    for dy in -half..=half {
        for dx in -half..=half {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            k.push((radius + 0.5 - d).clamp(0.0, 1.0));
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    (k, half)
}

fn defocus(image: &Image, radius: f64) -> Image {
    let (kernel, half) = disk_kernel(radius);
    let side = (2 * half + 1) as usize;
    let taps: Vec<(isize, isize, f64)> = kernel
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| ((i % side) as isize - half, (i / side) as isize - half, w))
        .collect();
    let (w, h) = (image.width() as usize, image.height() as usize);
    let src = image.data();
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for &(dx, dy, wt) in &taps {
                let sx = reflect_index(x as isize + dx, w);
                let sy = reflect_index(y as isize + dy, h);
                let i = (sy * w + sx) * 3;
                acc[0] += wt * src[i] as f64;
                acc[1] += wt * src[i + 1] as f64;
                acc[2] += wt * src[i + 2] as f64;
            }
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = quantize(acc[c]);
            }
        }
    }
    image.with_data(out)
}

/// Brightness, contrast, saturation then hue, each clamped to the displayable
/// range before the next.
fn color_jitter(image: &Image, brightness: f64, contrast: f64, saturation: f64, hue: f64) -> Image {
    let mut px: Vec<[f64; 3]> = image
        .data()
        .chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let clamp = |v: f64| v.clamp(0.0, 255.0);
    for p in &mut px {
        p.iter_mut().for_each(|v| *v = clamp(*v * brightness));
    }
    let mu = px.iter().map(float_luma).sum::<f64>() / px.len() as f64;
    for p in &mut px {
        p.iter_mut().for_each(|v| *v = clamp(mu + contrast * (*v - mu)));
    }
    for p in &mut px {
        let g = float_luma(p);
        p.iter_mut().for_each(|v| *v = clamp(g + saturation * (*v - g)));
    }
    if hue != 0.0 {
        for p in &mut px {
            let (h, s, v) = rgb_to_hsv(*p);
            *p = hsv_to_rgb((h + hue).rem_euclid(1.0), s, v);
        }
    }
    let data = px.iter().flat_map(|p| p.map(quantize)).collect();
    image.with_data(data)
}

fn float_luma(p: &[f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn rgb_to_hsv(p: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    if max <= 0.0 || delta <= 0.0 {
        return (0.0, 0.0, v);
    }
    let s = delta / max;
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h * 6.0).rem_euclid(6.0);
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Bilinear value noise on a lattice with the given cell size, values in [0, 1].
fn value_noise(width: u32, height: u32, cell: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        let fy = y as f64 / cell;
        let y0 = fy.floor() as usize;
        let ty = smooth(fy - y0 as f64);
        for x in 0..width {
            let fx = x as f64 / cell;
            let x0 = fx.floor() as usize;
            let tx = smooth(fx - x0 as f64);
            let at = |gx: usize, gy: usize| lattice[gy * gw + gx];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Frosted-glass overlay on the 0..=255 scale, three channels.
fn procedural_frost(width: u32, height: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let side = width.max(height) as f64;
    let octaves = [(side / 3.0, 0.5), (side / 9.0, 0.3), (side / 24.0, 0.2)];
    let mut field = vec![0.0; width as usize * height as usize];
    for (cell, weight) in octaves {
        let n = value_noise(width, height, cell.max(2.0), rng);
        field.iter_mut().zip(n).for_each(|(f, v)| *f += weight * v);
    }
    let mut mask: Vec<f64> = field
        .iter()
        .map(|&f| {
            let t = ((f - 0.35) / 0.35).clamp(0.0, 1.0);
            0.85 * t * t * (3.0 - 2.0 * t)
        })
        .collect();

    // Crystalline streaks: short bright line segments in random directions.
    let streaks = 8 + (width as usize * height as usize) / 400;
    for _ in 0..streaks {
        let mut x = rng.random_range(0.0..width as f64);
        let mut y = rng.random_range(0.0..height as f64);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(0.05..0.3) * side;
        let strength = rng.random_range(0.3..0.9);
        let (dx, dy) = (angle.cos(), angle.sin());
        let steps = len.ceil() as usize;
        for s in 0..steps {
            if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                break;
            }
            let fade = 1.0 - s as f64 / steps as f64;
            let i = y as usize * width as usize + x as usize;
            mask[i] = (mask[i] + strength * fade).min(1.0);
            x += dx;
            y += dy;
        }
    }
    const TINT: [f64; 3] = [225.0, 235.0, 250.0];
    mask.iter().flat_map(|&m| TINT.map(|t| t * m)).collect()
}
