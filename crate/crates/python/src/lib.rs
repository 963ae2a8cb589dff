//! Python bindings for the visreq toolkit.
//!
//! Structured results (threshold estimates, check reports, requirements) are
//! returned as plain dicts decoded from their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visreq::checker::{self, Builtin, Dataset, GenerationOptions, Generator, ModelEndpoint};
use visreq::estimation::{self, EstimationOptions, RequirementKind, RequirementsFile};
use visreq::human_data::parse_trials;
use visreq::image::{self, ImageFormat};
use visreq::iqa;
use visreq::transforms::{sample_params, ParamAssignment, TransformKind, Transformer};

fn to_py(e: visreq::Error) -> PyErr {
    match e {
        visreq::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// 8-bit RGB image.
#[pyclass(frozen, skip_from_py_object, module = "visreq_py")]
#[derive(Clone)]
pub struct Image {
    inner: image::Image,
}

#[pymethods]
impl Image {
    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: image::load_image(path).map_err(to_py)?,
        })
    }

    /// Width·height·3 bytes, row-major RGB.
    #[staticmethod]
    pub fn from_bytes(width: u32, height: u32, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: image::Image::new(width, height, data).map_err(to_py)?,
        })
    }

    /// PNG unless `jpeg_quality` is given.
    #[pyo3(signature = (path, jpeg_quality=None))]
    pub fn save(&self, path: PathBuf, jpeg_quality: Option<u8>) -> PyResult<()> {
        let format = match jpeg_quality {
            Some(quality) => ImageFormat::Jpeg { quality },
            None => ImageFormat::Png,
        };
        image::save_image(&self.inner, path, format).map_err(to_py)
    }

    #[getter]
    pub fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    pub fn height(&self) -> u32 {
        self.inner.height()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.inner.data().to_vec()
    }

    pub fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

#[pyclass(skip_from_py_object, module = "visreq_py", get_all, set_all)]
#[derive(Clone)]
pub struct ViewingConditions {
    pub viewing_distance: f64,
    pub display_resolution: f64,
    pub display_peak_luminance: f64,
    pub black_level_offset: f64,
    pub gamma: f64,
}

impl From<iqa::ViewingConditions> for ViewingConditions {
    fn from(v: iqa::ViewingConditions) -> Self {
        Self {
            viewing_distance: v.viewing_distance,
            display_resolution: v.display_resolution,
            display_peak_luminance: v.display_peak_luminance,
            black_level_offset: v.black_level_offset,
            gamma: v.gamma,
        }
    }
}

impl ViewingConditions {
    fn core(&self) -> iqa::ViewingConditions {
        iqa::ViewingConditions {
            viewing_distance: self.viewing_distance,
            display_resolution: self.display_resolution,
            display_peak_luminance: self.display_peak_luminance,
            black_level_offset: self.black_level_offset,
            gamma: self.gamma,
        }
    }
}

#[pymethods]
impl ViewingConditions {
    #[new]
    fn new() -> Self {
        iqa::ViewingConditions::default().into()
    }
}

fn conditions(vc: Option<&ViewingConditions>) -> iqa::ViewingConditions {
    vc.map(ViewingConditions::core).unwrap_or_default()
}

#[pyclass(frozen, module = "visreq_py", get_all)]
pub struct DeltaVScore {
    pub value: f64,
    pub vif_raw: f64,
    pub below_visibility_threshold: bool,
}

#[pymethods]
impl DeltaVScore {
    fn __repr__(&self) -> String {
        format!(
            "DeltaVScore(value={:.6}, vif_raw={:.6}, below_visibility_threshold={})",
            self.value, self.vif_raw, self.below_visibility_threshold
        )
    }
}

#[pyfunction]
#[pyo3(signature = (original, transformed, viewing_conditions=None))]
pub fn delta_v(
    original: &Image,
    transformed: &Image,
    viewing_conditions: Option<&ViewingConditions>,
) -> PyResult<DeltaVScore> {
    let s = iqa::delta_v(&original.inner, &transformed.inner, &conditions(viewing_conditions)).map_err(to_py)?;
    Ok(DeltaVScore {
        value: s.value,
        vif_raw: s.vif_raw,
        below_visibility_threshold: s.below_visibility_threshold,
    })
}

#[pyfunction]
pub fn transformations() -> Vec<&'static str> {
    TransformKind::ALL.iter().map(|k| k.name()).collect()
}

/// Parameter domains of one transformation as `(name, lo, hi)` tuples.
#[pyfunction]
pub fn parameter_domains(name: &str) -> PyResult<Vec<(String, f64, f64)>> {
    let kind: TransformKind = name.parse().map_err(to_py)?;
    Ok(kind
        .spec()
        .param_domains
        .iter()
        .map(|d| (d.name.to_string(), d.lo, d.hi))
        .collect())
}

/// Applies `name` with the given parameter JSON, or with parameters sampled
/// from `seed`. Returns the image and the parameter JSON used.
#[pyfunction]
#[pyo3(signature = (image, name, params=None, seed=0))]
pub fn apply_transform(image: &Image, name: &str, params: Option<&str>, seed: u64) -> PyResult<(Image, String)> {
    let spec = name.parse::<TransformKind>().map_err(to_py)?.spec();
    let params = match params {
        Some(json) => ParamAssignment::from_json(json, seed).map_err(to_py)?,
        None => sample_params(&spec, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let out = Transformer::default().apply(&spec, &image.inner, &params).map_err(to_py)?;
    Ok((Image { inner: out }, params.to_json()))
}

#[pyfunction]
pub fn binomial_p_lower(successes: u64, n: u64, p0: f64) -> PyResult<f64> {
    estimation::binomial_p_lower(successes, n, p0).map_err(to_py)
}

/// Margin and verdict (`"satisfied"` or `"violated"`) for a reliability distance.
#[pyfunction]
pub fn decide(distance: f64, distance_stddev: f64, alpha: f64) -> PyResult<(f64, String)> {
    let (margin, verdict) = checker::decide(distance, distance_stddev, alpha).map_err(to_py)?;
    Ok((margin, verdict.to_string()))
}

fn parse_kind(kind: &str) -> PyResult<RequirementKind> {
    kind.parse().map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (trials, pairs, kind="correctness", intervals=20, alpha=0.05, q=0.05, bootstrap=0, seed=0))]
#[allow(clippy::too_many_arguments)]
pub fn estimate_threshold<'py>(
    py: Python<'py>,
    trials: PathBuf,
    pairs: PathBuf,
    kind: &str,
    intervals: usize,
    alpha: f64,
    q: f64,
    bootstrap: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let set = parse_trials(trials, pairs).map_err(to_py)?;
    let opts = EstimationOptions {
        intervals,
        alpha,
        q,
        bootstrap_resamples: bootstrap,
        seed,
        ..Default::default()
    };
    let result = estimation::estimate_threshold(&set, parse_kind(kind)?, &opts).map_err(to_py)?;
    json_to_py(py, &result)
}

#[pyfunction]
pub fn load_requirements<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &RequirementsFile::load(path).map_err(to_py)?)
}

/// Generates a suite for one requirement and evaluates a builtin model
/// (`oracle`, `constant_positive`, `degrading(drop=..,at=..)`) or, with
/// `model_cmd`, an adapter process. Returns the check report.
#[pyfunction]
#[pyo3(signature = (requirements, dataset, transformation, kind, model="oracle", model_cmd=None, n=200, k=50, alpha=0.05, seed=0, epsilon=None, work_dir=None))]
#[allow(clippy::too_many_arguments)]
pub fn check<'py>(
    py: Python<'py>,
    requirements: PathBuf,
    dataset: PathBuf,
    transformation: &str,
    kind: &str,
    model: &str,
    model_cmd: Option<String>,
    n: usize,
    k: usize,
    alpha: f64,
    seed: u64,
    epsilon: Option<f64>,
    work_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let file = RequirementsFile::load(&requirements).map_err(to_py)?;
    let transformation: TransformKind = transformation.parse().map_err(to_py)?;
    let mut req = file
        .find(transformation, parse_kind(kind)?)
        .ok_or_else(|| PyValueError::new_err(format!("no {kind} requirement for {transformation}")))?;
    if epsilon.is_some() {
        req.epsilon = epsilon;
    }
    let endpoint = match model_cmd {
        Some(cmd) => ModelEndpoint::subprocess(cmd),
        None => ModelEndpoint::Builtin(model.parse::<Builtin>().map_err(to_py)?),
    };
    let ds = Dataset::load(dataset).map_err(to_py)?;
    let transformer = Transformer::default();
    let opts = GenerationOptions {
        n,
        k,
        work_dir,
        ..Default::default()
    };
    let report = py
        .detach(|| -> visreq::Result<_> {
            let generator = Generator::new(&ds, &transformer, file.viewing_conditions)?;
            let suite = generator.generate(&req, &opts, seed)?;
            checker::evaluate(&suite, &endpoint, alpha)
        })
        .map_err(to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
pub fn visreq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Image>()?;
    m.add_class::<ViewingConditions>()?;
    m.add_class::<DeltaVScore>()?;
    m.add_function(wrap_pyfunction!(delta_v, m)?)?;
    m.add_function(wrap_pyfunction!(transformations, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_domains, m)?)?;
    m.add_function(wrap_pyfunction!(apply_transform, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_p_lower, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(load_requirements, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
