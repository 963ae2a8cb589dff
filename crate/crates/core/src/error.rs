use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("cannot encode image: {0}")]
    Encode(String),

    #[error("image too small: {width}x{height} (minimum is {min}x{min})")]
    ImageTooSmall { width: u32, height: u32, min: u32 },

    #[error("invalid image buffer: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("reference image is constant; VIF is undefined")]
    ConstantReference,

    #[error("unknown transformation `{0}`")]
    UnknownTransformation(String),

    #[error("parameter `{name}` = {value} outside domain [{lo}, {hi}] for {transformation}")]
    ParamOutOfDomain {
        transformation: String,
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("missing parameter `{name}` for {transformation}")]
    MissingParam { transformation: String, name: String },

    #[error("frost texture directory {0} contains no PNG textures")]
    EmptyTextureDir(PathBuf),

    #[error("schema error in {file}: {message}")]
    Schema { file: String, message: String },

    #[error("{file}, row {row}: {message}")]
    InvalidRow {
        file: String,
        row: usize,
        message: String,
    },

    #[error("pair `{0}` has no delta_v annotation")]
    MissingDeltaV(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("baseline undefined: {0}")]
    BaselineUndefined(String),

    #[error("duplicate requirement for ({transformation}, {kind})")]
    DuplicateRequirement { transformation: String, kind: String },

    #[error("test generation failed: {0}")]
    Generation(String),

    #[error("model endpoint error: {0}")]
    Model(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
