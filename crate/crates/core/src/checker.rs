//! Requirement checking: bootstrap batches of transformed test images constrained
//! by visual change, black-box model queries, and the one-sided verdict on the
//! reliability distance.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::RwLock;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{RequirementInstance, RequirementKind};
use crate::human_data::Label;
use crate::image::{load_image, save_image, to_luminance, Image, ImageFormat};
use crate::iqa::{delta_v, PreparedReference, ViewingConditions};
use crate::stats::{hash_str, mean, mix_seed, sample_std, stream_rng};
use crate::transforms::{sample_params, ParamAssignment, TransformationSpec, Transformer};

#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub ground_truth: Label,
    pub image: Image,
}

/// Labelled original images, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn new(root: PathBuf, entries: Vec<DatasetEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("dataset has no images".into()));
        }
        Ok(Self { root, entries })
    }

    /// Reads a `path,ground_truth` CSV; relative paths resolve against the
    /// manifest's directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let root = std::path::absolute(manifest.parent().unwrap_or(Path::new(".")))
            .map_err(|e| Error::io(manifest, e))?;
        let file = std::fs::File::open(manifest).map_err(|e| Error::io(manifest, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
                file: manifest.display().to_string(),
                message: format!("missing column `{name}`"),
            })
        };
        let (pc, gc) = (col("path")?, col("ground_truth")?);
        let mut entries = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |message: String| Error::InvalidRow {
                file: manifest.display().to_string(),
                row: i + 1,
                message,
            };
            let raw = rec.get(pc).ok_or_else(|| bad("missing path".into()))?;
            let path = root.join(raw);
            let ground_truth: Label = rec
                .get(gc)
                .unwrap_or_default()
                .parse()
                .map_err(|e: Error| bad(e.to_string()))?;
            let image = load_image(&path)?;
            entries.push(DatasetEntry {
                path,
                ground_truth,
                image,
            });
        }
        Self::new(root, entries)
    }

    /// `count` synthetic images with random labels. Paths are nominal until
    /// [`Dataset::save`] writes the files.
    pub fn synthetic(count: usize, side: u32, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, 0);
        let entries = (0..count)
            .map(|i| DatasetEntry {
                path: PathBuf::from(format!("img{i:04}.png")),
                ground_truth: if rng.random_bool(0.5) { Label::Pos } else { Label::Neg },
                image: crate::synth::synthetic_image(side, side, mix_seed(seed, i as u64 + 1)),
            })
            .collect();
        Self::new(PathBuf::new(), entries)
    }

    /// Writes every image as PNG plus `dataset.csv` into `dir`; returns the
    /// dataset re-rooted there.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = std::path::absolute(dir.as_ref()).map_err(|e| Error::io(dir.as_ref(), e))?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let manifest = dir.join("dataset.csv");
        let mut w = csv::Writer::from_path(&manifest)?;
        w.write_record(["path", "ground_truth"])?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let name = format!("img{i:04}.png");
            let path = dir.join(&name);
            save_image(&e.image, &path, ImageFormat::Png)?;
            w.write_record([name.as_str(), e.ground_truth.as_str()])?;
            entries.push(DatasetEntry {
                path,
                ..e.clone()
            });
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        Self::new(dir, entries)
    }
}

/// Visual-change values keyed by a digest of the inputs that determine them.
#[derive(Debug, Default)]
pub struct DeltaCache {
    map: RwLock<HashMap<String, f64>>,
}

impl DeltaCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.map.read().expect("cache lock").get(key).copied()
    }

    pub fn insert(&self, key: String, value: f64) {
        self.map.write().expect("cache lock").insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reads a `key,delta_v` CSV; a missing file gives an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cache = Self::new();
        if !path.exists() {
            return Ok(cache);
        }
        let mut reader = csv::Reader::from_path(path)?;
        for rec in reader.records() {
            let rec = rec?;
            if let (Some(k), Some(v)) = (rec.get(0), rec.get(1).and_then(|v| v.parse().ok())) {
                cache.insert(k.to_string(), v);
            }
        }
        Ok(cache)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let map = self.map.read().expect("cache lock");
        let mut keys: Vec<_> = map.keys().collect();
        keys.sort();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["key", "delta_v"])?;
        for k in keys {
            w.write_record([k.as_str(), map[k].to_string().as_str()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub original_index: usize,
    pub original_path: PathBuf,
    pub transformed_path: Option<PathBuf>,
    pub params: ParamAssignment,
    pub delta_v: f64,
    pub ground_truth: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    pub cases: Vec<TestCase>,
    /// Minimal-change cases backing the prediction baseline; empty for correctness.
    pub epsilon_cases: Vec<TestCase>,
}

/// An original for which no parameters within the bound were found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub batch: usize,
    pub original_index: usize,
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub requirement: RequirementInstance,
    pub viewing_conditions: ViewingConditions,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub stratified: bool,
    pub batches: Vec<Batch>,
    pub skips: Vec<Skip>,
    pub attempts: usize,
    pub spot_checks: usize,
}

impl TestSuite {
    pub fn cases(&self) -> impl Iterator<Item = &TestCase> {
        self.batches.iter().flat_map(|b| b.cases.iter().chain(&b.epsilon_cases))
    }
}

pub const STRATA: usize = 5;
pub const SPOT_CHECK_EVERY: usize = 50;
const MIN_ACCEPTANCE: f64 = 0.01;
const ACCEPTANCE_WINDOW: usize = 1000;
const EPSILON_STREAM: u64 = 0xE951;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationOptions {
    pub n: usize,
    pub k: usize,
    pub stratified: bool,
    pub max_attempts: usize,
    /// Where transformed images are written; `None` keeps them in memory only.
    pub work_dir: Option<PathBuf>,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            n: 200,
            k: 50,
            stratified: false,
            max_attempts: 50,
            work_dir: None,
        }
    }
}

struct Prepared {
    reference: PreparedReference,
    key_prefix: String,
}

/// Generates and audits test suites for one dataset.
pub struct Generator<'a> {
    dataset: &'a Dataset,
    transformer: &'a Transformer,
    vc: ViewingConditions,
    cache: Option<&'a DeltaCache>,
    prepared: Vec<Prepared>,
}

struct Counters {
    attempts: usize,
    accepted: usize,
}

impl<'a> Generator<'a> {
    pub fn new(dataset: &'a Dataset, transformer: &'a Transformer, vc: ViewingConditions) -> Result<Self> {
        vc.validate()?;
        let context = format!("{}|{}", serde_json::to_string(&vc)?, transformer.fingerprint());
        let prepared = dataset
            .entries
            .par_iter()
            .map(|e| Prepared {
                reference: PreparedReference::new(&to_luminance(&e.image), &vc),
                key_prefix: format!("{}|{context}", e.image.content_hash()),
            })
            .collect();
        Ok(Self {
            dataset,
            transformer,
            vc,
            cache: None,
            prepared,
        })
    }

    pub fn with_cache(mut self, cache: &'a DeltaCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn key(&self, index: usize, spec: &TransformationSpec, params: &ParamAssignment) -> String {
        let mut h = Sha256::new();
        h.update(self.prepared[index].key_prefix.as_bytes());
        h.update(format!("|{}|{}|{}", spec.name(), params.to_json(), params.seed).as_bytes());
        hex::encode(h.finalize())
    }

    /// Visual change of one candidate and, when freshly computed, the image.
    fn evaluate_candidate(
        &self,
        index: usize,
        spec: &TransformationSpec,
        params: &ParamAssignment,
    ) -> Result<(String, f64, Option<Image>)> {
        let key = self.key(index, spec, params);
        if let Some(v) = self.cache.and_then(|c| c.get(&key)) {
            return Ok((key, v, None));
        }
        let img = self.transformer.apply(spec, &self.dataset.entries[index].image, params)?;
        let v = self.prepared[index].reference.delta_v(&to_luminance(&img))?.value;
        if let Some(c) = self.cache {
            c.insert(key.clone(), v);
        }
        Ok((key, v, Some(img)))
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        index: usize,
        spec: &TransformationSpec,
        (lo, hi): (f64, f64),
        opts: &GenerationOptions,
        rng: &mut impl Rng,
        counters: &mut Counters,
        id: String,
    ) -> Result<Option<TestCase>> {
        for _ in 0..opts.max_attempts {
            counters.attempts += 1;
            let params = sample_params(spec, rng);
            let (key, dv, img) = self.evaluate_candidate(index, spec, &params)?;
            if dv <= hi && (dv > lo || lo == 0.0) {
                counters.accepted += 1;
                let entry = &self.dataset.entries[index];
                let transformed_path = match &opts.work_dir {
                    Some(dir) => Some(self.materialize(dir, &key, index, spec, &params, img)?),
                    None => None,
                };
                return Ok(Some(TestCase {
                    id,
                    original_index: index,
                    original_path: entry.path.clone(),
                    transformed_path,
                    params,
                    delta_v: dv,
                    ground_truth: entry.ground_truth,
                }));
            }
            if counters.attempts >= ACCEPTANCE_WINDOW
                && (counters.accepted as f64) < MIN_ACCEPTANCE * counters.attempts as f64
            {
                return Err(Error::Generation(format!(
                    "acceptance rate {}/{} is below {:.0}%: the {} domains cannot reach delta_v in [{lo}, {hi}]",
                    counters.accepted,
                    counters.attempts,
                    MIN_ACCEPTANCE * 100.0,
                    spec.name()
                )));
            }
        }
        Ok(None)
    }

    fn materialize(
        &self,
        dir: &Path,
        key: &str,
        index: usize,
        spec: &TransformationSpec,
        params: &ParamAssignment,
        img: Option<Image>,
    ) -> Result<PathBuf> {
        let path = dir.join(format!("{key}.png"));
        if path.exists() {
            return Ok(path);
        }
        let img = match img {
            Some(i) => i,
            None => self.transformer.apply(spec, &self.dataset.entries[index].image, params)?,
        };
        let tmp = dir.join(format!("{key}.{}.tmp.png", std::process::id()));
        save_image(&img, &tmp, ImageFormat::Png)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Recomputes the visual change of `case` from scratch, reading the
    /// materialized file when there is one.
    fn recompute(&self, spec: &TransformationSpec, case: &TestCase) -> Result<f64> {
        let original = &self.dataset.entries[case.original_index].image;
        let transformed = match &case.transformed_path {
            Some(p) => load_image(p)?,
            None => self.transformer.apply(spec, original, &case.params)?,
        };
        Ok(delta_v(original, &transformed, &self.vc)?.value)
    }

    fn spot_check(&self, spec: &TransformationSpec, case: &TestCase) -> Result<()> {
        let v = self.recompute(spec, case)?;
        if (v - case.delta_v).abs() > 1e-9 {
            return Err(Error::Generation(format!(
                "spot check of {} recomputed delta_v {v} but recorded {}",
                case.id, case.delta_v
            )));
        }
        Ok(())
    }

    fn batch(
        &self,
        req: &RequirementInstance,
        spec: &TransformationSpec,
        opts: &GenerationOptions,
        seed: u64,
        b: usize,
    ) -> Result<(Batch, Vec<Skip>, usize, usize)> {
        let mut rng = stream_rng(seed, b as u64);
        let mut counters = Counters {
            attempts: 0,
            accepted: 0,
        };
        let mut skips = Vec::new();
        let mut cases = Vec::with_capacity(opts.k);
        let mut checks = 0;
        let len = self.dataset.entries.len();
        let width = req.threshold / STRATA as f64;
        for j in 0..opts.k {
            let bounds = if opts.stratified {
                let s = j % STRATA;
                (s as f64 * width, if s + 1 == STRATA { req.threshold } else { (s + 1) as f64 * width })
            } else {
                (0.0, req.threshold)
            };
            loop {
                let index = rng.random_range(0..len);
                let id = format!("s{seed}-b{b:03}-c{j:03}");
                match self.search(index, spec, bounds, opts, &mut rng, &mut counters, id)? {
                    Some(case) => {
                        if j % SPOT_CHECK_EVERY == 0 {
                            self.spot_check(spec, &case)?;
                            checks += 1;
                        }
                        cases.push(case);
                        break;
                    }
                    None => skips.push(Skip {
                        batch: b,
                        original_index: index,
                        attempts: opts.max_attempts,
                    }),
                }
            }
        }
        let mut epsilon_cases = Vec::new();
        if req.kind == RequirementKind::Prediction {
            let eps = req.epsilon.ok_or_else(|| {
                Error::InvalidArgument(format!("prediction requirement for {} has no epsilon", req.transformation))
            })?;
            let mut rng = stream_rng(mix_seed(seed, EPSILON_STREAM), b as u64);
            for (j, main) in cases.iter().enumerate() {
                let mut index = main.original_index;
                loop {
                    let id = format!("s{seed}-b{b:03}-e{j:03}");
                    match self.search(index, spec, (0.0, eps), opts, &mut rng, &mut counters, id)? {
                        Some(case) => {
                            if j % SPOT_CHECK_EVERY == 0 {
                                self.spot_check(spec, &case)?;
                                checks += 1;
                            }
                            epsilon_cases.push(case);
                            break;
                        }
                        None => {
                            skips.push(Skip {
                                batch: b,
                                original_index: index,
                                attempts: opts.max_attempts,
                            });
                            index = rng.random_range(0..len);
                        }
                    }
                }
            }
        }
        Ok((
            Batch {
                index: b,
                cases,
                epsilon_cases,
            },
            skips,
            counters.attempts,
            checks,
        ))
    }

    /// Draws `opts.n` batches of `opts.k` originals with replacement and, for
    /// each, a transformation whose visual change is within the requirement.
    pub fn generate(&self, req: &RequirementInstance, opts: &GenerationOptions, seed: u64) -> Result<TestSuite> {
        req.validate()?;
        if opts.n < 2 || opts.k < 1 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 2 batches of k >= 1 images, got n={} k={}",
                opts.n, opts.k
            )));
        }
        if opts.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        if let Some(dir) = &opts.work_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let probe = dir.join(format!(".probe-{}", std::process::id()));
            std::fs::write(&probe, b"").map_err(|e| Error::io(dir, e))?;
            let _ = std::fs::remove_file(probe);
        }
        let spec = req.transformation.spec();
        let results = (0..opts.n)
            .into_par_iter()
            .map(|b| self.batch(req, &spec, opts, seed, b))
            .collect::<Result<Vec<_>>>()?;
        let mut suite = TestSuite {
            requirement: req.clone(),
            viewing_conditions: self.vc,
            seed,
            n: opts.n,
            k: opts.k,
            stratified: opts.stratified,
            batches: Vec::with_capacity(opts.n),
            skips: Vec::new(),
            attempts: 0,
            spot_checks: 0,
        };
        for (batch, skips, attempts, checks) in results {
            suite.batches.push(batch);
            suite.skips.extend(skips);
            suite.attempts += attempts;
            suite.spot_checks += checks;
        }
        Ok(suite)
    }

    /// Recomputes the visual change of a random `fraction` of all cases.
    pub fn audit(&self, suite: &TestSuite, fraction: f64, seed: u64) -> Result<AuditReport> {
        let spec = suite.requirement.transformation.spec();
        let all: Vec<(&TestCase, f64)> = suite
            .batches
            .iter()
            .flat_map(|b| {
                let eps = suite.requirement.epsilon.unwrap_or(0.0);
                b.cases
                    .iter()
                    .map(|c| (c, suite.requirement.threshold))
                    .chain(b.epsilon_cases.iter().map(move |c| (c, eps)))
            })
            .collect();
        let count = ((all.len() as f64 * fraction.clamp(0.0, 1.0)).ceil() as usize).min(all.len());
        let mut rng = stream_rng(seed, 0xA0D1);
        let picks = rand::seq::index::sample(&mut rng, all.len(), count).into_vec();
        let rows = picks
            .par_iter()
            .map(|&i| {
                let (case, bound) = all[i];
                let v = self.recompute(&spec, case)?;
                Ok((case.id.clone(), v, (v - case.delta_v).abs(), v > bound))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AuditReport {
            checked: rows.len(),
            violations: rows.iter().filter(|r| r.3).map(|r| r.0.clone()).collect(),
            max_discrepancy: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    /// Ids of cases whose recomputed visual change exceeds their bound.
    pub violations: Vec<String>,
    pub max_discrepancy: f64,
}

pub fn generate_tests(
    dataset: &Dataset,
    req: &RequirementInstance,
    vc: ViewingConditions,
    opts: &GenerationOptions,
    seed: u64,
) -> Result<TestSuite> {
    let transformer = Transformer::default();
    Generator::new(dataset, &transformer, vc)?.generate(req, opts, seed)
}

/// Models shipped with the checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Builtin {
    /// Always answers the ground truth.
    Oracle,
    ConstantPositive,
    /// Ground truth, flipped with probability `drop` on transformed images
    /// whose visual change exceeds `at`.
    Degrading { drop: f64, at: f64 },
}

impl Builtin {
    pub fn validate(&self) -> Result<()> {
        if let Builtin::Degrading { drop, at } = *self {
            if !(0.0..=1.0).contains(&drop) || !(0.0..1.0).contains(&at) {
                return Err(Error::InvalidArgument(format!(
                    "degrading needs drop in [0, 1] and at in [0, 1), got drop={drop} at={at}"
                )));
            }
        }
        Ok(())
    }

    fn answer(&self, q: &ModelQuery) -> Label {
        match *self {
            Builtin::Oracle => q.ground_truth,
            Builtin::ConstantPositive => Label::Pos,
            Builtin::Degrading { drop, at } => {
                let u = (mix_seed(hash_str(&q.id), 0xDE6) >> 11) as f64 / (1u64 << 53) as f64;
                if !q.is_original && q.delta_v > at && u < drop {
                    q.ground_truth.flip()
                } else {
                    q.ground_truth
                }
            }
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Builtin::Oracle => f.write_str("oracle"),
            Builtin::ConstantPositive => f.write_str("constant_positive"),
            Builtin::Degrading { drop, at } => write!(f, "degrading(drop={drop},at={at})"),
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    /// Accepts `oracle`, `constant_positive`, `degrading` and
    /// `degrading(drop=0.1,at=0.5)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.split_once('(') {
            Some((n, rest)) => (
                n.trim(),
                rest.strip_suffix(')')
                    .ok_or_else(|| Error::InvalidArgument(format!("unbalanced parentheses in `{s}`")))?,
            ),
            None => (s, ""),
        };
        let model = match name {
            "oracle" if args.is_empty() => Builtin::Oracle,
            "constant_positive" if args.is_empty() => Builtin::ConstantPositive,
            "degrading" => {
                let (mut drop, mut at) = (0.1, 0.0);
                for kv in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{kv}`")))?;
                    let v: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad number in `{kv}`")))?;
                    match k.trim() {
                        "drop" => drop = v,
                        "at" => at = v,
                        other => return Err(Error::InvalidArgument(format!("unknown degrading parameter `{other}`"))),
                    }
                }
                Builtin::Degrading { drop, at }
            }
            _ => return Err(Error::InvalidArgument(format!("unknown builtin model `{s}`"))),
        };
        model.validate()?;
        Ok(model)
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq)]
pub enum ModelEndpoint {
    Builtin(Builtin),
    /// Shell command speaking the line protocol; `timeout` applies per batch.
    Subprocess { command: String, timeout: Duration },
}

impl ModelEndpoint {
    pub fn subprocess(command: impl Into<String>) -> Self {
        ModelEndpoint::Subprocess {
            command: command.into(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ModelEndpoint::Builtin(b) => format!("builtin:{b}"),
            ModelEndpoint::Subprocess { command, .. } => format!("subprocess:{command}"),
        }
    }
}

/// One image sent to a model. Builtins use the ground truth and visual change;
/// subprocess endpoints only see `id` and `path`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelQuery {
    pub id: String,
    pub path: PathBuf,
    pub ground_truth: Label,
    pub delta_v: f64,
    pub is_original: bool,
}

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    path: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    id: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

/// A running adapter process.
pub struct SubprocessSession {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl SubprocessSession {
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Model(format!("cannot start `{command}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            timeout,
        })
    }

    fn fail(&mut self, message: String) -> Error {
        let _ = self.child.kill();
        let _ = self.child.wait();
        Error::Model(message)
    }

    pub fn predict(&mut self, queries: &[ModelQuery]) -> Result<Vec<Label>> {
        let mut pending: HashMap<&str, usize> = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if pending.insert(q.id.as_str(), i).is_some() {
                return Err(Error::Model(format!("duplicate request id `{}`", q.id)));
            }
        }
        let mut payload = String::new();
        for q in queries {
            let path = std::path::absolute(&q.path).map_err(|e| Error::io(&q.path, e))?;
            let req = Request {
                id: &q.id,
                path: path.display().to_string(),
            };
            payload.push_str(&serde_json::to_string(&req)?);
            payload.push('\n');
        }
        let written = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(payload.as_bytes()).and_then(|_| stdin.flush()),
            None => return Err(Error::Model("session already closed".into())),
        };
        if let Err(e) = written {
            return Err(self.fail(format!("cannot write to adapter: {e}")));
        }
        let deadline = Instant::now() + self.timeout;
        let mut labels: Vec<Option<Label>> = vec![None; queries.len()];
        let mut answered = 0;
        while answered < queries.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(self.fail(format!("cannot read adapter output: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(self.fail(format!(
                        "adapter timed out after {:?} with {answered} of {} replies",
                        self.timeout,
                        queries.len()
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.fail(format!(
                        "adapter closed its output after {answered} of {} replies",
                        queries.len()
                    )))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let reply: Reply = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Err(self.fail(format!("malformed reply `{line}`: {e}"))),
            };
            let Some(&slot) = pending.get(reply.id.as_str()) else {
                return Err(self.fail(format!("reply for unknown id `{}`", reply.id)));
            };
            if labels[slot].is_some() {
                return Err(self.fail(format!("duplicate reply for `{}`", reply.id)));
            }
            let label = match (reply.label.as_deref(), reply.error) {
                (Some("pos"), None) => Label::Pos,
                (Some("neg"), None) => Label::Neg,
                (None, Some(msg)) => return Err(self.fail(format!("adapter failed on `{}`: {msg}", reply.id))),
                _ => return Err(self.fail(format!("malformed reply `{line}`"))),
            };
            labels[slot] = Some(label);
            answered += 1;
        }
        Ok(labels.into_iter().map(|l| l.expect("all answered")).collect())
    }

    /// Closes the adapter's input and waits for a clean exit without further output.
    pub fn finish(mut self) -> Result<()> {
        drop(self.stdin.take());
        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Err(self.fail(format!("unsolicited reply `{line}`"))),
                Ok(Err(e)) => return Err(self.fail(format!("cannot read adapter output: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(self.fail("adapter did not exit after input closed".into())),
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let status = self.child.wait().map_err(|e| Error::Model(format!("cannot wait for adapter: {e}")))?;
        if !status.success() {
            return Err(Error::Model(format!("adapter exited with {status}")));
        }
        Ok(())
    }
}

/// An open connection to a model for the duration of one check.
pub enum ModelRunner {
    Builtin(Builtin),
    Subprocess(SubprocessSession),
}

impl ModelRunner {
    pub fn open(endpoint: &ModelEndpoint) -> Result<Self> {
        match endpoint {
            ModelEndpoint::Builtin(b) => {
                b.validate()?;
                Ok(ModelRunner::Builtin(*b))
            }
            ModelEndpoint::Subprocess { command, timeout } => {
                Ok(ModelRunner::Subprocess(SubprocessSession::spawn(command, *timeout)?))
            }
        }
    }

    /// One label per query, in query order.
    pub fn predict(&mut self, queries: &[ModelQuery]) -> Result<Vec<Label>> {
        match self {
            ModelRunner::Builtin(b) => Ok(queries.iter().map(|q| b.answer(q)).collect()),
            ModelRunner::Subprocess(s) => s.predict(queries),
        }
    }

    pub fn close(self) -> Result<()> {
        match self {
            ModelRunner::Builtin(_) => Ok(()),
            ModelRunner::Subprocess(s) => s.finish(),
        }
    }
}

pub fn run_model(endpoint: &ModelEndpoint, queries: &[ModelQuery]) -> Result<Vec<Label>> {
    let mut runner = ModelRunner::open(endpoint)?;
    let labels = runner.predict(queries)?;
    runner.close()?;
    Ok(labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Satisfied,
    Violated,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Satisfied => "satisfied",
            Verdict::Violated => "violated",
        })
    }
}

/// One-sided critical value `Φ⁻¹(1 − α)`, rounded to three decimals as in
/// z-tables (1.645 at α = 0.05).
pub fn z_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let z = Normal::standard().inverse_cdf(1.0 - alpha);
    Ok((z * 1000.0).round() / 1000.0)
}

/// Margin `distance + z·σ` and the verdict; a zero σ leaves the distance alone.
pub fn decide(distance: f64, distance_stddev: f64, alpha: f64) -> Result<(f64, Verdict)> {
    let z = z_alpha(alpha)?;
    let margin = if distance_stddev == 0.0 {
        distance
    } else {
        distance + z * distance_stddev
    };
    let verdict = if margin <= 0.0 { Verdict::Satisfied } else { Verdict::Violated };
    Ok((margin, verdict))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchValue {
    pub batch: usize,
    pub baseline: f64,
    pub transformed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub requirement: RequirementInstance,
    pub endpoint: String,
    pub baseline_estimate: f64,
    pub transformed_estimate: f64,
    pub baseline_stddev: f64,
    pub transformed_stddev: f64,
    pub reliability_distance: f64,
    pub distance_stddev: f64,
    pub z: f64,
    pub margin: f64,
    pub verdict: Verdict,
    pub alpha: f64,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub skipped: usize,
    pub runtime_seconds: f64,
    pub batch_values: Vec<BatchValue>,
}

impl CheckReport {
    pub fn from_batches(
        suite: &TestSuite,
        endpoint: &ModelEndpoint,
        alpha: f64,
        batch_values: Vec<BatchValue>,
        runtime_seconds: f64,
    ) -> Result<Self> {
        let base: Vec<f64> = batch_values.iter().map(|b| b.baseline).collect();
        let tr: Vec<f64> = batch_values.iter().map(|b| b.transformed).collect();
        let (sb, st) = (sample_std(&base), sample_std(&tr));
        let distance = mean(&base) - mean(&tr);
        let distance_stddev = (sb * sb + st * st).sqrt();
        let (margin, verdict) = decide(distance, distance_stddev, alpha)?;
        Ok(Self {
            requirement: suite.requirement.clone(),
            endpoint: endpoint.describe(),
            baseline_estimate: mean(&base),
            transformed_estimate: mean(&tr),
            baseline_stddev: sb,
            transformed_stddev: st,
            reliability_distance: distance,
            distance_stddev,
            z: z_alpha(alpha)?,
            margin,
            verdict,
            alpha,
            n: suite.n,
            k: suite.k,
            seed: suite.seed,
            stratified: suite.stratified,
            skipped: suite.skips.len(),
            runtime_seconds,
            batch_values,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn write_batch_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["batch", "baseline", "transformed", "distance"])?;
        for b in &self.batch_values {
            w.write_record([
                b.batch.to_string(),
                b.baseline.to_string(),
                b.transformed.to_string(),
                (b.baseline - b.transformed).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn model_path(p: Option<&PathBuf>, id: &str, endpoint: &ModelEndpoint) -> Result<PathBuf> {
    match (p, endpoint) {
        (Some(p), _) => Ok(p.clone()),
        (None, ModelEndpoint::Builtin(_)) => Ok(PathBuf::new()),
        (None, ModelEndpoint::Subprocess { .. }) => Err(Error::InvalidArgument(format!(
            "case {id} has no image file; subprocess models need a work directory"
        ))),
    }
}

fn batch_queries(batch: &Batch, endpoint: &ModelEndpoint) -> Result<Vec<ModelQuery>> {
    let mut q = Vec::with_capacity(batch.cases.len() * 2 + batch.epsilon_cases.len());
    for c in &batch.cases {
        q.push(ModelQuery {
            id: format!("{}-o", c.id),
            path: model_path(Some(&c.original_path), &c.id, endpoint)?,
            ground_truth: c.ground_truth,
            delta_v: 0.0,
            is_original: true,
        });
    }
    for c in batch.cases.iter().chain(&batch.epsilon_cases) {
        q.push(ModelQuery {
            id: c.id.clone(),
            path: model_path(c.transformed_path.as_ref(), &c.id, endpoint)?,
            ground_truth: c.ground_truth,
            delta_v: c.delta_v,
            is_original: false,
        });
    }
    for c in displaced_epsilon_cases(batch) {
        q.push(ModelQuery {
            id: format!("{}-o", c.id),
            path: model_path(Some(&c.original_path), &c.id, endpoint)?,
            ground_truth: c.ground_truth,
            delta_v: 0.0,
            is_original: true,
        });
    }
    Ok(q)
}

/// Minimal-change cases drawn from a different original than the main case
/// at the same position (after a skip); their originals are queried separately.
fn displaced_epsilon_cases(batch: &Batch) -> impl Iterator<Item = &TestCase> {
    batch
        .epsilon_cases
        .iter()
        .zip(&batch.cases)
        .filter(|(e, c)| e.original_index != c.original_index)
        .map(|(e, _)| e)
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        hits as f64 / total as f64
    }
}

/// Runs every batch through the model, one batch at a time, and computes
/// the per-batch metrics and verdict.
pub fn evaluate(suite: &TestSuite, endpoint: &ModelEndpoint, alpha: f64) -> Result<CheckReport> {
    z_alpha(alpha)?;
    let start = Instant::now();
    let mut runner = ModelRunner::open(endpoint)?;
    let mut values = Vec::with_capacity(suite.batches.len());
    for batch in &suite.batches {
        let queries = batch_queries(batch, endpoint)?;
        let labels = runner.predict(&queries)?;
        let k = batch.cases.len();
        let (orig, rest) = labels.split_at(k);
        let (main, rest) = rest.split_at(k);
        let (eps, displaced) = rest.split_at(batch.epsilon_cases.len());
        let value = match suite.requirement.kind {
            RequirementKind::Correctness => BatchValue {
                batch: batch.index,
                baseline: fraction(
                    orig.iter().zip(&batch.cases).filter(|(l, c)| **l == c.ground_truth).count(),
                    k,
                ),
                transformed: fraction(
                    main.iter().zip(&batch.cases).filter(|(l, c)| **l == c.ground_truth).count(),
                    k,
                ),
            },
            RequirementKind::Prediction => {
                if eps.len() != k {
                    return Err(Error::InvalidArgument(format!(
                        "batch {} has {} minimal-change cases for {k} originals",
                        batch.index,
                        eps.len()
                    )));
                }
                let mut displaced = displaced.iter();
                let eps_originals: Vec<Label> = batch
                    .epsilon_cases
                    .iter()
                    .zip(&batch.cases)
                    .zip(orig)
                    .map(|((e, c), &o)| {
                        if e.original_index == c.original_index {
                            o
                        } else {
                            *displaced.next().expect("one query per displaced case")
                        }
                    })
                    .collect();
                BatchValue {
                    batch: batch.index,
                    baseline: fraction(eps.iter().zip(&eps_originals).filter(|(a, b)| a == b).count(), k),
                    transformed: fraction(main.iter().zip(orig).filter(|(a, b)| a == b).count(), k),
                }
            }
        };
        values.push(value);
    }
    runner.close()?;
    CheckReport::from_batches(suite, endpoint, alpha, values, start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateComparison {
    pub name: String,
    pub first: f64,
    pub second: f64,
    pub difference: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub seeds: [u64; 2],
    pub n: usize,
    pub estimates: Vec<EstimateComparison>,
}

/// Compares two reports for the same requirement: converged iff each
/// estimate differs by at most `2·σ_pooled/√n`, `σ_pooled² = (σ₁² + σ₂²)/2`.
pub fn compare_runs(a: &CheckReport, b: &CheckReport) -> ConvergenceReport {
    let n = a.n.min(b.n) as f64;
    let pair = |name: &str, x: f64, y: f64, sx: f64, sy: f64| {
        let pooled = ((sx * sx + sy * sy) / 2.0).sqrt();
        EstimateComparison {
            name: name.to_string(),
            first: x,
            second: y,
            difference: (x - y).abs(),
            bound: 2.0 * pooled / n.sqrt(),
        }
    };
    let estimates = vec![
        pair(
            "baseline",
            a.baseline_estimate,
            b.baseline_estimate,
            a.baseline_stddev,
            b.baseline_stddev,
        ),
        pair(
            "transformed",
            a.transformed_estimate,
            b.transformed_estimate,
            a.transformed_stddev,
            b.transformed_stddev,
        ),
    ];
    ConvergenceReport {
        converged: estimates.iter().all(|e| e.difference <= e.bound),
        seeds: [a.seed, b.seed],
        n: a.n.min(b.n),
        estimates,
    }
}

/// Runs generation and evaluation under two seeds and compares the estimates.
pub fn convergence_check(
    generator: &Generator,
    req: &RequirementInstance,
    endpoint: &ModelEndpoint,
    opts: &GenerationOptions,
    seeds: [u64; 2],
    alpha: f64,
) -> Result<ConvergenceReport> {
    if seeds[0] == seeds[1] {
        return Err(Error::InvalidArgument("convergence check needs two distinct seeds".into()));
    }
    let run = |seed| evaluate(&generator.generate(req, opts, seed)?, endpoint, alpha);
    Ok(compare_runs(&run(seeds[0])?, &run(seeds[1])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::TransformKind;

    fn requirement(kind: RequirementKind, threshold: f64) -> RequirementInstance {
        RequirementInstance {
            task: "test".into(),
            transformation: TransformKind::Brightness,
            kind,
            threshold,
            epsilon: (kind == RequirementKind::Prediction).then_some(0.05),
            alpha: 0.05,
            provenance: "unit".into(),
        }
    }

    fn small_opts() -> GenerationOptions {
        GenerationOptions {
            n: 4,
            k: 6,
            ..Default::default()
        }
    }

    #[test]
    fn z_table_value() {
        assert_eq!(z_alpha(0.05).unwrap(), 1.645);
        assert_eq!(z_alpha(0.01).unwrap(), 2.326);
        assert!(z_alpha(0.0).is_err());
    }

    #[test]
    fn zero_spread_uses_the_distance() {
        assert_eq!(decide(0.0, 0.0, 0.05).unwrap(), (0.0, Verdict::Satisfied));
        assert_eq!(decide(0.01, 0.0, 0.05).unwrap().1, Verdict::Violated);
        assert_eq!(decide(-0.01, 0.0, 0.05).unwrap(), (-0.01, Verdict::Satisfied));
    }

    #[test]
    fn builtin_parsing() {
        assert_eq!("oracle".parse::<Builtin>().unwrap(), Builtin::Oracle);
        assert_eq!(
            "degrading(drop=0.2, at=0.5)".parse::<Builtin>().unwrap(),
            Builtin::Degrading { drop: 0.2, at: 0.5 }
        );
        assert!("degrading(drop=2)".parse::<Builtin>().is_err());
        assert!("degrading(speed=1)".parse::<Builtin>().is_err());
        assert!("gpt".parse::<Builtin>().is_err());
        let b = Builtin::Degrading { drop: 0.25, at: 0.1 };
        assert_eq!(b.to_string().parse::<Builtin>().unwrap(), b);
    }

    #[test]
    fn vacuous_threshold_accepts_first_attempt() {
        let ds = Dataset::synthetic(4, 32, 1).unwrap();
        let suite = generate_tests(
            &ds,
            &requirement(RequirementKind::Correctness, 1.0),
            ViewingConditions::default(),
            &small_opts(),
            3,
        )
        .unwrap();
        assert_eq!(suite.attempts, 24);
        assert!(suite.skips.is_empty());
        assert!(suite.spot_checks >= 4);
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let ds = Dataset::synthetic(5, 32, 2).unwrap();
        let req = requirement(RequirementKind::Prediction, 0.3);
        let a = generate_tests(&ds, &req, ViewingConditions::default(), &small_opts(), 9).unwrap();
        let b = generate_tests(&ds, &req, ViewingConditions::default(), &small_opts(), 9).unwrap();
        assert_eq!(a, b);
        for batch in &a.batches {
            assert_eq!(batch.cases.len(), 6);
            assert_eq!(batch.epsilon_cases.len(), 6);
            assert!(batch.cases.iter().all(|c| c.delta_v <= 0.3));
            assert!(batch.epsilon_cases.iter().all(|c| c.delta_v <= 0.05));
        }
    }

    #[test]
    fn stratified_generation_covers_strata() {
        let ds = Dataset::synthetic(5, 32, 2).unwrap();
        let opts = GenerationOptions {
            stratified: true,
            n: 2,
            k: 10,
            ..Default::default()
        };
        let suite = generate_tests(
            &ds,
            &requirement(RequirementKind::Correctness, 0.8),
            ViewingConditions::default(),
            &opts,
            5,
        )
        .unwrap();
        for batch in &suite.batches {
            for (j, c) in batch.cases.iter().enumerate() {
                let s = j % STRATA;
                let (lo, hi) = (s as f64 * 0.16, (s + 1) as f64 * 0.16);
                assert!(c.delta_v <= hi + 1e-12 && (c.delta_v > lo || s == 0), "{j}: {}", c.delta_v);
            }
        }
    }

    #[test]
    fn unreachable_bound_errors() {
        let ds = Dataset::synthetic(3, 32, 4).unwrap();
        let mut req = requirement(RequirementKind::Correctness, 1.0);
        req.transformation = TransformKind::Frost;
        req.threshold = 0.01;
        let err = generate_tests(&ds, &req, ViewingConditions::default(), &small_opts(), 1).unwrap_err();
        assert!(matches!(err, Error::Generation(_)), "{err}");
    }

    #[test]
    fn unwritable_work_dir_errors() {
        let ds = Dataset::synthetic(2, 32, 4).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        let opts = GenerationOptions {
            work_dir: Some(file.path().join("sub")),
            ..small_opts()
        };
        let req = requirement(RequirementKind::Correctness, 1.0);
        assert!(matches!(
            generate_tests(&ds, &req, ViewingConditions::default(), &opts, 1),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn cache_and_materialization_reuse() {
        let ds = Dataset::synthetic(3, 32, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let transformer = Transformer::default();
        let cache = DeltaCache::new();
        let generator = Generator::new(&ds, &transformer, ViewingConditions::default())
            .unwrap()
            .with_cache(&cache);
        let opts = GenerationOptions {
            work_dir: Some(dir.path().to_path_buf()),
            ..small_opts()
        };
        let req = requirement(RequirementKind::Correctness, 0.6);
        let a = generator.generate(&req, &opts, 2).unwrap();
        assert!(!cache.is_empty());
        let b = generator.generate(&req, &opts, 2).unwrap();
        assert_eq!(a, b);
        let audit = generator.audit(&a, 1.0, 0).unwrap();
        assert!(audit.violations.is_empty());
        assert!(audit.max_discrepancy < 1e-9);
        let csv = dir.path().join("cache.csv");
        cache.save(&csv).unwrap();
        assert_eq!(DeltaCache::load(&csv).unwrap().len(), cache.len());
    }

    #[test]
    fn oracle_satisfies_and_constant_positive_is_constant() {
        let ds = Dataset::synthetic(6, 32, 7).unwrap();
        for kind in [RequirementKind::Correctness, RequirementKind::Prediction] {
            let suite = generate_tests(&ds, &requirement(kind, 0.8), ViewingConditions::default(), &small_opts(), 1)
                .unwrap();
            let rep = evaluate(&suite, &ModelEndpoint::Builtin(Builtin::Oracle), 0.05).unwrap();
            assert_eq!(rep.verdict, Verdict::Satisfied);
            assert_eq!(rep.margin, 0.0);
            let queries = batch_queries(&suite.batches[0], &ModelEndpoint::Builtin(Builtin::Oracle)).unwrap();
            let labels = run_model(&ModelEndpoint::Builtin(Builtin::ConstantPositive), &queries).unwrap();
            assert!(labels.iter().all(|l| *l == Label::Pos));
            let labels = run_model(&ModelEndpoint::Builtin(Builtin::Oracle), &queries).unwrap();
            assert!(labels.iter().zip(&queries).all(|(l, q)| *l == q.ground_truth));
        }
    }

    #[test]
    fn displaced_minimal_change_cases_compare_with_their_own_original() {
        let ds = Dataset::synthetic(6, 32, 8).unwrap();
        let mut req = requirement(RequirementKind::Prediction, 0.8);
        req.epsilon = Some(0.0);
        let opts = GenerationOptions {
            max_attempts: 1,
            n: 4,
            k: 12,
            ..Default::default()
        };
        let suite = generate_tests(&ds, &req, ViewingConditions::default(), &opts, 3).unwrap();
        assert!(suite.batches.iter().any(|b| displaced_epsilon_cases(b).next().is_some()));
        let rep = evaluate(&suite, &ModelEndpoint::Builtin(Builtin::Oracle), 0.05).unwrap();
        assert!(rep.batch_values.iter().all(|v| v.baseline == 1.0 && v.transformed == 1.0));
        assert_eq!(rep.verdict, Verdict::Satisfied);
    }

    #[test]
    fn subprocess_without_files_is_rejected() {
        let ds = Dataset::synthetic(2, 32, 7).unwrap();
        let suite = generate_tests(
            &ds,
            &requirement(RequirementKind::Correctness, 1.0),
            ViewingConditions::default(),
            &small_opts(),
            1,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&suite, &ModelEndpoint::subprocess("cat"), 0.05),
            Err(Error::InvalidArgument(_))
        ));
    }
}
