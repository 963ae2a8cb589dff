//! Stimulus pairs, human trial records and a synthetic-human simulator.
//!
//! Pairs manifest header:
//! `pair_id,original_path,transformed_path,transformation,params_json,seed,delta_v`
//!
//! Trials header:
//! `trial_id,pair_id,shown,subject_id,response,ground_truth`
//!
//! Relative image paths are resolved against the directory holding the
//! manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, to_luminance, Image, ImageFormat};
use crate::iqa::{PreparedReference, ViewingConditions};
use crate::transforms::{sample_params, ParamAssignment, TransformKind, Transformer};

pub const MANIFEST_HEADER: [&str; 7] = [
    "pair_id",
    "original_path",
    "transformed_path",
    "transformation",
    "params_json",
    "seed",
    "delta_v",
];

pub const TRIALS_HEADER: [&str; 6] = ["trial_id", "pair_id", "shown", "subject_id", "response", "ground_truth"];

/// Binary task label; `pos` is the task class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn flip(self) -> Self {
        match self {
            Label::Pos => Label::Neg,
            Label::Neg => Label::Pos,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pos => "pos",
            Label::Neg => "neg",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pos" => Ok(Label::Pos),
            "neg" => Ok(Label::Neg),
            other => Err(Error::InvalidArgument(format!("label must be pos or neg, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shown {
    Original,
    Transformed,
}

impl Shown {
    pub fn as_str(self) -> &'static str {
        match self {
            Shown::Original => "original",
            Shown::Transformed => "transformed",
        }
    }
}

impl FromStr for Shown {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Shown::Original),
            "transformed" => Ok(Shown::Transformed),
            other => Err(Error::InvalidArgument(format!(
                "shown must be original or transformed, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub pair_id: String,
    pub original_path: PathBuf,
    pub transformed_path: PathBuf,
    pub transformation: TransformKind,
    pub params: ParamAssignment,
    pub delta_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub pair_id: String,
    pub shown: Shown,
    pub subject_id: String,
    pub response: Label,
    pub ground_truth: Label,
}

impl Trial {
    pub fn is_correct(&self) -> bool {
        self.response == self.ground_truth
    }
}

/// Ordered list of stimulus pairs plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairManifest {
    pub pairs: Vec<ImagePair>,
    pub base_dir: PathBuf,
}

impl PairManifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        resolve(&self.base_dir, path)
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub pairs: BTreeMap<String, ImagePair>,
    pub task: String,
    pub transformation: TransformKind,
    pub base_dir: PathBuf,
}

impl TrialSet {
    /// Validates the referential and one-exposure invariants.
    pub fn new(
        trials: Vec<Trial>,
        pairs: BTreeMap<String, ImagePair>,
        task: impl Into<String>,
        transformation: TransformKind,
        base_dir: PathBuf,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut ids = HashSet::new();
        for (i, t) in trials.iter().enumerate() {
            let row = i + 1;
            if !pairs.contains_key(&t.pair_id) {
                return Err(invalid_row("trials", row, format!("unknown pair_id `{}`", t.pair_id)));
            }
            if !ids.insert(t.trial_id.as_str()) {
                return Err(invalid_row("trials", row, format!("duplicate trial_id `{}`", t.trial_id)));
            }
            if !seen.insert((t.subject_id.as_str(), t.pair_id.as_str())) {
                return Err(invalid_row(
                    "trials",
                    row,
                    format!("subject `{}` already saw a version of pair `{}`", t.subject_id, t.pair_id),
                ));
            }
        }
        if let Some(p) = pairs.values().find(|p| p.transformation != transformation) {
            return Err(Error::Schema {
                file: "pairs".into(),
                message: format!(
                    "pair `{}` uses {} but the set is for {transformation}",
                    p.pair_id, p.transformation
                ),
            });
        }
        Ok(Self {
            trials,
            pairs,
            task: task.into(),
            transformation,
            base_dir,
        })
    }

    pub fn delta_v(&self, pair_id: &str) -> Result<f64> {
        self.pairs
            .get(pair_id)
            .and_then(|p| p.delta_v)
            .ok_or_else(|| Error::MissingDeltaV(pair_id.to_string()))
    }

    pub fn manifest(&self) -> PairManifest {
        PairManifest {
            pairs: self.pairs.values().cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    /// Keeps only the trials and pairs whose pair id satisfies `keep`.
    pub fn filter_pairs(&self, mut keep: impl FnMut(&str) -> bool) -> TrialSet {
        let pairs: BTreeMap<_, _> = self
            .pairs
            .iter()
            .filter(|(id, _)| keep(id))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let trials = self
            .trials
            .iter()
            .filter(|t| pairs.contains_key(&t.pair_id))
            .cloned()
            .collect();
        TrialSet {
            trials,
            pairs,
            task: self.task.clone(),
            transformation: self.transformation,
            base_dir: self.base_dir.clone(),
        }
    }
}

fn invalid_row(file: &str, row: usize, message: String) -> Error {
    Error::InvalidRow {
        file: file.to_string(),
        row,
        message,
    }
}

struct Columns {
    index: HashMap<String, usize>,
    file: String,
}

impl Columns {
    fn new(headers: &csv::StringRecord, required: &[&str], file: &Path) -> Result<Self> {
        let index: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_string(), i))
            .collect();
        let file = file.display().to_string();
        for name in required {
            if !index.contains_key(*name) {
                return Err(Error::Schema {
                    file,
                    message: format!("missing column `{name}`"),
                });
            }
        }
        Ok(Self { index, file })
    }

    fn get<'r>(&self, record: &'r csv::StringRecord, name: &str, row: usize) -> Result<&'r str> {
        record
            .get(self.index[name])
            .map(str::trim)
            .ok_or_else(|| invalid_row(&self.file, row, format!("missing field `{name}`")))
    }

    fn parse<T: FromStr>(&self, record: &csv::StringRecord, name: &str, row: usize) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.get(record, name, row)?;
        raw.parse::<T>()
            .map_err(|e| invalid_row(&self.file, row, format!("bad `{name}` value `{raw}`: {e}")))
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<PairManifest> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let cols = Columns::new(reader.headers()?, &MANIFEST_HEADER, path)?;
    let mut pairs = Vec::new();
    let mut ids = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let pair_id = cols.get(&record, "pair_id", row)?.to_string();
        if !ids.insert(pair_id.clone()) {
            return Err(invalid_row(&cols.file, row, format!("duplicate pair_id `{pair_id}`")));
        }
        let transformation: TransformKind = cols.parse(&record, "transformation", row)?;
        let seed: u64 = cols.parse(&record, "seed", row)?;
        let params_json = cols.get(&record, "params_json", row)?;
        let params = ParamAssignment::from_json(params_json, seed)
            .map_err(|e| invalid_row(&cols.file, row, format!("bad params_json: {e}")))?;
        let dv = cols.get(&record, "delta_v", row)?;
        let delta_v = if dv.is_empty() {
            None
        } else {
            let v: f64 = cols.parse(&record, "delta_v", row)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid_row(&cols.file, row, format!("delta_v {v} outside [0, 1]")));
            }
            Some(v)
        };
        pairs.push(ImagePair {
            pair_id,
            original_path: cols.get(&record, "original_path", row)?.into(),
            transformed_path: cols.get(&record, "transformed_path", row)?.into(),
            transformation,
            params,
            delta_v,
        });
    }
    Ok(PairManifest {
        pairs,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

pub fn write_manifest(manifest: &PairManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for p in &manifest.pairs {
        w.write_record([
            p.pair_id.clone(),
            p.original_path.display().to_string(),
            p.transformed_path.display().to_string(),
            p.transformation.name().to_string(),
            p.params.to_json(),
            p.params.seed.to_string(),
            p.delta_v.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads trials and pairs and validates them as a [`TrialSet`]. The task label
/// is left empty; callers set it.
pub fn parse_trials(trials_file: impl AsRef<Path>, manifest_file: impl AsRef<Path>) -> Result<TrialSet> {
    let manifest = parse_manifest(manifest_file.as_ref())?;
    let transformation = manifest
        .pairs
        .first()
        .map(|p| p.transformation)
        .ok_or_else(|| Error::Schema {
            file: manifest_file.as_ref().display().to_string(),
            message: "manifest has no pairs".into(),
        })?;
    let path = trials_file.as_ref();
    let mut reader = open_csv(path)?;
    let cols = Columns::new(reader.headers()?, &TRIALS_HEADER, path)?;
    let mut trials = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        trials.push(Trial {
            trial_id: cols.get(&record, "trial_id", row)?.to_string(),
            pair_id: cols.get(&record, "pair_id", row)?.to_string(),
            shown: cols.parse(&record, "shown", row)?,
            subject_id: cols.get(&record, "subject_id", row)?.to_string(),
            response: cols.parse(&record, "response", row)?,
            ground_truth: cols.parse(&record, "ground_truth", row)?,
        });
    }
    let base_dir = manifest.base_dir.clone();
    let pairs = manifest.pairs.into_iter().map(|p| (p.pair_id.clone(), p)).collect();
    TrialSet::new(trials, pairs, "", transformation, base_dir).map_err(|e| match e {
        Error::InvalidRow { row, message, .. } => invalid_row(&path.display().to_string(), row, message),
        other => other,
    })
}

pub fn write_trials(set: &TrialSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRIALS_HEADER)?;
    for t in &set.trials {
        w.write_record([
            t.trial_id.as_str(),
            t.pair_id.as_str(),
            t.shown.as_str(),
            t.subject_id.as_str(),
            t.response.as_str(),
            t.ground_truth.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Computes the visual change of every pair, overwriting previous values.
pub fn annotate_pairs(manifest: &mut PairManifest, vc: &ViewingConditions) -> Result<()> {
    vc.validate()?;
    let base = manifest.base_dir.clone();
    let scores: Vec<f64> = manifest
        .pairs
        .par_iter()
        .map(|p| {
            let original = load_image(resolve(&base, &p.original_path))?;
            let transformed = load_image(resolve(&base, &p.transformed_path))?;
            let reference = PreparedReference::new(&to_luminance(&original), vc);
            Ok(reference.delta_v(&to_luminance(&transformed))?.value)
        })
        .collect::<Result<_>>()?;
    for (p, v) in manifest.pairs.iter_mut().zip(scores) {
        p.delta_v = Some(v);
    }
    Ok(())
}

pub fn attach_delta_v(set: &TrialSet, vc: &ViewingConditions) -> Result<TrialSet> {
    let mut manifest = set.manifest();
    annotate_pairs(&mut manifest, vc)?;
    let mut out = set.clone();
    out.pairs = manifest.pairs.into_iter().map(|p| (p.pair_id.clone(), p)).collect();
    Ok(out)
}

/// Logistic observer: accuracy falls from `base_accuracy` to `floor_accuracy`
/// around `drop_at` with steepness `slope`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanModel {
    pub base_accuracy: f64,
    pub drop_at: f64,
    pub slope: f64,
    pub floor_accuracy: f64,
    pub seed: u64,
}

impl HumanModel {
    /// A model whose accuracy never changes.
    pub fn constant(accuracy: f64, seed: u64) -> Self {
        Self {
            base_accuracy: accuracy,
            drop_at: 0.5,
            slope: 1.0,
            floor_accuracy: accuracy,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |v: f64| (0.5..=1.0).contains(&v);
        if !prob(self.base_accuracy) || !prob(self.floor_accuracy) {
            return Err(Error::InvalidArgument("human model accuracies must lie in [0.5, 1]".into()));
        }
        if self.floor_accuracy > self.base_accuracy {
            return Err(Error::InvalidArgument("floor_accuracy exceeds base_accuracy".into()));
        }
        if !(self.drop_at > 0.0 && self.drop_at < 1.0) {
            return Err(Error::InvalidArgument("drop_at must lie in (0, 1)".into()));
        }
        if !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(Error::InvalidArgument("slope must be positive".into()));
        }
        Ok(())
    }

    pub fn accuracy(&self, delta_v: f64) -> f64 {
        self.floor_accuracy
            + (self.base_accuracy - self.floor_accuracy) / (1.0 + (self.slope * (delta_v - self.drop_at)).exp())
    }
}

/// Pairs grouped into presentation batches of this many images; each batch
/// has its own subjects.
const SUBJECT_BATCH: usize = 20;

/// Draws `subjects_per_image` responses for the original and for the
/// transformed image of every pair. Ground truth is drawn uniformly per pair.
/// Original and transformed images of a pair are seen by disjoint subjects.
pub fn simulate_humans(manifest: &PairManifest, model: &HumanModel, subjects_per_image: usize) -> Result<TrialSet> {
    model.validate()?;
    if subjects_per_image == 0 {
        return Err(Error::InvalidArgument("subjects_per_image must be positive".into()));
    }
    let transformation = manifest
        .pairs
        .first()
        .map(|p| p.transformation)
        .ok_or_else(|| Error::InvalidArgument("manifest has no pairs".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let mut trials = Vec::with_capacity(manifest.pairs.len() * subjects_per_image * 2);
    for (i, pair) in manifest.pairs.iter().enumerate() {
        let dv = pair.delta_v.ok_or_else(|| Error::MissingDeltaV(pair.pair_id.clone()))?;
        let truth = if rng.random_bool(0.5) { Label::Pos } else { Label::Neg };
        let batch = i / SUBJECT_BATCH;
        for (shown, delta, tag) in [(Shown::Original, 0.0, 'o'), (Shown::Transformed, dv, 't')] {
            let p = model.accuracy(delta);
            for j in 0..subjects_per_image {
                let correct = rng.random_bool(p);
                trials.push(Trial {
                    trial_id: format!("t{:07}", trials.len()),
                    pair_id: pair.pair_id.clone(),
                    shown,
                    subject_id: format!("b{batch}-{tag}{j}"),
                    response: if correct { truth } else { truth.flip() },
                    ground_truth: truth,
                });
            }
        }
    }
    let pairs = manifest.pairs.iter().map(|p| (p.pair_id.clone(), p.clone())).collect();
    TrialSet::new(trials, pairs, "simulated", transformation, manifest.base_dir.clone())
}

/// Produces `count` pairs by applying uniformly sampled parameters to
/// originals chosen uniformly at random. Transformed images are written as
/// PNG under `out_dir/pairs/` and each pair is annotated with its visual change.
pub fn generate_pairs(
    originals: &[(PathBuf, Image)],
    transformation: TransformKind,
    count: usize,
    transformer: &Transformer,
    vc: &ViewingConditions,
    out_dir: &Path,
    seed: u64,
) -> Result<PairManifest> {
    if originals.is_empty() {
        return Err(Error::InvalidArgument("no original images".into()));
    }
    vc.validate()?;
    let spec = transformation.spec();
    let pair_dir = out_dir.join("pairs");
    std::fs::create_dir_all(&pair_dir).map_err(|e| Error::io(&pair_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(usize, ParamAssignment)> = (0..count)
        .map(|_| (rng.random_range(0..originals.len()), sample_params(&spec, &mut rng)))
        .collect();
    let references: Vec<PreparedReference> = originals
        .par_iter()
        .map(|(_, img)| PreparedReference::new(&to_luminance(img), vc))
        .collect();
    let pairs = plan
        .into_par_iter()
        .enumerate()
        .map(|(i, (src, params))| {
            let transformed = transformer.apply(&spec, &originals[src].1, &params)?;
            let delta_v = references[src].delta_v(&to_luminance(&transformed))?.value;
            let rel = PathBuf::from("pairs").join(format!("p{i:06}.png"));
            save_image(&transformed, out_dir.join(&rel), ImageFormat::Png)?;
            Ok(ImagePair {
                pair_id: format!("p{i:06}"),
                original_path: originals[src].0.clone(),
                transformed_path: rel,
                transformation,
                params,
                delta_v: Some(delta_v),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairManifest {
        pairs,
        base_dir: out_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_with(deltas: &[f64]) -> PairManifest {
        PairManifest {
            pairs: deltas
                .iter()
                .enumerate()
                .map(|(i, &d)| ImagePair {
                    pair_id: format!("p{i}"),
                    original_path: format!("o{i}.png").into(),
                    transformed_path: format!("t{i}.png").into(),
                    transformation: TransformKind::GaussianNoise,
                    params: ParamAssignment::new([("sigma", 0.1)], i as u64),
                    delta_v: Some(d),
                })
                .collect(),
            base_dir: PathBuf::new(),
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    const PAIRS: &str = "pair_id,original_path,transformed_path,transformation,params_json,seed,delta_v\n\
        p1,o.png,t.png,brightness,\"{\"\"factor\"\":1.5}\",3,0.25\n\
        p2,o.png,t2.png,brightness,\"{\"\"factor\"\":0.5}\",4,\n";

    #[test]
    fn parses_valid_files() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write(dir.path(), "pairs.csv", PAIRS);
        let trials = write(
            dir.path(),
            "trials.csv",
            "trial_id,pair_id,shown,subject_id,response,ground_truth\n\
             a,p1,original,s1,pos,pos\n\
             b,p1,transformed,s2,neg,pos\n",
        );
        let set = parse_trials(&trials, &pairs).unwrap();
        assert_eq!(set.trials.len(), 2);
        assert_eq!(set.transformation, TransformKind::Brightness);
        assert_eq!(set.pairs["p1"].delta_v, Some(0.25));
        assert_eq!(set.pairs["p2"].delta_v, None);
        assert_eq!(set.pairs["p1"].params.get("factor"), 1.5);
        assert!(matches!(set.delta_v("p2"), Err(Error::MissingDeltaV(_))));
    }

    #[test]
    fn duplicate_exposure_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write(dir.path(), "pairs.csv", PAIRS);
        let trials = write(
            dir.path(),
            "trials.csv",
            "trial_id,pair_id,shown,subject_id,response,ground_truth\n\
             a,p1,original,s1,pos,pos\n\
             b,p2,original,s1,pos,pos\n\
             c,p1,transformed,s1,neg,pos\n",
        );
        match parse_trials(&trials, &pairs).unwrap_err() {
            Error::InvalidRow { row, message, .. } => {
                assert_eq!(row, 3);
                assert!(message.contains("s1"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_pair_and_missing_column_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write(dir.path(), "pairs.csv", PAIRS);
        let trials = write(
            dir.path(),
            "trials.csv",
            "trial_id,pair_id,shown,subject_id,response,ground_truth\na,p9,original,s1,pos,pos\n",
        );
        assert!(matches!(parse_trials(&trials, &pairs), Err(Error::InvalidRow { row: 1, .. })));
        let trials = write(dir.path(), "t2.csv", "trial_id,pair_id,shown,response,ground_truth\n");
        match parse_trials(&trials, &pairs).unwrap_err() {
            Error::Schema { message, .. } => assert!(message.contains("subject_id")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn trial_files_round_trip() {
        let manifest = manifest_with(&[0.1, 0.5, 0.9]);
        let model = HumanModel {
            base_accuracy: 0.95,
            drop_at: 0.6,
            slope: 20.0,
            floor_accuracy: 0.6,
            seed: 4,
        };
        let mut set = simulate_humans(&manifest, &model, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_manifest(&set.manifest(), dir.path().join("pairs.csv")).unwrap();
        write_trials(&set, dir.path().join("trials.csv")).unwrap();
        let mut back = parse_trials(dir.path().join("trials.csv"), dir.path().join("pairs.csv")).unwrap();
        back.task = set.task.clone();
        set.base_dir = dir.path().to_path_buf();
        assert_eq!(back, set);
    }

    #[test]
    fn simulation_is_deterministic_and_one_exposure() {
        let manifest = manifest_with(&[0.2; 45]);
        let model = HumanModel::constant(0.9, 12);
        let a = simulate_humans(&manifest, &model, 5).unwrap();
        let b = simulate_humans(&manifest, &model, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 45 * 10);
        let mut seen = HashSet::new();
        for t in &a.trials {
            assert!(seen.insert((t.subject_id.clone(), t.pair_id.clone())));
        }
    }

    #[test]
    fn constant_model_accuracy_is_within_two_standard_errors() {
        let manifest = manifest_with(&vec![0.7; 2000]);
        let set = simulate_humans(&manifest, &HumanModel::constant(0.95, 99), 5).unwrap();
        let transformed: Vec<_> = set.trials.iter().filter(|t| t.shown == Shown::Transformed).collect();
        let acc = transformed.iter().filter(|t| t.is_correct()).count() as f64 / transformed.len() as f64;
        let se = (0.95f64 * 0.05 / transformed.len() as f64).sqrt();
        assert!((acc - 0.95).abs() <= 2.0 * se, "accuracy {acc}");
    }

    #[test]
    fn steep_model_reaches_its_floor_beyond_the_drop() {
        let deltas: Vec<f64> = (0..3000).map(|i| 0.7 + 0.3 * (i as f64 / 2999.0)).collect();
        let manifest = manifest_with(&deltas);
        let model = HumanModel {
            base_accuracy: 0.97,
            drop_at: 0.6,
            slope: 40.0,
            floor_accuracy: 0.6,
            seed: 8,
        };
        let set = simulate_humans(&manifest, &model, 5).unwrap();
        let tr: Vec<_> = set.trials.iter().filter(|t| t.shown == Shown::Transformed).collect();
        let acc = tr.iter().filter(|t| t.is_correct()).count() as f64 / tr.len() as f64;
        // Mean model accuracy over the range; the logistic tail adds < 0.01.
        let expected: f64 = deltas.iter().map(|&d| model.accuracy(d)).sum::<f64>() / deltas.len() as f64;
        let se = (expected * (1.0 - expected) / tr.len() as f64).sqrt();
        assert!((acc - expected).abs() <= 2.0 * se, "accuracy {acc} vs {expected}");
        assert!((expected - 0.6).abs() < 0.01);
    }

    #[test]
    fn missing_annotation_blocks_simulation() {
        let mut manifest = manifest_with(&[0.1]);
        manifest.pairs[0].delta_v = None;
        assert!(matches!(
            simulate_humans(&manifest, &HumanModel::constant(0.9, 1), 5),
            Err(Error::MissingDeltaV(_))
        ));
    }

    #[test]
    fn human_model_validation() {
        let mut m = HumanModel::constant(0.9, 0);
        assert!(m.validate().is_ok());
        m.floor_accuracy = 0.95;
        assert!(m.validate().is_err());
        let m = HumanModel {
            base_accuracy: 1.2,
            ..HumanModel::constant(0.9, 0)
        };
        assert!(m.validate().is_err());
    }
}
