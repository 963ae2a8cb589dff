//! Requirement instantiation: bins human trials by visual change, smooths the
//! per-interval performance, and finds the first interval whose performance is
//! significantly below the baseline on unmodified images.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::human_data::{Label, Shown, TrialSet};
use crate::iqa::ViewingConditions;
use crate::spline::{fit_smoothing_spline, unit_grid, ConfidenceBand, SplineModel, SplinePoint};
use crate::stats::{quantile, quantile_sorted, stream_rng};
use crate::transforms::TransformKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementKind {
    Correctness,
    Prediction,
}

impl RequirementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequirementKind::Correctness => "correctness",
            RequirementKind::Prediction => "prediction",
        }
    }
}

impl fmt::Display for RequirementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequirementKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correctness" => Ok(RequirementKind::Correctness),
            "prediction" => Ok(RequirementKind::Prediction),
            other => Err(Error::InvalidArgument(format!(
                "kind must be correctness or prediction, got `{other}`"
            ))),
        }
    }
}

/// One transformed-image trial reduced to its visual change and outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub delta_v: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub successes: usize,
    pub rate: f64,
    pub smoothed_rate: Option<f64>,
    pub p_value: Option<f64>,
}

impl IntervalStats {
    pub fn midpoint(&self) -> f64 {
        (self.lower + self.upper) / 2.0
    }
}

/// 1-based interval of `delta_v` among `r` equal intervals `(t_{k-1}, t_k]`;
/// zero falls into the first.
pub fn interval_index(delta_v: f64, r: usize) -> usize {
    let mut k = ((delta_v * r as f64).ceil() as usize).clamp(1, r);
    while k > 1 && delta_v <= (k - 1) as f64 / r as f64 {
        k -= 1;
    }
    while k < r && delta_v > k as f64 / r as f64 {
        k += 1;
    }
    k
}

/// Majority response over the original-image trials of each pair; ties go to
/// the ground truth.
fn original_majorities(set: &TrialSet) -> BTreeMap<&str, Label> {
    let mut votes: BTreeMap<&str, (usize, usize, Label)> = BTreeMap::new();
    for t in set.trials.iter().filter(|t| t.shown == Shown::Original) {
        let e = votes.entry(t.pair_id.as_str()).or_insert((0, 0, t.ground_truth));
        match t.response {
            Label::Pos => e.0 += 1,
            Label::Neg => e.1 += 1,
        }
    }
    votes
        .into_iter()
        .map(|(id, (pos, neg, truth))| {
            let label = match pos.cmp(&neg) {
                std::cmp::Ordering::Greater => Label::Pos,
                std::cmp::Ordering::Less => Label::Neg,
                std::cmp::Ordering::Equal => truth,
            };
            (id, label)
        })
        .collect()
}

/// Per-trial outcomes on transformed images. Correctness compares the response
/// with the ground truth; prediction compares it with the majority response on
/// the pair's original. Pairs without original-image trials are skipped for
/// the prediction kind.
pub fn observations(set: &TrialSet, kind: RequirementKind) -> Result<Vec<Observation>> {
    let majorities = match kind {
        RequirementKind::Prediction => Some(original_majorities(set)),
        RequirementKind::Correctness => None,
    };
    let mut out = Vec::new();
    for t in set.trials.iter().filter(|t| t.shown == Shown::Transformed) {
        let delta_v = set.delta_v(&t.pair_id)?;
        let success = match &majorities {
            None => t.is_correct(),
            Some(m) => match m.get(t.pair_id.as_str()) {
                Some(&label) => t.response == label,
                None => continue,
            },
        };
        out.push(Observation { delta_v, success });
    }
    Ok(out)
}

pub fn bin_observations(obs: &[Observation], r: usize) -> Vec<IntervalStats> {
    let mut counts = vec![(0usize, 0usize); r];
    for o in obs {
        let c = &mut counts[interval_index(o.delta_v, r) - 1];
        c.0 += 1;
        c.1 += o.success as usize;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, s))| IntervalStats {
            index: i + 1,
            lower: i as f64 / r as f64,
            upper: (i + 1) as f64 / r as f64,
            n,
            successes: s,
            rate: if n == 0 { f64::NAN } else { s as f64 / n as f64 },
            smoothed_rate: None,
            p_value: None,
        })
        .collect()
}

pub const MIN_INTERVALS: usize = 5;

fn check_intervals(r: usize) -> Result<()> {
    if r < MIN_INTERVALS {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_INTERVALS} intervals, got {r}"
        )));
    }
    Ok(())
}

pub fn bin_pairs(set: &TrialSet, r: usize, kind: RequirementKind) -> Result<Vec<IntervalStats>> {
    check_intervals(r)?;
    Ok(bin_observations(&observations(set, kind)?, r))
}

/// Spline through the observed rates of the nonempty intervals, weighted by
/// their trial counts.
pub fn fit_interval_spline(bins: &[IntervalStats]) -> Result<SplineModel> {
    let points: Vec<SplinePoint> = bins
        .iter()
        .filter(|b| b.n > 0)
        .map(|b| SplinePoint {
            x: b.midpoint(),
            y: b.rate,
            weight: b.n as f64,
        })
        .collect();
    fit_smoothing_spline(&points)
}

/// Exact `P(X <= successes)` for `X ~ Binomial(n, p0)`, summing log-space terms.
pub fn binomial_p_lower(successes: u64, n: u64, p0: f64) -> Result<f64> {
    if n == 0 || successes > n || !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "binomial test needs n >= 1, 0 <= successes <= n and p0 in (0, 1); got ({successes}, {n}, {p0})"
        )));
    }
    if successes == n {
        return Ok(1.0);
    }
    let nf = n as f64;
    let ln_n = ln_gamma(nf + 1.0);
    let (lp, lq) = (p0.ln(), (-p0).ln_1p());
    let terms: Vec<f64> = (0..=successes)
        .map(|i| {
            let i = i as f64;
            ln_n - ln_gamma(i + 1.0) - ln_gamma(nf - i + 1.0) + i * lp + (nf - i) * lq
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOptions {
    pub intervals: usize,
    pub alpha: f64,
    pub q: f64,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            intervals: 20,
            alpha: 0.05,
            q: 0.05,
            bootstrap_resamples: 200,
            confidence: 0.83,
            seed: 0,
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        check_intervals(self.intervals)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidArgument(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub transformation: TransformKind,
    pub kind: RequirementKind,
    pub threshold: f64,
    pub baseline: f64,
    pub epsilon: Option<f64>,
    pub alpha: f64,
    pub per_interval: Vec<IntervalStats>,
    pub spline: SplineModel,
}

/// Bounds for the binomial null so a perfect baseline still yields a usable test.
const BASELINE_CLAMP: f64 = 1e-9;

fn baseline(set: &TrialSet, kind: RequirementKind, q: f64) -> Result<(f64, Option<f64>)> {
    match kind {
        RequirementKind::Correctness => {
            let originals: Vec<_> = set.trials.iter().filter(|t| t.shown == Shown::Original).collect();
            if originals.is_empty() {
                return Err(Error::BaselineUndefined("no original-image trials".into()));
            }
            let correct = originals.iter().filter(|t| t.is_correct()).count();
            Ok((correct as f64 / originals.len() as f64, None))
        }
        RequirementKind::Prediction => {
            let shown: HashSet<&str> = set
                .trials
                .iter()
                .filter(|t| t.shown == Shown::Transformed)
                .map(|t| t.pair_id.as_str())
                .collect();
            let deltas = shown.iter().map(|id| set.delta_v(id)).collect::<Result<Vec<_>>>()?;
            if deltas.is_empty() {
                return Err(Error::BaselineUndefined("no transformed-image trials".into()));
            }
            let epsilon = quantile(&deltas, q);
            let obs: Vec<_> = observations(set, RequirementKind::Prediction)?
                .into_iter()
                .filter(|o| o.delta_v <= epsilon)
                .collect();
            if obs.is_empty() {
                return Err(Error::BaselineUndefined(format!(
                    "no prediction observations with delta_v <= {epsilon}"
                )));
            }
            let s = obs.iter().filter(|o| o.success).count();
            Ok((s as f64 / obs.len() as f64, Some(epsilon)))
        }
    }
}

/// Smooths the interval rates, tests each nonempty interval against the
/// baseline and returns the upper edge of the last interval before the first
/// significant drop (1.0 when none is found, `t_1` at least).
pub fn estimate_threshold(set: &TrialSet, kind: RequirementKind, opts: &EstimationOptions) -> Result<ThresholdResult> {
    opts.validate()?;
    let r = opts.intervals;
    let obs = observations(set, kind)?;
    let (base, epsilon) = baseline(set, kind, opts.q)?;
    let mut bins = bin_observations(&obs, r);
    let mut spline = fit_interval_spline(&bins)?;
    if opts.bootstrap_resamples > 0 {
        spline.band = Some(bootstrap_band(&obs, r, opts.bootstrap_resamples, opts.confidence, opts.seed)?);
    }
    let p0 = base.clamp(BASELINE_CLAMP, 1.0 - BASELINE_CLAMP);
    let t1 = 1.0 / r as f64;
    let mut threshold = None;
    for b in bins.iter_mut().filter(|b| b.n > 0) {
        let smoothed = spline.evaluate(b.midpoint());
        let effective = (smoothed * b.n as f64).round() as u64;
        let p = binomial_p_lower(effective.min(b.n as u64), b.n as u64, p0)?;
        b.smoothed_rate = Some(smoothed);
        b.p_value = Some(p);
        if threshold.is_none() && p < opts.alpha {
            threshold = Some(b.lower.max(t1));
        }
    }
    Ok(ThresholdResult {
        transformation: set.transformation,
        kind,
        threshold: threshold.unwrap_or(1.0),
        baseline: base,
        epsilon,
        alpha: opts.alpha,
        per_interval: bins,
        spline,
    })
}

pub const BAND_GRID_POINTS: usize = 101;

/// Percentile band of the smoothed rate from resampling observations with
/// replacement. Resamples whose fit fails are dropped.
pub fn bootstrap_band(
    obs: &[Observation],
    r: usize,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<ConfidenceBand> {
    if obs.is_empty() || resamples == 0 {
        return Err(Error::Fit("bootstrap needs observations and at least one resample".into()));
    }
    let grid = unit_grid(BAND_GRID_POINTS);
    let curves: Vec<Vec<f64>> = (0..resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let sample: Vec<Observation> = (0..obs.len()).map(|_| obs[rng.random_range(0..obs.len())]).collect();
            let model = fit_interval_spline(&bin_observations(&sample, r)).ok()?;
            Some(grid.iter().map(|&x| model.evaluate(x)).collect())
        })
        .collect();
    if curves.len() * 2 < resamples {
        return Err(Error::Fit(format!(
            "only {} of {resamples} bootstrap fits succeeded",
            curves.len()
        )));
    }
    let tail = (1.0 - confidence) / 2.0;
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let mut col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, tail));
        upper.push(quantile_sorted(&col, 1.0 - tail));
    }
    Ok(ConfidenceBand {
        confidence,
        grid,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub overlap: bool,
    pub confidence: f64,
    /// Grid positions where the two bands are disjoint.
    pub disjoint_at: Vec<f64>,
    pub band_a: ConfidenceBand,
    pub band_b: ConfidenceBand,
}

/// Compares the smoothed performance curves of two trial sets: true iff their
/// pointwise bands overlap everywhere on the grid.
pub fn splines_overlap(
    a: &TrialSet,
    b: &TrialSet,
    kind: RequirementKind,
    confidence: f64,
    opts: &EstimationOptions,
) -> Result<OverlapReport> {
    if a.transformation != b.transformation {
        return Err(Error::InvalidArgument(format!(
            "trial sets use different transformations ({} vs {})",
            a.transformation, b.transformation
        )));
    }
    let opts = EstimationOptions { confidence, ..*opts };
    opts.validate()?;
    let band = |set: &TrialSet, stream: u64| {
        let obs = observations(set, kind)?;
        fit_interval_spline(&bin_observations(&obs, opts.intervals))?;
        bootstrap_band(
            &obs,
            opts.intervals,
            opts.bootstrap_resamples.max(1),
            confidence,
            crate::stats::mix_seed(opts.seed, stream),
        )
    };
    let band_a = band(a, 0)?;
    let band_b = band(b, 1)?;
    let disjoint_at: Vec<f64> = band_a
        .grid
        .iter()
        .enumerate()
        .filter(|&(j, _)| band_a.lower[j].max(band_b.lower[j]) > band_a.upper[j].min(band_b.upper[j]))
        .map(|(_, &x)| x)
        .collect();
    Ok(OverlapReport {
        overlap: disjoint_at.is_empty(),
        confidence,
        disjoint_at,
        band_a,
        band_b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementInstance {
    pub task: String,
    pub transformation: TransformKind,
    pub kind: RequirementKind,
    pub threshold: f64,
    pub epsilon: Option<f64>,
    pub alpha: f64,
    pub provenance: String,
}

impl RequirementInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{} {} threshold {} outside (0, 1]",
                self.transformation, self.kind, self.threshold
            )));
        }
        if let Some(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidArgument(format!("epsilon {e} outside [0, 1]")));
            }
            if self.kind == RequirementKind::Correctness {
                return Err(Error::InvalidArgument("epsilon only applies to prediction requirements".into()));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

pub fn instantiate_requirements(
    results: &[ThresholdResult],
    task: &str,
    provenance: &str,
) -> Result<Vec<RequirementInstance>> {
    if results.is_empty() {
        return Err(Error::InvalidArgument("no threshold results to instantiate".into()));
    }
    let mut seen = HashSet::new();
    results
        .iter()
        .map(|r| {
            if !seen.insert((r.transformation, r.kind)) {
                return Err(Error::DuplicateRequirement {
                    transformation: r.transformation.name().to_string(),
                    kind: r.kind.to_string(),
                });
            }
            let inst = RequirementInstance {
                task: task.to_string(),
                transformation: r.transformation,
                kind: r.kind,
                threshold: r.threshold,
                epsilon: r.epsilon,
                alpha: r.alpha,
                provenance: provenance.to_string(),
            };
            inst.validate()?;
            Ok(inst)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementEntry {
    pub transformation: TransformKind,
    pub kind: RequirementKind,
    pub threshold: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub alpha: f64,
    #[serde(default)]
    pub provenance: String,
}

/// On-disk requirements: one task, the viewing conditions Δ_v was computed
/// under, and one entry per (transformation, kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementsFile {
    pub task: String,
    #[serde(default)]
    pub viewing_conditions: ViewingConditions,
    pub entries: Vec<RequirementEntry>,
}

impl RequirementsFile {
    pub fn from_instances(vc: ViewingConditions, instances: &[RequirementInstance]) -> Result<Self> {
        let task = instances
            .first()
            .map(|i| i.task.clone())
            .ok_or_else(|| Error::InvalidArgument("no requirement instances".into()))?;
        if instances.iter().any(|i| i.task != task) {
            return Err(Error::InvalidArgument("requirements file holds a single task".into()));
        }
        let file = Self {
            task,
            viewing_conditions: vc,
            entries: instances
                .iter()
                .map(|i| RequirementEntry {
                    transformation: i.transformation,
                    kind: i.kind,
                    threshold: i.threshold,
                    epsilon: i.epsilon,
                    alpha: i.alpha,
                    provenance: i.provenance.clone(),
                })
                .collect(),
        };
        file.instances()?;
        Ok(file)
    }

    /// Validated instances; rejects duplicates and out-of-range values.
    pub fn instances(&self) -> Result<Vec<RequirementInstance>> {
        self.viewing_conditions.validate()?;
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| {
                if !seen.insert((e.transformation, e.kind)) {
                    return Err(Error::DuplicateRequirement {
                        transformation: e.transformation.name().to_string(),
                        kind: e.kind.to_string(),
                    });
                }
                let inst = RequirementInstance {
                    task: self.task.clone(),
                    transformation: e.transformation,
                    kind: e.kind,
                    threshold: e.threshold,
                    epsilon: e.epsilon,
                    alpha: e.alpha,
                    provenance: e.provenance.clone(),
                };
                inst.validate()?;
                Ok(inst)
            })
            .collect()
    }

    pub fn find(&self, transformation: TransformKind, kind: RequirementKind) -> Option<RequirementInstance> {
        self.instances()
            .ok()?
            .into_iter()
            .find(|i| i.transformation == transformation && i.kind == kind)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| Error::Schema {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        file.instances()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
