use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use visreq::checker::{
    convergence_check, evaluate, Builtin, Dataset, DeltaCache, GenerationOptions, Generator, ModelEndpoint, Verdict,
};
use visreq::config::ToolkitConfig;
use visreq::estimation::{
    estimate_threshold, instantiate_requirements, splines_overlap, EstimationOptions, RequirementInstance,
    RequirementKind, RequirementsFile, ThresholdResult,
};
use visreq::human_data::{
    attach_delta_v, generate_pairs, parse_manifest, parse_trials, simulate_humans, write_manifest, write_trials,
    HumanModel, TrialSet,
};
use visreq::image::{load_image, save_image, ImageFormat};
use visreq::iqa::{delta_v, ViewingConditions};
use visreq::transforms::{sample_params, ParamAssignment, TransformKind};

use crate::{
    CheckArgs, CheckInput, Cli, Command, CompareArgs, ConvergenceArgs, DeltavArgs, EstimateArgs, GenPairsArgs,
    SimulateArgs, TransformArgs, TrialInput,
};

/// Bad flag values that clap cannot reject on its own.
#[derive(Debug)]
pub struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let config = match &cli.config {
        Some(path) => ToolkitConfig::load(path)?,
        None => ToolkitConfig::default(),
    };
    match cli.command {
        Command::Deltav(a) => deltav(&config, a),
        Command::Transform(a) => transform(&config, a),
        Command::GenPairs(a) => gen_pairs(&config, a),
        Command::SimulateHumans(a) => simulate(a),
        Command::Estimate(a) => estimate(&config, a),
        Command::CompareSplines(a) => compare(&config, a),
        Command::Check(a) => check(&config, a),
        Command::Convergence(a) => convergence(&config, a),
    }
}

fn parse_kind(s: &str) -> Result<RequirementKind> {
    s.parse().map_err(|_| usage(format!("--kind must be correctness or prediction, got `{s}`")))
}

fn parse_transformation(s: &str) -> Result<TransformKind> {
    s.parse().map_err(|e: visreq::Error| usage(e.to_string()))
}

fn deltav(config: &ToolkitConfig, a: DeltavArgs) -> Result<ExitCode> {
    let original = load_image(&a.original)?;
    let transformed = load_image(&a.transformed)?;
    let score = delta_v(&original, &transformed, &config.viewing_conditions)?;
    if a.json {
        println!("{}", serde_json::to_string(&score)?);
    } else {
        println!("{:.6}", score.value);
        println!("vif_raw {:.6}", score.vif_raw);
        println!("below_visibility_threshold {}", score.below_visibility_threshold);
    }
    Ok(ExitCode::SUCCESS)
}

fn transform(config: &ToolkitConfig, a: TransformArgs) -> Result<ExitCode> {
    let kind = parse_transformation(&a.transformation)?;
    let spec = kind.spec();
    let params = match &a.params {
        Some(json) => ParamAssignment::from_json(json, a.seed)?,
        None => sample_params(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed)),
    };
    let image = load_image(&a.input)?;
    let out = config.transformer()?.apply(&spec, &image, &params)?;
    save_image(&out, &a.output, ImageFormat::from_path(&a.output))?;
    let score = delta_v(&image, &out, &config.viewing_conditions)?;
    println!("params {}", params.to_json());
    println!("delta_v {:.6}", score.value);
    Ok(ExitCode::SUCCESS)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG or JPEG images in {}", dir.display());
    }
    Ok(files)
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

fn gen_pairs(config: &ToolkitConfig, a: GenPairsArgs) -> Result<ExitCode> {
    let kind = parse_transformation(&a.transformation)?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out_dir = std::path::absolute(&a.out_dir)?;
    let originals: Vec<(PathBuf, visreq::image::Image)> = match (&a.originals, a.synthetic) {
        (Some(src), _) if src.is_dir() => image_files(src)?
            .into_iter()
            .map(|p| {
                let img = load_image(&p)?;
                Ok((std::path::absolute(&p)?, img))
            })
            .collect::<Result<_>>()?,
        (Some(src), _) => Dataset::load(src)?.entries.into_iter().map(|e| (e.path, e.image)).collect(),
        (None, Some(count)) => {
            if count == 0 {
                return Err(usage("--synthetic must be at least 1"));
            }
            Dataset::synthetic(count, a.side, a.seed)?
                .save(out_dir.join("originals"))?
                .entries
                .into_iter()
                .map(|e| (e.path, e.image))
                .collect()
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let originals: Vec<_> = originals.into_iter().map(|(p, img)| (relative_to(&p, &out_dir), img)).collect();
    let manifest = generate_pairs(
        &originals,
        kind,
        a.count,
        &config.transformer()?,
        &config.viewing_conditions,
        &out_dir,
        a.seed,
    )?;
    let path = out_dir.join("pairs.csv");
    write_manifest(&manifest, &path)?;
    let deltas: Vec<f64> = manifest.pairs.iter().filter_map(|p| p.delta_v).collect();
    let (lo, hi) = deltas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &d| (l.min(d), h.max(d)));
    println!("wrote {} pairs to {}", manifest.pairs.len(), path.display());
    println!("delta_v range [{lo:.4}, {hi:.4}]");
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let manifest = parse_manifest(&a.pairs)?;
    let model = HumanModel {
        base_accuracy: a.base_accuracy,
        drop_at: a.drop_at,
        slope: a.slope,
        floor_accuracy: a.floor_accuracy,
        seed: a.seed,
    };
    let set = simulate_humans(&manifest, &model, a.subjects)?;
    write_trials(&set, &a.out)?;
    println!("wrote {} trials to {}", set.trials.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_trials(input: &TrialInput, vc: &ViewingConditions) -> Result<TrialSet> {
    let set = parse_trials(&input.trials, &input.pairs)?;
    if set.pairs.values().any(|p| p.delta_v.is_none()) {
        log::info!("annotating pairs with delta_v");
        return Ok(attach_delta_v(&set, vc)?);
    }
    Ok(set)
}

fn write_diagnostics(result: &ThresholdResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "lower", "upper", "n", "successes", "rate", "smoothed_rate", "p_value"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for b in &result.per_interval {
        w.write_record([
            b.index.to_string(),
            b.lower.to_string(),
            b.upper.to_string(),
            b.n.to_string(),
            b.successes.to_string(),
            if b.n == 0 { String::new() } else { b.rate.to_string() },
            opt(b.smoothed_rate),
            opt(b.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn estimate(config: &ToolkitConfig, a: EstimateArgs) -> Result<ExitCode> {
    let kind = parse_kind(&a.kind)?;
    let opts = EstimationOptions {
        intervals: a.intervals.unwrap_or(config.default_r),
        alpha: a.alpha.unwrap_or(config.default_alpha),
        q: a.q.unwrap_or(config.default_q),
        bootstrap_resamples: a.bootstrap,
        confidence: a.confidence,
        seed: a.seed,
    };
    opts.validate().map_err(|e| usage(e.to_string()))?;
    let set = load_trials(&a.input, &config.viewing_conditions)?;
    let result = estimate_threshold(&set, kind, &opts)?;
    let provenance = format!("{} trials from {}", set.trials.len(), a.input.trials.display());
    let mut instances = instantiate_requirements(std::slice::from_ref(&result), &a.task, &provenance)?;
    if a.out.exists() {
        let existing = RequirementsFile::load(&a.out)?;
        if existing.task != a.task {
            bail!(
                "{} holds requirements for task `{}`, not `{}`",
                a.out.display(),
                existing.task,
                a.task
            );
        }
        if existing.viewing_conditions != config.viewing_conditions {
            bail!("{} was written under different viewing conditions", a.out.display());
        }
        let mut merged: Vec<RequirementInstance> = existing
            .instances()?
            .into_iter()
            .filter(|i| !(i.transformation == result.transformation && i.kind == kind))
            .collect();
        merged.append(&mut instances);
        instances = merged;
    }
    RequirementsFile::from_instances(config.viewing_conditions, &instances)?.save(&a.out)?;
    if let Some(path) = &a.diagnostics {
        write_diagnostics(&result, path)?;
    }
    println!("transformation {}", result.transformation);
    println!("kind {kind}");
    println!("threshold {:.2}", result.threshold);
    println!("baseline {:.4}", result.baseline);
    if let Some(e) = result.epsilon {
        println!("epsilon {e:.4}");
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(config: &ToolkitConfig, a: CompareArgs) -> Result<ExitCode> {
    let kind = parse_kind(&a.kind)?;
    let vc = &config.viewing_conditions;
    let set_a = load_trials(
        &TrialInput {
            trials: a.trials_a,
            pairs: a.pairs_a,
        },
        vc,
    )?;
    let set_b = load_trials(
        &TrialInput {
            trials: a.trials_b,
            pairs: a.pairs_b,
        },
        vc,
    )?;
    let opts = EstimationOptions {
        intervals: a.intervals.unwrap_or(config.default_r),
        bootstrap_resamples: a.bootstrap,
        seed: a.seed,
        ..Default::default()
    };
    let report = splines_overlap(&set_a, &set_b, kind, a.confidence, &opts)?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    println!("overlap {}", report.overlap);
    println!("disjoint_points {}", report.disjoint_at.len());
    Ok(ExitCode::SUCCESS)
}

struct CheckSetup {
    requirement: RequirementInstance,
    viewing_conditions: ViewingConditions,
    dataset: Dataset,
    endpoint: ModelEndpoint,
    options: GenerationOptions,
    cache: DeltaCache,
    alpha: f64,
}

fn select_requirement(file: &RequirementsFile, input: &CheckInput) -> Result<RequirementInstance> {
    let transformation = input.transformation.as_deref().map(parse_transformation).transpose()?;
    let kind = input.kind.as_deref().map(parse_kind).transpose()?;
    let matches: Vec<RequirementInstance> = file
        .instances()?
        .into_iter()
        .filter(|i| transformation.is_none_or(|t| t == i.transformation) && kind.is_none_or(|k| k == i.kind))
        .collect();
    match matches.len() {
        0 => bail!("no matching requirement in {}", input.requirements.display()),
        1 => Ok(matches.into_iter().next().expect("one match")),
        n => Err(usage(format!(
            "{} holds {n} matching requirements; select one with --transformation and --kind",
            input.requirements.display()
        ))),
    }
}

fn setup(config: &ToolkitConfig, input: &CheckInput, out: Option<&Path>) -> Result<CheckSetup> {
    let file = RequirementsFile::load(&input.requirements)?;
    let mut requirement = select_requirement(&file, input)?;
    if let Some(eps) = input.epsilon {
        if requirement.kind != RequirementKind::Prediction {
            return Err(usage("--epsilon only applies to prediction requirements"));
        }
        requirement.epsilon = Some(eps);
        requirement.validate()?;
    }
    if requirement.kind == RequirementKind::Prediction && requirement.epsilon.is_none() {
        bail!("the prediction requirement has no epsilon; supply one with --epsilon");
    }
    let endpoint = match (&input.model_cmd, &input.model_builtin) {
        (Some(cmd), None) => ModelEndpoint::Subprocess {
            command: cmd.clone(),
            timeout: Duration::from_secs(input.timeout),
        },
        (None, Some(name)) => ModelEndpoint::Builtin(name.parse::<Builtin>().map_err(|e| usage(e.to_string()))?),
        _ => unreachable!("clap enforces exactly one model"),
    };
    let work_dir = input.work_dir.clone().or_else(|| config.work_dir.clone()).or_else(|| {
        matches!(endpoint, ModelEndpoint::Subprocess { .. }).then(|| {
            out.and_then(Path::parent)
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .join("work")
        })
    });
    let work_dir = match work_dir {
        Some(dir) => {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            Some(std::path::absolute(&dir)?)
        }
        None => None,
    };
    let options = GenerationOptions {
        n: input.n.unwrap_or(config.default_n),
        k: input.k.unwrap_or(config.default_k),
        stratified: input.stratified,
        work_dir,
        ..Default::default()
    };
    if options.n < 2 || options.k < 1 {
        return Err(usage("--n must be at least 2 and --k at least 1"));
    }
    let cache = match &input.cache {
        Some(p) if p.exists() => DeltaCache::load(p)?,
        _ => DeltaCache::new(),
    };
    Ok(CheckSetup {
        requirement,
        viewing_conditions: file.viewing_conditions,
        dataset: Dataset::load(&input.dataset)?,
        endpoint,
        options,
        cache,
        alpha: input.alpha,
    })
}

fn save_cache(setup: &CheckSetup, input: &CheckInput) -> Result<()> {
    if let Some(p) = &input.cache {
        setup.cache.save(p)?;
    }
    Ok(())
}

fn check(config: &ToolkitConfig, a: CheckArgs) -> Result<ExitCode> {
    let s = setup(config, &a.input, Some(&a.out))?;
    let transformer = config.transformer()?;
    let generator = Generator::new(&s.dataset, &transformer, s.viewing_conditions)?.with_cache(&s.cache);
    let suite = generator.generate(&s.requirement, &s.options, a.seed)?;
    log::info!("generated {} cases in {} attempts", suite.cases().count(), suite.attempts);
    let report = evaluate(&suite, &s.endpoint, s.alpha)?;
    save_cache(&s, &a.input)?;
    report.write_json(&a.out)?;
    report.write_batch_csv(a.out.with_extension("csv"))?;
    println!(
        "requirement {} {} threshold {}",
        report.requirement.transformation, report.requirement.kind, report.requirement.threshold
    );
    println!("baseline {:.6} ± {:.6}", report.baseline_estimate, report.baseline_stddev);
    println!("transformed {:.6} ± {:.6}", report.transformed_estimate, report.transformed_stddev);
    println!("distance {:.6} ± {:.6}", report.reliability_distance, report.distance_stddev);
    println!("margin {:.6}", report.margin);
    println!("verdict {}", report.verdict);
    Ok(match report.verdict {
        Verdict::Satisfied => ExitCode::SUCCESS,
        Verdict::Violated => ExitCode::from(3),
    })
}

fn convergence(config: &ToolkitConfig, a: ConvergenceArgs) -> Result<ExitCode> {
    let seeds = match a.seeds[..] {
        [x, y] => [x, y],
        _ => return Err(usage("--seeds takes exactly two values")),
    };
    if seeds[0] == seeds[1] {
        return Err(usage("--seeds must be two distinct values"));
    }
    let s = setup(config, &a.input, a.out.as_deref())?;
    let transformer = config.transformer()?;
    let generator = Generator::new(&s.dataset, &transformer, s.viewing_conditions)?.with_cache(&s.cache);
    let report = convergence_check(&generator, &s.requirement, &s.endpoint, &s.options, seeds, s.alpha)?;
    save_cache(&s, &a.input)?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    for e in &report.estimates {
        println!(
            "{} {:.6} vs {:.6} (difference {:.6}, bound {:.6})",
            e.name, e.first, e.second, e.difference, e.bound
        );
    }
    println!("converged {}", report.converged);
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
