use visreq::checker::{evaluate, Builtin, Dataset, GenerationOptions, Generator, ModelEndpoint, Verdict};
use visreq::estimation::{
    estimate_threshold, instantiate_requirements, EstimationOptions, RequirementKind, RequirementsFile,
};
use visreq::human_data::{generate_pairs, parse_trials, simulate_humans, write_manifest, write_trials, HumanModel};
use visreq::iqa::ViewingConditions;
use visreq::transforms::{TransformKind, Transformer};

#[test]
fn study_to_requirement_to_check() {
    let dir = tempfile::tempdir().unwrap();
    let vc = ViewingConditions::default();
    let transformer = Transformer::default();
    let dataset = Dataset::synthetic(8, 32, 4).unwrap().save(dir.path().join("data")).unwrap();
    let originals: Vec<_> = dataset.entries.iter().map(|e| (e.path.clone(), e.image.clone())).collect();

    let manifest = generate_pairs(&originals, TransformKind::GaussianNoise, 120, &transformer, &vc, dir.path(), 4)
        .unwrap();
    let human = HumanModel {
        base_accuracy: 0.97,
        drop_at: 0.6,
        slope: 40.0,
        floor_accuracy: 0.6,
        seed: 4,
    };
    let set = simulate_humans(&manifest, &human, 3).unwrap();
    write_manifest(&manifest, dir.path().join("pairs.csv")).unwrap();
    write_trials(&set, dir.path().join("trials.csv")).unwrap();
    let set = parse_trials(dir.path().join("trials.csv"), dir.path().join("pairs.csv")).unwrap();

    let opts = EstimationOptions {
        bootstrap_resamples: 20,
        ..Default::default()
    };
    let results: Vec<_> = [RequirementKind::Correctness, RequirementKind::Prediction]
        .into_iter()
        .map(|kind| estimate_threshold(&set, kind, &opts).unwrap())
        .collect();
    for r in &results {
        assert!(r.threshold >= 0.05 && r.threshold <= 1.0, "{}", r.threshold);
        assert_eq!(r.spline.band.as_ref().unwrap().grid.len(), 101);
    }
    assert!(results[1].epsilon.is_some());

    let instances = instantiate_requirements(&results, "synthetic", "simulated study").unwrap();
    let file = RequirementsFile::from_instances(vc, &instances).unwrap();
    let path = dir.path().join("req.json");
    file.save(&path).unwrap();
    let file = RequirementsFile::load(&path).unwrap();

    let generator = Generator::new(&dataset, &transformer, file.viewing_conditions).unwrap();
    let gen = GenerationOptions {
        n: 6,
        k: 4,
        work_dir: Some(dir.path().join("work")),
        ..Default::default()
    };
    for req in file.instances().unwrap() {
        let suite = generator.generate(&req, &gen, 9).unwrap();
        assert!(suite.batches.iter().flat_map(|b| &b.cases).all(|c| c.delta_v <= req.threshold));
        assert!(suite.cases().all(|c| c.transformed_path.as_ref().is_some_and(|p| p.exists())));
        assert!(generator.audit(&suite, 1.0, 0).unwrap().violations.is_empty());
        let report = evaluate(&suite, &ModelEndpoint::Builtin(Builtin::Oracle), 0.05).unwrap();
        assert_eq!(report.verdict, Verdict::Satisfied);
        assert_eq!(report.margin, 0.0);
    }
}

#[test]
fn constant_positive_scores_the_positive_rate_on_both_arms() {
    let dataset = Dataset::synthetic(20, 32, 2).unwrap();
    let transformer = Transformer::default();
    let file = RequirementsFile::load(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/requirements/imagenet.json")).unwrap();
    let req = file.find(TransformKind::Brightness, RequirementKind::Correctness).unwrap();
    let generator = Generator::new(&dataset, &transformer, file.viewing_conditions).unwrap();
    let suite = generator
        .generate(&req, &GenerationOptions { n: 10, k: 5, ..Default::default() }, 1)
        .unwrap();
    let report = evaluate(&suite, &ModelEndpoint::Builtin(Builtin::ConstantPositive), 0.05).unwrap();
    assert!(report.baseline_estimate < 1.0);
    assert_eq!(report.baseline_estimate, report.transformed_estimate);
}
