use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn visreq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visreq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run visreq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/corpus").join(name)
}

fn requirements_asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/requirements").join(name)
}

/// Writes a four-image dataset of corpus images and returns its CSV path.
fn corpus_dataset(dir: &Path) -> PathBuf {
    let mut csv = String::from("path,ground_truth\n");
    for (name, label) in [("camera.png", "pos"), ("coffee.png", "neg"), ("rocket.png", "pos"), ("brick.png", "neg")] {
        csv.push_str(&format!("{},{label}\n", corpus(name).display()));
    }
    let path = dir.join("dataset.csv");
    std::fs::write(&path, csv).unwrap();
    path
}

fn single_requirement(dir: &Path, threshold: f64) -> PathBuf {
    let path = dir.join("req.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"task":"t","entries":[{{"transformation":"brightness","kind":"correctness","threshold":{threshold},"epsilon":null,"alpha":0.05}}]}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn deltav_of_identical_images_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let img = corpus("camera.png");
    let img = img.to_str().unwrap();
    let out = visreq(&["deltav", "--original", img, "--transformed", img], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("0.000000"));
    assert!(text.contains("vif_raw 1.000000"));
    assert!(text.contains("below_visibility_threshold true"));
}

#[test]
fn transform_writes_an_image_with_fixed_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = visreq(
        &[
            "transform",
            "--input",
            corpus("coins.png").to_str().unwrap(),
            "--output",
            "noisy.png",
            "--transformation",
            "gaussian_noise",
            "--params",
            r#"{"sigma":0.2}"#,
            "--seed",
            "4",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("noisy.png").exists());
    let dv: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("delta_v "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(dv > 0.3, "{dv}");
}

#[test]
fn usage_and_domain_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(visreq(&["bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(visreq(&["deltav", "--original", "a.png"], dir.path()).status.code(), Some(2));
    let out = visreq(&["deltav", "--original", "a.png", "--transformed", "b.png"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = visreq(
        &["estimate", "--trials", "t.csv", "--pairs", "p.csv", "--kind", "fast", "--out", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_documents_its_flags() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, flags) in [
        ("deltav", &["--original", "--transformed"][..]),
        ("transform", &["--transformation", "--params", "--seed"]),
        ("gen-pairs", &["--originals", "--synthetic", "--count", "--out-dir"]),
        ("simulate-humans", &["--pairs", "--drop-at", "--slope", "--subjects"]),
        ("estimate", &["--trials", "--kind", "--intervals", "--alpha", "--q", "--diagnostics"]),
        ("compare-splines", &["--trials-a", "--trials-b", "--confidence"]),
        (
            "check",
            &["--requirements", "--dataset", "--model-cmd", "--model-builtin", "--n", "--k", "--stratified", "--epsilon"],
        ),
        ("convergence", &["--seeds", "--model-builtin"]),
    ] {
        let out = visreq(&[cmd, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0));
        let text = stdout(&out);
        for f in flags.iter().chain(&["--config", "--jobs"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn oracle_check_is_satisfied() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus_dataset(dir.path());
    let req = single_requirement(dir.path(), 0.6);
    let out = visreq(
        &[
            "check",
            "--requirements",
            req.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "--model-builtin",
            "oracle",
            "--n",
            "4",
            "--k",
            "5",
            "--seed",
            "7",
            "--out",
            "report.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "satisfied");
    assert_eq!(report["margin"], 0.0);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("batch,baseline,transformed,distance"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn reference_requirements_need_an_epsilon_for_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus_dataset(dir.path());
    let req = requirements_asset("imagenet.json");
    let base = [
        "check",
        "--requirements",
        req.to_str().unwrap(),
        "--transformation",
        "brightness",
        "--kind",
        "prediction",
        "--dataset",
        ds.to_str().unwrap(),
        "--model-builtin",
        "oracle",
        "--n",
        "2",
        "--k",
        "3",
        "--out",
        "r.json",
    ];
    assert_eq!(visreq(&base, dir.path()).status.code(), Some(1));
    let mut with_eps = base.to_vec();
    with_eps.extend(["--epsilon", "0.05"]);
    let out = visreq(&with_eps, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut ambiguous = base.to_vec();
    ambiguous.drain(3..7);
    assert_eq!(visreq(&ambiguous, dir.path()).status.code(), Some(2));
}

const STUB: &str = r#"#!/bin/sh
# Answers pos for ids ending in -o, neg otherwise; logs every request.
while IFS= read -r line; do
  printf '%s\n' "$line" >> requests.log
  id=$(printf '%s' "$line" | sed 's/^{"id":"\([^"]*\)".*/\1/')
  case "$id" in
    *-o) printf '{"id":"%s","label":"pos"}\n' "$id" ;;
    *) printf '{"id":"%s","label":"neg"}\n' "$id" ;;
  esac
done
"#;

#[test]
fn subprocess_transcript_matches_golden_ids() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus_dataset(dir.path());
    let req = single_requirement(dir.path(), 1.0);
    std::fs::write(dir.path().join("stub.sh"), STUB).unwrap();
    let out = visreq(
        &[
            "check",
            "--requirements",
            req.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "--model-cmd",
            "sh stub.sh",
            "--n",
            "2",
            "--k",
            "2",
            "--seed",
            "7",
            "--out",
            "out/report.json",
        ],
        dir.path(),
    );
    let code = out.status.code();
    assert!(matches!(code, Some(0 | 3)), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(dir.path().join("requests.log")).unwrap();
    let ids: Vec<String> = log
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            let obj = v.as_object().unwrap();
            assert_eq!(obj.len(), 2, "{l}");
            let path = Path::new(obj["path"].as_str().unwrap());
            assert!(path.is_absolute() && path.exists(), "{l}");
            obj["id"].as_str().unwrap().to_string()
        })
        .collect();
    let golden = [
        "s7-b000-c000-o",
        "s7-b000-c001-o",
        "s7-b000-c000",
        "s7-b000-c001",
        "s7-b001-c000-o",
        "s7-b001-c001-o",
        "s7-b001-c000",
        "s7-b001-c001",
    ];
    assert_eq!(ids, golden);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["endpoint"], "subprocess:sh stub.sh");
    let violated = report["margin"].as_f64().unwrap() > 0.0;
    assert_eq!(report["verdict"], if violated { "violated" } else { "satisfied" });
    assert_eq!(code, Some(if violated { 3 } else { 0 }));
    assert!(dir.path().join("out/work").read_dir().unwrap().count() >= 1);
}

#[test]
fn adapter_error_replies_fail_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus_dataset(dir.path());
    let req = single_requirement(dir.path(), 1.0);
    std::fs::write(
        dir.path().join("bad.sh"),
        "#!/bin/sh\nwhile IFS= read -r line; do\n  id=$(printf '%s' \"$line\" | sed 's/^{\"id\":\"\\([^\"]*\\)\".*/\\1/')\n  printf '{\"id\":\"%s\",\"error\":\"cannot read\"}\\n' \"$id\"\ndone\n",
    )
    .unwrap();
    let out = visreq(
        &[
            "check",
            "--requirements",
            req.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "--model-cmd",
            "sh bad.sh",
            "--n",
            "2",
            "--k",
            "1",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn simulated_pipeline_flags_a_degrading_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(visreq(
        &[
            "gen-pairs",
            "--synthetic",
            "10",
            "--side",
            "32",
            "--transformation",
            "brightness",
            "--count",
            "300",
            "--out-dir",
            "pairs",
            "--seed",
            "3",
        ],
        d,
    ));
    ok(visreq(
        &["simulate-humans", "--pairs", "pairs/pairs.csv", "--out", "trials.csv", "--drop-at", "0.3", "--seed", "3"],
        d,
    ));
    let est = ok(visreq(
        &[
            "estimate",
            "--trials",
            "trials.csv",
            "--pairs",
            "pairs/pairs.csv",
            "--bootstrap",
            "20",
            "--out",
            "req.json",
            "--diagnostics",
            "diag.csv",
        ],
        d,
    ));
    assert!(est.contains("threshold"));
    let diag = std::fs::read_to_string(d.join("diag.csv")).unwrap();
    assert_eq!(diag.lines().count(), 21);
    let out = visreq(
        &[
            "check",
            "--requirements",
            "req.json",
            "--dataset",
            "pairs/originals/dataset.csv",
            "--model-builtin",
            "degrading(drop=0.5,at=0)",
            "--n",
            "20",
            "--k",
            "10",
            "--seed",
            "5",
            "--out",
            "report.json",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("verdict violated"));
    let again = visreq(
        &[
            "check",
            "--requirements",
            "req.json",
            "--dataset",
            "pairs/originals/dataset.csv",
            "--model-builtin",
            "degrading(drop=0.5,at=0)",
            "--n",
            "20",
            "--k",
            "10",
            "--seed",
            "5",
            "--out",
            "report2.json",
        ],
        d,
    );
    assert_eq!(again.status.code(), Some(3));
    let strip = |p: &str| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join(p)).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("runtime_seconds");
        v
    };
    assert_eq!(strip("report.json"), strip("report2.json"));
}

#[test]
fn convergence_reports_agreement_for_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let ds = corpus_dataset(dir.path());
    let req = single_requirement(dir.path(), 0.6);
    let out = visreq(
        &[
            "convergence",
            "--requirements",
            req.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "--model-builtin",
            "oracle",
            "--n",
            "3",
            "--k",
            "3",
            "--seeds",
            "1,2",
            "--out",
            "conv.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("converged true"));
}

#[test]
fn config_file_sets_defaults_and_rejects_missing_dirs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"work_dir":"missing"}"#).unwrap();
    let img = corpus("camera.png");
    let img = img.to_str().unwrap();
    let out = visreq(&["--config", "bad.json", "deltav", "--original", img, "--transformed", img], dir.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("ok.json"), r#"{"viewing_conditions":{"viewing_distance":30.0,"display_resolution":96.0,"display_peak_luminance":100.0,"black_level_offset":0.03,"gamma":2.2}}"#).unwrap();
    let out = visreq(
        &["--config", "ok.json", "--jobs", "1", "deltav", "--original", img, "--transformed", img],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
}
