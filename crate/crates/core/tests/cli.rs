use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyposplit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/kramers_theta0.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn estimate_on_bundled_data_prints_four_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("est.json");
    let o = run(&[
        "estimate",
        "--data",
        s(&bundled()),
        "--kind",
        "PR",
        "--out",
        s(&report),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    for name in ["eta", "a", "b", "sigma2"] {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .expect(name);
        let nums: Vec<f64> = line
            .split_whitespace()
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(nums.len(), 3, "{line}");
        assert!(nums[1] < nums[0] && nums[0] < nums[2], "{line}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["intervals"]["intervals"].as_array().unwrap().len(), 4);
    assert!(dir.path().join("est.json.resolved.toml").exists());
}

#[test]
fn estimate_with_quadrature_information() {
    let o = run(&[
        "estimate",
        "--data",
        s(&bundled()),
        "--kind",
        "CF",
        "--info",
        "quadrature",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("sigma2"));
}

#[test]
fn tau_report_for_fitted_ice_core_values() {
    let o = run(&["tau"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("tau = 3.97"), "{text}");
    assert!(text.contains("[3.00, 4.94]"), "{text}");
}

#[test]
fn study_output_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "3")];
    for (name, threads) in runs {
        let out = dir.path().join(name);
        let o = bin()
            .args([
                "study",
                "--replicates",
                "2",
                "--seed",
                "7",
                "--out",
                s(&out),
            ])
            .env("HYPOSPLIT_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for file in ["study.csv", "summary.json", "resolved_config.toml"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        for other in ["b", "c"] {
            assert_eq!(
                a,
                std::fs::read(dir.path().join(other).join(file)).unwrap(),
                "{file} differs in {other}"
            );
        }
    }
    let table = std::fs::read_to_string(dir.path().join("a/study.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4);
}

#[test]
fn study_from_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"theta0": [6.5, 1.0, 0.6, 0.1], "h_sim": 0.01, "h": 0.1, "n": 300,
            "replicates": 2, "seed": 3, "kinds": ["EM-PR", "LG-CF"], "start_at_truth": true}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["study", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert!(table.contains(",EM-PR,ok,") && table.contains(",LG-CF,ok,"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(run(&["estimate", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&["estimate", "--data", "/nonexistent/x.csv"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["tau", "--theta", "1,2,3"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn ingest_of_own_output_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.csv");
    let o = run(&[
        "simulate",
        "--n",
        "300",
        "--h",
        "0.02",
        "--h-sim",
        "0.001",
        "--out",
        s(&sim),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let re = dir.path().join("re.csv");
    let o = run(&[
        "ingest",
        "--source",
        s(&sim),
        "--bin-width",
        "0.02",
        "--out",
        s(&re),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let first: Vec<String> = std::fs::read_to_string(&sim)
        .unwrap()
        .lines()
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    let again: Vec<String> = std::fs::read_to_string(&re)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(first.len(), again.len());
    for (a, b) in first.iter().zip(&again).skip(1) {
        let pa: Vec<f64> = a.split(',').map(|v| v.parse().unwrap()).collect();
        let pb: Vec<f64> = b.split(',').map(|v| v.parse().unwrap()).collect();
        // Bin centers sit half a bin after the original samples.
        assert!((pb[0] - pa[0] - 0.01).abs() < 1e-12, "{a} vs {b}");
        assert_eq!(pa[1], pb[1]);
    }
    // A second pass over the ingested series reproduces it byte for byte.
    let re2 = dir.path().join("re2.csv");
    let o = run(&[
        "ingest",
        "--source",
        s(&re),
        "--bin-width",
        "0.02",
        "--out",
        s(&re2),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&re).unwrap(), std::fs::read(&re2).unwrap());
    assert!(dir.path().join("re.csv.report.json").exists());
}

#[test]
fn analyze_moments_and_densities_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("k.csv");
    let o = run(&[
        "simulate",
        "--theta",
        "62.5,296.7,219.1,9125",
        "--h",
        "0.02",
        "--h-sim",
        "0.0001",
        "--n",
        "2500",
        "--out",
        s(&sim),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let rep = dir.path().join("cross.json");
    let o = run(&["analyze", "--data", s(&sim), "--out", s(&rep)]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(json["window"], 11);
    assert!(!json["events"].as_array().unwrap().is_empty());

    let m = dir.path().join("moments.json");
    let o = run(&[
        "moments",
        "--intervals",
        "10000",
        "--substeps",
        "100",
        "--out",
        s(&m),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(&m).unwrap().contains("all_pass"));

    let d = dir.path().join("dens");
    let o = run(&["densities", "--nx", "11", "--nv", "7", "--out", s(&d)]);
    assert_eq!(o.status.code(), Some(0));
    let joint = std::fs::read_to_string(d.join("joint.csv")).unwrap();
    assert_eq!(joint.lines().count(), 1 + 11 * 7);
    assert!(d.join("meta.json").exists() && d.join("position.csv").exists());
}
