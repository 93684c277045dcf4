use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn zicount(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zicount")).args(args).env_remove("ZICOUNT_SEED").output().unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const ZINB: [&str; 8] = ["--family", "ZINB", "--mu", "~0+photoperiod", "--sigma", "~0+photoperiod", "--nu", "~0+photoperiod"];

#[test]
fn poisson_fit_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = zicount(&["fit", "--family", "PO", "--mu", "photoperiod", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert_eq!(json["family"], "PO");
    assert_eq!(json["df"], 2);
}

#[test]
fn printed_aic_matches_the_saved_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["fit"];
    args.extend(ZINB);
    let out = out_arg(dir.path());
    args.extend(["--out", &out]);
    let o = zicount(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("AIC 1249.630"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!((json["aic"].as_f64().unwrap() - 1249.630).abs() < 5e-4);
}

#[test]
fn unknown_family_is_a_usage_error() {
    let o = zicount(&["fit", "--family", "ZZZ"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_scope_factor_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = zicount(&["select", "--family", "ZIP", "--scope", "light", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn select_writes_trace_and_final_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = zicount(&["select", "--family", "ZIP", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.log", "trace.json", "fit.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let log = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    let last = log.lines().last().unwrap();
    assert!(last.starts_with("final ZIP(mu ~ photoperiod, sigma ~ photoperiod)"), "{last}");
}

#[test]
fn compare_by_bic_orders_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = zicount(&["compare", "--criterion", "bic", "--out", &out_arg(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let families: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(families, ["ZINB", "ZIPIG", "ZIBNB", "ZIP"]);
}

#[test]
fn compare_single_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = zicount(&["compare", "--families", "NB", "--out", &out_arg(dir.path())]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn diagnose_groups_and_seeds() {
    let run = |seed: Option<&str>, env: Option<&str>| {
        let dir = tempfile::tempdir().unwrap();
        let out = out_arg(dir.path());
        let mut args = vec!["diagnose", "--group", "photoperiod", "--out", &out];
        args.extend(ZINB);
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_zicount"));
        cmd.args(&args).env_remove("ZICOUNT_SEED");
        if let Some(e) = env {
            cmd.env("ZICOUNT_SEED", e);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let residuals = fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
        (dir, residuals)
    };
    let (dir, a) = run(Some("7"), None);
    let (_, b) = run(Some("7"), None);
    let (_, c) = run(None, Some("7"));
    let (_, d) = run(None, None);
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_ne!(a, d);
    let rows = |name: &str| fs::read_to_string(dir.path().join(name)).unwrap().lines().count() - 1;
    assert_eq!(rows("worm_photoperiod_8.csv"), 140);
    assert_eq!(rows("worm_photoperiod_16.csv"), 130);
    assert_eq!(rows("worm_all.csv"), 270);
    assert_eq!(rows("residuals.csv"), 270);
}

#[test]
fn plots_are_well_formed_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let mut args = vec!["diagnose", "--plots", "--group", "photoperiod", "--out", &out];
    args.extend(ZINB);
    assert!(zicount(&args).status.success());
    let svgs: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert!(svgs.len() >= 6, "{svgs:?}");
    for p in svgs {
        let text = fs::read_to_string(&p).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
}

#[test]
fn diagnose_reuses_a_saved_fit() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let mut args = vec!["fit", "--out", &out];
    args.extend(ZINB);
    assert!(zicount(&args).status.success());
    let fit = dir.path().join("fit.json");
    let o = zicount(&["diagnose", "--fit-file", fit.to_str().unwrap(), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("terms.csv").exists());
}

#[test]
fn negative_counts_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "y,g\n1,a\n-2,b\n3,a\n").unwrap();
    let o = zicount(&["fit", "--family", "PO", "--data", path.to_str().unwrap(), "--response", "y", "--factors", "g"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let o = zicount(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("diagnose"));
}
