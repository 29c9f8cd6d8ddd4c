use std::path::Path;
use std::process::{Command, Output};

fn flashd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flashd")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_writes_identical_files_twice() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = flashd(&["gen", "--seed", "7", "--n", "64", "--d", "16", "--dist", "gaussian:0,1", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["q.atn", "k.atn", "v.atn"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&flashd(&["gen", "--seed", "7", "--n", "4", "--d", "4"])), 2);
    assert_eq!(code(&flashd(&["bogus"])), 2);
    assert_eq!(code(&flashd(&["run", "--kernel", "nope", "--seed", "1", "--n", "4", "--d", "4"])), 2);
    assert_eq!(code(&flashd(&["run"])), 2);
    let o = flashd(&["run", "--input", "x", "--seed", "1", "--n", "4", "--d", "4"]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
    assert_eq!(code(&flashd(&["--help"])), 0);
}

#[test]
fn unreadable_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&flashd(&["run", "--input", p(&dir.path().join("none"))])), 3);
}

#[test]
fn run_then_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p");
    assert_eq!(code(&flashd(&["gen", "--seed", "3", "--n", "128", "--d", "64", "--out", p(&prob)])), 0);
    let (r, f) = (dir.path().join("r.atn"), dir.path().join("f.atn"));
    let o = flashd(&["run", "--input", p(&prob), "--kernel", "reference", "--out", p(&r)]);
    assert_eq!(code(&o), 0);
    let o = flashd(&["run", "--input", p(&prob), "--kernel", "flashd", "--skip", "off", "--out", p(&f)]);
    assert_eq!(code(&o), 0);
    let report = json(&o);
    assert_eq!(report["summary"]["total"]["div"], 0);
    assert_eq!(report["summary"]["total"]["max_cmp"], 0);

    let o = flashd(&["compare", p(&f), p(&r), "--tol", "1e-12"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(json(&o)["max_norm_rel"].as_f64().unwrap() <= 1e-12);
    let o = flashd(&["compare", p(&f), p(&r), "--tol", "1e-9", "--metric", "componentwise"]);
    assert_eq!(code(&o), 0);

    let o = flashd(&["compare", p(&r), p(&r), "--tol", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["max_abs"], 0.0);
    assert_eq!(code(&flashd(&["compare", p(&f), p(&r), "--tol", "0"])), 1);
}

#[test]
fn compare_shape_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    flashd(&["gen", "--seed", "1", "--n", "8", "--d", "4", "--out", p(&a)]);
    flashd(&["gen", "--seed", "1", "--n", "8", "--d", "8", "--out", p(&b)]);
    assert_eq!(code(&flashd(&["compare", p(&a.join("q.atn")), p(&b.join("q.atn"))])), 4);
    assert_eq!(code(&flashd(&["compare", p(&a.join("q.atn")), p(&dir.path().join("zz"))])), 3);
}

#[test]
fn run_reports_per_kernel_counts() {
    let o = flashd(&["run", "--seed", "2", "--n", "32", "--d", "16", "--queries", "1", "--kernel", "alg2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["summary"]["total"]["div"], 16);

    let o = flashd(&[
        "run", "--seed", "2", "--n", "256", "--d", "64", "--kernel", "flashd", "--precision", "fp8e4m3",
        "--nonlinear", "pwl",
    ]);
    assert_eq!(code(&o), 0);
    let r = json(&o);
    assert_eq!(r["has_nan"], false);
    assert_eq!(r["non_finite"], 0);
}

#[test]
fn log_mode_with_pwl_is_rejected() {
    let o = flashd(&["run", "--seed", "2", "--n", "8", "--d", "4", "--mode", "log", "--nonlinear", "pwl"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_pwl_prints_a_table() {
    let o = flashd(&["fit-pwl", "--function", "sigmoid", "--segments", "8"]);
    assert_eq!(code(&o), 0);
    let t = json(&o);
    assert_eq!(t["function"], "sigmoid");
    assert_eq!(t["breakpoints"].as_array().unwrap().len(), 9);
    assert_eq!(t["slopes"].as_array().unwrap().len(), 8);
    assert_eq!(t["intercepts"].as_array().unwrap().len(), 8);
    assert_eq!(t["domain"][0], -6.0);
    assert!(t["max_abs_error"].as_f64().unwrap() > 0.0);
    assert_eq!(code(&flashd(&["fit-pwl", "--function", "ln", "--segments", "0"])), 2);
}

fn strip_runtime(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(17);
            f.join(",")
        })
        .collect()
}

#[test]
fn sweep_is_complete_and_deterministic() {
    let a = flashd(&["sweep", "--seed", "5", "--n", "64"]);
    let b = flashd(&["sweep", "--seed", "5", "--n", "64"]);
    assert_eq!(code(&a), 0);
    let (a, b) = (String::from_utf8(a.stdout).unwrap(), String::from_utf8(b.stdout).unwrap());
    assert_eq!(a.lines().count(), 1 + 4 * 3 * 3);
    assert_eq!(strip_runtime(&a), strip_runtime(&b));
    let mut rdr = csv::Reader::from_reader(a.as_bytes());
    for row in rdr.deserialize::<flashd::instrumentation::CsvRow>() {
        let row = row.unwrap();
        assert!(row.error.is_empty());
        if row.kernel == "flashd" {
            assert_eq!(row.div, Some(0));
        }
    }
    let both = flashd(&["sweep", "--seed", "5", "--n", "16", "--skips", "off,on", "--dims", "16"]);
    assert_eq!(String::from_utf8(both.stdout).unwrap().lines().count(), 1 + 4 * 3 * 2);
}
