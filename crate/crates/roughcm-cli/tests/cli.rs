use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_roughcm"))
}

fn example(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("roughcm-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn derive_nonlinear_example() {
    let spec = example("chekroun_nonlinear.json");
    let o = run(&["derive", "--spec", spec.to_str().unwrap(), "--q", "6"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "α_1 ≡ 0, α_3 ≡ 0");
    assert_eq!(lines[1], "dα_2 = (-α_2 + 1)dt");
    assert_eq!(lines[2], "dα_4 = (-α_4 - 2α_2² - 2α_2)dt");
    assert_eq!(lines[3], "dα_5 = -α_5 dt - α_2²∘dW");
    assert_eq!(lines[4], "dα_6 = (-α_6 - 6α_2α_4 - 4α_4)dt + α_2³∘dW");
    assert!(out.contains("residual min degree: M 7, M̃ 7"));
}

#[test]
fn derive_linear_example_residuals() {
    let spec = example("chekroun_linear.json");
    let o = run(&["derive", "--spec", spec.to_str().unwrap(), "--q", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l == "Mφ = 6α_2α_4 x⁶ + 4α_4² x⁸; M̃φ = 0"));
}

#[test]
fn derive_zero_system() {
    let spec = example("zero.json");
    let o = run(&["derive", "--spec", spec.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["zero_flags"], serde_json::json!([1, 2, 3, 4]));
    assert_eq!(v["M"], "0");
}

#[test]
fn derive_writes_files() {
    let dir = tmp_dir("derive");
    let spec = example("chekroun_linear.json");
    let o = run(&["derive", "--spec", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    for f in ["coefficients.json", "coefficients.csv", "report.txt"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert!(stdout(&o).starts_with("i,zero_flag,A_alpha,f,g,equation"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn invalid_spec_exits_with_two() {
    let dir = tmp_dir("invalid");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"q": 4, "Ac": 0, "As": -1, "Gs": [[{"i": 0, "j": 1, "c": 1}]]}"#).unwrap();
    let o = run(&["derive", "--spec", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("DG(0,0) ≠ 0, see Assumption (G)"));
    let o = run(&["derive", "--spec", dir.join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let spec = example("chekroun_nonlinear.json");
    let o = run(&["verify", "--spec", spec.to_str().unwrap(), "--seeds", "5..2"]);
    assert_eq!(o.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_deterministic_linear_example() {
    let dir = tmp_dir("verify");
    let spec = example("chekroun_linear.json");
    let args = [
        "verify", "--spec", spec.to_str().unwrap(), "--q", "4", "--xi-max", "0.2", "--points", "5", "--grid-n", "64", "--out-dir",
        dir.to_str().unwrap(),
    ];
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.join("run.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "seed,xi,phi,hc,happ,abs_err_phi,abs_err_happ");
    assert_eq!(lines.count(), 5);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run_report.json")).unwrap()).unwrap();
    assert!(v["median_slope"].as_f64().unwrap() >= 5.0);
    for key in ["xi_sweep", "phi_values", "hc_values", "happ_values", "contraction_rates", "tail_bounds"] {
        assert!(v["seeds"][0][key].is_array(), "{key}");
    }
    assert_eq!(v["residual_min_degree"], 6);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_is_reproducible_across_thread_counts() {
    let spec = example("chekroun_nonlinear.json");
    let args = ["verify", "--spec", spec.to_str().unwrap(), "--seeds", "4", "--grid-n", "32", "--format", "csv"];
    let a = bin().args(args).output().unwrap();
    let b = bin().args(args).env("RM_THREADS", "1").output().unwrap();
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(a.stdout, b.stdout);
    let rows: Vec<String> = stdout(&a).lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    let expected: Vec<String> = (0..4).flat_map(|s| std::iter::repeat(s.to_string()).take(4)).collect();
    assert_eq!(rows, expected);
}

#[test]
fn radius_breach_warns_and_proceeds() {
    let spec = example("chekroun_nonlinear.json");
    let o = run(&["verify", "--spec", spec.to_str().unwrap(), "--seeds", "1", "--grid-n", "32", "--xi-max", "0.6", "--xi-min", "0.05"]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().filter(|l| l.starts_with("warning: ξ = ")).count(), 1);
    assert!(stdout(&o).contains("median slope"));
}

#[test]
fn bad_thread_count_is_rejected() {
    let spec = example("zero.json");
    let o = bin().args(["derive", "--spec", spec.to_str().unwrap()]).env("RM_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
