use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evtss"))
}

fn run_in(out: &Path, args: &[&str]) -> (i32, String, PathBuf) {
    let o = bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("EVTSS_SEED")
        .output()
        .unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    let dir = stdout
        .lines()
        .find_map(|l| l.strip_prefix("outputs: "))
        .map(PathBuf::from)
        .unwrap_or_default();
    (o.status.code().unwrap_or(-1), stdout, dir)
}

fn simulate(out: &Path) -> PathBuf {
    let (code, _, dir) = run_in(out, &["simulate", "--mc-size", "20000", "--seed", "5"]);
    assert_eq!(code, 0);
    dir.join("synthetic.csv")
}

#[test]
fn empirical_probability_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, stdout, dir) = run_in(tmp.path(), &["prob-empirical", "--k", "9", "--n", "463"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().next().unwrap(), "0.0191 (0.0067, 0.0314)");
    assert!(dir.join("report.json").exists());
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, _) = run_in(tmp.path(), &["fit-bm"]);
    assert_eq!(code, 1);
    let (code, _, _) = run_in(tmp.path(), &["fit-bm", "--measure", "speed"]);
    assert_eq!(code, 1);
}

#[test]
fn simulate_then_fit_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let input = data.to_str().unwrap();
    let args = ["fit-bm", "--input", input, "--covariates", "speedfront,passinggap", "--mc-size", "10000", "--bootstrap", "19"];
    let (code, first, dir) = run_in(tmp.path(), &args);
    assert_eq!(code, 0, "{first}");
    for f in ["report.json", "report.txt", "qq.svg", "qq.csv", "density.svg", "run_config.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let json = std::fs::read(dir.join("report.json")).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    let (_, second, dir2) = run_in(tmp.path(), &args);
    assert_eq!(dir, dir2);
    assert_eq!(first, second);
    assert_eq!(json, std::fs::read(dir2.join("report.json")).unwrap());
}

#[test]
fn gumbel_flag_pins_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let input = data.to_str().unwrap();
    let (code, out, dir) = run_in(
        tmp.path(),
        &["fit-bm", "--input", input, "--measure", "thw", "--gumbel", "--mc-size", "10000", "--bootstrap", "19"],
    );
    assert_eq!(code, 0, "{out}");
    assert!(out.starts_with("Gumbel fit of negated THW below 2 s"), "{out}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["fit"]["xi"]["value"], 0.0);
}

#[test]
fn seed_from_environment_changes_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = bin()
        .args(["prob-empirical", "--k", "1", "--n", "10", "--out"])
        .arg(tmp.path())
        .env("EVTSS_SEED", "3")
        .output()
        .unwrap();
    let b = bin()
        .args(["prob-empirical", "--k", "1", "--n", "10", "--seed", "4", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_ne!(a.stdout, b.stdout, "run directories carry the seed");
}

#[test]
fn bivariate_and_sweeps_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path());
    let input = data.to_str().unwrap();
    let (code, out, dir) = run_in(
        tmp.path(),
        &["fit-biv", "--input", input, "--gumbel", "--mc-size", "10000", "--bootstrap", "19"],
    );
    assert!(code == 0 || code == 2, "{out}");
    for f in ["report.json", "bev_density.csv", "bev_density.svg", "copula_density.svg"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let (code, _, dir) = run_in(tmp.path(), &["sweep", "--input", input, "--grid", "1.0,1.5,2.0"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let (code, _, dir) = run_in(tmp.path(), &["pot", "--input", input, "--grid", "1.0,1.5", "--limit", "1.5", "--mc-size", "2000"]);
    assert_eq!(code, 0);
    assert!(dir.join("pot_sweep.svg").exists());
}
