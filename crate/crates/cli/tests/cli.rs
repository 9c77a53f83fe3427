use std::path::Path;
use std::process::{Command, Output};

const PHANTOM: &str = r#"
width = 24
height = 24
pixel_size_cm = 0.4
[[inserts]]
center_cm = [0.0, 0.0]
radius_cm = 4.0
composition = [{ material = "water", density_mg_cc = 1000.0 }]
[[inserts]]
center_cm = [2.0, 0.0]
radius_cm = 1.2
composition = [{ material = "water", density_mg_cc = 1000.0 }, { material = "iodine", density_mg_cc = 10.0 }]
"#;

const CONFIG: &str = r#"
phantom = "phantom.toml"
photons_per_ray = 1e5
materials = ["water", "pmma", "iodine"]
methods = ["coarse", "roi"]
out = "run"
[geometry]
n_views = 30
n_detectors = 32
detector_spacing_cm = 0.4
[sart]
n_iterations = 5
[kernel]
k = 3
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roidecomp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("phantom.toml"), PHANTOM).unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn pipeline_writes_report_and_resume_reuses_stages() {
    let dir = workspace(CONFIG);
    let out = run(dir.path(), &["pipeline", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/evaluate/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,material,error_m,fp,fn"));
    // pmma is absent from the phantom, so it has no error row
    assert_eq!(lines.count(), 4);

    let again = run(dir.path(), &["pipeline", "--config", "run.toml", "--resume"]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("up to date"));
    assert_eq!(std::fs::read_to_string(dir.path().join("run/evaluate/report.csv")).unwrap(), csv);
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = workspace(CONFIG);
    for stage in ["simulate", "reconstruct", "decompose", "evaluate"] {
        let out = run(dir.path(), &["--config", "run.toml", "--methods", "coarse", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(dir.path().join("run/evaluate/report.csv").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = workspace(&format!("{CONFIG}\nunknown_key = 1\n"));
    let out = run(dir.path(), &["pipeline", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let dir = workspace(CONFIG);
    let out = run(dir.path(), &["pipeline", "--config", "run.toml", "--methods", "tv,bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["pipeline", "--config", "run.toml", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(dir.path(), &["simulate", "--config", "missing.toml"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn rank_deficient_basis_exits_with_3() {
    let dir = workspace(CONFIG);
    // two constant tables make proportional basis columns
    let flat = |name: &str, mu: f64| format!("# material: {name}\n# density_g_cm3: 1.0\n20\t{mu}\n120\t{mu}\n");
    std::fs::write(dir.path().join("a.tsv"), flat("a", 0.5)).unwrap();
    std::fs::write(dir.path().join("b.tsv"), flat("b", 1.0)).unwrap();
    std::fs::write(dir.path().join("phantom.toml"), PHANTOM.replace("iodine", "a")).unwrap();
    let config = CONFIG
        .replace(r#"materials = ["water", "pmma", "iodine"]"#, r#"materials = ["water", "a.tsv", "b.tsv"]"#)
        .replace(r#"methods = ["coarse", "roi"]"#, r#"methods = ["tv"]"#);
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    let out = run(dir.path(), &["pipeline", "--config", "run.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
