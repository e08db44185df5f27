use std::fs;
use std::path::Path;
use std::process::Command;

fn vlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vlab"))
}

const CONFIG: &str = r#"
seed = 11
n_paths = 3000
x0 = [0.0]

[kernel]
family = "fbm_general"
hurst = 0.7
horizon = 1.0

[grid]
horizon = 1.0
n_steps = 32

[drift]
kind = "holder_power"
beta = 0.5

[test_function]
kind = "cosine"
alpha = 0.9
phase = 0.785

[sweep]
t = 1.0
m = [1, 2]
h_grid = [0.01, 0.02, 0.04, 0.08]
eps_grid = [0.125, 0.25, 0.5]

[conditions]
mc_paths = 500
mc_steps = 32

[density]
resolution = 0.1
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

/// The report JSON with the timings object removed.
fn stripped(path: &Path) -> String {
    let json = fs::read_to_string(path).unwrap();
    let start = json.find("\"timings\"").expect("report has timings");
    let end = start + json[start..].find('}').unwrap();
    format!("{}{}", &json[..start], &json[end + 1..])
}

fn run_in(dir: &Path, sub: &str, config: &Path, threads: usize) -> std::process::Output {
    vlab()
        .args([sub, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap()
}

#[test]
fn every_subcommand_is_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    for sub in ["check-conditions", "simulate", "solve", "pe-ae-sweep", "density-verify"] {
        let mut reports = Vec::new();
        let mut csvs = Vec::new();
        for threads in [1, 8] {
            let o = run_in(&out, sub, &config, threads);
            assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
            reports.push(stripped(&out.join("report.json")));
            let mut files: Vec<_> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|e| e == "csv" || e == "bin"))
                .collect();
            files.sort();
            csvs.push(files.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());
            fs::remove_dir_all(&out).unwrap();
        }
        assert_eq!(reports[0], reports[1], "{sub}: report differs between 1 and 8 threads");
        assert_eq!(csvs[0], csvs[1], "{sub}: artifacts differ between 1 and 8 threads");
    }
}

#[test]
fn reproduce_reruns_an_embedded_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("out");
    assert!(run_in(&out, "density-verify", &config, 2).status.success());
    let first = stripped(&out.join("report.json"));
    let saved = tmp.path().join("saved.json");
    fs::copy(out.join("report.json"), &saved).unwrap();
    let o = run_in(&out, "reproduce", &saved, 3);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first, stripped(&out.join("report.json")));
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &CONFIG.replace("seed = 11", ""));
    let out = tmp.path().join("out");
    let o = vlab()
        .args(["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("report.json")).unwrap().contains("\"seed\": 4"));
}

#[test]
fn validation_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let no_seed = write_config(tmp.path(), &CONFIG.replace("seed = 11", ""));
    let o = run_in(&out, "check-conditions", &no_seed, 1);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let no_kernel = write_config(tmp.path(), "seed = 1\n[grid]\nhorizon = 1.0\nn_steps = 4\n");
    let o = run_in(&out, "simulate", &no_kernel, 1);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kernel"));

    let bad_beta = write_config(tmp.path(), &CONFIG.replace("beta = 0.5", "beta = 2.0"));
    let o = run_in(&out, "solve", &bad_beta, 1);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("drift.beta"));
}

#[test]
fn numeric_failures_exit_with_three() {
    // Too few samples for a density estimate is a data problem, not a config one.
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &CONFIG.replace("n_paths = 3000", "n_paths = 10"));
    let o = run_in(&tmp.path().join("out"), "density-verify", &config, 1);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
