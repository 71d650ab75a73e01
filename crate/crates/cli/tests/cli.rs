//! End-to-end checks of the binary: exit codes, golden bound values,
//! artifact layout, and byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn covshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covshift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const RATE_CONFIG: &str = "\
scenario.dim = 1
scenario.trunc_radius = 3
scenario.theta_star = 0.2
scenario.seed_domain = cli-rate
run.n_grid = 60,120
run.replications = 4
run.master_seed = 7
";

#[test]
fn rate_study_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "rate.cfg", RATE_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    let first = covshift(&["rate-study", "--config", &config, "--out", out_a.to_str().unwrap()]);
    assert_eq!(exit_code(&first), 0, "stderr: {}", stderr(&first));
    assert!(out_a.join("summary.json").exists());
    assert!(stdout(&first).contains("slope ="));

    let second = covshift(&["rate-study", "--config", &config, "--out", out_b.to_str().unwrap()]);
    assert_eq!(exit_code(&second), 0);
    // Identical reports once the differing output paths are dropped.
    let tail = |o: &Output| stdout(o).lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(tail(&first), tail(&second));
    for name in ["results.jsonl", "summary.json", "series.csv", "config_echo.txt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }

    // Refuse to overwrite without --force, allow with it.
    let clash = covshift(&["rate-study", "--config", &config, "--out", out_a.to_str().unwrap()]);
    assert_eq!(exit_code(&clash), 1);
    assert!(stderr(&clash).contains("--force"));
    let forced = covshift(&[
        "rate-study",
        "--config",
        &config,
        "--out",
        out_a.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(exit_code(&forced), 0);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "rate.cfg", RATE_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    covshift(&["rate-study", "--config", &config, "--out", out_a.to_str().unwrap()]);
    let reseeded = covshift(&[
        "rate-study",
        "--config",
        &config,
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(exit_code(&reseeded), 0);
    let a = std::fs::read(out_a.join("results.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("results.jsonl")).unwrap();
    assert_ne!(a, b, "different seeds must change the replications");
    let echo = std::fs::read_to_string(out_b.join("config_echo.txt")).unwrap();
    assert!(echo.contains("run.master_seed = 99"));
}

#[test]
fn missing_config_file_exits_one_and_names_the_path() {
    let out = covshift(&["rate-study", "--config", "/definitely/not/here.cfg", "--out", "/tmp/x"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("/definitely/not/here.cfg"));
}

#[test]
fn undersized_target_sample_exits_two_with_singular_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "sing.cfg",
        "scenario.dim = 5\n\
         scenario.trunc_radius = 4\n\
         scenario.theta_star = 0.1,0.1,0.1,0.1,0.1\n\
         scenario.seed_domain = cli-sing\n\
         run.n_p = 50\n\
         run.n_q = 3\n",
    );
    let out = covshift(&["fit", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("target Gram singular"), "stderr: {}", stderr(&out));
}

#[test]
fn unknown_command_exits_one_with_usage() {
    let out = covshift(&["no-such-command"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn bad_config_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.cfg",
        "scenario.dim = 1\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.2\n\
         scenario.seed_domain = cli-bad\n\
         run.n_grid = 60,120\n\
         pilot.ratio.method = sorcery\n",
    );
    let out = covshift(&["rate-study", "--config", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("pilot.ratio.method"));
}

#[test]
fn bounds_goldens_print_nine_significant_digits() {
    let finite = covshift(&["bounds", "finite", "--B", "1", "--size", "2", "--n", "4"]);
    assert_eq!(exit_code(&finite), 0);
    assert!(stdout(&finite).contains("1.17741002"), "{}", stdout(&finite));

    let nn = covshift(&[
        "bounds", "nn", "--L", "0.6366198", "--R", "1", "--depth", "1", "--mf", "1", "--n", "100",
    ]);
    assert_eq!(exit_code(&nn), 0);
    assert!(stdout(&nn).contains("0.443747"), "{}", stdout(&nn));

    let parametric = covshift(&[
        "bounds",
        "parametric",
        "--dim",
        "2",
        "--i-p",
        "2,0,0,2",
        "--i-q",
        "2,0,0,2",
        "--delta",
        "0.7357588823428847",
        "--n-p",
        "1000",
        "--n-q",
        "1000",
    ]);
    assert_eq!(exit_code(&parametric), 0);
    assert!(stdout(&parametric).contains("1.15200000"), "{}", stdout(&parametric));
    assert!(stdout(&parametric).contains("source term"));

    let confidence = covshift(&[
        "bounds",
        "confidence",
        "--dim",
        "1",
        "--i-p",
        "2",
        "--i-q",
        "2",
        "--delta",
        "0.36787944117144233",
        "--n-p",
        "50",
        "--n-q",
        "50",
    ]);
    assert_eq!(exit_code(&confidence), 0);
    assert!(stdout(&confidence).contains("2.40000000"), "{}", stdout(&confidence));

    let agnostic = covshift(&[
        "bounds", "agnostic", "--err-rho", "0.1", "--err-f", "0.2", "--c-dr", "30", "--c-rf",
        "1", "--rad-p", "0.05", "--rad-q", "0.04", "--n-p", "1000", "--n-q", "1000", "--delta",
        "0.05",
    ]);
    assert_eq!(exit_code(&agnostic), 0);
    let text = stdout(&agnostic);
    // Leading term 4 * 0.1 * 0.2 = 0.08 exactly.
    assert!(text.contains("pilot product = 0.0800000000"), "{text}");
    assert!(text.contains("structure-agnostic bound ="));

    // Missing required flag: exit 1 naming it.
    let missing = covshift(&["bounds", "finite", "--B", "1"]);
    assert_eq!(exit_code(&missing), 1);
    assert!(stderr(&missing).contains("--size"));
}

#[test]
fn generate_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "gen.cfg",
        "scenario.dim = 2\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.2,0.1\n\
         scenario.seed_domain = cli-gen\n\
         run.n_p = 8\n\
         run.n_q = 5\n\
         run.master_seed = 3\n",
    );
    let out_dir = dir.path().join("data");
    let out = covshift(&["generate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let source = std::fs::read_to_string(out_dir.join("source.csv")).unwrap();
    let target = std::fs::read_to_string(out_dir.join("target.csv")).unwrap();
    assert_eq!(source.lines().count(), 9, "header plus 8 rows");
    assert_eq!(target.lines().count(), 6, "header plus 5 rows");
    assert_eq!(source.lines().next().unwrap(), "x1,x2,y");
    assert!(out_dir.join("config_echo.txt").exists());

    // Rerun without --force refuses; the data files are untouched.
    let clash = covshift(&["generate", "--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(exit_code(&clash), 1);
    let again = covshift(&[
        "generate",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--force",
    ]);
    assert_eq!(exit_code(&again), 0);
    assert_eq!(source, std::fs::read_to_string(out_dir.join("source.csv")).unwrap());
}

#[test]
fn compare_crossfit_and_rad_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "multi.cfg",
        "scenario.dim = 1\n\
         scenario.trunc_radius = 3\n\
         scenario.theta_star = 0.2\n\
         scenario.seed_domain = cli-multi\n\
         run.n = 80\n\
         run.replications = 3\n\
         run.master_seed = 5\n\
         run.estimators = erm-source,dr-oracle\n\
         rad.n_signs = 200\n\
         rad.n_outer = 2\n",
    );
    let compare = covshift(&[
        "compare",
        "--config",
        &config,
        "--out",
        dir.path().join("cmp").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&compare), 0, "stderr: {}", stderr(&compare));
    assert!(stdout(&compare).contains("erm-source"));
    assert!(stdout(&compare).contains("dr-oracle"));

    let crossfit = covshift(&[
        "crossfit",
        "--config",
        &config,
        "--out",
        dir.path().join("cf").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&crossfit), 0, "stderr: {}", stderr(&crossfit));
    assert!(stdout(&crossfit).contains("pilot half: 40 source / 40 target"));

    let rad = covshift(&[
        "rad",
        "--config",
        &config,
        "--out",
        dir.path().join("rad").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&rad), 0, "stderr: {}", stderr(&rad));
    assert!(stdout(&rad).contains("rad_P ="));
    assert!(stdout(&rad).contains("rad_Q ="));
}
