use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn climex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climex")).args(args).current_dir(root()).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .parse()
        .unwrap()
}

fn tmp(name: &str, body: &str) -> String {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(climex(&["budget", "no/such.cfg"]).status.code(), Some(2));
    assert_eq!(climex(&["frobnicate"]).status.code(), Some(2));
    let bad = tmp("bad.cfg", "n_pings = 100\nwibble = 3\n");
    let o = climex(&["estimate", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let dup = tmp("dup.cfg", "seed = 1\nseed = 2\n");
    assert_eq!(climex(&["simulate", &dup]).status.code(), Some(2));
}

#[test]
fn impossible_run_exits_1() {
    // a round trip longer than the ping interval
    let slow = tmp("slow.cfg", "n_pings = 100\nrho_ab_m = 20000\n");
    let o = climex(&["simulate", &slow]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_both_epochs() {
    let cfg = tmp("sim.cfg", "n_pings = 50\n");
    let text = stdout(&climex(&["simulate", &cfg]));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,t_s,y_s,protocol,collector"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    assert!(rows[..50].iter().all(|r| r.ends_with(",climex,alice")));
    assert!(rows[50..].iter().all(|r| r.ends_with(",climex,bob")));
}

#[test]
fn out_flag_matches_stdout() {
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli/budget.txt");
    let o = climex(&["budget", "configs/budget.cfg", "--out", out.to_str().unwrap()]);
    assert!(o.status.success() && o.stdout.is_empty());
    assert_eq!(std::fs::read(&out).unwrap(), climex(&["budget", "configs/budget.cfg"]).stdout);
}

#[test]
fn seed_flag_overrides_the_file() {
    let a = stdout(&climex(&["estimate", "configs/desk_rtt.cfg", "--seed", "9"]));
    let b = stdout(&climex(&["estimate", "configs/desk_rtt.cfg", "--seed", "10"]));
    assert_eq!(field(&a, "seed"), 9.0);
    assert_ne!(a, b);
}

#[test]
fn one_trial_sweep_is_one_estimate() {
    tmp("one.cfg", "protocol = rtt\ndither = none\nn_pings = 3000\nbob_df_hz = -50\n");
    let sweep = tmp("one.sweep", "config = one.cfg\nparam = f_d\nvalues = 123\ntrials = 1\nseed = 42\n");
    let csv = stdout(&climex(&["sweep", &sweep]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("f_d_hz,trial,seed,f_d_err_hz,phi_test_err_rad,rho_err_m"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!(lines.next().is_none());

    let single = tmp("one_est.cfg", "protocol = rtt\ndither = none\nn_pings = 3000\nbob_df_hz = -50\nalice_df_hz = 73\n");
    let est = stdout(&climex(&["estimate", &single, "--seed", "42"]));
    assert_eq!(row[..3], [123.0, 0.0, 42.0]);
    assert_eq!(row[3], field(&est, "f_d_err_hz"));
    assert_eq!(row[4], field(&est, "phi_test_err_rad"));
    assert_eq!(row[5], field(&est, "rho_err_m"));
}

#[test]
fn detect_verdicts() {
    let run = |s: &str| stdout(&climex(&["detect", "configs/detect.cfg", "--inject", s]));
    assert!(run("none").contains("verdict = clean"));
    assert!(run("random").contains("verdict = detected"));
    assert!(run("oracle").contains("verdict = clean"));
}

#[test]
fn budget_report() {
    let text = stdout(&climex(&["budget", "configs/budget.cfg"]));
    assert_eq!(field(&text, "cardinality_t"), 996004.0);
    assert_eq!(field(&text, "n_total_bits"), 36.0);
    assert_eq!(field(&text, "rounded_total_bits"), 38.0);
}
