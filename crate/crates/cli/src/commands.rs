//! Subcommand bodies. Each returns the text to emit and any warnings.

use std::fmt::Write;
use std::time::Instant;

use rayon::prelude::*;

use climex::adversary::{
    apply_injections, detect_outliers, eve_estimate_rtt, eve_interarrival_epoch, eve_interarrival_estimate, eve_tdoa_epoch,
    inject_responses, robust_fit, EveGrid, InjectionPlan,
};
use climex::config::{RunConfig, SweepEstimator, SweepSpec};
use climex::epoch::NodeId;
use climex::error::Error;
use climex::estimate::{default_t_test, grid_search, measure_phi_test_local, phase_error, predict_phi_test};
use climex::secrecy;
use climex::sim::{run_exchange, ScenarioConfig};

pub enum Fail {
    /// Bad invocation or config: exit code 2.
    Usage(String),
    /// The run itself failed: exit code 1.
    Runtime(String),
}

fn usage(e: Error) -> Fail {
    Fail::Usage(e.to_string())
}

fn runtime(e: Error) -> Fail {
    Fail::Runtime(e.to_string())
}

type Out = Result<(String, Vec<String>), Fail>;

fn load(text: &str, seed: Option<u64>) -> Result<(RunConfig, ScenarioConfig), Fail> {
    let mut cfg = RunConfig::parse(text).map_err(usage)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sc = cfg.scenario().map_err(usage)?;
    Ok((cfg, sc))
}

pub fn simulate(text: &str, seed: Option<u64>) -> Out {
    let (_, sc) = load(text, seed)?;
    let (ea, eb, _) = run_exchange(&sc).map_err(runtime)?;
    let mut s = String::from("index,t_s,y_s,protocol,collector\n");
    for e in [&ea, &eb] {
        for (i, y) in e.values.iter().enumerate() {
            let t = e.timestamp + i as f64 * e.interval_s;
            writeln!(s, "{i},{t:e},{y:e},{},{}", e.protocol, e.collector).unwrap();
        }
    }
    Ok((s, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
    Eve,
}

/// Errors of one fitted exchange against the scenario's truth.
pub struct Trial {
    lines: Vec<(&'static str, f64)>,
    pub f_d_err: f64,
    pub phi_err: f64,
    pub rho_err: f64,
    warnings: Vec<String>,
}

fn defender_trial(cfg: &RunConfig, sc: &ScenarioConfig, role: Role) -> Result<Trial, Fail> {
    let (ea, eb, _) = run_exchange(sc).map_err(runtime)?;
    let (epoch, me, other) = match role {
        Role::Bob => (&eb, &sc.bob, &sc.alice),
        _ => (&ea, &sc.alice, &sc.bob),
    };
    let grid = cfg.grid().map_err(usage)?;
    let own = me.frequency();
    let est = grid_search(epoch, &grid, &sc.consts, own, epoch.delta.as_deref()).map_err(runtime)?;
    let t_test = default_t_test(epoch);
    let f_d = sc.beat_frequency(me.id).map_err(runtime)?;
    let rho = sc.geometry.rho_ab;
    let phi_true = measure_phi_test_local(other, t_test);
    let mut warnings = Vec::new();
    if est.at_grid_edge {
        warnings.push(format!("f_d estimate {} Hz sits on the edge of the search range", est.f_d_hat));
    }
    let phi_pred = match predict_phi_test(&est, own, t_test, sc.consts.c) {
        Ok(p) => p,
        Err(Error::UndefinedPhase) => {
            warnings.push("zero difference frequency: phi_test is undefined".into());
            f64::NAN
        }
        Err(e) => return Err(runtime(e)),
    };
    let phi_err = phase_error(phi_pred, phi_true);
    let lines = vec![
        ("f_d_hat_hz", est.f_d_hat),
        ("f_d_true_hz", f_d),
        ("f_d_err_hz", est.f_d_hat - f_d),
        ("phi_hat_rad", est.phi_hat),
        ("rho_hat_m", est.rho_hat),
        ("rho_err_m", est.rho_hat - rho),
        ("cost_s2", est.cost),
        ("f_counterpart_hat_hz", est.f_counterpart_hat),
        ("f_counterpart_err_hz", est.f_counterpart_hat - other.frequency()),
        ("t_test_s", t_test),
        ("phi_test_hat_rad", phi_pred),
        ("phi_test_true_rad", phi_true),
        ("phi_test_err_rad", phi_err),
    ];
    Ok(Trial { lines, f_d_err: est.f_d_hat - f_d, phi_err, rho_err: est.rho_hat - rho, warnings })
}

fn eve_trial(cfg: &RunConfig, sc: &ScenarioConfig) -> Result<Trial, Fail> {
    let eve = sc.eve.ok_or_else(|| Fail::Usage("the eve role needs `eve = on`".into()))?;
    let (_, _, log) = run_exchange(sc).map_err(runtime)?;
    let b = &cfg.budget;
    let grid = EveGrid::for_clocks(cfg.eve_grid().map_err(usage)?, cfg.f0_hz, b.ppm, b.df_bin).map_err(usage)?;
    let tdoa = eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).map_err(runtime)?;
    let est = eve_estimate_rtt(&tdoa, &grid).map_err(runtime)?;
    let ia_epoch = eve_interarrival_epoch(&log, NodeId::Alice, &eve, &sc.noise, sc.seed).map_err(runtime)?;
    let ia = eve_interarrival_estimate(&ia_epoch, &eve, &cfg.interarrival_grid().map_err(usage)?).map_err(runtime)?;
    let f_d = sc.beat_frequency(NodeId::Alice).map_err(runtime)?;
    let f_b_hat = ia.f_initiator_hat - est.f_d_hat;
    let mut warnings = Vec::new();
    if est.at_grid_edge {
        warnings.push(format!("Eve's f_d estimate {} Hz sits on the edge of the search range", est.f_d_hat));
    }
    let lines = vec![
        ("f_d_hat_hz", est.f_d_hat),
        ("f_d_true_hz", f_d),
        ("f_d_err_hz", est.f_d_hat - f_d),
        ("t_b_hat_s", est.t_b_hat),
        ("t_b_err_s", est.t_b_hat - sc.bob.period()),
        ("t_b_bin_s", grid.t_b_step),
        ("phi_hat_rad", est.phi_hat),
        ("cost_s2", est.cost),
        ("f_a_hat_hz", ia.f_initiator_hat),
        ("f_a_err_hz", ia.f_initiator_hat - sc.alice.frequency()),
        ("f_b_hat_hz", f_b_hat),
        ("f_b_err_hz", f_b_hat - sc.bob.frequency()),
    ];
    Ok(Trial { lines, f_d_err: est.f_d_hat - f_d, phi_err: f64::NAN, rho_err: f64::NAN, warnings })
}

fn trial(cfg: &RunConfig, sc: &ScenarioConfig, role: Role) -> Result<Trial, Fail> {
    match role {
        Role::Eve => eve_trial(cfg, sc),
        _ => defender_trial(cfg, sc, role),
    }
}

pub fn estimate(text: &str, seed: Option<u64>, role: Role) -> Out {
    let (cfg, sc) = load(text, seed)?;
    let t = trial(&cfg, &sc, role)?;
    let mut s = String::new();
    let name = match role {
        Role::Alice => "alice",
        Role::Bob => "bob",
        Role::Eve => "eve",
    };
    writeln!(s, "role = {name}").unwrap();
    writeln!(s, "protocol = {}", sc.protocol).unwrap();
    writeln!(s, "seed = {}", sc.seed).unwrap();
    for (k, v) in &t.lines {
        writeln!(s, "{k} = {v:e}").unwrap();
    }
    Ok((s, t.warnings))
}

/// Runs a sweep. `read` resolves the scenario path named in the sweep file.
pub fn sweep(text: &str, read: impl Fn(&str) -> Result<String, Fail>, seed: Option<u64>, timing: bool) -> Out {
    let mut spec = SweepSpec::parse(text).map_err(usage)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let base = RunConfig::parse(&read(&spec.config)?).map_err(usage)?;
    let role = match spec.estimator {
        SweepEstimator::Alice => Role::Alice,
        SweepEstimator::Eve => Role::Eve,
    };
    let jobs: Vec<(f64, usize)> = spec.values.iter().flat_map(|&v| (0..spec.trials).map(move |t| (v, t))).collect();
    let rows: Vec<Result<(String, Vec<String>), Fail>> = jobs
        .par_iter()
        .map(|&(v, t)| {
            let cfg = spec.apply(&base, v, t).map_err(usage)?;
            let sc = cfg.scenario().map_err(usage)?;
            let start = Instant::now();
            let r = trial(&cfg, &sc, role)?;
            let mut row = format!("{v:e},{t},{},{:e},{:e},{:e}", cfg.seed, r.f_d_err, r.phi_err, r.rho_err);
            if timing {
                write!(row, ",{:e}", start.elapsed().as_secs_f64()).unwrap();
            }
            Ok((row, r.warnings.into_iter().map(|w| format!("{}={v} trial {t}: {w}", spec.param.name())).collect()))
        })
        .collect();
    let mut s = format!("{},trial,seed,f_d_err_hz,phi_test_err_rad,rho_err_m", spec.param.name());
    if timing {
        s.push_str(",runtime_s");
    }
    s.push('\n');
    let mut warnings = Vec::new();
    for r in rows {
        let (row, w) = r?;
        s.push_str(&row);
        s.push('\n');
        warnings.extend(w);
    }
    Ok((s, warnings))
}

pub fn budget(text: &str) -> Out {
    let cfg = RunConfig::parse(text).map_err(usage)?;
    let b = secrecy::budget(&cfg.budget).map_err(usage)?;
    let area = secrecy::two_triangle_area(&cfg.budget).map_err(usage)?;
    let mut s = String::new();
    writeln!(s, "cardinality_t = {}", b.cardinality_t).unwrap();
    writeln!(s, "two_triangle_area = {area}").unwrap();
    writeln!(s, "log2_f = {:.4}", b.log2_f).unwrap();
    writeln!(s, "log2_phi = {:.4}", b.log2_phi).unwrap();
    writeln!(s, "log2_rho = {:.4}", b.log2_rho).unwrap();
    writeln!(s, "log2_total = {:.4}", b.log2_f + b.log2_phi + b.log2_rho).unwrap();
    writeln!(s, "n_f_bits = {}", b.n_f).unwrap();
    writeln!(s, "n_phi_bits = {}", b.n_phi).unwrap();
    writeln!(s, "n_rho_bits = {}", b.n_rho).unwrap();
    writeln!(s, "n_total_bits = {}", b.n_total).unwrap();
    writeln!(s, "rounded_f_bits = {}", b.rounded_f).unwrap();
    writeln!(s, "rounded_phi_bits = {}", b.rounded_phi).unwrap();
    writeln!(s, "rounded_rho_bits = {}", b.rounded_rho).unwrap();
    writeln!(s, "rounded_total_bits = {}", b.rounded_total).unwrap();
    Ok((s, Vec::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    None,
    Random,
    Oracle,
}

pub fn detect(text: &str, seed: Option<u64>, strategy: Strategy) -> Out {
    let (cfg, sc) = load(text, seed)?;
    if strategy != Strategy::None && sc.eve.is_none() {
        return Err(Fail::Usage("injection needs `eve = on`".into()));
    }
    if cfg.inject_slot >= sc.consts.n {
        return Err(Fail::Usage(format!("inject_slot {} is outside the epoch of {} pings", cfg.inject_slot, sc.consts.n)));
    }
    let (ea, _, log) = run_exchange(&sc).map_err(runtime)?;
    let slots = [cfg.inject_slot];
    let plan = match strategy {
        Strategy::None => InjectionPlan::empty(NodeId::Alice),
        Strategy::Random => InjectionPlan::random_timing(NodeId::Alice, &slots, sc.consts.t_m / 2.0, sc.seed),
        Strategy::Oracle => InjectionPlan::oracle_perfect(NodeId::Alice, &slots),
    };
    let log = inject_responses(&log, &plan).map_err(runtime)?;
    let epoch = apply_injections(&ea, &log).map_err(runtime)?;
    let grid = cfg.grid().map_err(usage)?;
    let own = sc.alice.frequency();
    let delta = epoch.delta.as_deref();
    let est = robust_fit(&epoch, &grid, &sc.consts, own, delta).map_err(runtime)?;
    let flagged = detect_outliers(&epoch, &est, &sc.consts, own, delta, cfg.k_sigma).map_err(runtime)?;

    let mut s = String::new();
    let name = match strategy {
        Strategy::None => "none",
        Strategy::Random => "random-timing",
        Strategy::Oracle => "oracle-perfect",
    };
    writeln!(s, "strategy = {name}").unwrap();
    if strategy != Strategy::None {
        writeln!(s, "injected_slot = {}", cfg.inject_slot).unwrap();
        if let Some(&(_, off)) = plan.offsets.first() {
            if strategy == Strategy::Random {
                writeln!(s, "injected_delay_s = {off:e}").unwrap();
            }
        }
    }
    writeln!(s, "k_sigma = {:e}", cfg.k_sigma).unwrap();
    let list: Vec<String> = flagged.iter().map(|i| i.to_string()).collect();
    writeln!(s, "flagged = {}", list.join(" ")).unwrap();
    writeln!(s, "verdict = {}", if flagged.is_empty() { "clean" } else { "detected" }).unwrap();
    if strategy == Strategy::Oracle {
        writeln!(s, "note = oracle strategy: Eve was handed the hidden distances and clocks, which no real listener has").unwrap();
    }
    Ok((s, Vec::new()))
}
