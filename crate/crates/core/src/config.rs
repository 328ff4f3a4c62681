//! Flat `key = value` scenario and sweep files.
//!
//! One setting per line, `#` starts a comment, units are part of the key
//! name. Every key has a default, so an empty file is the desk scenario:
//! 100 MHz clocks, 10^4 pings over one second, 1 ns jitter and 2 ns channel
//! noise.

use std::collections::HashSet;
use std::f64::consts::TAU;

use rand::Rng;

use crate::epoch::{stream_rng, NodeId, Protocol, Stream};
use crate::error::{Error, Result};
use crate::estimate::SearchGrid;
use crate::secrecy::BudgetInputs;
use crate::signal::{ClockParams, NoiseParams, ProtocolConstants, SPEED_OF_LIGHT};
use crate::sim::{DitherSpec, Geometry, NodeState, ScenarioConfig};

/// `(line, key, value)` triples in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(Error::Config { line, message: format!("expected `key = value`, got `{body}`") });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config { line, message: "empty key or value".into() });
        }
        if !seen.insert(k.to_string()) {
            return Err(Error::Config { line, message: format!("`{k}` is set twice") });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn number(line: usize, key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Config { line, message: format!("`{key}` needs a finite number, got `{v}`") }),
    }
}

fn integer(line: usize, key: &str, v: &str) -> Result<u64> {
    v.parse::<u64>().map_err(|_| Error::Config { line, message: format!("`{key}` needs a non-negative integer, got `{v}`") })
}

/// A clock phase given in the file or left to the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Fixed(f64),
    Random,
}

/// Inner noise the estimators assume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerNoise {
    /// Matches the scenario's own noise.
    Auto,
    Fixed(f64),
}

/// Dither upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DitherUpper {
    Seconds(f64),
    /// A multiple of Alice's clock period.
    Periods(f64),
}

/// Everything a scenario file can say.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub f0_hz: f64,
    pub alice_df_hz: f64,
    pub bob_df_hz: f64,
    pub eve_df_hz: f64,
    pub alice_phase: Phase,
    pub bob_phase: Phase,
    pub eve_phase: Phase,
    pub eve: bool,
    pub rho_ab_m: f64,
    pub rho_ae_m: f64,
    pub rho_be_m: f64,
    pub t_m_s: f64,
    pub delta0_s: f64,
    pub a_scale_s: f64,
    pub n_pings: usize,
    pub c_mps: f64,
    pub sigma_j_s: f64,
    pub sigma_c_s: f64,
    pub protocol: Protocol,
    pub dither: bool,
    pub dither_upper: DitherUpper,
    pub start_s: f64,
    pub seed: u64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub df_hz: f64,
    pub phase_steps: usize,
    pub refine: usize,
    pub inner_noise: InnerNoise,
    pub budget: BudgetInputs,
    pub k_sigma: f64,
    pub inject_slot: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            f0_hz: 1e8,
            alice_df_hz: 150.0,
            bob_df_hz: -50.0,
            eve_df_hz: 230.0,
            alice_phase: Phase::Random,
            bob_phase: Phase::Random,
            eve_phase: Phase::Random,
            eve: true,
            rho_ab_m: 3.0,
            rho_ae_m: 4.0,
            rho_be_m: 5.0,
            t_m_s: 1e-4,
            delta0_s: 20e-9,
            a_scale_s: 10e-9,
            n_pings: 10_000,
            c_mps: SPEED_OF_LIGHT,
            sigma_j_s: 1e-9,
            sigma_c_s: 2e-9,
            protocol: Protocol::Climex,
            dither: true,
            dither_upper: DitherUpper::Periods(1.0),
            start_s: 0.0,
            seed: 1,
            f_lo_hz: -1000.0,
            f_hi_hz: 1000.0,
            df_hz: 1.0,
            phase_steps: 64,
            refine: 10,
            inner_noise: InnerNoise::Auto,
            budget: BudgetInputs::desk(),
            k_sigma: 4.0,
            inject_slot: 0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (line, k, v) in parse_pairs(text)? {
            c.set(line, &k, &v)?;
        }
        Ok(c)
    }

    /// Applies one setting; `line` is only used in error messages.
    pub fn set(&mut self, line: usize, k: &str, v: &str) -> Result<()> {
        let num = || number(line, k, v);
        let phase = || -> Result<Phase> {
            if v == "random" {
                Ok(Phase::Random)
            } else {
                Ok(Phase::Fixed(number(line, k, v)?))
            }
        };
        let flag = || match v {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            _ => Err(Error::Config { line, message: format!("`{k}` is on or off, got `{v}`") }),
        };
        match k {
            "f0_hz" => self.f0_hz = num()?,
            "alice_df_hz" => self.alice_df_hz = num()?,
            "bob_df_hz" => self.bob_df_hz = num()?,
            "eve_df_hz" => self.eve_df_hz = num()?,
            "alice_phase_rad" => self.alice_phase = phase()?,
            "bob_phase_rad" => self.bob_phase = phase()?,
            "eve_phase_rad" => self.eve_phase = phase()?,
            "eve" => self.eve = flag()?,
            "rho_ab_m" => self.rho_ab_m = num()?,
            "rho_ae_m" => self.rho_ae_m = num()?,
            "rho_be_m" => self.rho_be_m = num()?,
            "t_m_s" => self.t_m_s = num()?,
            "delta0_s" => self.delta0_s = num()?,
            "a_scale_s" => self.a_scale_s = num()?,
            "n_pings" => self.n_pings = integer(line, k, v)? as usize,
            "c_mps" => self.c_mps = num()?,
            "sigma_j_s" => self.sigma_j_s = num()?,
            "sigma_c_s" => self.sigma_c_s = num()?,
            "protocol" => {
                self.protocol = match v {
                    "rtt" => Protocol::Rtt,
                    "climex" => Protocol::Climex,
                    _ => return Err(Error::Config { line, message: format!("protocol is rtt or climex, got `{v}`") }),
                }
            }
            "dither" => {
                self.dither = match v {
                    "none" => false,
                    "uniform" => true,
                    _ => return Err(Error::Config { line, message: format!("dither is none or uniform, got `{v}`") }),
                }
            }
            "dither_upper_s" => self.dither_upper = DitherUpper::Seconds(num()?),
            "dither_upper_periods" => self.dither_upper = DitherUpper::Periods(num()?),
            "start_s" => self.start_s = num()?,
            "seed" => self.seed = integer(line, k, v)?,
            "f_lo_hz" => self.f_lo_hz = num()?,
            "f_hi_hz" => self.f_hi_hz = num()?,
            "df_hz" => self.df_hz = num()?,
            "phase_steps" => self.phase_steps = integer(line, k, v)? as usize,
            "refine" => self.refine = integer(line, k, v)? as usize,
            "inner_noise_s" => {
                self.inner_noise = if v == "auto" { InnerNoise::Auto } else { InnerNoise::Fixed(num()?) }
            }
            "ppm" => self.budget.ppm = num()?,
            "df_bin_hz" => self.budget.df_bin = num()?,
            "f_min_hz" => self.budget.f_min = num()?,
            "f_max_hz" => self.budget.f_max = num()?,
            "phi_res_rad" => self.budget.phi_res = num()?,
            "rho_range_m" => self.budget.rho_range = num()?,
            "rho_res_m" => self.budget.rho_res = num()?,
            "k_sigma" => self.k_sigma = num()?,
            "inject_slot" => self.inject_slot = integer(line, k, v)? as usize,
            _ => return Err(Error::Config { line, message: format!("unknown key `{k}`") }),
        }
        Ok(())
    }

    pub fn noise(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.sigma_j_s, self.sigma_c_s)
    }

    /// Builds the scenario. Phases marked random are drawn from the seed's
    /// setup stream, Alice then Bob then Eve.
    pub fn scenario(&self) -> Result<ScenarioConfig> {
        let mut rng = stream_rng(self.seed, Stream::Setup);
        let mut phase = |p: Phase| {
            let r = rng.random::<f64>() * TAU;
            match p {
                Phase::Fixed(x) => x,
                Phase::Random => r,
            }
        };
        let (pa, pb, pe) = (phase(self.alice_phase), phase(self.bob_phase), phase(self.eve_phase));
        let clock = |df| ClockParams::new(self.f0_hz, df, self.sigma_j_s);
        let alice = NodeState::new(NodeId::Alice, clock(self.alice_df_hz)?, pa);
        let bob = NodeState::new(NodeId::Bob, clock(self.bob_df_hz)?, pb);
        let eve = if self.eve { Some(NodeState::new(NodeId::Eve, clock(self.eve_df_hz)?, pe)) } else { None };
        let upper = match self.dither_upper {
            DitherUpper::Seconds(s) => s,
            DitherUpper::Periods(k) => k * alice.period(),
        };
        let cfg = ScenarioConfig {
            alice,
            bob,
            eve,
            geometry: Geometry::new(self.rho_ab_m, self.rho_ae_m, self.rho_be_m),
            consts: ProtocolConstants { t_m: self.t_m_s, delta_0: self.delta0_s, a_scale: self.a_scale_s, n: self.n_pings, c: self.c_mps },
            noise: self.noise()?,
            dither: if self.dither { DitherSpec::uniform(upper) } else { DitherSpec::NONE },
            protocol: self.protocol,
            start_time: self.start_s,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The defenders' search grid. `Auto` inner noise is the scenario's own
    /// inner noise level.
    pub fn grid(&self) -> Result<SearchGrid> {
        let inner_noise_s = match self.inner_noise {
            InnerNoise::Auto => self.noise()?.inner_variance().sqrt(),
            InnerNoise::Fixed(s) => s,
        };
        let g = SearchGrid { f_lo: self.f_lo_hz, f_hi: self.f_hi_hz, df: self.df_hz, phase_steps: self.phase_steps, refine: self.refine, inner_noise_s };
        g.validate()?;
        Ok(g)
    }

    /// Eve's grid for her TDOA fit: the defenders' grid with her own noise
    /// assumption when set to auto.
    pub fn eve_grid(&self) -> Result<SearchGrid> {
        let mut g = self.grid()?;
        if self.inner_noise == InnerNoise::Auto {
            let n = self.noise()?;
            g.inner_noise_s = (n.inner_variance() + n.outer_variance()).sqrt();
        }
        Ok(g)
    }

    /// Grid for timing arrivals against Eve's own clock.
    pub fn interarrival_grid(&self) -> Result<SearchGrid> {
        let mut g = self.grid()?;
        if self.inner_noise == InnerNoise::Auto {
            g.inner_noise_s = self.noise()?.outer_variance().sqrt();
        }
        Ok(g)
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Difference frequency; Bob stays put and Alice moves.
    FD,
    /// Dither upper bound in initiator periods.
    Dither,
    /// Number of pings.
    N,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::FD => "f_d_hz",
            SweepParam::Dither => "dither_periods",
            SweepParam::N => "n_pings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepEstimator {
    Alice,
    Eve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Scenario file, relative to the sweep file.
    pub config: String,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub estimator: SweepEstimator,
}

fn parse_values(line: usize, v: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Config { line, message: m.to_string() };
    if let Some(args) = v.strip_prefix("logspace(").and_then(|r| r.strip_suffix(')')) {
        let a: Vec<&str> = args.split(',').map(str::trim).collect();
        if a.len() != 3 {
            return Err(bad("logspace takes (start, stop, count)"));
        }
        let (lo, hi) = (number(line, "values", a[0])?, number(line, "values", a[1])?);
        let n = integer(line, "values", a[2])? as usize;
        if !(lo > 0.0 && hi > 0.0) || n == 0 {
            return Err(bad("logspace needs positive bounds and count"));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        let step = (hi / lo).ln() / (n - 1) as f64;
        return Ok((0..n).map(|i| if i + 1 == n { hi } else { lo * (step * i as f64).exp() }).collect());
    }
    v.split(',').map(|x| number(line, "values", x.trim())).collect()
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = None;
        let mut param = None;
        let mut values = None;
        let mut trials = 1;
        let mut seed = 0;
        let mut estimator = SweepEstimator::Alice;
        let mut last = 0;
        for (line, k, v) in parse_pairs(text)? {
            last = line;
            match k.as_str() {
                "config" => config = Some(v),
                "param" => {
                    param = Some(match v.as_str() {
                        "f_d" => SweepParam::FD,
                        "dither" => SweepParam::Dither,
                        "n" => SweepParam::N,
                        _ => return Err(Error::Config { line, message: format!("param is f_d, dither or n, got `{v}`") }),
                    })
                }
                "values" => values = Some(parse_values(line, &v)?),
                "trials" => trials = integer(line, &k, &v)? as usize,
                "seed" => seed = integer(line, &k, &v)?,
                "estimator" => {
                    estimator = match v.as_str() {
                        "alice" => SweepEstimator::Alice,
                        "eve" => SweepEstimator::Eve,
                        _ => return Err(Error::Config { line, message: format!("estimator is alice or eve, got `{v}`") }),
                    }
                }
                _ => return Err(Error::Config { line, message: format!("unknown key `{k}`") }),
            }
        }
        let missing = |what: &str| Error::Config { line: last, message: format!("sweep file has no `{what}`") };
        let values = values.ok_or_else(|| missing("values"))?;
        if values.is_empty() {
            return Err(missing("values"));
        }
        if trials == 0 {
            return Err(Error::Config { line: last, message: "trials must be at least 1".into() });
        }
        Ok(SweepSpec { config: config.ok_or_else(|| missing("config"))?, param: param.ok_or_else(|| missing("param"))?, values, trials, seed, estimator })
    }

    /// Scenario for one row: the value applied and the seed `base + trial`.
    pub fn apply(&self, base: &RunConfig, value: f64, trial: usize) -> Result<RunConfig> {
        let mut c = base.clone();
        c.seed = self.seed + trial as u64;
        match self.param {
            SweepParam::FD => c.alice_df_hz = c.bob_df_hz + value,
            SweepParam::Dither => {
                c.dither = value > 0.0;
                c.dither_upper = DitherUpper::Periods(value);
            }
            SweepParam::N => {
                if value < 2.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidArgument(format!("n_pings value {value} is not an integer >= 2")));
                }
                c.n_pings = value as usize;
            }
        }
        Ok(c)
    }
}
