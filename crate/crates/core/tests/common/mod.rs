#![allow(dead_code)]

use climex::config::RunConfig;
use climex::epoch::Protocol;

/// Desk scenario with the given seed and beat frequency `f_A - f_B`.
pub fn desk(seed: u64, f_d: f64) -> RunConfig {
    let mut c = RunConfig { seed, ..RunConfig::default() };
    c.alice_df_hz = c.bob_df_hz + f_d;
    c
}

pub fn quiet(mut c: RunConfig) -> RunConfig {
    c.sigma_j_s = 0.0;
    c.sigma_c_s = 0.0;
    c
}

pub fn rtt(mut c: RunConfig) -> RunConfig {
    c.protocol = Protocol::Rtt;
    c.dither = false;
    c
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical KS distance at the 0.1% level.
pub fn ks_critical(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}
