//! Distributional oracles checked with a Kolmogorov-Smirnov distance.

mod common;

use climex::adversary::{eve_tdoa_epoch, InjectionPlan};
use climex::epoch::{stream_rng, NodeId, Stream};
use climex::signal::NoiseParams;
use climex::sim::{run_exchange, run_rtt_epoch, SignalKind};
use common::{ks, ks_critical};
use statrs::distribution::{ContinuousCDF, Normal};

fn normal(sd: f64) -> impl Fn(f64) -> f64 {
    let d = Normal::new(0.0, sd).unwrap();
    move |x| d.cdf(x)
}

fn uniform(hi: f64) -> impl Fn(f64) -> f64 {
    move |x| (x / hi).clamp(0.0, 1.0)
}

#[test]
fn noise_components_have_the_stated_variances() {
    let (sj, sc) = (1e-9, 2e-9);
    let d = NoiseParams::new(sj, sc).unwrap().draw(&mut stream_rng(9, Stream::Noise(NodeId::Alice)), 20_000);
    let inner = (sc * sc + 2.0 * sj * sj).sqrt();
    let outer = (sc * sc + sj * sj).sqrt();
    assert!(ks(&d.inner, normal(inner)) < ks_critical(d.len()));
    assert!(ks(&d.outer, normal(outer)) < ks_critical(d.len()));
    // the wrong variance is rejected
    assert!(ks(&d.inner, normal(outer)) > ks_critical(d.len()));
}

#[test]
fn quiet_rtt_epoch_is_uniform_over_one_period() {
    let c = common::quiet(common::rtt(common::desk(2, 37.3)));
    let sc = c.scenario().unwrap();
    let (e, _) = run_rtt_epoch(&sc, NodeId::Alice).unwrap();
    let off = c.delta0_s + 2.0 * c.rho_ab_m / c.c_mps;
    let h: Vec<f64> = e.values.iter().map(|y| y - off).collect();
    assert!(ks(&h, uniform(sc.bob.period())) < ks_critical(h.len()));
}

#[test]
fn dither_is_uniform_up_to_its_bound() {
    let sc = common::desk(3, 200.0).scenario().unwrap();
    let (e, _, _) = run_exchange(&sc).unwrap();
    let d = e.delta.unwrap();
    assert!(ks(&d, uniform(sc.dither.bound())) < ks_critical(d.len()));
}

#[test]
fn quiet_climex_epoch_is_uniform_over_a() {
    let c = common::quiet(common::desk(5, 211.7));
    let sc = c.scenario().unwrap();
    let (e, _, _) = run_exchange(&sc).unwrap();
    let off = c.delta0_s + 2.0 * c.rho_ab_m / c.c_mps;
    let g: Vec<f64> = e.values.iter().map(|y| y - off).collect();
    assert!(ks(&g, uniform(c.a_scale_s)) < ks_critical(g.len()));
}

#[test]
fn eve_tdoa_noise_is_one_hop_plus_her_jitter() {
    let sc = common::desk(6, 90.0).scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let eve = eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap();
    let g = sc.geometry;
    let r = (g.rho_ab + g.rho_be - g.rho_ae) / sc.consts.c;
    let mut delays: Vec<(usize, f64)> = log
        .epoch_entries(NodeId::Alice)
        .filter(|e| e.kind == SignalKind::Respond)
        .map(|e| (e.slot, e.responder_delay.unwrap()))
        .collect();
    delays.sort_by_key(|d| d.0);
    let n: Vec<f64> = eve.tdoa.iter().zip(&delays).map(|(t, d)| t - d.1 - r).collect();
    assert!(ks(&n, normal(sc.noise.outer_variance().sqrt())) < ks_critical(n.len()));
}

#[test]
fn random_timing_offsets_are_uniform() {
    let slots: Vec<usize> = (0..5000).collect();
    let plan = InjectionPlan::random_timing(NodeId::Alice, &slots, 5e-5, 11);
    let o: Vec<f64> = plan.offsets.iter().map(|x| x.1).collect();
    assert!(ks(&o, uniform(5e-5)) < ks_critical(o.len()));
}

#[test]
fn interarrival_wait_is_uniform_over_eves_period() {
    let c = common::quiet(common::rtt(common::desk(8, 60.0)));
    let sc = c.scenario().unwrap();
    let eve = sc.eve.unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let e = climex::adversary::eve_interarrival_epoch(&log, NodeId::Alice, &eve, &sc.noise, sc.seed).unwrap();
    assert!(e.values.iter().all(|&v| (0.0..eve.period()).contains(&v)));
    // f_A - f_E = -80 Hz, so the wait sweeps Eve's period evenly
    assert!(ks(&e.values, uniform(eve.period())) < ks_critical(e.len()));
}
