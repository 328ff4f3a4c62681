mod common;

use climex::adversary::{
    apply_injections, detect_outliers, eve_estimate_rtt, eve_interarrival_epoch, eve_interarrival_estimate, eve_tdoa_epoch,
    inject_responses, robust_fit, EveGrid, InjectionPlan,
};
use climex::epoch::NodeId;
use climex::error::Error;
use climex::sim::run_exchange;

#[test]
fn colocated_eve_hears_twice_the_path() {
    let mut c = common::quiet(common::desk(1, 80.0));
    c.rho_ae_m = 0.0;
    c.rho_be_m = c.rho_ab_m;
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let eve = eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap();
    let delays: Vec<f64> = {
        let mut r: Vec<_> = log
            .epoch_entries(NodeId::Alice)
            .filter_map(|e| e.responder_delay.map(|d| (e.slot, d)))
            .collect();
        r.sort_by_key(|x| x.0);
        r.into_iter().map(|x| x.1).collect()
    };
    for (t, d) in eve.tdoa.iter().zip(&delays) {
        assert!((t - d - 2.0 * c.rho_ab_m / c.c_mps).abs() < 1e-18);
    }
    assert_eq!(eve.timestamp, log.epoch_entries(NodeId::Alice).next().unwrap().emit);
}

#[test]
fn eve_on_alices_clock_waits_a_constant_time() {
    let mut c = common::quiet(common::rtt(common::desk(2, 80.0)));
    c.eve_df_hz = c.alice_df_hz;
    let sc = c.scenario().unwrap();
    let eve = sc.eve.unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let e = eve_interarrival_epoch(&log, NodeId::Alice, &eve, &sc.noise, sc.seed).unwrap();
    // the constant may sit on the wrap, so compare on the circle
    let t_e = eve.period();
    let spread = e.values.iter().map(|&v| climex::signal::modulo(v - e.values[0] + t_e / 2.0, t_e) - t_e / 2.0).fold(0.0, |m: f64, d| m.max(d.abs()));
    assert!(spread < 1e-15, "spread {spread:e}");
}

#[test]
fn eve_recovers_rtt_clocks_but_not_climex() {
    let c = common::rtt(common::desk(3, 200.0));
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let g = EveGrid::for_clocks(c.eve_grid().unwrap(), c.f0_hz, c.budget.ppm, c.budget.df_bin).unwrap();
    let est = eve_estimate_rtt(&eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap(), &g).unwrap();
    assert!((est.f_d_hat - 200.0).abs() < 0.5, "{}", est.f_d_hat);
    let eve = sc.eve.unwrap();
    let ia = eve_interarrival_estimate(
        &eve_interarrival_epoch(&log, NodeId::Alice, &eve, &sc.noise, sc.seed).unwrap(),
        &eve,
        &c.interarrival_grid().unwrap(),
    )
    .unwrap();
    assert!((ia.f_initiator_hat - sc.alice.frequency()).abs() < 0.5);
    assert!((ia.f_initiator_hat - est.f_d_hat - sc.bob.frequency()).abs() < 1.0);

    let c = common::desk(3, 200.0);
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let est = eve_estimate_rtt(&eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap(), &g).unwrap();
    assert!((est.f_d_hat - 200.0).abs() > 5.0, "{}", est.f_d_hat);
}

#[test]
fn deaf_eve_has_a_short_epoch() {
    let mut c = common::desk(4, 100.0);
    c.eve = false;
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    assert!(matches!(
        eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, 4),
        Err(Error::ShortEpoch { heard: 0, .. })
    ));
    assert!(inject_responses(&log, &InjectionPlan::oracle_perfect(NodeId::Alice, &[3])).is_err());
}

#[test]
fn empty_plan_changes_nothing() {
    let sc = common::desk(5, 100.0).scenario().unwrap();
    let (ea, eb, log) = run_exchange(&sc).unwrap();
    let injected = inject_responses(&log, &InjectionPlan::empty(NodeId::Alice)).unwrap();
    assert_eq!(injected, log);
    assert_eq!(apply_injections(&ea, &injected).unwrap(), ea);
    assert_eq!(apply_injections(&eb, &injected).unwrap(), eb);
}

#[test]
fn injections_move_only_their_slots() {
    let c = common::desk(6, 100.0);
    let sc = c.scenario().unwrap();
    let (ea, _, log) = run_exchange(&sc).unwrap();
    let slots = [7, 100, 4000];
    let max = sc.consts.t_m / 2.0;
    let plan = InjectionPlan::random_timing(NodeId::Alice, &slots, max, 6);
    let hit = apply_injections(&ea, &inject_responses(&log, &plan).unwrap()).unwrap();
    for (i, (a, b)) in ea.values.iter().zip(&hit.values).enumerate() {
        if slots.contains(&i) {
            // Eve answers up to T_m/2 after the ping reaches her; Bob within
            // about delta_0 + A of it
            let shift = b - a;
            assert!(shift.abs() <= max + 1e-6, "slot {i}: {shift:e}");
            assert!(shift.abs() > 1e-9, "slot {i}: {shift:e}");
        } else {
            assert_eq!(a, b);
        }
    }

    let oracle = InjectionPlan::oracle_perfect(NodeId::Alice, &slots);
    let same = apply_injections(&ea, &inject_responses(&log, &oracle).unwrap()).unwrap();
    for (a, b) in ea.values.iter().zip(&same.values) {
        assert!((a - b).abs() < 1e-15);
    }

    let g = c.grid().unwrap();
    let own = sc.alice.frequency();
    let d = ea.delta.as_deref();
    let est = robust_fit(&hit, &g, &sc.consts, own, d).unwrap();
    let mut flagged = detect_outliers(&hit, &est, &sc.consts, own, d, 4.0).unwrap();
    flagged.sort();
    assert_eq!(flagged, slots);
}

#[test]
fn injection_needs_a_ping_in_the_slot() {
    let sc = common::desk(7, 100.0).scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    assert!(inject_responses(&log, &InjectionPlan::oracle_perfect(NodeId::Alice, &[sc.consts.n])).is_err());
    assert!(inject_responses(&log, &InjectionPlan::oracle_perfect(NodeId::Eve, &[0])).is_err());
}

fn quiet_tdoa(c: climex::config::RunConfig) -> (Vec<f64>, climex::sim::ScenarioConfig) {
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let e = eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap();
    let g = sc.geometry;
    let r = (g.rho_ab + g.rho_be - g.rho_ae) / sc.consts.c;
    (e.tdoa.iter().map(|t| t - r - sc.consts.delta_0).collect(), sc)
}

#[test]
fn eve_beside_bob_sees_only_his_delays() {
    let mut c = common::quiet(common::desk(8, 80.0));
    c.rho_be_m = 0.0;
    c.rho_ae_m = c.rho_ab_m;
    let sc = c.scenario().unwrap();
    let (_, _, log) = run_exchange(&sc).unwrap();
    let e = eve_tdoa_epoch(&log, NodeId::Alice, &sc.noise, sc.seed).unwrap();
    let mut bob: Vec<(usize, f64)> = log.epoch_entries(NodeId::Alice).filter_map(|x| x.responder_delay.map(|d| (x.slot, d))).collect();
    bob.sort_by_key(|x| x.0);
    for (t, d) in e.tdoa.iter().zip(&bob) {
        assert!((t - d.1).abs() < 1e-20);
    }
}

#[test]
fn rtt_tdoa_spans_one_responder_period() {
    let (w, sc) = quiet_tdoa(common::quiet(common::rtt(common::desk(9, 133.7))));
    let (lo, hi) = w.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(lo >= -1e-18 && hi < sc.bob.period());
    assert!((hi - lo) / sc.bob.period() > 0.99);
}

#[test]
fn climex_tdoa_is_uniform_over_a() {
    let (w, sc) = quiet_tdoa(common::quiet(common::desk(10, 133.7)));
    let a = sc.consts.a_scale;
    assert!(common::ks(&w, |x| (x / a).clamp(0.0, 1.0)) < common::ks_critical(w.len()));
}

#[test]
fn truth_on_the_grid_costs_nothing() {
    let mut search = climex::estimate::SearchGrid::default();
    search.refine = 1;
    let g = EveGrid::for_clocks(search, 1e8, 10.0, 1.0).unwrap();
    let t_b = g.t_b_lo + 300.0 * g.t_b_step;
    let phi = 17.0 * search.dphi();
    let t: Vec<f64> = (0..4000).map(|i| i as f64 * 1e-4).collect();
    let h = climex::signal::sawtooth_h(&climex::signal::SawtoothArgs::new(200.0, t_b, phi, &t)).unwrap();
    let epoch = climex::adversary::EveEpoch {
        timestamp: 0.0,
        interval_s: 1e-4,
        tdoa: h.iter().map(|v| v + 3e-8).collect(),
        initiator: NodeId::Alice,
        truth: climex::sim::Geometry::new(3.0, 4.0, 5.0),
    };
    let est = eve_estimate_rtt(&epoch, &g).unwrap();
    assert_eq!(est.f_d_hat, 200.0);
    assert!((est.t_b_hat - t_b).abs() < g.t_b_step / 2.0);
    // rounding only: the de-meaned epoch carries about 3e-14 s^2
    assert!(est.cost < 1e-24, "{:e}", est.cost);
}

#[test]
fn dither_spoils_the_interarrival_clock() {
    let run = |c: climex::config::RunConfig| {
        let sc = c.scenario().unwrap();
        let eve = sc.eve.unwrap();
        let (_, _, log) = run_exchange(&sc).unwrap();
        let e = eve_interarrival_epoch(&log, NodeId::Alice, &eve, &sc.noise, sc.seed).unwrap();
        let est = eve_interarrival_estimate(&e, &eve, &c.interarrival_grid().unwrap()).unwrap();
        (est.f_initiator_hat - sc.alice.frequency()).abs()
    };
    let errs: Vec<(f64, f64)> = (20..26).map(|s| (run(common::rtt(common::desk(s, 200.0))), run(common::desk(s, 200.0)))).collect();
    let rtt = common::median(&errs.iter().map(|e| e.0).collect::<Vec<_>>());
    let climex = common::median(&errs.iter().map(|e| e.1).collect::<Vec<_>>());
    assert!(rtt < 0.5, "{rtt}");
    assert!(climex > 10.0 * rtt.max(0.01), "{climex} vs {rtt}");
}
