//! The tick simulator against the closed-form model.

mod common;

use climex::config::Phase;
use climex::epoch::{NodeId, Protocol};
use climex::signal::{climex_epoch_model, rtt_epoch_model};
use climex::sim::{run_climex_epoch, run_exchange, run_rtt_epoch};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ticks_match_closed_form(
        seed in 0u64..1_000_000,
        fa in -500.0..500.0f64,
        fb in -500.0..500.0f64,
        pa in 0.0..std::f64::consts::TAU,
        pb in 0.0..std::f64::consts::TAU,
        rho in 0.0..150.0f64,
        start in 0.0..1e-2f64,
        climex in any::<bool>(),
    ) {
        let mut c = common::desk(seed, 0.0);
        c.alice_df_hz = fa;
        c.bob_df_hz = fb;
        c.alice_phase = Phase::Fixed(pa);
        c.bob_phase = Phase::Fixed(pb);
        c.rho_ab_m = rho;
        c.start_s = start;
        c.n_pings = 500;
        c.protocol = if climex { Protocol::Climex } else { Protocol::Rtt };
        let sc = c.scenario().unwrap();
        let (a, b) = (&sc.alice.clock, &sc.bob.clock);
        let (ticks, model) = if climex {
            let (e, _) = run_climex_epoch(&sc, NodeId::Alice).unwrap();
            let phi = sc.sawtooth_phase(NodeId::Alice, e.timestamp).unwrap();
            let d = e.delta.clone().unwrap();
            let m = climex_epoch_model(a, b, &sc.consts, rho, phi, e.timestamp, &sc.noise, sc.seed, &d).unwrap();
            (e, m)
        } else {
            let (e, _) = run_rtt_epoch(&sc, NodeId::Alice).unwrap();
            let phi = sc.sawtooth_phase(NodeId::Alice, e.timestamp).unwrap();
            (e.clone(), rtt_epoch_model(a, b, &sc.consts, rho, phi, e.timestamp, &sc.noise, sc.seed).unwrap())
        };
        prop_assert_eq!(ticks.len(), model.len());
        prop_assert_eq!(ticks.interval_s, model.interval_s);
        for (x, y) in ticks.values.iter().zip(&model.values) {
            prop_assert!((x - y).abs() <= 1e-12, "{x:e} vs {y:e}");
        }
    }

    /// The first M pings of a longer epoch are the M-ping epoch.
    #[test]
    fn shorter_epoch_is_a_prefix(seed in 0u64..1_000_000, m in 2usize..300, extra in 1usize..300, climex in any::<bool>()) {
        let mut c = common::desk(seed, 77.0);
        c.protocol = if climex { Protocol::Climex } else { Protocol::Rtt };
        c.dither = climex;
        c.n_pings = m;
        let (short, _, _) = run_exchange(&c.scenario().unwrap()).unwrap();
        c.n_pings = m + extra;
        let (long, _, _) = run_exchange(&c.scenario().unwrap()).unwrap();
        prop_assert_eq!(&long.values[..m], &short.values[..]);
        prop_assert_eq!(long.timestamp, short.timestamp);
        if climex {
            prop_assert_eq!(&long.delta.unwrap()[..m], &short.delta.unwrap()[..]);
        }
    }
}

#[test]
fn bob_sees_the_negated_beat() {
    let sc = common::desk(4, 123.0).scenario().unwrap();
    assert_eq!(sc.beat_frequency(NodeId::Bob).unwrap(), -sc.beat_frequency(NodeId::Alice).unwrap());
    let (ea, eb, _) = run_exchange(&sc).unwrap();
    assert_eq!(ea.collector, NodeId::Alice);
    assert_eq!(eb.collector, NodeId::Bob);
    assert!(eb.timestamp > ea.timestamp);
}
