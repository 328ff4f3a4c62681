//! Clock-tick simulation of the ping/respond exchange.
//!
//! Pings leave on initiator clock edges (delayed by the private dither under
//! CLIMEX), the responder waits for its own next edge plus `delta_0` and
//! answers. Every emitted signal is written to an [`ArrivalLog`].

use std::f64::consts::TAU;

use rand::Rng;

use crate::epoch::{stream_rng, MeasurementEpoch, NodeId, Protocol, Stream};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::signal::{modulo, ping_interval, scale_delay, ClockParams, NoiseParams, ProtocolConstants};

/// A participant: its oscillator and where its clock edges sit.
///
/// `clock_phase` places the edges at `(k + clock_phase/2pi) / f` for integer k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub clock: ClockParams,
    pub position: Option<[f64; 2]>,
    pub clock_phase: f64,
}

impl NodeState {
    pub fn new(id: NodeId, clock: ClockParams, clock_phase: f64) -> Self {
        NodeState { id, clock, position: None, clock_phase }
    }

    pub fn frequency(&self) -> f64 {
        self.clock.frequency()
    }

    pub fn period(&self) -> f64 {
        self.clock.period()
    }

    /// Time of the clock edge closest to zero from above.
    pub fn edge_offset(&self) -> f64 {
        modulo(self.clock_phase, TAU) / TAU * self.period()
    }

    /// Time from `t` until the next clock edge, in `[0, T)`.
    pub fn time_to_next_edge(&self, t: f64) -> f64 {
        modulo(self.edge_offset() - t, self.period())
    }

    pub fn next_edge_at_or_after(&self, t: f64) -> f64 {
        t + self.time_to_next_edge(t)
    }

    fn validate(&self) -> Result<()> {
        self.clock.validate()?;
        ensure_finite("clock_phase", self.clock_phase)?;
        if let Some([x, y]) = self.position {
            ensure_finite("position", x)?;
            ensure_finite("position", y)?;
        }
        Ok(())
    }
}

/// Pairwise distances in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Geometry {
    pub rho_ab: f64,
    pub rho_ae: f64,
    pub rho_be: f64,
}

impl Geometry {
    pub fn new(rho_ab: f64, rho_ae: f64, rho_be: f64) -> Self {
        Geometry { rho_ab, rho_ae, rho_be }
    }

    pub fn from_points(a: [f64; 2], b: [f64; 2], e: [f64; 2]) -> Self {
        let d = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
        Geometry { rho_ab: d(a, b), rho_ae: d(a, e), rho_be: d(b, e) }
    }

    pub fn distance(&self, x: NodeId, y: NodeId) -> f64 {
        use NodeId::*;
        match (x, y) {
            (Alice, Bob) | (Bob, Alice) => self.rho_ab,
            (Alice, Eve) | (Eve, Alice) => self.rho_ae,
            (Bob, Eve) | (Eve, Bob) => self.rho_be,
            _ => 0.0,
        }
    }

    /// The only distance combination visible in Eve's time differences.
    pub fn eve_excess(&self) -> f64 {
        self.rho_ab + self.rho_be - self.rho_ae
    }

    fn validate(&self) -> Result<()> {
        for (k, v) in [("rho_ab", self.rho_ab), ("rho_ae", self.rho_ae), ("rho_be", self.rho_be)] {
            ensure_finite(k, v)?;
            if v < 0.0 {
                return Err(invalid(format!("{k} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DitherKind {
    None,
    Uniform,
}

/// Distribution of the private transmit delay: none, or `U(0, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherSpec {
    pub kind: DitherKind,
    pub upper: f64,
}

impl DitherSpec {
    pub const NONE: DitherSpec = DitherSpec { kind: DitherKind::None, upper: 0.0 };

    pub fn uniform(upper: f64) -> Self {
        DitherSpec { kind: DitherKind::Uniform, upper }
    }

    /// Largest delay the distribution can produce.
    pub fn bound(&self) -> f64 {
        match self.kind {
            DitherKind::None => 0.0,
            DitherKind::Uniform => self.upper,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match self.kind {
            DitherKind::None => vec![0.0; n],
            DitherKind::Uniform => (0..n).map(|_| rng.random::<f64>() * self.upper).collect(),
        }
    }
}

/// Everything needed to run an exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub alice: NodeState,
    pub bob: NodeState,
    pub eve: Option<NodeState>,
    pub geometry: Geometry,
    pub consts: ProtocolConstants,
    pub noise: NoiseParams,
    pub dither: DitherSpec,
    pub protocol: Protocol,
    /// Earliest time the first epoch may start.
    pub start_time: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn node(&self, id: NodeId) -> Result<&NodeState> {
        match id {
            NodeId::Alice => Ok(&self.alice),
            NodeId::Bob => Ok(&self.bob),
            NodeId::Eve => self.eve.as_ref().ok_or_else(|| invalid("scenario has no Eve")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.alice.validate()?;
        self.bob.validate()?;
        if self.alice.id != NodeId::Alice || self.bob.id != NodeId::Bob {
            return Err(invalid("node ids must be Alice and Bob"));
        }
        if let Some(e) = &self.eve {
            e.validate()?;
            if e.id != NodeId::Eve {
                return Err(invalid("third node must be Eve"));
            }
        }
        self.geometry.validate()?;
        self.noise.validate()?;
        self.consts.validate_against(self.alice.period().max(self.bob.period()))?;
        ensure_finite("dither upper", self.dither.upper)?;
        if self.dither.upper < 0.0 {
            return Err(invalid("dither upper bound must be non-negative"));
        }
        ensure_finite("start_time", self.start_time)?;
        Ok(())
    }

    /// Difference frequency of the epoch initiated by `initiator`.
    pub fn beat_frequency(&self, initiator: NodeId) -> Result<f64> {
        let (i, r) = self.pair(initiator)?;
        Ok(i.frequency() - r.frequency())
    }

    /// Sawtooth phase at `t_prime` for the epoch initiated by `initiator`.
    pub fn sawtooth_phase(&self, initiator: NodeId, t_prime: f64) -> Result<f64> {
        let (i, r) = self.pair(initiator)?;
        let rho = self.geometry.distance(i.id, r.id);
        let wait = r.time_to_next_edge(t_prime + rho / self.consts.c);
        Ok((TAU * wait / r.period()).min(TAU.next_down()))
    }

    fn pair(&self, initiator: NodeId) -> Result<(&NodeState, &NodeState)> {
        match initiator {
            NodeId::Alice => Ok((&self.alice, &self.bob)),
            NodeId::Bob => Ok((&self.bob, &self.alice)),
            NodeId::Eve => Err(invalid("Eve never initiates an epoch")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Ping,
    Respond,
}

/// One emitted signal and when each node received it.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Ping index within the epoch.
    pub slot: usize,
    /// Node that started the epoch.
    pub initiator: NodeId,
    pub kind: SignalKind,
    pub emitter: NodeId,
    pub emit: f64,
    /// Arrival time per node, indexed by [`NodeId::index`].
    pub arrivals: [Option<f64>; 3],
    /// For responds: time from ping arrival at the emitter to emission.
    pub responder_delay: Option<f64>,
}

impl LogEntry {
    pub fn arrival_at(&self, node: NodeId) -> Option<f64> {
        self.arrivals[node.index()]
    }
}

/// World truth of one or more epochs. Only the adversary and oracle layers read it.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalLog {
    pub entries: Vec<LogEntry>,
    pub geometry: Geometry,
    pub c: f64,
    pub eve_present: bool,
}

impl ArrivalLog {
    pub(crate) fn arrivals(&self, emitter: NodeId, emit: f64) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for node in [NodeId::Alice, NodeId::Bob, NodeId::Eve] {
            if node == emitter || (node == NodeId::Eve && !self.eve_present) {
                continue;
            }
            out[node.index()] = Some(emit + self.geometry.distance(emitter, node) / self.c);
        }
        out
    }

    /// Entries of the epoch started by `initiator`.
    pub fn epoch_entries(&self, initiator: NodeId) -> impl Iterator<Item = &LogEntry> {
        self.entries.iter().filter(move |e| e.initiator == initiator)
    }

    /// Replays the same node behaviour (ping emissions and responder delays)
    /// in another geometry.
    pub fn replay_in(&self, geometry: Geometry) -> ArrivalLog {
        let mut out = ArrivalLog { entries: Vec::with_capacity(self.entries.len()), geometry, ..self.clone() };
        let mut ping_arrival = std::collections::HashMap::new();
        for e in &self.entries {
            let mut e = e.clone();
            match e.kind {
                SignalKind::Ping => {
                    e.arrivals = out.arrivals(e.emitter, e.emit);
                    ping_arrival.insert((e.initiator, e.slot), e.arrivals);
                }
                SignalKind::Respond => {
                    if let (Some(arr), Some(d)) = (ping_arrival.get(&(e.initiator, e.slot)), e.responder_delay) {
                        if let Some(t) = arr[e.emitter.index()] {
                            e.emit = t + d;
                        }
                    }
                    e.arrivals = out.arrivals(e.emitter, e.emit);
                }
            }
            out.entries.push(e);
        }
        out
    }
}

/// Runs one plain RTT epoch started by `initiator`.
pub fn run_rtt_epoch(cfg: &ScenarioConfig, initiator: NodeId) -> Result<(MeasurementEpoch, ArrivalLog)> {
    cfg.validate()?;
    run_epoch(cfg, initiator, Protocol::Rtt, cfg.start_time)
}

/// Runs one CLIMEX epoch started by `initiator`, dithered per `cfg.dither`.
pub fn run_climex_epoch(cfg: &ScenarioConfig, initiator: NodeId) -> Result<(MeasurementEpoch, ArrivalLog)> {
    cfg.validate()?;
    run_epoch(cfg, initiator, Protocol::Climex, cfg.start_time)
}

/// Alice's epoch followed by Bob's, using `cfg.protocol`.
pub fn run_exchange(cfg: &ScenarioConfig) -> Result<(MeasurementEpoch, MeasurementEpoch, ArrivalLog)> {
    cfg.validate()?;
    let (ea, mut log) = run_epoch(cfg, NodeId::Alice, cfg.protocol, cfg.start_time)?;
    // one spare interval keeps the last respond clear of Bob's first ping
    let end = ea.timestamp + (ea.len() + 1) as f64 * ea.interval_s;
    let (eb, log_b) = run_epoch(cfg, NodeId::Bob, cfg.protocol, end)?;
    log.entries.extend(log_b.entries);
    Ok((ea, eb, log))
}

fn run_epoch(
    cfg: &ScenarioConfig,
    initiator: NodeId,
    protocol: Protocol,
    not_before: f64,
) -> Result<(MeasurementEpoch, ArrivalLog)> {
    let (init, resp) = cfg.pair(initiator)?;
    let consts = &cfg.consts;
    let n = consts.n;
    let c = consts.c;
    let rho = cfg.geometry.distance(init.id, resp.id);
    let t_r = resp.period();
    let interval = ping_interval(consts.t_m, init.frequency());

    let dither = match protocol {
        Protocol::Rtt => DitherSpec::NONE,
        Protocol::Climex => cfg.dither,
    };
    let upper = dither.bound();
    let delta = dither.draw(&mut stream_rng(cfg.seed, Stream::Dither(initiator)), n);
    let noise = cfg.noise.draw(&mut stream_rng(cfg.seed, Stream::Noise(initiator)), n);

    // pings leave `upper - delta_i` after the edge, so the responder sees +delta_i
    let e0 = init.next_edge_at_or_after(not_before);
    let t_prime = e0 + upper;
    let emit_at = |i: usize, d: f64| e0 + i as f64 * interval + (upper - d);

    let mut log = ArrivalLog {
        entries: Vec::with_capacity(2 * n),
        geometry: cfg.geometry,
        c,
        eve_present: cfg.eve.is_some(),
    };
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let ping_emit = emit_at(i, delta[i]);
        let ping_arrivals = log.arrivals(init.id, ping_emit);
        let arrival = ping_arrivals[resp.id.index()].expect("responder hears every ping");

        let wait = modulo(resp.edge_offset() - arrival + noise.inner[i], t_r);
        let delay = match protocol {
            Protocol::Rtt => wait + consts.delta_0,
            // the edge wait is scaled onto [0, A) and the nominal wait added unscaled
            Protocol::Climex => scale_delay(wait, t_r, consts.a_scale, 0.0)? + consts.delta_0,
        };
        if delay <= 0.0 {
            return Err(Error::Causality { index: i });
        }
        let respond_emit = arrival + delay;

        // per-hop sum rather than a difference of absolute times
        let rtt = delay + 2.0 * rho / c;
        let next_emit = emit_at(i + 1, if i + 1 < n { delta[i + 1] } else { 0.0 });
        if ping_emit + rtt >= next_emit {
            return Err(Error::ProtocolOverrun { index: i, rtt, interval });
        }
        values.push(rtt + noise.outer[i]);

        log.entries.push(LogEntry {
            slot: i,
            initiator,
            kind: SignalKind::Ping,
            emitter: init.id,
            emit: ping_emit,
            arrivals: ping_arrivals,
            responder_delay: None,
        });
        log.entries.push(LogEntry {
            slot: i,
            initiator,
            kind: SignalKind::Respond,
            emitter: resp.id,
            emit: respond_emit,
            arrivals: log.arrivals(resp.id, respond_emit),
            responder_delay: Some(delay),
        });
    }

    let epoch = MeasurementEpoch {
        timestamp: t_prime,
        interval_s: interval,
        values,
        collector: initiator,
        protocol,
        delta: (protocol == Protocol::Climex).then_some(delta),
    };
    Ok((epoch, log))
}
